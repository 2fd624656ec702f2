"""CLI commands for coworld operations."""

import json
import logging
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence

from rich.console import Console
from rich.progress import BarColumn, MofNCompleteColumn, Progress, TextColumn, TimeElapsedColumn
from rich.table import Table

from .config.settings import Config, CoWorldConfig, apply_ablation
from .data.episode import Episode
from .data.medium_replay import generate_medium_replay, manifest_hash
from .data.replay import ReplayBuffer
from .envs.runner import ENV_PRESETS, EnvSpec, make_env
from .evaluation.evalkit import (
    evaluate_policy,
    open_loop_prediction,
    rescale_diagnostics,
    value_diagnostic,
)
from .evaluation.plotting import plot_frame_strip, plot_run
from .models.behavior import EVAL
from .training.agent import collect_episode, load_checkpoint
from .training.coworld import CHECKPOINT_SUFFIX, coworld_train
from .utils.errors import ConfigError, CoWorldError, FormatError
from .utils.fs import read_json, write_json
from .utils.seeding import make_generator

logger = logging.getLogger(__name__)


def resolve_env(value: str, seed: int = 0) -> EnvSpec:
    """Env preset name or path to a JSON EnvSpec."""
    if value in ENV_PRESETS:
        return EnvSpec.preset(value, seed=seed)
    path = Path(value).expanduser()
    if not path.exists():
        raise FormatError(f"'{value}' is neither an env preset ({', '.join(sorted(ENV_PRESETS))}) "
                          f"nor an EnvSpec file", field="env")
    return EnvSpec.from_dict(read_json(path, field="env"))


class CLI:
    """Command-line interface for coworld operations."""

    def __init__(self, console: Optional[Console] = None, err_console: Optional[Console] = None):
        """Initialize CLI output consoles.

        Args:
            console: Console for results (stdout by default)
            err_console: Console for errors (stderr by default)
        """
        self.console = console or Console()
        self.err_console = err_console or Console(stderr=True)

    def _fail(self, error: Exception) -> int:
        if isinstance(error, CoWorldError):
            self.err_console.print(f"✗ Error: {error}", markup=False)
            return error.exit_code
        logger.debug("Unexpected failure", exc_info=error)
        self.err_console.print(f"✗ Error: {type(error).__name__}: {error}", markup=False)
        return 1

    @contextmanager
    def _progress(self) -> Iterator:
        """Yield a ``progress_callback(stage, done, total)`` drawing rich bars."""
        with Progress(
            TextColumn("{task.description}"),
            BarColumn(),
            MofNCompleteColumn(),
            TimeElapsedColumn(),
            console=self.err_console,
            transient=True,
        ) as progress:
            tasks: Dict[str, int] = {}

            def callback(stage: str, done: int, total: int) -> None:
                if stage not in tasks or progress.tasks[tasks[stage]].finished:
                    tasks[stage] = progress.add_task(stage, total=total)
                progress.update(tasks[stage], completed=done, total=total)

            yield callback

    def _config(self, config_file: Optional[str], overrides: Sequence[str] = ()) -> Config:
        """Config file (or defaults) with ``KEY=VALUE`` overrides applied in order."""
        config = Config(Path(config_file) if config_file else None)
        for item in overrides:
            key, sep, text = item.partition("=")
            if not sep or not key.strip():
                raise ConfigError(f"override must look like KEY=VALUE, got '{item}'", fields=["set"])
            try:
                value = json.loads(text)
            except json.JSONDecodeError:
                value = text
            config.set(key.strip(), value)
        return config

    def _load_config(self, config_file: Optional[str], overrides: Sequence[str] = ()) -> CoWorldConfig:
        return self._config(config_file, overrides).build()

    def gen_dataset(self, env: str, out: str, budget: Optional[int] = None, seed: int = 0,
                    config_file: Optional[str] = None, force: bool = False,
                    overrides: Sequence[str] = ()) -> int:
        """Record a medium-replay offline dataset.

        Args:
            env: Env preset name or EnvSpec JSON file
            out: Output dataset directory
            budget: Step budget (default: dataset.budget_steps)
            seed: Seed for training, sampling and resets
            config_file: Optional config for agent sizes and schedule
            force: Overwrite a non-empty output directory
            overrides: ``KEY=VALUE`` config overrides

        Returns:
            Exit code (0 for success)
        """
        try:
            config = self._load_config(config_file, overrides)
            env_spec = resolve_env(env, seed)
            budget = config.dataset.budget_steps if budget is None else budget
            self.console.print(f"📦 Dataset: {env} → {out} (budget {budget} steps, seed {seed})")

            with self._progress() as callback:
                manifest = generate_medium_replay(env_spec, Path(out), budget, seed, config, force, callback)

            status = "threshold reached" if manifest["threshold_reached"] else "budget-capped"
            self.console.print("\n✓ Dataset written!")
            self.console.print(f"  Episodes:  {manifest['num_episodes']} ({manifest['collected_steps']} steps)")
            self.console.print(f"  Max score: {manifest['max_score']:.3f} (threshold {manifest['threshold']:.3f})")
            self.console.print(f"  Status:    {status}")
            self.console.print(f"  Manifest:  {manifest_hash(manifest)}")
            return 0
        except Exception as e:
            return self._fail(e)

    def _resolve_train_config(self, config_file: Optional[str], dataset: Optional[str], run_dir: Optional[str],
                              ablation: Optional[str], seed: Optional[int],
                              overrides: Sequence[str] = ()) -> CoWorldConfig:
        config = self._load_config(config_file, overrides)
        if seed is not None:
            config = replace(config, seed=seed)
        config = apply_ablation(config, ablation or config.ablation)
        paths = replace(config.paths,
                        dataset_dir=dataset or config.paths.dataset_dir,
                        run_dir=run_dir or config.paths.run_dir)
        return replace(config, paths=paths).ensure_valid()

    def train(self, config_file: Optional[str] = None, dataset: Optional[str] = None,
              run_dir: Optional[str] = None, ablation: Optional[str] = None, seed: Optional[int] = None,
              print_config: bool = False, force: bool = False, overrides: Sequence[str] = ()) -> int:
        """Run source pretraining and co-training.

        Args:
            config_file: JSON config file
            dataset: Offline dataset directory (overrides paths.dataset_dir)
            run_dir: Run directory (overrides paths.run_dir)
            ablation: none, no_align, no_value_reg or offline_baseline
            seed: Seed override
            print_config: Print the resolved config and exit
            force: Overwrite a non-empty run directory
            overrides: ``KEY=VALUE`` config overrides, applied before the flags above

        Returns:
            Exit code (0 for success)
        """
        try:
            config = self._resolve_train_config(config_file, dataset, run_dir, ablation, seed, overrides)
            if print_config:
                self.console.print_json(json.dumps(config.to_dict(), sort_keys=True))
                return 0

            self.console.print(f"🧠 Train: ablation={config.ablation}, seed={config.seed}, "
                               f"β₂={config.cotrain.domain_kl_scale}, α={config.cotrain.value_reg_scale}")
            with self._progress() as callback:
                path = coworld_train(config, force=force, progress_callback=callback)

            manifest = read_json(path / "manifest.json", field="manifest")
            self.console.print("\n✓ Training complete!")
            self.console.print(f"  Run dir:    {path}")
            self.console.print(f"  Iterations: {manifest['outer_iterations_completed']}")
            if manifest.get("final_eval"):
                report = manifest["final_eval"]
                self.console.print(f"  Return:     {report['mean_return']:.3f} ± {report['std_return']:.3f}")
            return 0
        except Exception as e:
            return self._fail(e)

    def _episode_for_frames(self, bundle, env_spec: EnvSpec, dataset: Optional[str], needed: int,
                            seed: int) -> Episode:
        if dataset:
            for episode in ReplayBuffer.load_directory(Path(dataset)).episodes():
                if episode.num_frames >= needed:
                    return episode
            raise FormatError(f"no episode in {dataset} has {needed} frames", field="episodes")
        return collect_episode(bundle, make_env(env_spec), seed, EVAL, generator=make_generator(seed))

    def evaluate(self, checkpoint: str, env: Optional[str] = None, episodes: int = 10, seed: int = 0,
                 value_horizon: Optional[int] = None, out: Optional[str] = None,
                 dump_frames: Optional[str] = None, dataset: Optional[str] = None) -> int:
        """Evaluate a checkpoint's policy.

        Args:
            checkpoint: Checkpoint file
            env: Env preset or EnvSpec file (default: the checkpoint's env)
            episodes: Number of evaluation episodes
            seed: Evaluation seed
            value_horizon: Also run the value diagnostic over this many steps
            out: Write the JSON report here instead of stdout
            dump_frames: Directory for the open-loop prediction strip
            dataset: Dataset to take the open-loop episode from

        Returns:
            Exit code (0 for success)
        """
        try:
            bundle, config = load_checkpoint(Path(checkpoint))
            env_spec = resolve_env(env, seed) if env else bundle.env_spec
            report = evaluate_policy(env_spec, bundle, episodes, seed)
            result = {"checkpoint": str(checkpoint), "role": bundle.role, "env_spec": env_spec.to_dict(),
                      "eval": report.to_dict()}

            if value_horizon:
                diagnostic = value_diagnostic(env_spec, bundle, value_horizon, config.behavior.gamma, seed)
                result["value_diagnostic"] = diagnostic.to_dict()

            if dump_frames:
                e = config.evaluation
                needed = e.open_loop_context + e.open_loop_horizon
                episode = self._episode_for_frames(bundle, env_spec, dataset, needed, seed)
                prediction = open_loop_prediction(bundle, episode, e.open_loop_context, e.open_loop_horizon, seed)
                strip = plot_frame_strip(prediction, Path(dump_frames) / "open_loop.png")
                result["open_loop_mse"] = prediction.mean_mse
                self.console.print(f"ℹ  Open-loop strip: {strip}")

            if out:
                write_json(Path(out), result)
                self.console.print(f"✓ Report written to {out}")
            else:
                self.console.print_json(json.dumps(result, sort_keys=True))
            self.console.print(f"✓ Return: {report.mean_return:.3f} ± {report.std_return:.3f} "
                               f"over {report.episodes} episodes")
            return 0
        except Exception as e:
            return self._fail(e)

    def plot(self, run_dir: str, out: Optional[str] = None) -> int:
        """Render static figures from a run's metrics.csv.

        Returns:
            Exit code (0 for success)
        """
        try:
            written = plot_run(Path(run_dir), Path(out) if out else None)
            self.console.print(f"✓ Wrote {len(written)} figures")
            for path in written:
                self.console.print(f"  • {path}")
            return 0
        except Exception as e:
            return self._fail(e)

    def compare(self, run_dirs: List[str], out: Optional[str] = None, episodes: int = 10,
                seed: int = 0) -> int:
        """Evaluate the final target agent of several runs side by side.

        Returns:
            Exit code (0 for success)
        """
        try:
            rows = []
            for run_dir in run_dirs:
                run_path = Path(run_dir)
                manifest = read_json(run_path / "manifest.json", field="manifest")
                checkpoint = run_path / "checkpoints" / f"target_final{CHECKPOINT_SUFFIX}"
                if not checkpoint.exists():
                    raise FormatError(f"{run_dir} has no final target checkpoint", field="checkpoints")
                bundle, config = load_checkpoint(checkpoint)
                report = evaluate_policy(config.target_env, bundle, episodes, seed)
                diagnostic = value_diagnostic(config.target_env, bundle, config.evaluation.value_horizon,
                                              config.behavior.gamma, seed)
                rows.append((run_dir, manifest.get("ablation", config.ablation), report, diagnostic))

            rescale_diagnostics([row[3] for row in rows])

            table = Table(title="Run comparison")
            for column in ("run", "ablation", "return", "true value", "estimated value", "gap", "rescaled"):
                table.add_column(column)
            results = []
            for run_dir, ablation, report, diagnostic in rows:
                table.add_row(
                    run_dir, ablation,
                    f"{report.mean_return:.2f} ± {report.std_return:.2f}",
                    f"{diagnostic.true_value:.2f}", f"{diagnostic.estimated_value:.2f}",
                    f"{diagnostic.gap:+.2f}",
                    f"{diagnostic.rescaled_true:.2f} / {diagnostic.rescaled_estimated:.2f}",
                )
                results.append({"run_dir": run_dir, "ablation": ablation, "eval": report.to_dict(),
                                "value_diagnostic": diagnostic.to_dict()})
            self.console.print(table)

            out_path = Path(out) if out else Path("comparison.json")
            write_json(out_path, {"runs": results, "episodes": episodes, "seed": seed})
            self.console.print(f"✓ Comparison written to {out_path}")
            return 0
        except Exception as e:
            return self._fail(e)

    def print_config(self, config_file: Optional[str] = None, overrides: Sequence[str] = (),
                     key: Optional[str] = None, save: Optional[str] = None) -> int:
        """Print the fully resolved configuration, defaults included.

        Args:
            config_file: JSON config file
            overrides: ``KEY=VALUE`` config overrides
            key: Print only this dot-notation key
            save: Also write the resolved configuration to this file

        Returns:
            Exit code (0 for success)
        """
        try:
            config = self._config(config_file, overrides)
            config.config = config.build().to_dict()
            if key:
                missing = object()
                value = config.get(key, missing)
                if value is missing:
                    raise ConfigError(f"unknown config key '{key}'", fields=[key])
                self.console.print_json(json.dumps(value, sort_keys=True))
            else:
                self.console.print_json(json.dumps(config.config, sort_keys=True))
            if save:
                config.save(Path(save))
                self.console.print(f"✓ Config saved to {save}")
            return 0
        except Exception as e:
            return self._fail(e)

