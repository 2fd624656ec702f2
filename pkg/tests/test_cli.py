"""Tests for the command-line surface."""

import json

import pytest

from src.main import build_parser, main
from src.training.agent import TARGET, AgentBundle, save_checkpoint
from src.training.coworld import MetricsWriter

from .conftest import tiny_config, tiny_env


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(tiny_config().to_dict()))
    return path


@pytest.fixture
def checkpoint(tmp_path, config):
    return save_checkpoint(AgentBundle(TARGET, config), tmp_path / "target.cwck")


def test_no_command_prints_help(capsys):
    assert main([]) == 0
    assert "gen-dataset" in capsys.readouterr().out


def test_version(capsys):
    with pytest.raises(SystemExit) as excinfo:
        build_parser().parse_args(["--version"])
    assert excinfo.value.code == 0
    assert "coworld" in capsys.readouterr().out


def test_print_config_shows_defaults(capsys):
    assert main(["print-config"]) == 0
    out = capsys.readouterr().out
    assert '"reward_balance": 0.2' in out
    assert '"domain_kl_scale": 1.5' in out


def test_invalid_config_exits_with_config_code(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"cotrain": {"reward_balance": 2.0}}))
    assert main(["print-config", "--config", str(path)]) == 2
    assert "cotrain.reward_balance" in capsys.readouterr().err


def test_train_print_config_applies_ablation(config_file, capsys):
    code = main(["train", "--config", str(config_file), "--ablation", "no_align", "--seed", "4",
                 "--print-config"])
    assert code == 0
    out = capsys.readouterr().out
    assert '"domain_kl_scale": 0.0' in out
    assert '"ablation": "no_align"' in out
    assert '"seed": 4' in out


def test_print_config_overrides_and_single_key(capsys):
    code = main(["print-config", "--set", "cotrain.reward_balance=0.5", "--set", "target_env.episode_limit=50",
                 "--get", "cotrain.reward_balance"])
    assert code == 0
    assert capsys.readouterr().out.strip() == "0.5"


def test_print_config_saves_resolved_config(tmp_path, config_file, capsys):
    saved = tmp_path / "resolved" / "config.json"
    assert main(["print-config", "--config", str(config_file), "--set", "behavior.horizon=4",
                 "--save", str(saved)]) == 0
    data = json.loads(saved.read_text())
    assert data["behavior"]["horizon"] == 4
    assert data["model"]["deter_size"] == tiny_config().model.deter_size
    assert main(["print-config", "--config", str(saved), "--get", "behavior.horizon"]) == 0
    assert capsys.readouterr().out.strip().endswith("4")


@pytest.mark.parametrize("args", [
    ["--set", "cotrain.reward_balanse=0.5"],
    ["--set", "cotrain.reward_balance"],
    ["--set", "cotrain.reward_balance=7"],
    ["--get", "cotrain.missing"],
])
def test_print_config_rejects_bad_keys(args, capsys):
    assert main(["print-config", *args]) == 2
    assert "✗ Error" in capsys.readouterr().err


def test_train_print_config_applies_overrides(config_file, capsys):
    code = main(["train", "--config", str(config_file), "--set", "cotrain.value_scale=0.8", "--print-config"])
    assert code == 0
    assert '"value_scale": 0.8' in capsys.readouterr().out

def test_train_without_dataset(tmp_path, config_file, capsys):
    code = main(["train", "--config", str(config_file), "--dataset", str(tmp_path / "missing"),
                 "--run-dir", str(tmp_path / "run")])
    assert code == 2
    assert "✗ Error" in capsys.readouterr().err


def test_train_and_compare(tmp_path, config_file, dataset_dir, capsys):
    run_dir = tmp_path / "run"
    assert main(["train", "--config", str(config_file), "--dataset", str(dataset_dir),
                 "--run-dir", str(run_dir)]) == 0
    assert (run_dir / "checkpoints" / "target_final.cwck").exists()
    assert main(["train", "--config", str(config_file), "--dataset", str(dataset_dir),
                 "--run-dir", str(run_dir)]) == 4

    out = tmp_path / "comparison.json"
    assert main(["compare", "--run-dir", str(run_dir), "--run-dir", str(run_dir), "--out", str(out)]) == 0
    comparison = json.loads(out.read_text())
    assert len(comparison["runs"]) == 2
    assert comparison["runs"][0]["eval"] == comparison["runs"][1]["eval"]


def test_compare_needs_final_checkpoint(tmp_path, capsys):
    assert main(["compare", "--run-dir", str(tmp_path)]) == 3


def test_eval_report_is_reproducible(tmp_path, checkpoint, capsys):
    outputs = []
    for name in ("a.json", "b.json"):
        out = tmp_path / name
        assert main(["eval", "--checkpoint", str(checkpoint), "--episodes", "2", "--seed", "1",
                     "--value-horizon", "5", "--out", str(out)]) == 0
        outputs.append(out.read_text())
    assert outputs[0] == outputs[1]
    report = json.loads(outputs[0])
    assert report["role"] == TARGET
    assert report["eval"]["episodes"] == 2
    assert report["value_diagnostic"]["horizon"] == 5


def test_eval_dumps_open_loop_strip(tmp_path, checkpoint, dataset_dir, capsys):
    frames = tmp_path / "frames"
    assert main(["eval", "--checkpoint", str(checkpoint), "--episodes", "1", "--dump-frames", str(frames),
                 "--dataset", str(dataset_dir), "--out", str(tmp_path / "r.json")]) == 0
    assert (frames / "open_loop.png").exists()
    assert "open_loop_mse" in json.loads((tmp_path / "r.json").read_text())


def test_eval_missing_checkpoint(tmp_path, capsys):
    assert main(["eval", "--checkpoint", str(tmp_path / "none.cwck")]) == 3


def test_eval_corrupt_checkpoint(tmp_path, capsys):
    path = tmp_path / "bad.cwck"
    path.write_bytes(b"CWEP0001garbage")
    assert main(["eval", "--checkpoint", str(path)]) == 3
    assert "magic" in capsys.readouterr().err


def test_plot_two_row_metrics(tmp_path, capsys):
    writer = MetricsWriter(tmp_path / "metrics.csv")
    writer.write(0, "target", 2, {"image_loss": 1.0})
    writer.write(0, "eval", 2, {"eval_mean_return": 3.0, "eval_std_return": 0.0})
    assert main(["plot", "--run-dir", str(tmp_path), "--out", str(tmp_path / "figs")]) == 0
    assert sorted(p.name for p in (tmp_path / "figs").iterdir()) == [
        "alignment.png", "losses.png", "returns.png", "value_gap.png",
    ]


def test_gen_dataset_with_zero_budget(tmp_path, config_file, capsys):
    env_file = tmp_path / "env.json"
    env_file.write_text(json.dumps(tiny_env("downhill").to_dict()))
    out = tmp_path / "ds"
    assert main(["gen-dataset", "--env", str(env_file), "--out", str(out), "--budget", "0",
                 "--config", str(config_file)]) == 0
    assert json.loads((out / "manifest.json").read_text())["num_episodes"] == 0
    assert main(["gen-dataset", "--env", str(env_file), "--out", str(out), "--budget", "0",
                 "--config", str(config_file)]) == 4


def test_gen_dataset_unknown_env(tmp_path, capsys):
    assert main(["gen-dataset", "--env", "sideways", "--out", str(tmp_path / "ds")]) == 3
