"""Error classes shared by every coworld package.

Each class carries the exit code the CLI returns when it escapes a command.
"""

from typing import Optional


class CoWorldError(Exception):
    """Base class for all expected coworld failures."""

    exit_code = 1


class ConfigError(CoWorldError, ValueError):
    """Invalid configuration value; the message names the field."""

    exit_code = 2

    def __init__(self, message: str, fields: Optional[list] = None):
        super().__init__(message)
        self.fields = list(fields or [])


class FormatError(CoWorldError):
    """Malformed episode/checkpoint container or manifest."""

    exit_code = 3

    def __init__(self, message: str, field: Optional[str] = None):
        super().__init__(f"{message} (field: {field})" if field else message)
        self.field = field


class EmptyDatasetError(CoWorldError):
    """No episode is long enough to cut the requested sequences."""

    exit_code = 3


class ImmutableBufferError(CoWorldError):
    """Write attempted on an offline buffer."""

    exit_code = 4


class EnvUsageError(CoWorldError):
    """Environment used out of lifecycle order (e.g. step after the episode ended)."""

    exit_code = 4


class OutputExistsError(CoWorldError):
    """Output directory is not empty and --force was not given."""

    exit_code = 4


class NumericError(CoWorldError):
    """Non-finite activations or losses."""

    exit_code = 5

    def __init__(self, message: str, stage: str = "", step: Optional[int] = None,
                 last_checkpoint: Optional[str] = None):
        context = []
        if stage:
            context.append(f"stage={stage}")
        if step is not None:
            context.append(f"step={step}")
        if last_checkpoint:
            context.append(f"last good checkpoint={last_checkpoint}")
        super().__init__(f"{message} [{', '.join(context)}]" if context else message)
        self.stage = stage
        self.step = step
        self.last_checkpoint = last_checkpoint


class ShapeError(CoWorldError, ValueError):
    """Tensor shape does not match the model's contract."""

    exit_code = 2
