"""Output directory handling shared by dataset generation and training."""

import json
import logging
import shutil
from pathlib import Path
from typing import Any, Dict

from .errors import FormatError, OutputExistsError

logger = logging.getLogger(__name__)


def prepare_output_dir(path: Path, force: bool = False) -> Path:
    """Create ``path``, refusing to reuse a non-empty directory unless ``force``.

    With ``force`` the previous contents are removed so reruns start clean.
    """
    path = Path(path).expanduser()
    if path.exists() and not path.is_dir():
        raise OutputExistsError(f"{path} exists and is not a directory")
    if path.exists() and any(path.iterdir()):
        if not force:
            raise OutputExistsError(f"{path} is not empty (use --force to overwrite)")
        logger.info("Clearing existing output directory %s", path)
        shutil.rmtree(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_json(path: Path, data: Dict[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w') as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def read_json(path: Path, field: str = "json") -> Dict[str, Any]:
    path = Path(path)
    try:
        with open(path, 'r') as f:
            return json.load(f)
    except FileNotFoundError as e:
        raise FormatError(f"missing file {path}", field=field) from e
    except (json.JSONDecodeError, IOError) as e:
        raise FormatError(f"cannot parse {path}: {e}", field=field) from e
