"""Content hashes for files, manifests and configs."""

import hashlib
import json
from pathlib import Path
from typing import Any, Dict


def file_hash(filepath: Path) -> str:
    """Calculate SHA256 hash of a file.

    Args:
        filepath: Path to file

    Returns:
        Hex digest of file hash
    """
    sha256 = hashlib.sha256()
    with open(filepath, 'rb') as f:
        for chunk in iter(lambda: f.read(8192), b''):
            sha256.update(chunk)
    return sha256.hexdigest()


def canonical_json(data: Dict[str, Any]) -> str:
    """Serialize to JSON with sorted keys and no whitespace variance."""
    return json.dumps(data, sort_keys=True, separators=(",", ":"))


def dict_hash(data: Dict[str, Any]) -> str:
    """SHA256 of the canonical JSON form of ``data``."""
    return hashlib.sha256(canonical_json(data).encode("utf-8")).hexdigest()
