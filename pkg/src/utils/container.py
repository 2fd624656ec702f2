"""Binary container shared by episode files and checkpoints.

Layout::

    magic         8 bytes ("CWEP0001" for episodes, "CWCK0001" for checkpoints)
    header_len    uint32, little-endian
    header        UTF-8 JSON {"arrays": [{name, dtype, shape, byte_offset, nbytes}], "meta": {...}}
    payload       raw little-endian array bytes, concatenated in header order
    crc32         uint32, little-endian, over the payload
"""

import json
import struct
import zlib
from pathlib import Path
from typing import Any, Dict, Mapping, Tuple

import numpy as np

from .errors import FormatError

EPISODE_MAGIC = b"CWEP0001"
CHECKPOINT_MAGIC = b"CWCK0001"

_U32 = struct.Struct("<I")


def _little_endian(array: np.ndarray) -> np.ndarray:
    array = np.ascontiguousarray(array)
    if array.dtype.byteorder == ">":
        array = array.astype(array.dtype.newbyteorder("<"))
    return array


def write_container(path: Path, magic: bytes, arrays: Mapping[str, np.ndarray],
                    meta: Dict[str, Any] = None) -> None:
    """Write named arrays plus JSON metadata to ``path``.

    Args:
        path: Destination file
        magic: 8-byte file signature
        arrays: Arrays in the order they should be laid out
        meta: JSON-serializable metadata stored in the header
    """
    if len(magic) != 8:
        raise ValueError("magic must be exactly 8 bytes")

    entries = []
    chunks = []
    offset = 0
    for name, array in arrays.items():
        array = _little_endian(np.asarray(array))
        data = array.tobytes(order="C")
        entries.append({
            "name": name,
            "dtype": array.dtype.str,
            "shape": list(array.shape),
            "byte_offset": offset,
            "nbytes": len(data),
        })
        chunks.append(data)
        offset += len(data)

    header = json.dumps({"arrays": entries, "meta": meta or {}}, sort_keys=True).encode("utf-8")
    payload = b"".join(chunks)

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp_path = path.with_suffix(path.suffix + ".tmp")
    with open(tmp_path, "wb") as f:
        f.write(magic)
        f.write(_U32.pack(len(header)))
        f.write(header)
        f.write(payload)
        f.write(_U32.pack(zlib.crc32(payload) & 0xFFFFFFFF))
    tmp_path.replace(path)


def read_container(path: Path, magic: bytes) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    """Read a container written by :func:`write_container`.

    Args:
        path: Source file
        magic: Expected 8-byte signature

    Returns:
        (arrays, meta) with arrays in header order

    Raises:
        FormatError: on any structural problem, naming the offending field
    """
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise FormatError(f"cannot read {path}: {e}", field="path") from e

    if len(raw) < 8 or raw[:8] != magic:
        raise FormatError(f"bad magic in {path}, expected {magic.decode()}", field="magic")
    if len(raw) < 12:
        raise FormatError(f"truncated header length in {path}", field="header_len")

    (header_len,) = _U32.unpack_from(raw, 8)
    header_end = 12 + header_len
    if header_end > len(raw):
        raise FormatError(f"header length {header_len} exceeds file size", field="header_len")

    try:
        header = json.loads(raw[12:header_end].decode("utf-8"))
        entries = header["arrays"]
        meta = header.get("meta", {})
        if not isinstance(entries, list):
            raise TypeError(f"arrays must be a list, got {type(entries).__name__}")
        payload_len = sum(int(entry.get("nbytes", -1)) for entry in entries)
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, AttributeError, ValueError) as e:
        raise FormatError(f"malformed header in {path}: {e}", field="header") from e

    if len(raw) != header_end + payload_len + 4:
        raise FormatError(
            f"payload length mismatch: header declares {payload_len} bytes, "
            f"file holds {len(raw) - header_end - 4}",
            field="nbytes",
        )

    payload = raw[header_end:header_end + payload_len]
    (stored_crc,) = _U32.unpack_from(raw, header_end + payload_len)
    if zlib.crc32(payload) & 0xFFFFFFFF != stored_crc:
        raise FormatError(f"checksum mismatch in {path}", field="crc32")

    arrays = {}
    for entry in entries:
        name = entry.get("name", "?")
        try:
            dtype = np.dtype(entry["dtype"])
            shape = tuple(int(s) for s in entry["shape"])
            start = int(entry["byte_offset"])
            nbytes = int(entry["nbytes"])
        except (KeyError, TypeError, ValueError) as e:
            raise FormatError(f"bad array entry '{name}': {e}", field=f"arrays.{name}") from e

        expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        if expected != nbytes or start + nbytes > payload_len:
            raise FormatError(f"array '{name}' does not fit its declared shape",
                              field=f"arrays.{name}.shape")
        arrays[name] = np.frombuffer(payload, dtype=dtype, count=int(np.prod(shape, dtype=np.int64)),
                                     offset=start).reshape(shape).copy()

    return arrays, meta
