"""Bit-exact array encoding for the JSON artifact files.

Arrays are stored as little-endian raw bytes in base64 next to their dtype and
shape, so a save/load round trip reproduces every float exactly and the output
bytes depend only on the content (no timestamps).
"""

from __future__ import annotations

import base64
import json
from pathlib import Path
from typing import Any

import numpy as np

FORMAT_VERSION = 1


def encode_array(arr: np.ndarray) -> dict[str, Any]:
    arr = np.ascontiguousarray(arr)
    dtype = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
    data = arr.astype(dtype, copy=False).tobytes(order="C")
    return {
        "dtype": dtype.str,
        "shape": list(arr.shape),
        "data": base64.b64encode(data).decode("ascii"),
    }


def decode_array(obj: dict[str, Any]) -> np.ndarray:
    raw = base64.b64decode(obj["data"])
    arr = np.frombuffer(raw, dtype=np.dtype(obj["dtype"]))
    return arr.reshape(obj["shape"]).copy()


def dump_json(obj: Any, path: str | Path) -> None:
    """Write `obj` as canonical JSON (sorted keys, fixed separators)."""
    text = json.dumps(obj, sort_keys=True, indent=1, separators=(",", ": "))
    Path(path).write_text(text + "\n", encoding="utf-8")


def load_json(path: str | Path) -> Any:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def check_version(obj: dict[str, Any], kind: str) -> None:
    if obj.get("kind") != kind:
        raise ValueError(f"expected a {kind!r} file, got kind={obj.get('kind')!r}")
    if obj.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported {kind} file version {obj.get('version')!r}")
