"""Deterministic binary container for checkpoints and window archives.

Layout: magic bytes, an 8-byte little-endian header length, a JSON header,
then the raw array payloads concatenated in the order the header lists
them. Everything is byte-stable: JSON keys are sorted and arrays are
written little-endian C-order, so writing the same content twice yields
files with identical checksums (unlike zip-based formats, which embed
timestamps).
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ParseError

CHECKPOINT_MAGIC = b"BIPOCO1"
WINDOW_MAGIC = b"POSEWIN1"

_LEN_FMT = "<Q"


def _canonical_dtype(dtype: np.dtype) -> str:
    """Explicit little-endian dtype string, e.g. '<f8'."""
    d = np.dtype(dtype)
    if d.kind not in "fiub":
        raise ParseError(f"unsupported array dtype {d}")
    return d.newbyteorder("<").str


def write_container(
    path: str | Path,
    magic: bytes,
    header: dict,
    arrays: dict[str, np.ndarray],
) -> None:
    """Write a container file atomically (via a temp file + rename).

    Args:
        path: destination file.
        magic: leading magic bytes identifying the container flavor.
        header: JSON-serializable metadata; stored under key "meta".
        arrays: named numeric arrays; stored in sorted-name order.
    """
    path = Path(path)
    manifest = []
    payloads = []
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        dtype_str = _canonical_dtype(arr.dtype)
        arr = arr.astype(np.dtype(dtype_str), copy=False)
        manifest.append(
            {"name": name, "dtype": dtype_str, "shape": list(arr.shape)}
        )
        payloads.append(arr.tobytes(order="C"))
    doc = {"meta": header, "tensors": manifest}
    header_bytes = json.dumps(
        doc, sort_keys=True, separators=(",", ":")
    ).encode("utf-8")
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(magic)
        f.write(struct.pack(_LEN_FMT, len(header_bytes)))
        f.write(header_bytes)
        for blob in payloads:
            f.write(blob)
    tmp.replace(path)


def read_container(
    path: str | Path, magic: bytes
) -> tuple[dict, dict[str, np.ndarray]]:
    """Read a container written by write_container.

    Raises ParseError if the file is truncated, has the wrong magic, or
    its payload does not match the manifest.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    if len(raw) < len(magic) + struct.calcsize(_LEN_FMT):
        raise ParseError(f"{path}: truncated container")
    if raw[: len(magic)] != magic:
        raise ParseError(
            f"{path}: bad magic {raw[:len(magic)]!r}, expected {magic!r}"
        )
    off = len(magic)
    (header_len,) = struct.unpack_from(_LEN_FMT, raw, off)
    off += struct.calcsize(_LEN_FMT)
    if off + header_len > len(raw):
        raise ParseError(f"{path}: truncated header")
    try:
        doc = json.loads(raw[off : off + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"{path}: corrupt header: {exc}") from exc
    off += header_len
    if not isinstance(doc, dict) or "meta" not in doc or "tensors" not in doc:
        raise ParseError(f"{path}: header missing meta/tensors")
    arrays: dict[str, np.ndarray] = {}
    for entry in doc["tensors"]:
        dtype = np.dtype(entry["dtype"])
        shape = tuple(entry["shape"])
        nbytes = dtype.itemsize * int(np.prod(shape, dtype=np.int64))
        if off + nbytes > len(raw):
            raise ParseError(f"{path}: truncated payload for {entry['name']}")
        arr = np.frombuffer(raw, dtype=dtype, count=nbytes // dtype.itemsize,
                            offset=off).reshape(shape)
        arrays[entry["name"]] = arr.copy()
        off += nbytes
    if off != len(raw):
        raise ParseError(f"{path}: {len(raw) - off} trailing bytes")
    return doc["meta"], arrays
