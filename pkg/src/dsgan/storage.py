"""GRD1 grid file format and dataset directory layout.

File layout (little-endian):
    bytes 0-3   magic "GRD1"
    u32         version (= 1)
    u32         channels
    u32         height
    u32         width
    u32         name-block byte length
    bytes       UTF-8 channel names, newline-separated
    u64         timestamp, seconds since epoch (0 = absent)
    f32[...]    channels*height*width values, channel-major, row-major

A dataset directory holds NNNNNN.grd1 files plus a manifest.tsv with
(filename, timestamp) tab-separated rows in chronological order.
"""

from __future__ import annotations

import os
import struct
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .fields import GridField

__all__ = [
    "GridFileError",
    "BadMagicError",
    "TruncatedFileError",
    "NonFiniteValuesError",
    "read_grid",
    "write_grid",
    "write_dataset",
    "read_dataset",
    "MANIFEST_NAME",
]

MAGIC = b"GRD1"
VERSION = 1
_HEADER = struct.Struct("<4sIIIII")  # magic, version, channels, height, width, name block length

MANIFEST_NAME = "manifest.tsv"


class GridFileError(Exception):
    """Base class for grid file format problems."""


class BadMagicError(GridFileError):
    """File does not start with the GRD1 magic or has an unknown version."""


class TruncatedFileError(GridFileError):
    """Payload shorter than the header-declared dimensions."""


class NonFiniteValuesError(GridFileError):
    """Stored values contain NaN or Inf."""


def _timestamp_to_epoch(stamp: str | None) -> int:
    if stamp is None:
        return 0
    dt = datetime.fromisoformat(stamp)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def _epoch_to_timestamp(epoch: int) -> str | None:
    if epoch == 0:
        return None
    return datetime.fromtimestamp(epoch, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%S")


def write_grid(field: GridField, path: str | os.PathLike) -> None:
    """Write a field as a GRD1 file; values are quantized to binary32."""
    names = "\n".join(field.channel_names).encode("utf-8")
    header = _HEADER.pack(MAGIC, VERSION, field.channels, field.height, field.width, len(names))
    payload = np.ascontiguousarray(field.values, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(names)
        fh.write(struct.pack("<Q", _timestamp_to_epoch(field.timestamp)))
        fh.write(payload)


def read_grid(path: str | os.PathLike) -> GridField:
    """Read a GRD1 file. Raises a distinct error per failure mode."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise TruncatedFileError(f"{path}: file shorter than the fixed header")
    magic, version, channels, height, width, name_len = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise BadMagicError(f"{path}: unsupported version {version}")
    off = _HEADER.size
    if len(raw) < off + name_len + 8:
        raise TruncatedFileError(f"{path}: header truncated inside the name block")
    names = raw[off : off + name_len].decode("utf-8").split("\n") if name_len else []
    off += name_len
    (epoch,) = struct.unpack_from("<Q", raw, off)
    off += 8
    count = channels * height * width
    expected = count * 4
    got = len(raw) - off
    if got != expected:
        raise TruncatedFileError(
            f"{path}: payload holds {got} bytes, header dims {channels}x{height}x{width} "
            f"require {expected}"
        )
    values = np.frombuffer(raw, dtype="<f4", count=count, offset=off).reshape(channels, height, width)
    if not np.isfinite(values).all():
        raise NonFiniteValuesError(f"{path}: payload contains non-finite values")
    if len(names) != channels:
        raise GridFileError(f"{path}: {len(names)} channel names for {channels} channels")
    return GridField(values.astype(np.float64), tuple(names), _epoch_to_timestamp(epoch))


def write_dataset(fields: list[GridField], directory: str | os.PathLike, force: bool = False) -> Path:
    """Write fields as NNNNNN.grd1 files plus a manifest.tsv.

    Refuses to write into a non-empty directory unless force is set.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    existing = [p for p in directory.iterdir() if p.name != "."]
    if existing and not force:
        raise FileExistsError(f"{directory} is not empty; pass force=True to overwrite")
    rows = []
    for i, f in enumerate(fields):
        name = f"{i:06d}.grd1"
        write_grid(f, directory / name)
        rows.append(f"{name}\t{f.timestamp or ''}")
    (directory / MANIFEST_NAME).write_text("\n".join(rows) + "\n", encoding="utf-8")
    return directory


def read_dataset(directory: str | os.PathLike) -> list[GridField]:
    """Read every field listed in manifest.tsv, in manifest order."""
    directory = Path(directory)
    manifest = directory / MANIFEST_NAME
    if not manifest.is_file():
        raise GridFileError(f"{directory}: missing {MANIFEST_NAME}")
    fields = []
    for line in manifest.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        name = line.split("\t")[0]
        fields.append(read_grid(directory / name))
    return fields
