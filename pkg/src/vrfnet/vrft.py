"""VRFT tensor files and plain-text parameter manifests.

Layout of a .vrft file (all integers little-endian):

    magic   4 bytes  b"VRFT"
    version u8       1
    dtype   u8       0 = float32, 1 = float64
    rank    u8       4
    dims    4 x u32  n, c, h, w
    payload row-major values, little-endian

A manifest is a text file of ``name<TAB>relative-filename`` lines; it
fixes both the parameter order and where each tensor lives.
"""

from __future__ import annotations

import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .tensor import Tensor

MAGIC = b"VRFT"
VERSION = 1
_HEADER = struct.Struct("<4sBBB4I")
_DTYPE_CODE = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPE = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


class FormatError(ValueError):
    """Malformed VRFT file or manifest."""


def write_tensor(path, t: Tensor) -> None:
    path = Path(path)
    if any(d > 0xFFFFFFFF for d in t.shape):
        raise FormatError(f"dims too large for u32 header: {t.shape}")
    code = _DTYPE_CODE[t.dtype]
    header = _HEADER.pack(MAGIC, VERSION, code, 4, *t.shape)
    payload = np.ascontiguousarray(t.data, dtype=_CODE_DTYPE[code]).tobytes()
    path.write_bytes(header + payload)


def read_tensor(path) -> Tensor:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header ({len(raw)} bytes)")
    magic, version, code, rank, *dims = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if rank != 4:
        raise FormatError(f"{path}: rank must be 4, got {rank}")
    if code not in _CODE_DTYPE:
        raise FormatError(f"{path}: unknown dtype code {code}")
    dtype = _CODE_DTYPE[code]
    count = dims[0] * dims[1] * dims[2] * dims[3]
    expected = _HEADER.size + count * dtype.itemsize
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(raw)}")
    arr = np.frombuffer(raw, dtype=dtype, offset=_HEADER.size).reshape(dims)
    return Tensor.wrap(arr.astype(arr.dtype.newbyteorder("=")))


def read_header(path) -> tuple[np.dtype, tuple[int, int, int, int]]:
    """Dtype and dims from the header alone (payload not touched)."""
    raw = Path(path).read_bytes()[: _HEADER.size]
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, code, rank, *dims = _HEADER.unpack(raw)
    if magic != MAGIC or version != VERSION or rank != 4 or code not in _CODE_DTYPE:
        raise FormatError(f"{path}: bad header")
    return _CODE_DTYPE[code], tuple(dims)


def write_manifest(directory, manifest_name: str, tensors: "OrderedDict[str, Tensor]") -> Path:
    """Write each tensor as <name>.vrft next to a manifest listing them."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for name, t in tensors.items():
        fname = name.replace("/", "_") + ".vrft"
        write_tensor(directory / fname, t)
        lines.append(f"{name}\t{fname}")
    manifest = directory / manifest_name
    manifest.write_text("\n".join(lines) + ("\n" if lines else ""))
    return manifest


def read_manifest(manifest_path) -> "OrderedDict[str, Tensor]":
    manifest_path = Path(manifest_path)
    out: "OrderedDict[str, Tensor]" = OrderedDict()
    for ln, line in enumerate(manifest_path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            name, fname = line.split("\t")
        except ValueError:
            raise FormatError(f"{manifest_path}:{ln}: expected 'name<TAB>file'") from None
        out[name] = read_tensor(manifest_path.parent / fname)
    return out


def manifest_element_count(manifest_path) -> int:
    """Total element count over all tensors in a manifest, derived from
    the VRFT headers and file sizes on disk (not from in-memory blocks)."""
    manifest_path = Path(manifest_path)
    total = 0
    for line in manifest_path.read_text().splitlines():
        if not line.strip():
            continue
        _, fname = line.split("\t")
        path = manifest_path.parent / fname
        dtype, dims = read_header(path)
        count = dims[0] * dims[1] * dims[2] * dims[3]
        if path.stat().st_size != _HEADER.size + count * dtype.itemsize:
            raise FormatError(f"{path}: size does not match header")
        total += count
    return total
