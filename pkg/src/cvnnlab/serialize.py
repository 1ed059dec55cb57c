"""Flat binary container for layer parameters.

Layout: magic ``b"CVNL"``, u32 version, u32 entry count, then one manifest
record per parameter (length-prefixed UTF-8 name, u32 plane count, u32 ndim,
u64 dims), followed by the raw little-endian float64 planes in manifest
order. Round trips are bit-exact.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .autograd import Parameter, RealParameter
from .ctensor import CTensor

MAGIC = b"CVNL"
VERSION = 1


class ContainerError(ValueError):
    """Malformed parameter container."""


def save_params(path, params) -> None:
    """Write parameters (complex or real) to ``path``."""
    path = Path(path)
    chunks = [MAGIC, struct.pack("<II", VERSION, len(params))]
    planes = []
    for p in params:
        name = p.name.encode("utf-8")
        pl = p.planes()
        shape = pl[0].shape
        chunks.append(struct.pack("<I", len(name)))
        chunks.append(name)
        chunks.append(struct.pack("<II", len(pl), len(shape)))
        chunks.append(struct.pack(f"<{len(shape)}Q", *shape) if shape else b"")
        planes.extend(pl)
    for plane in planes:
        chunks.append(np.ascontiguousarray(plane, dtype="<f8").tobytes())
    path.write_bytes(b"".join(chunks))


def load_params(path):
    """Read a container back as a list of Parameter / RealParameter."""
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ContainerError("bad magic; not a parameter container")
    off = 4
    version, count = struct.unpack_from("<II", data, off)
    off += 8
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version}")
    manifest = []
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", data, off)
        off += 4
        name = data[off : off + name_len].decode("utf-8")
        off += name_len
        n_planes, ndim = struct.unpack_from("<II", data, off)
        off += 8
        shape = struct.unpack_from(f"<{ndim}Q", data, off) if ndim else ()
        off += 8 * ndim
        if n_planes not in (1, 2):
            raise ContainerError(f"entry {name!r} has invalid plane count {n_planes}")
        manifest.append((name, n_planes, tuple(shape)))
    out = []
    for name, n_planes, shape in manifest:
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        planes = []
        for _ in range(n_planes):
            end = off + 8 * n
            if end > len(data):
                raise ContainerError("container truncated")
            planes.append(np.frombuffer(data[off:end], dtype="<f8").reshape(shape).copy())
            off = end
        if n_planes == 2:
            out.append(Parameter(name, CTensor(planes[0], planes[1])))
        else:
            out.append(RealParameter(name, planes[0]))
    if off != len(data):
        raise ContainerError("trailing bytes after parameter data")
    return out


def restore_params(path, params) -> None:
    """Load a container and copy values into existing parameters by name."""
    loaded = {p.name: p for p in load_params(path)}
    for p in params:
        src = loaded.get(p.name)
        if src is None:
            raise ContainerError(f"container is missing parameter {p.name!r}")
        if type(src) is not type(p) or src.planes()[0].shape != p.planes()[0].shape:
            raise ContainerError(f"parameter {p.name!r} has mismatched kind or shape")
        if isinstance(p, Parameter):
            p.value = src.value
        else:
            p.value = src.value
