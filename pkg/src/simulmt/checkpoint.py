"""Binary checkpoints.

Layout: the 8-byte magic ``SIMULMT1``, then for every array a little-endian
u32 name length, the UTF-8 name, a u32 rank, one u32 per dimension and the
values as little-endian float64.  A zero name length ends the array list and
everything after it is the UTF-8 config text.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numerics import ParamStore

MAGIC = b"SIMULMT1"
VERSION = 1


class CheckpointError(ValueError):
    pass


class ShapeMismatch(CheckpointError):
    pass


@dataclass
class Checkpoint:
    arrays: dict[str, np.ndarray] = field(default_factory=dict)
    config_text: str = ""
    version: int = VERSION

    def store_names(self) -> list[str]:
        return sorted({k.split("/", 1)[0] for k in self.arrays})


def _store_arrays(prefix: str, store: ParamStore) -> dict[str, np.ndarray]:
    out = {}
    for name, value in store.params.items():
        out[f"{prefix}/{name}"] = value
        out[f"{prefix}/{name}#m"] = store.m[name]
        out[f"{prefix}/{name}#v"] = store.v[name]
    out[f"{prefix}/#step"] = np.array(float(store.step))
    return out


def save_checkpoint(path, stores: dict[str, ParamStore], config_text: str = "") -> None:
    """Write every parameter plus its Adam moments and step count."""
    arrays = {}
    for prefix, store in stores.items():
        if "/" in prefix or not prefix:
            raise ValueError(f"bad store name {prefix!r}")
        arrays.update(_store_arrays(prefix, store))
    write_arrays(path, arrays, config_text)


def write_arrays(path, arrays: dict[str, np.ndarray], config_text: str = "") -> None:
    chunks = [MAGIC]
    for name, value in arrays.items():
        raw = name.encode("utf-8")
        if not raw:
            raise ValueError("array names must be non-empty")
        a = np.asarray(value, dtype="<f8")
        chunks.append(struct.pack("<I", len(raw)) + raw)
        chunks.append(struct.pack(f"<I{a.ndim}I", a.ndim, *a.shape))
        chunks.append(np.ascontiguousarray(a).tobytes())
    chunks.append(struct.pack("<I", 0))
    chunks.append(config_text.encode("utf-8"))
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, buf: bytes, path):
        self.buf, self.pos, self.path = buf, 0, path

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"{self.path}: truncated while reading {what}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    buf = path.read_bytes()
    if buf[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic {buf[:8]!r})")
    r = _Reader(buf, path)
    r.pos = len(MAGIC)
    arrays = {}
    while True:
        n = r.u32("array name length")
        if n == 0:
            break
        try:
            name = r.take(n, "array name").decode("utf-8")
        except UnicodeDecodeError:
            raise CheckpointError(f"{path}: corrupt array name at byte {r.pos}") from None
        rank = r.u32(f"rank of {name}")
        if rank > 8:
            raise CheckpointError(f"{path}: implausible rank {rank} for {name}")
        shape = tuple(r.u32(f"shape of {name}") for _ in range(rank))
        count = int(np.prod(shape)) if shape else 1
        data = r.take(8 * count, f"data of {name}")
        arrays[name] = np.frombuffer(data, dtype="<f8").reshape(shape).astype(np.float64)
    try:
        text = buf[r.pos:].decode("utf-8")
    except UnicodeDecodeError:
        raise CheckpointError(f"{path}: config block is not UTF-8") from None
    return Checkpoint(arrays, text)


def restore_store(ckpt: Checkpoint, prefix: str, store: ParamStore) -> None:
    """Copy ``prefix/*`` arrays into ``store``, checking names and shapes first."""
    wanted = {}
    for name, value in store.params.items():
        for suffix in ("", "#m", "#v"):
            key = f"{prefix}/{name}{suffix}"
            if key not in ckpt.arrays:
                raise CheckpointError(f"checkpoint lacks array {key}")
            got = ckpt.arrays[key]
            if got.shape != value.shape:
                raise ShapeMismatch(f"array {key} has shape {got.shape}, "
                                    f"configuration expects {value.shape}")
            wanted[key] = got
    extra = {k for k in ckpt.arrays if k.startswith(prefix + "/")} - set(wanted) - {f"{prefix}/#step"}
    if extra:
        raise CheckpointError(f"checkpoint has arrays unknown to the model: {sorted(extra)[:3]}")
    for name in store.params:
        store.params[name][...] = wanted[f"{prefix}/{name}"]
        store.m[name][...] = wanted[f"{prefix}/{name}#m"]
        store.v[name][...] = wanted[f"{prefix}/{name}#v"]
    step = ckpt.arrays.get(f"{prefix}/#step")
    store.step = int(step) if step is not None else 0
