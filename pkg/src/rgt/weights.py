"""Named parameter store and its little-endian binary checkpoint format.

Layout::

    b"RGTW" | u32 version=1 | u32 count
    count x ( u16 path_len | path utf-8 | u8 rank | rank x u32 extent | f32 payload )
    u32 crc32 of every preceding byte
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path
from typing import Iterator, Mapping

import numpy as np

from .tensor import Tensor

MAGIC = b"RGTW"
VERSION = 1


class WeightFormatError(ValueError):
    pass


class BadMagicError(WeightFormatError):
    pass


class VersionMismatchError(WeightFormatError):
    pass


class TruncatedError(WeightFormatError):
    pass


class ChecksumError(WeightFormatError):
    pass


class WeightStore(Mapping[str, Tensor]):
    """Dotted parameter path -> Tensor, iterated in lexicographic order."""

    def __init__(self, items: Mapping[str, Tensor] | None = None):
        self._items: dict[str, Tensor] = {}
        for k, v in (items or {}).items():
            self._items[k] = v if isinstance(v, Tensor) else Tensor(v)

    def __getitem__(self, key: str) -> Tensor:
        return self._items[key]

    def __iter__(self) -> Iterator[str]:
        return iter(sorted(self._items))

    def __len__(self) -> int:
        return len(self._items)

    def num_scalars(self) -> int:
        return sum(t.size for t in self._items.values())

    def scope(self, prefix: str) -> "Scope":
        return Scope(self, prefix)

    def updated(self, changes: Mapping[str, Tensor | np.ndarray]) -> "WeightStore":
        """A new store with ``changes`` applied; keys must already exist."""
        missing = set(changes) - set(self._items)
        if missing:
            raise KeyError(f"unknown parameters: {sorted(missing)}")
        out = dict(self._items)
        out.update(changes)
        return WeightStore(out)

    def trainable(self) -> "WeightStore":
        return WeightStore({k: Tensor(v.data, requires_grad=True) for k, v in self._items.items()})

    def __repr__(self) -> str:
        return f"WeightStore({len(self)} tensors, {self.num_scalars()} scalars)"


class Scope(Mapping[str, Tensor]):
    """Read-only view of the parameters under ``prefix``."""

    def __init__(self, base: Mapping[str, Tensor], prefix: str):
        self._base = base
        self._prefix = prefix if not prefix or prefix.endswith(".") else prefix + "."

    def __getitem__(self, key: str) -> Tensor:
        return self._base[self._prefix + key]

    def __iter__(self):
        n = len(self._prefix)
        return (k[n:] for k in self._base if k.startswith(self._prefix))

    def __len__(self) -> int:
        return sum(1 for _ in self)

    def __contains__(self, key) -> bool:
        return (self._prefix + key) in self._base

    def scope(self, prefix: str) -> "Scope":
        return Scope(self._base, self._prefix + prefix)


def dump_weights(store: Mapping[str, Tensor]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(store))]
    for path in sorted(store):
        t = store[path]
        data = t.data if isinstance(t, Tensor) else np.asarray(t, dtype=np.float64)
        raw = path.encode("utf-8")
        if len(raw) > 0xFFFF or data.ndim > 0xFF:
            raise WeightFormatError(f"path or rank too large for {path!r}")
        payload = data.astype("<f4")
        if not np.isfinite(payload).all():
            raise WeightFormatError(f"{path} does not fit in float32")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", data.ndim) + struct.pack(f"<{data.ndim}I", *data.shape))
        parts.append(payload.tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def load_weights(blob: bytes) -> WeightStore:
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise BadMagicError("not an RGTW weight file")
    pos = 4

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(blob) - 4:
            raise TruncatedError(f"weight file truncated at byte {pos}")
        chunk = blob[pos : pos + n]
        pos += n
        return chunk

    if len(blob) < 12:
        raise TruncatedError("weight file header truncated")
    (version,) = struct.unpack("<I", blob[4:8])
    if version != VERSION:
        raise VersionMismatchError(f"unsupported weight file version {version}")
    pos = 8
    (count,) = struct.unpack("<I", take(4))
    raw: list[tuple[str, tuple[int, ...], np.ndarray]] = []
    for _ in range(count):
        (plen,) = struct.unpack("<H", take(2))
        path = take(plen).decode("utf-8")
        (rank,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        n = int(np.prod(shape, dtype=np.int64))
        payload = np.frombuffer(take(4 * n), dtype="<f4")
        raw.append((path, shape, payload))
    if pos != len(blob) - 4:
        raise WeightFormatError(f"{len(blob) - 4 - pos} unexpected bytes before checksum")
    (crc,) = struct.unpack("<I", blob[-4:])
    if crc != zlib.crc32(blob[:-4]):
        raise ChecksumError("weight file checksum mismatch")
    return WeightStore({p: Tensor(a.astype(np.float64).reshape(s)) for p, s, a in raw})


def save_weights(store: Mapping[str, Tensor], path: str | Path) -> None:
    Path(path).write_bytes(dump_weights(store))


def read_weights(path: str | Path) -> WeightStore:
    return load_weights(Path(path).read_bytes())
