"""Attention store and its binary container format.

Layout (all little-endian)::

    b"ATNSTORE1"
    schedule_hash[32] prompt_hash[32] content_hash[32]
    K:u32 T:u32 n_entries:u64
    n_entries x (
        length:u64                      # bytes that follow for this entry
        t:u32 layer:u32 kind:u8 frame:u32 ndim:u8 shape:u32[ndim]
        payload: float32[prod(shape)]   # row-major
    )
"""
from __future__ import annotations

import io
import struct
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .errors import StoreError
from .types import CROSS, KINDS, SPATIAL_TEMPORAL, MapKey

MAGIC = b"ATNSTORE1"
_HEADER = struct.Struct("<32s32s32sIIQ")
_ENTRY_HEAD = struct.Struct("<IIBIB")
_KIND_CODE = {CROSS: 0, SPATIAL_TEMPORAL: 1}
_CODE_KIND = {v: k for k, v in _KIND_CODE.items()}


def _digest(h: str | None) -> bytes:
    return bytes.fromhex(h) if h else bytes(32)


def _hexdigest(b: bytes) -> str | None:
    return b.hex() if any(b) else None


class AttentionStore:
    """Append-only map archive keyed by (t, layer, kind, frame).

    One writer fills it during inversion; ``freeze()`` then makes it
    read-only. Maps are kept as float32.
    """

    def __init__(
        self,
        schedule_hash: str | None = None,
        prompt_hash: str | None = None,
        num_frames: int = 0,
        num_steps: int = 0,
        content_hash: str | None = None,
    ):
        self.schedule_hash = schedule_hash
        self.prompt_hash = prompt_hash
        self.content_hash = content_hash
        self.num_frames = num_frames
        self.num_steps = num_steps
        self._entries: dict[MapKey, np.ndarray] = {}
        self._frozen = False

    def add(self, key: MapKey, m: np.ndarray) -> None:
        if self._frozen:
            raise StoreError("store is frozen")
        key = MapKey(*key)
        if key.kind not in KINDS:
            raise StoreError(f"unknown map kind {key.kind!r}")
        if key in self._entries:
            raise StoreError(f"duplicate store entry {key}")
        arr = np.array(m, dtype=np.float32, order="C")
        arr.setflags(write=False)
        self._entries[key] = arr

    def freeze(self) -> "AttentionStore":
        self._frozen = True
        return self

    def __getitem__(self, key) -> np.ndarray:
        try:
            return self._entries[MapKey(*key)]
        except KeyError:
            raise StoreError(f"store has no entry {tuple(key)}") from None

    def get(self, key, default=None):
        return self._entries.get(MapKey(*key), default)

    def __contains__(self, key) -> bool:
        return MapKey(*key) in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[MapKey]:
        return iter(self._entries)

    def items(self) -> Iterable[tuple[MapKey, np.ndarray]]:
        return self._entries.items()

    def layers(self, kind: str | None = None) -> list[int]:
        return sorted({k.layer for k in self._entries if kind is None or k.kind == kind})

    def steps(self) -> list[int]:
        return sorted({k.t for k in self._entries})

    def check_complete(self, num_steps: int, layers: Iterable[int], num_frames: int) -> None:
        layers = list(layers)
        missing = [
            MapKey(t, layer, kind, k)
            for t in range(1, num_steps + 1)
            for layer in layers
            for kind in KINDS
            for k in range(num_frames)
            if MapKey(t, layer, kind, k) not in self._entries
        ]
        if missing:
            raise StoreError(f"store is missing {len(missing)} entries, e.g. {missing[0]}")
        expected = num_steps * len(layers) * len(KINDS) * num_frames
        if len(self._entries) != expected:
            raise StoreError(f"store has {len(self._entries)} entries, expected {expected}")

    def __eq__(self, other) -> bool:
        if not isinstance(other, AttentionStore):
            return NotImplemented
        if self.header() != other.header() or self._entries.keys() != other._entries.keys():
            return False
        return all(
            a.shape == other._entries[k].shape and a.tobytes() == other._entries[k].tobytes()
            for k, a in self._entries.items()
        )

    def header(self) -> tuple:
        return (self.schedule_hash, self.prompt_hash, self.content_hash, self.num_frames, self.num_steps)

    def write(self, fh) -> None:
        fh.write(MAGIC)
        fh.write(
            _HEADER.pack(
                _digest(self.schedule_hash),
                _digest(self.prompt_hash),
                _digest(self.content_hash),
                self.num_frames,
                self.num_steps,
                len(self._entries),
            )
        )
        for key, arr in self._entries.items():
            head = _ENTRY_HEAD.pack(key.t, key.layer, _KIND_CODE[key.kind], key.frame, arr.ndim)
            shape = struct.pack(f"<{arr.ndim}I", *arr.shape)
            payload = arr.astype("<f4", copy=False).tobytes(order="C")
            fh.write(struct.pack("<Q", len(head) + len(shape) + len(payload)))
            fh.write(head)
            fh.write(shape)
            fh.write(payload)

    @classmethod
    def read(cls, fh) -> "AttentionStore":
        if fh.read(len(MAGIC)) != MAGIC:
            raise StoreError("not an attention store (bad magic)")
        raw = fh.read(_HEADER.size)
        if len(raw) != _HEADER.size:
            raise StoreError("truncated store header")
        sh, ph, ch, K, T, n = _HEADER.unpack(raw)
        store = cls(_hexdigest(sh), _hexdigest(ph), K, T, _hexdigest(ch))
        for _ in range(n):
            raw = fh.read(8)
            if len(raw) != 8:
                raise StoreError("truncated store entry")
            (length,) = struct.unpack("<Q", raw)
            body = fh.read(length)
            if len(body) != length:
                raise StoreError("truncated store entry")
            t, layer, code, frame, ndim = _ENTRY_HEAD.unpack_from(body)
            off = _ENTRY_HEAD.size
            shape = struct.unpack_from(f"<{ndim}I", body, off)
            off += 4 * ndim
            if code not in _CODE_KIND:
                raise StoreError(f"unknown kind code {code}")
            arr = np.frombuffer(body, dtype="<f4", offset=off).astype(np.float32)
            if arr.size != int(np.prod(shape)):
                raise StoreError("entry payload does not match its shape")
            store.add(MapKey(t, layer, _CODE_KIND[code], frame), arr.reshape(shape))
        if fh.read(1):
            raise StoreError("trailing bytes after last store entry")
        return store.freeze()

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        self.write(buf)
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "AttentionStore":
        return cls.read(io.BytesIO(data))

    def save(self, path: str | Path) -> None:
        with open(path, "wb") as fh:
            self.write(fh)

    @classmethod
    def load(cls, path: str | Path) -> "AttentionStore":
        with open(path, "rb") as fh:
            return cls.read(fh)
