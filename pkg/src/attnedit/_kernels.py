"""Hot attention kernels.

Two implementations: plain numpy and numba ``@njit`` loops. Matrix
products go through BLAS in both; numba fuses the softmax row pass and
the row selection. Numba is used when it imports and
``ATTNEDIT_DISABLE_NUMBA`` is unset (or "0"). Both are deterministic but
not bit-identical to each other, so a run should stick to one.
"""
from __future__ import annotations

import os
from types import SimpleNamespace

import numpy as np


def _softmax_probs_np(q: np.ndarray, k: np.ndarray, scale: float) -> np.ndarray:
    logits = np.matmul(q, k.transpose(0, 2, 1)) * scale
    logits -= logits.max(axis=-1, keepdims=True)
    e = np.exp(logits)
    return (e / e.sum(axis=-1, keepdims=True)).astype(np.float32)


def _attend_np(probs: np.ndarray, v: np.ndarray) -> np.ndarray:
    return np.matmul(probs.astype(np.float64), v)


def _select_rows_np(mask: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.where(mask[None, :, None], a, b)


numpy_impl = SimpleNamespace(
    name="numpy",
    softmax_probs=_softmax_probs_np,
    attend=_attend_np,
    select_rows=_select_rows_np,
)

numba_impl = None
try:
    from numba import njit
except ImportError:  # pragma: no cover
    njit = None

if njit is not None:

    @njit(cache=True, nogil=True)
    def _normalize_rows_nb(logits, scale):
        # one pass per row: scale, max, exp, sum, divide, cast
        h, nq, nk = logits.shape
        out = np.empty((h, nq, nk), dtype=np.float32)
        row = np.empty(nk, dtype=np.float64)
        for a in range(h):
            for i in range(nq):
                mx = -np.inf
                for j in range(nk):
                    s = logits[a, i, j] * scale
                    row[j] = s
                    if s > mx:
                        mx = s
                tot = 0.0
                for j in range(nk):
                    e = np.exp(row[j] - mx)
                    row[j] = e
                    tot += e
                for j in range(nk):
                    out[a, i, j] = row[j] / tot
        return out

    def _softmax_probs_nb(q, k, scale):
        # logits stay on BLAS; loops cannot beat it single-threaded
        return _normalize_rows_nb(np.matmul(q, k.transpose(0, 2, 1)), scale)

    @njit(cache=True, nogil=True)
    def _select_rows_nb(mask, a, b):
        out = np.empty_like(a)
        h, nq, nk = a.shape
        for x in range(h):
            for i in range(nq):
                src = a if mask[i] else b
                for j in range(nk):
                    out[x, i, j] = src[x, i, j]
        return out

    numba_impl = SimpleNamespace(
        name="numba",
        softmax_probs=_softmax_probs_nb,
        attend=_attend_np,
        select_rows=_select_rows_nb,
    )


def numba_requested() -> bool:
    return os.environ.get("ATTNEDIT_DISABLE_NUMBA", "0").lower() in ("", "0", "false", "no")


active = numba_impl if (numba_impl is not None and numba_requested()) else numpy_impl


def softmax_probs(q: np.ndarray, k: np.ndarray, scale: float) -> np.ndarray:
    """Row softmax of ``scale * q @ k^T`` per head, returned as float32."""
    return active.softmax_probs(
        np.ascontiguousarray(q, dtype=np.float64), np.ascontiguousarray(k, dtype=np.float64), float(scale)
    )


def attend(probs: np.ndarray, v: np.ndarray) -> np.ndarray:
    """``probs @ v`` per head, accumulated in float64."""
    return active.attend(np.ascontiguousarray(probs, dtype=np.float32), np.ascontiguousarray(v, dtype=np.float64))


def select_rows(mask: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Query rows from ``a`` where ``mask`` is set, from ``b`` elsewhere."""
    return active.select_rows(np.ascontiguousarray(mask, dtype=np.bool_), np.ascontiguousarray(a), np.ascontiguousarray(b))
