from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ShapeMismatchError, ValidationError

CROSS = "cross"
SPATIAL_TEMPORAL = "spatial_temporal"
KINDS = (CROSS, SPATIAL_TEMPORAL)

ROW_SUM_TOL = 1e-5


class MapKey(NamedTuple):
    t: int
    layer: int
    kind: str
    frame: int


@dataclass(frozen=True)
class LatentVideo:
    """K frames of C x H x W latents; ``frame_offset`` locates frame 0 in the clip."""

    data: np.ndarray
    frame_offset: int = 0

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim != 4 or d.shape[0] < 1:
            raise ShapeMismatchError(f"latent video must be K x C x H x W with K >= 1, got {d.shape}")
        if not np.all(np.isfinite(d)):
            raise ValidationError("latent video has non-finite entries")
        d.setflags(write=False)
        object.__setattr__(self, "data", d)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def num_frames(self) -> int:
        return self.data.shape[0]

    def replace(self, data: np.ndarray) -> "LatentVideo":
        return LatentVideo(data, self.frame_offset)


def check_attention_map(m: np.ndarray, tol: float = ROW_SUM_TOL) -> None:
    """Raise unless ``m`` is (heads, queries, keys) with rows on the simplex."""
    if m.ndim != 3:
        raise ShapeMismatchError(f"attention map must be 3-D, got shape {m.shape}")
    if m.size and (m.min() < 0 or m.max() > 1):
        raise ValidationError("attention weights outside [0, 1]")
    err = np.abs(m.sum(axis=-1, dtype=np.float64) - 1.0).max(initial=0.0)
    if err > tol:
        raise ValidationError(f"attention rows do not sum to 1 (max error {err:.2e})")
