"""Attention control: cross-attention word swapping, blending masks from
source cross-attention, and spatial-temporal relaxation inside the mask."""
from __future__ import annotations

import logging
import math
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from . import _kernels
from .core import (
    CROSS,
    SPATIAL_TEMPORAL,
    AttentionStore,
    EditSpec,
    ShapeMismatchError,
    StoreError,
    ValidationError,
)

log = logging.getLogger(__name__)

TAU = 0.5
MAX_MASK_POSITIONS = 32 * 32


class DegenerateMaskWarning(UserWarning):
    pass


def cross_blend_map(c_src: np.ndarray, c_edit: np.ndarray, spec: EditSpec) -> np.ndarray:
    """Edit-prompt-shaped map: edited-word columns from ``c_edit``, every
    other column copied from the aligned source column of ``c_src``."""
    if c_src.shape[:-1] != c_edit.shape[:-1]:
        raise ShapeMismatchError(f"cross maps differ in head/query shape: {c_src.shape} vs {c_edit.shape}")
    if c_src.shape[-1] != spec.src_len or c_edit.shape[-1] != spec.edit_len:
        raise ShapeMismatchError(
            f"cross maps have {c_src.shape[-1]}/{c_edit.shape[-1]} token columns, "
            f"spec expects {spec.src_len}/{spec.edit_len}"
        )
    idx = spec.edit_to_src()
    keep = idx >= 0
    out = np.empty(c_edit.shape, dtype=np.result_type(c_src, c_edit))
    out[..., keep] = c_src[..., idx[keep]]
    out[..., ~keep] = c_edit[..., ~keep]
    return out


def cross_blender(C_src_t: Mapping, C_edit_t: Mapping, spec: EditSpec) -> dict:
    """Blend every (layer, frame) cross map of one step."""
    if set(C_src_t) != set(C_edit_t):
        raise StoreError("source and probe cross maps cover different (layer, frame) keys")
    return {key: cross_blend_map(C_src_t[key], C_edit_t[key], spec) for key in C_src_t}


def resize(img: np.ndarray, size: tuple[int, int], mode: str = "bilinear") -> np.ndarray:
    """Resample the last two axes with half-pixel centers (no antialiasing)."""
    oh, ow = size
    h, w = img.shape[-2:]
    if (h, w) == (oh, ow):
        return np.array(img, dtype=np.float64)
    if mode == "nearest":
        ri = np.minimum((np.arange(oh) + 0.5) * h / oh, h - 1).astype(np.int64)
        ci = np.minimum((np.arange(ow) + 0.5) * w / ow, w - 1).astype(np.int64)
        return np.asarray(img, dtype=np.float64)[..., ri[:, None], ci[None, :]]
    if mode != "bilinear":
        raise ValidationError(f"unknown resampling mode {mode!r}")
    return _interp_matrix(oh, h) @ np.asarray(img, dtype=np.float64) @ _interp_matrix(ow, w).T


def _interp_matrix(n_out: int, n_in: int) -> np.ndarray:
    x = np.clip((np.arange(n_out) + 0.5) * n_in / n_out - 0.5, 0, n_in - 1)
    x0 = np.floor(x).astype(np.int64)
    x1 = np.minimum(x0 + 1, n_in - 1)
    frac = x - x0
    m = np.zeros((n_out, n_in))
    m[np.arange(n_out), x0] += 1 - frac
    m[np.arange(n_out), x1] += frac
    return m


def square_shape(n_positions: int) -> tuple[int, int]:
    side = math.isqrt(n_positions)
    if side * side != n_positions:
        raise ShapeMismatchError(f"cannot infer a square grid for {n_positions} positions")
    return side, side


@dataclass
class SourceFootprint:
    """Per-frame footprint of the edited source words, min-max normalized.

    ``values`` is (K, h, w) in [0, 1]; frames where the aggregated map was
    constant are flagged in ``degenerate`` and hold zeros.
    """

    values: np.ndarray
    degenerate: np.ndarray


def source_footprint(C_src_t: Mapping, spec: EditSpec, layer_shapes: Mapping[int, tuple[int, int]] | None = None,
                     layers: Iterable[int] | None = None, max_positions: int = MAX_MASK_POSITIONS) -> SourceFootprint:
    """Average the edited source words' cross-attention over heads, span
    tokens and layers (at most ``max_positions`` query positions each),
    per frame, then min-max normalize each frame."""
    if spec.N == 0:
        raise ValidationError("blending mask is undefined without edited words")
    cols = spec.src_positions()
    layer_shapes = dict(layer_shapes or {})
    by_layer: dict[int, dict[int, np.ndarray]] = defaultdict(dict)
    for (layer, frame), m in C_src_t.items():
        if layers is not None and layer not in layers:
            continue
        shape = layer_shapes.get(layer) or square_shape(m.shape[1])
        if shape[0] * shape[1] != m.shape[1]:
            raise ShapeMismatchError(f"layer {layer} grid {shape} does not match {m.shape[1]} queries")
        if m.shape[1] > max_positions:
            continue
        by_layer[layer][frame] = m[..., cols].astype(np.float64).mean(axis=(0, 2)).reshape(shape)
    if not by_layer:
        raise StoreError("no source cross maps at or below the mask resolution limit")
    frames = sorted({f for per in by_layer.values() for f in per})
    grid = max((m.shape for per in by_layer.values() for m in per.values()), key=lambda s: s[0] * s[1])

    values = np.zeros((len(frames),) + grid)
    degenerate = np.zeros(len(frames), dtype=bool)
    for i, f in enumerate(frames):
        agg = np.mean([resize(per[f], grid) for per in by_layer.values() if f in per], axis=0)
        lo, hi = agg.min(), agg.max()
        if not hi > lo:
            degenerate[i] = True
            continue
        values[i] = (agg - lo) / (hi - lo)
    return SourceFootprint(values, degenerate)


def threshold_mask(fp: SourceFootprint | np.ndarray, target_resolution: tuple[int, int], tau: float = TAU,
                   mode: str = "bilinear") -> np.ndarray:
    """Resample the normalized footprint, then keep values >= tau (uint8 0/1)."""
    if isinstance(fp, SourceFootprint):
        values, degenerate = fp.values, fp.degenerate
    else:
        values = np.asarray(fp, dtype=np.float64)
        degenerate = np.zeros(values.shape[:-2], dtype=bool)
    mask = (resize(values, target_resolution, mode) >= tau).astype(np.uint8)
    mask[degenerate] = 0
    return mask


def blending_mask(C_src_t: Mapping, spec: EditSpec, target_resolution: tuple[int, int],
                  layer_shapes: Mapping[int, tuple[int, int]] | None = None, mode: str = "bilinear") -> np.ndarray:
    """Binary (K, h, w) mask at the fixed threshold 0.5."""
    fp = source_footprint(C_src_t, spec, layer_shapes)
    if fp.degenerate.any():
        warnings.warn(f"constant source attention on frames {np.flatnonzero(fp.degenerate).tolist()}; "
                      "mask left empty", DegenerateMaskWarning, stacklevel=2)
    return threshold_mask(fp, target_resolution, TAU, mode)


def spatial_blend_map(s_src: np.ndarray, s_edit: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Rows of ``s_edit`` at masked query positions, rows of ``s_src`` elsewhere."""
    if s_src.shape != s_edit.shape:
        raise ShapeMismatchError(f"spatial-temporal maps differ: {s_src.shape} vs {s_edit.shape}")
    rows = np.asarray(mask).reshape(-1).astype(bool)
    if rows.size != s_src.shape[1]:
        raise ShapeMismatchError(f"mask has {rows.size} positions, map has {s_src.shape[1]} queries")
    return _kernels.select_rows(rows, s_edit, s_src)


def spatial_blender(C_src_t: Mapping, s_src_t: np.ndarray, s_edit_t: np.ndarray, spec: EditSpec, frame: int = 0,
                    target_resolution: tuple[int, int] | None = None,
                    layer_shapes: Mapping[int, tuple[int, int]] | None = None) -> np.ndarray:
    """Relax one frame's spatial-temporal map inside the edited region."""
    target_resolution = target_resolution or square_shape(s_src_t.shape[1])
    fp = source_footprint(C_src_t, spec, layer_shapes)
    mask = threshold_mask(fp, target_resolution)
    frames = sorted({f for _, f in C_src_t})
    return spatial_blend_map(s_src_t, s_edit_t, mask[frames.index(frame)])


@dataclass
class ControlStats:
    activations: dict = field(default_factory=lambda: defaultdict(set))  # (layer, kind) -> steps seen
    substitutions: dict = field(default_factory=lambda: defaultdict(int))  # (layer, kind) -> maps replaced
    mask_coverage: dict = field(default_factory=dict)  # step -> mean fraction of masked positions
    degenerate_masks: int = 0

    def activation_counts(self) -> dict:
        return {key: len(steps) for key, steps in self.activations.items()}


class AttentionController:
    """Runtime hook applying the blenders during controlled denoising.

    Each step the scheduler first feeds the probe pass's maps through
    ``record_probe`` and then calls ``hook`` for every map of the starred
    pass. The blending threshold is fixed at 0.5.
    """

    tau = TAU
    needs_probe = True

    def __init__(self, store: AttentionStore, spec: EditSpec, layer_shapes: Mapping[int, tuple[int, int]] | None = None,
                 spatial_layers: Iterable[int] | None = None):
        self.store = store
        self.spec = spec
        self.layer_shapes = dict(layer_shapes or {})
        self.spatial_layers = None if spatial_layers is None else set(spatial_layers)
        self.stats = ControlStats()
        self._scratch: dict = {}
        self._footprints: dict = {}
        self._masks: dict = {}
        self._coverage: list[float] = []
        self._step = None

    def begin_step(self, t: int) -> None:
        self._step = t
        self._scratch.clear()
        self._footprints.clear()
        self._masks.clear()
        self._coverage = []

    def end_step(self, t: int) -> None:
        if self._coverage:
            self.stats.mask_coverage[t] = float(np.mean(self._coverage))

    def record_probe(self, layer, kind, step, frame, m) -> None:
        self._scratch[(layer, kind, frame)] = m

    def _probe(self, layer, kind, frame) -> np.ndarray:
        try:
            return self._scratch[(layer, kind, frame)]
        except KeyError:
            raise StoreError(f"no probe-pass {kind} map for layer {layer}, frame {frame}") from None

    def _footprint(self, step: int) -> SourceFootprint:
        if step not in self._footprints:
            C_src = {(k.layer, k.frame): m for k, m in self.store.items() if k.t == step and k.kind == CROSS}
            fp = source_footprint(C_src, self.spec, self.layer_shapes)
            if fp.degenerate.any():
                self.stats.degenerate_masks += int(fp.degenerate.sum())
                warnings.warn(f"step {step}: constant source attention, mask left empty", DegenerateMaskWarning,
                              stacklevel=3)
            self._footprints[step] = fp
        return self._footprints[step]

    def mask(self, step: int, layer: int, frame: int) -> np.ndarray:
        if (step, layer) not in self._masks:
            shape = self.layer_shapes.get(layer)
            if shape is None:
                shape = square_shape(self.store[(step, layer, SPATIAL_TEMPORAL, frame)].shape[1])
            self._masks[(step, layer)] = threshold_mask(self._footprint(step), shape)
        return self._masks[(step, layer)][frame]

    def hook(self, layer, kind, step, frame, m):
        self.stats.activations[(layer, kind)].add(step)
        spec = self.spec
        if kind == CROSS and spec.enable_cross:
            out = cross_blend_map(self.store[(step, layer, CROSS, frame)], self._probe(layer, CROSS, frame), spec)
            self.stats.substitutions[(layer, kind)] += 1
            return out
        if (kind == SPATIAL_TEMPORAL and spec.enable_spatial and spec.N > 0
                and (self.spatial_layers is None or layer in self.spatial_layers)):
            mask = self.mask(step, layer, frame)
            self._coverage.append(float(mask.mean()))
            out = spatial_blend_map(self.store[(step, layer, SPATIAL_TEMPORAL, frame)],
                                    self._probe(layer, SPATIAL_TEMPORAL, frame), mask)
            self.stats.substitutions[(layer, kind)] += 1
            return out
        return m


def make_controller(store: AttentionStore, spec: EditSpec, layer_shapes: Mapping[int, tuple[int, int]] | None = None,
                    spatial_layers: Iterable[int] | None = None) -> AttentionController:
    """Controller over a complete inversion store; identity when both flags are off."""
    if store.num_steps < 1 or store.num_frames < 1:
        raise StoreError("store header has no steps or frames")
    store.check_complete(store.num_steps, store.layers(), store.num_frames)
    return AttentionController(store, spec, layer_shapes, spatial_layers)


class SourceReplay:
    """Hook that swaps every map for its stored inversion counterpart."""

    needs_probe = False

    def __init__(self, store: AttentionStore):
        self.store = store

    def begin_step(self, t):
        pass

    def end_step(self, t):
        pass

    def hook(self, layer, kind, step, frame, m):
        return self.store[(step, layer, kind, frame)]
