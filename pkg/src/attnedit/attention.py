"""Cross-attention and sparse-causal spatial-temporal attention layers,
the hook protocol used for capture/injection, and the desk-scale toy
denoiser backends."""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from . import _kernels
from .core import (
    CROSS,
    SPATIAL_TEMPORAL,
    ShapeMismatchError,
    TokenizedPrompt,
    ValidationError,
)

RENORM_TOL = 1e-4


class AttentionHook(Protocol):
    def __call__(self, layer_id: int, kind: str, step: int, frame: int, attn: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class ProjectionSet:
    """Q/K/V/output projections for one attention layer.

    Matrices act on row vectors: ``q = x @ W_Q`` with ``W_Q`` of shape
    (feature_dim, heads * head_dim).
    """

    W_Q: np.ndarray
    W_K: np.ndarray
    W_V: np.ndarray
    W_O: np.ndarray
    heads: int
    head_dim: int

    def __post_init__(self):
        inner = self.heads * self.head_dim
        if self.W_Q.shape[1] != inner or self.W_K.shape[1] != inner or self.W_V.shape[1] != inner:
            raise ShapeMismatchError(f"projections must map to heads*head_dim={inner}")
        if self.W_K.shape[0] != self.W_V.shape[0]:
            raise ShapeMismatchError("W_K and W_V must share the context dimension")
        if self.W_O.shape[0] != inner:
            raise ShapeMismatchError("W_O must map from heads*head_dim")

    @property
    def feature_dim(self) -> int:
        return self.W_Q.shape[0]

    @property
    def context_dim(self) -> int:
        return self.W_K.shape[0]

    @classmethod
    def random(cls, rng: np.random.Generator, feature_dim: int, context_dim: int, heads: int, head_dim: int,
               out_dim: int | None = None, q_gain: float = 1.0) -> "ProjectionSet":
        inner = heads * head_dim
        out_dim = feature_dim if out_dim is None else out_dim
        return cls(
            W_Q=q_gain * rng.standard_normal((feature_dim, inner)) / math.sqrt(feature_dim),
            W_K=rng.standard_normal((context_dim, inner)) / math.sqrt(context_dim),
            W_V=rng.standard_normal((context_dim, inner)) / math.sqrt(context_dim),
            W_O=rng.standard_normal((inner, out_dim)) / math.sqrt(inner),
            heads=heads,
            head_dim=head_dim,
        )


def _split_heads(x: np.ndarray, heads: int, head_dim: int) -> np.ndarray:
    return x.reshape(x.shape[0], heads, head_dim).transpose(1, 0, 2)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    h, n, d = x.shape
    return x.transpose(1, 0, 2).reshape(n, h * d)


def _substitute(hook, layer_id, kind, step, frame, attn: np.ndarray) -> np.ndarray:
    if hook is None:
        return attn
    out = np.asarray(hook(layer_id, kind, step, frame, attn))
    if out.shape != attn.shape:
        raise ShapeMismatchError(f"hook returned {kind} map of shape {out.shape}, expected {attn.shape}")
    out = out.astype(np.float32, copy=False)
    sums = out.sum(axis=-1, dtype=np.float64, keepdims=True)
    if np.abs(sums - 1.0).max(initial=0.0) > RENORM_TOL:
        if np.any(sums <= 0) or np.any(out < 0):
            raise ValidationError(f"hook returned a {kind} map that cannot be renormalized")
        out = (out / sums).astype(np.float32)
    return out


def _attention(x_q, x_kv, proj: ProjectionSet, hook, layer_id, kind, step, frame):
    if x_q.ndim != 2 or x_q.shape[1] != proj.feature_dim:
        raise ShapeMismatchError(f"query features {x_q.shape} do not match feature dim {proj.feature_dim}")
    if x_kv.ndim != 2 or x_kv.shape[1] != proj.context_dim:
        raise ShapeMismatchError(f"key/value input {x_kv.shape} does not match context dim {proj.context_dim}")
    q = _split_heads(x_q @ proj.W_Q, proj.heads, proj.head_dim)
    k = _split_heads(x_kv @ proj.W_K, proj.heads, proj.head_dim)
    v = _split_heads(x_kv @ proj.W_V, proj.heads, proj.head_dim)
    attn = _kernels.softmax_probs(q, k, 1.0 / math.sqrt(proj.head_dim))
    used = _substitute(hook, layer_id, kind, step, frame, attn)
    out = _merge_heads(_kernels.attend(used, v)) @ proj.W_O
    return out, used


def cross_attention(features, prompt_embedding, proj: ProjectionSet, hook: AttentionHook | None = None,
                    *, layer_id: int = 0, step: int = 0, frame: int = 0):
    """Attend from a frame's positions (Q x D) to prompt tokens (M x E).

    Returns the reprojected output (Q x D_out) and the map that was
    actually applied, (heads x Q x M) float32 -- the hook's map if a hook
    substituted one.
    """
    return _attention(np.asarray(features, np.float64), np.asarray(prompt_embedding, np.float64),
                      proj, hook, layer_id, CROSS, step, frame)


def sparse_causal_attention(features_k, features_1, features_prev, proj: ProjectionSet,
                            hook: AttentionHook | None = None, *, layer_id: int = 0, step: int = 0, frame: int = 0):
    """Frame k queries attend to the positions of frame 1 and frame k-1.

    For the first frame pass ``features_prev = features_1``; the keys are
    then frame 1 twice. The map has shape (heads x Q x 2Q).
    """
    fk = np.asarray(features_k, np.float64)
    f1 = np.asarray(features_1, np.float64)
    fp = np.asarray(features_prev, np.float64)
    if not (fk.shape == f1.shape == fp.shape):
        raise ShapeMismatchError(f"frame features differ in shape: {fk.shape}, {f1.shape}, {fp.shape}")
    return _attention(fk, np.concatenate([f1, fp], axis=0), proj, hook, layer_id, SPATIAL_TEMPORAL, step, frame)


@dataclass(frozen=True)
class LayerInfo:
    layer_id: int
    resolution: tuple[int, int]


class DenoiserBackend(Protocol):
    layers: Sequence[LayerInfo]

    def embed_prompt(self, prompt: TokenizedPrompt) -> np.ndarray: ...

    def forward(self, latent: np.ndarray, timestep: int, context: np.ndarray,
                hook: AttentionHook | None = None, step: int = 0) -> np.ndarray: ...

    def fingerprint(self) -> str: ...


def _pool(x: np.ndarray, h: int, w: int) -> np.ndarray:
    K, C, H, W = x.shape
    return x.reshape(K, C, h, H // h, w, W // w).mean(axis=(3, 5))


def _timestep_embedding(timestep: int, dim: int) -> np.ndarray:
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    ang = timestep * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)])


class ToyDenoiser:
    """Seeded miniature noise predictor built from the two attention layers.

    Each resolution hosts one block: the latent is average-pooled to the
    block's grid, lifted to ``dim`` features plus a timestep embedding,
    run through sparse-causal attention and then cross-attention to the
    prompt, projected back to latent channels and upsampled. The noise
    prediction is the mean of the block outputs.

    The eps prediction reaches the latent only through attention: the
    spatial-temporal value path is damped by ``st_gain`` while the cross
    path carries prompt-derived values at ``cross_gain``. With all maps
    pinned the prediction is therefore close to latent-independent, which
    is what makes map replay reproduce the inversion trajectory.
    """

    def __init__(self, seed: int = 0, resolutions: Sequence[int | tuple[int, int]] = (8, 4), heads: int = 2,
                 channels: int = 3, dim: int = 16, embed_dim: int = 16, head_dim: int = 8,
                 st_gain: float = 1e-3, cross_gain: float = 1.0, q_gain: float = 3.0,
                 in_gain: float = 3.0, time_gain: float = 0.3):
        if not resolutions:
            raise ValidationError("toy denoiser needs at least one resolution")
        res = [(r, r) if isinstance(r, (int, np.integer)) else tuple(r) for r in resolutions]
        if any(h < 1 or w < 1 for h, w in res):
            raise ValidationError(f"bad resolutions {resolutions!r}")
        if heads < 1:
            raise ValidationError("heads must be >= 1")
        self.seed = int(seed)
        self.channels = channels
        self.dim = dim
        self.embed_dim = embed_dim
        self.heads = heads
        self.head_dim = head_dim
        self.st_gain = st_gain
        self.cross_gain = cross_gain
        self.in_gain = in_gain
        self.time_gain = time_gain
        self.layers = tuple(LayerInfo(i, r) for i, r in enumerate(res))

        rng = np.random.default_rng(self.seed)
        self._w_in, self._w_t, self._w_out, self._st, self._cross = [], [], [], [], []
        for _ in self.layers:
            self._w_in.append(in_gain * rng.standard_normal((channels, dim)) / math.sqrt(channels))
            self._w_t.append(time_gain * rng.standard_normal((dim, dim)) / math.sqrt(dim))
            self._st.append(ProjectionSet.random(rng, dim, dim, heads, head_dim, q_gain=q_gain))
            self._cross.append(ProjectionSet.random(rng, dim, embed_dim, heads, head_dim, q_gain=q_gain))
            self._w_out.append(rng.standard_normal((dim, channels)) / math.sqrt(dim))

    def fingerprint(self) -> str:
        h = hashlib.sha256(b"toy-denoiser")
        h.update(repr((self.seed, [l.resolution for l in self.layers], self.channels, self.dim, self.embed_dim,
                       self.heads, self.head_dim, self.st_gain, self.cross_gain, self.in_gain, self.time_gain)).encode())
        for w in self._w_in + self._w_t + self._w_out:
            h.update(w.tobytes())
        return h.hexdigest()

    def check_latent_shape(self, shape) -> None:
        if len(shape) != 4 or shape[1] != self.channels:
            raise ShapeMismatchError(f"toy denoiser expects K x {self.channels} x H x W latents, got {tuple(shape)}")
        H, W = shape[2:]
        for layer in self.layers:
            h, w = layer.resolution
            if H % h or W % w:
                raise ShapeMismatchError(f"resolution {h}x{w} does not divide latent size {H}x{W}")

    def embed_prompt(self, prompt: TokenizedPrompt) -> np.ndarray:
        rows = [
            np.random.default_rng([self.seed, 7919, int(tid)]).standard_normal(self.embed_dim)
            for tid in prompt.token_ids
        ]
        return np.stack(rows)

    def forward(self, latent, timestep, context, hook=None, step=0):
        x = np.asarray(latent, dtype=np.float64)
        self.check_latent_shape(x.shape)
        K, C, H, W = x.shape
        temb = _timestep_embedding(timestep, self.dim)
        eps = np.zeros_like(x)
        for layer in self.layers:
            i = layer.layer_id
            h, w = layer.resolution
            feats = _pool(x, h, w).reshape(K, C, h * w).transpose(0, 2, 1) @ self._w_in[i]
            feats = feats + temb @ self._w_t[i]

            st_out = np.empty_like(feats)
            for k in range(K):
                prev = feats[k - 1] if k > 0 else feats[0]
                st_out[k], _ = sparse_causal_attention(feats[k], feats[0], prev, self._st[i], hook,
                                                       layer_id=i, step=step, frame=k)
            hidden = feats + st_out
            cross_out = np.empty_like(feats)
            for k in range(K):
                cross_out[k], _ = cross_attention(hidden[k], context, self._cross[i], hook,
                                                  layer_id=i, step=step, frame=k)
            block = (self.st_gain * st_out + self.cross_gain * cross_out) @ self._w_out[i]
            block = block.transpose(0, 2, 1).reshape(K, C, h, w)
            eps += np.repeat(np.repeat(block, H // h, axis=2), W // w, axis=3)
        return eps / len(self.layers)


class ConstantDenoiser:
    """Predicts the same eps everywhere and has no attention layers."""

    layers: tuple = ()

    def __init__(self, value: float = 0.0):
        self.value = float(value)

    def fingerprint(self) -> str:
        return hashlib.sha256(f"constant:{self.value!r}".encode()).hexdigest()

    def embed_prompt(self, prompt: TokenizedPrompt) -> np.ndarray:
        return np.zeros((len(prompt), 1))

    def forward(self, latent, timestep, context, hook=None, step=0):
        return np.full(np.shape(latent), self.value, dtype=np.float64)


def build_toy_denoiser(seed: int = 0, resolutions: Sequence[int | tuple[int, int]] = (8, 4), heads: int = 2,
                       latent_size: tuple[int, int] | None = None, **kwargs) -> ToyDenoiser:
    den = ToyDenoiser(seed, resolutions, heads, **kwargs)
    if latent_size is not None:
        den.check_latent_shape((1, den.channels, *latent_size))
    return den
