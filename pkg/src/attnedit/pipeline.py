"""End-to-end editing: encode, invert, controlled dual-pass denoising,
decode; plus the fixed-window driver for longer clips."""
from __future__ import annotations

import hashlib
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Literal, Protocol

import numpy as np

from .control import make_controller
from .core import (
    KINDS,
    AttentionStore,
    EditSpec,
    LatentVideo,
    NoiseSchedule,
    StaleCacheError,
    TokenizedPrompt,
    ValidationError,
)
from .scheduler import invert, sample

log = logging.getLogger(__name__)

WINDOW_SIZE = 8
MAX_FRAMES = 64


class CodecBackend(Protocol):
    name: str
    downscale: int

    def encode(self, frames: np.ndarray, frame_offset: int = 0) -> LatentVideo: ...

    def decode(self, latent: LatentVideo) -> np.ndarray: ...


class IdentityCodec:
    """8-bit RGB frames <-> [-1, 1] latents at full resolution.

    decode(encode(x)) == x exactly for uint8 input.
    """

    name = "identity"
    downscale = 1

    def encode(self, frames: np.ndarray, frame_offset: int = 0) -> LatentVideo:
        x = np.asarray(frames)
        if x.ndim != 4 or x.shape[-1] != 3:
            raise ValidationError(f"frames must be K x H x W x 3, got {x.shape}")
        return LatentVideo(x.astype(np.float64).transpose(0, 3, 1, 2) / 127.5 - 1.0, frame_offset)

    def decode(self, latent: LatentVideo) -> np.ndarray:
        x = np.clip(latent.data, -1.0, 1.0)
        return np.rint((x + 1.0) * 127.5).astype(np.uint8).transpose(0, 2, 3, 1)


def content_hash(frames: np.ndarray, denoiser, codec) -> str:
    """Cache key for an inversion: frame bytes plus backend identities."""
    h = hashlib.sha256()
    arr = np.ascontiguousarray(frames)
    h.update(repr((arr.shape, arr.dtype.str)).encode())
    h.update(arr.tobytes())
    h.update(denoiser.fingerprint().encode())
    h.update(getattr(codec, "name", type(codec).__name__).encode())
    return h.hexdigest()


@dataclass
class EditJob:
    frames: np.ndarray
    src_prompt: TokenizedPrompt
    edit_prompt: TokenizedPrompt
    spec: EditSpec
    schedule: NoiseSchedule
    denoiser: object
    codec: CodecBackend = field(default_factory=IdentityCodec)
    seed: int = 0
    probe_mode: Literal["separate", "shared"] = "separate"
    window_size: int = WINDOW_SIZE
    frame_offset: int = 0

    def __post_init__(self):
        if len(self.frames) < 1:
            raise ValidationError("edit job has no frames")
        if len(self.frames) > self.window_size:
            raise ValidationError(f"{len(self.frames)} frames exceed the window size {self.window_size}")
        if not self.src_prompt.text.strip() or not self.edit_prompt.text.strip():
            raise ValidationError("prompts must be non-empty")
        if self.spec.src_len != len(self.src_prompt) or self.spec.edit_len != len(self.edit_prompt):
            raise ValidationError("edit spec was aligned against different prompts")


@dataclass
class Diagnostics:
    frame_offset: int
    num_frames: int
    latent_norms: list[float]
    probe_norms: list[float] | None
    activations: dict
    substitutions: dict
    mask_coverage: dict
    degenerate_masks: int
    store_entries: int

    def to_dict(self) -> dict:
        def keyed(d):
            return {f"layer{layer}/{kind}": v for (layer, kind), v in sorted(d.items())}

        return {
            "frame_offset": self.frame_offset,
            "num_frames": self.num_frames,
            "store_entries": self.store_entries,
            "controller_activations": keyed(self.activations),
            "substitutions": keyed(self.substitutions),
            "mask_coverage": {str(t): round(v, 6) for t, v in sorted(self.mask_coverage.items(), reverse=True)},
            "degenerate_masks": self.degenerate_masks,
            "latent_norms": [round(v, 6) for v in self.latent_norms],
            "probe_norms": None if self.probe_norms is None else [round(v, 6) for v in self.probe_norms],
        }


@dataclass
class WindowResult:
    frames: np.ndarray
    diagnostics: Diagnostics
    latent: LatentVideo
    zT: LatentVideo
    store: AttentionStore
    probe_latent: LatentVideo | None = None

    def __iter__(self):
        yield self.frames
        yield self.diagnostics


def _check_cache(store: AttentionStore, job: EditJob, chash: str) -> None:
    expected = (job.schedule.fingerprint(), job.src_prompt.fingerprint(), chash, len(job.frames), job.schedule.num_steps)
    got = (store.schedule_hash, store.prompt_hash, store.content_hash, store.num_frames, store.num_steps)
    names = ("schedule hash", "prompt hash", "content hash", "frame count", "step count")
    bad = [n for n, a, b in zip(names, expected, got) if a != b]
    if bad:
        raise StaleCacheError(f"cached store does not match this job ({', '.join(bad)} differ)")


def invert_window(job: EditJob) -> tuple[LatentVideo, AttentionStore]:
    z0 = job.codec.encode(job.frames, job.frame_offset)
    return invert(z0, job.src_prompt, job.denoiser, job.schedule,
                  content_hash=content_hash(job.frames, job.denoiser, job.codec))


def edit_window(job: EditJob, cached: tuple[LatentVideo, AttentionStore] | None = None) -> WindowResult:
    """Edit at most one window of frames.

    Inversion with the source prompt captures every attention map; then
    each step t = T..1 runs the probe pass on the un-starred latent with
    the edit prompt, blends its maps with the stored ones, and runs the
    starred pass with the blended maps substituted.
    """
    if cached is not None:
        zT, store = cached
        _check_cache(store, job, content_hash(job.frames, job.denoiser, job.codec))
    else:
        zT, store = invert_window(job)
    layer_shapes = {l.layer_id: tuple(l.resolution) for l in job.denoiser.layers}
    controller = make_controller(store, job.spec, layer_shapes) if layer_shapes else None
    res = sample(zT, job.edit_prompt, job.denoiser, job.schedule, controller=controller, probe_mode=job.probe_mode)
    stats = controller.stats if controller is not None else None
    diag = Diagnostics(
        frame_offset=job.frame_offset,
        num_frames=len(job.frames),
        latent_norms=res.latent_norms,
        probe_norms=None if res.probe_trajectory is None else [float(np.linalg.norm(z.data)) for z in res.probe_trajectory[::-1]],
        activations=stats.activation_counts() if stats else {},
        substitutions=dict(stats.substitutions) if stats else {},
        mask_coverage=dict(stats.mask_coverage) if stats else {},
        degenerate_masks=stats.degenerate_masks if stats else 0,
        store_entries=len(store),
    )
    for layer in layer_shapes:
        for kind in KINDS:
            diag.substitutions.setdefault((layer, kind), 0)
    return WindowResult(
        frames=job.codec.decode(res.latent),
        diagnostics=diag,
        latent=res.latent,
        zT=zT,
        store=store,
        probe_latent=None if res.probe_trajectory is None else res.probe_trajectory[0],
    )


def window_bounds(num_frames: int, window_size: int = WINDOW_SIZE) -> list[tuple[int, int]]:
    if num_frames < 1:
        raise ValidationError("no frames to edit")
    if window_size < 1:
        raise ValidationError("window size must be >= 1")
    return [(s, min(s + window_size, num_frames)) for s in range(0, num_frames, window_size)]


@dataclass
class VideoResult:
    frames: np.ndarray
    windows: list[WindowResult]

    @property
    def diagnostics(self) -> list[Diagnostics]:
        return [w.diagnostics for w in self.windows]


def edit_video(frames: np.ndarray, src_prompt: TokenizedPrompt, edit_prompt: TokenizedPrompt, spec: EditSpec, *,
               schedule: NoiseSchedule, denoiser, codec: CodecBackend | None = None, seed: int = 0,
               window_size: int = WINDOW_SIZE, max_frames: int = MAX_FRAMES,
               probe_mode: Literal["separate", "shared"] = "separate", jobs: int = 1,
               cache: dict[int, tuple[LatentVideo, AttentionStore]] | None = None) -> VideoResult:
    """Edit consecutive non-overlapping windows independently and concatenate.

    ``cache`` maps a window's first-frame index to a previously computed
    (zT, store) pair for that window.
    """
    frames = np.asarray(frames)
    if len(frames) == 0:
        raise ValidationError("no frames to edit")
    if len(frames) > max_frames:
        raise ValidationError(f"{len(frames)} frames exceed the limit of {max_frames}")
    codec = codec or IdentityCodec()
    cache = cache or {}

    def run(bounds):
        s, e = bounds
        job = EditJob(frames[s:e], src_prompt, edit_prompt, spec, schedule, denoiser, codec, seed, probe_mode,
                      window_size, frame_offset=s)
        log.info("editing frames %d-%d", s, e - 1)
        return edit_window(job, cache.get(s))

    bounds = window_bounds(len(frames), window_size)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run, bounds))
    else:
        results = [run(b) for b in bounds]
    return VideoResult(np.concatenate([r.frames for r in results]), results)


def reconstruct(frames: np.ndarray, src_prompt: TokenizedPrompt, *, schedule: NoiseSchedule, denoiser,
                codec: CodecBackend | None = None, return_latents: bool = False):
    """Controller-free baseline: encode, invert, sample with the source prompt, decode."""
    codec = codec or IdentityCodec()
    if len(frames) == 0:
        raise ValidationError("no frames to reconstruct")
    z0 = codec.encode(np.asarray(frames))
    zT, _ = invert(z0, src_prompt, denoiser, schedule)
    out = sample(zT, src_prompt, denoiser, schedule).latent
    if return_latents:
        return codec.decode(out), z0, out
    return codec.decode(out)
