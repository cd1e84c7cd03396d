"""Deterministic DDIM stepping, inversion with attention capture, and sampling."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Literal

import numpy as np

from .core import (
    AttentionStore,
    BackendError,
    InvalidRangeError,
    LatentVideo,
    MapKey,
    NoiseSchedule,
    AttnEditError,
    ShapeMismatchError,
    TokenizedPrompt,
)

log = logging.getLogger(__name__)

Hook = Callable[[int, str, int, int, np.ndarray], np.ndarray]


def _transfer(z, eps, a_from: float, a_to: float):
    # x0 estimate at the current noise level, re-noised with the same eps at the target level
    return np.sqrt(a_to) * (z - np.sqrt(1.0 - a_from) * eps) / np.sqrt(a_from) + np.sqrt(1.0 - a_to) * eps


def ddim_step(z, eps, alpha_from: float, alpha_to: float):
    """Move ``z`` from cumulative alpha ``alpha_from`` to ``alpha_to`` at fixed eps.

    Sampling uses (a_t -> a_{t-1}), inversion (a_{t-1} -> a_t).
    """
    if not (0 < alpha_from <= 1 and 0 < alpha_to <= 1):
        raise InvalidRangeError("cumulative alphas must lie in (0, 1]")
    zd, ed = _unwrap(z), _unwrap(eps)
    if zd.shape != ed.shape:
        raise ShapeMismatchError(f"latent shape {zd.shape} != eps shape {ed.shape}")
    return _rewrap(z, _transfer(zd, ed, alpha_from, alpha_to))


def _unwrap(x):
    if isinstance(x, LatentVideo):
        return x.data
    return np.asarray(x, dtype=np.float64)


def _check(z, eps, t: int, sched: NoiseSchedule):
    if not 1 <= t <= sched.num_steps:
        raise InvalidRangeError(f"timestep {t} outside [1, {sched.num_steps}]")
    zd, ed = _unwrap(z), _unwrap(eps)
    if zd.shape != ed.shape:
        raise ShapeMismatchError(f"latent shape {zd.shape} != eps shape {ed.shape}")
    return zd, ed


def _rewrap(like, out):
    if isinstance(like, LatentVideo):
        return like.replace(out)
    if np.ndim(out) == 0:
        return float(out)
    return out


def ddim_sample_step(z_t, eps, t: int, sched: NoiseSchedule):
    """One denoising step t -> t-1 at fixed noise prediction ``eps``."""
    zd, ed = _check(z_t, eps, t, sched)
    return _rewrap(z_t, _transfer(zd, ed, sched[t], sched[t - 1]))


def ddim_invert_step(z_prev, eps, t: int, sched: NoiseSchedule):
    """One inversion step t-1 -> t; the exact inverse of ``ddim_sample_step`` at fixed eps."""
    zd, ed = _check(z_prev, eps, t, sched)
    return _rewrap(z_prev, _transfer(zd, ed, sched[t - 1], sched[t]))


@dataclass
class TrajectoryRecord:
    latents: list[LatentVideo]  # latents[t] is the latent after step t; latents[0] is clean
    store: AttentionStore


def _guarded(hook: Hook, step: int) -> Hook:
    def wrapped(layer, kind, t, frame, m):
        try:
            return hook(layer, kind, t, frame, m)
        except BackendError:
            raise
        except Exception as exc:
            raise BackendError(f"attention hook failed on {kind} map, frame {frame}: {exc}", step=step, layer=layer) from exc

    return wrapped


def _forward(denoiser, z: np.ndarray, timestep: int, context: np.ndarray, hook: Hook | None, step: int) -> np.ndarray:
    try:
        eps = denoiser.forward(z, timestep, context, hook=hook, step=step)
    except BackendError as exc:
        if exc.step is None:
            raise BackendError(str(exc), step=step, layer=exc.layer) from exc
        raise
    except AttnEditError:
        raise
    except Exception as exc:
        raise BackendError(f"denoiser failed: {exc}", step=step) from exc
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != z.shape:
        raise BackendError(f"denoiser returned eps of shape {eps.shape} for latent {z.shape}", step=step)
    return eps


def invert_trajectory(
    z0: LatentVideo,
    prompt: TokenizedPrompt,
    denoiser,
    sched: NoiseSchedule,
    content_hash: str | None = None,
) -> TrajectoryRecord:
    """Run t = 1..T inversion, storing every attention map under its step index."""
    store = AttentionStore(
        schedule_hash=sched.fingerprint(),
        prompt_hash=prompt.fingerprint(),
        num_frames=z0.num_frames,
        num_steps=sched.num_steps,
        content_hash=content_hash,
    )
    context = denoiser.embed_prompt(prompt)
    z = z0.data
    latents = [z0]
    for t in range(1, sched.num_steps + 1):

        def capture(layer, kind, step, frame, m):
            store.add(MapKey(step, layer, kind, frame), m)
            return m

        # eps at the current (less noisy) latent, conditioned on the previous timestep
        eps = _forward(denoiser, z, int(sched.timesteps[t - 1]), context, _guarded(capture, t), t)
        z = ddim_invert_step(z, eps, t, sched)
        latents.append(z0.replace(z))
    return TrajectoryRecord(latents, store.freeze())


def invert(z0: LatentVideo, prompt: TokenizedPrompt, denoiser, sched: NoiseSchedule, content_hash: str | None = None):
    rec = invert_trajectory(z0, prompt, denoiser, sched, content_hash)
    return rec.latents[-1], rec.store


@dataclass
class SampleResult:
    latent: LatentVideo
    trajectory: list[LatentVideo]  # trajectory[t], t = 0..T, starred (controlled) path
    probe_trajectory: list[LatentVideo] | None = None
    captured: AttentionStore | None = None
    latent_norms: list[float] = field(default_factory=list)

    def __iter__(self):
        yield self.latent
        yield self.captured


def sample(
    zT: LatentVideo,
    prompt: TokenizedPrompt,
    denoiser,
    sched: NoiseSchedule,
    controller=None,
    probe_mode: Literal["separate", "shared"] = "separate",
    capture: bool = False,
) -> SampleResult:
    """Denoise t = T..1, optionally under an attention controller.

    With a controller that asks for a probe pass, every step first runs
    the denoiser on the probe latent (the un-starred trajectory, or the
    starred one when ``probe_mode="shared"``) to collect edit-side maps,
    then runs it again on the starred latent with the controller's hook
    substituting maps. ``capture`` keeps the edit-side maps of every step.
    """
    if probe_mode not in ("separate", "shared"):
        raise InvalidRangeError(f"probe_mode must be 'separate' or 'shared', got {probe_mode!r}")
    T = sched.num_steps
    context = denoiser.embed_prompt(prompt)
    captured = (
        AttentionStore(sched.fingerprint(), prompt.fingerprint(), zT.num_frames, T) if capture else None
    )
    probing = controller is not None and controller.needs_probe
    track_probe = probing and probe_mode == "separate"

    z_star = zT.data
    z_probe = zT.data
    traj = [None] * (T + 1)
    traj[T] = zT
    probe_traj = [None] * (T + 1) if track_probe else None
    if track_probe:
        probe_traj[T] = zT
    norms = [float(np.linalg.norm(z_star))]

    for t in range(T, 0, -1):
        ts = int(sched.timesteps[t])

        def record(layer, kind, step, frame, m):
            if captured is not None:
                captured.add(MapKey(step, layer, kind, frame), m)
            if probing:
                controller.record_probe(layer, kind, step, frame, m)
            return m

        if controller is not None:
            controller.begin_step(t)
        if probing:
            src = z_probe if track_probe else z_star
            eps_probe = _forward(denoiser, src, ts, context, _guarded(record, t), t)
            if track_probe:
                z_probe = ddim_sample_step(z_probe, eps_probe, t, sched)
                probe_traj[t - 1] = zT.replace(z_probe)

        if controller is None:
            hook = _guarded(record, t) if captured is not None else None
        elif probing:
            hook = _guarded(controller.hook, t)
        else:

            def hook(layer, kind, step, frame, m, _h=_guarded(controller.hook, t)):
                return record(layer, kind, step, frame, _h(layer, kind, step, frame, m))

        eps = _forward(denoiser, z_star, ts, context, hook, t)
        z_star = ddim_sample_step(z_star, eps, t, sched)
        traj[t - 1] = zT.replace(z_star)
        norms.append(float(np.linalg.norm(z_star)))
        if controller is not None:
            controller.end_step(t)

    return SampleResult(
        latent=traj[0],
        trajectory=traj,
        probe_trajectory=probe_traj,
        captured=captured.freeze() if captured is not None else None,
        latent_norms=norms,
    )
