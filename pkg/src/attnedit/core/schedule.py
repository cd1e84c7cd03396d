from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import InvalidRangeError

DEFAULT_STEPS = 30
DEFAULT_BETA_START = 8.5e-4
DEFAULT_BETA_END = 1.2e-2


@dataclass(frozen=True)
class NoiseSchedule:
    """Cumulative signal rates for a T-step deterministic sampler.

    ``alphas_cumprod[t]`` is the fraction of signal variance left after
    step ``t``; index 0 is the clean end and is exactly 1.0.
    ``timesteps[t]`` is the value handed to the denoiser as conditioning
    (equal to ``t`` unless the schedule was subsampled from a longer
    training schedule).
    """

    alphas_cumprod: np.ndarray
    timesteps: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.alphas_cumprod, dtype=np.float64)
        ts = np.asarray(self.timesteps, dtype=np.int64)
        if a.ndim != 1 or a.size < 2:
            raise InvalidRangeError("schedule needs at least one step")
        if a[0] != 1.0:
            raise InvalidRangeError("alphas_cumprod[0] must be exactly 1.0")
        if not np.all(np.diff(a) < 0):
            raise InvalidRangeError("alphas_cumprod must be strictly decreasing")
        if not (np.all(a > 0) and np.all(a <= 1)):
            raise InvalidRangeError("alphas_cumprod must lie in (0, 1]")
        if ts.shape != a.shape:
            raise InvalidRangeError("timesteps and alphas_cumprod lengths differ")
        a.setflags(write=False)
        ts.setflags(write=False)
        object.__setattr__(self, "alphas_cumprod", a)
        object.__setattr__(self, "timesteps", ts)

    @property
    def num_steps(self) -> int:
        return self.alphas_cumprod.size - 1

    def __getitem__(self, t: int) -> float:
        return float(self.alphas_cumprod[t])

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(self.alphas_cumprod.astype("<f8").tobytes())
        h.update(self.timesteps.astype("<i8").tobytes())
        return h.hexdigest()


def build_schedule(
    T: int = DEFAULT_STEPS,
    beta_start: float = DEFAULT_BETA_START,
    beta_end: float = DEFAULT_BETA_END,
    train_steps: int | None = None,
) -> NoiseSchedule:
    """Linear-beta schedule, optionally subsampled from a longer one.

    With ``train_steps=None`` the T betas are spaced linearly between
    ``beta_start`` and ``beta_end`` and accumulated directly. With
    ``train_steps=N`` the betas follow the latent-diffusion "scaled
    linear" rule over N training steps and T of them are picked with a
    uniform stride (offset 1), the way DDIM samplers are usually run
    against a pretrained model.
    """
    if not isinstance(T, (int, np.integer)) or T < 1:
        raise InvalidRangeError(f"T must be a positive integer, got {T!r}")
    if not (0 < beta_start <= beta_end < 1):
        raise InvalidRangeError(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
        )
    if train_steps is None:
        betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
        acp = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
        _check_underflow(acp)
        return NoiseSchedule(acp, np.arange(T + 1))

    if train_steps < T:
        raise InvalidRangeError(f"train_steps={train_steps} is shorter than T={T}")
    betas = np.linspace(beta_start**0.5, beta_end**0.5, train_steps, dtype=np.float64) ** 2
    train_acp = np.cumprod(1.0 - betas)
    stride = train_steps // T
    offset = 1 if (T - 1) * stride + 1 < train_steps else 0
    picked = np.arange(T) * stride + offset
    acp = np.concatenate([[1.0], train_acp[picked]])
    _check_underflow(acp)
    return NoiseSchedule(acp, np.concatenate([[0], picked]))


def _check_underflow(acp: np.ndarray) -> None:
    if acp[-1] <= np.finfo(np.float64).tiny:
        raise InvalidRangeError("betas too large for this many steps: alphas_cumprod underflows to 0")
