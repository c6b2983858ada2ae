"""Variance schedules and the forward/reverse diffusion stepping arithmetic.

Timesteps are 1-based: t runs 1..T, and the cumulative product alpha_bar(0)
is defined as 1 so that stepping down to t=0 lands exactly on the clean-image
estimate. All ops accept either an ImageGrid or a bare array and return the
matching kind.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import ImageGrid

__all__ = [
    "VarianceSchedule",
    "make_linear_schedule",
    "StepSubsequence",
    "make_subsequence",
    "forward_sample",
    "estimate_x0",
    "ddpm_step",
    "ddim_step",
    "ddim_sigma",
    "SIGMA_MODES",
]

SIGMA_MODES = ("sqrt-beta", "posterior", "zero")


def _unwrap(x):
    if isinstance(x, ImageGrid):
        return x.data, x
    return np.asarray(x, dtype=np.float64), None


def _rewrap(arr, proto):
    return proto.with_data(arr) if proto is not None else arr


@dataclass(frozen=True)
class VarianceSchedule:
    """Per-step noise variances beta_t and their derived cumulative products.

    ``sigmas`` holds the reverse-process sampling noise scale per step; the
    default is sqrt(beta_t), with the posterior-variance alternative
    sqrt((1-abar_{t-1})/(1-abar_t) * beta_t) or an all-zero (deterministic
    sampling) choice selectable at construction.
    """

    betas: np.ndarray
    sigma_mode: str = "sqrt-beta"

    def __post_init__(self):
        b = np.ascontiguousarray(np.asarray(self.betas, dtype=np.float64).reshape(-1))
        if b.size < 1:
            raise ValueError("schedule needs at least one step")
        if np.any(b <= 0.0) or np.any(b >= 1.0):
            raise ValueError("betas must lie strictly in (0, 1)")
        if self.sigma_mode not in SIGMA_MODES:
            raise ValueError(f"sigma_mode must be one of {SIGMA_MODES}")
        b.setflags(write=False)
        object.__setattr__(self, "betas", b)
        abar = np.cumprod(1.0 - b)
        abar.setflags(write=False)
        object.__setattr__(self, "_abar", abar)
        if self.sigma_mode == "posterior":
            abar_prev = np.concatenate(([1.0], abar[:-1]))
            sig = np.sqrt((1.0 - abar_prev) / (1.0 - abar) * b)
        elif self.sigma_mode == "zero":
            sig = np.zeros_like(b)
        else:
            sig = np.sqrt(b)
        sig.setflags(write=False)
        object.__setattr__(self, "_sigmas", sig)

    @property
    def T(self) -> int:
        return int(self.betas.size)

    def _check_t(self, t: int, lo: int = 1):
        if not (lo <= t <= self.T):
            raise ValueError(f"timestep {t} outside [{lo}, {self.T}]")

    def beta(self, t: int) -> float:
        self._check_t(t)
        return float(self.betas[t - 1])

    def alpha(self, t: int) -> float:
        return 1.0 - self.beta(t)

    def alpha_bar(self, t: int) -> float:
        self._check_t(t, lo=0)
        return 1.0 if t == 0 else float(self._abar[t - 1])

    def sigma(self, t: int) -> float:
        self._check_t(t)
        return float(self._sigmas[t - 1])


def make_linear_schedule(
    T: int, beta1: float = 1e-4, betaT: float = 0.02, sigma_mode: str = "sqrt-beta"
) -> VarianceSchedule:
    """Variances linearly interpolated from beta1 to betaT inclusive."""
    if T < 1:
        raise ValueError("T must be >= 1")
    if not (0.0 < beta1 <= betaT < 1.0):
        raise ValueError(f"need 0 < beta1 <= betaT < 1, got {beta1}, {betaT}")
    if T == 1:
        betas = np.array([beta1])
    else:
        betas = np.linspace(beta1, betaT, T)
    return VarianceSchedule(betas, sigma_mode)


@dataclass(frozen=True)
class StepSubsequence:
    """Strictly increasing timestep indices ending at T."""

    taus: tuple[int, ...]
    T: int

    def __post_init__(self):
        taus = tuple(int(t) for t in self.taus)
        if not taus:
            raise ValueError("empty subsequence")
        if taus[0] < 1 or taus[-1] != self.T:
            raise ValueError(f"subsequence must start >= 1 and end at T={self.T}")
        if any(b <= a for a, b in zip(taus, taus[1:])):
            raise ValueError("subsequence must be strictly increasing")
        object.__setattr__(self, "taus", taus)

    def __len__(self) -> int:
        return len(self.taus)

    def __getitem__(self, j: int) -> int:
        return self.taus[j]


def make_subsequence(T: int, S: int) -> StepSubsequence:
    """S uniformly strided indices tau_j = round(j*T/S), ending at T.

    Rounding is half-up so the spacing never collapses below 1.
    """
    if not (1 <= S <= T):
        raise ValueError(f"need 1 <= S <= T, got S={S}, T={T}")
    taus = tuple(int(math.floor(j * T / S + 0.5)) for j in range(1, S + 1))
    return StepSubsequence(taus, T)


def forward_sample(x0, t: int, eps, sched: VarianceSchedule):
    """Jump straight to noise level t: sqrt(abar_t)*x0 + sqrt(1-abar_t)*eps."""
    sched._check_t(t)
    a = sched.alpha_bar(t)
    x0a, proto = _unwrap(x0)
    epsa, _ = _unwrap(eps)
    return _rewrap(math.sqrt(a) * x0a + math.sqrt(1.0 - a) * epsa, proto)


def estimate_x0(x_t, eps_hat, t: int, sched: VarianceSchedule):
    """Invert forward_sample given a noise estimate:
    (x_t - sqrt(1-abar_t)*eps_hat)/sqrt(abar_t)."""
    sched._check_t(t)
    a = sched.alpha_bar(t)
    xa, proto = _unwrap(x_t)
    ea, _ = _unwrap(eps_hat)
    return _rewrap((xa - math.sqrt(1.0 - a) * ea) / math.sqrt(a), proto)


def ddpm_step(x_t, eps_hat, t: int, z, sched: VarianceSchedule):
    """One ancestral reverse step:
    (x_t - beta_t/sqrt(1-abar_t)*eps_hat)/sqrt(alpha_t) + sigma_t*z.

    At t=1 the caller must pass z=0 (the final step is deterministic).
    """
    sched._check_t(t)
    xa, proto = _unwrap(x_t)
    za, _ = _unwrap(z)
    if t == 1 and np.any(za != 0.0):
        raise ValueError("the t=1 step takes no noise; pass z=0")
    ea, _ = _unwrap(eps_hat)
    b = sched.beta(t)
    abar = sched.alpha_bar(t)
    mean = (xa - b / math.sqrt(1.0 - abar) * ea) / math.sqrt(1.0 - b)
    return _rewrap(mean + sched.sigma(t) * za, proto)


def ddim_sigma(sched: VarianceSchedule, t_from: int, t_to: int, eta: float) -> float:
    """Noise scale for the generalized (non-Markovian) step from t_from to
    t_to: eta*sqrt((1-abar_to)/(1-abar_from) * (1-abar_from/abar_to)).
    eta=0 is deterministic; eta=1 on consecutive steps matches the ancestral
    posterior scale."""
    if not (0 <= t_to < t_from <= sched.T):
        raise ValueError(f"need 0 <= t_to < t_from <= T, got {t_to}, {t_from}")
    if eta < 0:
        raise ValueError("eta must be >= 0")
    a_from = sched.alpha_bar(t_from)
    a_to = sched.alpha_bar(t_to)
    if a_to == 1.0:  # landing on t=0 is always deterministic
        return 0.0
    return eta * math.sqrt((1.0 - a_to) / (1.0 - a_from) * (1.0 - a_from / a_to))


def ddim_step(x_from, eps_hat, t_from: int, t_to: int, sigma: float, z, sched: VarianceSchedule):
    """Jump from noise level t_from down to t_to:
    sqrt(abar_to)*x0_hat + sqrt(1-abar_to-sigma^2)*eps_hat + sigma*z."""
    if not (0 <= t_to < t_from <= sched.T):
        raise ValueError(f"need 0 <= t_to < t_from <= T, got {t_to}, {t_from}")
    a_to = sched.alpha_bar(t_to)
    if not (0.0 <= sigma <= math.sqrt(1.0 - a_to) + 1e-15):
        raise ValueError(f"sigma {sigma} outside [0, sqrt(1-abar_{t_to})]")
    xa, proto = _unwrap(x_from)
    ea, _ = _unwrap(eps_hat)
    za, _ = _unwrap(z)
    x0a = estimate_x0(xa, ea, t_from, sched)
    dir_coef = math.sqrt(max(1.0 - a_to - sigma * sigma, 0.0))
    return _rewrap(math.sqrt(a_to) * x0a + dir_coef * ea + sigma * za, proto)
