"""Measurement degradation: transmission noise injection and view decimation.

The noise model follows the standard photon-counting chain: expected counts
I0*exp(-y) per ray, Poisson-distributed detection, additive zero-mean
electronic noise, then log-conversion back to line integrals with a 0.5-count
floor so starved rays stay finite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import Sinogram
from .rng import MEASUREMENT_NOISE, substream

__all__ = ["NoiseConfig", "add_ct_noise", "downsample_views", "COUNT_FLOOR"]

COUNT_FLOOR = 0.5


@dataclass(frozen=True)
class NoiseConfig:
    i0: float = 1e6
    sigma_e2: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if not self.i0 > 0:
            raise ValueError("i0 must be positive")
        if self.sigma_e2 < 0:
            raise ValueError("sigma_e2 must be >= 0")


def add_ct_noise(y: Sinogram, cfg: NoiseConfig) -> Sinogram:
    """Simulate counting statistics on a clean log-sinogram.

    Per sample: counts = Poisson(i0*exp(-y)) + Normal(0, sigma_e2); output
    line integral = -ln(max(counts, 0.5)/i0). Bit-reproducible per seed.
    """
    rng = substream(cfg.seed, MEASUREMENT_NOISE)
    lam = cfg.i0 * np.exp(-y.data)
    counts = rng.poisson(lam).astype(np.float64)
    if cfg.sigma_e2 > 0:
        counts += np.sqrt(cfg.sigma_e2) * rng.standard_normal(lam.shape)
    noisy = -np.log(np.maximum(counts, COUNT_FLOOR) / cfg.i0)
    return y.with_data(noisy)


def downsample_views(s: Sinogram, n: int) -> Sinogram:
    """Keep n uniformly spaced views (nearest-uniform selection when n does
    not divide the view count)."""
    if not (1 <= n <= s.n_views):
        raise ValueError(f"need 1 <= n <= {s.n_views}, got {n}")
    if n == s.n_views:
        return s
    idx = (np.arange(n) * s.n_views // n).astype(int)
    return Sinogram(n, s.n_detectors, s.angles[idx], s.data[idx])
