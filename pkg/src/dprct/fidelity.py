"""Data-consistency operators: ordered-subset SART and a plain gradient step.

The OS-SART sweep updates, per view subset S,

    x <- x + lambda * Dcol(S)^-1 * At_S [ Drow(S)^-1 (y_S - A_S x) ]

with Drow = per-ray sums of the system matrix (forward projection of ones)
and Dcol(S) = per-pixel backprojected ones over the subset's views. Entries
whose normalizer underflows receive no update.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGeometry
from .grid import ImageGrid, Sinogram
from .projector import FanBeamGeometry, backproject_array, col_sums, project_array, row_sums

__all__ = [
    "SartConfig",
    "make_subsets",
    "SartSolver",
    "os_sart",
    "gd_fidelity_step",
]

ZERO_GUARD = 1e-12


@dataclass(frozen=True)
class SartConfig:
    n_subsets: int = 10
    relaxation: float = 1.0
    n_passes: int = 1
    nonneg: bool = True

    def __post_init__(self):
        if self.n_subsets < 1:
            raise ValueError("n_subsets must be >= 1")
        if not (0.0 < self.relaxation < 2.0):
            raise ValueError(f"relaxation must be in (0, 2), got {self.relaxation}")
        if self.n_passes < 1:
            raise ValueError("n_passes must be >= 1")


def make_subsets(n_views: int, n_subsets: int) -> list[np.ndarray]:
    """Interleaved view partition: subset k holds views k, k+n_subsets, ...

    Interleaving spreads each subset's views over the full angular range.
    """
    if not (1 <= n_subsets <= n_views):
        raise ValueError(f"need 1 <= n_subsets <= n_views, got {n_subsets} > {n_views}")
    return [np.arange(k, n_views, n_subsets) for k in range(n_subsets)]


class SartSolver:
    """Caches per-subset normalizers for repeated sweeps over one geometry."""

    def __init__(self, g: FanBeamGeometry, cfg: SartConfig | None = None):
        self.g = g
        self.cfg = cfg or SartConfig()
        self.subsets = make_subsets(g.n_views, self.cfg.n_subsets)
        drow = row_sums(g)
        self._row_inv = np.where(drow > ZERO_GUARD, 1.0 / np.maximum(drow, ZERO_GUARD), 0.0)
        self._col_inv = []
        any_support = False
        for idx in self.subsets:
            dcol = col_sums(g, g.view_angles[idx])
            if np.any(dcol > ZERO_GUARD):
                any_support = True
            self._col_inv.append(
                np.where(dcol > ZERO_GUARD, 1.0 / np.maximum(dcol, ZERO_GUARD), 0.0)
            )
        if not any_support:
            raise DegenerateGeometry("no ray touches the image support")

    def sweep(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """One full pass (all subsets in order) on raw arrays."""
        g = self.g
        lam = self.cfg.relaxation
        out = np.array(x, dtype=np.float64)
        for si, idx in enumerate(self.subsets):
            ang = g.view_angles[idx]
            resid = (y[idx] - project_array(out, g, ang)) * self._row_inv[idx]
            out += lam * self._col_inv[si] * backproject_array(resid, g, ang)
            if self.cfg.nonneg:
                np.maximum(out, 0.0, out=out)
        return out

    def run(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        out = x
        for _ in range(self.cfg.n_passes):
            out = self.sweep(out, y)
        return out


def os_sart(x: ImageGrid, y: Sinogram, g: FanBeamGeometry, cfg: SartConfig | None = None) -> ImageGrid:
    """n_passes OS-SART sweeps starting from x."""
    if not g.matches_image(x):
        raise ValueError("image does not match geometry binding")
    if y.n_views != g.n_views or y.n_detectors != g.n_detectors:
        raise ValueError("sinogram does not match geometry")
    solver = SartSolver(g, cfg)
    return x.with_data(solver.run(x.data, y.data))


def gd_fidelity_step(x: ImageGrid, y: Sinogram, g: FanBeamGeometry, step: float) -> ImageGrid:
    """Least-squares gradient step x + step * At(y - Ax)."""
    if not step >= 0:
        raise ValueError(f"step must be >= 0, got {step}")
    if not g.matches_image(x):
        raise ValueError("image does not match geometry binding")
    if y.n_views != g.n_views or y.n_detectors != g.n_detectors:
        raise ValueError("sinogram does not match geometry")
    resid = y.data - project_array(x.data, g)
    return x.with_data(x.data + step * backproject_array(resid, g))
