"""Image quality metrics: RMSE on range-normalized values, PSNR, and mean
local SSIM with the canonical 11x11 Gaussian window."""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .grid import ImageGrid

__all__ = ["rmse", "psnr", "ssim", "eval_range"]

_WIN = 11
_SIGMA = 1.5
_K1 = 0.01
_K2 = 0.03


def _arr(x) -> np.ndarray:
    return x.data if isinstance(x, ImageGrid) else np.asarray(x, dtype=np.float64)


def eval_range(ref, range_: float | None = None) -> float:
    """Evaluation range: explicit override or max of the reference."""
    if range_ is None:
        range_ = float(np.max(_arr(ref)))
    if not range_ > 0:
        raise ValueError(f"evaluation range must be positive, got {range_}")
    return float(range_)


def rmse(x, ref, range_: float | None = None) -> float:
    """Root mean square error after normalizing both images by the range."""
    xa, ra = _arr(x), _arr(ref)
    if xa.shape != ra.shape:
        raise ValueError(f"shape mismatch {xa.shape} vs {ra.shape}")
    r = eval_range(ref, range_)
    return float(np.sqrt(np.mean(((xa - ra) / r) ** 2)))


def psnr(x, ref, range_: float | None = None) -> float:
    """10*log10(range^2 / MSE); identical images give +inf."""
    xa, ra = _arr(x), _arr(ref)
    if xa.shape != ra.shape:
        raise ValueError(f"shape mismatch {xa.shape} vs {ra.shape}")
    r = eval_range(ref, range_)
    mse = float(np.mean((xa - ra) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(r * r / mse)


def _gaussian_window() -> np.ndarray:
    half = (_WIN - 1) / 2.0
    g = np.exp(-(np.arange(_WIN) - half) ** 2 / (2.0 * _SIGMA**2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(x, ref, range_: float | None = None) -> float:
    """Mean structural similarity over all fully interior 11x11 windows."""
    xa, ra = _arr(x), _arr(ref)
    if xa.shape != ra.shape:
        raise ValueError(f"shape mismatch {xa.shape} vs {ra.shape}")
    if min(xa.shape) < _WIN:
        raise ValueError(f"image must be at least {_WIN}x{_WIN}, got {xa.shape}")
    r = eval_range(ref, range_)
    c1 = (_K1 * r) ** 2
    c2 = (_K2 * r) ** 2
    w = _gaussian_window()

    def wmean(img):
        v = sliding_window_view(img, (_WIN, _WIN))
        return np.tensordot(v, w, axes=([2, 3], [0, 1]))

    mx = wmean(xa)
    my = wmean(ra)
    mxx = wmean(xa * xa)
    myy = wmean(ra * ra)
    mxy = wmean(xa * ra)
    vx = mxx - mx * mx
    vy = myy - my * my
    cxy = mxy - mx * my
    s = ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
    return float(np.mean(s))
