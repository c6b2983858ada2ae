"""Image and sinogram containers plus analytic ellipse phantoms.

Coordinate convention used throughout the toolkit: the image is centered on
the isocenter, column index j maps to x = (j - (width-1)/2) * pixel_size and
row index i maps to y = ((height-1)/2 - i) * pixel_size (x right, y up, row 0
at the top). Attenuation values are in 1/mm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ImageGrid",
    "Sinogram",
    "Ellipse",
    "EllipsePhantom",
    "SHEPP_LOGAN_ELLIPSES",
    "make_shepp_logan",
    "rasterize_phantom",
    "window_display",
    "MU_WATER",
]

# Water attenuation used for HU conversion, 1/mm. Configurable per call; this
# default corresponds to a typical diagnostic beam quality.
MU_WATER = 0.0192


def _as_readonly(a: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(a, dtype=np.float64)
    if out is a:
        out = out.copy()
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class ImageGrid:
    """2D attenuation image with square pixels of physical size ``pixel_size`` mm.

    ``data`` has shape (height, width) and is read-only after construction;
    all operations return new instances.
    """

    width: int
    height: int
    pixel_size: float
    data: np.ndarray

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"bad image dimensions {self.width}x{self.height}")
        if not self.pixel_size > 0:
            raise ValueError(f"pixel_size must be positive, got {self.pixel_size}")
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.size != self.width * self.height:
            raise ValueError(
                f"data length {arr.size} does not match {self.width}x{self.height}"
            )
        arr = arr.reshape(self.height, self.width)
        if not np.all(np.isfinite(arr)):
            raise ValueError("image data contains non-finite values")
        object.__setattr__(self, "data", _as_readonly(arr))

    @classmethod
    def zeros(cls, n: int, pixel_size: float = 1.0) -> "ImageGrid":
        return cls(n, n, pixel_size, np.zeros((n, n)))

    def with_data(self, data: np.ndarray) -> "ImageGrid":
        """Same grid, new values."""
        return ImageGrid(self.width, self.height, self.pixel_size, data)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def xy_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Physical (x, y) coordinates of pixel centers, each shaped (height, width)."""
        j = np.arange(self.width)
        i = np.arange(self.height)
        x = (j - (self.width - 1) / 2.0) * self.pixel_size
        y = ((self.height - 1) / 2.0 - i) * self.pixel_size
        return np.broadcast_to(x, (self.height, self.width)), np.broadcast_to(
            y[:, None], (self.height, self.width)
        )


@dataclass(frozen=True)
class Sinogram:
    """Fan-beam line integrals, one row per view.

    ``angles`` are the per-view source angles in radians, strictly increasing
    within [0, 2*pi). ``data`` has shape (n_views, n_detectors); values are
    dimensionless path integrals of attenuation.
    """

    n_views: int
    n_detectors: int
    angles: np.ndarray
    data: np.ndarray

    def __post_init__(self):
        if self.n_views < 1 or self.n_detectors < 1:
            raise ValueError("sinogram dimensions must be positive")
        ang = np.asarray(self.angles, dtype=np.float64).reshape(-1)
        if ang.size != self.n_views:
            raise ValueError(f"expected {self.n_views} angles, got {ang.size}")
        if np.any(ang < 0.0) or np.any(ang >= 2.0 * math.pi):
            raise ValueError("view angles must lie in [0, 2*pi)")
        if self.n_views > 1 and np.any(np.diff(ang) <= 0):
            raise ValueError("view angles must be strictly increasing")
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.size != self.n_views * self.n_detectors:
            raise ValueError(
                f"data length {arr.size} does not match "
                f"{self.n_views}x{self.n_detectors}"
            )
        arr = arr.reshape(self.n_views, self.n_detectors)
        if not np.all(np.isfinite(arr)):
            raise ValueError("sinogram data contains non-finite values")
        object.__setattr__(self, "angles", _as_readonly(ang))
        object.__setattr__(self, "data", _as_readonly(arr))

    def with_data(self, data: np.ndarray) -> "Sinogram":
        return Sinogram(self.n_views, self.n_detectors, self.angles, data)


@dataclass(frozen=True)
class Ellipse:
    """One additive ellipse: center and semi-axes in mm, rotation in radians CCW."""

    cx: float
    cy: float
    rx: float
    ry: float
    angle: float
    value: float

    def __post_init__(self):
        if not (self.rx > 0 and self.ry > 0):
            raise ValueError(f"semi-axes must be positive, got ({self.rx}, {self.ry})")

    def contains(self, x, y):
        """Closed-interior membership test; accepts arrays."""
        dx = np.asarray(x) - self.cx
        dy = np.asarray(y) - self.cy
        c, s = math.cos(self.angle), math.sin(self.angle)
        u = dx * c + dy * s
        v = -dx * s + dy * c
        return (u / self.rx) ** 2 + (v / self.ry) ** 2 <= 1.0


@dataclass(frozen=True)
class EllipsePhantom:
    ellipses: tuple[Ellipse, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "ellipses", tuple(self.ellipses))

    def value_at(self, x: float, y: float) -> float:
        """Sum of intensities of ellipses containing the point."""
        return float(sum(e.value for e in self.ellipses if e.contains(x, y)))


# Classic head phantom ellipse table (Shepp & Logan, 1974). Columns: center x,
# center y, x semi-axis, y semi-axis (all as fractions of the image half-width),
# rotation in degrees CCW, additive intensity. The small interior features carry
# the original +-0.01/-0.02 contrasts.
SHEPP_LOGAN_ELLIPSES: tuple[tuple[float, float, float, float, float, float], ...] = (
    (0.0, 0.0, 0.69, 0.92, 0.0, 2.0),
    (0.0, -0.0184, 0.6624, 0.874, 0.0, -0.98),
    (0.22, 0.0, 0.11, 0.31, -18.0, -0.02),
    (-0.22, 0.0, 0.16, 0.41, 18.0, -0.02),
    (0.0, 0.35, 0.21, 0.25, 0.0, 0.01),
    (0.0, 0.1, 0.046, 0.046, 0.0, 0.01),
    (0.0, -0.1, 0.046, 0.046, 0.0, 0.01),
    (-0.08, -0.605, 0.046, 0.023, 0.0, 0.01),
    (0.0, -0.605, 0.023, 0.023, 0.0, 0.01),
    (0.06, -0.605, 0.023, 0.046, 0.0, 0.01),
)


def shepp_logan_phantom(n: int, pixel_size: float = 1.0, scale: float = 1.0) -> EllipsePhantom:
    """Shepp-Logan ellipse set scaled to an n x n grid of the given pixel size.

    ``scale`` multiplies all intensities; pass e.g. 0.0192 to interpret the
    classic unit-valued table as water-like attenuation in 1/mm.
    """
    half = n * pixel_size / 2.0
    ells = [
        Ellipse(cx * half, cy * half, rx * half, ry * half, math.radians(deg), scale * val)
        for cx, cy, rx, ry, deg, val in SHEPP_LOGAN_ELLIPSES
    ]
    return EllipsePhantom(tuple(ells))


def rasterize_phantom(phantom: EllipsePhantom, n: int, pixel_size: float = 1.0) -> ImageGrid:
    """Pixel-center rasterization: each pixel sums the intensities of the
    ellipses whose closed interior contains its center."""
    if n < 2:
        raise ValueError(f"grid size must be >= 2, got {n}")
    img = ImageGrid.zeros(n, pixel_size)
    x, y = img.xy_centers()
    out = np.zeros((n, n))
    for e in phantom.ellipses:
        out += np.where(e.contains(x, y), e.value, 0.0)
    return img.with_data(out)


def make_shepp_logan(n: int, pixel_size: float = 1.0, scale: float = 1.0) -> ImageGrid:
    """Standard 10-ellipse Shepp-Logan phantom on an n x n grid."""
    if n < 2:
        raise ValueError(f"grid size must be >= 2, got {n}")
    return rasterize_phantom(shepp_logan_phantom(n, pixel_size, scale), n, pixel_size)


def window_display(
    img: ImageGrid, lo: float, hi: float, mu_water: float = MU_WATER
) -> np.ndarray:
    """8-bit display windowing in Hounsfield units.

    Attenuation is converted as HU = 1000*(mu - mu_water)/mu_water, then
    mapped linearly from [lo, hi] to [0, 255] with clamping; fractional levels
    round down, so the exact midpoint maps to 127.
    """
    if not hi > lo:
        raise ValueError(f"window [{lo}, {hi}] is empty")
    hu = 1000.0 * (img.data - mu_water) / mu_water
    level = np.floor(255.0 * (hu - lo) / (hi - lo))
    return np.clip(level, 0.0, 255.0).astype(np.uint8)
