"""Fan-beam system model: geometry description, forward projector and its
exact adjoint.

The projector uses Joseph-style interpolated sampling: each ray is traversed
along its dominant axis, reading (forward) or scattering (adjoint) linearly
interpolated pixel values with a per-sample path weight of
pixel_size / |dominant direction component|. Forward and adjoint share the
identical weight computation, so back_project is the literal matrix transpose
of forward_project.

Geometry: the source orbits the isocenter at radius ``dso``; view angle beta
places it at (dso*cos(beta), dso*sin(beta)). Detector elements lie on an arc
centered on the source; element k sits at signed fan angle
gamma_k = (k - (n_detectors-1)/2) * det_angular_pitch from the central ray,
and its ray direction is the central direction rotated CCW by gamma_k.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from numba import njit

from .grid import ImageGrid, Sinogram

__all__ = [
    "FanBeamGeometry",
    "CoverageWarning",
    "uniform_angles",
    "clinical_geometry",
    "desk_geometry",
    "geometry_for_image",
    "geometry_for_sinogram",
    "forward_project",
    "back_project",
    "row_sums",
    "col_sums",
    "project_array",
    "backproject_array",
]


class CoverageWarning(UserWarning):
    """Fan does not cover the full image support."""


def uniform_angles(n_views: int) -> np.ndarray:
    """n_views source angles uniformly covering [0, 2*pi)."""
    if n_views < 1:
        raise ValueError("n_views must be >= 1")
    return 2.0 * math.pi * np.arange(n_views) / n_views


@dataclass(frozen=True)
class FanBeamGeometry:
    """Scanner description binding a detector arc and view set to an image grid.

    Distances in mm; ``det_angular_pitch`` in radians between adjacent
    detector-element centers on the arc.
    """

    dso: float
    dsd: float
    n_detectors: int
    det_angular_pitch: float
    view_angles: np.ndarray
    width: int
    height: int
    pixel_size: float

    def __post_init__(self):
        if not (self.dsd > self.dso > 0):
            raise ValueError(f"need dsd > dso > 0, got dsd={self.dsd} dso={self.dso}")
        if self.n_detectors < 1:
            raise ValueError("n_detectors must be >= 1")
        if not self.det_angular_pitch > 0:
            raise ValueError("det_angular_pitch must be positive")
        if self.width < 1 or self.height < 1 or not self.pixel_size > 0:
            raise ValueError("bad image binding")
        ang = np.ascontiguousarray(np.asarray(self.view_angles, dtype=np.float64).reshape(-1))
        if ang.size < 1:
            raise ValueError("need at least one view angle")
        if np.any(ang < 0.0) or np.any(ang >= 2.0 * math.pi):
            raise ValueError("view angles must lie in [0, 2*pi)")
        if ang.size > 1 and np.any(np.diff(ang) <= 0):
            raise ValueError("view angles must be strictly increasing")
        ang.setflags(write=False)
        object.__setattr__(self, "view_angles", ang)
        half_fan = 0.5 * self.n_detectors * self.det_angular_pitch
        covered = self.dso * math.sin(min(half_fan, 0.5 * math.pi))
        half_diag = 0.5 * math.hypot(self.width, self.height) * self.pixel_size
        if covered < half_diag:
            warnings.warn(
                f"fan covers radius {covered:.1f} mm but image corners reach "
                f"{half_diag:.1f} mm",
                CoverageWarning,
                stacklevel=2,
            )

    @property
    def n_views(self) -> int:
        return int(self.view_angles.size)

    def with_views(self, view_angles: np.ndarray) -> "FanBeamGeometry":
        return FanBeamGeometry(
            self.dso,
            self.dsd,
            self.n_detectors,
            self.det_angular_pitch,
            view_angles,
            self.width,
            self.height,
            self.pixel_size,
        )

    def matches_image(self, img: ImageGrid) -> bool:
        return (
            img.width == self.width
            and img.height == self.height
            and abs(img.pixel_size - self.pixel_size) <= 1e-9 * self.pixel_size
        )


# Reference scanner: 595 mm source-to-isocenter, 1085.6 mm source-to-detector,
# 736 arc elements of 1.2858 mm, 512x512 image at 0.6641 mm pixels.
_DSO = 595.0
_DSD = 1085.6
_NDET_FULL = 736
_ELEM_MM = 1.2858
_N_FULL = 512
_PX_FULL = 0.6641


def clinical_geometry(n_views: int = 1024) -> FanBeamGeometry:
    """Full-size scanner description (512x512 image, 736 detectors)."""
    return FanBeamGeometry(
        _DSO,
        _DSD,
        _NDET_FULL,
        _ELEM_MM / _DSD,
        uniform_angles(n_views),
        _N_FULL,
        _N_FULL,
        _PX_FULL,
    )


_FAN_TOTAL = _NDET_FULL * _ELEM_MM / _DSD  # full fan angle, rad


def desk_geometry(n: int = 128, n_views: int = 360) -> FanBeamGeometry:
    """Desk-scale scanner: pixel and detector counts shrunk by 512/n while the
    physical field of view, fan angle, and source distances stay fixed."""
    if n < 2:
        raise ValueError("image size must be >= 2")
    s = _N_FULL / n
    n_det = max(1, round(_NDET_FULL / s))
    return FanBeamGeometry(
        _DSO,
        _DSD,
        n_det,
        _FAN_TOTAL / n_det,
        uniform_angles(n_views),
        n,
        n,
        _PX_FULL * s,
    )


def geometry_for_image(img: ImageGrid, n_views: int) -> FanBeamGeometry:
    """Scanner bound to an existing image: detector count scaled with the
    image resolution, fan angle and distances fixed."""
    n_det = max(1, round(_NDET_FULL * img.width / _N_FULL))
    return FanBeamGeometry(
        _DSO,
        _DSD,
        n_det,
        _FAN_TOTAL / n_det,
        uniform_angles(n_views),
        img.width,
        img.height,
        img.pixel_size,
    )


def geometry_for_sinogram(s: Sinogram, n: int | None = None) -> FanBeamGeometry:
    """Scanner matching an existing sinogram's detector count and angles;
    the image size defaults to the resolution the detector count implies."""
    if n is None:
        n = max(2, round(_N_FULL * s.n_detectors / _NDET_FULL))
    return FanBeamGeometry(
        _DSO,
        _DSD,
        s.n_detectors,
        _FAN_TOTAL / s.n_detectors,
        s.angles,
        n,
        n,
        _PX_FULL * _N_FULL / n,
    )


@njit(cache=True)
def _fp_kernel(img, nx, ny, px, dso, n_det, pitch, angles, out):  # pragma: no cover
    for v in range(angles.shape[0]):
        beta = angles[v]
        sx = dso * math.cos(beta)
        sy = dso * math.sin(beta)
        for k in range(n_det):
            phi = beta + (k - (n_det - 1) / 2.0) * pitch
            ux = -math.cos(phi)
            uy = -math.sin(phi)
            acc = 0.0
            if abs(ux) >= abs(uy):
                w = px / abs(ux)
                for j in range(nx):
                    xj = (j - (nx - 1) / 2.0) * px
                    yt = sy + (xj - sx) / ux * uy
                    fi = (ny - 1) / 2.0 - yt / px
                    i0 = int(math.floor(fi))
                    f = fi - i0
                    if 0 <= i0 < ny:
                        acc += (1.0 - f) * img[i0, j]
                    if 0 <= i0 + 1 < ny:
                        acc += f * img[i0 + 1, j]
            else:
                w = px / abs(uy)
                for i in range(ny):
                    yi = ((ny - 1) / 2.0 - i) * px
                    xt = sx + (yi - sy) / uy * ux
                    fj = xt / px + (nx - 1) / 2.0
                    j0 = int(math.floor(fj))
                    f = fj - j0
                    if 0 <= j0 < nx:
                        acc += (1.0 - f) * img[i, j0]
                    if 0 <= j0 + 1 < nx:
                        acc += f * img[i, j0 + 1]
            out[v, k] = acc * w


@njit(cache=True)
def _bp_kernel(sino, nx, ny, px, dso, n_det, pitch, angles, out):  # pragma: no cover
    for v in range(angles.shape[0]):
        beta = angles[v]
        sx = dso * math.cos(beta)
        sy = dso * math.sin(beta)
        for k in range(n_det):
            phi = beta + (k - (n_det - 1) / 2.0) * pitch
            ux = -math.cos(phi)
            uy = -math.sin(phi)
            val = sino[v, k]
            if abs(ux) >= abs(uy):
                c = val * px / abs(ux)
                for j in range(nx):
                    xj = (j - (nx - 1) / 2.0) * px
                    yt = sy + (xj - sx) / ux * uy
                    fi = (ny - 1) / 2.0 - yt / px
                    i0 = int(math.floor(fi))
                    f = fi - i0
                    if 0 <= i0 < ny:
                        out[i0, j] += (1.0 - f) * c
                    if 0 <= i0 + 1 < ny:
                        out[i0 + 1, j] += f * c
            else:
                c = val * px / abs(uy)
                for i in range(ny):
                    yi = ((ny - 1) / 2.0 - i) * px
                    xt = sx + (yi - sy) / uy * ux
                    fj = xt / px + (nx - 1) / 2.0
                    j0 = int(math.floor(fj))
                    f = fj - j0
                    if 0 <= j0 < nx:
                        out[i, j0] += (1.0 - f) * c
                    if 0 <= j0 + 1 < nx:
                        out[i, j0 + 1] += f * c


def project_array(data: np.ndarray, g: FanBeamGeometry, angles: np.ndarray | None = None) -> np.ndarray:
    """Forward projection on raw arrays; ``angles`` defaults to g.view_angles
    but may be any subset (used by ordered-subset solvers)."""
    if angles is None:
        angles = g.view_angles
    a = np.ascontiguousarray(angles, dtype=np.float64).reshape(-1)
    d = np.ascontiguousarray(data, dtype=np.float64)
    if d.shape != (g.height, g.width):
        raise ValueError(f"image shape {d.shape} does not match geometry {(g.height, g.width)}")
    out = np.zeros((a.size, g.n_detectors))
    _fp_kernel(d, g.width, g.height, g.pixel_size, g.dso, g.n_detectors,
               g.det_angular_pitch, a, out)
    return out


def backproject_array(sdata: np.ndarray, g: FanBeamGeometry, angles: np.ndarray | None = None) -> np.ndarray:
    """Adjoint projection on raw arrays (transposed scatter of project_array)."""
    if angles is None:
        angles = g.view_angles
    a = np.ascontiguousarray(angles, dtype=np.float64).reshape(-1)
    s = np.ascontiguousarray(sdata, dtype=np.float64)
    if s.shape != (a.size, g.n_detectors):
        raise ValueError(f"sinogram shape {s.shape} does not match {(a.size, g.n_detectors)}")
    out = np.zeros((g.height, g.width))
    _bp_kernel(s, g.width, g.height, g.pixel_size, g.dso, g.n_detectors,
               g.det_angular_pitch, a, out)
    return out


def forward_project(img: ImageGrid, g: FanBeamGeometry) -> Sinogram:
    """Line integrals of ``img`` along every (view, detector) ray, dimensionless."""
    if not g.matches_image(img):
        raise ValueError(
            f"image {img.width}x{img.height}@{img.pixel_size} does not match "
            f"geometry binding {g.width}x{g.height}@{g.pixel_size}"
        )
    return Sinogram(g.n_views, g.n_detectors, g.view_angles, project_array(img.data, g))


def back_project(s: Sinogram, g: FanBeamGeometry) -> ImageGrid:
    """Exact adjoint of forward_project."""
    if s.n_views != g.n_views or s.n_detectors != g.n_detectors:
        raise ValueError(
            f"sinogram {s.n_views}x{s.n_detectors} does not match geometry "
            f"{g.n_views}x{g.n_detectors}"
        )
    data = backproject_array(s.data, g)
    return ImageGrid(g.width, g.height, g.pixel_size, data)


def row_sums(g: FanBeamGeometry, angles: np.ndarray | None = None) -> np.ndarray:
    """Per-ray total weight: forward projection of the all-ones image."""
    return project_array(np.ones((g.height, g.width)), g, angles)


def col_sums(g: FanBeamGeometry, angles: np.ndarray | None = None) -> np.ndarray:
    """Per-pixel total weight: adjoint projection of the all-ones sinogram."""
    n = g.n_views if angles is None else np.asarray(angles).size
    return backproject_array(np.ones((n, g.n_detectors)), g, angles)
