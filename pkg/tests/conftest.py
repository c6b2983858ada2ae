import numpy as np
import pytest

from dprct.grid import ImageGrid, make_shepp_logan
from dprct.projector import FanBeamGeometry, desk_geometry, project_array, uniform_angles


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    """Compile the projection kernels once so timing-sensitive tests are not
    skewed by first-call JIT cost."""
    g = desk_geometry(8, 4)
    s = project_array(np.ones((8, 8)), g)
    from dprct.projector import backproject_array

    backproject_array(s, g)


@pytest.fixture(scope="session")
def geo32():
    return desk_geometry(32, 24)


@pytest.fixture(scope="session")
def geo8():
    return desk_geometry(8, 6)


def single_ray_geometry(px=1.0):
    """1x1 image with one view and one detector; the central ray hits the
    pixel center head-on, so the system matrix is the scalar px."""
    return FanBeamGeometry(
        dso=10.0,
        dsd=20.0,
        n_detectors=1,
        det_angular_pitch=0.2,
        view_angles=np.array([0.0]),
        width=1,
        height=1,
        pixel_size=px,
    )


@pytest.fixture(scope="session")
def shepp128():
    g = desk_geometry(128, 360)
    return make_shepp_logan(128, g.pixel_size, 1.0)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)


def disk_image(n, px, radius, value):
    half = (n - 1) / 2.0
    yy, xx = np.mgrid[0:n, 0:n]
    x = (xx - half) * px
    y = (half - yy) * px
    return ImageGrid(n, n, px, np.where(x * x + y * y <= radius * radius, value, 0.0))
