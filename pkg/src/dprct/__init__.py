"""Fan-beam CT simulation and reconstruction with diffusion-prior
regularized iterative methods."""

from .diffusion import (
    StepSubsequence,
    VarianceSchedule,
    ddim_sigma,
    ddim_step,
    ddpm_step,
    estimate_x0,
    forward_sample,
    make_linear_schedule,
    make_subsequence,
)
from .dpr import (
    DprConfig,
    MomentumState,
    RunTrace,
    nesterov_eta,
    run_dpr_ir_1,
    run_dpr_ir_2,
    run_dpr_ir_3,
    run_dpr_ir_4,
    run_dpr_ir_5,
    run_mcg_gd,
)
from .errors import DegenerateGeometry, FormatError, NumericalFailure, UnsupportedScanRange
from .fbp import fbp_reconstruct
from .fidelity import SartConfig, SartSolver, gd_fidelity_step, make_subsets, os_sart
from .grid import (
    Ellipse,
    EllipsePhantom,
    ImageGrid,
    Sinogram,
    make_shepp_logan,
    rasterize_phantom,
    window_display,
)
from .io import read_image, read_sinogram, write_image, write_pgm, write_sinogram
from .metrics import psnr, rmse, ssim
from .projector import (
    FanBeamGeometry,
    back_project,
    col_sums,
    desk_geometry,
    forward_project,
    geometry_for_image,
    geometry_for_sinogram,
    clinical_geometry,
    row_sums,
)
from .score import (
    AffineModel,
    ConvNetModel,
    EpsilonModel,
    GaussianAnalyticModel,
    load_weights,
    save_weights,
    train_affine,
)
from .simulate import NoiseConfig, add_ct_noise, downsample_views
from .tv import tv_denoise, tv_value

__version__ = "0.1.0"
