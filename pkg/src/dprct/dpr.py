"""Diffusion-prior reconstruction drivers.

Six entry points share two inner loops:

* run_dpr_ir_1 / run_mcg_gd — full-schedule ancestral loop. Each timestep
  first enforces data consistency (ordered-subset SART, or a plain gradient
  step for the MCG baseline), then takes one reverse diffusion step.
* run_dpr_ir_2..5 — subsequence loop with the implicit (DDIM-style) step.
  Variants differ in where Nesterov momentum enters: none (II), on the
  recombined iterate with consistency applied to the momentum point (III),
  on the clean-image estimate (IV), or on a TV-smoothed clean-image
  difference (V).

Randomness contract: a run consumes its seed through named substreams — the
starting noise image first ("init-noise", one draw), then one step-noise draw
per iteration that actually adds noise ("step-noise"; a draw happens only
when the step's noise scale is positive and the step does not land on the
final image). This fixed order makes trajectories reproducible and lets
different variants share noise for comparison runs.
"""

from __future__ import annotations

import math
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np

from .diffusion import (
    StepSubsequence,
    VarianceSchedule,
    ddim_sigma,
    estimate_x0,
    make_subsequence,
)
from .errors import NumericalFailure
from .fidelity import SartConfig, SartSolver
from .grid import ImageGrid, Sinogram
from .projector import FanBeamGeometry, backproject_array, project_array
from .rng import INIT_NOISE, STEP_NOISE, substream
from .score import EpsilonModel
from .tv import tv_denoise_array

__all__ = [
    "DprConfig",
    "MomentumState",
    "RunTrace",
    "nesterov_eta",
    "run_dpr_ir_1",
    "run_dpr_ir_2",
    "run_dpr_ir_3",
    "run_dpr_ir_4",
    "run_dpr_ir_5",
    "run_mcg_gd",
    "VARIANTS",
]


def nesterov_eta(eta: float) -> float:
    """Next momentum scalar: (1 + sqrt(1 + 4*eta^2))/2."""
    if eta < 1.0:
        raise ValueError(f"eta must be >= 1, got {eta}")
    return (1.0 + math.sqrt(1.0 + 4.0 * eta * eta)) / 2.0


@dataclass
class MomentumState:
    """Nesterov bookkeeping: the growing scalar and the previous anchor image
    (recombined iterate for variant III, clean-image estimate for IV/V)."""

    eta: float = 1.0
    anchor: np.ndarray | None = None

    @property
    def initialized(self) -> bool:
        return self.anchor is not None

    def advance(self) -> float:
        """Returns the momentum coefficient (eta-1)/eta' and steps eta."""
        eta_next = nesterov_eta(self.eta)
        coef = (self.eta - 1.0) / eta_next
        self.eta = eta_next
        return coef


@dataclass(frozen=True)
class DprConfig:
    seed: int = 0
    steps: int | None = None  # subsequence length S for variants II-V
    eta: float = 0.0  # implicit-step noise interpolation for II-V
    sart: SartConfig = field(default_factory=SartConfig)
    tv_weight_rel: float = 0.1
    tv_iters: int = 50
    gd_step: float = 0.0  # gradient-step size for the MCG baseline

    def __post_init__(self):
        if self.eta < 0:
            raise ValueError("eta must be >= 0")
        if self.steps is not None and self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.tv_weight_rel < 0 or self.tv_iters < 1:
            raise ValueError("bad TV settings")
        if self.gd_step < 0:
            raise ValueError("gd_step must be >= 0")


@dataclass
class RunTrace:
    """Per-iteration log filled in by the drivers when passed in."""

    record_residuals: bool = True
    record_states: bool = False
    timesteps: list[int] = field(default_factory=list)
    residuals: list[float] = field(default_factory=list)
    states: list[np.ndarray] = field(default_factory=list)

    def log(self, t: int, x: np.ndarray, y: np.ndarray, g: FanBeamGeometry):
        self.timesteps.append(t)
        if self.record_residuals:
            self.residuals.append(float(np.linalg.norm(project_array(x, g) - y)))
        if self.record_states:
            self.states.append(x.copy())


Conditioner = Callable[[np.ndarray], np.ndarray]


def _check_shapes(y: Sinogram, g: FanBeamGeometry):
    if y.n_views != g.n_views or y.n_detectors != g.n_detectors:
        raise ValueError(
            f"sinogram {y.n_views}x{y.n_detectors} does not match geometry "
            f"{g.n_views}x{g.n_detectors}"
        )


def _check_finite(x: np.ndarray, t: int):
    if not np.all(np.isfinite(x)):
        raise NumericalFailure(f"non-finite iterate at timestep {t}", timestep=t)


def _sart_conditioner(y: Sinogram, g: FanBeamGeometry, cfg: SartConfig) -> Conditioner:
    solver = SartSolver(g, cfg)
    ydata = y.data
    return lambda x: solver.run(x, ydata)


def _gd_conditioner(y: Sinogram, g: FanBeamGeometry, step: float) -> Conditioner:
    ydata = y.data
    if step == 0.0:
        return lambda x: x
    return lambda x: x + step * backproject_array(ydata - project_array(x, g), g)


def _ddpm_loop(
    y: Sinogram,
    g: FanBeamGeometry,
    model: EpsilonModel,
    sched: VarianceSchedule,
    cfg: DprConfig,
    conditioner: Conditioner,
    trace: RunTrace | None,
) -> ImageGrid:
    shape = (g.height, g.width)
    x = substream(cfg.seed, INIT_NOISE).standard_normal(shape)
    zrng = substream(cfg.seed, STEP_NOISE)
    for t in range(sched.T, 0, -1):
        x_tilde = conditioner(x)
        eps = model.predict(x_tilde, t)
        sigma = sched.sigma(t)
        mean = (x_tilde - sched.beta(t) / math.sqrt(1.0 - sched.alpha_bar(t)) * eps) / math.sqrt(
            sched.alpha(t)
        )
        if t > 1 and sigma > 0.0:
            x = mean + sigma * zrng.standard_normal(shape)
        else:
            x = mean
        _check_finite(x, t)
        if trace is not None:
            trace.log(t, x, y.data, g)
    return ImageGrid(g.width, g.height, g.pixel_size, x)


def run_dpr_ir_1(
    y: Sinogram,
    g: FanBeamGeometry,
    model: EpsilonModel,
    sched: VarianceSchedule,
    cfg: DprConfig | None = None,
    conditioner: Conditioner | None = None,
    trace: RunTrace | None = None,
) -> ImageGrid:
    """Full-schedule ancestral sampling with an ordered-subset SART
    consistency pass before every reverse step."""
    cfg = cfg or DprConfig()
    _check_shapes(y, g)
    if conditioner is None:
        conditioner = _sart_conditioner(y, g, cfg.sart)
    return _ddpm_loop(y, g, model, sched, cfg, conditioner, trace)


def run_mcg_gd(
    y: Sinogram,
    g: FanBeamGeometry,
    model: EpsilonModel,
    sched: VarianceSchedule,
    cfg: DprConfig | None = None,
    trace: RunTrace | None = None,
) -> ImageGrid:
    """Baseline: the same ancestral loop but with a single least-squares
    gradient step as the consistency operation (step size cfg.gd_step;
    zero gives unconditional sampling)."""
    cfg = cfg or DprConfig()
    _check_shapes(y, g)
    return _ddpm_loop(y, g, model, sched, cfg, _gd_conditioner(y, g, cfg.gd_step), trace)


def _ddim_loop(
    y: Sinogram,
    g: FanBeamGeometry,
    model: EpsilonModel,
    sched: VarianceSchedule,
    cfg: DprConfig,
    momentum: str,  # "none" | "xbar" | "x0" | "x0-tv"
    conditioner: Conditioner | None,
    trace: RunTrace | None,
) -> ImageGrid:
    _check_shapes(y, g)
    S = cfg.steps if cfg.steps is not None else sched.T
    taus: StepSubsequence = make_subsequence(sched.T, S)
    if conditioner is None:
        conditioner = _sart_conditioner(y, g, cfg.sart)
    shape = (g.height, g.width)
    x = substream(cfg.seed, INIT_NOISE).standard_normal(shape)
    zrng = substream(cfg.seed, STEP_NOISE)
    r = x  # momentum point, only consumed by the "xbar" flavour
    mom = MomentumState()
    for j in range(S, 0, -1):
        t = taus[j - 1]
        t_prev = taus[j - 2] if j >= 2 else 0
        x_tilde = conditioner(r if momentum == "xbar" else x)
        eps = model.predict(x_tilde, t)
        x0_hat = estimate_x0(x_tilde, eps, t, sched)
        sigma = ddim_sigma(sched, t, t_prev, cfg.eta)
        a_prev = sched.alpha_bar(t_prev)
        dir_coef = math.sqrt(max(1.0 - a_prev - sigma * sigma, 0.0))
        if momentum == "xbar":
            xbar = math.sqrt(a_prev) * x0_hat + dir_coef * eps
            coef = mom.advance()
            r = xbar if not mom.initialized else xbar + coef * (xbar - mom.anchor)
            mom.anchor = xbar
        elif momentum == "none":
            xbar = math.sqrt(a_prev) * x0_hat + dir_coef * eps
        else:  # "x0" | "x0-tv": momentum shifts the clean estimate first
            coef = mom.advance()
            if not mom.initialized:
                combined = x0_hat
            else:
                diff = x0_hat - mom.anchor
                if momentum == "x0-tv":
                    w = cfg.tv_weight_rel * float(np.std(diff))
                    diff = tv_denoise_array(diff, w, cfg.tv_iters)
                combined = x0_hat + coef * diff
            mom.anchor = x0_hat
            xbar = math.sqrt(a_prev) * combined + dir_coef * eps
        if sigma > 0.0 and j > 1:
            x = xbar + sigma * zrng.standard_normal(shape)
        else:
            x = xbar
        _check_finite(x, t)
        if trace is not None:
            trace.log(t, x, y.data, g)
    return ImageGrid(g.width, g.height, g.pixel_size, x)


def run_dpr_ir_2(
    y: Sinogram,
    g: FanBeamGeometry,
    model: EpsilonModel,
    sched: VarianceSchedule,
    S: int | None = None,
    cfg: DprConfig | None = None,
    conditioner: Conditioner | None = None,
    trace: RunTrace | None = None,
) -> ImageGrid:
    """Accelerated variant: implicit steps over an S-length timestep
    subsequence, no momentum."""
    cfg = _with_steps(cfg, S)
    return _ddim_loop(y, g, model, sched, cfg, "none", conditioner, trace)


def run_dpr_ir_3(
    y: Sinogram,
    g: FanBeamGeometry,
    model: EpsilonModel,
    sched: VarianceSchedule,
    S: int | None = None,
    cfg: DprConfig | None = None,
    conditioner: Conditioner | None = None,
    trace: RunTrace | None = None,
) -> ImageGrid:
    """Momentum on the recombined iterate; the consistency pass runs on the
    momentum point rather than the noised state."""
    cfg = _with_steps(cfg, S)
    return _ddim_loop(y, g, model, sched, cfg, "xbar", conditioner, trace)


def run_dpr_ir_4(
    y: Sinogram,
    g: FanBeamGeometry,
    model: EpsilonModel,
    sched: VarianceSchedule,
    S: int | None = None,
    cfg: DprConfig | None = None,
    conditioner: Conditioner | None = None,
    trace: RunTrace | None = None,
) -> ImageGrid:
    """Momentum applied to the clean-image estimate before recombination."""
    cfg = _with_steps(cfg, S)
    return _ddim_loop(y, g, model, sched, cfg, "x0", conditioner, trace)


def run_dpr_ir_5(
    y: Sinogram,
    g: FanBeamGeometry,
    model: EpsilonModel,
    sched: VarianceSchedule,
    S: int | None = None,
    cfg: DprConfig | None = None,
    conditioner: Conditioner | None = None,
    trace: RunTrace | None = None,
) -> ImageGrid:
    """As variant IV but the clean-estimate difference is TV-smoothed before
    entering the momentum combination."""
    cfg = _with_steps(cfg, S)
    return _ddim_loop(y, g, model, sched, cfg, "x0-tv", conditioner, trace)


def _with_steps(cfg: DprConfig | None, S: int | None) -> DprConfig:
    cfg = cfg or DprConfig()
    if S is not None:
        cfg = DprConfig(
            seed=cfg.seed,
            steps=S,
            eta=cfg.eta,
            sart=cfg.sart,
            tv_weight_rel=cfg.tv_weight_rel,
            tv_iters=cfg.tv_iters,
            gd_step=cfg.gd_step,
        )
    return cfg


VARIANTS = {
    "dpr1": run_dpr_ir_1,
    "dpr2": run_dpr_ir_2,
    "dpr3": run_dpr_ir_3,
    "dpr4": run_dpr_ir_4,
    "dpr5": run_dpr_ir_5,
    "mcg-gd": run_mcg_gd,
}
