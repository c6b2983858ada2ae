"""Noise-prediction models: the prior side of the reconstruction algorithms.

Three interchangeable model families behind one interface:

* GaussianAnalyticModel — exact noise posterior for a per-pixel Gaussian
  prior; the oracle used to validate sampler behaviour.
* AffineModel — per-time-bin, per-pixel linear predictor trained in closed
  form on synthetically noised images from a dataset (the standard training
  loop's data generation, with the model class shrunk until the minimizer is
  a 2x2 linear solve).
* ConvNetModel — small conv/ReLU stack loaded from a weight file, for
  externally trained denoisers.
"""

from __future__ import annotations

import abc
import math
import struct
from collections.abc import Iterator, Sequence

import numpy as np

from .diffusion import VarianceSchedule, _rewrap, _unwrap
from .errors import FormatError
from .grid import ImageGrid
from .io import open_input, open_output
from .rng import substream

__all__ = [
    "EpsilonModel",
    "GaussianAnalyticModel",
    "gaussian_predict",
    "AffineModel",
    "ConvNetModel",
    "iter_training_pairs",
    "train_affine",
    "save_weights",
    "load_weights",
    "NET_MAGIC",
    "AFFINE_MAGIC",
]

NET_MAGIC = b"DPRNET01"
AFFINE_MAGIC = b"DPRAFF01"


class EpsilonModel(abc.ABC):
    """Predicts the noise component of a noised image at timestep t."""

    @abc.abstractmethod
    def predict(self, x_t, t: int):
        """Return the noise estimate, same shape and kind as x_t."""


class GaussianAnalyticModel(EpsilonModel):
    """Exact predictor when clean images are per-pixel Gaussian:
    x0 ~ Normal(mean, var) independently per pixel.

    Then x_t is Normal(sqrt(abar)*mean, abar*var + 1 - abar) and the optimal
    noise estimate is sqrt(1-abar)*(x_t - sqrt(abar)*mean)/(abar*var+1-abar),
    which is the negative score scaled by sqrt(1-abar).
    """

    def __init__(self, mean, var, sched: VarianceSchedule):
        m, _ = _unwrap(mean)
        v = np.asarray(var, dtype=np.float64)
        if np.any(v <= 0):
            raise ValueError("variances must be positive")
        self.mean = m
        self.var = np.broadcast_to(v, m.shape).copy()
        self.sched = sched

    def predict(self, x_t, t: int):
        xa, proto = _unwrap(x_t)
        if xa.shape != self.mean.shape:
            raise ValueError(f"shape {xa.shape} does not match model {self.mean.shape}")
        a = self.sched.alpha_bar(t)
        num = math.sqrt(1.0 - a) * (xa - math.sqrt(a) * self.mean)
        return _rewrap(num / (a * self.var + 1.0 - a), proto)


def gaussian_predict(model: GaussianAnalyticModel, x_t, t: int, sched: VarianceSchedule | None = None):
    if sched is not None and sched is not model.sched:
        model = GaussianAnalyticModel(model.mean, model.var, sched)
    return model.predict(x_t, t)


def _bin_bounds(T: int, n_bins: int, b: int) -> tuple[int, int]:
    # partition of 1..T into n_bins contiguous runs
    return b * T // n_bins + 1, (b + 1) * T // n_bins


class AffineModel(EpsilonModel):
    """Per-pixel affine predictor w*x_t + b with one (w, b) pair per time bin."""

    def __init__(self, w: np.ndarray, b: np.ndarray, T: int, n_bins: int):
        w = np.asarray(w, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        if w.shape != b.shape or w.ndim != 3 or w.shape[0] != n_bins:
            raise ValueError(f"bad parameter shapes {w.shape}, {b.shape}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ValueError("parameters must be finite")
        if not (1 <= n_bins <= T):
            raise ValueError("need 1 <= n_bins <= T")
        self.w = w
        self.b = b
        self.T = T
        self.n_bins = n_bins

    def bin_of(self, t: int) -> int:
        if not (1 <= t <= self.T):
            raise ValueError(f"timestep {t} outside [1, {self.T}]")
        return (t * self.n_bins - 1) // self.T

    def predict(self, x_t, t: int):
        xa, proto = _unwrap(x_t)
        bi = self.bin_of(t)
        if xa.shape != self.w.shape[1:]:
            raise ValueError(f"shape {xa.shape} does not match model {self.w.shape[1:]}")
        return _rewrap(self.w[bi] * xa + self.b[bi], proto)


def iter_training_pairs(
    dataset: Sequence,
    sched: VarianceSchedule,
    t_lo: int,
    t_hi: int,
    n_samples: int,
    rng: np.random.Generator,
    chunk: int = 256,
) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield (x_t, eps) training chunks, each of shape (c, h, w).

    Per sample: a clean image drawn uniformly from the dataset, a timestep
    drawn uniformly from [t_lo, t_hi], noise drawn standard normal, and the
    noised image formed by the direct forward jump.
    """
    imgs = [np.asarray(d.data if isinstance(d, ImageGrid) else d, dtype=np.float64) for d in dataset]
    if not imgs:
        raise ValueError("dataset is empty")
    shape = imgs[0].shape
    if any(im.shape != shape for im in imgs):
        raise ValueError("dataset images must share one shape")
    if not (1 <= t_lo <= t_hi <= sched.T):
        raise ValueError(f"bad timestep range [{t_lo}, {t_hi}]")
    stack = np.stack(imgs)
    abar = np.array([sched.alpha_bar(t) for t in range(1, sched.T + 1)])
    done = 0
    while done < n_samples:
        c = min(chunk, n_samples - done)
        idx = rng.integers(0, len(imgs), size=c)
        ts = rng.integers(t_lo, t_hi + 1, size=c)
        eps = rng.standard_normal((c,) + shape)
        a = abar[ts - 1][:, None, None]
        x_t = np.sqrt(a) * stack[idx] + np.sqrt(1.0 - a) * eps
        yield x_t, eps
        done += c


def train_affine(
    dataset: Sequence,
    sched: VarianceSchedule,
    n_bins: int = 10,
    n_samples: int = 10_000,
    seed: int = 0,
) -> AffineModel:
    """Fit the per-bin per-pixel least-squares (w, b) on n_samples synthetic
    pairs per bin. Closed form via the 2x2 normal equations; deterministic
    for a fixed seed."""
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    if n_bins > sched.T:
        raise ValueError(f"n_bins {n_bins} exceeds T {sched.T}")
    if n_samples < 2:
        raise ValueError("need at least 2 samples per bin")
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    first = dataset[0]
    shape = (first.data if isinstance(first, ImageGrid) else np.asarray(first)).shape
    W = np.zeros((n_bins,) + shape)
    B = np.zeros((n_bins,) + shape)
    for b in range(n_bins):
        lo, hi = _bin_bounds(sched.T, n_bins, b)
        rng = substream(seed, f"affine-bin-{b}")
        sx = np.zeros(shape)
        sxx = np.zeros(shape)
        se = np.zeros(shape)
        sxe = np.zeros(shape)
        m = 0
        for x_t, eps in iter_training_pairs(dataset, sched, lo, hi, n_samples, rng):
            sx += x_t.sum(axis=0)
            sxx += (x_t * x_t).sum(axis=0)
            se += eps.sum(axis=0)
            sxe += (x_t * eps).sum(axis=0)
            m += x_t.shape[0]
        det = m * sxx - sx * sx
        ok = det > 1e-12 * np.maximum(m * sxx, 1.0)
        safe = np.where(ok, det, 1.0)
        W[b] = np.where(ok, (m * sxe - sx * se) / safe, 0.0)
        B[b] = np.where(ok, (sxx * se - sx * sxe) / safe, se / m)
    return AffineModel(W, B, sched.T, n_bins)


class ConvNetModel(EpsilonModel):
    """Stack of 2D cross-correlations with bias, ReLU between layers.

    Input has two channels: the noised image and a constant plane at t/T.
    The final layer's single output channel is the noise estimate.
    """

    def __init__(self, layers: Sequence[tuple[np.ndarray, np.ndarray]], T: int = 1000):
        if not layers:
            raise ValueError("need at least one layer")
        prev = 2
        for li, (w, b) in enumerate(layers):
            if w.ndim != 4 or b.ndim != 1 or w.shape[0] != b.size:
                raise ValueError(f"layer {li}: bad shapes {w.shape}, {b.shape}")
            if w.shape[1] != prev:
                raise ValueError(f"layer {li}: expects {w.shape[1]} channels, gets {prev}")
            prev = w.shape[0]
        if prev != 1:
            raise ValueError(f"final layer must emit 1 channel, emits {prev}")
        self.layers = [(np.asarray(w, np.float64), np.asarray(b, np.float64)) for w, b in layers]
        self.T = T

    def predict(self, x_t, t: int):
        xa, proto = _unwrap(x_t)
        h, wd = xa.shape
        act = np.stack([xa, np.full((h, wd), t / self.T)])
        for li, (w, b) in enumerate(self.layers):
            c_out, c_in, kh, kw = w.shape
            ph, pw = kh // 2, kw // 2
            xp = np.pad(act, ((0, 0), (ph, kh - 1 - ph), (pw, kw - 1 - pw)))
            nxt = np.empty((c_out, h, wd))
            for co in range(c_out):
                acc = np.full((h, wd), b[co])
                for ci in range(c_in):
                    for di in range(kh):
                        for dj in range(kw):
                            acc += w[co, ci, di, dj] * xp[ci, di : di + h, dj : dj + wd]
                nxt[co] = acc
            act = nxt if li == len(self.layers) - 1 else np.maximum(nxt, 0.0)
        return _rewrap(act[0], proto)


def save_weights(path, model: EpsilonModel):
    """Serialize an AffineModel or ConvNetModel to its binary container."""
    with open_output(path) as f:
        if isinstance(model, AffineModel):
            f.write(AFFINE_MAGIC)
            h, w = model.w.shape[1:]
            f.write(struct.pack("<4I", model.T, model.n_bins, h, w))
            f.write(model.w.astype("<f8").tobytes())
            f.write(model.b.astype("<f8").tobytes())
        elif isinstance(model, ConvNetModel):
            f.write(NET_MAGIC)
            f.write(struct.pack("<I", len(model.layers)))
            for w, b in model.layers:
                c_out, c_in, kh, kw = w.shape
                f.write(struct.pack("<4I", kh, kw, c_in, c_out))
                f.write(w.astype("<f4").tobytes())
                f.write(b.astype("<f4").tobytes())
        else:
            raise ValueError(f"cannot serialize {type(model).__name__}")


def _read_exact(f, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated weights: expected {n} bytes of {what}")
    return buf


def load_weights(path, T: int | None = None) -> EpsilonModel:
    """Load a model container; dispatches on the magic. ``T`` overrides the
    conv model's schedule length used for the t/T channel (the conv container
    does not store one)."""
    with open_input(path) as f:
        magic = _read_exact(f, 8, "magic")
        if magic == AFFINE_MAGIC:
            mT, n_bins, h, w = struct.unpack("<4I", _read_exact(f, 16, "header"))
            if mT < 1 or n_bins < 1 or h < 1 or w < 1:
                raise FormatError(f"bad affine header {mT} {n_bins} {h} {w}")
            count = n_bins * h * w
            wa = np.frombuffer(_read_exact(f, 8 * count, "gains"), dtype="<f8")
            ba = np.frombuffer(_read_exact(f, 8 * count, "offsets"), dtype="<f8")
            try:
                return AffineModel(
                    wa.reshape(n_bins, h, w).copy(), ba.reshape(n_bins, h, w).copy(), mT, n_bins
                )
            except ValueError as e:
                raise FormatError(str(e)) from None
        if magic == NET_MAGIC:
            (n_layers,) = struct.unpack("<I", _read_exact(f, 4, "layer count"))
            if not (1 <= n_layers <= 64):
                raise FormatError(f"implausible layer count {n_layers}")
            layers = []
            for li in range(n_layers):
                kh, kw, c_in, c_out = struct.unpack("<4I", _read_exact(f, 16, f"layer {li} header"))
                if not (1 <= kh <= 63 and 1 <= kw <= 63 and 1 <= c_in <= 256 and 1 <= c_out <= 256):
                    raise FormatError(f"implausible layer {li} dims {kh}x{kw} {c_in}->{c_out}")
                wn = c_out * c_in * kh * kw
                wa = np.frombuffer(_read_exact(f, 4 * wn, f"layer {li} weights"), dtype="<f4")
                ba = np.frombuffer(_read_exact(f, 4 * c_out, f"layer {li} bias"), dtype="<f4")
                layers.append(
                    (wa.astype(np.float64).reshape(c_out, c_in, kh, kw), ba.astype(np.float64))
                )
            try:
                return ConvNetModel(layers, T=T if T is not None else 1000)
            except ValueError as e:
                raise FormatError(str(e)) from None
        raise FormatError(f"unknown weight magic {magic!r}")
