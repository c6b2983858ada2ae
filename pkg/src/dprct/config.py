"""Flat run configuration: ``section.key = value`` text files, defaults,
schema validation, canonical hashing, and the run manifest.

Precedence: built-in defaults, then a config file, then command-line flags.
The full effective configuration is embedded in every manifest so a run can
be reproduced from its artifacts alone.
"""

from __future__ import annotations

import hashlib
from typing import Any

__all__ = [
    "DEFAULTS",
    "SCHEMA",
    "parse_config_text",
    "apply_overrides",
    "validate_config",
    "config_hash",
    "format_config",
    "write_manifest",
    "parse_manifest",
]

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _bool(s: str) -> bool:
    low = str(s).strip().lower()
    if low in _TRUE:
        return True
    if low in _FALSE:
        return False
    raise ValueError(f"not a boolean: {s!r}")


# key -> (parser, validator description, validator)
SCHEMA: dict[str, tuple[Any, str]] = {
    "geometry.n": (int, "image size in pixels, >= 2"),
    "geometry.views": (int, "number of views, >= 1"),
    "sart.subsets": (int, "ordered subsets, >= 1"),
    "sart.relaxation": (float, "relaxation in (0, 2)"),
    "sart.passes": (int, "sweeps per conditioning call, >= 1"),
    "sart.nonneg": (_bool, "clamp negatives after each subset"),
    "tv.weight_rel": (float, "TV weight as a fraction of input std, >= 0"),
    "tv.iters": (int, "TV inner iterations, >= 1"),
    "diffusion.T": (int, "schedule length, >= 1"),
    "diffusion.beta1": (float, "first variance, in (0, 1)"),
    "diffusion.betaT": (float, "last variance, in (0, 1)"),
    "diffusion.steps": (int, "subsequence length S, >= 1"),
    "diffusion.eta": (float, "implicit-step noise interpolation, >= 0"),
    "diffusion.sigma": (str, "per-step noise rule: sqrt-beta | posterior | zero"),
    "noise.i0": (float, "incident photons per ray, > 0"),
    "noise.sigma_e2": (float, "electronic noise variance, >= 0"),
    "prior.mean": (float, "flat Gaussian prior mean"),
    "prior.var": (float, "flat Gaussian prior variance, > 0"),
    "mcg.step": (float, "gradient-step size, >= 0"),
    "fbp.filter": (str, "ram-lak | hann"),
    "phantom.scale": (float, "phantom intensity scale"),
    "display.mu_water": (float, "HU reference attenuation, > 0"),
    "run.seed": (int, "64-bit RNG seed"),
}

DEFAULTS: dict[str, Any] = {
    "geometry.n": 128,
    "geometry.views": 360,
    "sart.subsets": 10,
    "sart.relaxation": 1.0,
    "sart.passes": 1,
    "sart.nonneg": True,
    "tv.weight_rel": 0.1,
    "tv.iters": 50,
    "diffusion.T": 1000,
    "diffusion.beta1": 1e-4,
    "diffusion.betaT": 0.02,
    "diffusion.steps": 200,
    "diffusion.eta": 0.0,
    "diffusion.sigma": "sqrt-beta",
    "noise.i0": 1e6,
    "noise.sigma_e2": 10.0,
    "prior.mean": 0.0,
    "prior.var": 1.0,
    "mcg.step": 0.0,
    "fbp.filter": "ram-lak",
    "phantom.scale": 1.0,
    "display.mu_water": 0.0192,
    "run.seed": 0,
}


def parse_config_text(text: str) -> dict[str, Any]:
    """Parse ``section.key = value`` lines; '#' starts a comment."""
    out: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in SCHEMA:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        parser = SCHEMA[key][0]
        try:
            out[key] = parser(val)
        except ValueError as e:
            raise ValueError(f"config line {lineno}: bad value for {key}: {e}") from None
    return out


def apply_overrides(base: dict[str, Any], *layers: dict[str, Any]) -> dict[str, Any]:
    cfg = dict(base)
    for layer in layers:
        for k, v in layer.items():
            if v is None:
                continue
            if k not in SCHEMA:
                raise ValueError(f"unknown config key {k!r}")
            cfg[k] = SCHEMA[k][0](v) if isinstance(v, str) else v
    return cfg


def validate_config(cfg: dict[str, Any]):
    def bad(key, why):
        raise ValueError(f"config {key} = {cfg[key]!r}: {why} (expect {SCHEMA[key][1]})")

    if cfg["geometry.n"] < 2:
        bad("geometry.n", "too small")
    if cfg["geometry.views"] < 1:
        bad("geometry.views", "too small")
    if cfg["sart.subsets"] < 1:
        bad("sart.subsets", "too small")
    if not (0.0 < cfg["sart.relaxation"] < 2.0):
        bad("sart.relaxation", "out of range")
    if cfg["sart.passes"] < 1:
        bad("sart.passes", "too small")
    if cfg["tv.weight_rel"] < 0:
        bad("tv.weight_rel", "negative")
    if cfg["tv.iters"] < 1:
        bad("tv.iters", "too small")
    if cfg["diffusion.T"] < 1:
        bad("diffusion.T", "too small")
    if not (0.0 < cfg["diffusion.beta1"] <= cfg["diffusion.betaT"] < 1.0):
        bad("diffusion.beta1", "need 0 < beta1 <= betaT < 1")
    if not (1 <= cfg["diffusion.steps"] <= cfg["diffusion.T"]):
        bad("diffusion.steps", "need 1 <= steps <= T")
    if cfg["diffusion.eta"] < 0:
        bad("diffusion.eta", "negative")
    if cfg["diffusion.sigma"] not in ("sqrt-beta", "posterior", "zero"):
        bad("diffusion.sigma", "unknown rule")
    if not cfg["noise.i0"] > 0:
        bad("noise.i0", "must be positive")
    if cfg["noise.sigma_e2"] < 0:
        bad("noise.sigma_e2", "negative")
    if not cfg["prior.var"] > 0:
        bad("prior.var", "must be positive")
    if cfg["mcg.step"] < 0:
        bad("mcg.step", "negative")
    if cfg["fbp.filter"] not in ("ram-lak", "hann"):
        bad("fbp.filter", "unknown filter")
    if not cfg["display.mu_water"] > 0:
        bad("display.mu_water", "must be positive")


def _fmt_value(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def format_config(cfg: dict[str, Any]) -> str:
    return "".join(f"{k} = {_fmt_value(cfg[k])}\n" for k in sorted(cfg))


def config_hash(cfg: dict[str, Any]) -> str:
    return hashlib.sha256(format_config(cfg).encode()).hexdigest()


def write_manifest(
    path: str,
    method: str,
    cfg: dict[str, Any],
    wall_seconds: float,
    steps: int,
    residuals: list[tuple[int, float]] | None = None,
    status: str = "ok",
    failed_timestep: int | None = None,
):
    lines = [
        "manifest-version = 1",
        f"method = {method}",
        f"status = {status}",
        f"seed = {cfg['run.seed']}",
        f"config-hash = {config_hash(cfg)}",
        f"steps = {steps}",
        f"wall-seconds = {wall_seconds:.6f}",
    ]
    if failed_timestep is not None:
        lines.append(f"failed-timestep = {failed_timestep}")
    if residuals:
        lines.extend(f"residual.{t} = {r!r}" for t, r in residuals)
    lines.extend(f"config.{k} = {_fmt_value(cfg[k])}" for k in sorted(cfg))
    from .io import open_output

    with open_output(path) as f:
        f.write(("\n".join(lines) + "\n").encode("utf-8"))


def parse_manifest(path: str) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as f:
        for raw in f:
            line = raw.strip()
            if not line or "=" not in line:
                continue
            k, _, v = line.partition("=")
            out[k.strip()] = v.strip()
    return out
