"""Declarative run configuration, validated in full before any computation."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, fields
from pathlib import Path

from .core import MAX_D, Scenario, ScenarioError


class ConfigError(ValueError):
    """Invalid or unknown configuration entries."""


CHOICES = {
    "calibration": ("auto", "fit", "truth"),
    "input_format": ("csv",),
    "format": ("csv", "json"),
    "lhv_method": ("lp", "fw"),
    "pvalue_settings": ("estimated", "uniform"),
}


@dataclass(frozen=True)
class RunConfig:
    """Every knob of every command, flat so CLI flags can mirror the keys.

    ``state`` is ``"max"`` (maximally entangled), ``"optimal"`` (CGLMP-optimal
    Schmidt coefficients) or an explicit list of non-negative coefficients.
    Times are in seconds.  ``periods_covered = None`` picks the smallest grid
    whose envelope mass outside is below ``envelope_mass_tol``.
    """

    d: int = 6
    M: int = 38
    state: str | list = "max"
    visibility: float = 1.0
    jitter_sigma: float = 0.0
    total_coincidences: float = 1e7
    delta_t: float = 1e-12
    sigma_t: float = 1e-13
    periods_covered: int | None = None
    envelope_mass_tol: float = 1e-4
    quadrature_order: int = 8
    seed: int = 0
    bootstrap_resamples: int = 50
    calibration: str = "auto"
    input: str | None = None
    input_format: str = "csv"
    out_dir: str = "out"
    format: str = "csv"
    lhv: bool = False
    lhv_method: str = "lp"
    fw_tol: float = 1e-4
    pvalue_settings: str = "estimated"
    sweep_d_min: int = 2
    sweep_d_max: int = 8
    sweep_lp: bool = False

    def __post_init__(self):
        validate(self)

    @property
    def scenario(self) -> Scenario:
        return Scenario(self.d, self.M)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "RunConfig":
        return from_dict({**self.to_dict(), **changes})


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v) -> bool:
    return (isinstance(v, (int, float)) and not isinstance(v, bool)) and math.isfinite(v)


def validate(cfg: RunConfig) -> None:
    for name in ("d", "M", "seed", "bootstrap_resamples", "quadrature_order", "sweep_d_min", "sweep_d_max"):
        if not _is_int(getattr(cfg, name)):
            raise ConfigError(f"{name} must be an integer, got {getattr(cfg, name)!r}")
    for name in ("visibility", "jitter_sigma", "total_coincidences", "delta_t", "sigma_t", "envelope_mass_tol", "fw_tol"):
        if not _is_num(getattr(cfg, name)):
            raise ConfigError(f"{name} must be a finite number, got {getattr(cfg, name)!r}")
    for name in ("lhv", "sweep_lp"):
        if not isinstance(getattr(cfg, name), bool):
            raise ConfigError(f"{name} must be true or false")
    for name, allowed in CHOICES.items():
        if getattr(cfg, name) not in allowed:
            raise ConfigError(f"{name} must be one of {allowed}, got {getattr(cfg, name)!r}")
    try:
        Scenario(cfg.d, cfg.M)
    except ScenarioError as exc:
        raise ConfigError(str(exc)) from None
    if not 0.0 <= cfg.visibility <= 1.0:
        raise ConfigError("visibility must lie in [0, 1]")
    if cfg.jitter_sigma < 0 or cfg.total_coincidences < 0:
        raise ConfigError("jitter_sigma and total_coincidences must be non-negative")
    if cfg.delta_t <= 0 or cfg.sigma_t <= 0:
        raise ConfigError("delta_t and sigma_t must be positive")
    if not 0 < cfg.envelope_mass_tol < 1:
        raise ConfigError("envelope_mass_tol must lie in (0, 1)")
    if cfg.periods_covered is not None and (not _is_int(cfg.periods_covered) or cfg.periods_covered < 1):
        raise ConfigError("periods_covered must be a positive integer or null")
    if not 1 <= cfg.quadrature_order <= 64:
        raise ConfigError("quadrature_order must lie in [1, 64]")
    if cfg.seed < 0:
        raise ConfigError("seed must be non-negative")
    if cfg.bootstrap_resamples < 2:
        raise ConfigError("bootstrap_resamples must be at least 2")
    if cfg.fw_tol <= 0:
        raise ConfigError("fw_tol must be positive")
    if not 2 <= cfg.sweep_d_min <= cfg.sweep_d_max <= MAX_D:
        raise ConfigError(f"sweep range must satisfy 2 <= sweep_d_min <= sweep_d_max <= {MAX_D}")
    if cfg.input is not None and not isinstance(cfg.input, str):
        raise ConfigError("input must be a path string or null")
    if not isinstance(cfg.out_dir, str) or not cfg.out_dir:
        raise ConfigError("out_dir must be a non-empty path string")
    if isinstance(cfg.state, str):
        if cfg.state not in ("max", "optimal"):
            raise ConfigError("state must be 'max', 'optimal' or a list of Schmidt coefficients")
    elif isinstance(cfg.state, (list, tuple)):
        if len(cfg.state) != cfg.d or not all(_is_num(v) and v >= 0 for v in cfg.state):
            raise ConfigError(f"explicit state needs {cfg.d} non-negative coefficients")
        if sum(v * v for v in cfg.state) <= 0:
            raise ConfigError("explicit state is all zeros")
    else:
        raise ConfigError("state must be a string or a list")


KEYS = tuple(f.name for f in fields(RunConfig))


def from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a JSON object")
    unknown = sorted(set(data) - set(KEYS))
    if unknown:
        raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
    data = dict(data)
    # JSON has no int/float distinction for whole numbers written as 1e7
    for name in ("total_coincidences", "visibility", "jitter_sigma", "delta_t", "sigma_t", "fw_tol", "envelope_mass_tol"):
        if _is_int(data.get(name)):
            data[name] = float(data[name])
    if isinstance(data.get("state"), list):
        data["state"] = [float(v) if _is_int(v) else v for v in data["state"]]
    return RunConfig(**data)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    return from_dict(data)
