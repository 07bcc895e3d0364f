"""Discrete noise schedules, transition function and edge sensitivity.

Time is zero-based: ``t`` runs over ``0 .. T-1``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

TRANSITION_KINDS = ("linear", "cosine", "sigmoid", "constant")
LAMBDA_KINDS = ("linear", "sigmoid", "constant")
LAMBDA_DIRECTIONS = ("increasing", "decreasing")

# steepness of the logistic ramps
_SIGMOID_STEEPNESS = 10.0


@dataclass(frozen=True)
class NoiseSchedule:
    """beta/alpha/alpha_bar arrays (float64) over ``T`` steps."""

    T: int
    beta: np.ndarray = field(repr=False)
    alpha: np.ndarray = field(repr=False)
    alpha_bar: np.ndarray = field(repr=False)

    @property
    def beta_min(self) -> float:
        return float(self.beta[0])

    @property
    def beta_max(self) -> float:
        return float(self.beta[-1])


def make_beta_schedule(T: int = 500, beta_min: float = 1e-4, beta_max: float = 0.02) -> NoiseSchedule:
    """Linear beta schedule from ``beta_min`` to ``beta_max`` over ``T`` steps."""
    if int(T) != T or T < 2:
        raise ValueError(f"T must be an integer >= 2, got {T!r}")
    if not (0.0 < beta_min < beta_max < 1.0):
        raise ValueError(
            f"need 0 < beta_min < beta_max < 1, got beta_min={beta_min}, beta_max={beta_max}"
        )
    T = int(T)
    beta = np.linspace(beta_min, beta_max, T, dtype=np.float64)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    for arr in (beta, alpha, alpha_bar):
        arr.setflags(write=False)
    return NoiseSchedule(T=T, beta=beta, alpha=alpha, alpha_bar=alpha_bar)


@dataclass(frozen=True)
class HybridNoiseConfig:
    """Shape of the edge-preserving stage of the forward process.

    ``transition_kind="constant"`` pins the transition function to 1, which
    turns the whole process into plain isotropic DDPM.
    """

    transition_kind: str = "linear"
    t_phi: float = 0.5
    lambda_kind: str = "linear"
    lambda_min: float = 1e-4
    lambda_max: float = 1e-1
    lambda_direction: str = "increasing"

    def __post_init__(self):
        if self.transition_kind not in TRANSITION_KINDS:
            raise ValueError(f"transition_kind must be one of {TRANSITION_KINDS}, got {self.transition_kind!r}")
        if self.lambda_kind not in LAMBDA_KINDS:
            raise ValueError(f"lambda_kind must be one of {LAMBDA_KINDS}, got {self.lambda_kind!r}")
        if self.lambda_direction not in LAMBDA_DIRECTIONS:
            raise ValueError(
                f"lambda_direction must be one of {LAMBDA_DIRECTIONS}, got {self.lambda_direction!r}"
            )
        if not (0.0 < self.t_phi <= 1.0):
            raise ValueError(f"t_phi must lie in (0, 1], got {self.t_phi}")
        if not (self.lambda_min > 0 and self.lambda_max > 0):
            raise ValueError("lambda_min and lambda_max must be positive")
        if self.lambda_min > self.lambda_max:
            raise ValueError(f"lambda_min ({self.lambda_min}) > lambda_max ({self.lambda_max})")

    @property
    def is_isotropic(self) -> bool:
        return self.transition_kind == "constant"

    def to_dict(self) -> dict:
        return asdict(self)


DDPM_BASELINE = HybridNoiseConfig(transition_kind="constant")


def _logistic_ramp(u):
    """Logistic curve on [0, 1] rescaled so that 0 -> 0 and 1 -> 1."""
    k = _SIGMOID_STEEPNESS
    lo = 1.0 / (1.0 + math.exp(k / 2))
    hi = 1.0 / (1.0 + math.exp(-k / 2))
    return (1.0 / (1.0 + np.exp(-k * (np.asarray(u, dtype=np.float64) - 0.5))) - lo) / (hi - lo)


def _check_step(t, T):
    t = np.asarray(t)
    if np.any(t < 0) or np.any(t >= T):
        raise ValueError(f"time step out of range [0, {T}): {t}")
    return t.astype(np.float64)


def transition_value(t, cfg: HybridNoiseConfig, T: int):
    """tau(t) in [0, 1]; exactly 1 from ``t_phi * T`` onwards.

    Accepts a scalar or an integer array; returns the same shape.
    """
    tf = _check_step(t, T)
    if cfg.transition_kind == "constant":
        out = np.ones_like(tf)
    else:
        u = np.minimum(tf / (cfg.t_phi * T), 1.0)
        if cfg.transition_kind == "linear":
            out = u
        elif cfg.transition_kind == "cosine":
            out = 0.5 * (1.0 - np.cos(np.pi * u))
        else:
            out = _logistic_ramp(u)
        out = np.clip(out, 0.0, 1.0)
        out = np.where(u >= 1.0, 1.0, out)
    return float(out) if out.ndim == 0 else out


def edge_sensitivity(t, cfg: HybridNoiseConfig, T: int):
    """lambda(t) in [lambda_min, lambda_max]."""
    tf = _check_step(t, T)
    if cfg.lambda_kind == "constant":
        out = np.full_like(tf, cfg.lambda_min)
    else:
        u = tf / (T - 1)
        if cfg.lambda_direction == "decreasing":
            u = 1.0 - u
        ramp = u if cfg.lambda_kind == "linear" else _logistic_ramp(u)
        out = cfg.lambda_min + ramp * (cfg.lambda_max - cfg.lambda_min)
        out = np.clip(out, cfg.lambda_min, cfg.lambda_max)
    return float(out) if out.ndim == 0 else out


def schedule_tables(sched: NoiseSchedule, cfg: HybridNoiseConfig) -> dict[str, np.ndarray]:
    """Per-step lookup tables used by the image-space operators."""
    steps = np.arange(sched.T)
    return {
        "alpha_bar": sched.alpha_bar,
        "tau": transition_value(steps, cfg, sched.T),
        "lambda": edge_sensitivity(steps, cfg, sched.T),
    }
