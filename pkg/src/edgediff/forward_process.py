"""Forward corruption q(x_t | x_0) and the Markov transition q(x_t | x_s)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

from .edge_field import gradient_magnitude, hybrid_noise_coefficient, marginal_variance
from .errors import InvalidScheduleError
from .schedule import HybridNoiseConfig, NoiseSchedule


@dataclass
class ForwardSample:
    x_t: torch.Tensor
    epsilon: torch.Tensor
    t: int | torch.Tensor
    sigma_t: torch.Tensor


def signal_coefficient(t, sched: NoiseSchedule, like: torch.Tensor) -> torch.Tensor:
    """sqrt(alpha_bar_t), shaped to broadcast against ``like``."""
    if torch.is_tensor(t):
        idx = t.detach().cpu().numpy()
        vals = torch.as_tensor(sched.alpha_bar[idx], dtype=like.dtype, device=like.device)
        return vals.sqrt().reshape((-1,) + (1,) * (like.ndim - 1))
    return torch.tensor(math.sqrt(sched.alpha_bar[int(t)]), dtype=like.dtype, device=like.device)


def sample_forward(
    x0: torch.Tensor,
    t,
    sched: NoiseSchedule,
    cfg: HybridNoiseConfig,
    *,
    noise: torch.Tensor | None = None,
    generator: torch.Generator | None = None,
    grad: torch.Tensor | None = None,
) -> ForwardSample:
    """Draw x_t = sqrt(alpha_bar_t) x0 + sigma_t * eps.

    Pass ``noise`` to make the draw deterministic; otherwise eps comes from
    ``generator``. ``grad`` is the (optionally cached) gradient magnitude of x0.
    """
    if noise is None:
        noise = torch.randn(x0.shape, generator=generator, dtype=x0.dtype).to(x0.device)
    elif noise.shape != x0.shape:
        raise ValueError(f"noise shape {tuple(noise.shape)} does not match x0 shape {tuple(x0.shape)}")
    if grad is None:
        grad = gradient_magnitude(x0)
    sigma_t = hybrid_noise_coefficient(grad, t, sched, cfg)
    x_t = signal_coefficient(t, sched, x0) * x0 + sigma_t * noise
    return ForwardSample(x_t=x_t, epsilon=noise, t=t, sigma_t=sigma_t)


def transition_coefficients(s: int, t: int, grad: torch.Tensor, sched: NoiseSchedule, cfg: HybridNoiseConfig):
    """Signal coefficient and per-pixel variance of q(x_t | x_s).

    Returns ``(gamma_ts, var_ts)`` with gamma_ts = sqrt(abar_t / abar_s) and
    var_ts = sigma^2(t) - gamma_ts^2 sigma^2(s). A non-positive variance means
    the schedule is not a consistent Gaussian chain and raises.
    """
    s, t = int(s), int(t)
    if not (0 <= s < t < sched.T):
        raise ValueError(f"need 0 <= s < t < T, got s={s}, t={t}, T={sched.T}")
    gamma_ts = math.sqrt(sched.alpha_bar[t] / sched.alpha_bar[s])
    var_ts = marginal_variance(grad, t, sched, cfg) - gamma_ts**2 * marginal_variance(grad, s, sched, cfg)
    if not bool((var_ts > 0).all()):
        n_bad = int((var_ts <= 0).sum())
        raise InvalidScheduleError(
            f"transition variance non-positive at {n_bad} pixel(s) for s={s}, t={t}; "
            f"check lambda/tau settings ({cfg})"
        )
    return gamma_ts, var_ts
