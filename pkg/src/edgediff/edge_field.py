"""Gradient magnitude, Perona-Malik coefficient and the hybrid noise fields."""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F

from .schedule import HybridNoiseConfig, NoiseSchedule, edge_sensitivity, transition_value

_LUMA = (0.299, 0.587, 0.114)


def gradient_magnitude(x0: torch.Tensor, luminance: bool = False) -> torch.Tensor:
    """Per-channel central-difference gradient magnitude of an [N, C, H, W] batch.

    Borders are handled by replicate padding, so a flat border has zero
    gradient. With ``luminance=True`` an RGB batch is reduced to luma first and
    the single magnitude is broadcast back over the channels.
    """
    if x0.ndim != 4:
        raise ValueError(f"expected an [N, C, H, W] batch, got shape {tuple(x0.shape)}")
    if x0.shape[-1] < 3 or x0.shape[-2] < 3:
        raise ValueError(f"spatial dimensions must be >= 3, got {tuple(x0.shape[-2:])}")
    x = x0
    if luminance and x0.shape[1] == 3:
        w = x0.new_tensor(_LUMA).view(1, 3, 1, 1)
        x = (x0 * w).sum(dim=1, keepdim=True)
    p = F.pad(x, (1, 1, 1, 1), mode="replicate")
    gx = 0.5 * (p[..., 1:-1, 2:] - p[..., 1:-1, :-2])
    gy = 0.5 * (p[..., 2:, 1:-1] - p[..., :-2, 1:-1])
    g = torch.sqrt(gx * gx + gy * gy)
    return g.expand_as(x0).contiguous() if g.shape != x0.shape else g


def perona_malik_coefficient(grad, lambda_t):
    """c = 1 / sqrt(1 + g / lambda); equals 1 on flat regions."""
    bad = (lambda_t <= 0).any() if torch.is_tensor(lambda_t) else np.any(np.asarray(lambda_t) <= 0)
    if bad:
        raise ValueError("edge sensitivity must be positive")
    if torch.is_tensor(grad):
        return torch.rsqrt(1.0 + grad / lambda_t)
    return 1.0 / np.sqrt(1.0 + np.asarray(grad) / lambda_t)


def step_values(t, sched: NoiseSchedule, cfg: HybridNoiseConfig, like: torch.Tensor):
    """(1 - alpha_bar_t, tau(t), lambda(t)) as tensors broadcastable against ``like``.

    ``t`` is an int or an integer tensor with one entry per batch element.
    """
    if torch.is_tensor(t):
        t_np = t.detach().cpu().numpy()
    else:
        t_np = np.asarray(t)
    if np.any(t_np < 0) or np.any(t_np >= sched.T):
        raise ValueError(f"time step out of range [0, {sched.T}): {t_np}")
    one_minus_abar = 1.0 - sched.alpha_bar[t_np]
    tau = transition_value(t_np, cfg, sched.T)
    lam = edge_sensitivity(t_np, cfg, sched.T)
    shape = (-1,) + (1,) * (like.ndim - 1) if t_np.ndim == 1 else ()
    out = []
    for v in (one_minus_abar, tau, lam):
        out.append(torch.as_tensor(np.asarray(v), dtype=like.dtype, device=like.device).reshape(shape))
    return tuple(out)


def _denominator(grad, tau, lam):
    return (1.0 - tau) * torch.sqrt(1.0 + grad / lam) + tau


def hybrid_noise_coefficient(grad: torch.Tensor, t, sched: NoiseSchedule, cfg: HybridNoiseConfig) -> torch.Tensor:
    """Per-pixel noise coefficient sigma_t of the hybrid forward process."""
    one_minus_abar, tau, lam = step_values(t, sched, cfg, grad)
    return torch.sqrt(one_minus_abar) / _denominator(grad, tau, lam)


def marginal_variance(grad: torch.Tensor, t, sched: NoiseSchedule, cfg: HybridNoiseConfig) -> torch.Tensor:
    """sigma^2(t) from the expanded quadratic denominator.

    Kept as its own evaluation (rather than squaring the coefficient) so the
    two can be cross-checked.
    """
    one_minus_abar, tau, lam = step_values(t, sched, cfg, grad)
    r = 1.0 + grad / lam
    denom = (1.0 - tau) ** 2 * r + 2.0 * ((1.0 - tau) * torch.sqrt(r) * tau) + tau**2
    return one_minus_abar / denom
