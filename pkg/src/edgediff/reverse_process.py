"""Reconstruction of x0, Gaussian backward posteriors and ancestral sampling."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import torch

from .edge_field import gradient_magnitude, marginal_variance
from .forward_process import signal_coefficient, transition_coefficients
from .schedule import HybridNoiseConfig, NoiseSchedule

# Callable mapping (x_t, t_batch) -> predicted sigma_t * eps
NoisePredictor = Callable[[torch.Tensor, torch.Tensor], torch.Tensor]


@dataclass
class PosteriorParams:
    mean: torch.Tensor
    variance: torch.Tensor
    s: int
    t: int


def reconstruct_x0(x_t: torch.Tensor, predicted_noise: torch.Tensor, t, sched: NoiseSchedule, clip: bool = False):
    """x0_hat = (x_t - predicted sigma_t eps) / sqrt(alpha_bar_t)."""
    if predicted_noise.shape != x_t.shape:
        raise ValueError(f"predicted noise shape {tuple(predicted_noise.shape)} != x_t shape {tuple(x_t.shape)}")
    x0_hat = (x_t - predicted_noise) / signal_coefficient(t, sched, x_t)
    return x0_hat.clamp(-1.0, 1.0) if clip else x0_hat


def posterior_params(
    x_t: torch.Tensor,
    x0_hat: torch.Tensor,
    s: int,
    t: int,
    grad: torch.Tensor,
    sched: NoiseSchedule,
    cfg: HybridNoiseConfig,
) -> PosteriorParams:
    """Per-pixel mean and variance of q(x_s | x_t, x0_hat).

    variance = (1/sigma^2(s) + gamma_ts^2 / var_ts)^-1
    mean     = variance * (gamma_ts / var_ts * x_t + gamma_s / sigma^2(s) * x0_hat)
    """
    gamma_ts, var_ts = transition_coefficients(s, t, grad, sched, cfg)
    var_s = marginal_variance(grad, s, sched, cfg)
    gamma_s = math.sqrt(sched.alpha_bar[int(s)])
    variance = 1.0 / (1.0 / var_s + gamma_ts**2 / var_ts)
    mean = variance * (gamma_ts / var_ts * x_t + gamma_s / var_s * x0_hat)
    return PosteriorParams(mean=mean, variance=variance, s=int(s), t=int(t))


def ancestral_step(
    x_t: torch.Tensor,
    model_output: torch.Tensor,
    s: int,
    t: int,
    sched: NoiseSchedule,
    cfg: HybridNoiseConfig,
    *,
    grad_source: str | torch.Tensor = "predicted",
    generator: torch.Generator | None = None,
    noise: torch.Tensor | None = None,
    clip: bool = True,
) -> torch.Tensor:
    """One reverse step x_t -> x_s.

    ``grad_source="predicted"`` evaluates the noise fields on the gradient of
    the current x0_hat; passing a tensor pins them to that gradient field.
    At s == 0 the posterior mean is returned without innovation.
    """
    x0_hat = reconstruct_x0(x_t, model_output, t, sched, clip=clip)
    if isinstance(grad_source, str):
        if grad_source != "predicted":
            raise ValueError(f"unknown grad_source {grad_source!r}")
        grad = gradient_magnitude(x0_hat)
    else:
        grad = grad_source.to(dtype=x_t.dtype, device=x_t.device)
    post = posterior_params(x_t, x0_hat, s, t, grad, sched, cfg)
    if s == 0:
        return post.mean
    if noise is None:
        noise = torch.randn(x_t.shape, generator=generator, dtype=x_t.dtype).to(x_t.device)
    return post.mean + post.variance.sqrt() * noise


def _model_dtype(model) -> torch.dtype:
    if isinstance(model, torch.nn.Module):
        for p in model.parameters():
            return p.dtype
    return torch.float32


@torch.no_grad()
def reverse_chain(
    model: NoisePredictor,
    x_start: torch.Tensor,
    t_start: int,
    sched: NoiseSchedule,
    cfg: HybridNoiseConfig,
    *,
    generator: torch.Generator | None = None,
    grad_source: str | torch.Tensor = "predicted",
    clip: bool = True,
    callback: Callable[[int, torch.Tensor, torch.Tensor], None] | None = None,
) -> torch.Tensor:
    """Run ancestral steps t_start -> 0 and return the final state.

    Diffusion arithmetic is done in float64; the model sees its own dtype.
    ``callback(t, x_t, model_output)`` is invoked before every step.
    """
    if isinstance(model, torch.nn.Module):
        model.eval()
    mdtype = _model_dtype(model)
    x = x_start.to(torch.float64)
    n = x.shape[0]
    for t in range(int(t_start), 0, -1):
        t_batch = torch.full((n,), t, dtype=torch.long, device=x.device)
        out = model(x.to(mdtype), t_batch).to(torch.float64)
        if callback is not None:
            callback(t, x, out)
        x = ancestral_step(x, out, t - 1, t, sched, cfg, grad_source=grad_source, generator=generator, clip=clip)
    return x


@torch.no_grad()
def generate(
    model: NoisePredictor,
    n: int,
    sched: NoiseSchedule,
    cfg: HybridNoiseConfig,
    *,
    shape: tuple[int, int, int] | None = None,
    generator: torch.Generator | None = None,
    clip: bool = True,
    device: str | torch.device = "cpu",
) -> torch.Tensor:
    """Unconditional samples: x_{T-1} ~ N(0, I), then ancestral steps down to 0.

    ``shape`` is (C, H, W); it defaults to the model's ``image_shape``.
    Returns a float64 batch clamped to [-1, 1].
    """
    if shape is None:
        shape = tuple(model.image_shape)
    if n == 0:
        return torch.empty((0, *shape), dtype=torch.float64, device=device)
    x = torch.randn((n, *shape), generator=generator, dtype=torch.float64).to(device)
    x = reverse_chain(model, x, sched.T - 1, sched, cfg, generator=generator, clip=clip)
    return x.clamp(-1.0, 1.0)
