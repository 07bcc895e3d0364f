import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from edgediff.edge_field import gradient_magnitude, marginal_variance
from edgediff.errors import InvalidScheduleError
from edgediff.forward_process import sample_forward, transition_coefficients
from edgediff.schedule import HybridNoiseConfig, make_beta_schedule


def test_zero_noise_scales_signal(sched, hybrid, step_image):
    fs = sample_forward(step_image, 123, sched, hybrid, noise=torch.zeros_like(step_image))
    torch.testing.assert_close(fs.x_t, math.sqrt(sched.alpha_bar[123]) * step_image, rtol=0, atol=1e-15)


def test_isotropic_matches_ddpm_forward(sched, isotropic, step_image):
    eps = torch.randn(step_image.shape, generator=torch.Generator().manual_seed(0), dtype=torch.float64)
    for t in (0, 250, 499):
        fs = sample_forward(step_image, t, sched, isotropic, noise=eps)
        ref = math.sqrt(sched.alpha_bar[t]) * step_image + math.sqrt(1 - sched.alpha_bar[t]) * eps
        torch.testing.assert_close(fs.x_t, ref, rtol=0, atol=1e-14)


def test_forward_sample_is_reconstructible(sched, hybrid, step_image):
    fs = sample_forward(step_image, 77, sched, hybrid, generator=torch.Generator().manual_seed(3))
    rebuilt = math.sqrt(sched.alpha_bar[77]) * step_image + fs.sigma_t * fs.epsilon
    assert (rebuilt - fs.x_t).abs().max() < 1e-12


def test_generator_makes_draw_reproducible(sched, hybrid, step_image):
    a = sample_forward(step_image, 10, sched, hybrid, generator=torch.Generator().manual_seed(5)).x_t
    b = sample_forward(step_image, 10, sched, hybrid, generator=torch.Generator().manual_seed(5)).x_t
    assert torch.equal(a, b)


def test_noise_shape_mismatch(sched, hybrid, step_image):
    with pytest.raises(ValueError):
        sample_forward(step_image, 1, sched, hybrid, noise=torch.zeros(1, 1, 4, 4, dtype=torch.float64))


def test_monte_carlo_variance_at_edge_pixel(sched, hybrid, step_image):
    n = 100_000
    x0 = step_image.expand(n, -1, -1, -1)
    grad = gradient_magnitude(step_image).expand(n, -1, -1, -1)
    t = 60
    fs = sample_forward(x0, t, sched, hybrid, grad=grad, generator=torch.Generator().manual_seed(11))
    target = marginal_variance(gradient_magnitude(step_image), t, sched, hybrid)[0, 0]
    for (i, j) in [(4, 3), (4, 4), (2, 0)]:  # two edge pixels and one flat pixel
        emp = fs.x_t[:, 0, i, j].var().item()
        assert emp == pytest.approx(target[i, j].item(), rel=0.02)


def test_transition_scalar_ddpm_identity(sched, isotropic):
    # (1 - abar_t) - (abar_t / abar_s)(1 - abar_s) simplifies to (abar_s - abar_t) / abar_s = beta_t for s = t - 1
    g = torch.zeros(1, 1, 3, 3, dtype=torch.float64)
    for t in (1, 2, 100, 499):
        gamma, var = transition_coefficients(t - 1, t, g, sched, isotropic)
        assert gamma == pytest.approx(math.sqrt(sched.alpha[t]), rel=1e-14)
        np.testing.assert_allclose(var.numpy(), sched.beta[t], rtol=1e-9)


def test_transition_uniform_on_flat_image(sched, hybrid):
    g = torch.zeros(1, 1, 5, 5, dtype=torch.float64)
    _, var = transition_coefficients(10, 200, g, sched, hybrid)
    assert torch.all(var == var.flatten()[0])


def test_transition_gamma_from_zero(sched, hybrid, step_image):
    gamma, _ = transition_coefficients(0, 300, gradient_magnitude(step_image), sched, hybrid)
    assert gamma == pytest.approx(math.sqrt(sched.alpha_bar[300] / sched.alpha_bar[0]), rel=1e-15)


@pytest.mark.parametrize("s, t", [(5, 5), (6, 5), (-1, 3), (0, 500)])
def test_transition_rejects_bad_order(sched, hybrid, s, t):
    with pytest.raises(ValueError):
        transition_coefficients(s, t, torch.zeros(1, 1, 3, 3, dtype=torch.float64), sched, hybrid)


def test_nonpositive_transition_variance_is_an_error(sched):
    cfg = HybridNoiseConfig(lambda_direction="decreasing", t_phi=1.0, lambda_min=1e-6, lambda_max=10.0)
    g = torch.ones(1, 1, 3, 3, dtype=torch.float64)
    with pytest.raises(InvalidScheduleError):
        transition_coefficients(498, 499, g, sched, cfg)


def test_transition_variance_positive_for_all_pairs(sched, hybrid):
    T = sched.T
    lam_lo, lam_hi = hybrid.lambda_min, hybrid.lambda_max
    ab = sched.alpha_bar
    ratio = np.triu(ab[None, :] / ab[:, None], k=1)  # [s, t] -> abar_t / abar_s
    mask = np.triu(np.ones((T, T), dtype=bool), k=1)
    for gval in (0.0, lam_lo, 10 * lam_lo, lam_hi, 10 * lam_hi):
        g = torch.full((T, 1, 1, 1), gval, dtype=torch.float64)
        var = marginal_variance(g, torch.arange(T), sched, hybrid).flatten().numpy()
        var_ts = var[None, :] - ratio * var[:, None]
        assert np.all(var_ts[mask] > 0), gval


@settings(max_examples=200, deadline=None)
@given(
    s=st.integers(0, 498),
    dt=st.integers(1, 499),
    g=st.floats(0, 5),
    lam=st.floats(1e-4, 1.0),
    kind=st.sampled_from(["linear", "cosine", "sigmoid", "constant"]),
    x0=st.floats(-1, 1),
)
def test_chain_consistency(sched, s, dt, g, lam, kind, x0):
    t = min(s + dt, sched.T - 1)
    if t <= s:
        return
    cfg = HybridNoiseConfig(transition_kind=kind, lambda_kind="constant", lambda_min=lam, lambda_max=lam)
    grad = torch.full((1, 1, 3, 3), g, dtype=torch.float64)
    gamma_ts, var_ts = transition_coefficients(s, t, grad, sched, cfg)
    mean_t = gamma_ts * math.sqrt(sched.alpha_bar[s]) * x0
    var_t = gamma_ts**2 * marginal_variance(grad, s, sched, cfg) + var_ts
    assert abs(mean_t - math.sqrt(sched.alpha_bar[t]) * x0) < 1e-8
    assert (var_t - marginal_variance(grad, t, sched, cfg)).abs().max() < 1e-8


def test_prior_is_standard_normal_when_alpha_bar_small(step_image):
    sched = make_beta_schedule(1000, 1e-4, 0.02)
    assert sched.alpha_bar[-1] < 1e-4
    x0 = step_image.expand(2000, -1, -1, -1)
    fs = sample_forward(x0, sched.T - 1, sched, HybridNoiseConfig(), generator=torch.Generator().manual_seed(0))
    assert stats.kstest(fs.x_t.flatten().numpy(), "norm").pvalue > 0.01
    torch.testing.assert_close(fs.sigma_t, torch.full_like(fs.sigma_t, math.sqrt(1 - sched.alpha_bar[-1])))
