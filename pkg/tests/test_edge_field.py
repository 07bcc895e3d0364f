import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from edgediff.edge_field import (
    gradient_magnitude,
    hybrid_noise_coefficient,
    marginal_variance,
    perona_malik_coefficient,
)
from edgediff.schedule import HybridNoiseConfig


def _stencil_oracle(img):
    """Central differences with replicate borders, written out pixel by pixel."""
    h, w = img.shape
    out = np.zeros_like(img)
    for i in range(h):
        for j in range(w):
            gx = 0.5 * (img[i, min(j + 1, w - 1)] - img[i, max(j - 1, 0)])
            gy = 0.5 * (img[min(i + 1, h - 1), j] - img[max(i - 1, 0), j])
            out[i, j] = np.hypot(gx, gy)
    return out


def test_constant_image_has_zero_gradient():
    g = gradient_magnitude(torch.full((2, 3, 5, 5), 0.3, dtype=torch.float64))
    assert torch.count_nonzero(g) == 0


def test_vertical_step_4x4():
    h = 1.6
    img = torch.tensor([[-0.8, -0.8, -0.8 + h, -0.8 + h]] * 4, dtype=torch.float64)
    g = gradient_magnitude(img[None, None])[0, 0]
    expected = _stencil_oracle(img.numpy())
    np.testing.assert_allclose(g.numpy(), expected, atol=1e-15)
    assert torch.all(g[:, [0, 3]] == 0)
    np.testing.assert_allclose(g[:, [1, 2]].numpy(), h / 2, atol=1e-15)


def test_random_image_matches_stencil_oracle(rng):
    img = rng.uniform(-1, 1, (7, 9))
    g = gradient_magnitude(torch.from_numpy(img)[None, None])[0, 0].numpy()
    np.testing.assert_allclose(g, _stencil_oracle(img), atol=1e-14)


def test_checkerboard_interior_positive():
    i, j = np.indices((8, 8)) // 2
    board = torch.from_numpy(np.where((i + j) % 2 == 0, 1.0, -1.0))[None, None]
    g = gradient_magnitude(board)[0, 0]
    assert torch.all(g[1:-1, 1:-1] > 0)


def test_single_pixel_checkerboard_is_invisible_to_central_differences():
    # neighbours at j-1 and j+1 always share a color
    i, j = np.indices((6, 6))
    board = torch.from_numpy(np.where((i + j) % 2 == 0, 1.0, -1.0))[None, None]
    assert torch.count_nonzero(gradient_magnitude(board)[0, 0, 1:-1, 1:-1]) == 0


def test_gradient_shape_and_small_images():
    x = torch.zeros(2, 3, 4, 6)
    assert gradient_magnitude(x).shape == x.shape
    with pytest.raises(ValueError):
        gradient_magnitude(torch.zeros(1, 1, 2, 8))


def test_luminance_pooling_broadcasts():
    x = torch.rand(1, 3, 6, 6, dtype=torch.float64) * 2 - 1
    g = gradient_magnitude(x, luminance=True)
    assert g.shape == x.shape
    assert torch.equal(g[:, 0], g[:, 1]) and torch.equal(g[:, 1], g[:, 2])


def test_flip_mirrors_gradient(rng):
    x = torch.from_numpy(rng.uniform(-1, 1, (2, 1, 8, 8)))
    assert torch.equal(gradient_magnitude(x.flip(-1)), gradient_magnitude(x).flip(-1))


@pytest.mark.parametrize("ratio, expected", [(0.0, 1.0), (3.0, 0.5), (1.0, 1 / np.sqrt(2))])
def test_perona_malik_examples(ratio, expected):
    lam = 0.02
    assert perona_malik_coefficient(ratio * lam, lam) == pytest.approx(expected, rel=1e-12)


def test_perona_malik_rejects_nonpositive_lambda():
    with pytest.raises(ValueError):
        perona_malik_coefficient(torch.zeros(3), 0.0)


def test_perona_malik_strictly_decreasing():
    g = torch.linspace(0, 5, 200, dtype=torch.float64)
    c = perona_malik_coefficient(g, 0.1)
    assert torch.all(torch.diff(c) < 0)
    assert c[0] == 1.0


def test_tau_one_gives_isotropic_coefficient(sched, isotropic, rng):
    g = torch.from_numpy(rng.uniform(0, 2, (2, 1, 5, 5)))
    for t in (0, 100, 499):
        sig = hybrid_noise_coefficient(g, t, sched, isotropic)
        torch.testing.assert_close(sig, torch.full_like(g, np.sqrt(1 - sched.alpha_bar[t])), rtol=0, atol=1e-15)


def test_tau_zero_gives_pure_edge_preserving_form(sched, rng):
    cfg = HybridNoiseConfig(transition_kind="linear", t_phi=0.5)
    g = torch.from_numpy(rng.uniform(0, 2, (1, 1, 5, 5)))
    sig = hybrid_noise_coefficient(g, 0, sched, cfg)
    expected = np.sqrt(1 - sched.alpha_bar[0]) * perona_malik_coefficient(g, cfg.lambda_min)
    torch.testing.assert_close(sig, expected, rtol=1e-14, atol=0)


def test_flat_image_gives_isotropic_coefficient(sched, hybrid):
    g = torch.zeros(1, 1, 4, 4, dtype=torch.float64)
    for t in (0, 37, 260):
        sig = hybrid_noise_coefficient(g, t, sched, hybrid)
        assert torch.allclose(sig, torch.tensor(np.sqrt(1 - sched.alpha_bar[t]), dtype=torch.float64))
        var = marginal_variance(g, t, sched, hybrid)
        assert torch.allclose(var, torch.tensor(1 - sched.alpha_bar[t], dtype=torch.float64), rtol=1e-14)


def test_batched_timesteps(sched, hybrid, rng):
    g = torch.from_numpy(rng.uniform(0, 1, (3, 1, 4, 4)))
    t = torch.tensor([0, 120, 400])
    batched = hybrid_noise_coefficient(g, t, sched, hybrid)
    for i in range(3):
        torch.testing.assert_close(batched[i], hybrid_noise_coefficient(g[i : i + 1], int(t[i]), sched, hybrid)[0])


def test_marginal_variance_is_squared_coefficient(sched, hybrid, rng):
    g = torch.from_numpy(rng.uniform(0, 3, (4, 1, 8, 8)))
    for t in range(0, 500, 7):
        sig = hybrid_noise_coefficient(g, t, sched, hybrid)
        var = marginal_variance(g, t, sched, hybrid)
        assert (var - sig**2).abs().max() < 1e-10


@settings(max_examples=60, deadline=None)
@given(
    t=st.integers(0, 499),
    lam=st.floats(1e-5, 1.0),
    kind=st.sampled_from(["linear", "cosine", "sigmoid"]),
    t_phi=st.sampled_from([0.25, 0.5, 0.75, 1.0]),
)
def test_sigma_decreases_in_gradient_and_is_bounded(sched, t, lam, kind, t_phi):
    cfg = HybridNoiseConfig(transition_kind=kind, t_phi=t_phi, lambda_kind="constant", lambda_min=lam, lambda_max=lam)
    g = torch.linspace(0, 3, 64, dtype=torch.float64).reshape(1, 1, 8, 8)
    sig = hybrid_noise_coefficient(g, t, sched, cfg).flatten()
    bound = np.sqrt(1 - sched.alpha_bar[t])
    assert torch.all(sig > 0) and torch.all(sig <= bound + 1e-15)
    if t < t_phi * sched.T:
        assert torch.all(torch.diff(sig) < 0)
