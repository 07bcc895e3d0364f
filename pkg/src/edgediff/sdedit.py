"""Stroke paintings from k-means color quantization, and hijacked (SDEdit) sampling."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import torch
from sklearn.cluster import KMeans

from .edge_field import gradient_magnitude
from .forward_process import sample_forward
from .reverse_process import reverse_chain
from .schedule import HybridNoiseConfig, NoiseSchedule


@dataclass
class StrokeGuide:
    painting: torch.Tensor  # [N, C, H, W]
    K: int
    source_id: list[str] = field(default_factory=list)


def unique_colors(image: torch.Tensor) -> int:
    """Number of distinct color vectors in one [C, H, W] image."""
    flat = image.reshape(image.shape[0], -1).T
    return len(torch.unique(flat, dim=0))


def _quantize(image: np.ndarray, K: int, seed: int) -> np.ndarray:
    c, h, w = image.shape
    pixels = image.reshape(c, -1).T
    if len(np.unique(pixels, axis=0)) <= K:
        return image.copy()
    km = KMeans(n_clusters=K, init="k-means++", n_init=1, max_iter=100, tol=1e-4, random_state=seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        labels = km.fit_predict(pixels)
    return km.cluster_centers_[labels].T.reshape(c, h, w).astype(image.dtype)


def make_stroke_painting(
    images: torch.Tensor,
    K: int = 8,
    rng: np.random.Generator | int | None = 0,
    source_ids: list[str] | None = None,
) -> StrokeGuide:
    """Replace every pixel by its k-means cluster centroid, fitted per image.

    Images that already have at most ``K`` colors are returned unchanged.
    """
    if K < 2:
        raise ValueError(f"K must be >= 2, got {K}")
    rng = np.random.default_rng(rng)
    seeds = rng.integers(0, 2**31 - 1, size=len(images))
    arr = images.detach().cpu().numpy()
    out = np.stack([_quantize(img, K, int(s)) for img, s in zip(arr, seeds)]) if len(arr) else arr.copy()
    ids = list(source_ids) if source_ids is not None else [str(i) for i in range(len(images))]
    return StrokeGuide(painting=torch.from_numpy(out).to(images.dtype), K=K, source_id=ids)


def hijack_step(hijack_fraction: float, T: int) -> int:
    """Zero-based step at which the guide enters the reverse chain."""
    if not (0.0 < hijack_fraction < 1.0):
        raise ValueError(f"hijack fraction must lie in (0, 1), got {hijack_fraction}")
    return int(round(hijack_fraction * (T - 1)))


@torch.no_grad()
def sdedit_generate(
    model,
    guide: StrokeGuide | torch.Tensor,
    hijack_fraction: float,
    sched: NoiseSchedule,
    cfg: HybridNoiseConfig,
    *,
    generator: torch.Generator | None = None,
    noise: torch.Tensor | None = None,
    pin_guide_gradient: bool = False,
    clip: bool = True,
) -> torch.Tensor:
    """Noise the guide up to the hijack step, then denoise it with ancestral steps.

    The forward noise uses the guide's own gradient field. During the reverse
    chain the fields follow x0_hat unless ``pin_guide_gradient`` is set.
    """
    painting = guide.painting if isinstance(guide, StrokeGuide) else guide
    x0 = painting.to(torch.float64)
    t_h = hijack_step(hijack_fraction, sched.T)
    g = gradient_magnitude(x0)
    x_t = sample_forward(x0, t_h, sched, cfg, noise=noise, generator=generator, grad=g).x_t
    grad_source = g if pin_guide_gradient else "predicted"
    x = reverse_chain(model, x_t, t_h, sched, cfg, generator=generator, grad_source=grad_source, clip=clip)
    return x.clamp(-1.0, 1.0)
