"""Frequency bands, feature statistics and the Frechet distance."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from scipy import ndimage

log = logging.getLogger(__name__)


def gaussian_blur(images, sigma: float):
    """Blur every image of an [N, C, H, W] batch spatially.

    Kernel truncated at 4 sigma, replicate ("nearest") borders. ``sigma=0`` is
    the identity. Returns the same array type it was given.
    """
    if sigma < 0:
        raise ValueError(f"blur sigma must be >= 0, got {sigma}")
    is_tensor = torch.is_tensor(images)
    arr = images.detach().cpu().numpy() if is_tensor else np.asarray(images)
    if sigma == 0:
        out = arr.copy()
    else:
        out = ndimage.gaussian_filter(
            arr.astype(np.float64), sigma=(0, 0, sigma, sigma), mode="nearest", truncate=4.0
        ).astype(arr.dtype, copy=False)
    return torch.from_numpy(out).to(images.device) if is_tensor else out


band_limit_dataset = gaussian_blur


@dataclass
class FeatureStats:
    mean: np.ndarray
    covariance: np.ndarray
    n: int

    @classmethod
    def from_features(cls, features, shrinkage: float = 1e-6) -> "FeatureStats":
        """Mean and (unbiased) covariance of an [n, d] feature matrix.

        ``shrinkage`` is added to the diagonal when n < 4d.
        """
        f = np.asarray(features.detach().cpu() if torch.is_tensor(features) else features, dtype=np.float64)
        if f.ndim != 2 or len(f) < 2:
            raise ValueError(f"need an [n >= 2, d] feature matrix, got shape {f.shape}")
        n, d = f.shape
        cov = np.cov(f, rowvar=False).reshape(d, d)
        cov = 0.5 * (cov + cov.T)
        if n < 4 * d:
            cov = cov + shrinkage * np.eye(d)
        return cls(mean=f.mean(axis=0), covariance=cov, n=n)


def _sqrt_psd(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(0.5 * (m + m.T))
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.T


def frechet_distance(a: FeatureStats, b: FeatureStats) -> float:
    """||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)).

    The trace of (S_a S_b)^(1/2) is taken from the eigenvalues of the
    symmetric matrix S_a^(1/2) S_b S_a^(1/2), which has the same spectrum.
    """
    if a.mean.shape != b.mean.shape or a.covariance.shape != b.covariance.shape:
        raise ValueError(f"dimension mismatch: {a.mean.shape} vs {b.mean.shape}")
    diff = a.mean - b.mean
    ra = _sqrt_psd(a.covariance)
    inner = ra @ b.covariance @ ra
    w = np.linalg.eigvalsh(0.5 * (inner + inner.T))
    # round-off can push tiny eigenvalues slightly negative; small positive ones are real
    w = np.clip(w, 0.0, None)
    tr_covmean = np.sqrt(w).sum()
    d = float(diff @ diff + np.trace(a.covariance) + np.trace(b.covariance) - 2.0 * tr_covmean)
    return max(d, 0.0)


class RandomProjectionFeatures:
    """Average-pool to ``pool x pool``, flatten, project with a fixed Gaussian matrix."""

    def __init__(self, in_channels: int = 1, dim: int = 64, pool: int = 8, seed: int = 0):
        self.pool = pool
        self.dim = dim
        rng = np.random.default_rng(seed)
        d_in = in_channels * pool * pool
        self.matrix = torch.from_numpy(rng.standard_normal((d_in, dim)) / np.sqrt(d_in))

    def __call__(self, images: torch.Tensor) -> torch.Tensor:
        x = images.detach().to(torch.float64).cpu()
        if x.shape[-1] != self.pool or x.shape[-2] != self.pool:
            x = F.adaptive_avg_pool2d(x, self.pool)
        return x.flatten(1) @ self.matrix


FeatureExtractor = Callable[[torch.Tensor], torch.Tensor]


def image_distance(x: torch.Tensor, y: torch.Tensor, extractor: FeatureExtractor) -> float:
    """Frechet distance between two image sets under ``extractor``."""
    return frechet_distance(FeatureStats.from_features(extractor(x)), FeatureStats.from_features(extractor(y)))


def frequency_sweep(
    checkpoints: Sequence,
    dataset: torch.Tensor,
    sigmas: Sequence[float] = (0.0, 1.0, 2.0, 4.0, 8.0),
    samples_per_point: int = 64,
    *,
    extractor: FeatureExtractor | None = None,
    seed: int = 0,
    sampler: Callable | None = None,
) -> list[dict]:
    """Distance between generated samples and the dataset per (checkpoint, blur sigma).

    ``checkpoints`` are checkpoint paths or already-loaded ``TrainState``
    objects; all must share schedule and model configuration. Samples are
    drawn once per checkpoint and blurred at each sigma together with the
    dataset. ``sampler(state, n, generator)`` overrides unconditional
    generation.
    """
    from .reverse_process import generate
    from .trainer import TrainState, load_checkpoint

    rows: list[dict] = []
    if len(checkpoints) == 0:
        return rows
    states = [c if isinstance(c, TrainState) else load_checkpoint(c) for c in checkpoints]
    ref = states[0].config
    for st in states[1:]:
        if st.config.schedule != ref.schedule or st.config.model != ref.model:
            raise ValueError("checkpoints in a sweep must share schedule and model configuration")
    sched, cfg = ref.schedule.build()
    if extractor is None:
        extractor = RandomProjectionFeatures(in_channels=dataset.shape[1], dim=ref.freq_sweep.feature_dim,
                                             seed=ref.freq_sweep.feature_seed)
    blurred_data = {s: gaussian_blur(dataset.to(torch.float64), s) for s in sigmas}
    data_stats = {s: FeatureStats.from_features(extractor(blurred_data[s])) for s in sigmas}
    for st in states:
        gen = torch.Generator().manual_seed(seed)
        if sampler is not None:
            samples = sampler(st, samples_per_point, gen)
        else:
            samples = generate(st.sampling_model, samples_per_point, sched, cfg, generator=gen)
        for s in sigmas:
            stats = FeatureStats.from_features(extractor(gaussian_blur(samples, s)))
            dist = frechet_distance(stats, data_stats[s])
            rows.append({"checkpoint_step": st.step, "sigma": float(s), "distance": dist,
                         "n_samples": samples_per_point})
            log.info("step %d sigma %.2f distance %.4f", st.step, s, dist)
    return rows


TABLE_FIELDS = ("checkpoint_step", "sigma", "distance", "n_samples")


def write_table(rows: list[dict], path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=TABLE_FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow({k: r[k] for k in TABLE_FIELDS})
    return path


def read_table(path: str | Path) -> list[dict]:
    with open(path, newline="") as f:
        return [
            {"checkpoint_step": int(r["checkpoint_step"]), "sigma": float(r["sigma"]),
             "distance": float(r["distance"]), "n_samples": int(r["n_samples"])}
            for r in csv.DictReader(f)
        ]


def plot_heatmap(rows: list[dict], path: str | Path) -> Path:
    """Checkpoint x sigma heatmap of the distances."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    steps = sorted({r["checkpoint_step"] for r in rows})
    sigmas = sorted({r["sigma"] for r in rows})
    grid = np.full((len(sigmas), len(steps)), np.nan)
    for r in rows:
        grid[sigmas.index(r["sigma"]), steps.index(r["checkpoint_step"])] = r["distance"]
    fig, ax = plt.subplots(figsize=(1 + 0.8 * max(len(steps), 1), 1 + 0.6 * max(len(sigmas), 1)))
    im = ax.imshow(grid, aspect="auto", cmap="viridis")
    ax.set_xticks(range(len(steps)), [str(s) for s in steps], rotation=45)
    ax.set_yticks(range(len(sigmas)), [f"{s:g}" for s in sigmas])
    ax.set_xlabel("checkpoint step")
    ax.set_ylabel("blur sigma")
    fig.colorbar(im, ax=ax, label="distance")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return Path(path)
