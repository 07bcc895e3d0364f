"""Image loading, normalization, synthetic toy data and gradient caching."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np
import torch
from PIL import Image

from .edge_field import gradient_magnitude
from .errors import DataError

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".gif", ".tif", ".tiff", ".webp"}


@dataclass(frozen=True)
class DatasetSpec:
    root_path: str
    resolution: int = 16
    channels: int = 1
    augment_flip: bool = False


def normalize(pixels: np.ndarray) -> np.ndarray:
    """uint8 [0, 255] -> float64 [-1, 1]."""
    return np.asarray(pixels, dtype=np.float64) / 127.5 - 1.0


def denormalize(x) -> np.ndarray:
    """[-1, 1] -> uint8 via (x + 1) / 2 * 255, rounding half to even."""
    if torch.is_tensor(x):
        x = x.detach().cpu().numpy()
    return np.clip(np.rint((np.asarray(x, dtype=np.float64) + 1.0) / 2.0 * 255.0), 0, 255).astype(np.uint8)


def _decode(path: Path, spec: DatasetSpec) -> np.ndarray:
    with Image.open(path) as im:
        im = im.convert("L" if spec.channels == 1 else "RGB")
        w, h = im.size
        scale = spec.resolution / min(w, h)
        nw, nh = max(spec.resolution, round(w * scale)), max(spec.resolution, round(h * scale))
        im = im.resize((nw, nh), Image.BILINEAR)
        left, top = (nw - spec.resolution) // 2, (nh - spec.resolution) // 2
        im = im.crop((left, top, left + spec.resolution, top + spec.resolution))
        arr = np.asarray(im)
    if arr.ndim == 2:
        arr = arr[None]
    else:
        arr = arr.transpose(2, 0, 1)
    return normalize(arr)


def list_images(root: str | Path) -> list[Path]:
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset directory not found: {root}")
    return sorted(p for p in root.rglob("*") if p.suffix.lower() in IMAGE_SUFFIXES and ".gradcache" not in p.parts)


def load_images(spec: DatasetSpec) -> torch.Tensor:
    """Decode every image under ``spec.root_path`` into one [N, C, R, R] float32 tensor."""
    if spec.channels not in (1, 3):
        raise DataError(f"channels must be 1 or 3, got {spec.channels}")
    arrays = []
    for p in list_images(spec.root_path):
        try:
            arrays.append(_decode(p, spec))
        except (OSError, ValueError) as e:
            log.warning("skipping undecodable image %s: %s", p, e)
    if not arrays:
        raise DataError(f"no decodable images in {spec.root_path}")
    return torch.from_numpy(np.stack(arrays)).float()


def load_dataset(spec: DatasetSpec, batch_size: int = 64, shuffle_seed: int | None = 0) -> Iterator[torch.Tensor]:
    """Yield batches of normalized images; order is fixed by ``shuffle_seed`` (None keeps file order)."""
    images = load_images(spec)
    rng = np.random.default_rng(shuffle_seed)
    order = np.arange(len(images)) if shuffle_seed is None else rng.permutation(len(images))
    for i in range(0, len(order), batch_size):
        batch = images[torch.from_numpy(order[i : i + batch_size])]
        if spec.augment_flip:
            flip = torch.from_numpy(rng.random(len(batch)) < 0.5)
            batch = torch.where(flip[:, None, None, None], batch.flip(-1), batch)
        yield batch


def make_toy_edges(n: int, resolution: int = 16, rng: np.random.Generator | int | None = 0) -> torch.Tensor:
    """Two-tone images with sharp straight boundaries: half-planes or rectangles.

    Each image uses exactly two gray levels, one in [-1, -0.9] and one in
    [0.9, 1]. Returns an [n, 1, R, R] float32 tensor.
    """
    if resolution < 8:
        raise ValueError(f"resolution must be >= 8, got {resolution}")
    rng = np.random.default_rng(rng)
    r = resolution
    yy, xx = np.mgrid[0:r, 0:r] + 0.5
    out = np.empty((n, 1, r, r), dtype=np.float32)
    for i in range(n):
        if rng.random() < 0.5:
            angle = rng.uniform(0, 2 * np.pi)
            cx, cy = rng.uniform(0.3, 0.7, 2) * r
            mask = (xx - cx) * np.cos(angle) + (yy - cy) * np.sin(angle) > 0
        else:
            lo, hi = max(2, r // 4), max(3, r // 2 + 1)
            h, w = rng.integers(lo, hi + 1, 2)
            y0, x0 = rng.integers(1, r - h), rng.integers(1, r - w)
            mask = np.zeros((r, r), dtype=bool)
            mask[y0 : y0 + h, x0 : x0 + w] = True
        dark, bright = rng.uniform(-1.0, -0.9), rng.uniform(0.9, 1.0)
        if rng.random() < 0.5:
            mask = ~mask
        out[i, 0] = np.where(mask, bright, dark)
    return torch.from_numpy(out)


def content_hash(image: torch.Tensor) -> str:
    arr = np.ascontiguousarray(image.detach().cpu().numpy())
    h = hashlib.sha256(arr.tobytes())
    h.update(str((arr.dtype, arr.shape)).encode())
    return h.hexdigest()


class GradientCache:
    """Content-addressed store of per-image gradient fields.

    Lives in memory and, when ``directory`` is given, as ``<hash>.npy`` files
    there. Unreadable or mismatched entries are recomputed.
    """

    def __init__(self, directory: str | Path | None = None, luminance: bool = False):
        self.directory = Path(directory) if directory is not None else None
        self.luminance = luminance
        self._mem: dict[str, torch.Tensor] = {}
        self.hits = 0
        self.misses = 0
        if self.directory is not None:
            self.directory.mkdir(parents=True, exist_ok=True)

    def _compute(self, image):
        return gradient_magnitude(image[None], luminance=self.luminance)[0]

    def get(self, image: torch.Tensor) -> torch.Tensor:
        key = content_hash(image)
        if key in self._mem:
            self.hits += 1
            return self._mem[key]
        grad = None
        if self.directory is not None:
            path = self.directory / f"{key}.npy"
            if path.exists():
                try:
                    arr = np.load(path)
                    if arr.shape == tuple(image.shape) and np.isfinite(arr).all():
                        grad = torch.from_numpy(arr).to(image.dtype)
                except (OSError, ValueError):
                    log.warning("corrupt gradient cache entry %s; recomputing", path)
        if grad is None:
            self.misses += 1
            grad = self._compute(image)
            if self.directory is not None:
                tmp = self.directory / f"{key}.tmp.npy"
                np.save(tmp, grad.cpu().numpy())
                tmp.replace(self.directory / f"{key}.npy")
        else:
            self.hits += 1
        self._mem[key] = grad
        return grad


def cached_gradient(images: torch.Tensor, cache: GradientCache | None = None) -> torch.Tensor:
    """Gradient fields for a whole [N, C, H, W] set, one cache lookup per image."""
    cache = cache if cache is not None else GradientCache()
    if len(images) == 0:
        return torch.empty_like(images)
    return torch.stack([cache.get(img) for img in images])


def default_cache_dir(root: str | Path) -> Path:
    return Path(root) / ".gradcache"


def save_image(x: torch.Tensor, path: str | Path) -> None:
    """Write a single [C, H, W] image in [-1, 1] as an 8-bit PNG."""
    arr = denormalize(x)
    arr = arr[0] if arr.shape[0] == 1 else arr.transpose(1, 2, 0)
    Image.fromarray(arr).save(path)


def make_grid(batch: torch.Tensor, ncol: int | None = None, pad: int = 1) -> torch.Tensor:
    """Tile an [N, C, H, W] batch into one [C, H', W'] image (padding is -1)."""
    n, c, h, w = batch.shape
    ncol = ncol or max(1, int(np.ceil(np.sqrt(n))))
    nrow = int(np.ceil(n / ncol))
    grid = batch.new_full((c, nrow * (h + pad) + pad, ncol * (w + pad) + pad), -1.0)
    for i in range(n):
        r, col = divmod(i, ncol)
        y, x = pad + r * (h + pad), pad + col * (w + pad)
        grid[:, y : y + h, x : x + w] = batch[i]
    return grid
