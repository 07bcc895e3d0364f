"""Run-level helpers shared by the command line and the acceptance suite."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import torch

from .config import RunConfig, save_config, validate
from .data import DatasetSpec, GradientCache, cached_gradient, default_cache_dir, load_images, make_toy_edges
from .errors import ConfigError
from .evaluation import RandomProjectionFeatures, image_distance
from .reverse_process import generate
from .trainer import TrainState, init_state, save_checkpoint, train

log = logging.getLogger(__name__)

ABLATION_AXES = ("transition_fn", "t_phi", "lambda")


def dataset_from_config(cfg: RunConfig) -> torch.Tensor:
    d = cfg.data
    if d.root is None:
        if d.channels != 1:
            raise ConfigError("the synthetic toy dataset is single-channel; set data.channels = 1")
        return make_toy_edges(d.toy_n, d.resolution, d.toy_seed)
    return load_images(DatasetSpec(d.root, d.resolution, d.channels, d.augment_flip))


def gradients_for(cfg: RunConfig, images: torch.Tensor) -> torch.Tensor | None:
    if not cfg.data.cache_gradients:
        return None
    directory = default_cache_dir(cfg.data.root) if cfg.data.root is not None else None
    return cached_gradient(images, GradientCache(directory))


def run_training(cfg: RunConfig, out_dir: str | Path, images: torch.Tensor | None = None,
                 device: str = "cpu") -> TrainState:
    """Train per ``cfg`` and leave checkpoints, ``final.pt`` and ``config.yaml`` in ``out_dir``."""
    validate(cfg)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out_dir / "config.yaml")
    if images is None:
        images = dataset_from_config(cfg)
    state = init_state(cfg)
    state.model.to(device)
    state = train(images, cfg, state=state, grads=gradients_for(cfg, images), out_dir=out_dir)
    save_checkpoint(state, out_dir / "final.pt")
    return state


def ablation_grid(cfg: RunConfig, axis: str) -> list[tuple[str, dict]]:
    """(tag, schedule overrides) for every cell along ``axis``."""
    a = cfg.ablate
    if axis == "t_phi":
        return [(f"t_phi={v:g}", {"t_phi": float(v)}) for v in a.t_phi]
    if axis == "transition_fn":
        return [(f"transition={v}", {"transition_kind": v}) for v in a.transition_fn]
    if axis == "lambda":
        cells = []
        for kind, lo, hi in a.lambda_:
            cells.append((f"lambda={kind}[{lo:g},{hi:g}]",
                          {"lambda_kind": kind, "lambda_min": float(lo), "lambda_max": float(hi)}))
        return cells
    raise ConfigError(f"unknown ablation axis {axis!r}; choose from {ABLATION_AXES}")


def _run_cell(args):
    tag, cfg_dict, out_dir, samples, seed = args
    cfg = RunConfig.from_dict(cfg_dict)
    images = dataset_from_config(cfg)
    state = run_training(cfg, out_dir, images=images)
    sched, hcfg = cfg.schedule.build()
    gen = torch.Generator().manual_seed(seed)
    x = generate(state.sampling_model, samples, sched, hcfg, generator=gen)
    extractor = RandomProjectionFeatures(in_channels=images.shape[1], dim=cfg.freq_sweep.feature_dim,
                                         seed=cfg.freq_sweep.feature_seed)
    dist = image_distance(x, images.to(torch.float64), extractor)
    result = {"tag": tag, "distance": dist, "n_samples": samples, "final_loss": state.history[-1][1]
              if state.history else None, "config_hash": cfg.hash()}
    (Path(out_dir) / "result.json").write_text(json.dumps(result, indent=2))
    return result


def run_ablation(cfg: RunConfig, axis: str, out_dir: str | Path, parallel: bool | None = None) -> list[dict]:
    """Train one child run per grid cell and score each with the proxy distance."""
    out_dir = Path(out_dir)
    jobs = []
    for tag, overrides in ablation_grid(cfg, axis):
        child = cfg.replace(schedule=overrides, name=f"{cfg.name}/{tag}")
        if cfg.ablate.iterations is not None:
            child.trainer.iterations = cfg.ablate.iterations
        validate(child)
        jobs.append((tag, child.to_dict(), str(out_dir / tag), cfg.ablate.samples, cfg.trainer.seed))
    parallel = cfg.ablate.parallel if parallel is None else parallel
    if parallel and len(jobs) > 1:
        with ProcessPoolExecutor() as pool:
            results = list(pool.map(_run_cell, jobs))
    else:
        results = [_run_cell(j) for j in jobs]
    for r in results:
        r["axis"] = axis
    return results
