"""Noise-prediction loss, training loop and checkpoint I/O."""

from __future__ import annotations

import copy
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch
import torch.nn.functional as F

from .config import RunConfig
from .denoiser import UNet, build_denoiser
from .errors import CheckpointError, NumericalError
from .forward_process import sample_forward
from .schedule import HybridNoiseConfig, NoiseSchedule, edge_sensitivity, transition_value

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = 1


def training_loss(
    model,
    x0: torch.Tensor,
    t: torch.Tensor,
    epsilon: torch.Tensor,
    sched: NoiseSchedule,
    cfg: HybridNoiseConfig,
    grad: torch.Tensor | None = None,
) -> torch.Tensor:
    """Mean squared error between f(x_t, t) and the injected noise sigma_t * eps."""
    if epsilon.shape != x0.shape:
        raise ValueError(f"epsilon shape {tuple(epsilon.shape)} != x0 shape {tuple(x0.shape)}")
    fs = sample_forward(x0, t, sched, cfg, noise=epsilon, grad=grad)
    target = fs.sigma_t * fs.epsilon
    return F.mse_loss(model(fs.x_t, t), target)


@dataclass
class TrainState:
    model: UNet
    optimizer: torch.optim.Optimizer
    step: int
    seed: int
    config: RunConfig
    ema: UNet | None = None
    history: list[tuple[int, float]] = field(default_factory=list)

    @property
    def sampling_model(self) -> UNet:
        return self.ema if self.ema is not None else self.model


def init_state(config: RunConfig) -> TrainState:
    torch.manual_seed(config.trainer.seed)
    model = build_denoiser(config.model.arch())
    opt = torch.optim.Adam(model.parameters(), lr=config.trainer.lr)
    ema = copy.deepcopy(model).requires_grad_(False) if config.trainer.ema_decay else None
    return TrainState(model=model, optimizer=opt, step=0, seed=config.trainer.seed, config=config, ema=ema)


def _step_generator(seed: int, step: int) -> torch.Generator:
    # batch contents depend only on (seed, step), so a resumed run replays exactly
    return torch.Generator().manual_seed(int(seed) * 1_000_003 + int(step))


def _nan_report(t: torch.Tensor, sched: NoiseSchedule, cfg: HybridNoiseConfig) -> str:
    steps = t.cpu().numpy()
    counts, edges = np.histogram(steps, bins=min(10, sched.T), range=(0, sched.T))
    lines = ["t-bin        count  lambda(t)   tau(t)"]
    for c, lo, hi in zip(counts, edges[:-1], edges[1:]):
        mid = min(int((lo + hi) / 2), sched.T - 1)
        lines.append(
            f"[{int(lo):4d},{int(hi):4d}) {c:6d}  {edge_sensitivity(mid, cfg, sched.T):.3e}  "
            f"{transition_value(mid, cfg, sched.T):.3f}"
        )
    return "\n".join(lines)


def train(
    images: torch.Tensor,
    config: RunConfig,
    *,
    state: TrainState | None = None,
    grads: torch.Tensor | None = None,
    iterations: int | None = None,
    out_dir: str | Path | None = None,
    callback: Callable[[TrainState, float], None] | None = None,
) -> TrainState:
    """Train (or resume) a denoiser on an in-memory [N, C, H, W] image set.

    Every iteration draws a batch with replacement, one uniform timestep and a
    fresh eps per example. ``grads`` holds precomputed gradient fields of
    ``images``; without it they are computed on the fly. With ``out_dir`` set,
    checkpoints are written every ``checkpoint_every`` steps and a
    ``step, loss, wall_time`` log is appended to ``train_log.csv``.
    """
    if state is None:
        state = init_state(config)
    tc = config.trainer
    total = tc.iterations if iterations is None else iterations
    sched, cfg = config.schedule.build()
    model = state.model
    device = next(model.parameters()).device
    dtype = next(model.parameters()).dtype
    images = images.to(device=device, dtype=dtype)
    if grads is not None:
        grads = grads.to(device=device, dtype=dtype)
    log_file = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        log_file = open(out_dir / "train_log.csv", "a")
    t_start = time.time()
    model.train()
    try:
        while state.step < total:
            gen = _step_generator(state.seed, state.step)
            idx = torch.randint(len(images), (tc.batch_size,), generator=gen)
            t = torch.randint(sched.T, (tc.batch_size,), generator=gen)
            eps = torch.randn((tc.batch_size, *images.shape[1:]), generator=gen).to(device=device, dtype=dtype)
            x0 = images[idx.to(device)]
            g = grads[idx.to(device)] if grads is not None else None
            if config.data.augment_flip:
                flip = (torch.rand(tc.batch_size, generator=gen) < 0.5).to(device)[:, None, None, None]
                x0 = torch.where(flip, x0.flip(-1), x0)
                if g is not None:
                    g = torch.where(flip, g.flip(-1), g)
            loss = training_loss(model, x0, t.to(device), eps, sched, cfg, grad=g)
            if not torch.isfinite(loss):
                raise NumericalError(f"non-finite loss at step {state.step}\n{_nan_report(t, sched, cfg)}")
            state.optimizer.zero_grad(set_to_none=True)
            loss.backward()
            if tc.grad_clip:
                torch.nn.utils.clip_grad_norm_(model.parameters(), tc.grad_clip)
            state.optimizer.step()
            if state.ema is not None:
                with torch.no_grad():
                    for pe, p in zip(state.ema.parameters(), model.parameters()):
                        pe.lerp_(p, 1.0 - tc.ema_decay)
            state.step += 1
            value = loss.item()
            state.history.append((state.step, value))
            if log_file is not None and (state.step % tc.log_every == 0 or state.step == total):
                log_file.write(f"{state.step}, {value:.6g}, {time.time() - t_start:.2f}\n")
                log_file.flush()
            if out_dir is not None and tc.checkpoint_every and state.step % tc.checkpoint_every == 0:
                save_checkpoint(state, out_dir / f"ckpt_{state.step:07d}.pt")
            if callback is not None:
                callback(state, value)
    finally:
        if log_file is not None:
            log_file.close()
    return state


def smoothed(values, window: int = 100) -> np.ndarray:
    """Trailing moving average (shorter windows at the start)."""
    v = np.asarray(values, dtype=np.float64)
    c = np.cumsum(np.insert(v, 0, 0.0))
    idx = np.arange(1, len(v) + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


def save_checkpoint(state: TrainState, path: str | Path) -> Path:
    """Atomically write a single-file checkpoint."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": CHECKPOINT_FORMAT,
        "config": state.config.to_dict(),
        "model": state.model.state_dict(),
        "optimizer": state.optimizer.state_dict(),
        "ema": state.ema.state_dict() if state.ema is not None else None,
        "step": state.step,
        "seed": state.seed,
    }
    tmp = path.with_name(path.name + ".tmp")
    torch.save(payload, tmp)
    os.replace(tmp, path)
    return path


def load_checkpoint(path: str | Path, expected: RunConfig | None = None, map_location="cpu") -> TrainState:
    """Restore a :class:`TrainState`.

    If ``expected`` is given, its schedule and model blocks must match the
    snapshot stored in the checkpoint.
    """
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location=map_location, weights_only=True)
    except Exception as e:  # torch raises a variety of unpickling errors
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    version = payload.get("format_version") if isinstance(payload, dict) else None
    if version != CHECKPOINT_FORMAT:
        raise CheckpointError(
            f"unsupported checkpoint format version {version!r} in {path} (expected {CHECKPOINT_FORMAT})"
        )
    config = RunConfig.from_dict(payload["config"])
    if expected is not None:
        for block in ("schedule", "model"):
            have, want = getattr(config, block), getattr(expected, block)
            if have != want:
                raise CheckpointError(f"checkpoint {block} {have} does not match runtime {block} {want}")
    state = init_state(config)
    state.model.load_state_dict(payload["model"])
    state.optimizer.load_state_dict(payload["optimizer"])
    if payload["ema"] is not None:
        if state.ema is None:
            state.ema = copy.deepcopy(state.model).requires_grad_(False)
        state.ema.load_state_dict(payload["ema"])
    state.step = int(payload["step"])
    state.seed = int(payload["seed"])
    return state

