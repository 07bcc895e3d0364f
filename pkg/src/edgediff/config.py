"""Run configuration: nested dataclasses, YAML I/O and named presets."""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .denoiser import ArchConfig, arch_from_preset
from .errors import ConfigError
from .schedule import HybridNoiseConfig, NoiseSchedule, make_beta_schedule


@dataclass
class ScheduleConfig:
    T: int = 500
    beta_min: float = 1e-4
    beta_max: float = 0.02
    transition_kind: str = "linear"
    t_phi: float = 0.5
    lambda_kind: str = "linear"
    lambda_min: float = 1e-4
    lambda_max: float = 1e-1
    lambda_direction: str = "increasing"

    def build(self) -> tuple[NoiseSchedule, HybridNoiseConfig]:
        try:
            sched = make_beta_schedule(self.T, self.beta_min, self.beta_max)
            cfg = HybridNoiseConfig(
                transition_kind=self.transition_kind,
                t_phi=self.t_phi,
                lambda_kind=self.lambda_kind,
                lambda_min=self.lambda_min,
                lambda_max=self.lambda_max,
                lambda_direction=self.lambda_direction,
            )
        except ValueError as e:
            raise ConfigError(f"schedule: {e}") from e
        return sched, cfg


@dataclass
class ModelConfig:
    preset: str = "tiny"
    image_size: int | None = None
    in_channels: int | None = None
    base_channels: int | None = None
    channel_mult: list[int] | None = None
    num_res_blocks: int | None = None
    attention_resolutions: list[int] | None = None
    time_embed_dim: int | None = None
    dropout: float | None = None

    def arch(self) -> ArchConfig:
        overrides = {k: v for k, v in dataclasses.asdict(self).items() if k != "preset" and v is not None}
        try:
            return arch_from_preset(self.preset, **overrides)
        except (ValueError, TypeError) as e:
            raise ConfigError(f"model: {e}") from e


@dataclass
class TrainerConfig:
    lr: float = 2e-5
    batch_size: int = 64
    iterations: int = 10000
    checkpoint_every: int = 1000
    log_every: int = 100
    seed: int = 0
    ema_decay: float | None = None
    grad_clip: float | None = 1.0


@dataclass
class DataConfig:
    root: str | None = None  # None selects the synthetic two-tone edge set
    resolution: int = 16
    channels: int = 1
    augment_flip: bool = False
    toy_n: int = 1000
    toy_seed: int = 0
    shuffle_seed: int = 0
    cache_gradients: bool = True


@dataclass
class SDEditConfig:
    k: int = 8
    hijack: float = 0.55
    grad_source: str = "predicted"  # or "guide"
    n_guides: int = 64


@dataclass
class FreqSweepConfig:
    sigmas: list[float] = field(default_factory=lambda: [0.0, 1.0, 2.0, 4.0, 8.0])
    samples_per_point: int = 64
    feature_dim: int = 64
    feature_seed: int = 0


@dataclass
class AblateConfig:
    t_phi: list[float] = field(default_factory=lambda: [0.25, 0.5, 0.75])
    transition_fn: list[str] = field(default_factory=lambda: ["linear", "cosine", "sigmoid"])
    # each entry: [lambda_kind, lambda_min, lambda_max]
    lambda_: list[list] = field(
        default_factory=lambda: [["constant", 1e-4, 1e-4], ["constant", 1e-1, 1e-1], ["linear", 1e-4, 1e-1]]
    )
    iterations: int | None = None
    samples: int = 64
    parallel: bool = False


@dataclass
class RunConfig:
    name: str = "run"
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    data: DataConfig = field(default_factory=DataConfig)
    sdedit: SDEditConfig = field(default_factory=SDEditConfig)
    freq_sweep: FreqSweepConfig = field(default_factory=FreqSweepConfig)
    ablate: AblateConfig = field(default_factory=AblateConfig)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["ablate"]["lambda"] = d["ablate"].pop("lambda_")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = copy.deepcopy(d)
        base = preset(d.pop("preset")) if "preset" in d else cls()
        return _merge(base, d, "")

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    def replace(self, **blocks) -> "RunConfig":
        """Copy with some fields of some blocks replaced, e.g. ``schedule={"t_phi": 0.25}``."""
        return _merge(copy.deepcopy(self), blocks, "")


def _merge(obj, updates: dict, path: str):
    if not isinstance(updates, dict):
        raise ConfigError(f"config block {path or '<root>'!r} must be a mapping")
    names = {f.name: f for f in dataclasses.fields(obj)}
    for key, value in updates.items():
        attr = "lambda_" if key == "lambda" and "lambda_" in names else key
        where = f"{path}{key}"
        if attr not in names:
            raise ConfigError(f"unknown config key {where!r}")
        current = getattr(obj, attr)
        if dataclasses.is_dataclass(current):
            _merge(current, value, where + ".")
        else:
            setattr(obj, attr, value)
    return obj


def ddpm_baseline() -> RunConfig:
    cfg = RunConfig(name="ddpm-baseline")
    cfg.schedule.transition_kind = "constant"
    return cfg


def toy() -> RunConfig:
    """Desk-scale run on 16x16 two-tone edges with the tiny U-Net."""
    cfg = RunConfig(name="toy")
    cfg.trainer.lr = 5e-4
    cfg.trainer.batch_size = 32
    cfg.trainer.iterations = 5000
    cfg.trainer.checkpoint_every = 1000
    return cfg


def toy_ddpm_baseline() -> RunConfig:
    cfg = toy()
    cfg.name = "toy-ddpm-baseline"
    cfg.schedule.transition_kind = "constant"
    return cfg


PRESETS = {
    "default": RunConfig,
    "ddpm-baseline": ddpm_baseline,
    "toy": toy,
    "toy-ddpm-baseline": toy_ddpm_baseline,
}


def preset(name: str) -> RunConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return PRESETS[name]()


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw: Any = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse {path}: {e}") from e
    return RunConfig.from_dict(raw)


def save_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))


def validate(cfg: RunConfig) -> RunConfig:
    """Build the pieces once to surface bad values early."""
    cfg.schedule.build()
    arch = cfg.model.arch()
    if arch.image_size != cfg.data.resolution:
        raise ConfigError(f"model.image_size={arch.image_size} != data.resolution={cfg.data.resolution}")
    if arch.in_channels != cfg.data.channels:
        raise ConfigError(f"model.in_channels={arch.in_channels} != data.channels={cfg.data.channels}")
    if cfg.trainer.batch_size < 1 or cfg.trainer.iterations < 0 or cfg.trainer.lr <= 0:
        raise ConfigError("trainer: batch_size >= 1, iterations >= 0 and lr > 0 required")
    if cfg.sdedit.grad_source not in ("predicted", "guide"):
        raise ConfigError(f"sdedit.grad_source must be 'predicted' or 'guide', got {cfg.sdedit.grad_source!r}")
    return cfg
