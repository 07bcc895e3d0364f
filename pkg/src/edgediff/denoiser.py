"""Time-conditioned U-Net predicting the (non-isotropic) noise sigma_t * eps."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

import torch
import torch.nn as nn
import torch.nn.functional as F


@dataclass(frozen=True)
class ArchConfig:
    image_size: int = 16
    in_channels: int = 1
    base_channels: int = 32
    channel_mult: tuple[int, ...] = (1, 2, 2)
    num_res_blocks: int = 1
    attention_resolutions: tuple[int, ...] = ()
    time_embed_dim: int = 128
    dropout: float = 0.0
    norm_groups: int = 8

    def __post_init__(self):
        object.__setattr__(self, "channel_mult", tuple(self.channel_mult))
        object.__setattr__(self, "attention_resolutions", tuple(self.attention_resolutions))

    @property
    def downsample_factor(self) -> int:
        return 2 ** (len(self.channel_mult) - 1)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channel_mult"] = list(self.channel_mult)
        d["attention_resolutions"] = list(self.attention_resolutions)
        return d


PRESETS: dict[str, ArchConfig] = {
    "tiny": ArchConfig(),
    "small": ArchConfig(image_size=32, base_channels=64, channel_mult=(1, 2, 2), num_res_blocks=2,
                        attention_resolutions=(8,), time_embed_dim=256),
    "default": ArchConfig(image_size=128, in_channels=3, base_channels=64, channel_mult=(1, 1, 2, 2, 4),
                          num_res_blocks=2, attention_resolutions=(16,), time_embed_dim=256),
}


def arch_from_preset(preset: str, **overrides) -> ArchConfig:
    if preset not in PRESETS:
        raise ValueError(f"unknown model preset {preset!r}; choose from {sorted(PRESETS)}")
    return replace(PRESETS[preset], **overrides)


def timestep_embedding(t: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float64, device=t.device) / half)
    args = t.to(torch.float64)[:, None] * freqs[None]
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    if dim % 2:
        emb = F.pad(emb, (0, 1))
    return emb


def _norm(ch: int, groups: int) -> nn.GroupNorm:
    g = math.gcd(ch, groups)
    return nn.GroupNorm(g, ch)


class ResBlock(nn.Module):
    """Two 3x3 convs with a residual path; the time embedding is added to the output."""

    def __init__(self, in_ch, out_ch, temb_dim, groups, dropout=0.0):
        super().__init__()
        self.norm1 = _norm(in_ch, groups)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.norm2 = _norm(out_ch, groups)
        self.dropout = nn.Dropout(dropout)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()
        self.temb_proj = nn.Linear(temb_dim, out_ch)

    def forward(self, x, temb):
        h = self.conv1(F.silu(self.norm1(x)))
        h = self.conv2(self.dropout(F.silu(self.norm2(h))))
        h = h + self.skip(x)
        return h + self.temb_proj(F.silu(temb))[:, :, None, None]


class AttnBlock(nn.Module):
    def __init__(self, ch, groups):
        super().__init__()
        self.norm = _norm(ch, groups)
        self.qkv = nn.Conv2d(ch, 3 * ch, 1)
        self.proj = nn.Conv2d(ch, ch, 1)

    def forward(self, x, temb=None):
        n, c, h, w = x.shape
        q, k, v = self.qkv(self.norm(x)).reshape(n, 3, c, h * w).unbind(1)
        attn = torch.softmax(torch.einsum("ncq,nck->nqk", q, k) / math.sqrt(c), dim=-1)
        out = torch.einsum("nqk,nck->ncq", attn, v).reshape(n, c, h, w)
        return x + self.proj(out)


class Downsample(nn.Module):
    def __init__(self, ch):
        super().__init__()
        self.conv = nn.Conv2d(ch, ch, 3, stride=2, padding=1)

    def forward(self, x, temb=None):
        return self.conv(x)


class Upsample(nn.Module):
    def __init__(self, ch):
        super().__init__()
        self.conv = nn.Conv2d(ch, ch, 3, padding=1)

    def forward(self, x, temb=None):
        return self.conv(F.interpolate(x, scale_factor=2, mode="nearest"))


class UNet(nn.Module):
    def __init__(self, arch: ArchConfig):
        super().__init__()
        self.arch = arch
        ch0 = arch.base_channels
        g = arch.norm_groups
        tdim = arch.time_embed_dim
        self.time_mlp = nn.Sequential(nn.Linear(ch0, tdim), nn.SiLU(), nn.Linear(tdim, tdim))
        self.conv_in = nn.Conv2d(arch.in_channels, ch0, 3, padding=1)

        self.down = nn.ModuleList()
        skip_chs = [ch0]
        ch, res = ch0, arch.image_size
        for level, mult in enumerate(arch.channel_mult):
            for _ in range(arch.num_res_blocks):
                blocks = [ResBlock(ch, ch0 * mult, tdim, g, arch.dropout)]
                ch = ch0 * mult
                if res in arch.attention_resolutions:
                    blocks.append(AttnBlock(ch, g))
                self.down.append(nn.ModuleList(blocks))
                skip_chs.append(ch)
            if level != len(arch.channel_mult) - 1:
                self.down.append(nn.ModuleList([Downsample(ch)]))
                skip_chs.append(ch)
                res //= 2

        self.mid = nn.ModuleList([ResBlock(ch, ch, tdim, g), AttnBlock(ch, g), ResBlock(ch, ch, tdim, g)])

        self.up = nn.ModuleList()
        for level, mult in reversed(list(enumerate(arch.channel_mult))):
            for _ in range(arch.num_res_blocks + 1):
                blocks = [ResBlock(ch + skip_chs.pop(), ch0 * mult, tdim, g, arch.dropout)]
                ch = ch0 * mult
                if res in arch.attention_resolutions:
                    blocks.append(AttnBlock(ch, g))
                self.up.append(nn.ModuleList(blocks))
            if level != 0:
                self.up.append(nn.ModuleList([Upsample(ch)]))
                res *= 2

        self.norm_out = _norm(ch, g)
        self.conv_out = nn.Conv2d(ch, arch.in_channels, 3, padding=1)

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return (self.arch.in_channels, self.arch.image_size, self.arch.image_size)

    @staticmethod
    def _run(blocks, h, temb):
        for b in blocks:
            h = b(h, temb)
        return h

    def forward(self, x: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != self.arch.in_channels:
            raise ValueError(f"expected [N, {self.arch.in_channels}, H, W] input, got {tuple(x.shape)}")
        f = self.arch.downsample_factor
        if x.shape[-1] % f or x.shape[-2] % f:
            raise ValueError(f"spatial size {tuple(x.shape[-2:])} not divisible by downsampling factor {f}")
        t = torch.as_tensor(t, device=x.device)
        if t.ndim == 0:
            t = t.expand(x.shape[0])
        temb = self.time_mlp(timestep_embedding(t, self.arch.base_channels).to(x.dtype))

        h = self.conv_in(x)
        hs = [h]
        for blocks in self.down:
            h = self._run(blocks, h, temb)
            hs.append(h)
        h = self._run(self.mid, h, temb)
        for blocks in self.up:
            if isinstance(blocks[0], Upsample):
                h = blocks[0](h)
            else:
                h = self._run(blocks, torch.cat([h, hs.pop()], dim=1), temb)
        return self.conv_out(F.silu(self.norm_out(h)))


def build_denoiser(arch: ArchConfig | str = "tiny", **overrides) -> UNet:
    """Build a U-Net from an :class:`ArchConfig` or a preset name."""
    if isinstance(arch, str):
        arch = arch_from_preset(arch, **overrides)
    elif overrides:
        arch = replace(arch, **overrides)
    if len(arch.channel_mult) < 1 or arch.num_res_blocks < 1:
        raise ValueError("model needs at least one resolution level and one residual block per level")
    if arch.base_channels < 1 or arch.time_embed_dim < 1:
        raise ValueError("channel widths must be positive")
    if arch.in_channels not in (1, 3):
        raise ValueError(f"in_channels must be 1 or 3, got {arch.in_channels}")
    f = arch.downsample_factor
    if f > arch.image_size or arch.image_size % f:
        raise ValueError(
            f"{len(arch.channel_mult)} resolution levels downsample by {f}, "
            f"which does not fit image_size={arch.image_size}"
        )
    return UNet(arch)


def predict_noise(model: UNet, x_t: torch.Tensor, t) -> torch.Tensor:
    """Evaluation-mode forward pass."""
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            return model(x_t, t)
    finally:
        model.train(was_training)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
