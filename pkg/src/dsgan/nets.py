"""Progressive generator and critic networks.

The generator maps a low-resolution field plus spatial latent noise to a
high-resolution field through resolution-doubling blocks (nearest-neighbor
upsample, then two leaky-ReLU convolutions inside a residual skip). The
critic mirrors it in reverse, replacing interpolation with a space-to-channel
rearrangement, and conditions on the LR field once the feature map is back at
LR resolution. Per-stage output heads / input heads support ProGAN-style
fade-in mixing, and both networks grow one stage at a time with seeded,
reproducible initialization.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field as dc_field

import torch
import torch.nn.functional as F
from torch import nn

__all__ = [
    "ModelConfig",
    "StagePosition",
    "Generator",
    "Critic",
    "build_generator",
    "build_critic",
    "space_to_channel",
    "critic_score",
    "derive_seed",
]


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def derive_seed(seed: int, label: str) -> int:
    """Stable 63-bit seed for a named component, independent of call order."""
    digest = hashlib.sha256(f"{seed}/{label}".encode()).digest()
    return int.from_bytes(digest[:8], "little") & 0x7FFF_FFFF_FFFF_FFFF


@dataclass(frozen=True)
class ModelConfig:
    """Architecture settings shared by generator and critic.

    width_schedule[k-1] is the feature width at stage k (output side
    lr_size * 2**k); when omitted it halves base_width per stage, floored
    at min_width.
    """

    in_channels: int
    lr_size: int = 8
    max_scale: int = 64
    base_width: int = 256
    width_schedule: tuple[int, ...] | None = None
    z_channels: int = 2
    leaky_slope: float = 0.2
    kernel_size: int = 3
    min_width: int = 32

    def __post_init__(self):
        if self.in_channels < 1:
            raise ValueError("in_channels must be positive")
        if self.lr_size < 1:
            raise ValueError("lr_size must be positive")
        if not _is_power_of_two(self.max_scale) or self.max_scale < 4:
            raise ValueError(f"max_scale must be a power of two >= 4, got {self.max_scale}")
        if self.kernel_size % 2 != 1:
            raise ValueError("kernel_size must be odd")
        if self.z_channels < 1:
            raise ValueError("z_channels must be positive")
        n = self.num_stages
        schedule = self.width_schedule
        if schedule is None:
            schedule = tuple(max(self.base_width >> k, self.min_width) for k in range(1, n + 1))
        else:
            schedule = tuple(int(w) for w in schedule)
        if len(schedule) != n:
            raise ValueError(f"width_schedule needs {n} entries for max_scale {self.max_scale}")
        if self.base_width < 8 or any(w < 8 for w in schedule):
            raise ValueError("feature widths must be >= 8")
        object.__setattr__(self, "width_schedule", schedule)

    @property
    def num_stages(self) -> int:
        return int(math.log2(self.max_scale))

    def stage_width(self, stage: int) -> int:
        """Feature width at a stage; stage 0 is the LR-resolution trunk."""
        if stage == 0:
            return self.base_width
        return self.width_schedule[stage - 1]

    def side(self, stage: int) -> int:
        return self.lr_size * (2 ** stage)


@dataclass(frozen=True)
class StagePosition:
    """Where training/inference sits: resolution stage and fade-in weight."""

    stage: int
    alpha: float = 1.0

    def __post_init__(self):
        if self.stage < 0:
            raise ValueError("stage must be >= 0")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")


def space_to_channel(x: torch.Tensor) -> torch.Tensor:
    """Rearrange each 2x2 spatial block into 4 channels, row-major:
    block [[a, b], [c, d]] becomes channels (a, b, c, d)."""
    b, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"spatial size {h}x{w} must be even")
    x = x.reshape(b, c, h // 2, 2, w // 2, 2)
    x = x.permute(0, 1, 3, 5, 2, 4)
    return x.reshape(b, c * 4, h // 2, w // 2)


def _init_conv(conv: nn.Conv2d, seed: int, slope: float) -> None:
    # He-style scaling for the leaky-ReLU nonlinearity; biases zero
    fan_in = conv.in_channels * conv.kernel_size[0] * conv.kernel_size[1]
    gain = math.sqrt(2.0 / (1.0 + slope * slope))
    std = gain / math.sqrt(fan_in)
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        conv.weight.copy_(torch.randn(conv.weight.shape, generator=g) * std)
        if conv.bias is not None:
            conv.bias.zero_()


class _ResBlock(nn.Module):
    """Two leaky-ReLU convolutions with a residual skip spanning both;
    the skip is a 1x1 projection when widths differ."""

    def __init__(self, in_ch: int, out_ch: int, kernel: int, slope: float, seed: int):
        super().__init__()
        pad = kernel // 2
        self.slope = slope
        self.conv1 = nn.Conv2d(in_ch, out_ch, kernel, padding=pad)
        self.conv2 = nn.Conv2d(out_ch, out_ch, kernel, padding=pad)
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else None
        _init_conv(self.conv1, derive_seed(seed, "conv1"), slope)
        _init_conv(self.conv2, derive_seed(seed, "conv2"), slope)
        if self.skip is not None:
            _init_conv(self.skip, derive_seed(seed, "skip"), slope)

    def forward(self, x):
        h = F.leaky_relu(self.conv1(x), self.slope)
        h = F.leaky_relu(self.conv2(h), self.slope)
        return h + (x if self.skip is None else self.skip(x))


class _DownscaleBlock(nn.Module):
    """Generator stage: 2x nearest-neighbor upsample, then the residual pair."""

    def __init__(self, in_ch: int, out_ch: int, kernel: int, slope: float, seed: int):
        super().__init__()
        self.res = _ResBlock(in_ch, out_ch, kernel, slope, seed)

    def forward(self, x):
        return self.res(F.interpolate(x, scale_factor=2, mode="nearest"))


class _UpscaleBlock(nn.Module):
    """Critic stage: space-to-channel rearrangement, then the residual pair."""

    def __init__(self, in_ch: int, out_ch: int, kernel: int, slope: float, seed: int):
        super().__init__()
        self.res = _ResBlock(in_ch * 4, out_ch, kernel, slope, seed)

    def forward(self, x):
        return self.res(space_to_channel(x))


class Generator(nn.Module):
    """Progressive conditional generator G(z, y).

    Holds an input head (LR field concatenated with latent noise), one
    downscale block per built stage, and per-stage output heads used for the
    fade-in mix. Stages are built up front or appended later via grow().
    """

    def __init__(self, config: ModelConfig, seed: int, stages: int | None = None):
        super().__init__()
        self.config = config
        self.seed = seed
        stages = config.num_stages if stages is None else stages
        if not 1 <= stages <= config.num_stages:
            raise ValueError(f"stages must lie in 1..{config.num_stages}")
        self.input_head = nn.Conv2d(
            config.in_channels + config.z_channels, config.base_width,
            config.kernel_size, padding=config.kernel_size // 2,
        )
        _init_conv(self.input_head, derive_seed(seed, "gen/input"), config.leaky_slope)
        self.blocks = nn.ModuleList()
        self.out_heads = nn.ModuleList([self._make_out_head(0)])
        for k in range(1, stages + 1):
            self._append_stage(k)

    def _make_out_head(self, stage: int) -> nn.Conv2d:
        head = nn.Conv2d(self.config.stage_width(stage), self.config.in_channels, 1)
        _init_conv(head, derive_seed(self.seed, f"gen/out{stage}"), 1.0)
        return head

    def _append_stage(self, stage: int) -> None:
        cfg = self.config
        self.blocks.append(_DownscaleBlock(
            cfg.stage_width(stage - 1), cfg.stage_width(stage),
            cfg.kernel_size, cfg.leaky_slope, derive_seed(self.seed, f"gen/block{stage}"),
        ))
        self.out_heads.append(self._make_out_head(stage))

    @property
    def built_stages(self) -> int:
        return len(self.blocks)

    def grow(self, new_stage: int) -> None:
        """Append the next stage; existing parameters are untouched and the
        new block's initialization depends only on (seed, stage)."""
        if new_stage != self.built_stages + 1:
            raise ValueError(
                f"can only grow from stage {self.built_stages} to {self.built_stages + 1}, "
                f"got {new_stage}"
            )
        if new_stage > self.config.num_stages:
            raise ValueError(f"network is capped at stage {self.config.num_stages}")
        self._append_stage(new_stage)

    def forward(self, y: torch.Tensor, z: torch.Tensor, pos: StagePosition) -> torch.Tensor:
        cfg = self.config
        if y.ndim != 4 or y.shape[1] != cfg.in_channels or y.shape[2:] != (cfg.lr_size, cfg.lr_size):
            raise ValueError(
                f"y must be (batch, {cfg.in_channels}, {cfg.lr_size}, {cfg.lr_size}), got {tuple(y.shape)}"
            )
        if z.shape != (y.shape[0], cfg.z_channels, cfg.lr_size, cfg.lr_size):
            raise ValueError(
                f"z must be (batch, {cfg.z_channels}, {cfg.lr_size}, {cfg.lr_size}), got {tuple(z.shape)}"
            )
        if not 1 <= pos.stage <= self.built_stages:
            raise ValueError(f"stage {pos.stage} not built (have 1..{self.built_stages})")
        f = F.leaky_relu(self.input_head(torch.cat([y, z], dim=1)), cfg.leaky_slope)
        for k in range(1, pos.stage):
            f = self.blocks[k - 1](f)
        new = self.out_heads[pos.stage](self.blocks[pos.stage - 1](f))
        if pos.alpha >= 1.0:
            return new
        old = F.interpolate(self.out_heads[pos.stage - 1](f), scale_factor=2, mode="nearest")
        return pos.alpha * new + (1.0 - pos.alpha) * old


class Critic(nn.Module):
    """Progressive conditional critic; critic_project returns the spatial
    latent projection P(x, y), and critic_score reduces it to a scalar."""

    def __init__(self, config: ModelConfig, seed: int, stages: int | None = None):
        super().__init__()
        self.config = config
        self.seed = seed
        stages = config.num_stages if stages is None else stages
        if not 1 <= stages <= config.num_stages:
            raise ValueError(f"stages must lie in 1..{config.num_stages}")
        self.from_grid = nn.ModuleList([self._make_from_grid(0)])
        self.blocks = nn.ModuleList()
        k = config.kernel_size
        self.fuse = nn.Conv2d(config.base_width + config.in_channels, config.base_width, k, padding=k // 2)
        self.latent_head = nn.Conv2d(config.base_width, config.z_channels, k, padding=k // 2)
        _init_conv(self.fuse, derive_seed(seed, "critic/fuse"), config.leaky_slope)
        _init_conv(self.latent_head, derive_seed(seed, "critic/latent"), 1.0)
        for s in range(1, stages + 1):
            self._append_stage(s)

    def _make_from_grid(self, stage: int) -> nn.Conv2d:
        head = nn.Conv2d(self.config.in_channels, self.config.stage_width(stage), 1)
        _init_conv(head, derive_seed(self.seed, f"critic/from{stage}"), self.config.leaky_slope)
        return head

    def _append_stage(self, stage: int) -> None:
        cfg = self.config
        self.blocks.append(_UpscaleBlock(
            cfg.stage_width(stage), cfg.stage_width(stage - 1),
            cfg.kernel_size, cfg.leaky_slope, derive_seed(self.seed, f"critic/block{stage}"),
        ))
        self.from_grid.append(self._make_from_grid(stage))

    @property
    def built_stages(self) -> int:
        return len(self.blocks)

    def grow(self, new_stage: int) -> None:
        if new_stage != self.built_stages + 1:
            raise ValueError(
                f"can only grow from stage {self.built_stages} to {self.built_stages + 1}, "
                f"got {new_stage}"
            )
        if new_stage > self.config.num_stages:
            raise ValueError(f"network is capped at stage {self.config.num_stages}")
        self._append_stage(new_stage)

    def forward(self, x: torch.Tensor, y: torch.Tensor, pos: StagePosition) -> torch.Tensor:
        cfg = self.config
        side = cfg.side(pos.stage)
        if x.ndim != 4 or x.shape[1] != cfg.in_channels or x.shape[2:] != (side, side):
            raise ValueError(
                f"x must be (batch, {cfg.in_channels}, {side}, {side}) at stage {pos.stage}, "
                f"got {tuple(x.shape)}"
            )
        if y.shape != (x.shape[0], cfg.in_channels, cfg.lr_size, cfg.lr_size):
            raise ValueError(
                f"y must be (batch, {cfg.in_channels}, {cfg.lr_size}, {cfg.lr_size}), got {tuple(y.shape)}"
            )
        if not 1 <= pos.stage <= self.built_stages:
            raise ValueError(f"stage {pos.stage} not built (have 1..{self.built_stages})")
        slope = cfg.leaky_slope
        f = self.blocks[pos.stage - 1](F.leaky_relu(self.from_grid[pos.stage](x), slope))
        if pos.alpha < 1.0:
            x_down = F.avg_pool2d(x, 2)
            f_old = F.leaky_relu(self.from_grid[pos.stage - 1](x_down), slope)
            f = pos.alpha * f + (1.0 - pos.alpha) * f_old
        for k in range(pos.stage - 1, 0, -1):
            f = self.blocks[k - 1](f)
        f = F.leaky_relu(self.fuse(torch.cat([f, y], dim=1)), slope)
        return self.latent_head(f)


def critic_score(projection: torch.Tensor) -> torch.Tensor:
    """Mean of all projection entries; per sample when batched (4-D input)."""
    if projection.ndim == 4:
        return projection.mean(dim=(1, 2, 3))
    return projection.mean()


def build_generator(config: ModelConfig, seed: int, stages: int | None = None) -> Generator:
    """Generator with seeded, order-independent initialization. Building a
    shallow network and growing it reproduces a deep build bit-for-bit."""
    return Generator(config, seed, stages)


def build_critic(config: ModelConfig, seed: int, stages: int | None = None) -> Critic:
    return Critic(config, seed, stages)
