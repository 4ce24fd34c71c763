"""Conditional U-Net shared by both generative cores.

Input is the noisy grid stacked with the mixture grid (2 channels, fused by a
1x1 conv). Five convolution-attention blocks per side with stride-2 resampling
give a bottleneck at 1/32 resolution, where the visual condition vector is
fused in; the decoder mirrors the encoder with skip concatenation. The output
is a single-channel grid interpreted as predicted noise (ddpm) or velocity
(fm), so it is intentionally unclamped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

WS_EPS = 1e-5


CA_VARIANTS = ("r_tf_t", "r_r_r", "r_r_t", "r_r_tf")
FIM_VARIANTS = ("local_global", "concat", "pointwise", "local", "global")


@dataclass(frozen=True)
class UNetConfig:
    """Width/depth schedule. Bottleneck channels = base * multipliers[-1] = cond dim.

    ca_variant picks the sub-block composition of every CA block (ResNet plus
    which attention flavors); fim_variant picks how the bottleneck fuses the
    condition with audio features. Defaults are the full design; the
    alternatives exist for ablation runs.
    """

    base_channels: int = 32
    channel_multipliers: tuple[int, ...] = (1, 2, 4, 8, 8)
    groupnorm_groups: int = 8
    attn_heads: int = 4
    attn_head_dim: int = 16
    cond_dim: int | None = None
    ca_variant: str = "r_tf_t"
    fim_variant: str = "local_global"

    def __post_init__(self):
        if self.base_channels % 2:
            raise ValueError("base_channels must be even (sinusoidal features pair sin/cos)")
        for ch in self.channels:
            if ch % self.groupnorm_groups:
                raise ValueError(f"channel count {ch} not divisible by {self.groupnorm_groups} groups")
        expected = self.base_channels * self.channel_multipliers[-1]
        if self.cond_dim is not None and self.cond_dim != expected:
            raise ValueError(f"cond_dim {self.cond_dim} must equal bottleneck width {expected}")
        if self.ca_variant not in CA_VARIANTS:
            raise ValueError(f"ca_variant must be one of {CA_VARIANTS}")
        if self.fim_variant not in FIM_VARIANTS:
            raise ValueError(f"fim_variant must be one of {FIM_VARIANTS}")

    @property
    def levels(self) -> int:
        return len(self.channel_multipliers)

    @property
    def channels(self) -> tuple[int, ...]:
        return tuple(self.base_channels * m for m in self.channel_multipliers)

    @property
    def condition_dim(self) -> int:
        return self.cond_dim if self.cond_dim is not None else self.channels[-1]

    @property
    def time_dim(self) -> int:
        return 4 * self.base_channels

    @staticmethod
    def paper_scale() -> "UNetConfig":
        """Full-scale width: bottleneck and condition channels at 512."""
        return UNetConfig(base_channels=64)

    @staticmethod
    def desk() -> "UNetConfig":
        """CPU-trainable width (<5M parameters); bottleneck/condition at 128."""
        return UNetConfig(base_channels=16)


def sinusoidal_time_features(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Half-sin / half-cos features over geometric frequencies 1 .. 1e-4."""
    if dim % 2:
        raise ValueError("feature dim must be even")
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=t.dtype) / max(half - 1, 1)
    )
    args = t.reshape(-1, 1) * freqs.reshape(1, -1)
    return torch.cat([torch.sin(args), torch.cos(args)], dim=-1)


class TimeEmbedding(nn.Module):
    """Sinusoidal encoding of the generation position, lifted by a 2-layer SiLU MLP.

    ddpm timesteps are integers in 1..total_steps and enter the encoding
    directly; fm times live in [0, 1] and are multiplied by 1000 first so both
    variants drive the same frequency range.
    """

    FM_TIME_SCALE = 1000.0

    def __init__(self, variant: str, base_channels: int, total_steps: int = 1000):
        super().__init__()
        if variant not in ("ddpm", "fm"):
            raise ValueError(f"unknown variant {variant!r}")
        self.variant = variant
        self.total_steps = total_steps
        self.feature_dim = base_channels
        out = 4 * base_channels
        self.mlp = nn.Sequential(nn.Linear(base_channels, out), nn.SiLU(), nn.Linear(out, out))

    def raw_time(self, t: torch.Tensor) -> torch.Tensor:
        t = torch.as_tensor(t)
        if self.variant == "ddpm":
            if not torch.all(t == t.round()):
                raise ValueError("ddpm timesteps must be integers")
            if t.min() < 1 or t.max() > self.total_steps:
                raise ValueError(f"ddpm timestep outside [1, {self.total_steps}]")
            return t.to(torch.get_default_dtype()) if not t.is_floating_point() else t
        if t.min() < 0 or t.max() > 1:
            raise ValueError("fm time outside [0, 1]")
        return t * self.FM_TIME_SCALE

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        raw = self.raw_time(t).to(next(self.parameters()).dtype)
        return self.mlp(sinusoidal_time_features(raw, self.feature_dim))


class WSConv2d(nn.Conv2d):
    """3x3 convolution with weights standardized per output filter."""

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        w = self.weight
        mean = w.mean(dim=(1, 2, 3), keepdim=True)
        var = w.var(dim=(1, 2, 3), keepdim=True, unbiased=False)
        w = (w - mean) * torch.rsqrt(var + WS_EPS)
        return F.conv2d(x, w, self.bias, self.stride, self.padding, self.dilation, self.groups)


class ResnetBlock(nn.Module):
    """Two weight-standardized 3x3 convs with GroupNorm/SiLU and a residual path.

    When a time embedding is provided, the first conv's activations get a
    feature-wise affine (scale, shift) predicted from it.
    """

    def __init__(self, in_ch: int, out_ch: int, time_dim: int | None = None, groups: int = 8):
        super().__init__()
        self.conv1 = WSConv2d(in_ch, out_ch, 3, padding=1)
        self.norm1 = nn.GroupNorm(groups, out_ch)
        self.conv2 = WSConv2d(out_ch, out_ch, 3, padding=1)
        self.norm2 = nn.GroupNorm(groups, out_ch)
        self.act = nn.SiLU()
        self.time_proj = (
            nn.Sequential(nn.SiLU(), nn.Linear(time_dim, 2 * out_ch)) if time_dim else None
        )
        self.res = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x: torch.Tensor, t_emb: torch.Tensor | None = None) -> torch.Tensor:
        h = self.norm1(self.conv1(x))
        if self.time_proj is not None:
            if t_emb is None:
                raise ValueError("block built with time conditioning but no embedding given")
            scale, shift = self.time_proj(t_emb).unsqueeze(-1).unsqueeze(-1).chunk(2, dim=1)
            h = h * (1 + scale) + shift
        h = self.act(h)
        h = self.act(self.norm2(self.conv2(h)))
        return h + self.res(x)


class TFLinearAttention(nn.Module):
    """Linear-complexity attention over all time-frequency positions.

    Keys are softmax-normalized over positions and queries over features, so
    cost is linear in the grid size. The output projection starts at zero,
    making the block an identity at init.
    """

    def __init__(self, ch: int, heads: int = 4, head_dim: int = 32):
        super().__init__()
        inner = heads * head_dim
        self.heads = heads
        self.scale = head_dim**-0.5
        self.norm = nn.GroupNorm(1, ch)
        self.to_qkv = nn.Conv2d(ch, 3 * inner, 1, bias=False)
        self.to_out = nn.Conv2d(inner, ch, 1)
        nn.init.zeros_(self.to_out.weight)
        nn.init.zeros_(self.to_out.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, c, h, w = x.shape
        q, k, v = self.to_qkv(self.norm(x)).chunk(3, dim=1)
        q, k, v = (z.reshape(b, self.heads, -1, h * w) for z in (q, k, v))
        q = q.softmax(dim=-2) * self.scale
        k = k.softmax(dim=-1)
        context = torch.einsum("bhdn,bhen->bhde", k, v)
        out = torch.einsum("bhde,bhdn->bhen", context, q)
        return x + self.to_out(out.reshape(b, -1, h, w))


class TimeAttention(nn.Module):
    """Pre-layernorm multi-head attention along the time axis, residual.

    Each frequency row attends over time frames independently. Zero-initialized
    output projection, as in the TF attention block.
    """

    def __init__(self, ch: int, heads: int = 4, head_dim: int = 32):
        super().__init__()
        inner = heads * head_dim
        self.heads = heads
        self.head_dim = head_dim
        self.scale = head_dim**-0.5
        self.norm = nn.LayerNorm(ch)
        self.to_qkv = nn.Linear(ch, 3 * inner, bias=False)
        self.to_out = nn.Linear(inner, ch)
        nn.init.zeros_(self.to_out.weight)
        nn.init.zeros_(self.to_out.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, c, f, t = x.shape
        seq = x.permute(0, 2, 3, 1).reshape(b * f, t, c)
        q, k, v = self.to_qkv(self.norm(seq)).chunk(3, dim=-1)
        q, k, v = (z.reshape(b * f, t, self.heads, self.head_dim).transpose(1, 2) for z in (q, k, v))
        attn = torch.softmax(q @ k.transpose(-2, -1) * self.scale, dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b * f, t, -1)
        out = self.to_out(out).reshape(b, f, t, c).permute(0, 3, 1, 2)
        return x + out


class CABlock(nn.Module):
    """Convolution-attention block: ResNet sub-block plus attention sub-blocks.

    The default composition is ResNet -> TF attention -> time attention
    ('r_tf_t'); ablation variants swap the attention slots for further ResNet
    blocks. Every ResNet sub-block is time-conditioned.
    """

    def __init__(
        self,
        in_ch: int,
        out_ch: int,
        time_dim: int,
        groups: int,
        heads: int,
        head_dim: int,
        variant: str = "r_tf_t",
    ):
        super().__init__()
        self.resnet = ResnetBlock(in_ch, out_ch, time_dim=time_dim, groups=groups)
        tail = []
        for token in variant.split("_")[1:]:
            if token == "r":
                tail.append(ResnetBlock(out_ch, out_ch, time_dim=time_dim, groups=groups))
            elif token == "tf":
                tail.append(TFLinearAttention(out_ch, heads, head_dim))
            elif token == "t":
                tail.append(TimeAttention(out_ch, heads, head_dim))
            else:
                raise ValueError(f"unknown CA sub-block {token!r}")
        self.tail = nn.ModuleList(tail)

    def forward(self, x: torch.Tensor, t_emb: torch.Tensor) -> torch.Tensor:
        h = self.resnet(x, t_emb)
        for block in self.tail:
            h = block(h, t_emb) if isinstance(block, ResnetBlock) else block(h)
        return h


class FeatureInteraction(nn.Module):
    """Bottleneck fusion of the tiled condition vector with audio features.

    The condition is tiled over the spatial grid and concatenated on channels,
    then a 1x1 conv folds the doubled width back to C. The default
    'local_global' variant processes the fused map with two identical ResNet
    blocks plus a TF attention block; ablation variants swap that tail for
    plain concatenation, a point-wise MLP, ResNet-only, or attention-only
    processing. Output shape always matches the audio input.
    """

    def __init__(self, ch: int, groups: int, heads: int, head_dim: int, variant: str = "local_global"):
        super().__init__()
        self.reduce = nn.Conv2d(2 * ch, ch, 1)
        if variant == "local_global":
            tail = [
                ResnetBlock(ch, ch, time_dim=None, groups=groups),
                ResnetBlock(ch, ch, time_dim=None, groups=groups),
                TFLinearAttention(ch, heads, head_dim),
            ]
        elif variant == "concat":
            tail = []
        elif variant == "pointwise":
            tail = [
                nn.Conv2d(ch, ch, 1), nn.SiLU(),
                nn.Conv2d(ch, ch, 1), nn.SiLU(),
                nn.Conv2d(ch, ch, 1),
            ]
        elif variant == "local":
            tail = [ResnetBlock(ch, ch, time_dim=None, groups=groups) for _ in range(3)]
        elif variant == "global":
            tail = [TFLinearAttention(ch, heads, head_dim) for _ in range(3)]
        else:
            raise ValueError(f"unknown fusion variant {variant!r}")
        self.tail = nn.Sequential(*tail)

    def forward(self, f_a: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
        b, c, h, w = f_a.shape
        if v.shape != (b, c):
            raise ValueError(f"condition shape {tuple(v.shape)} does not match features ({b}, {c})")
        tiled = v.reshape(b, c, 1, 1).expand(b, c, h, w)
        return self.tail(self.reduce(torch.cat([f_a, tiled], dim=1)))


class Downsample(nn.Module):
    def __init__(self, ch: int):
        super().__init__()
        self.conv = nn.Conv2d(ch, ch, 2, stride=2)

    def forward(self, x):
        return self.conv(x)


class Upsample(nn.Module):
    def __init__(self, ch: int):
        super().__init__()
        self.conv = nn.ConvTranspose2d(ch, ch, 2, stride=2)

    def forward(self, x):
        return self.conv(x)


class SeparationUNet(nn.Module):
    """f(x_t, x_mix, v, t) -> unclamped grid prediction.

    The condition vector v is consumed only inside the bottleneck fusion
    module; the time embedding conditions every CA block on both sides.
    """

    def __init__(self, config: UNetConfig, variant: str = "ddpm", total_steps: int = 1000):
        super().__init__()
        self.config = config
        self.variant = variant
        chans = config.channels
        ins = (config.base_channels,) + chans[:-1]
        g, h, d = config.groupnorm_groups, config.attn_heads, config.attn_head_dim
        tdim = config.time_dim

        self.time = TimeEmbedding(variant, config.base_channels, total_steps)
        self.stem = nn.Conv2d(2, config.base_channels, 1)
        self.enc_blocks = nn.ModuleList(
            [CABlock(ins[i], chans[i], tdim, g, h, d, config.ca_variant) for i in range(config.levels)]
        )
        self.downs = nn.ModuleList([Downsample(chans[i]) for i in range(config.levels)])
        self.fim = FeatureInteraction(chans[-1], g, h, d, config.fim_variant)
        self.ups = nn.ModuleList([Upsample(chans[i]) for i in range(config.levels)])
        self.dec_blocks = nn.ModuleList(
            [CABlock(2 * chans[i], ins[i], tdim, g, h, d, config.ca_variant) for i in range(config.levels)]
        )
        self.head = nn.Conv2d(config.base_channels, 1, 1)

    def forward(
        self, x_t: torch.Tensor, x_mix: torch.Tensor, v: torch.Tensor, t: torch.Tensor
    ) -> torch.Tensor:
        if x_t.dim() != 3:
            raise ValueError(f"expected (batch, H, W) grids, got shape {tuple(x_t.shape)}")
        if x_t.shape != x_mix.shape:
            raise ValueError("noisy grid and mixture grid must share a shape")
        size = x_t.shape[-1]
        if x_t.shape[-2] != size or size % (2**self.config.levels):
            raise ValueError(f"grid must be square with size divisible by {2 ** self.config.levels}")

        t_emb = self.time(t)
        h = self.stem(torch.stack([x_t, x_mix], dim=1))
        skips = []
        for block, down in zip(self.enc_blocks, self.downs):
            h = block(h, t_emb)
            skips.append(h)
            h = down(h)
        h = self.fim(h, v)
        for i in range(self.config.levels - 1, -1, -1):
            h = self.ups[i](h)
            h = torch.cat([h, skips.pop()], dim=1)
            h = self.dec_blocks[i](h, t_emb)
        return self.head(h).squeeze(1)


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
