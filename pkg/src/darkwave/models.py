"""Miniature latent-diffusion networks: autoencoder (encoder/decoder) and
the denoising UNet, with modulation hooks at fixed insertion points.

All normalization is GroupNorm, so the networks carry no running
statistics and behave identically in train and eval mode; the freeze
contract only has to protect parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import DimensionError


@dataclass(frozen=True)
class ModPoint:
    """One feature-modulation insertion point: name plus feature shape."""

    name: str
    channels: int
    height: int
    width: int


def apply_modulation(feat: torch.Tensor, mod: tuple[torch.Tensor, torch.Tensor] | None) -> torch.Tensor:
    """Affine feature transform F -> (1 + alpha) * F + beta."""
    if mod is None:
        return feat
    alpha, beta = mod
    if alpha.shape[-3:] != feat.shape[-3:] or beta.shape[-3:] != feat.shape[-3:]:
        raise DimensionError(
            f"modulation shape {tuple(alpha.shape)} does not match feature {tuple(feat.shape)}"
        )
    return (1.0 + alpha) * feat + beta


def _norm(channels: int) -> nn.GroupNorm:
    groups = 8
    while channels % groups:
        groups //= 2
    return nn.GroupNorm(groups, channels)


class SinusoidalTimeEmbedding(nn.Module):
    """Standard sin/cos embedding of the (float-cast) timestep index."""

    def __init__(self, dim: int):
        super().__init__()
        if dim % 2:
            raise DimensionError("embedding dim must be even")
        self.dim = dim

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        half = self.dim // 2
        freqs = torch.exp(
            -math.log(10000.0) * torch.arange(half, dtype=t.dtype, device=t.device) / (half - 1)
        )
        args = t[:, None].to(freqs.dtype) * freqs[None]
        return torch.cat([torch.sin(args), torch.cos(args)], dim=-1)


class ResidualBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, time_dim: int | None = None):
        super().__init__()
        self.norm1 = _norm(c_in)
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.norm2 = _norm(c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.time_proj = nn.Linear(time_dim, c_out) if time_dim else None
        self.skip = nn.Conv2d(c_in, c_out, 1) if c_in != c_out else nn.Identity()

    def forward(self, x: torch.Tensor, temb: torch.Tensor | None = None) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        if self.time_proj is not None:
            h = h + self.time_proj(F.silu(temb))[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class Downsample(nn.Module):
    def __init__(self, c_in: int, c_out: int):
        super().__init__()
        self.conv = nn.Conv2d(c_in, c_out, 3, stride=2, padding=1)

    def forward(self, x):
        return self.conv(x)


class Upsample(nn.Module):
    """Sub-pixel (PixelShuffle) 2x upsampling; convs stay at the low
    resolution, which is both cheaper and sharper than nearest + conv."""

    def __init__(self, c_in: int, c_out: int):
        super().__init__()
        self.conv = nn.Conv2d(c_in, 4 * c_out, 3, padding=1)
        self.shuffle = nn.PixelShuffle(2)

    def forward(self, x):
        return self.shuffle(self.conv(x))


class ImageEncoder(nn.Module):
    """sRGB (3, H, W) -> latent (c_z, H/4, W/4), deterministic."""

    def __init__(self, widths: tuple[int, int, int] = (16, 32, 64), latent_channels: int = 4):
        super().__init__()
        w0, w1, w2 = widths
        self.stem = nn.Conv2d(3, w0, 3, padding=1)
        self.block0 = ResidualBlock(w0, w0)
        self.down0 = Downsample(w0, w1)
        self.block1 = ResidualBlock(w1, w1)
        self.down1 = Downsample(w1, w2)
        self.block2 = ResidualBlock(w2, w2)
        self.out_norm = _norm(w2)
        self.head = nn.Conv2d(w2, latent_channels, 3, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.block0(self.stem(x))
        h = self.block1(self.down0(h))
        h = self.block2(self.down1(h))
        return self.head(F.silu(self.out_norm(h)))


class ImageDecoder(nn.Module):
    """Latent (c_z, h, w) -> sRGB (3, 4h, 4w) in [0, 1] via sigmoid.

    Two upsampling stages; a modulation hook sits after the residual
    block of each stage. Widths run (full-res, half-res, latent-res).
    """

    def __init__(self, widths: tuple[int, int, int] = (16, 32, 96), latent_channels: int = 4):
        super().__init__()
        w0, w1, w2 = widths
        self.stem = nn.Conv2d(latent_channels, w2, 3, padding=1)
        self.block_in = ResidualBlock(w2, w2)
        self.up1 = Upsample(w2, w1)
        self.block1 = ResidualBlock(w1, w1)
        self.up0 = Upsample(w1, w0)
        self.block0 = ResidualBlock(w0, w0)
        self.out_norm = _norm(w0)
        self.head = nn.Conv2d(w0, 3, 3, padding=1)
        self._widths = widths

    def modulation_points(self, latent_hw: tuple[int, int]) -> list[ModPoint]:
        h, w = latent_hw
        w0, w1, _ = self._widths
        return [
            ModPoint("dec_up1", w1, 2 * h, 2 * w),
            ModPoint("dec_up0", w0, 4 * h, 4 * w),
        ]

    def forward(
        self,
        z: torch.Tensor,
        modulations: list[tuple[torch.Tensor, torch.Tensor]] | None = None,
    ) -> torch.Tensor:
        mods = list(modulations) if modulations is not None else [None, None]
        if len(mods) != 2:
            raise DimensionError(f"decoder expects 2 modulation pairs, got {len(mods)}")
        h = self.block_in(self.stem(z))
        h = apply_modulation(self.block1(self.up1(h)), mods[0])
        h = apply_modulation(self.block0(self.up0(h)), mods[1])
        return torch.sigmoid(self.head(F.silu(self.out_norm(h))))


class NoiseUNet(nn.Module):
    """Noise predictor over latents: 3 resolution levels, 2 residual
    blocks per level, sinusoidal timestep embedding.

    Modulation hooks sit after each encoder level, after the middle
    blocks and after each decoder level (7 points total).
    """

    def __init__(
        self,
        latent_channels: int = 4,
        widths: tuple[int, int, int] = (32, 64, 128),
        time_dim: int = 128,
    ):
        super().__init__()
        w0, w1, w2 = widths
        self.time_dim = time_dim
        self.t_embed = SinusoidalTimeEmbedding(time_dim)
        self.t_mlp = nn.Sequential(nn.Linear(time_dim, time_dim), nn.SiLU(), nn.Linear(time_dim, time_dim))

        self.stem = nn.Conv2d(latent_channels, w0, 3, padding=1)
        self.enc0 = nn.ModuleList([ResidualBlock(w0, w0, time_dim), ResidualBlock(w0, w0, time_dim)])
        self.down0 = Downsample(w0, w1)
        self.enc1 = nn.ModuleList([ResidualBlock(w1, w1, time_dim), ResidualBlock(w1, w1, time_dim)])
        self.down1 = Downsample(w1, w2)
        self.enc2 = nn.ModuleList([ResidualBlock(w2, w2, time_dim), ResidualBlock(w2, w2, time_dim)])
        self.mid = nn.ModuleList([ResidualBlock(w2, w2, time_dim), ResidualBlock(w2, w2, time_dim)])
        self.dec2 = nn.ModuleList([ResidualBlock(2 * w2, w2, time_dim), ResidualBlock(w2, w2, time_dim)])
        self.up1 = Upsample(w2, w1)
        self.dec1 = nn.ModuleList([ResidualBlock(2 * w1, w1, time_dim), ResidualBlock(w1, w1, time_dim)])
        self.up0 = Upsample(w1, w0)
        self.dec0 = nn.ModuleList([ResidualBlock(2 * w0, w0, time_dim), ResidualBlock(w0, w0, time_dim)])
        self.out_norm = _norm(w0)
        self.head = nn.Conv2d(w0, latent_channels, 3, padding=1)
        self._widths = widths

    def modulation_points(self, latent_hw: tuple[int, int]) -> list[ModPoint]:
        h, w = latent_hw
        w0, w1, w2 = self._widths
        return [
            ModPoint("unet_enc0", w0, h, w),
            ModPoint("unet_enc1", w1, h // 2, w // 2),
            ModPoint("unet_enc2", w2, h // 4, w // 4),
            ModPoint("unet_mid", w2, h // 4, w // 4),
            ModPoint("unet_dec2", w2, h // 4, w // 4),
            ModPoint("unet_dec1", w1, h // 2, w // 2),
            ModPoint("unet_dec0", w0, h, w),
        ]

    def forward(
        self,
        z: torch.Tensor,
        t: torch.Tensor,
        modulations: list[tuple[torch.Tensor, torch.Tensor]] | None = None,
    ) -> torch.Tensor:
        mods = list(modulations) if modulations is not None else [None] * 7
        if len(mods) != 7:
            raise DimensionError(f"unet expects 7 modulation pairs, got {len(mods)}")
        if z.shape[-1] % 4 or z.shape[-2] % 4:
            raise DimensionError(f"latent dims must be divisible by 4, got {tuple(z.shape[-2:])}")
        temb = self.t_mlp(self.t_embed(t.to(z.dtype)))

        h = self.stem(z)
        for blk in self.enc0:
            h = blk(h, temb)
        h = apply_modulation(h, mods[0])
        skip0 = h
        h = self.down0(h)
        for blk in self.enc1:
            h = blk(h, temb)
        h = apply_modulation(h, mods[1])
        skip1 = h
        h = self.down1(h)
        for blk in self.enc2:
            h = blk(h, temb)
        h = apply_modulation(h, mods[2])
        skip2 = h
        for blk in self.mid:
            h = blk(h, temb)
        h = apply_modulation(h, mods[3])
        h = torch.cat([h, skip2], dim=1)
        for blk in self.dec2:
            h = blk(h, temb)
        h = apply_modulation(h, mods[4])
        h = torch.cat([self.up1(h), skip1], dim=1)
        for blk in self.dec1:
            h = blk(h, temb)
        h = apply_modulation(h, mods[5])
        h = torch.cat([self.up0(h), skip0], dim=1)
        for blk in self.dec0:
            h = blk(h, temb)
        h = apply_modulation(h, mods[6])
        return self.head(F.silu(self.out_norm(h)))


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
