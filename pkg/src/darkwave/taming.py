"""Trainable taming modules: small conv stacks with SFT heads that map
wavelet subbands (plus the timestep, for the UNet set) to per-layer
feature modulation pairs (alpha, beta).

Final projection heads are zero-initialized, so a freshly built taming
set is exactly transparent: the frozen backbone's outputs are unchanged
until training moves the heads away from zero.

Role separation on the decoder side is structural, not learned: the
scale branch sees only the low-frequency subband and the shift branch
sees only the concatenated detail subbands, so d(beta)/d(LL) and
d(alpha)/d(H*) vanish identically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .container import load_tensor_map, save_tensor_map
from .errors import DimensionError, FormatError, ParameterError
from .models import ModPoint, SinusoidalTimeEmbedding, apply_modulation, count_parameters
from .rawproc import PackedRaw
from .wavelets import WaveletSpec, dwt_pyramid, resize_baseline

CONDITIONING_MODES = ("dwt", "resize")

PACKED_CHANNELS = 4
HSTAR_CHANNELS = 3 * PACKED_CHANNELS

# Resolution of each insertion point relative to the latent grid.
UNET_POINT_DIVISORS = (1, 2, 4, 4, 4, 2, 1)
DECODER_POINT_MULTIPLIERS = (2, 4)


def modulate(feat: torch.Tensor, pair: tuple[torch.Tensor, torch.Tensor]) -> torch.Tensor:
    """Elementwise affine transform F -> (1 + alpha) * F + beta."""
    return apply_modulation(feat, pair)


def _resample(x: torch.Tensor, hw: tuple[int, int]) -> torch.Tensor:
    if x.shape[-2:] == hw:
        return x
    return F.interpolate(x, size=hw, mode="bilinear", align_corners=False)


def _conv_stack(c_in: int, hidden: int) -> nn.ModuleList:
    return nn.ModuleList(
        [
            nn.Conv2d(c_in, hidden, 3, padding=1),
            nn.Conv2d(hidden, hidden, 3, padding=1),
            nn.Conv2d(hidden, hidden, 3, padding=1),
        ]
    )


def _zero_head(hidden: int, c_out: int) -> nn.Conv2d:
    head = nn.Conv2d(hidden, c_out, 1)
    nn.init.zeros_(head.weight)
    nn.init.zeros_(head.bias)
    return head


class UNetTamingModule(nn.Module):
    """Maps (LL, timestep embedding) to one UNet layer's (alpha, beta)."""

    def __init__(self, out_channels: int, hidden: int, time_dim: int, cond_channels: int = PACKED_CHANNELS):
        super().__init__()
        self.convs = _conv_stack(cond_channels, hidden)
        self.time_proj = nn.Linear(time_dim, hidden)
        self.scale_head = _zero_head(hidden, out_channels)
        self.shift_head = _zero_head(hidden, out_channels)

    def forward(self, cond: torch.Tensor, temb: torch.Tensor, out_hw: tuple[int, int]):
        h = _resample(cond, out_hw)
        h = F.silu(self.convs[0](h))
        h = h + self.time_proj(temb)[:, :, None, None]
        h = F.silu(self.convs[1](h))
        h = F.silu(self.convs[2](h))
        return self.scale_head(h), self.shift_head(h)


class DecoderTamingModule(nn.Module):
    """Maps subbands to one decoder layer's (alpha, beta).

    Two independent branches keep the roles separated: LL -> alpha
    (illumination scaling), H* -> beta (detail injection).
    """

    def __init__(self, out_channels: int, hidden: int):
        super().__init__()
        self.scale_convs = _conv_stack(PACKED_CHANNELS, hidden)
        self.shift_convs = _conv_stack(HSTAR_CHANNELS, hidden)
        self.scale_head = _zero_head(hidden, out_channels)
        self.shift_head = _zero_head(hidden, out_channels)

    @staticmethod
    def _run(convs: nn.ModuleList, x: torch.Tensor) -> torch.Tensor:
        for conv in convs:
            x = F.silu(conv(x))
        return x

    def forward(self, ll: torch.Tensor, hstar: torch.Tensor, out_hw: tuple[int, int]):
        alpha = self.scale_head(self._run(self.scale_convs, _resample(ll, out_hw)))
        beta = self.shift_head(self._run(self.shift_convs, _resample(hstar, out_hw)))
        return alpha, beta


class TamingSetUNet(nn.Module):
    """One taming module per UNet insertion point."""

    owner = "unet"

    def __init__(
        self,
        point_channels: list[int],
        conditioning: str = "dwt",
        hidden: int = 16,
        time_dim: int = 64,
    ):
        super().__init__()
        if conditioning not in CONDITIONING_MODES:
            raise ParameterError(f"conditioning must be one of {CONDITIONING_MODES}")
        if len(point_channels) != len(UNET_POINT_DIVISORS):
            raise DimensionError(
                f"expected {len(UNET_POINT_DIVISORS)} insertion points, got {len(point_channels)}"
            )
        self.conditioning = conditioning
        self.hidden = hidden
        self.time_dim = time_dim
        self.point_channels = list(point_channels)
        self.t_embed = SinusoidalTimeEmbedding(time_dim)
        self.modules_list = nn.ModuleList(
            [UNetTamingModule(c, hidden, time_dim) for c in point_channels]
        )

    @classmethod
    def for_bundle(cls, bundle, conditioning: str = "dwt", hidden: int = 16, time_dim: int = 64):
        points = bundle.unet_points(bundle.latent_hw((bundle.arch.image_size,) * 2))
        return cls([p.channels for p in points], conditioning, hidden, time_dim)

    def modulations(self, ll: torch.Tensor, t: int | torch.Tensor):
        """One (alpha, beta) pair per UNet layer for conditioning ``ll``
        at latent resolution and timestep ``t``."""
        if ll.dim() != 4 or ll.shape[1] != PACKED_CHANNELS:
            raise DimensionError(f"conditioning must be (B, {PACKED_CHANNELS}, h, w), got {tuple(ll.shape)}")
        lh, lw = ll.shape[-2:]
        if lh % 4 or lw % 4:
            raise DimensionError(f"conditioning dims {lh}x{lw} must be divisible by 4")
        if isinstance(t, int):
            t = torch.full((ll.shape[0],), t, dtype=torch.long)
        temb = self.t_embed(t.to(ll.dtype))
        pairs = []
        for module, div in zip(self.modules_list, UNET_POINT_DIVISORS):
            pairs.append(module(ll, temb, (lh // div, lw // div)))
        return pairs


class TamingSetDecoder(nn.Module):
    """One taming module per decoder upsampling layer."""

    owner = "decoder"

    def __init__(self, point_channels: list[int], conditioning: str = "dwt", hidden: int = 16):
        super().__init__()
        if conditioning not in CONDITIONING_MODES:
            raise ParameterError(f"conditioning must be one of {CONDITIONING_MODES}")
        if len(point_channels) != len(DECODER_POINT_MULTIPLIERS):
            raise DimensionError(
                f"expected {len(DECODER_POINT_MULTIPLIERS)} insertion points, got {len(point_channels)}"
            )
        self.conditioning = conditioning
        self.hidden = hidden
        self.point_channels = list(point_channels)
        self.modules_list = nn.ModuleList(
            [DecoderTamingModule(c, hidden) for c in point_channels]
        )

    @classmethod
    def for_bundle(cls, bundle, conditioning: str = "dwt", hidden: int = 16):
        points = bundle.decoder_points(bundle.latent_hw((bundle.arch.image_size,) * 2))
        return cls([p.channels for p in points], conditioning, hidden)

    def modulations(self, ll_levels: list[torch.Tensor], hstar_levels: list[torch.Tensor]):
        """One (alpha, beta) pair per decoder layer.

        Levels run finest to coarsest; the coarsest LL sits at latent
        resolution. Each layer consumes the pyramid level nearest its own
        resolution, bilinearly resampled when they differ.
        """
        if len(ll_levels) != len(hstar_levels) or not ll_levels:
            raise DimensionError("need matching, non-empty LL / H* level lists")
        lh, lw = ll_levels[-1].shape[-2:]
        pairs = []
        for module, mult in zip(self.modules_list, DECODER_POINT_MULTIPLIERS):
            out_hw = (lh * mult, lw * mult)
            k = _nearest_level(ll_levels, out_hw)
            pairs.append(module(ll_levels[k], hstar_levels[k], out_hw))
        return pairs


def _nearest_level(levels: list[torch.Tensor], hw: tuple[int, int]) -> int:
    target = math.log2(hw[0] * hw[1])
    best, best_gap = 0, float("inf")
    for k, lvl in enumerate(levels):
        gap = abs(math.log2(lvl.shape[-2] * lvl.shape[-1]) - target)
        if gap < best_gap:
            best, best_gap = k, gap
    return best


def taming_parameter_count(*sets: nn.Module) -> int:
    return sum(count_parameters(s) for s in sets)


# ---------------------------------------------------------------------------
# Conditioning assembly from a packed RAW input

@dataclass
class Conditioning:
    """Per-sample taming inputs, unbatched (C, h, w) tensors.

    ll_unet feeds the UNet set at latent resolution. ll_levels and
    hstar_levels (finest first, coarsest at latent resolution) feed the
    decoder set. In resize mode the single "level" is the bicubic-resized
    packed input and H* is a zero tensor, which disables the shift path.
    """

    mode: str
    ll_unet: torch.Tensor
    ll_levels: list[torch.Tensor]
    hstar_levels: list[torch.Tensor]


def pyramid_levels_for(packed_hw: tuple[int, int], latent_hw: tuple[int, int]) -> int:
    """Decomposition depth that aligns the packed input with the latent."""
    ratios = (packed_hw[0] / latent_hw[0], packed_hw[1] / latent_hw[1])
    if ratios[0] != ratios[1]:
        raise DimensionError(f"anisotropic packed/latent ratio {ratios}")
    levels = math.log2(ratios[0])
    if levels < 1 or levels != int(levels):
        raise DimensionError(
            f"packed {packed_hw} must be a power-of-two multiple (>= 2x) of latent {latent_hw}"
        )
    return int(levels)


def build_conditioning(
    packed: PackedRaw,
    mode: str,
    latent_hw: tuple[int, int],
    dtype: torch.dtype = torch.float32,
) -> Conditioning:
    if mode not in CONDITIONING_MODES:
        raise ParameterError(f"conditioning must be one of {CONDITIONING_MODES}")
    data = packed.data.astype(np.float64)
    packed_hw = data.shape[-2:]
    levels = pyramid_levels_for(packed_hw, latent_hw)

    def to_t(a: np.ndarray) -> torch.Tensor:
        return torch.from_numpy(np.ascontiguousarray(a)).to(dtype)

    if mode == "dwt":
        pyr = dwt_pyramid(data, WaveletSpec(levels=levels))
        ll_levels = [to_t(lvl.ll) for lvl in pyr.levels]
        hstar_levels = [to_t(lvl.h_star) for lvl in pyr.levels]
        ll_unet = ll_levels[-1]
    else:
        resized = to_t(resize_baseline(data, latent_hw))
        ll_unet = resized
        ll_levels = [resized]
        hstar_levels = [torch.zeros(HSTAR_CHANNELS, *latent_hw, dtype=dtype)]
    return Conditioning(mode=mode, ll_unet=ll_unet, ll_levels=ll_levels, hstar_levels=hstar_levels)


# ---------------------------------------------------------------------------
# Persistence

def save_taming_set(tset: TamingSetUNet | TamingSetDecoder, directory, bundle_checksum: str) -> None:
    tensors = {name: p.detach().cpu().numpy() for name, p in tset.state_dict().items()}
    meta = {
        "kind": f"taming-{tset.owner}",
        "owner": tset.owner,
        "conditioning": tset.conditioning,
        "hidden": tset.hidden,
        "point_channels": tset.point_channels,
        "bundle_checksum": bundle_checksum,
        "parameter_count": count_parameters(tset),
    }
    if tset.owner == "unet":
        meta["time_dim"] = tset.time_dim
    save_tensor_map(directory, tensors, meta)


def load_taming_set(directory) -> tuple[TamingSetUNet | TamingSetDecoder, dict]:
    tensors, meta = load_tensor_map(directory)
    kind = meta.get("kind", "")
    if kind == "taming-unet":
        tset: TamingSetUNet | TamingSetDecoder = TamingSetUNet(
            meta["point_channels"],
            conditioning=meta["conditioning"],
            hidden=int(meta["hidden"]),
            time_dim=int(meta["time_dim"]),
        )
    elif kind == "taming-decoder":
        tset = TamingSetDecoder(
            meta["point_channels"],
            conditioning=meta["conditioning"],
            hidden=int(meta["hidden"]),
        )
    else:
        raise FormatError(f"{directory}: not a taming set")
    tset.load_state_dict({k: torch.from_numpy(v.copy()) for k, v in tensors.items()}, strict=True)
    return tset, meta
