"""Two-stage taming training on top of a frozen backbone.

Stage 1 trains the UNet taming set with the noise-prediction objective
(squared error between true and predicted noise); stage 2 generates a
latent for every training pair with the tamed UNet (deterministic DDIM)
and trains the decoder taming set with an L1 objective against the
ground-truth sRGB target. The backbone parameter checksum is verified
before and after every run; any change is a hard freeze violation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .backbone import BackboneBundle, forward_diffuse, ddim_sample
from .container import save_tensor_map, load_tensor_map
from .errors import CacheError, FreezeViolationError, ParameterError, TrainingError, FormatError
from .rawproc import ScenePair, pack_and_normalize
from .taming import (
    Conditioning,
    TamingSetDecoder,
    TamingSetUNet,
    build_conditioning,
)

GRAD_CLIP_NORM = 1.0


@dataclass
class TrainConfig:
    """Optimization settings for one taming stage.

    Paper-scale defaults are 100 epochs (UNet stage) and 30 epochs
    (decoder stage); desk-scale runs pass explicit values sized to their
    tiny datasets.
    """

    stage: str  # "unet" | "decoder"
    epochs: int
    batch_size: int = 8
    learning_rate: float = 1e-4
    seed: int = 0
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_grad: bool = True
    log_every: int = 25

    def __post_init__(self):
        if self.stage not in ("unet", "decoder"):
            raise ParameterError(f"stage must be 'unet' or 'decoder', got {self.stage!r}")
        if self.epochs < 1:
            raise ParameterError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ParameterError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ParameterError("learning_rate must be positive")
        if self.optimizer not in ("adam", "adamw"):
            raise ParameterError("optimizer must be adam-family ('adam' or 'adamw')")


@dataclass
class TrainResult:
    taming_set: TamingSetUNet | TamingSetDecoder
    losses: list[float] = field(default_factory=list)
    steps: int = 0

    def moving_average(self, window: int = 50) -> tuple[float, float]:
        """(initial, final) loss moving averages over ``window`` steps."""
        w = min(window, len(self.losses))
        return float(np.mean(self.losses[:w])), float(np.mean(self.losses[-w:]))


class TrainingLogger:
    """Line-delimited JSON training log (step, stage, loss, checksum)."""

    def __init__(self, path: Path | str | None):
        self.path = Path(path) if path else None
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("")

    def write(self, record: dict) -> None:
        if self.path:
            with self.path.open("a") as f:
                f.write(json.dumps(record, sort_keys=True) + "\n")


def _make_optimizer(params, config: TrainConfig) -> torch.optim.Optimizer:
    cls = torch.optim.Adam if config.optimizer == "adam" else torch.optim.AdamW
    return cls(params, lr=config.learning_rate, betas=(config.beta1, config.beta2), eps=config.eps)


def _require_frozen(bundle: BackboneBundle) -> str:
    if not bundle.frozen:
        raise ParameterError("backbone bundle must be frozen before taming training")
    return bundle.parameter_checksum()


def _verify_frozen(bundle: BackboneBundle, checksum: str, where: str) -> None:
    after = bundle.parameter_checksum()
    if after != checksum:
        raise FreezeViolationError(f"backbone parameters changed during {where}")


# ---------------------------------------------------------------------------
# Losses (spec-shaped single-pair forms; trainers batch the same math)

def _pair_tensors(pair: ScenePair, bundle: BackboneBundle, conditioning: str) -> tuple[torch.Tensor, Conditioning]:
    dtype = next(bundle.encoder.parameters()).dtype
    target = torch.from_numpy(pair.target.data).to(dtype)[None]
    latent_hw = bundle.latent_hw((pair.target.height, pair.target.width))
    packed = pack_and_normalize(pair.low, pair.ratio)
    cond = build_conditioning(packed, conditioning, latent_hw, dtype=dtype)
    return target, cond


def unet_taming_loss(
    pair: ScenePair,
    bundle: BackboneBundle,
    taming: TamingSetUNet,
    t: int,
    eps: torch.Tensor,
) -> torch.Tensor:
    """Mean squared error between true and predicted noise for one pair."""
    target, cond = _pair_tensors(pair, bundle, taming.conditioning)
    z0 = bundle.encode(target)
    if eps.shape != z0.shape:
        raise ParameterError(f"eps shape {tuple(eps.shape)} must match latent {tuple(z0.shape)}")
    z_t = forward_diffuse(z0, t, eps, bundle.schedule)
    mods = taming.modulations(cond.ll_unet[None], t)
    pred = bundle.unet_predict(z_t, t, mods)
    return torch.mean((pred - eps) ** 2)


def decoder_taming_loss(
    pair: ScenePair,
    cached: torch.Tensor,
    bundle: BackboneBundle,
    taming: TamingSetDecoder,
) -> torch.Tensor:
    """Mean absolute error between the tamed decode of a cached latent
    and the ground-truth sRGB target."""
    target, cond = _pair_tensors(pair, bundle, taming.conditioning)
    z = cached if cached.dim() == 4 else cached[None]
    mods = taming.modulations([l[None] for l in cond.ll_levels], [h[None] for h in cond.hstar_levels])
    out = bundle.decode(z, mods)
    return torch.mean(torch.abs(out - target))


# ---------------------------------------------------------------------------
# Dataset preparation

@dataclass
class _PreparedData:
    targets: torch.Tensor  # (N, 3, H, W)
    z0: torch.Tensor  # (N, c_z, h, w)
    ll_unet: torch.Tensor  # (N, 4, lh, lw)
    ll_levels: list[torch.Tensor]  # per level: (N, 4, h_l, w_l)
    hstar_levels: list[torch.Tensor]  # per level: (N, 12, h_l, w_l)


def _prepare(dataset: Sequence[ScenePair], bundle: BackboneBundle, conditioning: str) -> _PreparedData:
    if not dataset:
        raise ParameterError("dataset is empty")
    targets, conds = [], []
    for pair in dataset:
        tgt, cond = _pair_tensors(pair, bundle, conditioning)
        targets.append(tgt[0])
        conds.append(cond)
    targets_t = torch.stack(targets)
    with torch.no_grad():
        z0 = torch.cat([bundle.encode(targets_t[i : i + 16]) for i in range(0, len(dataset), 16)])
    n_levels = len(conds[0].ll_levels)
    return _PreparedData(
        targets=targets_t,
        z0=z0,
        ll_unet=torch.stack([c.ll_unet for c in conds]),
        ll_levels=[torch.stack([c.ll_levels[k] for c in conds]) for k in range(n_levels)],
        hstar_levels=[torch.stack([c.hstar_levels[k] for c in conds]) for k in range(n_levels)],
    )


def _check_loss(value: float, step: int, stage: str) -> None:
    if not math.isfinite(value):
        raise TrainingError(f"non-finite loss {value} at {stage} step {step}")


# ---------------------------------------------------------------------------
# Stage 1: UNet taming

def train_unet_taming(
    dataset: Sequence[ScenePair],
    bundle: BackboneBundle,
    config: TrainConfig,
    conditioning: str = "dwt",
    hidden: int = 16,
    log: TrainingLogger | None = None,
) -> TrainResult:
    if config.stage != "unet":
        raise ParameterError(f"config.stage must be 'unet', got {config.stage!r}")
    checksum = _require_frozen(bundle)
    data = _prepare(dataset, bundle, conditioning)
    n = data.z0.shape[0]

    torch.manual_seed(config.seed)
    tset = TamingSetUNet.for_bundle(bundle, conditioning=conditioning, hidden=hidden)
    opt = _make_optimizer(tset.parameters(), config)
    g = torch.Generator().manual_seed(config.seed)
    log = log or TrainingLogger(None)

    result = TrainResult(taming_set=tset)
    step = 0
    for _epoch in range(config.epochs):
        perm = torch.randperm(n, generator=g)
        for start in range(0, n, config.batch_size):
            idx = perm[start : start + config.batch_size]
            z0 = data.z0[idx]
            t = torch.randint(1, bundle.schedule.timesteps + 1, (len(idx),), generator=g)
            eps = torch.randn(z0.shape, generator=g)
            z_t = forward_diffuse(z0, t, eps, bundle.schedule)
            mods = tset.modulations(data.ll_unet[idx], t)
            pred = bundle.unet_predict(z_t, t, mods)
            loss = torch.mean((pred - eps) ** 2)
            opt.zero_grad()
            loss.backward()
            if config.clip_grad:
                torch.nn.utils.clip_grad_norm_(tset.parameters(), GRAD_CLIP_NORM)
            opt.step()
            step += 1
            value = float(loss.detach())
            _check_loss(value, step, "unet-taming")
            result.losses.append(value)
            if step % config.log_every == 0 or step == 1:
                log.write({"step": step, "stage": "unet-taming", "loss": value,
                           "checksum": bundle.parameter_checksum()})
    result.steps = step
    _verify_frozen(bundle, checksum, "UNet taming training")
    return result


# ---------------------------------------------------------------------------
# Latent cache + stage 2: decoder taming

def _cache_seed(seed: int, index: int) -> int:
    return (seed * 1_000_003 + index) % 2**63


def generate_latent_cache(
    dataset: Sequence[ScenePair],
    bundle: BackboneBundle,
    taming: TamingSetUNet,
    ddim_steps: int,
    seed: int = 0,
) -> dict[int, torch.Tensor]:
    """Deterministic per-pair latents from the tamed UNet.

    Each pair gets its own seeded Gaussian start, so the cache is
    reproducible entry by entry.
    """
    checksum = _require_frozen(bundle)
    dtype = next(bundle.encoder.parameters()).dtype
    cache: dict[int, torch.Tensor] = {}
    with torch.no_grad():
        for i, pair in enumerate(dataset):
            _, cond = _pair_tensors(pair, bundle, taming.conditioning)
            latent_hw = bundle.latent_hw((pair.target.height, pair.target.width))
            g = torch.Generator().manual_seed(_cache_seed(seed, i))
            z_t = torch.randn((1, bundle.arch.latent_channels, *latent_hw), generator=g, dtype=dtype)
            ll = cond.ll_unet[None]

            def predict(z, t):
                return bundle.unet_predict(z, t, taming.modulations(ll, t))

            cache[i] = ddim_sample(z_t, ddim_steps, bundle.schedule, predict)[0]
    _verify_frozen(bundle, checksum, "latent cache generation")
    return cache


def save_latent_cache(cache: dict[int, torch.Tensor], directory: Path | str, meta: dict | None = None) -> None:
    tensors = {f"{idx:05d}": z.detach().cpu().numpy() for idx, z in sorted(cache.items())}
    save_tensor_map(directory, tensors, {"kind": "latent-cache", **(meta or {})})


def load_latent_cache(directory: Path | str) -> dict[int, torch.Tensor]:
    tensors, meta = load_tensor_map(directory)
    if meta.get("kind") != "latent-cache":
        raise FormatError(f"{directory}: not a latent cache")
    return {int(name): torch.from_numpy(arr.copy()) for name, arr in tensors.items()}


def train_decoder_taming(
    dataset: Sequence[ScenePair],
    cache: dict[int, torch.Tensor],
    bundle: BackboneBundle,
    config: TrainConfig,
    conditioning: str = "dwt",
    hidden: int = 16,
    log: TrainingLogger | None = None,
) -> TrainResult:
    if config.stage != "decoder":
        raise ParameterError(f"config.stage must be 'decoder', got {config.stage!r}")
    checksum = _require_frozen(bundle)
    missing = [i for i in range(len(dataset)) if i not in cache]
    if missing:
        raise CacheError(f"latent cache is missing entries for pairs {missing[:8]}")
    data = _prepare(dataset, bundle, conditioning)
    cached = torch.stack([cache[i] for i in range(len(dataset))]).to(data.z0.dtype)
    n = cached.shape[0]

    torch.manual_seed(config.seed)
    tset = TamingSetDecoder.for_bundle(bundle, conditioning=conditioning, hidden=hidden)
    opt = _make_optimizer(tset.parameters(), config)
    g = torch.Generator().manual_seed(config.seed)
    log = log or TrainingLogger(None)

    result = TrainResult(taming_set=tset)
    step = 0
    for _epoch in range(config.epochs):
        perm = torch.randperm(n, generator=g)
        for start in range(0, n, config.batch_size):
            idx = perm[start : start + config.batch_size]
            mods = tset.modulations(
                [lvl[idx] for lvl in data.ll_levels],
                [lvl[idx] for lvl in data.hstar_levels],
            )
            out = bundle.decode(cached[idx], mods)
            loss = torch.mean(torch.abs(out - data.targets[idx]))
            opt.zero_grad()
            loss.backward()
            if config.clip_grad:
                torch.nn.utils.clip_grad_norm_(tset.parameters(), GRAD_CLIP_NORM)
            opt.step()
            step += 1
            value = float(loss.detach())
            _check_loss(value, step, "decoder-taming")
            result.losses.append(value)
            if step % config.log_every == 0 or step == 1:
                log.write({"step": step, "stage": "decoder-taming", "loss": value,
                           "checksum": bundle.parameter_checksum()})
    result.steps = step
    _verify_frozen(bundle, checksum, "decoder taming training")
    return result
