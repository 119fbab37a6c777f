"""Frozen latent-diffusion backbone: autoencoder, noise-prediction UNet,
diffusion schedule, deterministic DDIM sampling and desk-scale
pretraining.

The bundle is pretrained once on clean synthetic scenes, then frozen; a
SHA-256 checksum over every parameter makes freeze violations detectable
as hard test failures.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .container import load_tensor_map, save_tensor_map
from .errors import DimensionError, FormatError, ParameterError, TrainingError
from .models import ImageDecoder, ImageEncoder, ModPoint, NoiseUNet, count_parameters

DOWNSAMPLE_FACTOR = 4  # autoencoder spatial reduction; two 2x stages each way


@dataclass
class DiffusionSchedule:
    """Linear-beta forward schedule with cached cumulative products."""

    timesteps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 2e-2
    beta: np.ndarray = field(init=False, repr=False)
    alpha_bar: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.timesteps < 1:
            raise ParameterError("timesteps must be >= 1")
        if not (0.0 < self.beta_start < self.beta_end < 1.0):
            raise ParameterError("need 0 < beta_start < beta_end < 1")
        self.beta = np.linspace(self.beta_start, self.beta_end, self.timesteps, dtype=np.float64)
        self.alpha_bar = np.cumprod(1.0 - self.beta)
        if not (np.all(self.beta > 0) and np.all(self.beta < 1)):
            raise ParameterError("beta out of (0, 1)")
        if not np.all(np.diff(self.alpha_bar) < 0):
            raise ParameterError("alpha_bar must be strictly decreasing")

    def alpha_bar_at(self, t: int) -> float:
        """Cumulative alpha at 1-based timestep t; t = 0 means no noise."""
        if t == 0:
            return 1.0
        if not 1 <= t <= self.timesteps:
            raise ParameterError(f"t={t} outside [1, {self.timesteps}]")
        return float(self.alpha_bar[t - 1])


def forward_diffuse(
    z0: torch.Tensor, t: int | torch.Tensor, eps: torch.Tensor, schedule: DiffusionSchedule
) -> torch.Tensor:
    """z_t = sqrt(alpha_bar_t) * z0 + sqrt(1 - alpha_bar_t) * eps."""
    if eps.shape != z0.shape:
        raise DimensionError(f"eps shape {tuple(eps.shape)} != z0 shape {tuple(z0.shape)}")
    if isinstance(t, torch.Tensor):
        t_idx = t.long()
        if t_idx.min() < 1 or t_idx.max() > schedule.timesteps:
            raise ParameterError(f"t outside [1, {schedule.timesteps}]")
        ab = torch.from_numpy(schedule.alpha_bar).to(z0.dtype)[t_idx - 1]
        ab = ab.reshape(-1, *([1] * (z0.dim() - 1)))
    else:
        ab = torch.tensor(schedule.alpha_bar_at(int(t)), dtype=z0.dtype)
        if int(t) < 1:
            raise ParameterError("t must be >= 1")
    return torch.sqrt(ab) * z0 + torch.sqrt(1.0 - ab) * eps


def ddim_timesteps(total: int, steps: int) -> list[int]:
    """Descending uniform-stride subsequence of [1, total]; steps == total
    yields every timestep."""
    if steps < 1 or steps > total:
        raise ParameterError(f"steps must be in [1, {total}], got {steps}")
    stride = total // steps
    return [1 + k * stride for k in reversed(range(steps))]


def ddim_sample(
    z_init: torch.Tensor,
    steps: int,
    schedule: DiffusionSchedule,
    predict: Callable[[torch.Tensor, int], torch.Tensor],
) -> torch.Tensor:
    """Deterministic (eta = 0) DDIM recursion.

    ``predict(z_t, t)`` returns the noise estimate at 1-based timestep t;
    ``z_init`` is treated as the state at the first (largest) selected
    timestep. The final update uses alpha_bar = 1 at t = 0, so the return
    value is the last x0 prediction.
    """
    ts = ddim_timesteps(schedule.timesteps, steps)
    z = z_init
    for i, t in enumerate(ts):
        ab_t = schedule.alpha_bar_at(t)
        t_prev = ts[i + 1] if i + 1 < len(ts) else 0
        ab_prev = schedule.alpha_bar_at(t_prev)
        eps_hat = predict(z, t)
        if eps_hat.shape != z.shape:
            raise DimensionError("noise prediction shape mismatch")
        x0 = (z - math.sqrt(1.0 - ab_t) * eps_hat) / math.sqrt(ab_t)
        z = math.sqrt(ab_prev) * x0 + math.sqrt(1.0 - ab_prev) * eps_hat
    return z


@dataclass
class ArchConfig:
    """Hyperparameters of the miniature backbone."""

    image_size: int = 64
    latent_channels: int = 4
    encoder_widths: tuple[int, int, int] = (16, 32, 64)
    decoder_widths: tuple[int, int, int] = (16, 32, 96)
    unet_widths: tuple[int, int, int] = (32, 64, 128)
    time_dim: int = 128

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("encoder_widths", "decoder_widths", "unet_widths"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        return cls(
            image_size=int(d["image_size"]),
            latent_channels=int(d["latent_channels"]),
            encoder_widths=tuple(d["encoder_widths"]),
            decoder_widths=tuple(d["decoder_widths"]),
            unet_widths=tuple(d["unet_widths"]),
            time_dim=int(d["time_dim"]),
        )


class BackboneBundle:
    """Encoder E, decoder D, UNet and schedule, frozen after pretraining.

    encode/decode work in a scaled latent space: raw encoder outputs are
    multiplied by ``latent_scale`` (fit at pretraining time so latents
    have roughly unit variance, which the standard noise schedule
    assumes), and decode undoes the scaling.
    """

    def __init__(
        self,
        arch: ArchConfig,
        schedule: DiffusionSchedule,
        dtype: torch.dtype = torch.float32,
    ):
        self.arch = arch
        self.schedule = schedule
        self.encoder = ImageEncoder(arch.encoder_widths, arch.latent_channels).to(dtype)
        self.decoder = ImageDecoder(arch.decoder_widths, arch.latent_channels).to(dtype)
        self.unet = NoiseUNet(arch.latent_channels, arch.unet_widths, arch.time_dim).to(dtype)
        self.latent_scale = 1.0
        self.preview_weight = torch.zeros(3, arch.latent_channels, dtype=dtype)
        self.preview_bias = torch.zeros(3, dtype=dtype)
        self.frozen = False

    # -- shapes -----------------------------------------------------------

    def latent_hw(self, image_hw: tuple[int, int]) -> tuple[int, int]:
        h, w = image_hw
        if h % DOWNSAMPLE_FACTOR or w % DOWNSAMPLE_FACTOR:
            raise DimensionError(f"image dims {h}x{w} not divisible by {DOWNSAMPLE_FACTOR}")
        return h // DOWNSAMPLE_FACTOR, w // DOWNSAMPLE_FACTOR

    def unet_points(self, latent_hw: tuple[int, int]) -> list[ModPoint]:
        return self.unet.modulation_points(latent_hw)

    def decoder_points(self, latent_hw: tuple[int, int]) -> list[ModPoint]:
        return self.decoder.modulation_points(latent_hw)

    # -- core operations ---------------------------------------------------

    def encode(self, img: torch.Tensor) -> torch.Tensor:
        """Deterministic latent of a (B, 3, H, W) batch in [0, 1]."""
        if img.dim() != 4 or img.shape[1] != 3:
            raise DimensionError(f"expected (B, 3, H, W), got {tuple(img.shape)}")
        self.latent_hw(tuple(img.shape[-2:]))
        return self.encoder(img) * self.latent_scale

    def decode(
        self,
        z: torch.Tensor,
        modulations: list[tuple[torch.Tensor, torch.Tensor]] | None = None,
    ) -> torch.Tensor:
        """sRGB batch in [0, 1] from a latent batch, optionally modulated."""
        if z.dim() != 4 or z.shape[1] != self.arch.latent_channels:
            raise DimensionError(f"expected (B, {self.arch.latent_channels}, h, w), got {tuple(z.shape)}")
        return self.decoder(z / self.latent_scale, modulations)

    def unet_predict(
        self,
        z_t: torch.Tensor,
        t: int | torch.Tensor,
        modulations: list[tuple[torch.Tensor, torch.Tensor]] | None = None,
    ) -> torch.Tensor:
        if isinstance(t, int):
            t = torch.full((z_t.shape[0],), t, dtype=torch.long)
        if t.min() < 1 or t.max() > self.schedule.timesteps:
            raise ParameterError(f"t outside [1, {self.schedule.timesteps}]")
        return self.unet(z_t, t, modulations)

    def latent_preview(self, z: torch.Tensor) -> torch.Tensor:
        """Linear latent -> RGB map (least-squares fit at pretraining),
        clamped to [0, 1]; stays at latent resolution."""
        rgb = torch.einsum("ck,bkhw->bchw", self.preview_weight, z) + self.preview_bias[None, :, None, None]
        return rgb.clamp(0.0, 1.0)

    # -- freezing -----------------------------------------------------------

    def _modules(self) -> dict[str, torch.nn.Module]:
        return {"encoder": self.encoder, "decoder": self.decoder, "unet": self.unet}

    def parameters(self):
        for m in self._modules().values():
            yield from m.parameters()

    def parameter_count(self) -> int:
        return sum(count_parameters(m) for m in self._modules().values())

    def freeze(self) -> None:
        for m in self._modules().values():
            m.eval()
            for p in m.parameters():
                p.requires_grad_(False)
        self.frozen = True

    def parameter_checksum(self) -> str:
        """SHA-256 over every parameter (name, shape, raw bytes), plus the
        preview map and latent scale."""
        h = hashlib.sha256()
        for prefix, module in self._modules().items():
            for name, p in sorted(module.state_dict().items()):
                arr = p.detach().cpu().numpy()
                h.update(f"{prefix}.{name}:{arr.shape}:{arr.dtype}".encode())
                h.update(np.ascontiguousarray(arr).tobytes())
        for name, tensor in (("preview_weight", self.preview_weight), ("preview_bias", self.preview_bias)):
            arr = tensor.detach().cpu().numpy()
            h.update(f"{name}:{arr.shape}".encode())
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update(f"latent_scale:{self.latent_scale!r}".encode())
        return h.hexdigest()


# ---------------------------------------------------------------------------
# Pretraining

@dataclass
class PretrainConfig:
    seed: int = 0
    ae_steps: int = 2400
    unet_steps: int = 1500
    batch_size: int = 8
    ae_lr: float = 3e-3
    unet_lr: float = 1e-3
    min_recon_psnr: float = 28.0
    min_unet_loss_drop: float = 0.5
    arch: ArchConfig = field(default_factory=ArchConfig)

    def __post_init__(self):
        if self.ae_steps < 1 or self.unet_steps < 1:
            raise ParameterError("step counts must be >= 1")
        if self.batch_size < 1:
            raise ParameterError("batch_size must be >= 1")


def _to_batch(images: Sequence[np.ndarray] | np.ndarray) -> torch.Tensor:
    arr = np.asarray(images, dtype=np.float32)
    if arr.ndim != 4 or arr.shape[1] != 3:
        raise DimensionError(f"expected (N, 3, H, W) image stack, got {arr.shape}")
    return torch.from_numpy(arr)


def reconstruction_psnr(bundle: BackboneBundle, images: torch.Tensor, batch: int = 16) -> float:
    """Mean per-image PSNR of decode(encode(x)) on an image stack."""
    vals = []
    with torch.no_grad():
        for i in range(0, images.shape[0], batch):
            x = images[i : i + batch]
            rec = bundle.decode(bundle.encode(x))
            mse = ((rec - x) ** 2).flatten(1).mean(dim=1)
            vals.extend((10.0 * torch.log10(1.0 / mse.clamp_min(1e-12))).tolist())
    return float(np.mean(vals))


def pretrain_backbone(
    train_images: Sequence[np.ndarray] | np.ndarray,
    holdout_images: Sequence[np.ndarray] | np.ndarray,
    config: PretrainConfig,
    schedule: DiffusionSchedule | None = None,
    log: Callable[[dict], None] | None = None,
) -> BackboneBundle:
    """Train the miniature autoencoder and unconditional UNet on clean
    synthetic scenes, then freeze.

    Gates (training errors, with diagnostics, when missed):
      - held-out autoencoder reconstruction PSNR >= min_recon_psnr
      - UNet noise-prediction moving average dropped >= min_unet_loss_drop
    """
    schedule = schedule or DiffusionSchedule()
    torch.manual_seed(config.seed)
    bundle = BackboneBundle(config.arch, schedule)
    train = _to_batch(train_images)
    holdout = _to_batch(holdout_images)
    n = train.shape[0]
    if n < config.batch_size:
        raise ParameterError(f"need at least batch_size={config.batch_size} training images, got {n}")
    g = torch.Generator().manual_seed(config.seed)

    # Stage A: autoencoder (two fixed lr drops near the end help squeeze
    # out the last couple of reconstruction dB at desk scale)
    ae_params = list(bundle.encoder.parameters()) + list(bundle.decoder.parameters())
    opt = torch.optim.Adam(ae_params, lr=config.ae_lr)
    decay_at = {int(config.ae_steps * 0.65), int(config.ae_steps * 0.88)}
    for step in range(1, config.ae_steps + 1):
        if step in decay_at:
            for group in opt.param_groups:
                group["lr"] *= 0.33
        idx = torch.randint(0, n, (config.batch_size,), generator=g)
        x = train[idx]
        rec = bundle.decode(bundle.encode(x))
        loss = torch.mean((rec - x) ** 2)
        opt.zero_grad()
        loss.backward()
        opt.step()
        if log and (step % 50 == 0 or step == 1):
            log({"stage": "pretrain-ae", "step": step, "loss": float(loss.detach())})

    recon_psnr = reconstruction_psnr(bundle, holdout)
    if recon_psnr < config.min_recon_psnr:
        raise TrainingError(
            f"autoencoder reconstruction PSNR {recon_psnr:.2f} dB below "
            f"{config.min_recon_psnr:.2f} dB after {config.ae_steps} steps"
        )

    # latent normalization so the standard schedule sees ~unit variance
    with torch.no_grad():
        lat = torch.cat(
            [bundle.encoder(train[i : i + 32]) for i in range(0, n, 32)]
        )
        std = float(lat.std())
    if not (math.isfinite(std) and std > 1e-6):
        raise TrainingError(f"degenerate latent distribution (std={std})")
    bundle.latent_scale = 1.0 / std
    lat = lat * bundle.latent_scale

    # Stage B: unconditional noise prediction on scaled latents
    opt = torch.optim.Adam(bundle.unet.parameters(), lr=config.unet_lr)
    losses: list[float] = []
    for step in range(1, config.unet_steps + 1):
        idx = torch.randint(0, n, (config.batch_size,), generator=g)
        z0 = lat[idx]
        t = torch.randint(1, schedule.timesteps + 1, (config.batch_size,), generator=g)
        eps = torch.randn(z0.shape, generator=g)
        z_t = forward_diffuse(z0, t, eps, schedule)
        pred = bundle.unet(z_t, t)
        loss = torch.mean((pred - eps) ** 2)
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(float(loss.detach()))
        if log and (step % 50 == 0 or step == 1):
            log({"stage": "pretrain-unet", "step": step, "loss": float(loss.detach())})
    window = min(50, max(1, len(losses) // 4))
    first, last = float(np.mean(losses[:window])), float(np.mean(losses[-window:]))
    if not math.isfinite(last) or last > (1.0 - config.min_unet_loss_drop) * first:
        raise TrainingError(
            f"unconditional diffusion loss did not converge: first window {first:.4f}, "
            f"last window {last:.4f} (needs <= {(1.0 - config.min_unet_loss_drop) * first:.4f})"
        )

    _fit_latent_preview(bundle, lat)
    bundle.freeze()
    return bundle


def _fit_latent_preview(bundle: BackboneBundle, latents: torch.Tensor) -> None:
    """Least-squares linear map from latent channels to the decoded RGB
    averaged down to latent resolution."""
    with torch.no_grad():
        rgb_small = []
        for i in range(0, latents.shape[0], 32):
            dec = bundle.decode(latents[i : i + 32])
            rgb_small.append(torch.nn.functional.avg_pool2d(dec, DOWNSAMPLE_FACTOR))
        rgb = torch.cat(rgb_small)
    c_z = latents.shape[1]
    x = latents.permute(0, 2, 3, 1).reshape(-1, c_z).numpy().astype(np.float64)
    y = rgb.permute(0, 2, 3, 1).reshape(-1, 3).numpy().astype(np.float64)
    x1 = np.concatenate([x, np.ones((x.shape[0], 1))], axis=1)
    sol, *_ = np.linalg.lstsq(x1, y, rcond=None)
    bundle.preview_weight = torch.from_numpy(sol[:c_z].T.copy()).to(torch.float32)
    bundle.preview_bias = torch.from_numpy(sol[c_z].copy()).to(torch.float32)


# ---------------------------------------------------------------------------
# Persistence

def save_bundle(bundle: BackboneBundle, directory: Path | str) -> None:
    tensors: dict[str, np.ndarray] = {}
    for prefix, module in bundle._modules().items():
        for name, p in module.state_dict().items():
            tensors[f"{prefix}.{name}"] = p.detach().cpu().numpy()
    tensors["preview_weight"] = bundle.preview_weight.numpy()
    tensors["preview_bias"] = bundle.preview_bias.numpy()
    meta = {
        "kind": "backbone-bundle",
        "arch": bundle.arch.to_dict(),
        "schedule": {
            "timesteps": bundle.schedule.timesteps,
            "beta_start": bundle.schedule.beta_start,
            "beta_end": bundle.schedule.beta_end,
        },
        "latent_scale": bundle.latent_scale,
        "frozen": bundle.frozen,
        "checksum": bundle.parameter_checksum(),
        "parameter_count": bundle.parameter_count(),
    }
    save_tensor_map(directory, tensors, meta)


def load_bundle(directory: Path | str) -> BackboneBundle:
    tensors, meta = load_tensor_map(directory)
    if meta.get("kind") != "backbone-bundle":
        raise FormatError(f"{directory}: not a backbone bundle")
    sched = DiffusionSchedule(
        timesteps=int(meta["schedule"]["timesteps"]),
        beta_start=float(meta["schedule"]["beta_start"]),
        beta_end=float(meta["schedule"]["beta_end"]),
    )
    bundle = BackboneBundle(ArchConfig.from_dict(meta["arch"]), sched)
    bundle.latent_scale = float(meta["latent_scale"])
    for prefix, module in bundle._modules().items():
        state = {
            name[len(prefix) + 1 :]: torch.from_numpy(arr.copy())
            for name, arr in tensors.items()
            if name.startswith(prefix + ".")
        }
        module.load_state_dict(state, strict=True)
    bundle.preview_weight = torch.from_numpy(tensors["preview_weight"].copy())
    bundle.preview_bias = torch.from_numpy(tensors["preview_bias"].copy())
    if meta.get("frozen"):
        bundle.freeze()
    if bundle.parameter_checksum() != meta["checksum"]:
        raise FormatError(f"{directory}: parameter checksum mismatch")
    return bundle
