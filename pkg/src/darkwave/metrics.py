"""Full-reference quality metrics (PSNR, SSIM) and evaluation reports.

SSIM convention, fixed so numbers are stable across runs: 11x11 Gaussian
window with sigma 1.5, C1 = 0.01**2 and C2 = 0.03**2 on dynamic range 1,
valid windows only (no padding), averaged over RGB channels. Neural
perceptual metrics (LPIPS, NIMA) are out of scope; the report schema
keeps optional columns so externally computed values can be merged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import convolve2d

from .container import write_jsonl, atomic_write_bytes
from .errors import DimensionError
from .rawproc import SrgbImage

PSNR_CAP_DB = 99.0  # text-report stand-in for the +inf identical-image sentinel

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


def _check_pair(x: SrgbImage, y: SrgbImage) -> tuple[np.ndarray, np.ndarray]:
    if x.data.shape != y.data.shape:
        raise DimensionError(f"shape mismatch: {x.data.shape} vs {y.data.shape}")
    return x.data.astype(np.float64), y.data.astype(np.float64)


def psnr(x: SrgbImage, y: SrgbImage) -> float:
    """10 * log10(1 / MSE) in dB; identical images give math.inf."""
    a, b = _check_pair(x, y)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    half = (size - 1) / 2
    coords = np.arange(size) - half
    g = np.exp(-(coords**2) / (2 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(x: SrgbImage, y: SrgbImage) -> float:
    """Mean local SSIM over valid window positions and RGB channels."""
    a, b = _check_pair(x, y)
    h, w = a.shape[1:]
    if min(h, w) < SSIM_WINDOW:
        raise DimensionError(f"image {h}x{w} smaller than SSIM window {SSIM_WINDOW}")
    win = gaussian_window()
    vals = []
    for c in range(3):
        xc, yc = a[c], b[c]
        mu_x = convolve2d(xc, win, mode="valid")
        mu_y = convolve2d(yc, win, mode="valid")
        xx = convolve2d(xc * xc, win, mode="valid") - mu_x**2
        yy = convolve2d(yc * yc, win, mode="valid") - mu_y**2
        xy = convolve2d(xc * yc, win, mode="valid") - mu_x * mu_y
        num = (2 * mu_x * mu_y + SSIM_C1) * (2 * xy + SSIM_C2)
        den = (mu_x**2 + mu_y**2 + SSIM_C1) * (xx + yy + SSIM_C2)
        vals.append(np.mean(num / den))
    return float(np.mean(vals))


@dataclass
class MetricReport:
    """Per-image and mean PSNR/SSIM for one evaluated configuration."""

    label: str
    pair_ids: list[str] = field(default_factory=list)
    psnr_values: list[float] = field(default_factory=list)
    ssim_values: list[float] = field(default_factory=list)
    lpips_values: list[float | None] = field(default_factory=list)  # reserved, external
    nima_values: list[float | None] = field(default_factory=list)  # reserved, external
    config: dict = field(default_factory=dict)

    def add(self, pair_id: str, psnr_db: float, ssim_val: float) -> None:
        self.pair_ids.append(pair_id)
        self.psnr_values.append(psnr_db)
        self.ssim_values.append(ssim_val)
        self.lpips_values.append(None)
        self.nima_values.append(None)

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnr_values))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim_values))

    def records(self) -> list[dict]:
        rows = []
        for i, pid in enumerate(self.pair_ids):
            rows.append(
                {
                    "label": self.label,
                    "pair_id": pid,
                    "psnr_db": _finite(self.psnr_values[i]),
                    "ssim": self.ssim_values[i],
                    "lpips": self.lpips_values[i],
                    "nima": self.nima_values[i],
                }
            )
        rows.append(
            {
                "label": self.label,
                "pair_id": "mean",
                "psnr_db": _finite(self.mean_psnr),
                "ssim": self.mean_ssim,
                "lpips": None,
                "nima": None,
            }
        )
        return rows


def _finite(v: float) -> float:
    return PSNR_CAP_DB if math.isinf(v) else float(v)


def write_report(path_prefix: Path | str, reports: list[MetricReport]) -> None:
    """Emit line-delimited records plus a human-readable comparison table."""
    prefix = Path(path_prefix)
    rows: list[dict] = []
    for rep in reports:
        rows.extend(rep.records())
    write_jsonl(prefix.with_suffix(".jsonl"), rows)

    lines = [f"{'Variant':<24} {'PSNR (dB)':>10} {'SSIM':>8} {'LPIPS':>7} {'NIMA':>7}"]
    lines.append("-" * len(lines[0]))
    for rep in reports:
        lines.append(
            f"{rep.label:<24} {_finite(rep.mean_psnr):>10.2f} {rep.mean_ssim:>8.4f} "
            f"{'-':>7} {'-':>7}"
        )
    atomic_write_bytes(prefix.with_suffix(".txt"), ("\n".join(lines) + "\n").encode())
