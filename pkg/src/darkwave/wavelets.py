"""Multi-level 2-D orthonormal Haar transform and the bicubic-resize
conditioning baseline.

Subband convention, fixed once so golden tests stay bit-stable: for each
2x2 block [[a, b], [c, d]] (a top-left, b top-right, c bottom-left,
d bottom-right)

    LL = (a + b + c + d) / 2      HL = (a - b + c - d) / 2
    LH = (a + b - c - d) / 2      HH = (a - b - c + d) / 2

The transform matrix is orthonormal and symmetric, so the inverse applies
the same combination to the subbands. Arrays may carry any leading axes;
the transform acts on the trailing two.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, ParameterError


@dataclass
class WaveletSpec:
    """Transform family and depth. Only Haar is supported."""

    levels: int
    family: str = "haar"

    def __post_init__(self):
        if self.family != "haar":
            raise ParameterError(f"unsupported wavelet family {self.family!r}")
        if self.levels < 1:
            raise ParameterError("levels must be >= 1")


def dwt2(x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """One orthonormal Haar level; returns (LL, LH, HL, HH)."""
    x = np.asarray(x)
    h, w = x.shape[-2:]
    if h % 2 or w % 2:
        raise DimensionError(f"spatial dims must be even, got {h}x{w}")
    a = x[..., 0::2, 0::2]
    b = x[..., 0::2, 1::2]
    c = x[..., 1::2, 0::2]
    d = x[..., 1::2, 1::2]
    ll = (a + b + c + d) / 2
    hl = (a - b + c - d) / 2
    lh = (a + b - c - d) / 2
    hh = (a - b - c + d) / 2
    return ll, lh, hl, hh


def idwt2(ll: np.ndarray, lh: np.ndarray, hl: np.ndarray, hh: np.ndarray) -> np.ndarray:
    """Invert dwt2. The Haar matrix is its own inverse (symmetric orthonormal)."""
    ll, lh, hl, hh = (np.asarray(s) for s in (ll, lh, hl, hh))
    if not (ll.shape == lh.shape == hl.shape == hh.shape):
        raise DimensionError(
            f"subband shapes differ: {ll.shape}, {lh.shape}, {hl.shape}, {hh.shape}"
        )
    a = (ll + hl + lh + hh) / 2
    b = (ll - hl + lh - hh) / 2
    c = (ll + hl - lh - hh) / 2
    d = (ll - hl - lh + hh) / 2
    h, w = ll.shape[-2:]
    out = np.empty(ll.shape[:-2] + (2 * h, 2 * w), dtype=a.dtype)
    out[..., 0::2, 0::2] = a
    out[..., 0::2, 1::2] = b
    out[..., 1::2, 0::2] = c
    out[..., 1::2, 1::2] = d
    return out


@dataclass
class PyramidLevel:
    """Subbands of one decomposition level, shapes C x H/2^l x W/2^l."""

    ll: np.ndarray
    lh: np.ndarray
    hl: np.ndarray
    hh: np.ndarray

    @property
    def h_star(self) -> np.ndarray:
        """Channel concatenation (LH, HL, HH) of the detail bands."""
        return np.concatenate([self.lh, self.hl, self.hh], axis=0)


@dataclass
class SubbandSet:
    """All levels of a recursive Haar decomposition, finest first."""

    spec: WaveletSpec
    levels: list[PyramidLevel] = field(default_factory=list)

    def level(self, index: int) -> PyramidLevel:
        """1-based level access (level 1 is the finest)."""
        return self.levels[index - 1]

    @property
    def final_ll(self) -> np.ndarray:
        return self.levels[-1].ll


def dwt_pyramid(x: np.ndarray, spec: WaveletSpec) -> SubbandSet:
    """Recursive decomposition: level l transforms LL of level l-1.

    Every level is retained because decoder conditioning consumes
    multiple scales, not only the deepest LL.
    """
    x = np.asarray(x)
    h, w = x.shape[-2:]
    div = 2**spec.levels
    if h % div or w % div:
        raise DimensionError(f"dims {h}x{w} not divisible by 2^levels = {div}")
    out = SubbandSet(spec=spec)
    cur = x
    for _ in range(spec.levels):
        ll, lh, hl, hh = dwt2(cur)
        out.levels.append(PyramidLevel(ll=ll, lh=lh, hl=hl, hh=hh))
        cur = ll
    return out


def reconstruct(subbands: SubbandSet) -> np.ndarray:
    """Invert a full pyramid back to the original array."""
    cur = subbands.final_ll
    for level in reversed(subbands.levels):
        cur = idwt2(cur, level.lh, level.hl, level.hh)
    return cur


# ---------------------------------------------------------------------------
# Bicubic resize (the "just shrink the input" conditioning alternative)

def _keys_kernel(t: np.ndarray, a: float = -0.5) -> np.ndarray:
    at = np.abs(t)
    out = np.zeros_like(at)
    near = at <= 1
    far = (at > 1) & (at < 2)
    out[near] = (a + 2) * at[near] ** 3 - (a + 3) * at[near] ** 2 + 1
    out[far] = a * at[far] ** 3 - 5 * a * at[far] ** 2 + 8 * a * at[far] - 4 * a
    return out


def _resize_weights(n_src: int, n_dst: int) -> np.ndarray:
    """Row-stochastic (n_dst, n_src) bicubic weight matrix.

    Downscaling widens the kernel support by the scale factor
    (anti-aliased convention); taps outside the image clamp to the edge
    and weights are renormalized to sum to one.
    """
    scale = n_src / n_dst
    support = 2.0 * scale
    weights = np.zeros((n_dst, n_src), dtype=np.float64)
    for i in range(n_dst):
        center = (i + 0.5) * scale - 0.5
        lo = math.ceil(center - support)
        hi = math.floor(center + support)
        taps = np.arange(lo, hi + 1)
        w = _keys_kernel((taps - center) / scale)
        taps = np.clip(taps, 0, n_src - 1)
        row = np.zeros(n_src)
        np.add.at(row, taps, w)
        weights[i] = row / row.sum()
    return weights


def resize_baseline(x: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    """Bicubic downsampling of (..., H, W) to (..., h, w).

    Only used by the ablation harness as the conditioning alternative to
    the LL subband; upsampling requests are rejected.
    """
    x = np.asarray(x, dtype=np.float64)
    h_src, w_src = x.shape[-2:]
    h_dst, w_dst = target
    if h_dst > h_src or w_dst > w_src:
        raise ParameterError(
            f"resize_baseline only downsamples: {h_src}x{w_src} -> {h_dst}x{w_dst}"
        )
    if h_dst < 1 or w_dst < 1:
        raise ParameterError("target dims must be >= 1")
    wy = _resize_weights(h_src, h_dst)
    wx = _resize_weights(w_src, w_dst)
    out = np.einsum("ij,...jk,lk->...il", wy, x, wx)
    return out
