"""Sensor-domain data handling: Bayer RAW representation, packing,
normalization, synthetic scene generation and the inverse-ISP degradation
used to manufacture low-light training pairs.

Everything here is a pure function of its arguments (seeds included), so
dataset synthesis can run concurrently with per-sample seeds.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .container import read_record, write_record, atomic_write_bytes
from .errors import DimensionError, FormatError, ParameterError

GAMMA = 2.2  # display transfer curve of the synthetic ISP; identity color matrix

# Default sensor model (14-bit, SID-Sony-like levels).
DEFAULT_BLACK_LEVEL = 512
DEFAULT_WHITE_LEVEL = 16383
DEFAULT_BIT_DEPTH = 14


@dataclass
class BayerRaw:
    """A single-channel RGGB mosaic of integer sensor counts.

    data is (H, W) uint16 with H, W even; values live in
    [0, 2**bit_depth - 1]. Only the RGGB pattern is supported; anything
    else is rejected rather than silently swapping channels.
    """

    data: np.ndarray
    black_level: int = DEFAULT_BLACK_LEVEL
    white_level: int = DEFAULT_WHITE_LEVEL
    bit_depth: int = DEFAULT_BIT_DEPTH
    pattern: str = "RGGB"

    def __post_init__(self):
        if self.pattern != "RGGB":
            raise ParameterError(f"unsupported Bayer pattern {self.pattern!r}; only RGGB")
        self.data = np.asarray(self.data)
        if self.data.ndim != 2:
            raise DimensionError(f"BayerRaw data must be 2-D, got shape {self.data.shape}")
        h, w = self.data.shape
        if h % 2 or w % 2:
            raise DimensionError(f"BayerRaw dims must be even, got {h}x{w}")
        if self.black_level >= self.white_level:
            raise ParameterError("black_level must be below white_level")
        limit = 2**self.bit_depth - 1
        if self.data.min() < 0 or self.data.max() > limit:
            raise ParameterError(f"sensor counts outside [0, {limit}]")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass
class PackedRaw:
    """Half-resolution 4-channel packing of a mosaic, normalized to [0, 1].

    Channel order is fixed as (R, G1, G2, B).
    """

    data: np.ndarray  # (4, H/2, W/2) float32
    ratio: float

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 3 or self.data.shape[0] != 4:
            raise DimensionError(f"PackedRaw data must be (4, h, w), got {self.data.shape}")
        if self.ratio <= 0:
            raise ParameterError("amplification ratio must be positive")


@dataclass
class SrgbImage:
    """Display-referred RGB image, channels-first, values in [0, 1]."""

    data: np.ndarray  # (3, H, W) float32

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 3 or self.data.shape[0] != 3:
            raise DimensionError(f"SrgbImage data must be (3, H, W), got {self.data.shape}")
        if self.data.min() < 0.0 or self.data.max() > 1.0:
            raise ParameterError("sRGB values must lie in [0, 1]")

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


@dataclass
class DegradationParams:
    """Knobs of the synthetic low-light degradation.

    ratio is the brightness amplification that undoes the exposure loss;
    shot_gain scales counts to photo-electrons for Poisson shot noise
    (math.inf disables shot noise); read_sigma is Gaussian read noise in
    counts. Identical params + seed give identical degradations.
    """

    ratio: float
    shot_gain: float = 1.0
    read_sigma: float = 3.0
    seed: int = 0

    def __post_init__(self):
        if self.ratio < 1:
            raise ParameterError("ratio must be >= 1")
        if self.shot_gain <= 0:
            raise ParameterError("shot_gain must be positive")
        if self.read_sigma < 0:
            raise ParameterError("read_sigma must be non-negative")


@dataclass
class ScenePair:
    """One training/eval record: low-light mosaic, clean sRGB target, ratio."""

    low: BayerRaw
    target: SrgbImage
    ratio: float

    def __post_init__(self):
        if (self.low.height, self.low.width) != (self.target.height, self.target.width):
            raise DimensionError(
                f"low {self.low.data.shape} and target spatial dims "
                f"{self.target.data.shape[1:]} must match"
            )
        if self.ratio <= 0:
            raise ParameterError("ratio must be positive")


# ---------------------------------------------------------------------------
# Packing

def pack_bayer(raw: BayerRaw) -> np.ndarray:
    """Rearrange an RGGB mosaic into a (4, H/2, W/2) channel stack.

    Channel c at (i, j) is the sensor count at the corresponding mosaic
    site, so the operation is lossless: unpack_bayer recovers the mosaic
    exactly.
    """
    m = raw.data
    return np.stack(
        [
            m[0::2, 0::2],  # R
            m[0::2, 1::2],  # G1
            m[1::2, 0::2],  # G2
            m[1::2, 1::2],  # B
        ]
    )


def unpack_bayer(packed: np.ndarray) -> np.ndarray:
    """Inverse of pack_bayer: (4, h, w) stack back to a (2h, 2w) mosaic."""
    packed = np.asarray(packed)
    if packed.ndim != 3 or packed.shape[0] != 4:
        raise DimensionError(f"expected (4, h, w), got {packed.shape}")
    _, h, w = packed.shape
    mosaic = np.empty((2 * h, 2 * w), dtype=packed.dtype)
    mosaic[0::2, 0::2] = packed[0]
    mosaic[0::2, 1::2] = packed[1]
    mosaic[1::2, 0::2] = packed[2]
    mosaic[1::2, 1::2] = packed[3]
    return mosaic


def normalize_amplify(packed: np.ndarray, black: int, white: int, ratio: float) -> PackedRaw:
    """Black-subtract, scale to [0, 1], amplify by ratio, clamp to [0, 1].

    v -> clamp(max(v - black, 0) / (white - black) * ratio, 0, 1),
    the SID-style preprocessing convention.
    """
    if ratio <= 0:
        raise ParameterError("ratio must be positive")
    if black >= white:
        raise ParameterError("black level must be below white level")
    x = np.asarray(packed, dtype=np.float32)
    x = np.maximum(x - black, 0.0) / float(white - black)
    x = np.clip(x * ratio, 0.0, 1.0)
    return PackedRaw(data=x, ratio=float(ratio))


def pack_and_normalize(raw: BayerRaw, ratio: float) -> PackedRaw:
    return normalize_amplify(pack_bayer(raw), raw.black_level, raw.white_level, ratio)


# ---------------------------------------------------------------------------
# Synthetic clean scenes

def _segment_distance(yy, xx, p0, p1):
    # distance from every pixel to the segment p0-p1
    d = p1 - p0
    denom = float(d @ d) + 1e-12
    t = ((yy - p0[0]) * d[0] + (xx - p0[1]) * d[1]) / denom
    t = np.clip(t, 0.0, 1.0)
    return np.hypot(yy - (p0[0] + t * d[0]), xx - (p0[1] + t * d[1]))


def synthesize_scene(seed: int, size: tuple[int, int]) -> SrgbImage:
    """Procedural clean scene: smooth color gradients plus rectangles,
    disks, a sinusoidal texture patch and a few text-like strokes.

    Deterministic for a fixed seed; output values stay inside [0.03, 0.97]
    so both smooth regions and hard edges survive the display clamp.
    Shape colors are blended toward the base palette and a light blur is
    applied at the end, keeping edge contrast in a range the desk-scale
    autoencoder can actually represent.
    """
    from scipy.ndimage import gaussian_filter

    h, w = size
    if h < 32 or w < 32:
        raise ParameterError(f"scene size must be at least 32x32, got {h}x{w}")
    if h % 2 or w % 2:
        raise DimensionError("scene dims must be even")
    color_mix = 0.45
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(np.linspace(0, 1, h), np.linspace(0, 1, w), indexing="ij")

    # smooth base: two random colors blended along a random direction
    c0, c1 = rng.uniform(0.15, 0.85, size=(2, 3))
    theta = rng.uniform(0, 2 * math.pi)
    ramp = (np.cos(theta) * xx + np.sin(theta) * yy + 1.0) / 2.0
    img = c0[:, None, None] + (c1 - c0)[:, None, None] * ramp[None]
    base_mean = img.mean(axis=(1, 2))

    def shape_color() -> np.ndarray:
        return base_mean * (1 - color_mix) + rng.uniform(0.1, 0.9, 3) * color_mix

    for _ in range(rng.integers(2, 4)):  # rectangles
        y0, x0 = rng.uniform(0.05, 0.7, 2)
        y1 = y0 + rng.uniform(0.1, 0.3)
        x1 = x0 + rng.uniform(0.1, 0.3)
        mask = (yy >= y0) & (yy < y1) & (xx >= x0) & (xx < x1)
        img = np.where(mask[None], shape_color()[:, None, None], img)

    for _ in range(rng.integers(2, 4)):  # disks
        cy, cx = rng.uniform(0.15, 0.85, 2)
        r = rng.uniform(0.05, 0.18)
        mask = (yy - cy) ** 2 + (xx - cx) ** 2 < r**2
        img = np.where(mask[None], shape_color()[:, None, None], img)

    # one sinusoidal texture patch
    y0, x0 = rng.uniform(0.05, 0.5, 2)
    y1 = y0 + rng.uniform(0.2, 0.4)
    x1 = x0 + rng.uniform(0.2, 0.4)
    region = (yy >= y0) & (yy < y1) & (xx >= x0) & (xx < x1)
    fy, fx = rng.uniform(3, 8, 2)
    phase = rng.uniform(0, 2 * math.pi)
    tex = 0.5 + 0.25 * np.sin(2 * math.pi * (fy * yy + fx * xx) + phase)
    blend = rng.uniform(0.3, 0.6)
    img = np.where(region[None], (1 - blend) * img + blend * tex[None], img)

    # text-like strokes: short connected thin segments
    yy_px, xx_px = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    stroke_color = shape_color()
    width = rng.uniform(0.5, 1.0)
    p = rng.uniform([0.15 * h, 0.15 * w], [0.85 * h, 0.85 * w])
    for _ in range(rng.integers(3, 5)):
        step = rng.uniform(-0.15, 0.15, 2) * np.array([h, w])
        q = np.clip(p + step, [1, 1], [h - 2, w - 2])
        dist = _segment_distance(yy_px, xx_px, p, q)
        img = np.where((dist < width)[None], stroke_color[:, None, None], img)
        p = q

    img = np.stack([gaussian_filter(c, 0.7) for c in img])
    img = np.clip(img, 0.03, 0.97)
    return SrgbImage(data=img.astype(np.float32))


# ---------------------------------------------------------------------------
# Inverse ISP degradation

def srgb_to_linear(x: np.ndarray) -> np.ndarray:
    return np.power(np.clip(x, 0.0, 1.0), GAMMA)


def linear_to_srgb(x: np.ndarray) -> np.ndarray:
    return np.power(np.clip(x, 0.0, 1.0), 1.0 / GAMMA)


def mosaic_rggb(rgb_linear: np.ndarray) -> np.ndarray:
    """Sample a (3, H, W) linear RGB image onto the RGGB mosaic."""
    if rgb_linear.ndim != 3 or rgb_linear.shape[0] != 3:
        raise DimensionError(f"expected (3, H, W), got {rgb_linear.shape}")
    _, h, w = rgb_linear.shape
    if h % 2 or w % 2:
        raise DimensionError("mosaic dims must be even")
    m = np.empty((h, w), dtype=rgb_linear.dtype)
    m[0::2, 0::2] = rgb_linear[0, 0::2, 0::2]
    m[0::2, 1::2] = rgb_linear[1, 0::2, 1::2]
    m[1::2, 0::2] = rgb_linear[1, 1::2, 0::2]
    m[1::2, 1::2] = rgb_linear[2, 1::2, 1::2]
    return m


def degrade(
    clean: SrgbImage,
    params: DegradationParams,
    black: int = DEFAULT_BLACK_LEVEL,
    white: int = DEFAULT_WHITE_LEVEL,
    bit_depth: int = DEFAULT_BIT_DEPTH,
) -> BayerRaw:
    """Inverse-ISP a clean sRGB image into a noisy low-light mosaic.

    Pipeline: inverse gamma -> RGGB mosaic -> divide by ratio -> Poisson
    shot noise at shot_gain -> Gaussian read noise -> add black level ->
    quantize -> clamp. In expectation, unpack + normalize_amplify of the
    output recovers the mosaiced inverse-gamma input up to quantization
    and shadow clamping.
    """
    rng = np.random.default_rng(params.seed)
    linear = srgb_to_linear(clean.data.astype(np.float64))
    mosaic = mosaic_rggb(linear)
    span = float(white - black)
    signal_counts = mosaic / params.ratio * span

    if math.isfinite(params.shot_gain):
        electrons = signal_counts * params.shot_gain
        signal_counts = rng.poisson(electrons).astype(np.float64) / params.shot_gain
    if params.read_sigma > 0:
        signal_counts = signal_counts + rng.normal(0.0, params.read_sigma, size=signal_counts.shape)

    counts = np.rint(signal_counts + black)
    counts = np.clip(counts, 0, 2**bit_depth - 1).astype(np.uint16)
    return BayerRaw(data=counts, black_level=black, white_level=white, bit_depth=bit_depth)


def bilinear_demosaic(packed_norm: PackedRaw) -> np.ndarray:
    """Classic bilinear demosaic of a normalized RGGB mosaic.

    Takes the normalized+amplified packing, rebuilds the mosaic and
    interpolates missing color samples with the standard 3x3 kernels.
    Returns linear RGB (3, H, W); used only by the naive-ISP baseline.
    """
    from scipy.ndimage import convolve

    mosaic = unpack_bayer(packed_norm.data).astype(np.float64)
    h, w = mosaic.shape
    r = np.zeros_like(mosaic)
    g = np.zeros_like(mosaic)
    b = np.zeros_like(mosaic)
    r[0::2, 0::2] = mosaic[0::2, 0::2]
    g[0::2, 1::2] = mosaic[0::2, 1::2]
    g[1::2, 0::2] = mosaic[1::2, 0::2]
    b[1::2, 1::2] = mosaic[1::2, 1::2]

    k_g = np.array([[0, 1, 0], [1, 4, 1], [0, 1, 0]], dtype=np.float64) / 4.0
    k_rb = np.array([[1, 2, 1], [2, 4, 2], [1, 2, 1]], dtype=np.float64) / 4.0
    rgb = np.stack(
        [
            convolve(r, k_rb, mode="mirror"),
            convolve(g, k_g, mode="mirror"),
            convolve(b, k_rb, mode="mirror"),
        ]
    )
    return np.clip(rgb, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Display export

def write_ppm(img: SrgbImage, path: Path | str) -> None:
    """8-bit binary PPM (P6) export for human viewing."""
    h, w = img.height, img.width
    pixels = np.rint(img.data * 255.0).clip(0, 255).astype(np.uint8)
    body = pixels.transpose(1, 2, 0).tobytes()
    atomic_write_bytes(path, f"P6\n{w} {h}\n255\n".encode() + body)


# ---------------------------------------------------------------------------
# Scene-pair persistence (three concatenated container records per file)

def write_pair(pair: ScenePair, path: Path | str) -> None:
    buf = io.BytesIO()
    write_record(buf, pair.low.data.astype(np.uint16))
    write_record(buf, pair.target.data.astype(np.float32))
    meta = np.array(
        [pair.ratio, pair.low.black_level, pair.low.white_level, pair.low.bit_depth],
        dtype=np.float64,
    )
    write_record(buf, meta)
    atomic_write_bytes(path, buf.getvalue())


def read_pair(path: Path | str) -> ScenePair:
    path = Path(path)
    with path.open("rb") as f:
        low = read_record(f)
        target = read_record(f)
        meta = read_record(f)
        if f.read(1):
            raise FormatError(f"{path}: trailing bytes after pair records")
    if low.dtype != np.uint16 or meta.shape != (4,):
        raise FormatError(f"{path}: malformed scene-pair records")
    ratio, black, white, bit_depth = (float(meta[0]), int(meta[1]), int(meta[2]), int(meta[3]))
    raw = BayerRaw(data=low, black_level=black, white_level=white, bit_depth=bit_depth)
    return ScenePair(low=raw, target=SrgbImage(data=target), ratio=ratio)


# ---------------------------------------------------------------------------
# Dataset directories: pairs/NNNNN.pair + manifest.json

def _derived_seed(master: int, index: int, role: int) -> int:
    return int(np.random.SeedSequence([master, index, role]).generate_state(1)[0])


def synthesize_dataset(
    out_dir: Path | str,
    count: int,
    seed: int,
    size: tuple[int, int] = (64, 64),
    ratio: float = 250.0,
    shot_gain: float = 1.0,
    read_sigma: float = 3.0,
) -> dict:
    """Generate ``count`` synthetic scene pairs into a dataset directory.

    Per-pair seeds are derived from the master seed, so the directory is
    byte-identical across runs with the same arguments; the manifest
    records everything needed to regenerate or audit each pair.
    """
    from .container import write_json

    if count < 1:
        raise ParameterError("count must be >= 1")
    out = Path(out_dir)
    (out / "pairs").mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(count):
        scene_seed = _derived_seed(seed, i, 0)
        degrade_seed = _derived_seed(seed, i, 1)
        clean = synthesize_scene(scene_seed, size)
        params = DegradationParams(ratio=ratio, shot_gain=shot_gain, read_sigma=read_sigma, seed=degrade_seed)
        low = degrade(clean, params)
        pair = ScenePair(low=low, target=clean, ratio=ratio)
        rel = f"pairs/{i:05d}.pair"
        write_pair(pair, out / rel)
        entries.append(
            {
                "id": f"{i:05d}",
                "file": rel,
                "scene_seed": scene_seed,
                "degrade_seed": degrade_seed,
                "ratio": ratio,
                "shot_gain": shot_gain,
                "read_sigma": read_sigma,
            }
        )
    manifest = {
        "format": "darkwave-dataset",
        "version": 1,
        "count": count,
        "seed": seed,
        "image_size": list(size),
        "raw": {
            "pattern": "RGGB",
            "black_level": DEFAULT_BLACK_LEVEL,
            "white_level": DEFAULT_WHITE_LEVEL,
            "bit_depth": DEFAULT_BIT_DEPTH,
        },
        "pairs": entries,
    }
    write_json(out / "manifest.json", manifest)
    return manifest


def load_dataset(directory: Path | str) -> tuple[list[ScenePair], list[str], dict]:
    """Read a dataset directory back as (pairs, ids, manifest)."""
    from .container import read_json

    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise FormatError(f"{directory}: missing manifest.json")
    manifest = read_json(manifest_path)
    if manifest.get("format") != "darkwave-dataset":
        raise FormatError(f"{directory}: not a dataset directory")
    pairs, ids = [], []
    for entry in manifest["pairs"]:
        pairs.append(read_pair(directory / entry["file"]))
        ids.append(entry["id"])
    return pairs, ids, manifest
