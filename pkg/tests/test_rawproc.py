import math

import numpy as np
import pytest

from darkwave.errors import DimensionError, FormatError, ParameterError
from darkwave.rawproc import (
    BayerRaw,
    DegradationParams,
    ScenePair,
    SrgbImage,
    degrade,
    load_dataset,
    mosaic_rggb,
    normalize_amplify,
    pack_bayer,
    read_pair,
    srgb_to_linear,
    synthesize_dataset,
    synthesize_scene,
    unpack_bayer,
    write_pair,
    write_ppm,
)
from darkwave.wavelets import dwt2


def make_raw(data, **kw):
    return BayerRaw(data=np.asarray(data, dtype=np.uint16), **kw)


class TestPackBayer:
    def test_2x2_definition(self):
        raw = make_raw([[100, 200], [150, 50]])
        packed = pack_bayer(raw)
        assert packed.shape == (4, 1, 1)
        assert packed[:, 0, 0].tolist() == [100, 200, 150, 50]

    def test_roundtrip_identity(self):
        rng = np.random.default_rng(0)
        grid = rng.integers(0, 2**14, size=(4, 4)).astype(np.uint16)
        raw = make_raw(grid)
        assert np.array_equal(unpack_bayer(pack_bayer(raw)), grid)

    def test_against_nested_loop_reference(self):
        rng = np.random.default_rng(7)
        grid = rng.integers(0, 2**14, size=(8, 8)).astype(np.uint16)
        packed = pack_bayer(make_raw(grid))
        # brute-force mosaic indexing oracle
        offsets = {0: (0, 0), 1: (0, 1), 2: (1, 0), 3: (1, 1)}
        for c, (dy, dx) in offsets.items():
            for i in range(4):
                for j in range(4):
                    assert packed[c, i, j] == grid[2 * i + dy, 2 * j + dx]

    def test_odd_dims_rejected(self):
        with pytest.raises(DimensionError):
            make_raw(np.zeros((3, 4), dtype=np.uint16))


class TestNormalizeAmplify:
    def test_black_maps_to_zero(self):
        out = normalize_amplify(np.full((4, 1, 1), 512.0), 512, 16383, 1.0)
        assert np.all(out.data == 0.0)

    def test_white_maps_to_one(self):
        out = normalize_amplify(np.full((4, 1, 1), 16383.0), 512, 16383, 1.0)
        assert np.allclose(out.data, 1.0)

    def test_direct_arithmetic(self):
        # (527.871 - 512) / 15871 * 300 = 0.3
        out = normalize_amplify(np.full((4, 1, 1), 527.871), 512, 16383, 300.0)
        assert np.allclose(out.data, 0.3, atol=1e-6)

    def test_bad_ratio(self):
        with pytest.raises(ParameterError):
            normalize_amplify(np.zeros((4, 2, 2)), 512, 16383, 0.0)

    def test_monotone_and_bounded(self):
        rng = np.random.default_rng(3)
        vals = np.sort(rng.uniform(0, 2**14, size=64))
        out = normalize_amplify(vals.reshape(4, 4, 4), 512, 16383, 37.0).data
        assert out.min() >= 0.0 and out.max() <= 1.0
        flat_in = vals
        flat_out = out.reshape(-1)
        assert np.all(np.diff(flat_out[np.argsort(flat_in)]) >= 0)


class TestSynthesizeScene:
    def test_deterministic(self):
        a = synthesize_scene(42, (64, 64))
        b = synthesize_scene(42, (64, 64))
        assert np.array_equal(a.data, b.data)

    def test_seeds_differ(self):
        a = synthesize_scene(1, (64, 64))
        b = synthesize_scene(2, (64, 64))
        assert not np.array_equal(a.data, b.data)

    def test_range(self):
        img = synthesize_scene(5, (64, 64))
        assert img.data.min() >= 0.0 and img.data.max() <= 1.0

    def test_has_detail_energy(self):
        img = synthesize_scene(9, (64, 64))
        _, lh, hl, hh = dwt2(img.data.astype(np.float64))
        detail = float((lh**2).sum() + (hl**2).sum() + (hh**2).sum())
        assert detail > 1e-3

    def test_too_small(self):
        with pytest.raises(ParameterError):
            synthesize_scene(0, (16, 16))


class TestDegrade:
    def test_noise_free_limit(self):
        clean = synthesize_scene(11, (32, 32))
        params = DegradationParams(ratio=1.0, shot_gain=math.inf, read_sigma=0.0, seed=0)
        raw = degrade(clean, params)
        got = normalize_amplify(pack_bayer(raw), raw.black_level, raw.white_level, 1.0)
        expected = mosaic_rggb(srgb_to_linear(clean.data.astype(np.float64)))
        quant = 1.0 / (raw.white_level - raw.black_level)
        diff = np.abs(unpack_bayer(got.data).astype(np.float64) - expected)
        assert diff.max() <= quant + 1e-9

    def test_deterministic(self):
        clean = synthesize_scene(12, (32, 32))
        params = DegradationParams(ratio=100.0, shot_gain=1.0, read_sigma=3.0, seed=77)
        a = degrade(clean, params)
        b = degrade(clean, params)
        assert np.array_equal(a.data, b.data)

    def test_monte_carlo_mean(self):
        # 1000 noisy realizations of a constant 0.5 patch: the sample mean
        # of the normalized output must sit within 3 standard errors of
        # the noise-free value (plus half a quantization step of slack).
        flat = SrgbImage(data=np.full((3, 8, 8), 0.5, dtype=np.float32))
        ratio, gain, sigma = 10.0, 4.0, 2.0
        samples = []
        for seed in range(1000):
            raw = degrade(flat, DegradationParams(ratio=ratio, shot_gain=gain, read_sigma=sigma, seed=seed))
            norm = normalize_amplify(pack_bayer(raw), raw.black_level, raw.white_level, ratio)
            samples.append(norm.data.mean())
        samples = np.asarray(samples)
        noise_free = float(srgb_to_linear(np.float64(0.5)))
        se = samples.std(ddof=1) / math.sqrt(len(samples))
        quant = 0.5 * ratio / (raw.white_level - raw.black_level)
        assert abs(samples.mean() - noise_free) <= 3 * se + quant


class TestPairIO:
    def test_roundtrip_identity(self, tmp_path):
        clean = synthesize_scene(3, (32, 32))
        raw = degrade(clean, DegradationParams(ratio=200.0, seed=5))
        pair = ScenePair(low=raw, target=clean, ratio=200.0)
        path = tmp_path / "x.pair"
        write_pair(pair, path)
        back = read_pair(path)
        assert np.array_equal(back.low.data, pair.low.data)
        assert np.array_equal(back.target.data, pair.target.data)
        assert back.ratio == pair.ratio
        assert back.low.black_level == raw.black_level

    def test_wrong_magic(self, tmp_path):
        path = tmp_path / "bad.pair"
        path.write_bytes(b"JUNKJUNKJUNK")
        with pytest.raises(FormatError):
            read_pair(path)

    def test_truncated(self, tmp_path):
        clean = synthesize_scene(3, (32, 32))
        raw = degrade(clean, DegradationParams(ratio=10.0, seed=5))
        path = tmp_path / "x.pair"
        write_pair(ScenePair(low=raw, target=clean, ratio=10.0), path)
        data = path.read_bytes()
        path.write_bytes(data[: len(data) - 40])
        with pytest.raises(FormatError):
            read_pair(path)


class TestDataset:
    def test_synth_and_load(self, tmp_path):
        synthesize_dataset(tmp_path / "d", count=3, seed=9, size=(32, 32), ratio=50.0)
        pairs, ids, manifest = load_dataset(tmp_path / "d")
        assert len(pairs) == 3 and ids == ["00000", "00001", "00002"]
        assert manifest["count"] == 3
        assert all(p.ratio == 50.0 for p in pairs)

    def test_byte_identical_across_runs(self, tmp_path):
        import hashlib

        def dir_hash(d):
            h = hashlib.sha256()
            for f in sorted(d.rglob("*")):
                if f.is_file():
                    h.update(f.name.encode())
                    h.update(f.read_bytes())
            return h.hexdigest()

        synthesize_dataset(tmp_path / "a", count=2, seed=4, size=(32, 32))
        synthesize_dataset(tmp_path / "b", count=2, seed=4, size=(32, 32))
        assert dir_hash(tmp_path / "a") == dir_hash(tmp_path / "b")


def test_ppm_export(tmp_path):
    img = synthesize_scene(2, (32, 32))
    path = tmp_path / "img.ppm"
    write_ppm(img, path)
    data = path.read_bytes()
    assert data.startswith(b"P6\n32 32\n255\n")
    assert len(data) == len(b"P6\n32 32\n255\n") + 32 * 32 * 3
