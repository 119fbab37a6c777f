import math

import numpy as np
import pytest

from darkwave.errors import DimensionError, ParameterError
from darkwave.rawproc import synthesize_scene
from darkwave.wavelets import (
    WaveletSpec,
    dwt2,
    dwt_pyramid,
    idwt2,
    reconstruct,
    resize_baseline,
)


class TestDwt2:
    def test_constant_image(self):
        x = np.full((2, 8, 8), 3.5)
        ll, lh, hl, hh = dwt2(x)
        assert np.allclose(ll, 7.0)
        for band in (lh, hl, hh):
            assert np.allclose(band, 0.0)

    def test_analytic_2x2_block(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0]])
        ll, lh, hl, hh = dwt2(x)
        assert ll[0, 0] == 5.0
        assert hl[0, 0] == -1.0
        assert lh[0, 0] == -2.0
        assert hh[0, 0] == 0.0

    def test_parseval(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((16, 16))
        bands = dwt2(x)
        total = sum(float((b**2).sum()) for b in bands)
        ref = float((x**2).sum())
        assert abs(total - ref) <= 1e-9 * ref

    def test_odd_dims_rejected(self):
        with pytest.raises(DimensionError):
            dwt2(np.zeros((3, 5, 4)))


class TestIdwt2:
    def test_perfect_reconstruction(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((3, 32, 32))
        assert np.abs(idwt2(*dwt2(x)) - x).max() <= 1e-6

    def test_constant_inverse(self):
        k = 1.25
        ll = np.full((4, 4), 2 * k)
        zero = np.zeros((4, 4))
        assert np.allclose(idwt2(ll, zero, zero, zero), k)

    def test_two_sided_inverse(self):
        rng = np.random.default_rng(2)
        bands = tuple(rng.standard_normal((2, 8, 8)) for _ in range(4))
        back = dwt2(idwt2(*bands))
        for got, want in zip(back, bands):
            assert np.abs(got - want).max() <= 1e-6

    def test_shape_mismatch(self):
        z = np.zeros((4, 4))
        with pytest.raises(DimensionError):
            idwt2(z, z, z, np.zeros((2, 2)))


class TestPyramid:
    def test_level_one_equals_dwt2(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((1, 8, 8))
        pyr = dwt_pyramid(x, WaveletSpec(levels=1))
        ll, lh, hl, hh = dwt2(x)
        lvl = pyr.level(1)
        assert np.array_equal(lvl.ll, ll)
        assert np.array_equal(lvl.lh, lh)
        assert np.array_equal(lvl.hl, hl)
        assert np.array_equal(lvl.hh, hh)

    def test_two_levels_constant(self):
        x = np.full((1, 8, 8), 2.0)
        pyr = dwt_pyramid(x, WaveletSpec(levels=2))
        assert np.allclose(pyr.final_ll, 8.0)
        for lvl in pyr.levels:
            for band in (lvl.lh, lvl.hl, lvl.hh):
                assert np.allclose(band, 0.0)

    def test_full_reconstruction(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((3, 32, 32))
        pyr = dwt_pyramid(x, WaveletSpec(levels=3))
        assert np.abs(reconstruct(pyr) - x).max() <= 1e-6

    def test_divisibility_enforced(self):
        with pytest.raises(DimensionError):
            dwt_pyramid(np.zeros((1, 12, 12)), WaveletSpec(levels=3))

    def test_h_star_layout(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((4, 8, 8))
        lvl = dwt_pyramid(x, WaveletSpec(levels=1)).level(1)
        hs = lvl.h_star
        assert hs.shape == (12, 4, 4)
        assert np.array_equal(hs[:4], lvl.lh)
        assert np.array_equal(hs[4:8], lvl.hl)
        assert np.array_equal(hs[8:], lvl.hh)


class TestLinearity:
    def test_linear_combination(self):
        rng = np.random.default_rng(6)
        x, y = rng.standard_normal((2, 16, 16))
        a, b = 2.3, -0.7
        combined = dwt2(a * x + b * y)
        separate = tuple(a * u + b * v for u, v in zip(dwt2(x), dwt2(y)))
        for got, want in zip(combined, separate):
            assert np.abs(got - want).max() <= 1e-9


class TestNoiseSeparation:
    def test_ll_snr_beats_input_snr(self):
        # structural-clarity motivation: averaging into LL suppresses
        # i.i.d. noise relative to (mostly smooth) signal
        sigma = 0.1
        wins = 0
        n_seeds = 120
        for seed in range(n_seeds):
            rng = np.random.default_rng(seed)
            clean = synthesize_scene(seed, (64, 64)).data.astype(np.float64)
            noise = rng.normal(0.0, sigma, clean.shape)
            snr_input = np.linalg.norm(clean) / np.linalg.norm(noise)
            ll_clean = dwt2(clean)[0]
            ll_noise = dwt2(clean + noise)[0] - ll_clean
            snr_ll = np.linalg.norm(ll_clean) / np.linalg.norm(ll_noise)
            wins += snr_ll > snr_input
        assert wins >= 0.95 * n_seeds


def _bicubic_oracle(x: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    """Direct evaluation of the bicubic kernel sums, nested loops."""

    def kernel(t: float, a: float = -0.5) -> float:
        t = abs(t)
        if t <= 1:
            return (a + 2) * t**3 - (a + 3) * t**2 + 1
        if t < 2:
            return a * t**3 - 5 * a * t**2 + 8 * a * t - 4 * a
        return 0.0

    h_src, w_src = x.shape
    h_dst, w_dst = target
    sy, sx = h_src / h_dst, w_src / w_dst
    out = np.zeros(target)
    for i in range(h_dst):
        for j in range(w_dst):
            cy = (i + 0.5) * sy - 0.5
            cx = (j + 0.5) * sx - 0.5
            acc = 0.0
            wsum = 0.0
            for yy in range(math.ceil(cy - 2 * sy), math.floor(cy + 2 * sy) + 1):
                for xx in range(math.ceil(cx - 2 * sx), math.floor(cx + 2 * sx) + 1):
                    wgt = kernel((yy - cy) / sy) * kernel((xx - cx) / sx)
                    src = x[min(max(yy, 0), h_src - 1), min(max(xx, 0), w_src - 1)]
                    acc += wgt * src
                    wsum += wgt
            out[i, j] = acc / wsum
    return out


class TestResizeBaseline:
    def test_identity_at_same_size(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((2, 6, 6))
        assert np.abs(resize_baseline(x, (6, 6)) - x).max() <= 1e-12

    def test_constant_preserved(self):
        x = np.full((1, 16, 16), 0.4)
        assert np.allclose(resize_baseline(x, (4, 4)), 0.4)

    def test_ramp_against_kernel_sum_oracle(self):
        yy, xx = np.meshgrid(np.arange(4.0), np.arange(4.0), indexing="ij")
        ramp = 0.25 * yy + 0.5 * xx
        got = resize_baseline(ramp, (2, 2))
        want = _bicubic_oracle(ramp, (2, 2))
        assert np.abs(got - want).max() <= 1e-6

    def test_random_against_kernel_sum_oracle(self):
        rng = np.random.default_rng(8)
        x = rng.standard_normal((12, 10))
        got = resize_baseline(x, (5, 4))
        want = _bicubic_oracle(x, (5, 4))
        assert np.abs(got - want).max() <= 1e-9

    def test_upsampling_rejected(self):
        with pytest.raises(ParameterError):
            resize_baseline(np.zeros((4, 4)), (8, 8))


def test_wavelet_spec_validation():
    with pytest.raises(ParameterError):
        WaveletSpec(levels=0)
    with pytest.raises(ParameterError):
        WaveletSpec(levels=1, family="db4")
