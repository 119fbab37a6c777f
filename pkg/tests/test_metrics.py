import math

import numpy as np
import pytest

from darkwave.errors import DimensionError
from darkwave.metrics import (
    MetricReport,
    PSNR_CAP_DB,
    SSIM_C1,
    SSIM_C2,
    gaussian_window,
    psnr,
    ssim,
    write_report,
)
from darkwave.rawproc import SrgbImage


def img(arr):
    return SrgbImage(data=np.asarray(arr, dtype=np.float32))


def random_pair(seed, size=16):
    rng = np.random.default_rng(seed)
    return (
        img(rng.uniform(0, 1, (3, size, size))),
        img(rng.uniform(0, 1, (3, size, size))),
    )


class TestPsnr:
    def test_identical_gives_inf(self):
        x, _ = random_pair(0)
        assert psnr(x, x) == math.inf

    def test_uniform_difference(self):
        # tolerance covers float32 storage of the 0.1 offset
        x = img(np.full((3, 16, 16), 0.5))
        y = img(np.full((3, 16, 16), 0.6))
        assert abs(psnr(x, y) - 20.0) <= 1e-5

    def test_brute_force_oracle(self):
        x, y = random_pair(1)
        acc = 0.0
        for c in range(3):
            for i in range(16):
                for j in range(16):
                    acc += (float(x.data[c, i, j]) - float(y.data[c, i, j])) ** 2
        mse = acc / (3 * 16 * 16)
        assert abs(psnr(x, y) - 10 * math.log10(1 / mse)) <= 1e-9

    def test_shape_mismatch(self):
        x, _ = random_pair(2)
        y = img(np.zeros((3, 12, 12)))
        with pytest.raises(DimensionError):
            psnr(x, y)

    def test_monotone_in_mse(self):
        base = img(np.full((3, 16, 16), 0.5))
        worse = [img(np.full((3, 16, 16), 0.5 + d)) for d in (0.1, 0.2, 0.4)]
        values = [psnr(base, w) for w in worse]
        assert values[0] > values[1] > values[2]


def _ssim_windowed_oracle(x, y):
    """Naive sliding-window double-loop reference."""
    win = gaussian_window()
    k = win.shape[0]
    vals = []
    for c in range(3):
        a, b = x.data[c].astype(np.float64), y.data[c].astype(np.float64)
        h, w = a.shape
        for i in range(h - k + 1):
            for j in range(w - k + 1):
                pa = a[i : i + k, j : j + k]
                pb = b[i : i + k, j : j + k]
                mu_a = (win * pa).sum()
                mu_b = (win * pb).sum()
                var_a = (win * pa * pa).sum() - mu_a**2
                var_b = (win * pb * pb).sum() - mu_b**2
                cov = (win * pa * pb).sum() - mu_a * mu_b
                vals.append(
                    (2 * mu_a * mu_b + SSIM_C1)
                    * (2 * cov + SSIM_C2)
                    / ((mu_a**2 + mu_b**2 + SSIM_C1) * (var_a + var_b + SSIM_C2))
                )
    return float(np.mean(vals))


class TestSsim:
    def test_identical_is_one(self):
        x, _ = random_pair(3)
        assert abs(ssim(x, x) - 1.0) <= 1e-9

    def test_constant_images_analytic(self):
        # zero variances: ((2 * 0.5 * 0.25 + C1) * C2) / ((0.25 + 0.0625 + C1) * C2)
        x = img(np.full((3, 16, 16), 0.5))
        y = img(np.full((3, 16, 16), 0.25))
        expected = (2 * 0.5 * 0.25 + 1e-4) / (0.25 + 0.0625 + 1e-4)
        assert abs(ssim(x, y) - expected) <= 1e-9
        assert abs(expected - 0.8001) < 1e-4

    def test_brute_force_window_oracle(self):
        x, y = random_pair(4)
        assert abs(ssim(x, y) - _ssim_windowed_oracle(x, y)) <= 1e-6

    def test_symmetric(self):
        x, y = random_pair(5)
        assert abs(ssim(x, y) - ssim(y, x)) <= 1e-12

    def test_range(self):
        for seed in range(6, 12):
            x, y = random_pair(seed)
            assert -1.0 <= ssim(x, y) <= 1.0

    def test_too_small_image(self):
        x = img(np.zeros((3, 8, 8)))
        with pytest.raises(DimensionError):
            ssim(x, x)


class TestReport:
    def test_mean_is_arithmetic_mean(self):
        rep = MetricReport(label="demo")
        rep.add("a", 20.0, 0.5)
        rep.add("b", 30.0, 0.7)
        assert rep.mean_psnr == pytest.approx(25.0)
        assert rep.mean_ssim == pytest.approx(0.6)

    def test_writes_jsonl_and_table(self, tmp_path):
        import json

        rep = MetricReport(label="demo")
        rep.add("a", math.inf, 1.0)
        rep.add("b", 18.0, 0.4)
        write_report(tmp_path / "report", [rep])
        lines = (tmp_path / "report.jsonl").read_text().strip().split("\n")
        rows = [json.loads(l) for l in lines]
        assert len(rows) == 3  # two images + mean row
        assert rows[0]["psnr_db"] == PSNR_CAP_DB  # inf capped in records
        table = (tmp_path / "report.txt").read_text()
        assert "demo" in table and "SSIM" in table
