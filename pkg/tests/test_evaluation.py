import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_array_equal

from pscd.errors import InvalidInput, InvalidParameter
from pscd.evaluation import (
    MmdConfig,
    histogram2d,
    median_distance,
    mmd,
    write_histogram_csv,
    write_metrics_csv,
)
from pscd.rng import derive_rng, make_rng


def brute_mmd(x, y, h):
    def k(a, b):
        return np.exp(-((a[:, None, :] - b[None, :, :]) ** 2).sum(-1) / (2 * h * h)).mean()

    return k(x, x) + k(y, y) - 2 * k(x, y)


class TestMmdConfig:
    @pytest.mark.parametrize("bw", [0.0, -1.0, "mean", float("inf")])
    def test_invalid(self, bw):
        with pytest.raises(InvalidParameter):
            MmdConfig(bandwidth=bw)


class TestMmd:
    def test_identical(self):
        x = make_rng(0).normal(size=(300, 2))
        assert abs(mmd(x, x, MmdConfig(report_scale=1.0))) <= 1e-12

    def test_against_direct_formula(self):
        rng = make_rng(1)
        x, y = rng.normal(size=(60, 2)), rng.normal(0.5, 1.0, size=(40, 2))
        z = np.concatenate([x, y])
        d = np.sqrt(((z[:, None] - z[None]) ** 2).sum(-1))
        h = np.median(d[np.triu_indices(len(z), 1)])
        assert median_distance(z) == pytest.approx(h, rel=1e-12)
        assert mmd(x, y) == pytest.approx(brute_mmd(x, y, h) * 1e4, rel=1e-10)
        assert mmd(x, y, MmdConfig(bandwidth=0.7)) == pytest.approx(brute_mmd(x, y, 0.7) * 1e4, rel=1e-10)

    def test_blockwise_median(self):
        z = make_rng(2).normal(size=(2500, 2))
        i, j = np.triu_indices(2500, 1)
        ref = np.median(np.linalg.norm(z[i] - z[j], axis=1))
        assert median_distance(z) == pytest.approx(ref, rel=1e-12)

    @pytest.mark.xfail(strict=True, reason="biased V-statistic bias alone is about 8 scaled units at n=1000")
    def test_null_calibration(self):
        vals = [mmd(derive_rng(0, "null", k).normal(size=(1000, 2)), derive_rng(1, "null", k).normal(size=(1000, 2)))
                for k in range(20)]
        assert np.mean(np.array(vals) < 5) >= 0.95

    def test_separated_exceeds_null(self):
        for k in range(5):
            rng = derive_rng(0, "sep", k)
            x, y0 = rng.normal(size=(1000, 2)), rng.normal(size=(1000, 2))
            y1 = rng.normal(size=(1000, 2)) + [3.0, 0.0]
            assert mmd(x, y1) > mmd(x, y0)

    def test_too_few(self):
        with pytest.raises(InvalidInput):
            mmd([[0.0, 0.0]], [[1.0, 1.0], [2.0, 2.0]])

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidInput):
            mmd(np.zeros((3, 2)), np.zeros((3, 1)))

    def test_zero_median_fallback(self, caplog):
        x = np.zeros((4, 2))
        with caplog.at_level(logging.WARNING, logger="pscd.evaluation"):
            assert mmd(x, x) == 0.0
        assert "falling back" in caplog.text


class TestHistogram:
    def test_center(self):
        h = histogram2d([[0.0, 0.0]], 2, (-1.0, 1.0))
        assert h.counts.sum() == 1 and np.count_nonzero(h.counts) == 1

    def test_orientation(self):
        h = histogram2d([[-0.5, 0.5]], 2, (-1.0, 1.0))
        assert h.counts[1, 0] == 1

    def test_overflow(self):
        h = histogram2d([[0.0, 0.0], [5.0, 0.0], [0.0, -4.0001]], 4)
        assert h.overflow == 2 and h.total == 3

    def test_uniform_poisson(self):
        pts = make_rng(0).uniform(-4, 4, size=(1_000_000, 2))
        h = histogram2d(pts, 16)
        lam = 1_000_000 / 256
        assert np.all(np.abs(h.counts - lam) <= 4 * np.sqrt(lam))

    def test_empty(self):
        with pytest.raises(InvalidInput):
            histogram2d(np.zeros((0, 2)), 4)

    @pytest.mark.parametrize("bins", [1, 2.5])
    def test_bins(self, bins):
        with pytest.raises(InvalidParameter):
            histogram2d([[0.0, 0.0]], bins)

    def test_csv(self, tmp_path):
        h = histogram2d([[0.0, 0.0], [9.0, 9.0]], 2, (-1.0, 1.0))
        assert write_histogram_csv(tmp_path / "h.csv", h).read_text() == "0,0\n0,1\noverflow,1\n"


def test_metrics_csv(tmp_path):
    text = write_metrics_csv(tmp_path / "m.csv", [("moon", "PS-CD", 1.0, 3, 0.1)]).read_text()
    assert text == "dataset,method,gamma,seed,mmd_x1e4\nmoon,PS-CD,1,3,0.10000000000000001\n"


points = st.integers(2, 30).flatmap(
    lambda n: st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5)), min_size=n, max_size=n))


@settings(max_examples=60, deadline=None)
@given(x=points, y=points)
def test_mmd_symmetric_nonnegative(x, y):
    a = mmd(x, y)
    assert a == mmd(y, x)
    assert a >= -1e-12 * 1e4


@settings(max_examples=60, deadline=None)
@given(x=st.lists(st.tuples(st.floats(-6, 6), st.floats(-6, 6)), min_size=1, max_size=200),
       bins=st.integers(2, 20))
def test_histogram_conservation(x, bins):
    h = histogram2d(x, bins)
    assert h.total == len(x)
