import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st

from nervesynth import metrics as M
from nervesynth.errors import UndefinedValueError
from nervesynth.metrics import GaussianStats
from nervesynth.tensor import ShapeError


def _spd(rng, n):
    a = rng.normal(size=(n, n))
    return a @ a.T + 0.1 * np.eye(n)


def _fid_sqrtm(mu1, s1, mu2, s2):
    cross = scipy.linalg.sqrtm(s1 @ s2).real
    return float(np.sum((mu1 - mu2) ** 2) + np.trace(s1 + s2 - 2 * cross))


def test_fid_identical(rng):
    s = GaussianStats(rng.normal(size=5), _spd(rng, 5))
    assert M.fid(s, s) == pytest.approx(0.0, abs=1e-9)


def test_fid_one_d():
    assert M.fid(GaussianStats(np.array([0.0]), np.array([[1.0]])),
                 GaussianStats(np.array([1.0]), np.array([[1.0]]))) == pytest.approx(1.0, abs=1e-12)
    # (dmu)^2 + (sigma_r - sigma_g)^2
    assert M.fid(GaussianStats(np.array([2.0]), np.array([[4.0]])),
                 GaussianStats(np.array([-1.0]), np.array([[9.0]]))) == pytest.approx(9.0 + 1.0, abs=1e-12)


def test_fid_equal_cov(rng):
    s = _spd(rng, 6)
    mu1, mu2 = rng.normal(size=6), rng.normal(size=6)
    assert M.fid(GaussianStats(mu1, s), GaussianStats(mu2, s)) == pytest.approx(np.sum((mu1 - mu2) ** 2), abs=1e-8)


def test_fid_diagonal_closed_form(rng):
    a, b = rng.uniform(0.1, 3, 8), rng.uniform(0.1, 3, 8)
    mu1, mu2 = rng.normal(size=8), rng.normal(size=8)
    want = np.sum((mu1 - mu2) ** 2) + np.sum((np.sqrt(a) - np.sqrt(b)) ** 2)
    assert M.fid(GaussianStats(mu1, np.diag(a)), GaussianStats(mu2, np.diag(b))) == pytest.approx(want, abs=1e-9)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10 ** 6), n=st.integers(1, 8))
def test_fid_general_matches_sqrtm(seed, n):
    rng = np.random.default_rng(seed)
    mu1, mu2, s1, s2 = rng.normal(size=n), rng.normal(size=n), _spd(rng, n), _spd(rng, n)
    got = M.fid(GaussianStats(mu1, s1), GaussianStats(mu2, s2))
    assert got == pytest.approx(_fid_sqrtm(mu1, s1, mu2, s2), rel=1e-6, abs=1e-8)
    assert got >= 0
    assert got == pytest.approx(M.fid(GaussianStats(mu2, s2), GaussianStats(mu1, s1)), rel=1e-8, abs=1e-8)


def test_fid_dim_mismatch(rng):
    with pytest.raises(ShapeError):
        M.fid(GaussianStats(np.zeros(2), np.eye(2)), GaussianStats(np.zeros(3), np.eye(3)))


def test_stats_from_features(rng):
    f = rng.normal(size=(50, 4))
    s = GaussianStats.from_features(f)
    np.testing.assert_allclose(s.sigma, np.cov(f, rowvar=False))
    assert np.max(np.abs(s.sigma - s.sigma.T)) <= 1e-9
    assert np.linalg.eigvalsh(s.sigma).min() >= -1e-8
    with pytest.raises(UndefinedValueError):
        GaussianStats.from_features(f[:1])


def test_feature_extractor_deterministic(rng):
    imgs = rng.uniform(size=(3, 32, 32))
    a = M.FeatureExtractor(seed=4)(imgs)
    assert a.shape == (3, 64)
    assert a.tobytes() == M.FeatureExtractor(seed=4)(imgs).tobytes()
    assert not np.array_equal(a, M.FeatureExtractor(seed=5)(imgs))


def test_fid_from_same_images(rng):
    imgs = rng.uniform(size=(20, 32, 32))
    assert M.fid_from_images(imgs, imgs) <= 1e-6


def test_psnr(rng):
    x = rng.uniform(size=(16, 16))
    assert M.psnr(x, x) == math.inf
    y = x + 0.1
    assert M.psnr(x, y) == pytest.approx(20.0, abs=1e-9)
    z = x + 0.1 * math.sqrt(2)
    assert M.psnr(x, y) - M.psnr(x, z) == pytest.approx(10 * math.log10(2), abs=1e-9)
    with pytest.raises(ShapeError):
        M.psnr(x, x[:3])


def test_ssim_knowns(rng):
    x = rng.uniform(size=(32, 32))
    assert M.ssim(x, x) == pytest.approx(1.0, abs=1e-12)
    assert M.ssim(np.zeros((8, 8)), np.ones((8, 8))) == pytest.approx(1 / 10001, abs=1e-6)
    y = rng.uniform(size=(32, 32))
    assert M.ssim(x, y) == pytest.approx(M.ssim(y, x), abs=1e-15)
    with pytest.raises(ShapeError):
        M.ssim(np.zeros((4, 4)), np.zeros((4, 4)))


def test_ssim_window_oracle(rng):
    x, y = rng.uniform(size=(9, 10)), rng.uniform(size=(9, 10))
    c1, c2 = 1e-4, 9e-4
    vals = []
    for i in range(2):
        for j in range(3):
            a, b = x[i:i + 8, j:j + 8], y[i:i + 8, j:j + 8]
            ma, mb = a.mean(), b.mean()
            cov = np.mean((a - ma) * (b - mb))
            vals.append((2 * ma * mb + c1) * (2 * cov + c2) / ((ma ** 2 + mb ** 2 + c1) * (a.var() + b.var() + c2)))
    assert M.ssim(x, y) == pytest.approx(np.mean(vals), abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10 ** 6))
def test_ssim_range(seed):
    rng = np.random.default_rng(seed)
    v = M.ssim(rng.uniform(size=(12, 12)), rng.uniform(size=(12, 12)) ** 3)
    assert -1.0 <= v <= 1.0


def test_intra_class_diversity():
    assert M.intra_class_diversity({"a": np.ones((4, 3))})["a"] == 0.0
    assert M.intra_class_diversity({"a": np.array([[0.0, 0.0], [3.0, 4.0]])})["a"] == pytest.approx(5.0)
    f = np.random.default_rng(0).normal(size=(10, 5))
    lab = np.repeat([0, 1], 5)
    one, two = M.intra_class_diversity(f, lab), M.intra_class_diversity(2 * f, lab)
    assert two[0] == pytest.approx(2 * one[0]) and two[1] == pytest.approx(2 * one[1])
    with pytest.raises(UndefinedValueError):
        M.intra_class_diversity({"a": np.ones((1, 3))})


def test_separability(rng):
    tight = {0: rng.normal(0, 0.1, (30, 4)), 1: rng.normal(5, 0.1, (30, 4))}
    loose = {0: rng.normal(0, 2.0, (30, 4)), 1: rng.normal(0.5, 2.0, (30, 4))}
    assert M.inter_class_separability(tight) > M.inter_class_separability(loose)
    shifted = {k: v + 100.0 for k, v in tight.items()}
    assert M.inter_class_separability(shifted) == pytest.approx(M.inter_class_separability(tight), rel=1e-9)
    same = rng.normal(size=(4000, 3))
    assert M.inter_class_separability({0: same[:2000], 1: same[2000:]}) < 0.1
    assert M.inter_class_separability({0: np.zeros((3, 2)), 1: np.ones((3, 2))}) == math.inf
    with pytest.raises(UndefinedValueError):
        M.inter_class_separability({0: tight[0]})


def test_separability_formula():
    groups = {0: np.array([[0.0, 0.0], [2.0, 0.0]]), 1: np.array([[10.0, 0.0], [12.0, 0.0]])}
    # centroids 10 apart; RMS spread 1 in each class
    assert M.inter_class_separability(groups) == pytest.approx(10.0)


def test_relative_difference():
    assert M.relative_difference(3.87, 4.76) == pytest.approx(0.89 / 4.76)
    assert M.relative_difference(4.76, 3.87) == M.relative_difference(3.87, 4.76)
    assert M.relative_difference(0.0, 0.0) == 0.0


def test_published_relative_difference():
    # the published scores are rounded to two decimals, so allow the rounding slack
    assert 100 * M.relative_difference(3.87, 4.76) == pytest.approx(18.66, abs=0.05)


def test_miou():
    a = np.zeros((10, 10), int)
    a[:, :4] = 1
    assert M.miou(a, a) == 1.0
    b = np.zeros((10, 10), int)
    b[:, 6:] = 1
    assert M.class_iou(b, a) == 0.0
    sq1 = np.zeros((10, 10), int)
    sq1[0:4, 0:4] = 1
    sq2 = np.zeros((10, 10), int)
    sq2[0:4, 2:6] = 1
    assert M.class_iou(sq1, sq2) == pytest.approx(1 / 3)
    assert M.miou(np.zeros((3, 3), int), np.zeros((3, 3), int)) == 1.0
    with pytest.raises(ShapeError):
        M.miou(a, a[:5])


def test_accuracy(rng):
    y = rng.integers(0, 3, 3000)
    assert M.accuracy(y, y) == 1.0
    assert M.accuracy(rng.integers(0, 3, 3000), y) == pytest.approx(1 / 3, abs=0.03)
    p = rng.permutation(3000)
    pred = rng.integers(0, 3, 3000)
    assert M.accuracy(pred[p], y[p]) == M.accuracy(pred, y)
    with pytest.raises(ValueError):
        M.accuracy([], [])
