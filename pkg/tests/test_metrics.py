import csv

import numpy as np
import pytest

from conftest import brute_hausdorff
from rwloss.core import DomainError
from rwloss.metrics import (
    UndefinedDistanceError,
    boundary,
    cdf,
    dice,
    exact_sign_flip_pvalue,
    hausdorff,
    metric_rows,
    permutation_test,
    write_metric_csv,
)


def test_dice_examples():
    a = np.zeros(10, bool)
    b = np.zeros(10, bool)
    a[[0, 1, 2]] = True
    b[[1, 2, 3, 4]] = True
    assert dice(a, b) == 4 / 7
    assert dice(a, a) == 1.0
    assert dice(a, ~a) == 0.0
    assert dice(np.zeros(3), np.zeros(3)) == 1.0
    assert dice(a, np.zeros(10)) == 0.0
    with pytest.raises(DomainError):
        dice(np.zeros(3), np.zeros(4))


def test_dice_matches_set_counting(rng):
    for _ in range(50):
        a = rng.random((7, 8)) < 0.4
        b = rng.random((7, 8)) < 0.4
        sa = {tuple(i) for i in np.argwhere(a)}
        sb = {tuple(i) for i in np.argwhere(b)}
        expected = 2 * len(sa & sb) / (len(sa) + len(sb))
        assert dice(a, b) == expected == dice(b, a)


def test_boundary_of_square():
    m = np.zeros((6, 6), bool)
    m[1:5, 1:5] = True
    b = boundary(m)
    assert b.sum() == 12 and not b[2:4, 2:4].any()
    assert boundary(np.ones((3, 3), bool)).sum() == 8


def test_hausdorff_examples():
    a = np.zeros((1, 8), bool)
    b = np.zeros((1, 8), bool)
    a[0, 1] = True
    b[0, 4] = True
    assert hausdorff(a, b, spacing=(1.0, 2.0)) == 6.0
    assert hausdorff(a, a) == 0.0
    sq = np.zeros((8, 8), bool)
    sq[2:6, 2:6] = True
    shifted = np.roll(sq, 1, axis=1)
    assert hausdorff(sq, shifted, (0.5, 1.5)) == 1.5
    assert brute_hausdorff(sq, shifted, (0.5, 1.5)) == 1.5


def test_hausdorff_empty_mask():
    with pytest.raises(UndefinedDistanceError):
        hausdorff(np.zeros((3, 3)), np.ones((3, 3)))


@pytest.mark.parametrize("shape", [(16, 16), (9, 10, 11)])
def test_hausdorff_matches_brute_force(shape, rng):
    for _ in range(5):
        spacing = tuple(rng.uniform(0.5, 2.5, len(shape)))
        a = rng.random(shape) < rng.uniform(0.05, 0.6)
        b = rng.random(shape) < rng.uniform(0.05, 0.6)
        a.flat[0] = b.flat[-1] = True
        hd = hausdorff(a, b, spacing)
        assert hd == hausdorff(b, a, spacing)
        assert hd == pytest.approx(brute_hausdorff(a, b, spacing), abs=1e-12)


def test_permutation_identical_samples():
    a = np.random.default_rng(0).random(10)
    assert permutation_test(a, a) == 1.0
    assert permutation_test(a, a, n_perm=100) == 1.0


def test_permutation_constant_shift_n12():
    a = np.linspace(0.5, 0.9, 12)
    b = a - 0.2
    exact = exact_sign_flip_pvalue(a, b)
    assert exact == 2 / 4096
    p = permutation_test(a, b)
    assert p <= 0.01
    assert p == (1 + 2) / (1 + 4096)  # all patterns enumerated, add-one corrected


def test_permutation_matches_enumeration_small_n(rng):
    for n in (2, 3, 5, 8, 12):
        a, b = rng.random(n), rng.random(n)
        exact = exact_sign_flip_pvalue(a, b)
        p = permutation_test(a, b)
        assert p == (1 + exact * 2 ** n) / (1 + 2 ** n)


def test_permutation_random_flips_close_to_exact(rng):
    a, b = rng.random(14), rng.random(14)
    p = permutation_test(a, b, n_perm=10000, seed=3)
    assert p == permutation_test(a, b, n_perm=10000, seed=3)
    assert abs(p - exact_sign_flip_pvalue(a, b)) < 0.03


def test_permutation_monotone_in_shift(rng):
    mags = rng.uniform(0.1, 1.0, 15)
    signs = np.where(rng.random(15) < 0.7, 1.0, -1.0)
    ps = [permutation_test(s * signs * mags, np.zeros(15), n_perm=2000, seed=5)
          for s in (0.2, 1.0, 3.0)]
    # scaling all differences leaves the sign-flip distribution's shape intact
    assert ps[0] == ps[1] == ps[2]
    shifted = [permutation_test(signs * mags + c, np.zeros(15), n_perm=2000, seed=5)
               for c in (0.0, 0.3, 1.0)]
    assert shifted[0] >= shifted[1] >= shifted[2]
    assert all(0 < p <= 1 for p in ps + shifted)


def test_permutation_errors_and_alternative_statistic():
    with pytest.raises(DomainError):
        permutation_test([1.0], [2.0])
    with pytest.raises(DomainError):
        permutation_test([1.0, 2.0], [2.0])
    with pytest.raises(DomainError):
        permutation_test([1.0, 2.0], [2.0, 1.0], statistic="median")
    # mean(|d|) is unchanged by sign flips, so every pattern ties
    assert permutation_test([1.0, 2.0, 3.0], [0.0, 0.0, 0.0], statistic="mean_abs") == 1.0


def test_cdf_examples():
    assert cdf([0.5, 0.9, 0.92], 0.9) == 2 / 3
    assert cdf([0.1, 0.2], 0.2) == 1.0
    assert cdf([0.1, 0.2], 0.05) == 0.0
    with pytest.raises(DomainError):
        cdf([], 0.5)


def test_metric_rows_and_csv(tmp_path):
    gt = np.array([[0, 0, 1], [0, 1, 1]])
    pred = np.array([[0, 0, 1], [0, 0, 1]])
    rows = metric_rows("r0", pred, gt, 3)
    assert [r["class"] for r in rows] == [0, 1, 2]
    assert rows[1]["dice"] == 2 * 2 / 5
    assert rows[2]["dice"] == 1.0 and np.isnan(rows[2]["hd_mm"])
    path = tmp_path / "m.csv"
    write_metric_csv(path, rows)
    with open(path) as fh:
        read = list(csv.DictReader(fh))
    assert list(read[0]) == ["run_id", "class", "dice", "hd_mm"]
    assert float(read[1]["dice"]) == rows[1]["dice"]
