import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import brute_signed_distance
from rwloss.core import DomainError, LabelGrid
from rwloss.edt import class_edt, distance_to, squared_edt, squared_edt_1d

INF = np.inf


def test_squared_edt_1d_examples():
    np.testing.assert_array_equal(squared_edt_1d([0, INF, INF]), [0, 1, 4])
    np.testing.assert_array_equal(squared_edt_1d([INF, 0, INF, 0], spacing=2), [4, 0, 4, 0])
    np.testing.assert_array_equal(squared_edt_1d([INF, INF]), [INF, INF])


def test_squared_edt_1d_empty():
    with pytest.raises(DomainError):
        squared_edt_1d([])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.one_of(st.just(INF), st.floats(0, 100)), min_size=1, max_size=64),
       st.floats(0.1, 5.0))
def test_squared_edt_1d_matches_brute_force(f, spacing):
    f = np.array(f)
    q = np.arange(f.size)
    brute = np.min((spacing * (q[:, None] - q[None, :])) ** 2 + f[None, :], axis=1)
    np.testing.assert_allclose(squared_edt_1d(f, spacing), brute, rtol=1e-12, atol=1e-9)


def test_row_example_channels():
    grid = LabelGrid((1, 7), [0, 0, 1, 1, 1, 0, 0], 2)
    sdf = class_edt(grid)
    np.testing.assert_array_equal(sdf.values[:, 1], [2, 1, -1, -2, -1, 1, 2])
    np.testing.assert_array_equal(sdf.values[:, 0], [-2, -1, 1, 2, 1, -1, -2])


def test_empty_and_full_sentinels():
    grid = LabelGrid((2, 2), [0, 0, 0, 0], 2)
    sdf = class_edt(grid)
    assert sdf.empty == (False, True) and sdf.full == (True, False)
    assert np.all(sdf.values[:, 0] == -INF) and np.all(sdf.values[:, 1] == INF)


@pytest.mark.parametrize("shape", [(17, 23), (5, 6, 7), (40,)])
def test_class_edt_matches_brute_force(shape, rng):
    for _ in range(3):
        labels = rng.integers(0, 3, size=shape)
        spacing = tuple(rng.uniform(0.3, 3.0, len(shape)))
        grid = LabelGrid.from_array(labels, 3, spacing)
        sdf = class_edt(grid)
        for k in range(3):
            np.testing.assert_allclose(sdf.values[:, k], brute_signed_distance(labels, k, spacing), atol=1e-9)


def test_sign_matches_membership(rng):
    labels = rng.integers(0, 4, size=(12, 9))
    sdf = class_edt(LabelGrid.from_array(labels, 4))
    for k in range(4):
        inside = (labels == k).ravel()
        assert np.all(sdf.values[inside, k] < 0) and np.all(sdf.values[~inside, k] > 0)


def test_isolated_pixel_has_unit_depth():
    labels = np.zeros((5, 5), int)
    labels[2, 2] = 1
    sdf = class_edt(LabelGrid.from_array(labels, 2, spacing=(1.5, 0.7)))
    assert sdf.channel(1)[2, 2] == -0.7


def test_anisotropy_scales_axis_distances():
    labels = np.zeros((1, 9), int)
    labels[0, 0] = 1
    base = distance_to(labels == 1, (1.0, 1.0))
    doubled = distance_to(labels == 1, (1.0, 2.0))
    np.testing.assert_array_equal(doubled, 2 * base)


def test_separable_equals_axis_passes(rng):
    f = np.where(rng.random((9, 11)) < 0.1, 0.0, INF)
    f[0, 0] = 0.0
    rows = np.stack([squared_edt_1d(r, 1.3) for r in f])
    both = np.stack([squared_edt_1d(c, 0.8) for c in rows.T]).T
    np.testing.assert_allclose(squared_edt(f, (0.8, 1.3)), both, rtol=1e-14)
