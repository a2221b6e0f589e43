import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from extremal_design.domain import (GriddedField, RiskFunctional, RiskKind, SpatialGrid, StationSeries,
                                    dist_to_boundary, risk_eval)

finite = st.floats(-1e6, 1e6, allow_nan=False)


def test_risk_eval_examples():
    v = np.array([1.0, 3.0, 2.0])
    assert risk_eval(RiskFunctional.supremum(), v, [0, 1, 2]) == 3.0
    assert risk_eval(RiskFunctional.mean(), v, [0, 1, 2]) == 2.0
    assert risk_eval(RiskFunctional.supremum(), v, [0]) == 1.0
    assert risk_eval(RiskFunctional.at_site(2), v, [1, 2]) == 2.0


def test_risk_eval_empty_subset():
    with pytest.raises(ValueError, match="empty evaluation set"):
        risk_eval(RiskFunctional.supremum(), np.ones(3), [])


def test_weighted_renormalizes_over_subset():
    r = RiskFunctional.weighted([1.0, 1.0, 2.0])
    v = np.array([1.0, 2.0, 4.0])
    assert risk_eval(r, v, [0, 1, 2]) == pytest.approx((1 + 2 + 8) / 4)
    assert risk_eval(r, v, [0, 2]) == pytest.approx((1 + 8) / 3)


def test_constant_field_returns_constant():
    for r in (RiskFunctional.supremum(), RiskFunctional.mean(), RiskFunctional.weighted([3, 1, 0])):
        assert r(np.ones(3)) == pytest.approx(1.0)


def test_invalid_weights():
    with pytest.raises(ValueError):
        RiskFunctional.weighted([0.0, 0.0])
    with pytest.raises(ValueError):
        RiskFunctional.weighted([1.0, -1.0])


@given(arrays(float, st.integers(1, 20), elements=finite), st.data())
def test_supremum_monotone_in_subset(v, data):
    n = v.shape[0]
    b = data.draw(st.lists(st.integers(0, n - 1), min_size=1, unique=True))
    a = data.draw(st.lists(st.sampled_from(b), min_size=1, unique=True))
    r = RiskFunctional.supremum()
    assert risk_eval(r, v, a) <= risk_eval(r, v, b)


@given(arrays(float, st.integers(1, 20), elements=finite))
def test_full_grid_matches_brute_force(v):
    idx = list(range(v.shape[0]))
    best = v[0]
    total = 0.0
    for x in v:
        best = max(best, x)
        total += x
    assert risk_eval(RiskFunctional.supremum(), v, idx) == best
    assert risk_eval(RiskFunctional.mean(), v, idx) == pytest.approx(total / len(v), rel=1e-9, abs=1e-6)


def test_risk_functional_roundtrip():
    r = RiskFunctional.weighted([1, 2, 3])
    r2 = RiskFunctional.from_dict(r.to_dict())
    assert r2.kind is RiskKind.WEIGHTED
    np.testing.assert_allclose(r2.weights, r.weights)


def test_dist_to_boundary_examples(line_grid):
    x = line_grid.locations[:, 0]
    idx = lambda v: int(np.argmin(np.abs(x - v)))
    assert dist_to_boundary(line_grid, [idx(0.0)]) == pytest.approx(6.0)
    assert dist_to_boundary(line_grid, [idx(-6.0)]) == 0.0
    assert dist_to_boundary(line_grid, [idx(-5.5), idx(5.5)]) == pytest.approx(0.5)


def test_line_boundary_flags(line_grid):
    assert line_grid.n == 121
    assert np.flatnonzero(line_grid.boundary_flags).tolist() == [0, 120]


def test_raster_boundary_with_mask():
    mask = np.ones((5, 5), dtype=bool)
    mask[0, 0] = False
    g = SpatialGrid.regular_2d(5, 5, 1.0, mask=mask)
    assert g.n == 24
    # interior 3x3 block is not boundary; the outer ring is
    assert (~g.boundary_flags).sum() == 9


def test_grid_rejects_duplicates():
    with pytest.raises(ValueError, match="distinct"):
        SpatialGrid(np.array([[0.0], [0.0]]), 1.0)


def test_grid_rejects_nonfinite():
    with pytest.raises(ValueError):
        SpatialGrid(np.array([[0.0], [np.inf]]), 1.0)


def test_grid_index_lookup(line_grid):
    assert line_grid.index_of([0.0]) == 60
    with pytest.raises(ValueError):
        line_grid.index_of([10.0])


def test_station_series_validation():
    with pytest.raises(ValueError, match="increasing"):
        StationSeries([0.0, 0.0], [1, 1], [0.1, 0.2])
    with pytest.raises(ValueError, match="nonnegative"):
        StationSeries([0.0, 0.0], [1, 2], [0.1, -0.2])
    st_ = StationSeries([0.0, 0.0], [1, 2, 3], [0.1, np.nan, 0.3])
    assert st_.observed().tolist() == [0.1, 0.3]


def test_gridded_field_validation(line_grid):
    with pytest.raises(ValueError):
        GriddedField(line_grid, np.ones(3))
    f = GriddedField(line_grid, np.zeros(line_grid.n))
    assert f.values.shape == (121,)
