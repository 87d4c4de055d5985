import numpy as np
import pytest
from hypothesis import given, strategies as st

from pnph.geometry import (
    CellGeometry,
    EmptyPaving,
    build_paving,
    decompose_coordinates,
    measures,
)


@pytest.mark.parametrize("x, eps, index, y", [
    (0.55, 0.5, 1, 0.1),
    (-0.25, 0.5, -1, 0.5),
    (0.5, 0.25, 2, 0.0),
])
def test_decompose_examples(x, eps, index, y):
    p, yy = decompose_coordinates(np.array([x]), eps)
    assert p[0] == index
    assert yy[0] == pytest.approx(y, abs=1e-14)


@given(st.floats(-50, 50, allow_nan=False), st.sampled_from([1.0, 0.5, 0.25, 1 / 3, 0.1]))
def test_decompose_reconstructs(x, eps):
    p, y = decompose_coordinates(np.array([x]), eps)
    assert 0.0 <= y[0] < 1.0
    assert eps * p[0] + eps * y[0] == pytest.approx(x, abs=1e-12 * max(1, abs(x)))


def test_paving_counts():
    cell2 = CellGeometry.default(2)
    assert build_paving((0, 0), (1, 1), 0.25, cell2, 0.2).n_cells == 16
    assert build_paving((0,), (1,), 1 / 3, CellGeometry.default(1)).n_cells == 3
    with pytest.raises(EmptyPaving):
        build_paving((0, 0), (1, 1), 2.0, cell2)


def test_paving_whole_cell_union():
    pav = build_paving((0, 0), (1, 1), 0.25, CellGeometry.default(2))
    assert pav.is_whole_cell_union()
    pav = build_paving((0,), (1,), 0.3, CellGeometry.default(1))
    assert not pav.is_whole_cell_union()


@given(st.floats(0.05, 0.6), st.floats(0.0, 1.0), st.floats(-0.3, 0.3), st.floats(0.7, 1.5))
def test_paving_gap_invariant(eps, gap, lo, up):
    cell = CellGeometry.default(2)
    try:
        pav = build_paving((lo, lo), (up, up), eps, cell, gap)
    except EmptyPaving:
        return
    for p in pav.retained_cells:
        c_lo, c_up = pav.cell_bounds(p)
        assert np.all(c_lo >= lo - 1e-9) and np.all(c_up <= up + 1e-9)
        w_lo, w_up = pav.inclusion_bounds(p)
        dist = min(np.min(w_lo - lo), np.min(up - w_up))
        assert dist >= gap * eps - 1e-9


def test_gap_rule_drops_cells_near_boundary():
    # the outer inclusions sit 0.05 eps from the box faces
    cell = CellGeometry(1, (0.05,), (0.95,))
    assert build_paving((0,), (1,), 0.25, cell, 0.0).n_cells == 4
    pav = build_paving((0,), (1,), 0.25, cell, 0.1)
    assert pav.retained_cells == ((1,), (2,))
    with pytest.raises(EmptyPaving):
        build_paving((0,), (0.5,), 0.25, cell, 0.1)


def test_measures():
    assert measures(CellGeometry.default(2)) == pytest.approx((0.25, 2.0, 0.75))
    assert measures(CellGeometry.default(1)) == pytest.approx((0.5, 2.0, 0.5))


@pytest.mark.parametrize("lower, upper", [((0.0,), (0.5,)), ((0.5,), (0.4,)), ((0.2,), (0.99,))])
def test_cell_rejects_bad_inclusions(lower, upper):
    with pytest.raises(ValueError):
        CellGeometry(1, lower, upper)


def test_contains():
    cell = CellGeometry.default(2)
    assert cell.contains(np.array([0.5, 0.5]))
    assert not cell.contains(np.array([0.25, 0.5]))
    assert cell.distance_to_boundary() == 0.25
