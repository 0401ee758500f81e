import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wassbary.errors import ConditioningError, DomainError
from wassbary.maps import Assignment, GridMap, LinearMap, Monotone1D, ProductMap, identity_map

from .strategies import spd_matrices


def test_monotone_rejects_bad_knots():
    with pytest.raises(DomainError):
        Monotone1D(np.array([0.0, 0.0]), np.array([0.0, 1.0]))
    with pytest.raises(DomainError):
        Monotone1D(np.array([0.0, 1.0]), np.array([1.0, 0.0]))


def test_monotone_extrapolates_with_terminal_slope():
    t = Monotone1D(np.array([0.0, 1.0, 2.0]), np.array([0.0, 1.0, 3.0]))
    assert t(np.array([-1.0]))[0] == pytest.approx(-1.0)
    assert t(np.array([3.0]))[0] == pytest.approx(5.0)


def test_single_knot_is_translation():
    t = Monotone1D(np.array([1.0]), np.array([3.0]))
    assert np.allclose(t(np.array([0.0, 5.0])), [2.0, 7.0])


def test_from_pairs_merges_ties():
    t = Monotone1D.from_pairs([0.0, 0.0, 1.0], [1.0, 3.0, 4.0])
    assert np.allclose(t.knots_x, [0.0, 1.0])
    assert np.allclose(t.knots_y, [2.0, 4.0])


def test_inverse_affine():
    t = Monotone1D(np.array([0.0, 1.0]), np.array([1.0, 3.0]))
    inv = t.inverse()
    assert np.allclose(inv(np.array([1.0, 2.0, 5.0])), [0.0, 0.5, 2.0])


@given(st.lists(st.floats(-5, 5), min_size=2, max_size=30, unique=True), st.integers(0, 999))
def test_monotone_roundtrip(xs, seed):
    x = np.sort(np.array(xs))
    y = np.sort(np.random.default_rng(seed).normal(size=x.size))
    if np.any(np.diff(y) <= 0):
        return
    t = Monotone1D(x, y)
    probes = np.linspace(x[0] - 1, x[-1] + 1, 50)
    assert np.allclose(t.inverse().inverse()(probes), t(probes), atol=1e-10)
    assert np.allclose(t.inverse()(t(probes)), probes, atol=1e-8)


def test_linear_map_checks():
    with pytest.raises(DomainError):
        LinearMap(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(ConditioningError):
        LinearMap(np.diag([1.0, -1.0]))
    assert np.allclose(LinearMap(np.diag([2.0, 0.5])).inverse().matrix, np.diag([0.5, 2.0]))


@given(spd_matrices())
def test_linear_roundtrip(s):
    t = LinearMap(s)
    pts = np.random.default_rng(0).normal(size=(20, t.dim))
    assert np.allclose(t.inverse().inverse()(pts), t(pts), atol=1e-10)


def test_product_map_blocks():
    t = ProductMap((LinearMap(2 * np.eye(2)), Monotone1D(np.array([0.0, 1.0]), np.array([1.0, 2.0]))))
    assert t.dims == (2, 1)
    assert np.allclose(t(np.array([[1.0, 1.0, 0.5]])), [[2.0, 2.0, 1.5]])
    assert np.allclose(t.inverse()(t(np.array([[1.0, -1.0, 0.3]]))), [[1.0, -1.0, 0.3]])


def test_assignment_inverse():
    a = Assignment(np.array([[0.0], [1.0]]), np.array([[5.0], [3.0]]), np.array([1, 0]))
    assert a.is_bijection()
    assert np.allclose(a.inverse()(np.array([[5.0], [3.0]])), [[0.0], [1.0]])
    collapsed = Assignment(np.array([[0.0], [1.0]]), np.array([[2.0], [2.0]]))
    with pytest.raises(DomainError):
        collapsed.inverse()


def test_grid_map_interpolates_affine_field():
    cells = (6, 5)
    lower, upper = np.zeros(2), np.ones(2)
    gm = GridMap(lower, upper, cells, np.zeros((30, 2)))
    centers = gm.centers()
    disp = 0.1 * centers + 0.05
    gm = GridMap(lower, upper, cells, disp)
    pts = np.array([[0.3, 0.6], [0.95, 0.02]])
    assert np.allclose(gm(pts), pts + 0.1 * pts + 0.05, atol=1e-12)
    back = gm.inverse()
    inner = np.array([[0.4, 0.5]])
    assert np.allclose(back(gm(inner)), inner, atol=2e-2)


def test_identity_map():
    assert np.allclose(identity_map(3)(np.ones((2, 3))), np.ones((2, 3)))
