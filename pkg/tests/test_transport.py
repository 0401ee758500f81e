import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wassbary.errors import CapacityError, ConditioningError, RepresentationError
from wassbary.maps import LinearMap, identity_map
from wassbary.measures import (
    Compactum,
    DiscreteMeasure,
    FrankCopula,
    GaussianMeasure,
    GridDensity,
    Measure1D,
    ProductMeasure,
    push_forward,
    wasserstein2_sq,
)
from wassbary.transport import (
    check_monotone,
    discrete_map_average,
    matrix_sqrt_spd,
    optimal_coupling_discrete,
    optimal_map,
    optimal_map_1d,
    optimal_map_gaussian,
    optimal_map_grid,
    optimal_map_product,
    random_probe_pairs,
)

from .strategies import gaussians, spd_matrices


def brute_force_cost(x, y):
    n = len(x)
    return min(
        np.sum((x - y[list(p)]) ** 2) / n for p in itertools.permutations(range(n))
    )


class TestMatrixSqrt:
    def test_identity_and_diagonal(self):
        assert np.allclose(matrix_sqrt_spd(np.eye(3)), np.eye(3))
        assert np.allclose(matrix_sqrt_spd(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]))

    @given(spd_matrices())
    def test_square_reproduces(self, s):
        r = matrix_sqrt_spd(s)
        assert np.linalg.norm(r @ r - s) <= 1e-10 * np.linalg.norm(s)
        assert np.allclose(r, r.T)

    def test_singular_reports_eigenvalue(self):
        with pytest.raises(ConditioningError) as info:
            matrix_sqrt_spd(np.diag([1.0, 0.0]))
        assert info.value.smallest_eigenvalue == pytest.approx(0.0)


class TestGaussianMap:
    def test_equal_covariances(self):
        s = np.array([[2.0, 0.4], [0.4, 1.0]])
        assert np.allclose(optimal_map_gaussian(GaussianMeasure(s), GaussianMeasure(s)).matrix, np.eye(2))

    def test_scalar(self):
        t = optimal_map_gaussian(GaussianMeasure(np.eye(1)), GaussianMeasure(4 * np.eye(1)))
        assert t.matrix[0, 0] == pytest.approx(2.0)

    def test_commuting(self):
        t = optimal_map_gaussian(GaussianMeasure(np.diag([1.0, 4.0])), GaussianMeasure(np.diag([9.0, 1.0])))
        assert np.allclose(t.matrix, np.diag([3.0, 0.5]), atol=1e-12)

    @given(spd_matrices(2), spd_matrices(2))
    def test_pushes_forward_and_is_spd(self, s1, s2):
        t = optimal_map_gaussian(GaussianMeasure(s1), GaussianMeasure(s2)).matrix
        assert np.linalg.norm(t @ s1 @ t.T - s2) <= 1e-8 * np.linalg.norm(s2)
        assert np.all(np.linalg.eigvalsh(t) > 0)


class TestOneDimensionalMap:
    def test_identity_on_support(self):
        m = Measure1D.gaussian(1.0, 256)
        t = optimal_map_1d(m, m)
        assert np.allclose(t(m.values), m.values)

    def test_uniform_affine(self):
        t = optimal_map_1d(Measure1D.uniform(0, 1), Measure1D.uniform(1, 3))
        x = np.linspace(0.01, 0.99, 50)
        assert np.allclose(t(x), 1 + 2 * x, atol=1e-12)

    def test_gaussian_scaling(self):
        t = optimal_map_1d(Measure1D.gaussian(1.0), Measure1D.gaussian(2.0))
        inner = t.knots_x[1:-1]
        assert np.allclose(t(inner), 2 * inner, atol=1e-6)

    def test_push_forward_matches_target(self, rng):
        src = Measure1D(np.sort(rng.normal(size=300)))
        dst = Measure1D(np.sort(rng.gamma(2.0, size=300)))
        t = optimal_map_1d(src, dst)
        assert np.allclose(push_forward(t, src).values, dst.values, atol=1e-10)

    def test_grid_route(self):
        k = Compactum.unit(1)
        a = GridDensity.uniform(k, 64)
        b = GridDensity.from_function(k, 64, lambda x: 2 * x[:, 0])
        t = optimal_map_grid(a, b)
        u = np.array([0.1, 0.25, 0.5, 0.9])
        assert np.allclose(t(u), np.sqrt(u), atol=5e-3)


class TestProductMap:
    def test_factor_maps(self):
        a = ProductMeasure((Measure1D.uniform(0, 1), Measure1D.gaussian(1.0)))
        b = ProductMeasure((Measure1D.uniform(1, 3), Measure1D.gaussian(2.0)))
        t = optimal_map_product(a, b)
        pts = np.array([[0.2, -1.0], [0.7, 0.5]])
        assert np.allclose(t(pts), [[1.4, -2.0], [2.4, 1.0]], atol=1e-6)

    def test_gaussian_blocks_agree(self):
        s1, s2 = np.array([[2.0, 0.3], [0.3, 1.0]]), np.array([[1.0, -0.2], [-0.2, 3.0]])
        a = ProductMeasure((GaussianMeasure(s1), GaussianMeasure(np.eye(1))))
        b = ProductMeasure((GaussianMeasure(s2), GaussianMeasure(4 * np.eye(1))))
        block = optimal_map_gaussian(
            GaussianMeasure(np.block([[s1, np.zeros((2, 1))], [np.zeros((1, 2)), np.eye(1)]])),
            GaussianMeasure(np.block([[s2, np.zeros((2, 1))], [np.zeros((1, 2)), 4 * np.eye(1)]])),
        )
        pts = np.random.default_rng(0).normal(size=(10, 3))
        assert np.allclose(optimal_map_product(a, b)(pts), block(pts), atol=1e-8)

    def test_misaligned(self):
        a = ProductMeasure((Measure1D.uniform(), Measure1D.uniform()))
        b = ProductMeasure((GaussianMeasure(np.eye(2)),))
        with pytest.raises(RepresentationError):
            optimal_map_product(a, b)

    def test_copula_mismatch(self):
        a = ProductMeasure((Measure1D.uniform(), Measure1D.uniform()), FrankCopula(-8.0))
        b = ProductMeasure((Measure1D.uniform(), Measure1D.uniform()), FrankCopula(3.0))
        with pytest.raises(RepresentationError):
            optimal_map(a, b)

    def test_cyclic_consistency_common_copula(self):
        cop = FrankCopula(-8.0)
        ms = [
            ProductMeasure((Measure1D.gaussian(s, 512), Measure1D.uniform(0, s, 512)), cop)
            for s in (1.0, 2.0, 3.0)
        ]
        direct = optimal_map(ms[0], ms[2])
        composed = lambda x: optimal_map(ms[1], ms[2])(optimal_map(ms[0], ms[1])(x))  # noqa: E731
        pts = np.column_stack([np.linspace(-1.5, 1.5, 30), np.linspace(0.05, 0.95, 30)])
        assert np.allclose(direct(pts), composed(pts), atol=1e-8)


class TestDiscrete:
    def test_self_coupling(self):
        m = DiscreteMeasure(np.array([[0.0, 0.0], [1.0, 2.0], [3.0, -1.0]]))
        c = optimal_coupling_discrete(m, m)
        assert c.cost == pytest.approx(0.0, abs=1e-15)
        assert np.array_equal(c.permutation(), [0, 1, 2])

    def test_two_points(self):
        c = optimal_coupling_discrete(
            DiscreteMeasure(np.array([[0.0], [1.0]])), DiscreteMeasure(np.array([[0.1], [0.9]]))
        )
        assert c.cost == pytest.approx(0.01)
        assert np.array_equal(c.permutation(), [0, 1])

    def test_brute_force_5x5(self, rng):
        for _ in range(20):
            x, y = rng.normal(size=(5, 2)), rng.normal(size=(5, 2))
            c = optimal_coupling_discrete(DiscreteMeasure(x), DiscreteMeasure(y))
            assert c.cost == pytest.approx(brute_force_cost(x, y), abs=1e-12)

    def test_unequal_sizes_marginals(self, rng):
        a = DiscreteMeasure(rng.normal(size=(7, 2)), rng.dirichlet(np.ones(7)))
        b = DiscreteMeasure(rng.normal(size=(4, 2)), rng.dirichlet(np.ones(4)))
        c = optimal_coupling_discrete(a, b)
        assert np.allclose(c.plan.sum(1), a.weights, atol=1e-9)
        assert np.allclose(c.plan.sum(0), b.weights, atol=1e-9)
        assert c.cost == pytest.approx(wasserstein2_sq(a, b), rel=1e-9)

    def test_capacity(self, rng):
        a = DiscreteMeasure(rng.normal(size=(30, 1)))
        with pytest.raises(CapacityError):
            optimal_coupling_discrete(a, a, cap=10)

    def test_map_average_examples(self):
        g = DiscreteMeasure(np.array([[0.0], [1.0]]))
        out = discrete_map_average(g, [DiscreteMeasure(np.array([[0.0], [2.0]])), DiscreteMeasure(np.array([[0.0], [4.0]]))])
        assert np.allclose(np.sort(out.points[:, 0]), [0.0, 3.0])
        one = discrete_map_average(
            DiscreteMeasure(np.array([[5.0, 5.0]])),
            [DiscreteMeasure(np.array([[1.0, 0.0]])), DiscreteMeasure(np.array([[3.0, 2.0]]))],
        )
        assert np.allclose(one.points, [[2.0, 1.0]])
        same = discrete_map_average(g, [g, g])
        assert np.allclose(same.points, g.points)


class TestMonotone:
    def test_identity(self):
        x, x2 = random_probe_pairs([0.0], [1.0], 100)
        res = check_monotone(identity_map(1), (x, x2))
        assert res.ok
        assert res.worst == pytest.approx(np.min(np.sum((x - x2) ** 2, axis=1)))

    def test_spd_linear(self):
        t = LinearMap(np.array([[2.0, 0.5], [0.5, 1.0]]))
        assert check_monotone(t, random_probe_pairs([-1, -1], [1, 1], 1000)).ok

    def test_flip(self):
        class Negate(LinearMap):
            def apply(self, points):
                return -points

        res = check_monotone(Negate(np.eye(1)), (np.array([0.0]), np.array([1.0])))
        assert not res.ok
        assert res.worst == pytest.approx(-1.0)

    @given(gaussians(2), gaussians(2), st.integers(0, 1000))
    def test_gaussian_maps_monotone(self, a, b, seed):
        t = optimal_map(a, b)
        assert check_monotone(t, random_probe_pairs([-3, -3], [3, 3], 1000, seed)).ok
