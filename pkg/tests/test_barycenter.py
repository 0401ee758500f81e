import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wassbary.barycenter import (
    DescentConfig,
    barycenter,
    density_bound,
    discrete_barycenter_lp,
    frechet_gradient_norm_sq,
    frechet_objective,
    gaussian_barycenter,
    karcher_residual,
    procrustes_step,
)
from wassbary.errors import DomainError, RepresentationError
from wassbary.maps import LinearMap
from wassbary.measures import (
    Compactum,
    DiscreteMeasure,
    GaussianMeasure,
    GridDensity,
    Measure1D,
    ProductMeasure,
    push_forward,
    wasserstein2,
)

from .strategies import gaussians, spd_matrices


def point(x):
    return DiscreteMeasure(np.array([[float(x)]]))


class TestObjective:
    def test_single_input(self):
        m = Measure1D.gaussian(1.0)
        assert frechet_objective(m, [m]) == 0.0

    def test_two_point_masses(self):
        assert frechet_objective(point(1), [point(0), point(2)]) == pytest.approx(0.5)

    def test_gaussian(self):
        ins = [GaussianMeasure(np.eye(1)), GaussianMeasure(9 * np.eye(1))]
        assert frechet_objective(GaussianMeasure(4 * np.eye(1)), ins) == pytest.approx(0.5)

    def test_mixed_families(self):
        with pytest.raises(RepresentationError):
            barycenter([GaussianMeasure(np.eye(1)), Measure1D.uniform()])


class TestGradient:
    def test_zero_at_common_input(self):
        m = GaussianMeasure(np.diag([1.0, 2.0]))
        assert frechet_gradient_norm_sq(m, [m, m]) == pytest.approx(0.0, abs=1e-20)

    def test_symmetric_point_masses(self):
        assert frechet_gradient_norm_sq(point(1), [point(0), point(2)]) == pytest.approx(0.0)

    def test_residual_positive_off_mean(self):
        a, b = Measure1D.gaussian(1.0), Measure1D.gaussian(3.0)
        assert karcher_residual(a, [a, b]) > 0.1


class TestStep:
    def test_fixed_point(self):
        m = GaussianMeasure(np.array([[2.0, 0.5], [0.5, 1.0]]))
        out = procrustes_step(m, [m, m, m])
        assert np.allclose(out.covariance, m.covariance)

    def test_zero_step(self):
        a, b = Measure1D.gaussian(1.0), Measure1D.gaussian(2.0)
        assert np.array_equal(procrustes_step(a, [a, b], tau=0.0).values, a.values)

    def test_bad_step(self):
        with pytest.raises(DomainError):
            procrustes_step(point(0), [point(0)], tau=1.5)

    @pytest.mark.parametrize("tau", [0.25, 0.5, 0.75, 1.0])
    def test_step_size_decrease(self, tau, rng):
        # F(next) - F(gamma) <= -tau (1 - tau/2) |F'|^2 for any tau in [0, 1]
        for _ in range(10):
            ins = [GaussianMeasure(np.cov(rng.normal(size=(2, 6)))) for _ in range(3)]
            g = GaussianMeasure(np.eye(2))
            f0 = frechet_objective(g, ins)
            gs = frechet_gradient_norm_sq(g, ins)
            f1 = frechet_objective(procrustes_step(g, ins, tau), ins)
            assert f1 - f0 <= -tau * (1 - tau / 2) * gs + 1e-10


class TestDescent:
    def test_single_input(self):
        m = Measure1D.gaussian(2.0)
        res = barycenter([m])
        assert len(res.trace) == 1
        assert res.trace.converged
        assert np.array_equal(res.barycenter.values, m.values)

    def test_one_dimensional_one_step(self, rng):
        ins = [Measure1D(np.sort(rng.normal(k, 1 + k, size=256))) for k in range(4)]
        res = barycenter(ins)
        assert res.trace.iterations_used == 1
        mean = np.mean(np.stack([m.values for m in ins]), axis=0)
        assert np.array_equal(res.barycenter.values, mean)

    def test_gaussian_examples(self):
        g, _ = gaussian_barycenter([GaussianMeasure(np.eye(1)), GaussianMeasure(9 * np.eye(1))])
        assert g.covariance[0, 0] == pytest.approx(4.0)
        g, _ = gaussian_barycenter([GaussianMeasure(np.eye(2)), GaussianMeasure(9 * np.eye(2))])
        assert np.allclose(g.covariance, 4 * np.eye(2))
        s = np.array([[3.0, 1.0], [1.0, 2.0]])
        g, trace = gaussian_barycenter([GaussianMeasure(s)] * 3)
        assert np.allclose(g.covariance, s)
        assert trace.iterations_used == 0

    def test_gaussian_needs_gaussians(self):
        with pytest.raises(RepresentationError):
            gaussian_barycenter([Measure1D.uniform()])

    def test_commuting_square_roots(self, rng):
        q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
        lams = rng.uniform(0.5, 4, size=(4, 3))
        ins = [GaussianMeasure((q * lam) @ q.T) for lam in lams]
        g, trace = gaussian_barycenter(ins, DescentConfig(tolerance=1e-12))
        root = (q * np.sqrt(lams).mean(0)) @ q.T
        assert np.linalg.norm(g.covariance - root @ root) <= 1e-8

    def test_residual_after_convergence(self, rng):
        ins = [GaussianMeasure(np.cov(rng.normal(size=(2, 5)))) for _ in range(4)]
        g, trace = gaussian_barycenter(ins, DescentConfig(tolerance=1e-8))
        assert trace.converged
        assert karcher_residual(g, ins) < 1e-8

    def test_callback_sees_every_iterate(self, rng):
        ins = [GaussianMeasure(np.cov(rng.normal(size=(2, 5)))) for _ in range(3)]
        seen = []
        res = barycenter(ins, callback=lambda j, g: seen.append(j))
        assert seen == list(range(res.trace.iterations_used + 1))

    def test_max_iterations_reported(self, rng):
        ins = [GaussianMeasure(np.cov(rng.normal(size=(2, 5)))) for _ in range(3)]
        res = barycenter(ins, DescentConfig(tolerance=1e-14, max_iterations=1))
        assert not res.trace.converged
        assert res.trace.stop_reason == "max_iterations"

    @given(st.lists(gaussians(2), min_size=2, max_size=4))
    def test_objective_nonincreasing(self, ins):
        objs = barycenter(ins, DescentConfig(max_iterations=30)).trace.objectives
        assert np.all(np.diff(objs) <= 1e-10)

    def test_discrete_trace_is_formal(self, rng):
        ins = [DiscreteMeasure(rng.normal(size=(5, 2))) for _ in range(3)]
        res = barycenter(ins)
        assert res.trace.formal_gradient
        assert np.all(np.diff(res.trace.objectives) <= 1e-12)

    def test_rotation_equivariance(self, rng):
        from scipy.stats import ortho_group

        ins = [GaussianMeasure(np.cov(rng.normal(size=(3, 8)))) for _ in range(3)]
        cfg = DescentConfig(tolerance=1e-10)
        g, _ = gaussian_barycenter(ins, cfg)
        u = ortho_group.rvs(3, random_state=1)
        rotated = [GaussianMeasure(u @ m.covariance @ u.T) for m in ins]
        gr, _ = gaussian_barycenter(rotated, cfg)
        assert np.linalg.norm(gr.covariance - u @ g.covariance @ u.T) <= 1e-6

    def test_product_factorises(self, rng):
        xs = [Measure1D(np.sort(rng.gamma(2 + k, size=128))) for k in range(3)]
        ys = [GaussianMeasure(np.cov(rng.normal(size=(2, 6)))) for _ in range(3)]
        cfg = DescentConfig(tolerance=1e-10)
        res = barycenter([ProductMeasure((x, y)) for x, y in zip(xs, ys)], cfg)
        bx = barycenter(xs, cfg).barycenter
        by = barycenter(ys, cfg).barycenter
        assert wasserstein2(res.barycenter.factors[0], bx) <= 1e-8
        assert wasserstein2(res.barycenter.factors[1], by) <= 1e-8

    def test_one_dimensional_grids(self):
        k = Compactum.unit(1)
        ins = [
            GridDensity.from_function(k, 128, lambda x, c=c: np.exp(-((x[:, 0] - c) ** 2) / 0.02))
            for c in (0.3, 0.7)
        ]
        res = barycenter(ins)
        assert isinstance(res.barycenter, GridDensity)
        mass = res.barycenter.masses()
        centre = np.sum(mass * res.barycenter.centers()[:, 0])
        assert centre == pytest.approx(0.5, abs=1e-3)


class TestDensityBound:
    def test_examples(self):
        k = Compactum.unit(1)
        flat = GridDensity.uniform(k, 8)
        assert density_bound([flat]) == pytest.approx(1.0)
        g1 = GridDensity.uniform(k, 8)
        g3 = GridDensity.from_masses(k, np.r_[0.375, 0.375, np.full(6, 0.25 / 6)])
        assert g3.sup_norm() == pytest.approx(3.0)
        assert density_bound([g1, g3]) == pytest.approx(2.0)

    def test_formula_two_dimensional(self):
        # three unit-sup densities in d=2: min(3 * 1, 9 * 1)
        k = Compactum.unit(2)
        flat = GridDensity.uniform(k, (4, 4))
        assert density_bound([flat] * 3) == pytest.approx(3.0)

    def test_empty(self):
        with pytest.raises(DomainError):
            density_bound([])


class TestDiscreteLP:
    def test_matches_symmetric_midpoint(self):
        out = discrete_barycenter_lp([point(0), point(2)])
        assert np.allclose(out.points, [[1.0]])

    def test_objective_not_above_procrustes(self, rng):
        for _ in range(10):
            ins = [DiscreteMeasure(rng.normal(size=(3, 2))) for _ in range(3)]
            lp = discrete_barycenter_lp(ins)
            pr = barycenter(ins).barycenter
            assert frechet_objective(lp, ins) <= frechet_objective(pr, ins) + 1e-12

    def test_cap(self, rng):
        ins = [DiscreteMeasure(rng.normal(size=(30, 1))) for _ in range(3)]
        with pytest.raises(DomainError):
            discrete_barycenter_lp(ins)


@given(spd_matrices(2))
def test_push_forward_of_barycenter_map(s):
    g = GaussianMeasure(s)
    out = push_forward(LinearMap(np.eye(2)), g)
    assert np.allclose(out.covariance, s)
