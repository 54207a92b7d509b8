"""Instance oracles, samplers, lower-level solves and regularity constants."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from csbo.oracle import problem_derivative_errors
from csbo.problems import (JointSamples, NonConvergenceError, NumericalDomainError, build_hyperclean,
                           build_quadratic, build_traffic, expressiveness_constant, load_labeled_matrix,
                           minimize_lower, regularity_constants)
from csbo.problems.constants import RegularityConstants
from csbo.problems.hyperclean import corrupt_labels, cross_entropy


@pytest.fixture(params=["quadratic", "traffic", "hyperclean"])
def instance(request):
    return request.getfixturevalue(request.param)


class TestDerivatives:
    def test_finite_differences(self, instance):
        errors = problem_derivative_errors(instance, n_probes=100, seed=1)
        assert max(errors.values()) <= 1e-4, errors

    def test_hessian_symmetric_and_strongly_convex(self, instance):
        x, y, xi, eta = instance.random_probes(100, np.random.default_rng(2))
        mu = regularity_constants(instance, n_probes=10).mu
        for k in range(len(x)):
            H = instance.hess_g_yy(x[k], y[k : k + 1], xi[k : k + 1], eta[k : k + 1])[0]
            assert np.max(np.abs(H - H.T)) <= 1e-10
            assert np.linalg.eigvalsh(H)[0] >= mu - 1e-8


class TestJointSamples:
    def test_indexing_and_concat(self):
        s = JointSamples(np.arange(4.0)[:, None], np.arange(8.0).reshape(4, 2))
        assert len(s) == 4
        assert len(s[1:3]) == 2
        both = JointSamples.concat([s, s[:1]])
        np.testing.assert_array_equal(both.xi[-1], [0.0])
        assert len(s.repeat(3)) == 12


class TestSampling:
    def test_deterministic(self, instance):
        a, b = instance.sample_joint(3, 0), instance.sample_joint(3, 0)
        np.testing.assert_array_equal(a.xi, b.xi)
        np.testing.assert_array_equal(a.eta, b.eta)

    def test_traffic_context_range(self, traffic):
        xi = traffic.sample_joint(500, 1).xi
        assert xi.min() >= 0.0 and xi.max() <= 1.0

    def test_hyperclean_context_range(self, hyperclean):
        xi = hyperclean.sample_joint(500, 1).xi
        assert xi.min() >= 0.1 and xi.max() <= 10.0

    def test_rejects_empty(self, instance):
        with pytest.raises(ValueError):
            instance.sample_joint(0, 0)


class TestQuadratic:
    def test_grad_f_y(self, quadratic, rng):
        y, eta = rng.normal(size=(4, 2)), rng.normal(size=(4, 2))
        np.testing.assert_array_equal(quadratic.grad_f_y(np.zeros(3), y, np.zeros((4, 1)), eta), y - eta)

    def test_hessian_constant(self, quadratic, rng):
        H = quadratic.hess_g_yy(rng.normal(size=3), rng.normal(size=(5, 2)), rng.uniform(-1, 1, (5, 1)),
                                rng.normal(size=(5, 2)))
        np.testing.assert_array_equal(H, np.broadcast_to(quadratic.Q, H.shape))

    def test_first_order_condition(self, quadratic, rng):
        x, xi = rng.normal(size=3), rng.uniform(-1, 1, (50, 1))
        y = quadratic.lower_solution(x, xi)
        # g is linear in eta, so averaging eps out means evaluating at eta = m(xi)
        grad = quadratic.grad_g_y(x, y, xi, quadratic.eta_mean(xi))
        assert np.max(np.linalg.norm(grad, axis=1)) <= 1e-10

    def test_closed_form_solution(self, quadratic, rng):
        x, xi = rng.normal(size=3), rng.uniform(-1, 1, (5, 1))
        expected = np.linalg.solve(quadratic.Q, (quadratic.A @ x + quadratic.b(xi) + 0.5 * xi).T).T
        np.testing.assert_allclose(quadratic.lower_solution(x, xi), expected, atol=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_strong_convexity_at_least_one(self, seed):
        p = build_quadratic(4, 3, seed)
        assert p.strong_convexity == pytest.approx(np.linalg.eigvalsh(p.Q)[0])
        assert p.strong_convexity >= 1.0

    def test_rejects_bad_dims(self):
        with pytest.raises(ValueError):
            build_quadratic(0, 2, 0)

    def test_non_finite_raises(self, quadratic):
        with pytest.raises(NumericalDomainError):
            quadratic.g(np.zeros(3), np.array([[np.inf, 0.0]]), np.zeros((1, 1)), np.zeros((1, 2)))


class TestTraffic:
    def test_smoothed_distance_at_observation(self, traffic):
        y = np.array([[0.3, 0.4]])
        assert traffic.f(traffic.capacity, y, np.array([[0.7]]), y)[0] == pytest.approx(1e-8, rel=1e-12)

    def test_bpr_derivative(self, traffic, rng):
        # d/dy t0 (y + y^5 / (5 x^4)) = t0 (1 + (y/x)^4) with demand met and y > 0
        x = rng.uniform(0.2, 0.8, 2)
        y = np.array([[0.4, 0.3]])
        xi = np.array([[0.5]])
        grad = traffic.grad_g_y(x, y, xi, np.zeros((1, 2)))[0]
        expected = traffic.t0 * (1 + (y[0] / x) ** 4) + traffic.mu0 * y[0]
        np.testing.assert_allclose(grad, expected, rtol=1e-12)

    def test_hessian_structure(self, traffic):
        x = traffic.capacity
        y = np.array([[0.2, 0.1]])
        H = traffic.hess_g_yy(x, y, np.array([[0.9]]), np.zeros((1, 2)))[0]
        diag = traffic.t0 * 4 * y[0] ** 3 / x**4 + traffic.mu0
        np.testing.assert_allclose(H, np.diag(diag) + 200.0 * np.ones((2, 2)), rtol=1e-12)

    @pytest.mark.parametrize("seed", range(3))
    def test_equilibrium_meets_demand(self, seed):
        p = build_traffic(seed)
        xi = np.linspace(0.05, 1.0, 20)[:, None]
        y = p.equilibrium(p.capacity, xi)
        slack = xi[:, 0] - y.sum(axis=1)
        # stationarity on a used link: t_e + mu0 y_e = 2 lam_d slack
        t_max = (p.travel_time(p.capacity, y) + p.mu0 * y).max(axis=1)
        assert np.all(slack >= 0.0)
        assert np.all(slack <= t_max / (2 * p.lam_demand) + 1e-12)
        grad = p.grad_g_y(p.capacity, y, xi, np.zeros_like(y))
        assert np.max(np.linalg.norm(grad, axis=1)) <= p.gen_tol

    def test_zero_demand_solution(self, traffic):
        # with no demand the active pieces are linear: (2 lam_d 11^T + (2 lam_p + mu0) I) y = -t0
        y = traffic.equilibrium(traffic.capacity, np.zeros((1, 1)), tol=1e-10)[0]
        M = 2 * traffic.lam_demand * np.ones((2, 2)) + (2 * traffic.lam_plus + traffic.mu0) * np.eye(2)
        np.testing.assert_allclose(y, np.linalg.solve(M, -traffic.t0), atol=1e-10 / traffic.mu0)
        assert np.max(np.abs(y)) <= traffic.t0.max() / (2 * traffic.lam_plus)

    def test_observations_nonnegative(self, traffic):
        assert np.all(traffic.sample_joint(1000, 3).eta >= 0.0)

    def test_noise_unbiased_away_from_truncation(self):
        p = build_traffic(1)
        s = p.sample_joint(4000, 5)
        y = p.equilibrium(p.capacity, s.xi)
        keep = np.all(y >= 4 * p.sigma0, axis=1)
        resid = s.eta[keep] - y[keep]
        assert np.all(np.abs(resid.mean(axis=0)) <= 3 * p.sigma0 / math.sqrt(keep.sum()))

    def test_noise_bias_matches_truncated_normal(self):
        # rows are redrawn until both entries are >= 0; with independent coordinates
        # each entry is a normal truncated at -y*/sigma0
        p = build_traffic(1)
        s = p.sample_joint(4000, 5)
        y = p.equilibrium(p.capacity, s.xi)
        a = -y / p.sigma0
        expected = p.sigma0 * norm.pdf(a) / norm.sf(a)
        resid = s.eta - y - expected
        assert np.all(np.abs(resid.mean(axis=0)) <= 3 * p.sigma0 / math.sqrt(len(s)))

    def test_projection(self, traffic):
        np.testing.assert_array_equal(traffic.project_x(np.array([-1.0, 100.0])), [0.05, 10.0])


class TestHyperclean:
    def test_uniform_logits(self, hyperclean):
        val = hyperclean.f(np.zeros(hyperclean.d_x), np.zeros((3, hyperclean.d_y)),
                           np.ones((3, 1)), np.array([[0, 0], [1, 1], [2, 2]], dtype=float))
        np.testing.assert_allclose(val, math.log(hyperclean.n_classes))

    def test_zero_upper_gives_half_weights(self, hyperclean, rng):
        y = rng.normal(size=(1, hyperclean.d_y))
        eta = np.array([[4.0, 0.0]])
        xi = np.array([[2.0]])
        logits = hyperclean.X_train[4] @ y.reshape(hyperclean.n_classes, -1).T / 2.0
        ce = cross_entropy(logits[None], hyperclean.Y_train[4:5])[0]
        expected = 0.5 * ce + hyperclean.lam * np.sum(y * y)
        assert hyperclean.g(np.zeros(hyperclean.d_x), y, xi, eta)[0] == pytest.approx(expected, rel=1e-12)

    def test_unit_temperature(self, hyperclean, rng):
        y = rng.normal(size=(1, hyperclean.d_y))
        logits = hyperclean.X_val[3] @ y.reshape(hyperclean.n_classes, -1).T
        expected = cross_entropy(logits[None], hyperclean.Y_val[3:4])[0]
        value = hyperclean.f(np.zeros(hyperclean.d_x), y, np.ones((1, 1)), np.array([[0.0, 3.0]]))[0]
        assert value == pytest.approx(expected, rel=1e-12)

    def test_strong_convexity(self, hyperclean):
        x, y, xi, eta = hyperclean.random_probes(100, np.random.default_rng(0))
        for k in range(len(x)):
            H = hyperclean.hess_g_yy(x[k], y[k : k + 1], xi[k : k + 1], eta[k : k + 1])[0]
            assert np.linalg.eigvalsh(H)[0] >= 2 * hyperclean.lam - 1e-10

    def test_corruption_rate(self, rng):
        labels = rng.integers(0, 4, 20_000)
        out, flipped = corrupt_labels(labels, 4, 0.3, rng)
        assert abs(flipped.mean() - 0.3) <= 0.02
        # a flip lands on the same class a quarter of the time
        assert abs((out != labels).mean() - 0.3 * 0.75) <= 0.02

    def test_full_batch_lower_solve(self, hyperclean):
        x = np.random.default_rng(0).normal(size=hyperclean.d_x)
        xi = np.array([[0.5], [4.0]])
        y = hyperclean.solve_lower(x, xi, tol=1e-10)
        generic = minimize_lower(hyperclean, x, xi, tol=1e-10)
        np.testing.assert_allclose(y, generic, atol=1e-8)

    @pytest.mark.parametrize("fmt", ["npy", "csv", "txt"])
    def test_data_ingestion(self, tmp_path, fmt, rng):
        X = rng.normal(size=(30, 3))
        labels = rng.integers(0, 3, 30)
        data = np.column_stack([X, labels])
        path = tmp_path / f"data.{fmt}"
        if fmt == "npy":
            np.save(path, data)
        else:
            np.savetxt(path, data, delimiter="," if fmt == "csv" else " ")
        X2, l2 = load_labeled_matrix(path, fmt)
        np.testing.assert_allclose(X2, X)
        np.testing.assert_array_equal(l2, labels)
        p = build_hyperclean(n_train=20, n_val=10, n_classes=3, seed=0, data=(X2, l2))
        assert p.d_y == 9 and p.d_x == 20

    def test_ingestion_rejects_fractional_labels(self, tmp_path):
        path = tmp_path / "bad.csv"
        np.savetxt(path, np.array([[0.1, 0.5], [0.2, 1.0]]), delimiter=",")
        with pytest.raises(ValueError):
            load_labeled_matrix(path)

    def test_inconsistent_data(self, rng):
        with pytest.raises(ValueError):
            build_hyperclean(n_train=5, n_val=5, n_classes=2, data=(rng.normal(size=(10, 2)), np.zeros(9, int)))


class TestLowerSolver:
    @pytest.mark.parametrize("method", ["newton", "gd"])
    def test_matches_closed_form(self, quadratic, method, rng):
        x, xi = rng.normal(size=3), rng.uniform(-1, 1, (6, 1))
        y = minimize_lower(quadratic, x, xi, tol=1e-10, method=method)
        np.testing.assert_allclose(y, quadratic.lower_solution(x, xi), atol=1e-10 / quadratic.strong_convexity)

    def test_iteration_cap(self, traffic):
        with pytest.raises(NonConvergenceError):
            minimize_lower(traffic, traffic.capacity, np.array([[0.5]]), tol=1e-12, method="gd", max_iter=3)

    def test_rejects_nonpositive_tol(self, quadratic):
        with pytest.raises(ValueError):
            minimize_lower(quadratic, np.zeros(3), np.zeros((1, 1)), tol=0.0)


class TestRegularityConstants:
    def test_quadratic(self, quadratic):
        c = regularity_constants(quadratic)
        eig = np.linalg.eigvalsh(quadratic.Q)
        assert c.mu == pytest.approx(eig[0])
        assert c.L_g1 >= eig[-1]
        assert c.L_g2 == 0.0
        assert math.isfinite(c.K) and c.K > 0

    def test_hyperclean_modulus(self, hyperclean):
        assert regularity_constants(hyperclean, n_probes=5).mu == pytest.approx(2e-3)

    def test_probe_estimates_flagged(self, traffic):
        c = regularity_constants(traffic, n_probes=10)
        assert c.estimated and c.probe["n_probes"] == 10
        assert c.mu == traffic.mu0

    @given(st.lists(st.floats(0.0, 10.0), min_size=4, max_size=4), st.floats(0.01, 10.0))
    @settings(max_examples=50, deadline=None)
    def test_K_formula(self, lips, mu):
        f0, f1, g1, g2 = lips
        c = RegularityConstants(f0, f1, g1, g2, mu)
        assert c.K == pytest.approx(f1 + g2 * f0 / mu + g2 * g1 * f0 / mu**2 + f1 * g1 / mu)
        assert c.K == expressiveness_constant(f0, f1, g1, g2, mu)

    def test_rejects_invalid(self):
        with pytest.raises(ValueError):
            RegularityConstants(1.0, 1.0, 1.0, 1.0, 0.0)
        with pytest.raises(ValueError):
            RegularityConstants(-1.0, 1.0, 1.0, 1.0, 1.0)
