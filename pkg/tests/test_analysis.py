import numpy as np
import pytest

from fedsim import analysis
from fedsim.aggregation import (
    AggregationRule,
    aggregate,
    fedprox_closed_form,
    implicit_decomposition,
)
from fedsim.analysis import (
    AssumptionConstants,
    ContractionError,
    TheoremConstants,
    abc_constants,
    best_prox_alpha,
    chi_square,
    error_bound,
    fedavg_constants,
    fedprox_constants,
    lemma1_limit,
    lower_bound_gap,
    max_learning_rate,
    quadratic_fixed_point,
)
from fedsim.objectives import GlobalObjective, QuadraticObjective
from fedsim.solvers import SolverSpec, accumulation_vector, run_local


class TestQuadraticFixedPoint:
    def test_scalar_example(self):
        x = quadratic_fixed_point(
            [0.5, 0.5], [[[1.0]], [[1.0]]], [[0.0], [1.0]], [1, 3], eta=0.1, mu=0.0
        )
        K1, K2 = 0.1, 1 - 0.9**3
        assert x[0] == pytest.approx(K2 / (K1 + K2), abs=1e-12)
        assert x[0] == pytest.approx(0.730458, abs=1e-6)

    def test_homogeneous_taus_give_true_optimum(self):
        e = [[0.2], [0.8], [0.5]]
        x = quadratic_fixed_point(
            [1 / 3] * 3, [[[1.0]]] * 3, e, [4, 4, 4], eta=0.1
        )
        assert x[0] == pytest.approx(np.mean([0.2, 0.8, 0.5]), abs=1e-12)

    def test_small_eta_approaches_step_weighted_limit(self):
        x = quadratic_fixed_point(
            [0.5, 0.5], [[[1.0]], [[1.0]]], [[0.0], [1.0]], [1, 3], eta=1e-6
        )
        assert x[0] == pytest.approx(0.75, abs=1e-5)

    def test_contraction_violation_raises(self):
        with pytest.raises(ContractionError):
            quadratic_fixed_point([1.0], [[[1.0]]], [[0.0]], [1], eta=2.5)


class TestLemma1Limit:
    def test_two_client(self):
        x = lemma1_limit([1, 3], [[0.0], [1.0]])
        assert x[0] == pytest.approx(0.75)

    def test_equal_taus_mean(self):
        e = [[0.1], [0.5], [0.9]]
        assert lemma1_limit([2, 2, 2], e)[0] == pytest.approx(0.5)

    def test_single_client(self):
        np.testing.assert_allclose(lemma1_limit([4], [[0.3, 0.7]]), [0.3, 0.7])


class TestChiSquare:
    def test_zero_iff_equal(self):
        p = np.array([0.3, 0.7])
        assert chi_square(p, p) == 0.0

    def test_worked_example(self):
        assert chi_square([0.5, 0.5], [0.25, 0.75]) == pytest.approx(1 / 3, abs=1e-12)

    def test_two_client_step_weights_closed_form(self):
        # Direct algebra: sum (p_i - w_i)^2 / w_i with uniform p and step
        # weights w = tau / sum(tau) collapses to (t2 - t1)^2 / (4 t1 t2).
        for t1, t2 in [(1, 3), (2, 5), (4, 4)]:
            w = np.array([t1, t2], dtype=float) / (t1 + t2)
            expected = (t2 - t1) ** 2 / (4 * t1 * t2)
            assert chi_square([0.5, 0.5], w) == pytest.approx(expected, abs=1e-12)

    def test_zero_weight_rejected(self):
        with pytest.raises(ValueError):
            chi_square([0.5, 0.5], [1.0, 0.0])


class TestConstants:
    def test_fedavg_uniform_constant_tau(self):
        m, tau = 4, 5
        p = np.full(m, 1 / m)
        spec = SolverSpec("vanilla", 0.1)
        a = [accumulation_vector(spec, tau) for _ in range(m)]
        tau_eff, w = implicit_decomposition(p, [v.norm1 for v in a])
        c = abc_constants(w, tau_eff, a, p=p)
        assert c.A == pytest.approx(1.0, abs=1e-12)
        assert c.B == pytest.approx(tau - 1, abs=1e-12)
        assert c.C == pytest.approx(tau * (tau - 1), abs=1e-12)
        assert c.chi2 == pytest.approx(0.0, abs=1e-15)

    def test_two_client_heterogeneous(self):
        p = np.array([0.5, 0.5])
        spec = SolverSpec("vanilla", 0.1)
        a = [accumulation_vector(spec, t) for t in (1, 3)]
        tau_eff, w = implicit_decomposition(p, [v.norm1 for v in a])
        c = abc_constants(w, tau_eff, a, p=p)
        assert c.A == pytest.approx(1.0, abs=1e-12)
        assert c.B == pytest.approx(1.5, abs=1e-12)
        assert c.C == pytest.approx(6.0, abs=1e-12)
        A, B, C = fedavg_constants(p, [1, 3])
        assert (A, B, C) == pytest.approx((1.0, 1.5, 6.0), abs=1e-12)

    def test_tau_one_everywhere_gives_zero_b_c(self):
        A, B, C = fedavg_constants([0.25, 0.75], [1, 1])
        assert B == pytest.approx(0.0, abs=1e-12)
        assert C == pytest.approx(0.0, abs=1e-12)

    def test_degenerate_p(self):
        A, _, _ = fedavg_constants([1.0, 0.0], [5, 1])
        assert A == pytest.approx(2.0, abs=1e-12)

    def test_dual_route_fedavg(self):
        rng = np.random.default_rng(0)
        spec = SolverSpec("vanilla", 0.1)
        for _ in range(50):
            m = int(rng.integers(2, 7))
            p = rng.dirichlet(np.ones(m))
            taus = rng.integers(1, 12, size=m)
            a = [accumulation_vector(spec, int(t)) for t in taus]
            tau_eff, w = implicit_decomposition(p, [v.norm1 for v in a])
            c = abc_constants(w, tau_eff, a)
            A, B, C = fedavg_constants(p, taus)
            assert c.A == pytest.approx(A, abs=1e-10)
            assert c.B == pytest.approx(B, abs=1e-10)
            assert c.C == pytest.approx(C, abs=1e-10)

    def test_dual_route_fedprox(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            m = int(rng.integers(2, 7))
            p = rng.dirichlet(np.ones(m))
            taus = rng.integers(1, 10, size=m)
            alpha = float(rng.uniform(0.05, 0.95))
            spec = SolverSpec("proximal", eta=1.0, mu=alpha)
            a = [accumulation_vector(spec, int(t)) for t in taus]
            tau_eff, w = implicit_decomposition(p, [v.norm1 for v in a])
            c = abc_constants(w, tau_eff, a)
            A, B, C = fedprox_constants(p, taus, alpha)
            assert c.A == pytest.approx(A, abs=1e-10)
            assert c.B == pytest.approx(B, abs=1e-10)
            assert c.C == pytest.approx(C, abs=1e-10)

    def test_fedprox_alpha_limit_is_fedavg(self):
        p = np.array([0.3, 0.7])
        taus = [2, 6]
        avg = fedavg_constants(p, taus)
        prox = fedprox_constants(p, taus, 1e-8)
        np.testing.assert_allclose(prox, avg, atol=1e-5)

    def test_fedprox_tau_one_matches_vanilla(self):
        p = np.array([0.4, 0.6])
        for alpha in (0.1, 0.5, 0.9):
            prox = fedprox_constants(p, [1, 1], alpha)
            avg = fedavg_constants(p, [1, 1])
            np.testing.assert_allclose(prox, avg, atol=1e-12)


class TestBestAlphaAndLearningRate:
    def test_worked_example(self):
        alpha = best_prox_alpha(30, 20.0, 100)
        assert alpha == pytest.approx(
            np.sqrt(30) / (np.sqrt(20) * 100 ** (1 / 6)), abs=1e-12
        )
        assert alpha == pytest.approx(0.5685, abs=1e-4)

    def test_large_t_shrinks_alpha(self):
        assert best_prox_alpha(10, 5.0, 10**9) < best_prox_alpha(10, 5.0, 10)

    def test_clipping(self):
        with pytest.warns(UserWarning):
            alpha = best_prox_alpha(1000, 1.0, 1)
        assert 0 < alpha < 1

    def test_max_learning_rate_example(self):
        eta = max_learning_rate(L=1.0, beta2=1.0, tau_eff=2.0, max_a_norm1=3.0)
        assert eta == pytest.approx(0.5 / (3 * np.sqrt(3)), abs=1e-12)

    def test_tau_eff_dominant_branch(self):
        eta = max_learning_rate(L=1.0, beta2=1.0, tau_eff=10.0, max_a_norm1=1.0)
        assert eta == pytest.approx(0.05, abs=1e-12)

    def test_scaling_in_l(self):
        e1 = max_learning_rate(1.0, 1.0, 2.0, 3.0)
        e2 = max_learning_rate(2.0, 1.0, 2.0, 3.0)
        assert e2 == pytest.approx(e1 / 2)


class TestErrorBound:
    def _consts(self, chi2=0.0):
        return TheoremConstants(
            A=1.0, B=2.0, C=6.0, tau_eff=2.0, tau_bar=2.0, slowdown=1.0, chi2=chi2
        )

    def test_consistent_case_doubles_eps(self):
        eps, total = error_bound(
            self._consts(0.0), AssumptionConstants(sigma2=0.5, kappa2=0.3), m=4, T=100
        )
        assert total == pytest.approx(2 * eps, abs=1e-15)

    def test_floor_survives_large_t(self):
        chi2, kappa2 = 0.25, 0.4
        _, total = error_bound(
            self._consts(chi2), AssumptionConstants(kappa2=kappa2), m=4, T=10**12
        )
        assert total == pytest.approx(2 * chi2 * kappa2, rel=1e-3)

    def test_noiseless_homogeneous_single_term(self):
        eps, total = error_bound(
            self._consts(0.0), AssumptionConstants(), m=4, T=100
        )
        assert eps == pytest.approx(1.0 / np.sqrt(4 * 2.0 * 100), abs=1e-15)
        assert total == pytest.approx(2 * eps, abs=1e-15)


class TestLowerBound:
    def test_equal_taus_zero(self):
        assert lower_bound_gap(3, 3, 1.0) == 0.0

    def test_closed_form_and_chi2_kappa2_identity(self):
        # The floor equals 2 * chi2 * kappa2 exactly, matching the constant
        # in the non-vanishing term of the true-objective error bound.
        for t1, t2, a in [(1, 3, 1.0), (2, 7, 0.5), (4, 9, 2.0)]:
            gap = lower_bound_gap(t1, t2, a)
            w = np.array([t1, t2], dtype=float) / (t1 + t2)
            kappa2 = 2 * w[0] * w[1] * a**2
            chi2 = chi_square([0.5, 0.5], w)
            assert gap == pytest.approx(2 * chi2 * kappa2, abs=1e-12)

    def test_worked_example(self):
        assert lower_bound_gap(1, 3, 1.0) == pytest.approx(0.25)


def _simulate(rule, global_obj, solver, taus, eta, rounds):
    x = np.zeros(global_obj.dim)
    for _ in range(rounds):
        results = [
            run_local(c, x, solver, t) for c, t in zip(global_obj.clients, taus)
        ]
        x = x + aggregate(rule, global_obj.p, results, eta)
    return x


class TestOracleAgreement:
    def _random_instance(self, rng, m, d):
        clients = []
        for _ in range(m):
            A = rng.normal(size=(d, d))
            clients.append(
                QuadraticObjective(A @ A.T / d + np.eye(d), rng.normal(size=d) * 0.3)
            )
        p = rng.dirichlet(np.ones(m))
        return GlobalObjective(clients, p)

    def test_fedavg_gd_converges_to_fixed_point(self):
        rng = np.random.default_rng(5)
        for _ in range(3):
            m, d = int(rng.integers(2, 6)), int(rng.integers(1, 5))
            g = self._random_instance(rng, m, d)
            taus = [int(t) for t in rng.integers(1, 6, size=m)]
            eta = 0.05
            oracle = quadratic_fixed_point(
                g.p, [c.H for c in g.clients], [c.e for c in g.clients], taus, eta
            )
            x = _simulate(
                AggregationRule.fedavg(), g, SolverSpec("vanilla", eta), taus, eta, 4000
            )
            assert np.linalg.norm(x - oracle) < 1e-8

    def test_fedprox_gd_converges_to_fixed_point(self):
        rng = np.random.default_rng(6)
        g = self._random_instance(rng, 3, 3)
        taus = [1, 4, 6]
        eta, mu = 0.05, 1.0
        oracle = quadratic_fixed_point(
            g.p, [c.H for c in g.clients], [c.e for c in g.clients], taus, eta, mu
        )
        x = _simulate(
            AggregationRule.fedavg(), g, SolverSpec("proximal", eta, mu=mu),
            taus, eta, 5000,
        )
        assert np.linalg.norm(x - oracle) < 1e-8

    def test_fednova_bias_shrinks_linearly_with_eta(self):
        # Normalized averaging removes the weight-bias floor; the residual
        # fixed-point offset is local drift, proportional to the step size.
        rng = np.random.default_rng(7)
        g = self._random_instance(rng, 3, 2)
        taus = [1, 4, 6]
        errors = {}
        for eta in (0.04, 0.004):
            x = _simulate(
                AggregationRule.fednova(), g, SolverSpec("vanilla", eta),
                taus, eta, 60_000,
            )
            errors[eta] = np.linalg.norm(x - g.minimizer())
        assert errors[0.004] < errors[0.04]
        ratio = errors[0.04] / errors[0.004]
        assert 5 < ratio < 20  # O(eta) scaling

    def test_fednova_much_closer_to_optimum_than_fedavg(self):
        # Plain averaging keeps a step-size-independent weight bias; the
        # normalized rule's residual drift shrinks with eta, so at a small
        # step size it lands far closer to the true optimum.
        rng = np.random.default_rng(8)
        clients = [
            QuadraticObjective(np.eye(2), rng.normal(size=2)) for _ in range(4)
        ]
        g = GlobalObjective(clients, np.full(4, 0.25))
        taus = [1, 3, 8, 12]
        eta = 0.002
        nova = _simulate(
            AggregationRule.fednova(), g, SolverSpec("vanilla", eta), taus, eta, 40_000
        )
        avg = _simulate(
            AggregationRule.fedavg(), g, SolverSpec("vanilla", eta), taus, eta, 40_000
        )
        opt = g.minimizer()
        assert np.linalg.norm(nova - opt) < 0.2 * np.linalg.norm(avg - opt)


def test_chi_square_zero_iff_equal_norms():
    p = np.array([0.2, 0.3, 0.5])
    spec = SolverSpec("vanilla", 0.1)
    equal = [accumulation_vector(spec, 4) for _ in range(3)]
    _, w = implicit_decomposition(p, [a.norm1 for a in equal])
    assert chi_square(p, w) == pytest.approx(0.0, abs=1e-15)
    uneven = [accumulation_vector(spec, t) for t in (1, 4, 9)]
    _, w = implicit_decomposition(p, [a.norm1 for a in uneven])
    assert chi_square(p, w) > 0


def test_prox_alpha_tradeoff_monotonicity():
    # Raising the proximal strength pulls implicit weights toward p
    # (weight bias down) while shrinking effective steps (slowdown up).
    p = np.full(6, 1 / 6)
    taus = np.array([1, 5, 10, 20, 40, 80])
    tau_bar = taus.mean()
    grid = np.arange(0.01, 1.0, 0.01)
    chi2s, slowdowns = [], []
    for alpha in grid:
        tau_eff, w = fedprox_closed_form(p, taus, alpha)
        chi2s.append(chi_square(p, w))
        slowdowns.append(tau_bar / tau_eff)
    assert np.all(np.diff(chi2s) <= 1e-12)
    assert np.all(np.diff(slowdowns) >= -1e-12)
