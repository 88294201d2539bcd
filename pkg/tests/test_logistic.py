"""
Tests du problème logistique périodique
=======================================

Ce fichier teste :
1. La non-linéarité g (validation, pente sécante)
2. Le problème de Cauchy et sa barrière supérieure
3. L'oracle de Bernoulli : solution périodique spatialement constante
4. L'intervalle d'existence ]μ₁(0), μ*(b)[, le contrôle de décroissance et l'unicité
5. La marge de stabilité, la dérivée en μ et la courbe de bifurcation
"""

import math
import os
import sys
from types import SimpleNamespace

import numpy as np
import pytest
from scipy.integrate import quad

PROJECT_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, PROJECT_DIR)

from backend.engine.coeffs import CoefficientSet, SpaceTimeField, Weight
from backend.engine.eigen import mu_star_sweep, principal_pair
from backend.engine.errors import (
    DomainError,
    NoPositiveSolutionError,
    OutOfRangeError,
    RejectedInputError,
    SolverError,
)
from backend.engine.evolution import TimeGrid
from backend.engine.logistic import (
    LogisticProblem,
    Nonlinearity,
    OrderedPair,
    auto_mu_ladder,
    bifurcation_sweep,
    build_subsolution,
    build_supersolution,
    confirm_decay,
    eigenvalue_identity_gap,
    monotone_iterate,
    mu_derivative,
    secant_slope,
    solve_periodic,
)
from backend.engine.mesh import DiscreteForm, build_interval_mesh


# ============================================================================
# FIXTURES
# ============================================================================

def scalar_problem(K=20, theta=1.0, weight_expr="1"):
    """Neumann sur (0, 1), A = −Δ : les solutions constantes en espace sont exactes."""
    mesh = build_interval_mesh(0.0, 1.0, 5, "neumann", "neumann")
    form = DiscreteForm(mesh, CoefficientSet.laplacian(1.0, 1))
    grid = TimeGrid(1.0, K, theta)
    weight = Weight.from_field(SpaceTimeField.from_expression(weight_expr, 1.0, "weight"),
                               mesh, grid)
    return LogisticProblem(form, grid, weight, Nonlinearity.linear())


@pytest.fixture
def scalar():
    problem = scalar_problem()
    sweep = mu_star_sweep(problem.form, problem.grid, problem.weight, [1.0, 2.0, 4.0, 8.0])
    pair0 = principal_pair(problem.form, problem.grid)
    return problem, sweep, pair0


@pytest.fixture
def dirichlet():
    mesh = build_interval_mesh(0.0, 1.0, 21, "dirichlet", "dirichlet")
    form = DiscreteForm(mesh, CoefficientSet.laplacian(1.0, 1))
    grid = TimeGrid(1.0, 20)
    problem = LogisticProblem(form, grid, Weight.constant(1.0, mesh, grid), Nonlinearity.linear())
    sweep = mu_star_sweep(form, grid, problem.weight, [1.0, 2.0, 4.0, 8.0, 16.0, 32.0])
    return problem, sweep, principal_pair(form, grid)


# ============================================================================
# TEST 1: NON-LINÉARITÉ
# ============================================================================

class TestNonlinearity:

    def test_power_growth_certificate(self):
        nl = Nonlinearity.power(2.0)
        assert nl.growth == (1.0, 3.0)
        assert nl.g(np.zeros((2, 1)), 0.0, np.array([2.0, 3.0])).tolist() == [4.0, 9.0]

    def test_power_exponent_below_one_rejected(self):
        with pytest.raises(RejectedInputError):
            Nonlinearity.power(0.5)

    @pytest.mark.parametrize("g, dg, growth", [
        ("1 + xi", "1", None),
        ("xi", "-1", None),
        ("xi", "1", (2.0, 2.0)),
    ])
    def test_invalid_nonlinearity_rejected(self, g, dg, growth):
        nl = Nonlinearity.from_expressions(g, dg, 1.0, growth)
        with pytest.raises(RejectedInputError):
            nl.validate(np.zeros((3, 1)), [0.0, 0.5])

    def test_expression_nonlinearity(self):
        nl = Nonlinearity.from_expressions("xi * (1 + 0.5*sin(2*pi*t/T))", "1 + 0.5*sin(2*pi*t/T)",
                                           1.0, (0.5, 2.0))
        nl.validate(np.zeros((3, 1)), [0.0, 0.25, 0.5])
        assert nl.g(np.zeros((1, 1)), 0.25, np.array([2.0]))[0] == pytest.approx(3.0)

    def test_secant_slope(self):
        nl = Nonlinearity.power(2.0)
        assert secant_slope(nl, 1.0, 3.0) == pytest.approx(4.0, rel=1e-12)
        assert secant_slope(nl, 2.0, 2.0) == pytest.approx(4.0, rel=1e-12)

    def test_secant_slope_negative_rejected(self):
        with pytest.raises(DomainError):
            secant_slope(Nonlinearity.linear(), -1.0, 1.0)


# ============================================================================
# TEST 2: PROBLÈME DE CAUCHY
# ============================================================================

class TestCauchy:

    def test_ivp_positive_under_barrier(self, dirichlet):
        problem, _, _ = dirichlet
        u0 = np.sin(np.pi * problem.mesh.nodes[:, 0])
        traj = problem.solve_ivp(15.0, u0, horizon=2)
        assert traj.steps == 40
        assert np.all(traj.values >= 0)
        assert traj.meta["barrier_violations"] == 0

    def test_ivp_negative_start_rejected(self, dirichlet):
        problem, _, _ = dirichlet
        with pytest.raises(RejectedInputError):
            problem.solve_ivp(1.0, -np.ones(problem.mesh.n))

    def test_constant_equilibrium_is_fixed(self):
        problem = scalar_problem()
        traj = problem.period(np.full(problem.mesh.n, 2.0), 2.0)
        assert np.allclose(traj.values, 2.0, rtol=1e-12)


# ============================================================================
# TEST 3: ORACLE DE BERNOULLI
# ============================================================================

class TestBernoulliOracle:

    def test_periodic_bernoulli_solution(self):
        """u' = u − b(t)u², y = 1/u : y' = −y + b, y₀ = I_T/(e^T − 1)."""
        problem = scalar_problem(K=1000, theta=0.5, weight_expr="1 + 0.5*sin(2*pi*t)")
        sweep = mu_star_sweep(problem.form, problem.grid, problem.weight, [1.0, 2.0, 4.0, 8.0])
        sol = solve_periodic(problem, 1.0, sweep=sweep)

        def b(s):
            return 1.0 + 0.5 * math.sin(2 * math.pi * s)

        I_T = quad(lambda s: b(s) * math.exp(s), 0.0, 1.0, epsabs=1e-14)[0]
        y0 = I_T / (math.e - 1.0)
        times = problem.grid.times[::50]
        exact = np.array([
            1.0 / (math.exp(-t) * (y0 + quad(lambda s: b(s) * math.exp(s), 0.0, t,
                                              epsabs=1e-14)[0]))
            for t in times
        ])
        for node in range(problem.mesh.n):
            err = np.max(np.abs(sol.u.values[::50, node] - exact))
            assert err < 1e-4, f"Écart {err:.2e} au nœud {node}"


# ============================================================================
# TEST 4: EXISTENCE ET UNICITÉ
# ============================================================================

class TestOrderedPair:

    def test_subsolution_below_equilibrium(self, scalar):
        problem, _, pair0 = scalar
        eps, sub = build_subsolution(problem, 2.0, pair0)
        assert 0 < eps <= 1.0
        assert np.all(sub.values <= 2.0 + 1e-12)

    def test_subsolution_out_of_range(self, scalar):
        problem, _, pair0 = scalar
        with pytest.raises(OutOfRangeError):
            build_subsolution(problem, 0.0, pair0)

    def test_supersolution_ladder_choice(self, scalar):
        problem, sweep, _ = scalar
        kappa, delta, gamma, sup = build_supersolution(problem, 2.0, sweep)
        assert gamma == 4.0, "premier échelon avec μ₁(γb) > μ + 1"
        assert delta == 0.0
        assert kappa >= 4.0
        assert np.all(sup.values >= 2.0)

    def test_monotone_iterate_both_ways(self, scalar):
        problem, sweep, pair0 = scalar
        eps, sub = build_subsolution(problem, 2.0, pair0)
        kappa, _, _, sup = build_supersolution(problem, 2.0, sweep, lower=sub)
        pair = OrderedPair(sub, sup, eps, kappa)
        up = monotone_iterate(problem, 2.0, pair, "up")
        down = monotone_iterate(problem, 2.0, pair, "down")
        assert up.direction == "up" and down.direction == "down"
        assert np.allclose(up.u.values, 2.0, atol=1e-6)
        assert np.allclose(down.u.values, 2.0, atol=1e-6)

    def test_monotone_iterate_rejects_bad_direction(self, scalar):
        problem, _, pair0 = scalar
        _, sub = build_subsolution(problem, 2.0, pair0)
        with pytest.raises(RejectedInputError):
            monotone_iterate(problem, 2.0, OrderedPair(sub, None), "sideways")
        with pytest.raises(RejectedInputError):
            monotone_iterate(problem, 2.0, OrderedPair(sub, None), "down")


class TestPeriodicSolution:

    def test_scalar_solution_equals_mu(self, scalar):
        problem, sweep, pair0 = scalar
        sol = solve_periodic(problem, 2.0, pair0, sweep)
        assert sol.converged
        assert np.allclose(sol.u.values, 2.0, atol=1e-7)
        assert sol.pde_residual < 1e-6

    @pytest.mark.parametrize("offset", [0.0, -0.5])
    def test_no_positive_solution_below_mu1(self, scalar, offset):
        problem, sweep, pair0 = scalar
        with pytest.raises(NoPositiveSolutionError):
            solve_periodic(problem, pair0.mu1 + offset, pair0, sweep)

    def test_decay_details_reported(self, scalar):
        problem, sweep, pair0 = scalar
        with pytest.raises(NoPositiveSolutionError) as info:
            solve_periodic(problem, pair0.mu1, pair0, sweep)
        details = info.value.details
        assert details["mode"] in ("direct", "extrapolated")
        assert details["periods"] >= 16
        assert details["sup"] < 0.1, "Les itérés doivent avoir décru depuis ‖φ₀‖∞ = 1"

    def test_positive_solution_just_above_mu1(self, scalar):
        problem, sweep, pair0 = scalar
        mu = pair0.mu1 + 0.05
        sol = solve_periodic(problem, mu, pair0, sweep, max_periods=2000)
        assert sol.converged
        assert np.all(sol.u.values > 0)
        assert sol.sup_norm == pytest.approx(mu, abs=1e-6)
        assert sol.stability_margin > 0

    def test_out_of_range_above_mu_star(self, dirichlet):
        problem, _, pair0 = dirichlet
        weight = Weight.from_field(SpaceTimeField.from_expression("x >= 0.5", 1.0, "weight"),
                                   problem.mesh, problem.grid)
        refuge = LogisticProblem(problem.form, problem.grid, weight, Nonlinearity.linear())
        sweep = mu_star_sweep(refuge.form, refuge.grid, weight, 2.0 ** np.arange(11))
        assert not sweep.is_divergent
        with pytest.raises(OutOfRangeError):
            solve_periodic(refuge, sweep.mu_star_estimate + 1.0, pair0, sweep)

    def test_uniqueness_both_directions(self, dirichlet):
        problem, sweep, pair0 = dirichlet
        sol = solve_periodic(problem, 15.0, pair0, sweep, both_directions=True)
        assert sol.meta["uniqueness_gap"] <= 10.0 * sol.tol_fix
        assert sol.meta["down"].direction == "down"
        free = problem.mesh.free_nodes
        assert np.all(sol.u.values[:, free] > 0)
        assert sol.u.sup_norm() <= 15.0 + 1e-8, "u ≤ μ/b par le principe du maximum"

    def test_stability_and_eigen_identity(self, scalar):
        problem, sweep, pair0 = scalar
        sol = solve_periodic(problem, 2.0, pair0, sweep)
        assert sol.stability_margin == pytest.approx(2.0, abs=1e-6)
        assert abs(eigenvalue_identity_gap(problem, sol)) < 1e-6

    def test_dirichlet_margin_positive(self, dirichlet):
        problem, sweep, pair0 = dirichlet
        sol = solve_periodic(problem, 15.0, pair0, sweep)
        assert sol.stability_margin > 0
        assert abs(eigenvalue_identity_gap(problem, sol)) < 1e-6


class TestDecayCheck:

    @staticmethod
    def _stub(fn):
        return lambda w, mu: SimpleNamespace(values=np.vstack([w, fn(w)]))

    def test_identity_map_is_not_decay(self, scalar, monkeypatch):
        problem, sweep, pair0 = scalar
        monkeypatch.setattr(problem, "period", self._stub(lambda w: w.copy()))
        with pytest.raises(SolverError) as info:
            solve_periodic(problem, pair0.mu1, pair0, sweep, max_periods=40)
        assert not isinstance(info.value, NoPositiveSolutionError)

    def test_stagnation_above_zero(self, scalar, monkeypatch):
        problem, _, _ = scalar
        monkeypatch.setattr(problem, "period", self._stub(lambda w: 0.5 * w + 0.25))
        with pytest.raises(SolverError) as info:
            confirm_decay(problem, 0.0, np.ones(problem.mesh.n), max_periods=200)
        assert info.value.details["sup"] == pytest.approx(0.5, abs=1e-6)

    def test_growing_iterates_rejected(self, scalar, monkeypatch):
        problem, _, _ = scalar
        monkeypatch.setattr(problem, "period", self._stub(lambda w: 1.01 * w))
        with pytest.raises(SolverError) as info:
            confirm_decay(problem, 0.0, np.ones(problem.mesh.n))
        assert info.value.details["period"] == 1

    def test_geometric_decay_confirmed(self, scalar, monkeypatch):
        problem, _, _ = scalar
        monkeypatch.setattr(problem, "period", self._stub(lambda w: 0.5 * w))
        report = confirm_decay(problem, 0.0, np.ones(problem.mesh.n))
        assert report["periods"] == 16
        assert report["limit"] < 0.0

    def test_power_law_decay_confirmed(self, scalar):
        problem, _, pair0 = scalar
        # μ = μ₁(0) = 0 : u' = −u², décroissance en 1/n
        report = confirm_decay(problem, pair0.mu1, np.ones(problem.mesh.n), max_periods=200)
        assert report["mode"] == "extrapolated"
        assert report["sup"] < 0.1

    def test_zero_start_rejected(self, scalar):
        problem, _, _ = scalar
        with pytest.raises(RejectedInputError):
            confirm_decay(problem, 0.0, np.zeros(problem.mesh.n))


# ============================================================================
# TEST 5: DÉRIVÉE EN μ ET BIFURCATION
# ============================================================================

class TestBifurcation:

    def test_mu_derivative_scalar(self, scalar):
        problem, sweep, pair0 = scalar
        sol = solve_periodic(problem, 2.0, pair0, sweep)
        v = mu_derivative(problem, sol)
        assert np.allclose(v.values, 1.0, atol=1e-6), "u_μ ≡ μ donc ∂u/∂μ ≡ 1"

    def test_mu_derivative_matches_difference(self, dirichlet):
        problem, sweep, pair0 = dirichlet
        h = 1e-3
        lo = solve_periodic(problem, 15.0, pair0, sweep, tol_fix=1e-12)
        hi = solve_periodic(problem, 15.0 + h, pair0, sweep, tol_fix=1e-12)
        v = mu_derivative(problem, lo)
        fd = (hi.u.values - lo.u.values) / h
        assert np.max(np.abs(v.values - fd)) < 1e-2 * (1.0 + np.max(np.abs(v.values)))

    @staticmethod
    def _fd_errors(problem, sweep, pair0, mu):
        base = solve_periodic(problem, mu, pair0, sweep, tol_fix=1e-11)
        v = mu_derivative(problem, base)
        errors = []
        for h in (1e-2, 5e-3):
            shifted = solve_periodic(problem, mu + h, pair0, sweep, tol_fix=1e-11)
            fd = (shifted.u.values - base.u.values) / h
            errors.append(float(np.max(np.abs(fd - v.values))))
        return errors

    def test_difference_error_halves_scalar(self):
        problem = scalar_problem(weight_expr="1 + 0.5*sin(2*pi*t)")
        sweep = mu_star_sweep(problem.form, problem.grid, problem.weight, [1.0, 2.0, 4.0, 8.0])
        pair0 = principal_pair(problem.form, problem.grid)
        coarse, fine = self._fd_errors(problem, sweep, pair0, 2.0)
        assert coarse >= 1.8 * fine, f"Erreur {coarse:.3g} vs {fine:.3g} : pas d'ordre 1"

    def test_difference_error_halves_dirichlet(self, dirichlet):
        problem, sweep, pair0 = dirichlet
        coarse, fine = self._fd_errors(problem, sweep, pair0, 15.0)
        assert coarse >= 1.8 * fine, f"Erreur {coarse:.3g} vs {fine:.3g} : pas d'ordre 1"

    def test_scalar_curve_sup_equals_mu(self, scalar):
        problem, sweep, pair0 = scalar
        ladder = [0.5, 1.0, 2.0, 3.0]
        curve = bifurcation_sweep(problem, ladder, sweep, pair0)
        assert curve.statuses == ["ok"] * 4
        for mu, sol in zip(ladder, curve.solutions):
            assert sol.sup_norm == pytest.approx(mu, abs=1e-6)
        assert curve.monotone_in_mu
        frame = curve.to_frame()
        assert np.allclose(frame["sup_norm"], frame["mu"], atol=1e-6)

    def test_threaded_curve_matches(self, scalar):
        problem, sweep, pair0 = scalar
        curve = bifurcation_sweep(problem, [1.0, 2.0], sweep, pair0, threads=2)
        assert [round(s.sup_norm, 6) for s in curve.solutions] == [1.0, 2.0]

    def test_failed_rung_recorded(self, scalar):
        problem, sweep, pair0 = scalar
        curve = bifurcation_sweep(problem, [-1.0, 1.0], sweep, pair0)
        assert curve.solutions[0] is None
        assert curve.statuses[0].startswith("failed")
        assert curve.statuses[1] == "ok"

    def test_warm_rung_bracketed_by_supersolution(self, scalar):
        problem, sweep, pair0 = scalar
        curve = bifurcation_sweep(problem, [1.0, 2.0], sweep, pair0)
        warm = curve.solutions[1]
        assert warm.meta["warm_start"] is True
        assert warm.meta["kappa"] >= 4.0
        assert warm.sup_norm == pytest.approx(2.0, abs=1e-6)

    def test_warm_rung_beyond_mu_star_fails(self, dirichlet):
        problem, _, pair0 = dirichlet
        weight = Weight.from_field(SpaceTimeField.from_expression("x >= 0.5", 1.0, "weight"),
                                   problem.mesh, problem.grid)
        refuge = LogisticProblem(problem.form, problem.grid, weight, Nonlinearity.linear())
        sweep = mu_star_sweep(refuge.form, refuge.grid, weight, 2.0 ** np.arange(11))
        ladder = [pair0.mu1 + 2.0, sweep.mu_star_estimate + 1.0]
        curve = bifurcation_sweep(refuge, ladder, sweep, pair0)
        assert curve.statuses == ["ok", "failed: OutOfRangeError"]
        assert curve.solutions[1] is None

    def test_auto_ladder(self):
        ladder = auto_mu_ladder(0.0, 8.0, n_rungs=4)
        assert ladder.tolist() == pytest.approx([0.08, 4.0, 6.0, 7.0])
        unbounded = auto_mu_ladder(1.0, math.inf, n_rungs=5)
        assert unbounded[0] == pytest.approx(1.01)
        assert unbounded[-1] == pytest.approx(5.0)
