"""
Tests de la valeur propre principale et du balayage en γ
=======================================================

Ce fichier teste :
1. μ₁ sur des cas de référence (Dirichlet sur (0, π), potentiels constants)
2. L'identité de décalage μ₁(m + c) = μ₁(m) + c
3. La robustesse au vecteur de départ
4. Le balayage μ₁(γb) : statuts DIVERGENT / saturé, monotonie
5. φ∞, la constante de comparaison et les erreurs associées
"""

import dataclasses
import logging
import math
import os
import sys

import numpy as np
import pytest

PROJECT_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, PROJECT_DIR)

from backend.engine.coeffs import (
    CoefficientSet,
    SpaceTimeField,
    Weight,
    classify_sets,
)
from backend.engine.eigen import (
    DIVERGENT,
    SATURATED,
    UNRESOLVED,
    comparison_constant,
    degeneracy_functional,
    limit_eigenfunction,
    mu_star_sweep,
    principal_pair,
)
from backend.engine.errors import (
    DivisionGuardError,
    InsufficientLadderError,
    InvalidRequestError,
    RejectedInputError,
)
from backend.engine.evolution import PeriodMap, TimeGrid, Trajectory, zero_order_lattice
from backend.engine.mesh import DiscreteForm, build_interval_mesh


# ============================================================================
# FIXTURES
# ============================================================================

@pytest.fixture
def neumann():
    mesh = build_interval_mesh(0.0, 1.0, 11, "neumann", "neumann")
    return DiscreteForm(mesh, CoefficientSet.laplacian(1.0, 1)), TimeGrid(1.0, 20)


@pytest.fixture
def small_dirichlet():
    mesh = build_interval_mesh(0.0, 1.0, 11, "dirichlet", "dirichlet")
    return DiscreteForm(mesh, CoefficientSet.laplacian(1.0, 1)), TimeGrid(1.0, 10)


@pytest.fixture
def half_weight_sweep(small_dirichlet):
    """Poids indicatrice de [1/2, 1] : μ*(b) fini."""
    form, grid = small_dirichlet
    weight = Weight.from_field(SpaceTimeField.from_expression("x >= 0.5", 1.0, "weight"),
                               form.mesh, grid)
    sweep = mu_star_sweep(form, grid, weight, 2.0 ** np.arange(11))
    return form, grid, weight, sweep


def _potential(x, t):
    return np.sin(2 * np.pi * t) + x[:, 0]


# ============================================================================
# TEST 1: CAS DE RÉFÉRENCE
# ============================================================================

class TestPrincipalPair:

    def test_dirichlet_interval_eigenvalue(self):
        mesh = build_interval_mesh(0.0, np.pi, 200, "dirichlet", "dirichlet")
        form = DiscreteForm(mesh, CoefficientSet.laplacian(1.0, 1))
        pair = principal_pair(form, TimeGrid(1.0, 200, theta=0.5))
        assert abs(pair.mu1 - 1.0) < 1e-2, f"μ₁ = {pair.mu1} au lieu de 1"
        exact = np.sin(mesh.nodes[:, 0])
        exact /= form.h_norm(exact)
        assert form.h_norm(pair.phi0 - exact) < 1e-2

    def test_lambda_and_mu_consistent(self, neumann):
        form, grid = neumann
        pair = principal_pair(form, grid, m=_potential)
        assert pair.lambda_ > 0
        assert pair.mu1 == pytest.approx(-math.log(pair.lambda_) / grid.T, rel=1e-14)

    def test_eigenfunction_normalized_and_positive(self, neumann):
        form, grid = neumann
        pair = principal_pair(form, grid, m=_potential)
        assert form.h_norm(pair.phi0) == pytest.approx(1.0, rel=1e-12)
        assert np.all(pair.phi.values > 0)
        assert pair.phi.periodic_gap() < 1e-8

    def test_constant_potential_exact(self, neumann):
        form, grid = neumann
        assert principal_pair(form, grid, m=3.0).mu1 == pytest.approx(3.0, abs=1e-10)

    @pytest.mark.parametrize("c", [-1.0, 0.5, 3.0])
    def test_constant_shift_identity(self, neumann, c):
        form, grid = neumann
        base = principal_pair(form, grid, m=_potential).mu1
        shifted = principal_pair(form, grid, m=lambda x, t: _potential(x, t) + c).mu1
        assert shifted - base == pytest.approx(c, abs=1e-9)

    def test_restart_independence(self, neumann):
        form, grid = neumann
        pairs = [principal_pair(form, grid, m=_potential, seed=s) for s in range(5)]
        for pair in pairs[1:]:
            assert pair.mu1 == pytest.approx(pairs[0].mu1, abs=1e-9)
            assert form.h_norm(pair.phi0 - pairs[0].phi0) < 1e-6

    def test_residual_unscaled(self, neumann):
        form, grid = neumann
        pair = principal_pair(form, grid, m=_potential)
        assert pair.rel_residual < 1e-10
        assert pair.residual == pytest.approx(pair.lambda_ * pair.rel_residual, rel=1e-10)
        # application de période décalée de c̄, celle que voit l'itération
        full = zero_order_lattice(form, grid, _potential)
        pmap = PeriodMap(form, grid, m=full - pair.shift, include_c0=False)
        lam_tilde = pair.lambda_ * math.exp(pair.shift * grid.T)
        direct = form.h_norm(pmap.apply(pair.phi0) - lam_tilde * pair.phi0)
        assert direct < 1e-8 * lam_tilde, "‖U(T,0)φ − λφ‖_H doit être petit devant λ"

    def test_monotone_in_potential(self, small_dirichlet):
        form, grid = small_dirichlet
        low = principal_pair(form, grid, m=0.0).mu1
        high = principal_pair(form, grid, m=lambda x, t: 2.0 * x[:, 0]).mu1
        assert high > low


# ============================================================================
# TEST 2: BALAYAGE EN γ
# ============================================================================

class TestGammaSweep:

    def test_constant_weight_diverges(self, small_dirichlet):
        form, grid = small_dirichlet
        sweep = mu_star_sweep(form, grid, Weight.constant(1.0, form.mesh, grid))
        assert sweep.status == DIVERGENT
        assert sweep.is_divergent
        assert math.isinf(sweep.mu_star_estimate)
        assert sweep.slope == pytest.approx(1.0, abs=0.05)

    def test_half_weight_saturates(self, half_weight_sweep):
        _, _, _, sweep = half_weight_sweep
        assert not sweep.is_divergent
        assert sweep.monotone, "μ₁(γb) doit croître avec γ"
        assert np.isfinite(sweep.mu_star_estimate)
        assert sweep.mu_values[-1] > sweep.mu_base

    def test_threads_give_same_values(self, small_dirichlet):
        form, grid = small_dirichlet
        weight = Weight.constant(1.0, form.mesh, grid)
        ladder = [1.0, 2.0, 4.0, 8.0]
        seq = mu_star_sweep(form, grid, weight, ladder)
        par = mu_star_sweep(form, grid, weight, ladder, threads=3)
        assert np.array_equal(seq.mu_values, par.mu_values)

    def test_short_ladder_rejected(self, small_dirichlet):
        form, grid = small_dirichlet
        with pytest.raises(InsufficientLadderError):
            mu_star_sweep(form, grid, Weight.constant(1.0, form.mesh, grid), [1.0, 2.0])

    def test_non_increasing_ladder_rejected(self, small_dirichlet):
        form, grid = small_dirichlet
        with pytest.raises(RejectedInputError):
            mu_star_sweep(form, grid, Weight.constant(1.0, form.mesh, grid), [1.0, 4.0, 2.0])

    def test_frame_columns(self, small_dirichlet):
        form, grid = small_dirichlet
        sweep = mu_star_sweep(form, grid, Weight.constant(1.0, form.mesh, grid), [1.0, 2.0, 4.0])
        assert list(sweep.to_frame().columns) == [
            "gamma", "mu1", "lambda", "iterations", "residual", "rel_residual"]


# ============================================================================
# TEST 3: φ∞ ET COMPARAISON
# ============================================================================

class TestLimitEigenfunction:

    def test_divergent_sweep_rejected(self, small_dirichlet):
        form, grid = small_dirichlet
        sweep = mu_star_sweep(form, grid, Weight.constant(1.0, form.mesh, grid), [1.0, 2.0, 4.0])
        with pytest.raises(InvalidRequestError):
            limit_eigenfunction(sweep)

    def test_limit_indicators(self, half_weight_sweep):
        _, _, weight, sweep = half_weight_sweep
        Q0, _ = classify_sets(weight)
        limit = limit_eigenfunction(sweep, Q0)
        assert limit.degeneracy[-1] < limit.degeneracy[0], "∫bφ² doit diminuer le long de l'échelle"
        assert limit.cauchy.size == sweep.gammas.size - 1
        assert len(limit.component_max) == 1
        assert list(limit.component_max.values())[0] > 0
        assert limit.sup_constant > 0

    def test_unresolved_sweep_flagged(self, half_weight_sweep, caplog):
        _, _, _, sweep = half_weight_sweep
        unresolved = dataclasses.replace(sweep, status=UNRESOLVED)
        with caplog.at_level(logging.WARNING, logger="backend.engine.eigen"):
            limit = limit_eigenfunction(unresolved)
        assert not limit.saturated
        assert any("UNRESOLVED" in r.getMessage() for r in caplog.records)

    def test_saturated_sweep_not_flagged(self, half_weight_sweep):
        _, _, _, sweep = half_weight_sweep
        assert limit_eigenfunction(dataclasses.replace(sweep, status=SATURATED)).saturated

    def test_degeneracy_functional_constant(self, neumann):
        form, grid = neumann
        phi = principal_pair(form, grid).phi
        weight = Weight.constant(2.0, form.mesh, grid)
        assert degeneracy_functional(phi, weight) == pytest.approx(2.0, rel=1e-8)

    def test_comparison_constant(self, neumann):
        form, grid = neumann
        phi = principal_pair(form, grid, m=_potential).phi
        assert comparison_constant(phi, phi) == pytest.approx(1.0)
        assert comparison_constant(phi.scaled(3.0), phi) == pytest.approx(3.0)

    def test_comparison_guard(self, small_dirichlet):
        form, grid = small_dirichlet
        phi = principal_pair(form, grid).phi
        values = phi.values.copy()
        values[2, 5] = 0.0
        with pytest.raises(DivisionGuardError) as info:
            comparison_constant(phi, Trajectory(values, phi.times, form))
        assert info.value.details["node"] == 5
