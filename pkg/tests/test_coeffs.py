"""
Tests des coefficients, du poids et des ensembles espace-temps
==============================================================

Ce fichier teste :
1. Les champs (constantes, expressions) et le contrôle de périodicité
2. Le poids b sur le réseau et sa troncature
3. La classification Q₀ / Q_b
4. Le chemin périodique dans Q₀ et les composantes connexes
"""

import os
import sys

import numpy as np
import pytest

PROJECT_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, PROJECT_DIR)

from backend.engine.coeffs import (
    CoefficientSet,
    SpaceTimeField,
    SpaceTimeSet,
    Weight,
    check_field_periodicity,
    classify_sets,
    moving_window_weight,
    periodic_path_exists,
    q0_components,
    truncate_weight,
)
from backend.engine.errors import PeriodicityError, RejectedInputError
from backend.engine.evolution import TimeGrid
from backend.engine.mesh import build_interval_mesh, build_rectangle_mesh
from backend.security import ExpressionError


# ============================================================================
# FIXTURES
# ============================================================================

@pytest.fixture
def line():
    return build_interval_mesh(-2.0, 2.0, 41, "dirichlet", "dirichlet")


@pytest.fixture
def grid():
    return TimeGrid(1.0, 40)


def _set(mask, label="Q0"):
    mask = np.asarray(mask, dtype=bool)
    return SpaceTimeSet(mask, label, (mask.shape[1],))


# ============================================================================
# TEST 1: CHAMPS
# ============================================================================

class TestFields:

    def test_constant_broadcast(self):
        f = SpaceTimeField.constant(2.5)
        assert f.is_constant and f.time_independent
        assert f(np.zeros((4, 1)), 0.3).tolist() == [2.5] * 4

    def test_expression_evaluation(self):
        f = SpaceTimeField.from_expression("x + sin(2*pi*t/T)", 2.0, "f")
        pts = np.array([[0.0], [1.0]])
        assert f(pts, 0.5) == pytest.approx([1.0, 2.0])
        assert not f.time_independent

    def test_constant_expression_folded(self):
        f = SpaceTimeField.from_expression("2*pi", 1.0)
        assert f.is_constant
        assert f.value == pytest.approx(2 * np.pi)

    def test_indicator_expression(self):
        f = SpaceTimeField.from_expression("x >= 0", 1.0)
        assert f(np.array([[-1.0], [0.0], [1.0]]), 0.0).tolist() == [0.0, 1.0, 1.0]

    def test_unsafe_expression_rejected(self):
        with pytest.raises(ExpressionError):
            SpaceTimeField.from_expression("__import__('os')", 1.0)

    def test_unknown_coefficient_key(self):
        with pytest.raises(RejectedInputError):
            CoefficientSet.from_expressions(1.0, 1, {"a33": "1"})

    def test_alpha_shortcut(self):
        coeffs = CoefficientSet.from_expressions(1.0, 2, {"alpha": "2"}, (2.0, 2.0))
        assert coeffs.diffusion[0][0].value == 2.0
        assert coeffs.diffusion[1][1].value == 2.0
        assert coeffs.is_laplacian_form


# ============================================================================
# TEST 2: PÉRIODICITÉ
# ============================================================================

class TestPeriodicity:

    def test_periodic_expression_accepted(self):
        pts = np.linspace(0, 1, 5)[:, None]
        coeffs = CoefficientSet.from_expressions(1.0, 1, {"c0": "cos(2*pi*t) + x"})
        coeffs.check_periodicity(pts)

    def test_non_periodic_weight_names_field(self):
        pts = np.linspace(0, 1, 5)[:, None]
        f = SpaceTimeField.from_expression("t < 0", 1.0, "weight")
        with pytest.raises(PeriodicityError) as info:
            check_field_periodicity(f, 1.0, pts, "weight")
        assert info.value.details["field"] == "weight"

    def test_wrong_period_rejected(self):
        pts = np.zeros((1, 1))
        coeffs = CoefficientSet.from_expressions(1.0, 1, {"c0": "sin(pi*t)"})
        with pytest.raises(PeriodicityError):
            coeffs.check_periodicity(pts)


# ============================================================================
# TEST 3: POIDS
# ============================================================================

class TestWeight:

    def test_negative_weight_rejected(self, line, grid):
        with pytest.raises(RejectedInputError):
            Weight.constant(-1.0, line, grid)

    def test_layer_K_repeats_layer_0(self, line, grid):
        w = Weight.from_field(moving_window_weight(), line, grid)
        assert w.values.shape == (41, 41)
        assert np.allclose(w.values[-1], w.values[0])

    def test_at_time_interpolates(self, line, grid):
        w = Weight.from_field(SpaceTimeField.from_expression("1 + sin(2*pi*t)", 1.0), line, grid)
        t = 0.5 * (grid.times[3] + grid.times[4])
        expected = 0.5 * (w.values[3] + w.values[4])
        assert np.allclose(w.at_time(t), expected)
        assert np.allclose(w.at_time(t + 1.0), expected)

    def test_support_min(self, line, grid):
        w = Weight.from_field(moving_window_weight(), line, grid)
        assert w.support_min == pytest.approx(1.0)
        assert not w.is_zero

    def test_truncation(self, line, grid):
        w = Weight.constant(1.0, line, grid)
        cut = truncate_weight(w, line, 0.5)
        near = line.dist_to_boundary() < 0.5 - 1e-12
        assert np.all(cut.values[:, near] == 0.0)
        assert np.all(cut.values[:, ~near] == 1.0)
        assert not cut.empty_support

    def test_truncation_empty(self, line, grid):
        cut = truncate_weight(Weight.constant(1.0, line, grid), line, 10.0)
        assert cut.empty_support
        assert cut.is_zero


# ============================================================================
# TEST 4: ENSEMBLES Q₀ / Q_b
# ============================================================================

class TestSets:

    def test_constant_weight_has_no_q0(self, line, grid):
        Q0, Qb = classify_sets(Weight.constant(1.0, line, grid))
        assert Q0.count == 0
        assert not Qb.mask[:, line.boundary_nodes].any(), "Q_b exclut le bord"
        assert Qb.mask[:, 20].all()

    def test_moving_window_tube(self, line, grid):
        Q0, Qb = classify_sets(Weight.from_field(moving_window_weight(), line, grid))
        assert Q0.count > 0 and Qb.count > 0
        assert not (Q0.mask & Qb.mask).any()
        # le centre du refuge suit x = 0.6 sin(2πt)
        for k in (0, 10, 20, 30):
            center = int(round((0.6 * np.sin(2 * np.pi * k / 40) + 2.0) / 0.1))
            assert Q0.mask[k, center], f"Centre du refuge absent de Q₀ à k={k}"

    def test_periodic_path_in_moving_window(self, line, grid):
        Q0, _ = classify_sets(Weight.from_field(moving_window_weight(), line, grid))
        exists, path = periodic_path_exists(Q0)
        assert exists
        assert path[0] == path[-1]
        assert all(Q0.mask[k % 40, node] for k, node in enumerate(path))
        assert np.all(np.abs(np.diff(path)) <= 1)

    def test_no_path_when_refuge_closes(self):
        mask = np.ones((4, 5), dtype=bool)
        mask[2] = False
        exists, path = periodic_path_exists(_set(mask))
        assert not exists and path is None

    def test_empty_q0(self):
        exists, path = periodic_path_exists(_set(np.zeros((3, 4))))
        assert not exists

    def test_components_merge_across_period(self):
        mask = np.zeros((6, 7), dtype=bool)
        mask[0:2, 1] = True
        mask[4:6, 1] = True
        mask[2:4, 5] = True
        labels, count = q0_components(_set(mask))
        assert count == 2, "Les morceaux raccordés à t = T forment une seule composante"
        assert labels[0, 1] == labels[5, 1]
        assert labels[2, 5] != labels[0, 1]

    def test_components_2d(self):
        mesh = build_rectangle_mesh(0.0, 1.0, 0.0, 1.0, 6, 6)
        mask = np.zeros((3, mesh.n), dtype=bool)
        mask[:, mesh.box_nodes(((1, 2), (1, 2)))] = True
        labels, count = q0_components(SpaceTimeSet(mask, "Q0", mesh.grid_shape))
        assert count == 1
        assert labels.shape == (3, mesh.n)
