"""
Problème logistique périodique u̇ + A(t)u = μu − b(t)g(t, u)u.

Chaîne de calcul :
1. sous-solution εφ₀ (φ₀ fonction propre principale pour b = 0)
2. sur-solution κψ (ψ fonction propre pour γb_δ, γ choisi sur le balayage)
3. itération monotone de l'application de période depuis εφ₀
4. marge de stabilité μ₁(b[g(u) + ∂g(u)u]) − μ et dérivée en μ

Le pas θ=1 est implicite dans la réaction et résolu par Newton projeté :

    w∘e^{τ(c₀ + b g(v) + ω)}∘v + τA v = e^{(μ+ω)τ} w∘u_k

L'application u_k ↦ v est monotone quel que soit τ et les équilibres
constants sont exacts. θ=1/2 ajoute un correcteur de Crank–Nicolson
ajusté, réaction évaluée au point milieu (u_k + u⁺)/2.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, gmres, splu

from ..security import compile_expression
from .coeffs import Weight, truncate_weight
from .eigen import DIVERGENT, EigenPair, GammaSweep, mu_star_sweep, principal_pair
from .errors import (
    CannotDifferentiateError,
    DomainError,
    MonotonicityFailureError,
    NoPositiveSolutionError,
    OutOfRangeError,
    PeriodicParabolicError,
    PositivityLossError,
    RejectedInputError,
    SolverError,
    SupersolutionFailureError,
)
from .evolution import EXP_CAP, PeriodMap, TimeGrid, Trajectory, solve_periodic_linear
from .mesh import DiscreteForm

logger = logging.getLogger(__name__)

# =============================================================================
# CONSTANTES
# =============================================================================

NEWTON_MAX_ITER = 50
NEWTON_TOL = 1e-12
MAX_HALVINGS = 10
SANDWICH_SLACK = 1e-10
RANGE_SLACK = 1e-12
BISECTION_STEPS = 60
KAPPA_DOUBLINGS = 200
DEFAULT_MAX_PERIODS = 500
GAUSS_POINTS = 8
DECAY_SLACK = 1e-6
DECAY_MIN_PERIODS = 16
DECAY_FRACTION = 0.05
XI_TEST_GRID = np.geomspace(1e-3, 1e3, 13)


class _StepFailure(Exception):
    """Pas non linéaire rejeté (Newton divergent ou positivité perdue)."""


# =============================================================================
# NON-LINÉARITÉ
# =============================================================================

@dataclass(frozen=True)
class Nonlinearity:
    """
    g(points, t, ξ) et ∂g/∂ξ vectorisées sur les nœuds.

    `growth` = (c, p) certifie g(x, t, ξ) ≥ c·ξ^{p−1}.
    """
    g: Callable[[np.ndarray, float, np.ndarray], np.ndarray]
    dg: Callable[[np.ndarray, float, np.ndarray], np.ndarray]
    growth: Optional[Tuple[float, float]] = None
    name: str = ""

    @classmethod
    def power(cls, q: float = 1.0) -> "Nonlinearity":
        """g(ξ) = ξ^q (q ≥ 1), certificat de croissance (1, q+1)."""
        q = float(q)
        if q < 1.0:
            raise RejectedInputError(f"Exposant q ≥ 1 requis (reçu {q})")

        def g(points, t, xi):
            return np.power(np.maximum(xi, 0.0), q)

        def dg(points, t, xi):
            if q == 1.0:
                return np.ones_like(np.asarray(xi, dtype=float))
            return q * np.power(np.maximum(xi, 0.0), q - 1.0)

        return cls(g, dg, (1.0, q + 1.0), f"xi**{q:g}")

    @classmethod
    def linear(cls) -> "Nonlinearity":
        return cls.power(1.0)

    @classmethod
    def from_expressions(cls, g_expr: str, dg_expr: str, T: float,
                         growth: Optional[Tuple[float, float]] = None) -> "Nonlinearity":
        """g et ∂g/∂ξ en expressions sur x, y, t, T, xi."""
        variables = {"x", "y", "t", "T", "xi"}
        cg = compile_expression(g_expr, variables)
        cdg = compile_expression(dg_expr, variables)
        period = float(T)

        def wrap(compiled):
            def evaluate(points, t, xi):
                xi = np.asarray(xi, dtype=float)
                x = points[:, 0]
                y = points[:, 1] if points.shape[1] > 1 else np.zeros_like(x)
                out = compiled(x=x, y=y, t=float(t), T=period, xi=xi)
                return np.broadcast_to(np.asarray(out, dtype=float), xi.shape).copy()
            return evaluate

        growth = None if growth is None else (float(growth[0]), float(growth[1]))
        return cls(wrap(cg), wrap(cdg), growth, cg.source)

    def validate(self, points: np.ndarray, times: Sequence[float]):
        """
        Vérifie g(·,·,0) = 0, ∂g/∂ξ > 0 et le certificat de croissance sur une grille de ξ.

        Raises:
            RejectedInputError: hypothèse violée (point fautif en détail)
        """
        n = points.shape[0]
        for t in times:
            g0 = self.g(points, float(t), np.zeros(n))
            if np.any(np.abs(g0) > 1e-14):
                raise RejectedInputError("g(x, t, 0) ≠ 0", {"t": float(t)})
            for xi in XI_TEST_GRID:
                vals = np.full(n, xi)
                d = self.dg(points, float(t), vals)
                if np.any(~(d > 0)):
                    raise RejectedInputError("∂g/∂ξ doit être > 0", {"t": float(t), "xi": float(xi)})
                if self.growth is not None:
                    c, p = self.growth
                    if np.any(self.g(points, float(t), vals) < c * xi ** (p - 1.0) * (1 - 1e-12)):
                        raise RejectedInputError(
                            f"Certificat de croissance (c={c}, p={p}) non vérifié",
                            {"t": float(t), "xi": float(xi)},
                        )


def secant_slope(nl: Nonlinearity, xi1: Any, xi2: Any,
                 points: Optional[np.ndarray] = None, t: float = 0.0) -> Any:
    """
    Pente sécante ∫₀¹ ∂g/∂ξ(x, t, sξ₁ + (1−s)ξ₂) ds par Gauss–Legendre à 8 points.

    Raises:
        DomainError: ξ négatif
    """
    scalar = np.ndim(xi1) == 0 and np.ndim(xi2) == 0
    a, b = np.broadcast_arrays(np.atleast_1d(np.asarray(xi1, dtype=float)),
                               np.atleast_1d(np.asarray(xi2, dtype=float)))
    if np.any(a < 0) or np.any(b < 0):
        raise DomainError("La pente sécante exige ξ₁, ξ₂ ≥ 0")
    if points is None:
        points = np.zeros((a.size, 1))
    nodes, weights = np.polynomial.legendre.leggauss(GAUSS_POINTS)
    s = 0.5 * (nodes + 1.0)
    out = np.zeros(a.shape)
    for sk, wk in zip(s, 0.5 * weights):
        out += wk * nl.dg(points, float(t), sk * a + (1.0 - sk) * b)
    return float(out[0]) if scalar else out


# =============================================================================
# TYPES DE RÉSULTAT
# =============================================================================

@dataclass(eq=False)
class OrderedPair:
    """Sous-solution εφ₀ et sur-solution κψ (absente pour un départ à chaud)."""
    sub: Optional[Trajectory]
    sup: Optional[Trajectory]
    eps: float = math.nan
    kappa: float = math.nan
    delta: float = math.nan
    gamma: float = math.nan


@dataclass(eq=False)
class PeriodicSolution:
    mu: float
    u: Trajectory
    periodic_residual: float
    pde_residual: float
    stability_margin: Optional[float]
    iterations: int
    rate: float
    direction: str
    converged: bool
    tol_fix: float
    meta: Dict[str, Any] = field(default_factory=dict)

    @property
    def sup_norm(self) -> float:
        return self.u.sup_norm()


# =============================================================================
# PROBLÈME LOGISTIQUE
# =============================================================================

class LogisticProblem:
    """Discrétisation du problème logistique sur (maillage, grille, poids, g)."""

    def __init__(self, form: DiscreteForm, grid: TimeGrid, weight: Weight,
                 nonlinearity: Nonlinearity, validate: bool = True):
        if weight.K != grid.K:
            raise RejectedInputError("Poids échantillonné sur une autre grille temporelle")
        self.form = form
        self.grid = grid
        self.weight = weight
        self.nl = nonlinearity
        self.mesh = form.mesh
        self._free = self.mesh.free_nodes
        self._points = self.mesh.nodes[self._free]
        self._w = form.mass_free
        self.omega = float(form.step_shift)
        if validate:
            nonlinearity.validate(self.mesh.nodes, grid.times[::max(1, grid.K // 8)])

    # ──────────────────────────────────────────────────────────────────────
    # Accès aux coefficients (degrés libres)
    # ──────────────────────────────────────────────────────────────────────

    def _b(self, t: float) -> np.ndarray:
        return self.weight.at_time(t)[self._free]

    def _c0(self, t: float) -> np.ndarray:
        return self.form.c0_at(t)[self._free]

    def _A(self, t: float) -> sp.csr_matrix:
        return self.form.form_at(t, include_c0=False)

    def _to_free(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        return self.mesh.restrict(u) if u.shape[-1] == self.mesh.n else u.copy()

    # ──────────────────────────────────────────────────────────────────────
    # Pas élémentaires
    # ──────────────────────────────────────────────────────────────────────

    def _implicit_step(self, u: np.ndarray, t: float, tau: float, mu: float) -> np.ndarray:
        """Newton projeté sur le pas θ=1 ; lève _StepFailure en cas d'échec."""
        t1 = t + tau
        c0, b, A = self._c0(t1), self._b(t1), self._A(t1)
        w, pts, omega = self._w, self._points, self.omega
        rhs = math.exp((mu + omega) * tau) * w * u

        lagged = np.clip(tau * (c0 + b * self.nl.g(pts, t1, u) + omega), -EXP_CAP, EXP_CAP)
        v = splu((sp.diags(w * np.exp(lagged)) + tau * A).tocsc()).solve(rhs)
        v = np.maximum(v, 0.0)

        prev = None
        for _ in range(NEWTON_MAX_ITER):
            raw = tau * (c0 + b * self.nl.g(pts, t1, v) + omega)
            capped = np.abs(raw) > EXP_CAP
            e = np.exp(np.clip(raw, -EXP_CAP, EXP_CAP))
            residual = w * e * v + tau * (A @ v) - rhs
            slope = np.where(capped, 0.0, tau * b * self.nl.dg(pts, t1, v) * v)
            J = sp.diags(w * e * (1.0 + slope)) + tau * A
            delta = splu(J.tocsc()).solve(residual)
            if not np.all(np.isfinite(delta)):
                raise _StepFailure()
            v = np.maximum(v - delta, 0.0)
            nd = float(np.max(np.abs(delta), initial=0.0))
            scale = 1.0 + float(np.max(v, initial=0.0))
            if nd <= NEWTON_TOL * scale:
                return v
            if prev is not None and nd <= 1e-10 * scale and nd >= 0.5 * prev:
                return v
            prev = nd
        raise _StepFailure()

    def _crank_nicolson_step(self, u: np.ndarray, t: float, tau: float, mu: float) -> np.ndarray:
        """Correcteur θ=1/2 ajusté, réaction au point milieu ; prédicteur θ=1."""
        v = self._implicit_step(u, t, tau, mu)
        tm = t + 0.5 * tau
        c0m, bm = self._c0(tm), self._b(tm)
        A0, A1 = self._A(t), self._A(t + tau)
        w, pts, omega = self._w, self._points, self.omega
        grow = math.exp(omega * tau)
        explicit = grow * (0.5 * tau) * (A0 @ u)

        prev = None
        for _ in range(NEWTON_MAX_ITER):
            mid = 0.5 * (u + v)
            x = np.clip(tau * (c0m + bm * self.nl.g(pts, tm, mid) - mu + omega),
                        -EXP_CAP, EXP_CAP)
            th = np.tanh(0.5 * x)
            R = 2.0 * th
            residual = (w * (1.0 + 0.5 * R) * v + 0.5 * tau * (A1 @ v)
                        - grow * w * (1.0 - 0.5 * R) * u + explicit)
            dR = (1.0 - th * th) * tau * bm * self.nl.dg(pts, tm, mid) * 0.5
            diag = w * (1.0 + 0.5 * R) + w * 0.5 * dR * (v + grow * u)
            J = sp.diags(diag) + 0.5 * tau * A1
            delta = splu(J.tocsc()).solve(residual)
            if not np.all(np.isfinite(delta)):
                raise _StepFailure()
            v = v - delta
            nd = float(np.max(np.abs(delta), initial=0.0))
            scale = 1.0 + float(np.max(np.abs(v), initial=0.0))
            if nd <= NEWTON_TOL * scale or (prev is not None and nd <= 1e-10 * scale
                                            and nd >= 0.5 * prev):
                if float(np.min(v, initial=0.0)) < -1e-12 * scale:
                    raise _StepFailure()
                return np.maximum(v, 0.0)
            prev = nd
        raise _StepFailure()

    def _step(self, u: np.ndarray, t: float, tau: float, mu: float,
              stats: Dict[str, int], depth: int = 0) -> np.ndarray:
        single = self._implicit_step if self.grid.theta == 1.0 else self._crank_nicolson_step
        try:
            return single(u, t, tau, mu)
        except _StepFailure:
            if depth >= MAX_HALVINGS:
                raise PositivityLossError(
                    f"Pas rejeté après {MAX_HALVINGS} divisions de dt (t = {t:.6g})",
                    {"t": t, "tau": tau},
                )
            stats["substeps"] = stats.get("substeps", 0) + 1
            half = 0.5 * tau
            mid = self._step(u, t, half, mu, stats, depth + 1)
            return self._step(mid, t + half, half, mu, stats, depth + 1)

    def advance(self, u: np.ndarray, k: int, mu: float,
                stats: Optional[Dict[str, int]] = None) -> np.ndarray:
        """Pas k → k+1 (degrés libres)."""
        dt = self.grid.dt
        return self._step(np.asarray(u, dtype=float), k * dt, dt, mu,
                          stats if stats is not None else {})

    def step_residual(self, u: np.ndarray, v: np.ndarray, k: int, mu: float) -> np.ndarray:
        """Résidu du pas θ=1 en (u_k, v) ; nul pour une trajectoire exacte du schéma."""
        tau = self.grid.dt
        t1 = (k + 1) * tau
        raw = tau * (self._c0(t1) + self._b(t1) * self.nl.g(self._points, t1, v) + self.omega)
        e = np.exp(np.clip(raw, -EXP_CAP, EXP_CAP))
        rhs = math.exp((mu + self.omega) * tau) * self._w * u
        return (self._w * e * v + tau * (self._A(t1) @ v) - rhs) / self._w

    # ──────────────────────────────────────────────────────────────────────
    # Trajectoires
    # ──────────────────────────────────────────────────────────────────────

    def _run(self, u0: np.ndarray, mu: float, steps: int,
             stats: Dict[str, int]) -> np.ndarray:
        u = self._to_free(u0)
        out = np.empty((steps + 1, u.size))
        out[0] = u
        for k in range(steps):
            u = self.advance(u, k, mu, stats)
            out[k + 1] = u
        return out

    def period(self, u0: np.ndarray, mu: float) -> Trajectory:
        """Une période de l'application de Poincaré depuis u0."""
        stats: Dict[str, int] = {}
        values = self._run(u0, mu, self.grid.K, stats)
        traj = Trajectory(self.mesh.extend(values), self.grid.times, self.form)
        traj.meta["substeps"] = stats.get("substeps", 0)
        return traj

    def solve_ivp(self, mu: float, u0: np.ndarray, horizon: int = 1) -> Trajectory:
        """
        Problème de Cauchy sur `horizon` périodes.

        La barrière u(t) ≤ e^{μt}U(t,0)u₀ (U avec c₀ seul) est contrôlée à chaque
        pas ; le nombre de violations est rangé dans meta["barrier_violations"].
        """
        u0 = np.asarray(u0, dtype=float)
        if np.any(u0 < 0) or not np.all(np.isfinite(u0)):
            raise RejectedInputError("u₀ doit être fini et ≥ 0")
        steps = int(horizon) * self.grid.K
        stats: Dict[str, int] = {}
        values = self._run(u0, mu, steps, stats)

        pmap = PeriodMap(self.form, self.grid)
        growth = math.exp(mu * self.grid.dt)
        z = self._to_free(u0)
        violations = 0
        worst = 0.0
        for k in range(steps):
            z = growth * pmap.advance(z, k, with_source=False)
            excess = float(np.max(values[k + 1] - z, initial=0.0))
            if excess > SANDWICH_SLACK * (1.0 + float(np.max(z, initial=0.0))):
                violations += 1
                worst = max(worst, excess)
        if violations:
            logger.warning("Barrière e^{μt}U(t,0)u₀ dépassée à %d pas (excès max %.3g)",
                           violations, worst)

        times = np.arange(steps + 1) * self.grid.dt
        traj = Trajectory(self.mesh.extend(values), times, self.form)
        traj.meta.update({"barrier_violations": violations, "barrier_max_excess": worst,
                          "substeps": stats.get("substeps", 0)})
        return traj

    def zero_order(self, u: Trajectory, linearized: bool = False) -> np.ndarray:
        """Réseau b·g(u) (ou b·[g(u) + ∂g(u)u]) sur tous les nœuds."""
        nodes = self.mesh.nodes
        out = np.empty_like(u.values)
        for k, t in enumerate(u.times):
            uk = u.values[k]
            val = self.nl.g(nodes, float(t), uk)
            if linearized:
                val = val + self.nl.dg(nodes, float(t), uk) * uk
            out[k] = self.weight.values[k] * val
        return out


# =============================================================================
# SOUS- ET SUR-SOLUTIONS
# =============================================================================

def _closed(phi: Trajectory) -> Trajectory:
    values = phi.values.copy()
    values[-1] = values[0]
    return Trajectory(values, phi.times, phi.form)


def _discrete_check(problem: LogisticProblem, traj: Trajectory, mu: float,
                    kind: str) -> Tuple[bool, float]:
    """Vérifie S(y_k) ≥ y_{k+1} (sous) ou S(y_k) ≤ y_{k+1} (sur) à chaque pas."""
    scale = 1.0 + traj.sup_norm()
    worst = 0.0
    for k in range(problem.grid.K):
        nxt = problem.advance(problem._to_free(traj.values[k]), k, mu)
        target = problem._to_free(traj.values[k + 1])
        gap = target - nxt if kind == "sub" else nxt - target
        worst = max(worst, float(np.max(gap, initial=0.0)))
        if worst > SANDWICH_SLACK * scale:
            return False, worst
    return True, worst


def build_subsolution(problem: LogisticProblem, mu: float,
                      pair0: Optional[EigenPair] = None) -> Tuple[float, Trajectory]:
    """
    Sous-solution εφ₀ : max_réseau [μ₁(0) − μ + b·g(εφ₀)] < 0 avec marge.

    Raises:
        OutOfRangeError: μ ≤ μ₁(0)
    """
    if pair0 is None:
        pair0 = principal_pair(problem.form, problem.grid)
    mu1 = pair0.mu1
    if mu <= mu1 + RANGE_SLACK * (1.0 + abs(mu1)):
        raise OutOfRangeError(
            f"μ = {mu:.6g} ≤ μ₁(0) = {mu1:.6g} : pas de solution positive",
            {"mu": mu, "mu1": mu1},
        )
    phi = _closed(pair0.phi)
    b = problem.weight.values
    nodes, times = problem.mesh.nodes, phi.times
    budget = 0.5 * (mu - mu1)

    def excess(eps: float) -> float:
        return max(float(np.max(b[k] * problem.nl.g(nodes, float(t), eps * phi.values[k])))
                   for k, t in enumerate(times))

    eps = 1.0
    if excess(eps) > budget:
        lo, hi = 0.0, 1.0
        for _ in range(BISECTION_STEPS):
            mid = 0.5 * (lo + hi)
            if excess(mid) <= budget:
                lo = mid
            else:
                hi = mid
        eps = lo

    for _ in range(BISECTION_STEPS):
        sub = phi.scaled(eps)
        ok, worst = _discrete_check(problem, sub, mu, "sub")
        if ok:
            logger.info("Sous-solution : ε = %.6g", eps)
            return eps, sub
        eps *= 0.5
    raise SolverError("Aucune sous-solution discrète trouvée", {"eps": eps})


def build_supersolution(problem: LogisticProblem, mu: float,
                        sweep: Optional[GammaSweep] = None,
                        lower: Optional[Trajectory] = None) -> Tuple[float, float, float, Trajectory]:
    """
    Sur-solution κψ avec ψ fonction propre pour γb_δ.

    γ : plus petit échelon tel que μ₁(γb) > μ + 0.1(μ* − μ) (μ + 1 si μ* = ∞) ;
    δ : divisé par 2 depuis 4h jusqu'à μ₁(γb_δ) > μ ;
    κ : doublé depuis 1 jusqu'à b·g(κψ) ≥ γb_δ et κψ ≥ lower.

    Raises:
        OutOfRangeError: μ ≥ μ*(b)
        SupersolutionFailureError: plafond de κ atteint
    """
    form, grid, weight, mesh = problem.form, problem.grid, problem.weight, problem.mesh
    if sweep is None:
        sweep = mu_star_sweep(form, grid, weight)
    mu_star = sweep.mu_star_estimate
    if sweep.status == DIVERGENT:
        target = mu + 1.0
    else:
        if mu >= mu_star:
            raise OutOfRangeError(
                f"μ = {mu:.6g} ≥ μ*(b) ≈ {mu_star:.6g} : pas de solution périodique",
                {"mu": mu, "mu_star": mu_star},
            )
        target = mu + 0.1 * (mu_star - mu)

    gamma = None
    for g_k, mu_k in zip(sweep.gammas, sweep.mu_values):
        if mu_k > target:
            gamma = float(g_k)
            break
    if gamma is None:
        gamma = float(sweep.gammas[-1])
        for _ in range(60):
            gamma *= 2.0
            if principal_pair(form, grid, m=gamma * weight.values).mu1 > target:
                break
        else:
            raise SupersolutionFailureError("Aucun γ ne dépasse la cible", {"target": target})

    if mesh.has_dirichlet:
        delta = 4.0 * mesh.h
        for _ in range(60):
            truncated = truncate_weight(weight, mesh, delta)
            pair = principal_pair(form, grid, m=gamma * truncated.values)
            if pair.mu1 > mu:
                break
            delta *= 0.5
        else:
            raise SupersolutionFailureError("Aucun δ ne convient", {"gamma": gamma})
    else:
        delta = 0.0
        truncated = weight
        pair = principal_pair(form, grid, m=gamma * weight.values)

    psi = _closed(pair.phi)
    need = gamma * truncated.values
    support = truncated.values > truncated.threshold_eps
    nodes = mesh.nodes

    def admissible(kappa: float) -> bool:
        for k, t in enumerate(psi.times):
            s = support[k]
            if s.any():
                lhs = weight.values[k, s] * problem.nl.g(nodes[s], float(t), kappa * psi.values[k, s])
                if np.any(lhs < need[k, s]):
                    return False
        if lower is not None and np.any(kappa * psi.values < lower.values):
            return False
        return True

    kappa = 1.0
    for _ in range(KAPPA_DOUBLINGS):
        if admissible(kappa):
            break
        kappa *= 2.0
    else:
        raise SupersolutionFailureError(
            "Plafond de croissance de κ atteint", {"kappa": kappa, "gamma": gamma, "delta": delta}
        )

    for _ in range(60):
        sup = psi.scaled(kappa)
        ok, worst = _discrete_check(problem, sup, mu, "sup")
        if ok:
            logger.info("Sur-solution : κ = %.6g, δ = %.4g, γ = %.6g", kappa, delta, gamma)
            return kappa, delta, gamma, sup
        kappa *= 2.0
    raise SupersolutionFailureError("Contrôle discret de sur-solution en échec",
                                    {"kappa": kappa, "worst": worst})


# =============================================================================
# ITÉRATION MONOTONE
# =============================================================================

def _violation(a: np.ndarray, b: np.ndarray) -> Tuple[float, Tuple[int, int]]:
    gap = a - b
    idx = np.unravel_index(int(np.argmax(gap)), gap.shape)
    return float(gap[idx]), (int(idx[0]), int(idx[1]))


def _pde_residual(problem: LogisticProblem, u: Trajectory, mu: float) -> float:
    """Résidu du schéma θ=1 avec fermeture u_K ← u_0 ; écart de fermeture en θ=1/2."""
    free = problem.mesh.free_nodes
    K = problem.grid.K
    if problem.grid.theta != 1.0:
        return float(np.max(np.abs(u.values[K] - u.values[0])))
    worst = 0.0
    for k in range(K):
        nxt = u.values[(k + 1) % K][free]
        res = problem.step_residual(u.values[k][free], nxt, k, mu)
        worst = max(worst, float(np.max(np.abs(res), initial=0.0)))
    return worst


def monotone_iterate(problem: LogisticProblem, mu: float, pair: OrderedPair,
                     direction: str = "up", max_periods: int = DEFAULT_MAX_PERIODS,
                     tol_fix: Optional[float] = None) -> PeriodicSolution:
    """
    Itère l'application de période depuis sub(0) (« up ») ou sup(0) (« down »).

    Chaque itéré vérifie sub ≤ w_n ≤ w_{n+1} ≤ sup à toutes les tranches
    (sens inversé pour « down »), avec une marge 1e−10·(1 + ‖w_n‖∞).
    tol_fix vaut par défaut 1e−8·(1 + ‖w_n‖∞), recalculé à chaque période.

    Raises:
        MonotonicityFailureError: encadrement ou monotonie violés
        SolverError: pas de convergence en max_periods périodes
    """
    if direction not in ("up", "down"):
        raise RejectedInputError(f"Direction inconnue '{direction}'")
    start = pair.sub if direction == "up" else pair.sup
    if start is None:
        raise RejectedInputError(f"Itération '{direction}' sans point de départ")
    fixed_tol = tol_fix
    sign = 1.0 if direction == "up" else -1.0

    w = start.values[0].copy()
    prev_traj: Optional[Trajectory] = None
    prev_diff = None
    rate = math.nan
    for n in range(1, max_periods + 1):
        traj = problem.period(w, mu)
        vals = traj.values
        level = float(np.max(np.abs(vals)))
        slack = SANDWICH_SLACK * (1.0 + level)
        tol_fix = fixed_tol if fixed_tol is not None else 1e-8 * (1.0 + level)
        if pair.sub is not None:
            amount, (k, i) = _violation(pair.sub.values, vals)
            if amount > slack:
                raise MonotonicityFailureError(
                    "Itéré sous la sous-solution", {"iteration": n, "time_index": k,
                                                    "node": i, "violation": amount})
        if pair.sup is not None:
            amount, (k, i) = _violation(vals, pair.sup.values)
            if amount > slack:
                raise MonotonicityFailureError(
                    "Itéré au-dessus de la sur-solution", {"iteration": n, "time_index": k,
                                                           "node": i, "violation": amount})
        if prev_traj is not None:
            amount, (k, i) = _violation(sign * prev_traj.values, sign * vals)
            if amount > slack:
                raise MonotonicityFailureError(
                    "Suite d'itérés non monotone", {"iteration": n, "time_index": k,
                                                    "node": i, "violation": amount})

        new = vals[-1]
        diff = float(np.max(np.abs(new - w)))
        if prev_diff is not None and prev_diff > 0:
            rate = diff / prev_diff
        factor = rate / (1.0 - rate) if 0.0 <= rate < 1.0 else (1.0 if math.isnan(rate) else math.inf)
        prev_traj, prev_diff, w = traj, diff, new.copy()
        if diff == 0.0 or diff * max(1.0, factor) < tol_fix:
            u = problem.period(w, mu)
            pde = _pde_residual(problem, u, mu)
            logger.info("Itération monotone (%s) : %d périodes, ‖u‖∞ = %.6g, taux %.3g",
                        direction, n, u.sup_norm(), rate)
            sol = PeriodicSolution(
                mu=float(mu), u=u, periodic_residual=u.periodic_gap(), pde_residual=pde,
                stability_margin=None, iterations=n, rate=rate, direction=direction,
                converged=True, tol_fix=float(tol_fix),
            )
            sol.meta["substeps"] = u.meta.get("substeps", 0)
            return sol

    raise SolverError(
        f"Itération monotone non convergée en {max_periods} périodes",
        {"mu": mu, "last_diff": prev_diff, "rate": rate},
    )


def stability_margin(problem: LogisticProblem, sol: PeriodicSolution) -> float:
    """μ₁(c₀ + b[g(u) + ∂g(u)u]) − μ."""
    pair = principal_pair(problem.form, problem.grid, m=problem.zero_order(sol.u, linearized=True))
    return pair.mu1 - sol.mu


def eigenvalue_identity_gap(problem: LogisticProblem, sol: PeriodicSolution) -> float:
    """μ₁(c₀ + b·g(u)) − μ, nul pour la solution discrète exacte."""
    pair = principal_pair(problem.form, problem.grid, m=problem.zero_order(sol.u))
    return pair.mu1 - sol.mu


def confirm_decay(problem: LogisticProblem, mu: float, start: np.ndarray,
                  max_periods: int = DEFAULT_MAX_PERIODS,
                  tol_fix: Optional[float] = None) -> Dict[str, Any]:
    """
    Itère l'application de période depuis `start` et vérifie que les itérés tendent vers 0.

    Le sup ne doit jamais croître. La décroissance est acquise dès que
    ‖w_n‖∞ < 10·tol_fix, ou quand l'extrapolation d'Aitken sur les itérés
    n/4, n/2, n place la limite sous max(10·tol_fix, 5 % de ‖w_n‖∞) ;
    l'échelle dyadique rend l'extrapolation exacte pour une décroissance
    en puissance de n (cas μ = μ₁(0)).

    Raises:
        SolverError: itérés croissants, ou stagnation au-dessus du seuil
        RejectedInputError: départ identiquement nul
    """
    w = np.asarray(start, dtype=float)
    sups = [float(np.max(w))]
    if not sups[0] > 0:
        raise RejectedInputError("Départ nul pour le contrôle de décroissance")
    if tol_fix is None:
        tol_fix = 1e-8 * (1.0 + sups[0])
    floor = 10.0 * tol_fix
    for n in range(1, max_periods + 1):
        w = problem.period(w, mu).values[-1]
        sup = float(np.max(np.abs(w)))
        if sup > sups[-1] * (1.0 + DECAY_SLACK) + SANDWICH_SLACK:
            raise SolverError("Itérés non décroissants pour μ ≤ μ₁(0)",
                              {"period": n, "sup": sup, "previous": sups[-1]})
        sups.append(sup)
        if sup < floor:
            return {"periods": n, "sup": sup, "limit": sup, "mode": "direct"}
        if n >= DECAY_MIN_PERIODS and n % 4 == 0:
            a, b, c = sups[n // 4], sups[n // 2], sup
            curvature = a + c - 2.0 * b
            if curvature > SANDWICH_SLACK * a:
                limit = (a * c - b * b) / curvature
                if max(limit, 0.0) < max(floor, DECAY_FRACTION * sup):
                    return {"periods": n, "sup": sup, "limit": limit, "mode": "extrapolated"}
    raise SolverError(
        f"Itérés sans décroissance vers 0 après {max_periods} périodes",
        {"sup": sups[-1], "start": sups[0]},
    )


def solve_periodic(problem: LogisticProblem, mu: float, pair0: Optional[EigenPair] = None,
                   sweep: Optional[GammaSweep] = None, both_directions: bool = False,
                   max_periods: int = DEFAULT_MAX_PERIODS,
                   tol_fix: Optional[float] = None) -> PeriodicSolution:
    """
    Contrôle de l'intervalle, sous-solution, sur-solution, itération montante.

    Raises:
        NoPositiveSolutionError: μ ≤ μ₁(0) (les itérés tendent vers 0)
        SolverError: μ ≤ μ₁(0) mais décroissance vers 0 non constatée
        OutOfRangeError: μ ≥ μ*(b)
    """
    if pair0 is None:
        pair0 = principal_pair(problem.form, problem.grid)
    mu1 = pair0.mu1
    if mu <= mu1 + RANGE_SLACK * (1.0 + abs(mu1)):
        phi0 = np.maximum(pair0.phi.values[0], 0.0)
        decay = confirm_decay(problem, mu, phi0 / float(np.max(phi0)), max_periods, tol_fix)
        raise NoPositiveSolutionError(
            f"μ = {mu:.6g} ≤ μ₁(0) = {mu1:.6g} : les itérés tendent vers 0",
            {"mu": mu, "mu1": mu1, **decay},
        )

    eps, sub = build_subsolution(problem, mu, pair0)
    if sweep is None:
        sweep = mu_star_sweep(problem.form, problem.grid, problem.weight)
    kappa, delta, gamma, sup = build_supersolution(problem, mu, sweep, lower=sub)
    pair = OrderedPair(sub, sup, eps, kappa, delta, gamma)
    sol = monotone_iterate(problem, mu, pair, "up", max_periods, tol_fix)
    sol.stability_margin = stability_margin(problem, sol)
    sol.meta.update({"eps": eps, "kappa": kappa, "delta": delta, "gamma": gamma})
    if both_directions:
        down = monotone_iterate(problem, mu, pair, "down", max_periods, sol.tol_fix)
        gap = float(np.max(np.abs(down.u.values - sol.u.values)))
        sol.meta["uniqueness_gap"] = gap
        sol.meta["down"] = down
        if gap > 10.0 * sol.tol_fix:
            logger.warning("Itérations montante et descendante distantes de %.3g", gap)
    if sol.stability_margin <= 0:
        logger.warning("Marge de stabilité non positive (%.3g)", sol.stability_margin)
    return sol


# =============================================================================
# DÉRIVÉE EN μ
# =============================================================================

def _tangent_factors(problem: LogisticProblem, sol: PeriodicSolution):
    grid, free = problem.grid, problem.mesh.free_nodes
    tau = grid.dt
    w, pts, omega = problem._w, problem._points, problem.omega
    scale = math.exp((sol.mu + omega) * tau)
    u = sol.u.values[:, free]
    factors = []
    for k in range(grid.K):
        t1 = (k + 1) * tau
        v = u[k + 1]
        b = problem._b(t1)
        raw = tau * (problem._c0(t1) + b * problem.nl.g(pts, t1, v) + omega)
        capped = np.abs(raw) > EXP_CAP
        e = np.exp(np.clip(raw, -EXP_CAP, EXP_CAP))
        slope = np.where(capped, 0.0, tau * b * problem.nl.dg(pts, t1, v) * v)
        J = sp.diags(w * e * (1.0 + slope)) + tau * problem._A(t1)
        factors.append(splu(J.tocsc()))
    return factors, scale * w, u


def mu_derivative(problem: LogisticProblem, sol: PeriodicSolution) -> Trajectory:
    """
    v_μ = ∂u_μ/∂μ, solution périodique de l'équation linéarisée de source u_μ.

    θ=1 sans sous-pas : tangente exacte du schéma, v⁺ = J⁻¹ e^{(μ+ω)τ}w(v + τu).
    Sinon : solve_periodic_linear avec ordre zéro b[g(u)+∂g(u)u] − μ.

    Raises:
        CannotDifferentiateError: marge de stabilité ≤ 0
    """
    margin = sol.stability_margin
    if margin is None:
        margin = stability_margin(problem, sol)
    if margin <= 0:
        raise CannotDifferentiateError(
            f"Marge de stabilité {margin:.3g} ≤ 0 : dérivée en μ indéfinie", {"margin": margin}
        )
    grid, mesh = problem.grid, problem.mesh
    if grid.theta != 1.0 or sol.meta.get("substeps", 0):
        m = problem.zero_order(sol.u, linearized=True) - sol.mu
        return solve_periodic_linear(problem.form, grid, m=m, f=sol.u.values)

    factors, coef, u = _tangent_factors(problem, sol)
    tau = grid.dt
    nf = u.shape[1]

    def chain(v0: np.ndarray, with_source: bool) -> np.ndarray:
        out = np.empty((grid.K + 1, nf))
        out[0] = v = v0
        for k in range(grid.K):
            src = v + tau * u[k] if with_source else v
            v = factors[k].solve(coef * src)
            out[k + 1] = v
        return out

    c = chain(np.zeros(nf), True)[-1]
    op = LinearOperator((nf, nf), matvec=lambda x: x - chain(x, False)[-1], dtype=float)
    v0, info = gmres(op, c, rtol=1e-13, atol=0.0, restart=min(nf, 60), maxiter=max(20, 4 * nf))
    if info != 0:
        res = float(np.linalg.norm(c - op.matvec(v0)))
        if res > 1e-8 * max(float(np.linalg.norm(c)), 1e-300):
            raise SolverError("GMRES non convergé pour la dérivée en μ", {"residual": res})
    values = chain(v0, True)
    traj = Trajectory(mesh.extend(values), sol.u.times, problem.form)
    traj.meta["periodic_gap"] = traj.periodic_gap()
    return traj


# =============================================================================
# BALAYAGE DE BIFURCATION
# =============================================================================

@dataclass(eq=False)
class BifurcationCurve:
    mu_values: np.ndarray
    solutions: List[Optional[PeriodicSolution]]
    statuses: List[str]
    mu1: float
    mu_star: float
    monotone_in_mu: bool = True

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for mu, sol, status in zip(self.mu_values, self.solutions, self.statuses):
            rows.append({
                "mu": float(mu),
                "sup_norm": sol.sup_norm if sol else math.nan,
                "stability_margin": sol.stability_margin if sol else math.nan,
                "iterations": sol.iterations if sol else 0,
                "residual": sol.periodic_residual if sol else math.nan,
                "status": status,
            })
        return pd.DataFrame(rows)


def auto_mu_ladder(mu1: float, mu_star: float, n_rungs: int = 8, span: float = 4.0) -> np.ndarray:
    """μ₁ + 0.01Δ puis μ* − Δ/2^j ; pas linéaires de `span` si μ* = ∞."""
    if math.isinf(mu_star):
        return np.concatenate([[mu1 + 0.01], mu1 + span * np.arange(1, n_rungs) / (n_rungs - 1)])
    gap = mu_star - mu1
    return np.concatenate([[mu1 + 0.01 * gap], mu_star - gap / 2.0 ** np.arange(1, n_rungs)])


def bifurcation_sweep(problem: LogisticProblem, mu_ladder: Optional[Sequence[float]] = None,
                      sweep: Optional[GammaSweep] = None, pair0: Optional[EigenPair] = None,
                      n_rungs: int = 8, threads: int = 1,
                      max_periods: int = DEFAULT_MAX_PERIODS,
                      tol_fix: Optional[float] = None) -> BifurcationCurve:
    """
    Courbe μ ↦ (‖u_μ‖∞, marge) sur l'échelle ]μ₁(0), μ*(b)[.

    Séquentiel : chaque échelon repart de la solution précédente (sous-solution
    pour μ plus grand), encadrée par une sur-solution κψ construite à cet échelon.
    Avec threads > 1 : départs à froid en parallèle.
    Un échelon en échec est consigné et le balayage continue.
    """
    if pair0 is None:
        pair0 = principal_pair(problem.form, problem.grid)
    if sweep is None:
        sweep = mu_star_sweep(problem.form, problem.grid, problem.weight)
    mu_star = sweep.mu_star_estimate
    ladder = np.asarray(auto_mu_ladder(pair0.mu1, mu_star, n_rungs) if mu_ladder is None
                        else mu_ladder, dtype=float)

    def cold(mu: float) -> Tuple[Optional[PeriodicSolution], str]:
        try:
            return solve_periodic(problem, float(mu), pair0, sweep,
                                  max_periods=max_periods, tol_fix=tol_fix), "ok"
        except PeriodicParabolicError as exc:
            logger.warning("Échelon μ = %.6g en échec : %s", mu, exc.message)
            return None, f"failed: {type(exc).__name__}"

    results: List[Tuple[Optional[PeriodicSolution], str]] = []
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            results = list(executor.map(cold, ladder))
    else:
        previous: Optional[PeriodicSolution] = None
        for j, mu in enumerate(ladder):
            if previous is None:
                results.append(cold(mu))
            else:
                near_end = j >= len(ladder) - 3
                budget = max_periods * (8 if near_end else 1)
                try:
                    kappa, delta, gamma, sup = build_supersolution(problem, float(mu), sweep,
                                                                   lower=previous.u)
                    warm = OrderedPair(previous.u, sup, kappa=kappa, delta=delta, gamma=gamma)
                    sol = monotone_iterate(problem, float(mu), warm, "up", budget, tol_fix)
                    sol.stability_margin = stability_margin(problem, sol)
                    sol.meta.update({"kappa": kappa, "delta": delta, "gamma": gamma,
                                     "warm_start": True})
                    results.append((sol, "ok"))
                except PeriodicParabolicError as exc:
                    logger.warning("Échelon μ = %.6g en échec : %s", mu, exc.message)
                    results.append((None, f"failed: {type(exc).__name__}"))
            if results[-1][0] is not None:
                previous = results[-1][0]

    solutions = [r[0] for r in results]
    statuses = [r[1] for r in results]
    ok = [s for s in solutions if s is not None]
    monotone = all(
        np.all(b.u.values >= a.u.values - SANDWICH_SLACK * (1.0 + b.sup_norm))
        for a, b in zip(ok, ok[1:])
    )
    if not monotone:
        logger.warning("u_μ non croissante en μ sur l'échelle")
    return BifurcationCurve(ladder, solutions, statuses, pair0.mu1, mu_star, monotone)
