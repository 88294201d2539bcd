"""
Valeur propre principale périodique-parabolique et balayage en γ.

μ₁(m) = −log λ / T avec λ = spr U_m(T, 0), obtenu par itération de la
puissance sur l'application de période. Le minimum global c̄ du réseau
d'ordre zéro est retiré avant l'itération puis réintroduit exactement :
μ₁ = μ̃₁ + c̄ et log λ = log λ̃ − c̄T.

Le balayage μ₁(γb) pour γ = 2⁰ … 2¹⁴ estime μ*(b) = lim μ₁(γb).
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from .coeffs import SpaceTimeSet, Weight, q0_components
from .errors import (
    DivisionGuardError,
    EigenIterationError,
    InsufficientLadderError,
    InvalidRequestError,
    RejectedInputError,
)
from .evolution import PeriodMap, TimeGrid, Trajectory, zero_order_lattice
from .mesh import DiscreteForm

logger = logging.getLogger(__name__)

# =============================================================================
# CONSTANTES
# =============================================================================

MAX_ITER = 10000
RAYLEIGH_TOL = 1e-12
RESIDUAL_TOL = 1e-10
INCREMENT_FLOOR = 1e-12
SATURATION_TOL = 1e-3
MONOTONE_SLACK = 1e-9
DEFAULT_LADDER = 2.0 ** np.arange(15)

SATURATED = "SATURATED"
DIVERGENT = "DIVERGENT"
UNRESOLVED = "UNRESOLVED"


# =============================================================================
# TYPES
# =============================================================================

@dataclass(eq=False)
class EigenPair:
    """
    Couple principal (μ₁, φ) ; ‖φ(0)‖_H = 1 et φ(T) ≈ φ(0).

    `residual` = ‖U(T,0)v − λv‖_H, `rel_residual` = residual / λ (critère d'arrêt).
    """
    mu1: float
    log_lambda: float
    phi: Trajectory
    iterations: int
    residual: float
    rel_residual: float
    shift: float = 0.0

    @property
    def lambda_(self) -> float:
        return math.exp(self.log_lambda) if self.log_lambda < 700 else math.inf

    @property
    def phi0(self) -> np.ndarray:
        return self.phi.values[0]


@dataclass(eq=False)
class GammaSweep:
    """Résultat du balayage μ₁(γb) sur une échelle croissante de γ."""
    gammas: np.ndarray
    mu_values: np.ndarray
    pairs: List[EigenPair]
    weight: Weight
    mu_base: float
    saturation_ratio: float
    slope: float
    status: str
    mu_star_estimate: float
    extrapolated: float
    monotone: bool
    worst_decrease: float

    @property
    def is_divergent(self) -> bool:
        return self.status == DIVERGENT

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "gamma": self.gammas,
            "mu1": self.mu_values,
            "lambda": [p.lambda_ for p in self.pairs],
            "iterations": [p.iterations for p in self.pairs],
            "residual": [p.residual for p in self.pairs],
            "rel_residual": [p.rel_residual for p in self.pairs],
        })


@dataclass(eq=False)
class LimitEigenfunction:
    """Approximation de φ∞ au dernier échelon et indicateurs le long de l'échelle."""
    phi: Trajectory
    degeneracy: np.ndarray
    cauchy: np.ndarray
    sup_constant: float
    component_max: Dict[int, float] = field(default_factory=dict)
    saturated: bool = True


# =============================================================================
# ITÉRATION DE LA PUISSANCE
# =============================================================================

def principal_pair(form: DiscreteForm, grid: TimeGrid, m: Any = None,
                   max_iter: int = MAX_ITER, seed: int = 0,
                   v0: Optional[np.ndarray] = None) -> EigenPair:
    """
    Couple principal de A_h + c₀ + m par itération de la puissance.

    Arrêt : variation relative de λ̃ < 1e−12 et résidu ‖U(T,0)v/λ̃ − v‖_H < 1e−10.

    Raises:
        EigenIterationError: non-convergence après max_iter itérations
    """
    full = zero_order_lattice(form, grid, m)
    cbar = float(full.min())
    pmap = PeriodMap(form, grid, m=full - cbar, include_c0=False)
    w = form.mass_free

    def hnorm(v):
        return math.sqrt(max(float(v @ (w * v)), 0.0))

    if v0 is not None:
        v = pmap._to_free(v0)
    else:
        v = np.random.default_rng(seed).random(pmap.n_free) + 0.5
    v = v / hnorm(v)

    lam_prev = None
    residual = math.inf
    lam = math.nan
    for it in range(1, max_iter + 1):
        pv = pmap.apply_free(v)
        lam = hnorm(pv)
        if not lam > 0 or not math.isfinite(lam):
            raise EigenIterationError(
                f"Itération de la puissance dégénérée (λ̃ = {lam})", {"iteration": it}
            )
        v_new = pv / lam
        residual = hnorm(v_new - v)
        v = v_new
        if lam_prev is not None and abs(lam - lam_prev) < RAYLEIGH_TOL * lam \
                and residual < RESIDUAL_TOL:
            break
        lam_prev = lam
    else:
        raise EigenIterationError(
            f"Itération de la puissance non convergée après {max_iter} itérations",
            {"residual": residual, "lambda_tilde": lam},
        )

    log_tilde = math.log(lam)
    mu_tilde = -log_tilde / grid.T
    traj = pmap.propagate(v, with_source=False)
    traj.values *= np.exp(mu_tilde * traj.times)[:, None]
    phi = Trajectory(traj.values, traj.times, form)

    log_lambda = log_tilde - cbar * grid.T
    mu1 = -log_lambda / grid.T
    if residual == 0.0:
        abs_residual = 0.0
    else:
        log_abs = math.log(residual) + log_lambda
        abs_residual = math.exp(log_abs) if log_abs < 700 else math.inf
    interior = form.mesh.interior_nodes
    if interior.size and np.min(phi.values[:, interior]) <= 0:
        logger.warning("φ non strictement positive aux nœuds intérieurs (min %.3g)",
                       float(np.min(phi.values[:, interior])))
    logger.debug("μ₁ = %.12g (c̄ = %.6g, %d itérations, résidu relatif %.2e)",
                 mu1, cbar, it, residual)
    return EigenPair(mu1, log_lambda, phi, it, abs_residual, residual, cbar)


# =============================================================================
# BALAYAGE EN γ
# =============================================================================

def mu_star_sweep(form: DiscreteForm, grid: TimeGrid, weight: Weight,
                  ladder: Optional[Sequence[float]] = None, threads: int = 1,
                  seed: int = 0, max_iter: int = MAX_ITER) -> GammaSweep:
    """
    μ₁(γb) sur l'échelle `ladder` et estimation de μ*(b).

    Statuts :
    - SATURATED : rapport d'incréments < 1 et dernier incrément < 1e−3·(1+|μ|)
    - DIVERGENT : pente des moindres carrés sur la moitié haute > 0.5·min b (μ* = +∞)
    - UNRESOLVED : ni l'un ni l'autre, l'estimation est la dernière valeur

    Raises:
        InsufficientLadderError: moins de 3 échelons
    """
    gammas = np.asarray(DEFAULT_LADDER if ladder is None else ladder, dtype=float)
    if gammas.size < 3:
        raise InsufficientLadderError(
            f"Au moins 3 échelons requis (reçu {gammas.size})", {"ladder": gammas.tolist()}
        )
    if np.any(np.diff(gammas) <= 0) or gammas[0] < 0:
        raise RejectedInputError("L'échelle de γ doit être positive et strictement croissante")

    def solve(gamma: float) -> EigenPair:
        return principal_pair(form, grid, m=gamma * weight.values, max_iter=max_iter, seed=seed)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            pairs = list(executor.map(solve, gammas))
    else:
        pairs = [solve(g) for g in gammas]
    base = principal_pair(form, grid, m=None, max_iter=max_iter, seed=seed)

    mu = np.array([p.mu1 for p in pairs])
    raw = np.diff(mu)
    inc = np.where(np.abs(raw) < INCREMENT_FLOOR, 0.0, raw)
    ratio = float(inc[-1] / inc[-2]) if abs(inc[-2]) > INCREMENT_FLOOR else 0.0

    top = slice(gammas.size // 2, None)
    slope = float(np.polyfit(gammas[top], mu[top], 1)[0])
    bmin = weight.support_min

    if not weight.is_zero and slope > 0.5 * bmin:
        status, estimate = DIVERGENT, math.inf
    elif ratio < 1.0 and abs(inc[-1]) < SATURATION_TOL * (1.0 + abs(mu[-1])):
        status, estimate = SATURATED, float(mu[-1])
    else:
        status, estimate = UNRESOLVED, float(mu[-1])

    if status != DIVERGENT and 0.0 <= ratio < 1.0:
        extrapolated = float(mu[-1] + inc[-1] * ratio / (1.0 - ratio))
    else:
        extrapolated = estimate

    worst = float(max(0.0, -raw.min()))
    if worst > MONOTONE_SLACK:
        logger.warning("μ₁(γb) décroît de %.3g le long de l'échelle", worst)
    logger.info("Balayage γ : statut %s, μ* ≈ %s (pente %.4g, rapport %.3g)",
                status, estimate, slope, ratio)
    return GammaSweep(
        gammas=gammas, mu_values=mu, pairs=pairs, weight=weight, mu_base=base.mu1,
        saturation_ratio=ratio, slope=slope, status=status, mu_star_estimate=estimate,
        extrapolated=extrapolated, monotone=worst <= MONOTONE_SLACK, worst_decrease=worst,
    )


def degeneracy_functional(phi: Trajectory, weight: Weight) -> float:
    """∫₀ᵀ ⟨bφ, φ⟩ dt (rectangles à gauche, masse condensée)."""
    w = phi.form.mesh.weights
    dt = float(phi.times[1] - phi.times[0])
    vals = phi.values[:-1]
    return float(dt * np.sum(weight.values[:-1] * vals * vals * w[None, :]))


def limit_eigenfunction(sweep: GammaSweep, Q0: Optional[SpaceTimeSet] = None) -> LimitEigenfunction:
    """
    φ au dernier échelon comme approximation de φ∞.

    Rapporte la fonctionnelle de dégénérescence par échelon, les écarts de
    Cauchy successifs, la constante c de ‖φ_γ‖∞ ≤ c‖φ_γ(0)‖₂ et, si Q₀ est
    fourni, le maximum de φ∞ sur chaque composante de Q₀.

    Un balayage UNRESOLVED est accepté avec un avertissement ; le résultat
    porte alors saturated = False.

    Raises:
        InvalidRequestError: balayage divergent (μ* = +∞)
    """
    if sweep.is_divergent:
        raise InvalidRequestError("φ∞ indéfinie : le balayage indique μ*(b) = +∞",
                                  {"status": sweep.status})
    saturated = sweep.status == SATURATED
    if not saturated:
        logger.warning("Balayage %s : φ au dernier échelon n'approche φ∞ que grossièrement",
                       sweep.status)
    phis = [p.phi for p in sweep.pairs]
    degeneracy = np.array([degeneracy_functional(phi, sweep.weight) for phi in phis])
    cauchy = np.array([
        float(np.max(phis[k].form.h_norm(phis[k + 1].values - phis[k].values)))
        for k in range(len(phis) - 1)
    ])
    sup_constant = float(max(phi.sup_norm() / phi.form.h_norm(phi.values[0]) for phi in phis))

    top = phis[-1]
    component_max: Dict[int, float] = {}
    if Q0 is not None:
        labels, count = q0_components(Q0)
        K = labels.shape[0]
        for label in range(1, count + 1):
            mask = labels == label
            component_max[label] = float(np.max(top.values[:K][mask]))
    return LimitEigenfunction(top, degeneracy, cauchy, sup_constant, component_max, saturated)


def comparison_constant(phi0: Trajectory, phi1: Trajectory,
                        nodes: Optional[np.ndarray] = None) -> float:
    """
    Plus petite constante c telle que φ₀ ≤ c·φ₁ aux nœuds intérieurs, sur toutes les tranches.

    Raises:
        DivisionGuardError: φ₁ ≤ 0 en un point intérieur
    """
    if nodes is None:
        nodes = phi1.form.mesh.interior_nodes if phi1.form is not None \
            else np.arange(phi1.values.shape[1])
    a = np.asarray(phi0.values)[:, nodes]
    b = np.asarray(phi1.values)[:, nodes]
    if np.any(b <= 0):
        k, i = np.argwhere(b <= 0)[0]
        raise DivisionGuardError(
            "φ₁ nulle en un point intérieur : constante de comparaison indéfinie",
            {"time_index": int(k), "node": int(nodes[i])},
        )
    return float(np.max(a / b))
