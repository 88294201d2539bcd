"""
Schéma en temps implicite pour ẏ + A_h(t)y + m(t)y = f(t).

- TimeGrid : période T découpée en K pas, paramètre θ ∈ [1/2, 1]
- PeriodMap : système d'évolution discret U(t, s), factorisations en cache
- Trajectory : valeurs nodales aux K+1 instants et normes H / V par pas

Les termes d'ordre zéro sont intégrés avec un taux exponentiellement ajusté
nœud par nœud (les équilibres spatialement constants sont exacts). Avec
`fitted=False` on retrouve le θ-schéma classique.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, gmres, splu

from .coeffs import Weight, truncate_weight
from .errors import (
    NoPositiveSolutionError,
    NumericalBlowupError,
    RejectedInputError,
    SolverError,
)
from .mesh import DiscreteForm

logger = logging.getLogger(__name__)

# =============================================================================
# CONSTANTES
# =============================================================================

EXP_CAP = 600.0
GMRES_RTOL = 1e-13
TOL_PERIODIC = 1e-10
TOL_QUAD = 1e-2
MAX_REFINEMENTS = 4
PICARD_MAX_ITER = 5000


# =============================================================================
# GRILLE EN TEMPS
# =============================================================================

@dataclass(frozen=True)
class TimeGrid:
    """Découpage uniforme de [0, T] en K pas ; θ=1 Euler implicite, θ=1/2 Crank–Nicolson."""
    T: float
    K: int
    theta: float = 1.0
    fitted: bool = True

    def __post_init__(self):
        if not self.T > 0:
            raise RejectedInputError(f"Période T invalide : {self.T}")
        if int(self.K) != self.K or self.K < 2:
            raise RejectedInputError(f"Au moins 2 pas de temps requis (reçu K={self.K})")
        if not 0.5 <= self.theta <= 1.0:
            raise RejectedInputError(f"θ doit appartenir à [1/2, 1] (reçu {self.theta})")

    @classmethod
    def from_dt(cls, T: float, dt: float, theta: float = 1.0, fitted: bool = True) -> "TimeGrid":
        return cls(float(T), max(2, int(round(T / dt))), theta, fitted)

    @property
    def dt(self) -> float:
        return self.T / self.K

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.K + 1)

    def refined(self, factor: int = 2) -> "TimeGrid":
        return TimeGrid(self.T, self.K * factor, self.theta, self.fitted)


def fitted_rates(m: np.ndarray, dt: float, theta: float = 1.0,
                 fitted: bool = True) -> Tuple[np.ndarray, np.ndarray]:
    """
    Taux discret r et poids de source q pour l'ordre zéro m sur un pas dt.

    Avec x = m·dt, le pas scalaire (1+θr)y⁺ = (1−(1−θ)r)y + q·f reproduit
    exactement y⁺ = e^{−x}y + (1−e^{−x})f/m.
    """
    m = np.asarray(m, dtype=float)
    if not fitted:
        return m * dt, np.full(m.shape, dt)
    x = np.clip(m * dt, -EXP_CAP, EXP_CAP)
    one_minus = -np.expm1(-x)
    r = one_minus / (1.0 - theta + theta * np.exp(-x))
    q = np.full(m.shape, dt)
    nz = m != 0
    q[nz] = (1.0 + theta * r[nz]) * one_minus[nz] / m[nz]
    return r, q


def as_lattice(value: Any, form: DiscreteForm, grid: TimeGrid) -> Optional[np.ndarray]:
    """
    Ramène un champ d'ordre zéro ou une source au réseau (K+1, n).

    Accepte None, un scalaire, un vecteur nodal, un réseau (K, n) ou (K+1, n),
    un Weight ou un champ appelable (points, t).
    """
    if value is None:
        return None
    n, K = form.mesh.n, grid.K
    if isinstance(value, Weight):
        arr = value.values
    elif callable(value):
        arr = np.stack([
            np.broadcast_to(np.asarray(value(form.mesh.nodes, float(t)), dtype=float), (n,))
            for t in grid.times
        ])
    else:
        arr = np.asarray(value, dtype=float)
        if arr.ndim == 0:
            arr = np.full((K + 1, n), float(arr))
        elif arr.shape == (n,):
            arr = np.tile(arr, (K + 1, 1))
        elif arr.shape == (K, n):
            arr = np.vstack([arr, arr[:1]])
    if arr.shape != (K + 1, n):
        raise RejectedInputError(
            f"Réseau de forme {arr.shape} incompatible avec (K+1, n) = {(K + 1, n)}"
        )
    if not np.all(np.isfinite(arr)):
        raise RejectedInputError("Réseau contenant des valeurs non finies")
    return np.array(arr, dtype=float)


def zero_order_lattice(form: DiscreteForm, grid: TimeGrid, m: Any = None) -> np.ndarray:
    """c₀ + m échantillonné sur le réseau."""
    c0 = form.coeffs.c0
    if c0.is_zero:
        base = np.zeros((grid.K + 1, form.mesh.n))
    else:
        base = np.stack([form.c0_at(t) for t in grid.times])
    extra = as_lattice(m, form, grid)
    return base if extra is None else base + extra


# =============================================================================
# TRAJECTOIRES
# =============================================================================

@dataclass(eq=False)
class Trajectory:
    """Valeurs nodales complètes (zéro sur Γ₀) aux instants `times`."""
    values: np.ndarray
    times: np.ndarray
    form: Optional[DiscreteForm] = field(default=None, repr=False)
    meta: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.times = np.asarray(self.times, dtype=float)
        if self.values.shape[0] != self.times.size:
            raise RejectedInputError("Trajectoire : nombre de tranches ≠ nombre d'instants")
        if self.form is not None:
            self.h_norms = self.form.h_norm(self.values)
            self.v_norms = self.form.v_norm(self.values)
        else:
            self.h_norms = self.v_norms = None

    @property
    def steps(self) -> int:
        return self.values.shape[0] - 1

    def at(self, k: int) -> np.ndarray:
        return self.values[k]

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0

    def periodic_gap(self) -> float:
        diff = self.values[-1] - self.values[0]
        if self.form is None:
            return float(np.max(np.abs(diff)))
        return float(self.form.h_norm(diff))

    def scaled(self, factor: float) -> "Trajectory":
        return Trajectory(factor * self.values, self.times, self.form, dict(self.meta))

    def to_frame(self) -> pd.DataFrame:
        """Format long : time_index, node_id, value."""
        k, n = self.values.shape
        return pd.DataFrame({
            "time_index": np.repeat(np.arange(k), n),
            "node_id": np.tile(np.arange(n), k),
            "value": self.values.ravel(),
        })


# =============================================================================
# PAS ÉLÉMENTAIRE
# =============================================================================

def _check_plain_guard(m: np.ndarray, dt: float, theta: float, fitted: bool):
    if not fitted and theta < 1.0:
        bound = dt * float(np.max(np.abs(m), initial=0.0))
        if bound >= 2.0:
            raise RejectedInputError(
                f"θ={theta} : dt·‖m‖∞ = {bound:.3g} ≥ 2, positivité non garantie",
                {"dt": dt, "theta": theta},
            )


def step(form: DiscreteForm, y: np.ndarray, t: float, dt: float,
         m: Any = None, f: Any = None, theta: float = 1.0, fitted: bool = False) -> np.ndarray:
    """
    Un pas du θ-schéma :
    (M + θdt(A_h+M_m))y⁺ = (M − (1−θ)dt(A_h+M_m))y + dt·M f̄.

    m et f sont des scalaires, des vecteurs nodaux ou des champs (points, t) ;
    c₀ est ajouté à m. Le vecteur y est nodal complet.
    """
    if not dt > 0:
        raise RejectedInputError(f"Pas de temps invalide : {dt}")
    mesh = form.mesh
    n = mesh.n

    def nodal(value, s):
        if value is None:
            return np.zeros(n)
        if callable(value):
            return np.broadcast_to(np.asarray(value(mesh.nodes, s), dtype=float), (n,))
        return np.broadcast_to(np.asarray(value, dtype=float), (n,))

    m0 = form.c0_at(t) + nodal(m, t)
    m1 = form.c0_at(t + dt) + nodal(m, t + dt)
    mbar = ((1.0 - theta) * m0 + theta * m1)[mesh.free_nodes]
    fbar = ((1.0 - theta) * nodal(f, t) + theta * nodal(f, t + dt))[mesh.free_nodes]
    _check_plain_guard(mbar, dt, theta, fitted)

    w = form.mass_free
    r, q = fitted_rates(mbar, dt, theta, fitted)
    lhs = sp.diags(w * (1.0 + theta * r)) + theta * dt * form.form_at(t + dt, include_c0=False)
    rhs = w * (1.0 - (1.0 - theta) * r) * mesh.restrict(y) + w * q * fbar
    if theta < 1.0:
        rhs -= (1.0 - theta) * dt * (form.form_at(t, include_c0=False) @ mesh.restrict(y))
    y1 = splu(lhs.tocsc()).solve(rhs)
    if not np.all(np.isfinite(y1)):
        raise NumericalBlowupError(f"Valeur non finie après le pas t={t:.6g}", {"t": t})
    return mesh.extend(y1)


@dataclass(frozen=True, eq=False)
class _StepOperator:
    lu: Any
    rhs: sp.csr_matrix
    source_weight: np.ndarray


class PeriodMap:
    """
    Système d'évolution discret U(t, s) pour A_h(t) + m(t) (+ source f).

    Les factorisations sont construites à l'initialisation puis ne sont plus
    modifiées ; deux pas consécutifs identiques partagent la même.
    """

    def __init__(self, form: DiscreteForm, grid: TimeGrid, m: Any = None, f: Any = None,
                 include_c0: bool = True):
        self.form = form
        self.grid = grid
        mesh = form.mesh
        self.mesh = mesh
        if include_c0:
            self.m_lattice = zero_order_lattice(form, grid, m)
        else:
            extra = as_lattice(m, form, grid)
            self.m_lattice = np.zeros((grid.K + 1, mesh.n)) if extra is None else extra
        f_lattice = as_lattice(f, form, grid)
        self.omega = float(form.step_shift)
        self.growth = float(np.exp(self.omega * grid.dt))

        th = grid.theta
        free = mesh.free_nodes
        mbar = ((1.0 - th) * self.m_lattice[:-1] + th * self.m_lattice[1:])[:, free]
        _check_plain_guard(mbar, grid.dt, th, grid.fitted)
        self._fbar = None
        if f_lattice is not None and np.any(f_lattice != 0):
            self._fbar = ((1.0 - th) * f_lattice[:-1] + th * f_lattice[1:])[:, free]

        self._ops: List[_StepOperator] = []
        reusable = form.coeffs.time_independent
        for k in range(grid.K):
            if reusable and k > 0 and np.array_equal(mbar[k], mbar[k - 1]):
                self._ops.append(self._ops[-1])
            else:
                self._ops.append(self._build_step(k, mbar[k]))
        logger.debug("PeriodMap : %d pas, %d factorisations distinctes",
                     grid.K, len({id(op) for op in self._ops}))

    def _build_step(self, k: int, mbar: np.ndarray) -> _StepOperator:
        grid, form = self.grid, self.form
        th, dt = grid.theta, grid.dt
        w = form.mass_free
        r, q = fitted_rates(mbar + self.omega, dt, th, grid.fitted)
        A1 = form.form_at((k + 1) * dt, include_c0=False)
        lhs = sp.diags(w * (1.0 + th * r)) + th * dt * A1
        try:
            lu = splu(lhs.tocsc())
        except RuntimeError as exc:
            raise SolverError(f"Matrice de pas singulière au pas {k}", {"step": k}) from exc
        rhs = sp.diags(w * (1.0 - (1.0 - th) * r))
        if th < 1.0:
            rhs = rhs - (1.0 - th) * dt * form.form_at(k * dt, include_c0=False)
        return _StepOperator(lu, rhs.tocsr(), w * q)

    # ──────────────────────────────────────────────────────────────────────
    # Application
    # ──────────────────────────────────────────────────────────────────────

    @property
    def n_free(self) -> int:
        return self.mesh.free_nodes.size

    def _to_free(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape[-1] == self.mesh.n:
            return self.mesh.restrict(v)
        if v.shape[-1] == self.n_free:
            return v.copy()
        raise RejectedInputError(f"Vecteur de taille {v.shape[-1]} incompatible avec le maillage")

    def advance(self, y: np.ndarray, k: int, with_source: bool = True) -> np.ndarray:
        """Pas k → k+1 sur les degrés de liberté libres (k pris modulo K)."""
        kk = k % self.grid.K
        op = self._ops[kk]
        rhs = op.rhs @ y
        if with_source and self._fbar is not None:
            rhs = rhs + op.source_weight * self._fbar[kk]
        y1 = op.lu.solve(rhs)
        if self.omega:
            y1 *= self.growth
        if not np.all(np.isfinite(y1)):
            raise NumericalBlowupError(f"Valeur non finie au pas {k}", {"step": int(k)})
        return y1

    def propagate(self, v: np.ndarray, s_index: int = 0, t_index: Optional[int] = None,
                  with_source: bool = True) -> Trajectory:
        """Trajectoire discrète de s_index à t_index (par défaut une période)."""
        if t_index is None:
            t_index = s_index + self.grid.K
        if t_index < s_index:
            raise RejectedInputError(f"Intervalle inversé : {s_index} > {t_index}")
        y = self._to_free(v)
        out = np.empty((t_index - s_index + 1, y.size))
        out[0] = y
        for j, k in enumerate(range(s_index, t_index), start=1):
            y = self.advance(y, k, with_source)
            out[j] = y
        times = np.arange(s_index, t_index + 1) * self.grid.dt
        return Trajectory(self.mesh.extend(out), times, self.form)

    def apply_free(self, v: np.ndarray) -> np.ndarray:
        """U(T, 0)v sur les degrés de liberté libres, sans source."""
        y = np.asarray(v, dtype=float)
        for k in range(self.grid.K):
            y = self.advance(y, k, with_source=False)
        return y

    def apply(self, v: np.ndarray) -> np.ndarray:
        """U(T, 0)v, vecteurs nodaux complets ; un tableau (N, n) est traité ligne par ligne."""
        free = self._to_free(v)
        if free.ndim == 2:
            return self.mesh.extend(self.apply_free(free.T).T)
        return self.mesh.extend(self.apply_free(free))

    def source_endpoint(self) -> np.ndarray:
        """w(T) = ∫₀ᵀ U(T, τ)f(τ)dτ discret (degrés libres)."""
        y = np.zeros(self.n_free)
        if self._fbar is None:
            return y
        for k in range(self.grid.K):
            y = self.advance(y, k, with_source=True)
        return y


def propagate(form: DiscreteForm, grid: TimeGrid, v: np.ndarray, s: float = 0.0,
              t: Optional[float] = None, m: Any = None, f: Any = None) -> Trajectory:
    """Variation de la constante discrète de s à t (instants de la grille)."""
    s_index = int(round(s / grid.dt))
    t_index = s_index + grid.K if t is None else int(round(t / grid.dt))
    if abs(s_index * grid.dt - s) > 1e-9 * grid.dt or (
            t is not None and abs(t_index * grid.dt - t) > 1e-9 * grid.dt):
        raise RejectedInputError("Instants hors de la grille temporelle", {"s": s, "t": t})
    if t_index <= s_index:
        raise RejectedInputError(f"Il faut s < t (reçu s={s}, t={t})")
    return PeriodMap(form, grid, m, f).propagate(v, s_index, t_index)


# =============================================================================
# PROBLÈME PÉRIODIQUE LINÉAIRE
# =============================================================================

def _picard_aitken(pmap: PeriodMap, b: np.ndarray, x0: np.ndarray, tol: float) -> np.ndarray:
    """u ← U(T,0)u + b, extrapolation d'Aitken sur le taux géométrique observé."""
    u = x0.copy()
    prev = None
    scale = max(float(np.linalg.norm(b)), 1e-300)
    for it in range(PICARD_MAX_ITER):
        nxt = pmap.apply_free(u) + b
        d = nxt - u
        nd = float(np.linalg.norm(d))
        if nd <= tol * scale:
            return nxt
        if prev is not None and prev > 0 and it % 3 == 2:
            rate = nd / prev
            if rate < 1.0:
                nxt = nxt + rate / (1.0 - rate) * d
            else:
                raise SolverError("Point fixe divergent : rayon spectral ≥ 1 probable",
                                  {"rate": rate, "iterations": it})
        prev = nd
        u = nxt
    raise SolverError("Point fixe non convergé", {"iterations": PICARD_MAX_ITER})


def solve_periodic_linear(form: DiscreteForm, grid: TimeGrid, m: Any = None, f: Any = None,
                          require_positive: bool = False, tol: float = TOL_PERIODIC) -> Trajectory:
    """
    Solution T-périodique de ẏ + A_h y + m y = f.

    u₀ résout (I − U(T,0))u₀ = w(T) avec w = propagate(0, f) par GMRES
    sans matrice, raffinement itératif puis repli Picard + Aitken.

    Raises:
        NoPositiveSolutionError: f ≥ 0 demandé positif alors que spr U(T,0) ≥ 1
        SolverError: ni GMRES ni le point fixe ne convergent
    """
    pmap = PeriodMap(form, grid, m, f)
    f_lattice = as_lattice(f, form, grid)

    if require_positive and f_lattice is not None and np.all(f_lattice >= 0):
        from .eigen import principal_pair

        pair = principal_pair(form, grid, m=m)
        if pair.log_lambda >= 0:
            raise NoPositiveSolutionError(
                f"spr U(T,0) = {pair.lambda_:.6g} ≥ 1 : aucune solution périodique positive",
                {"lambda": pair.lambda_, "mu1": pair.mu1},
            )

    b = pmap.source_endpoint()
    nf = pmap.n_free
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        u0 = np.zeros(nf)
    else:
        op = LinearOperator((nf, nf), matvec=lambda v: v - pmap.apply_free(v), dtype=float)
        u0 = np.zeros(nf)
        restart = min(nf, 60)
        converged = False
        for _ in range(MAX_REFINEMENTS):
            res = b - op.matvec(u0)
            if float(np.linalg.norm(res)) <= tol * 1e-2 * bnorm:
                converged = True
                break
            du, info = gmres(op, res, rtol=GMRES_RTOL, atol=0.0, restart=restart,
                             maxiter=max(20, 4 * nf))
            u0 = u0 + du
            if info < 0:
                break
        else:
            converged = float(np.linalg.norm(b - op.matvec(u0))) <= tol * bnorm
        if not converged:
            logger.info("GMRES insuffisant, repli sur Picard + Aitken")
            u0 = _picard_aitken(pmap, b, u0, tol * 1e-2)

    traj = pmap.propagate(u0, with_source=True)
    gap = traj.periodic_gap()
    ref = float(form.h_norm(traj.values[0]))
    traj.meta["periodic_gap"] = gap
    if gap > tol * max(ref, 1e-300) and gap > 1e-14:
        logger.warning("Écart de périodicité %.3g > tolérance (‖u₀‖_H = %.3g)", gap, ref)
    return traj


# =============================================================================
# DIAGNOSTICS
# =============================================================================

def apriori_diagnostic(traj: Trajectory, form: DiscreteForm, grid: TimeGrid,
                       f: Any = None, omega: Optional[float] = None) -> Dict[str, Any]:
    """
    Compare les deux membres de l'estimation d'énergie pondérée par e^{−ωτ} :

        ‖w_k‖²_H + (α/2)Σ dt‖w_j‖²_V ≤ ‖u₀‖²_H + (2/α)Σ dt‖f̃_j‖²_{V'}

    avec w = e^{−ω(τ−s)}u et f̃ = e^{−ω(τ−s)}f. Le membre de droite ne dépend
    pas du potentiel positif m.
    """
    alpha = form.ellipticity_alpha
    omega0 = form.coercivity_shift
    if omega is None:
        omega = omega0
    if omega < omega0:
        logger.warning("ω = %.4g < ω₀ = %.4g : estimation non garantie", omega, omega0)

    tau = traj.times - traj.times[0]
    dt = grid.dt
    damp = np.exp(-omega * tau)
    w = traj.values * damp[:, None]
    h2 = form.h_norm(w) ** 2
    v2 = form.v_norm(w) ** 2

    f_lattice = as_lattice(f, form, grid) if f is not None else None
    dual2 = np.zeros(tau.size)
    if f_lattice is not None:
        k0 = int(round(traj.times[0] / dt))
        for j in range(tau.size):
            dual2[j] = form.dual_norm(damp[j] * f_lattice[(k0 + j) % grid.K]) ** 2

    lhs = h2.copy()
    lhs[1:] += 0.5 * alpha * dt * np.cumsum(v2[1:])
    rhs = np.full(tau.size, h2[0])
    rhs[1:] += (2.0 / alpha) * dt * np.cumsum(dual2[1:])

    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(rhs > 0, lhs / np.where(rhs > 0, rhs, 1.0),
                          np.where(lhs > 0, np.inf, 0.0))
    ratio = float(np.max(ratios))
    return {
        "lhs": lhs,
        "rhs": rhs,
        "ratio": ratio,
        "omega": float(omega),
        "omega_ok": bool(omega >= omega0),
        "passed": bool(np.all(lhs <= rhs * (1.0 + TOL_QUAD) + 1e-300)),
    }


def smoothing_constant(pmap: PeriodMap, n_samples: int = 3, seed: int = 0) -> Dict[str, Any]:
    """
    Constante empirique C de ‖U(t,0)v‖∞ ≤ C·t^{−N/4}‖v‖₂ sur les instants de la grille.

    Échantillons : impulsions normalisées au nœud central et vecteurs aléatoires ≥ 0.
    """
    mesh = pmap.mesh
    free = mesh.free_nodes
    rng = np.random.default_rng(seed)
    samples = []
    centre = free[len(free) // 2]
    pulse = np.zeros(mesh.n)
    pulse[centre] = 1.0 / np.sqrt(mesh.weights[centre])
    samples.append(pulse)
    for _ in range(n_samples):
        v = np.zeros(mesh.n)
        v[free] = rng.random(free.size)
        samples.append(v / pmap.form.h_norm(v))

    exponent = mesh.dim / 4.0
    per_time = np.zeros(pmap.grid.K)
    for v in samples:
        traj = pmap.propagate(v, with_source=False)
        sup = np.max(np.abs(traj.values[1:]), axis=1)
        per_time = np.maximum(per_time, sup * traj.times[1:] ** exponent)
    return {"constant": float(per_time.max()), "exponent": exponent, "per_time": per_time}


def period_norm_bound(pmap: PeriodMap, n_starts: int = 4, seed: int = 0) -> float:
    """sup de ‖U(t,s)v‖_H / ‖v‖_H sur des départs s répartis et une période de trajets."""
    mesh = pmap.mesh
    rng = np.random.default_rng(seed)
    K = pmap.grid.K
    starts = np.unique(np.linspace(0, K - 1, n_starts).astype(int))
    worst = 0.0
    for s in starts:
        v = np.zeros(mesh.n)
        v[mesh.free_nodes] = rng.random(mesh.free_nodes.size)
        traj = pmap.propagate(v, int(s), int(s) + K, with_source=False)
        worst = max(worst, float(np.max(traj.h_norms / traj.h_norms[0])))
    return worst


def truncation_convergence(form: DiscreteForm, grid: TimeGrid, weight: Weight,
                           deltas: Sequence[float], v: np.ndarray,
                           gamma: float = 1.0) -> pd.DataFrame:
    """
    ‖U_{γb_δ}(T,0)v − U_{γb}(T,0)v‖_H pour δ décroissant.

    La colonne `monotone` indique que l'écart décroît quand δ diminue.
    """
    reference = PeriodMap(form, grid, m=gamma * weight.values).apply(v)
    rows = []
    for delta in sorted(deltas, reverse=True):
        truncated = truncate_weight(weight, form.mesh, delta)
        out = PeriodMap(form, grid, m=gamma * truncated.values).apply(v)
        rows.append({"delta": float(delta), "gap": float(form.h_norm(out - reference))})
    frame = pd.DataFrame(rows)
    gaps = frame["gap"].to_numpy()
    frame["monotone"] = np.concatenate([[True], np.diff(gaps) <= 1e-12 * (1.0 + gaps[:-1])])
    return frame
