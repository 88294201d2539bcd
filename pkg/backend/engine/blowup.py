"""
Analyse de l'explosion quand μ ↑ μ*(b).

- torsion_solve : ẇ + A w + γb w + ω w = 1, périodique
- blowup_locus : classement « grows » / « bounded » des points du réseau
- bernoulli_z, elliptic_blowup_w : profils de la sur-solution locale v = w + z
- certify_local_bound : domination u_μ ≤ v sur un sous-cylindre de Q_b
- sobolev_diagnostic : estimation de Caccioppoli discrète sur Q₁ ⋐ Q₂
- q_infinity_cover : extension aux composantes de Q₀ encerclées par des cylindres certifiés
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import scipy.sparse as sp
from scipy import ndimage
from scipy.sparse.linalg import splu

from .coeffs import SpaceTimeSet, Weight, q0_components
from .eigen import principal_pair
from .errors import DomainError, InvalidRequestError, SolverError
from .evolution import TimeGrid, Trajectory, solve_periodic_linear
from .logistic import BifurcationCurve, LogisticProblem, PeriodicSolution
from .mesh import DiscreteForm, Mesh

logger = logging.getLogger(__name__)

# =============================================================================
# CONSTANTES
# =============================================================================

GROWTH_THRESHOLD = -0.5
PHI_RELATIVE_EPS = 1e-6
V_LADDER_EXPONENTS = (2, 3, 4, 5, 6)
INTERIOR_TOL = 1e-6
NEWTON_MAX_ITER = 100
CERTIFICATE_SLACK = 1e-10
TOL_QUAD = 1e-2


# =============================================================================
# TORSION
# =============================================================================

def torsion_solve(form: DiscreteForm, grid: TimeGrid, weight: Weight,
                  gamma: float = 0.0, omega: float = 1.0) -> Trajectory:
    """
    Solution périodique de ẇ + A w + γb w + ω w = 1.

    ω est relevé à 1 − μ₁(γb) si μ₁(γb + ω) ≤ 0 ; la valeur retenue est
    rangée dans meta["omega"].
    """
    potential = gamma * weight.values
    mu1 = principal_pair(form, grid, m=potential).mu1
    omega_eff = float(omega) if mu1 + omega > 0 else 1.0 - mu1
    if omega_eff != omega:
        logger.info("Torsion : ω relevé de %.4g à %.4g", omega, omega_eff)
    traj = solve_periodic_linear(form, grid, m=potential + omega_eff, f=1.0)
    traj.meta["omega"] = omega_eff
    traj.meta["gamma"] = float(gamma)
    return traj


def uniform_blowup_hypothesis(u_mu0: Trajectory, w_gamma0: Trajectory,
                              slack: float = CERTIFICATE_SLACK) -> Dict[str, Any]:
    """Vérifie u_{μ₀} ≥ w_{γ₀} nœud par nœud sur toutes les tranches."""
    gap = u_mu0.values - w_gamma0.values
    worst = float(gap.min())
    return {"holds": bool(worst >= -slack * (1.0 + w_gamma0.sup_norm())), "min_gap": worst}


# =============================================================================
# LOCALISATION DE L'EXPLOSION
# =============================================================================

@dataclass(eq=False)
class LocusReport:
    """Classement par point du réseau (K tranches × n nœuds)."""
    grows: np.ndarray
    slopes: np.ndarray
    phi_support: np.ndarray
    eps_phi: float
    fraction_in_support: float

    def to_frame(self) -> pd.DataFrame:
        K, n = self.grows.shape
        return pd.DataFrame({
            "node_id": np.tile(np.arange(n), K),
            "time_index": np.repeat(np.arange(K), n),
            "class": np.where(self.grows.ravel(), "grows", "bounded"),
            "growth_slope": self.slopes.ravel(),
        })


def blowup_locus(curve: BifurcationCurve, phi_inf: Trajectory, top: int = 3) -> LocusReport:
    """
    Pente de log u_μ contre log(μ* − μ) sur les `top` derniers échelons réussis.

    « grows » si la pente < −0.5 ; tout est « bounded » si μ* = +∞.

    Raises:
        InvalidRequestError: moins de `top` échelons convergés
    """
    pairs = [(mu, s) for mu, s in zip(curve.mu_values, curve.solutions) if s is not None]
    if len(pairs) < top:
        raise InvalidRequestError(
            f"Au moins {top} échelons convergés requis (reçu {len(pairs)})"
        )
    pairs = pairs[-top:]
    K = pairs[0][1].u.steps
    n = pairs[0][1].u.values.shape[1]

    if math.isinf(curve.mu_star):
        slopes = np.full((K, n), math.nan)
        grows = np.zeros((K, n), dtype=bool)
    else:
        x = np.log(np.array([curve.mu_star - mu for mu, _ in pairs]))
        tiny = np.finfo(float).tiny
        y = np.stack([np.log(np.maximum(s.u.values[:K], tiny)) for _, s in pairs])
        xc = x - x.mean()
        slopes = np.tensordot(xc, y - y.mean(axis=0), axes=(0, 0)) / float(xc @ xc)
        positive = np.all(np.stack([s.u.values[:K] for _, s in pairs]) > 0, axis=0)
        grows = positive & (slopes < GROWTH_THRESHOLD)

    phi = phi_inf.values[:K]
    eps_phi = PHI_RELATIVE_EPS * float(np.max(phi))
    support = phi > eps_phi
    n_grows = int(grows.sum())
    fraction = float((grows & support).sum() / n_grows) if n_grows else 1.0
    logger.info("Localisation : %d points « grows », %.1f %% dans {φ∞ > ε}",
                n_grows, 100.0 * fraction)
    return LocusReport(grows, slopes, support, eps_phi, fraction)


# =============================================================================
# PROFILS DE LA SUR-SOLUTION LOCALE
# =============================================================================

def bernoulli_z(s: float, mu_star: float, cB: float, p: float, t: Any) -> Any:
    """
    Solution de ż = μ*z − cB z^p explosant en t = s⁺ :

        z(t) = [(cB/μ*)(1 − e^{−(p−1)μ*(t−s)})]^{−1/(p−1)}

    et [(p−1)cB(t−s)]^{−1/(p−1)} pour μ* = 0.

    Raises:
        DomainError: t ≤ s, cB ≤ 0 ou p ≤ 1
    """
    if cB <= 0 or p <= 1:
        raise DomainError(f"Paramètres invalides : cB={cB}, p={p}")
    lag = np.asarray(t, dtype=float) - float(s)
    if np.any(lag <= 0):
        raise DomainError("bernoulli_z exige t > s")
    q = p - 1.0
    if mu_star == 0:
        base = q * cB * lag
    else:
        base = (cB / mu_star) * (-np.expm1(-q * mu_star * lag))
    out = np.power(base, -1.0 / q)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(eq=False)
class BlowupProfile:
    """w sur la boîte U (valeur V_big au bord) et suivi de l'échelle en V_big."""
    values: np.ndarray
    nodes: np.ndarray
    v_big: float
    converged: bool
    ladder: List[float] = field(default_factory=list)
    deep_values: List[np.ndarray] = field(default_factory=list)


def _box_laplacian(shape: Tuple[int, ...], spacing: Tuple[float, ...]) -> sp.csr_matrix:
    """−Δ_h sur les nœuds intérieurs d'une boîte (ordre numpy, x le plus rapide)."""
    mats = []
    for count, h in zip(shape, spacing):
        m = count - 2
        mats.append(sp.diags([-np.ones(m - 1), 2.0 * np.ones(m), -np.ones(m - 1)],
                             [-1, 0, 1]) / (h * h))
    if len(mats) == 1:
        return mats[0].tocsr()
    ny, nx = shape[0] - 2, shape[1] - 2
    Ly, Lx = mats[0], mats[1]
    return (sp.kron(sp.identity(ny), Lx) + sp.kron(Ly, sp.identity(nx))).tocsr()


def _boundary_coupling(shape: Tuple[int, ...], spacing: Tuple[float, ...]) -> np.ndarray:
    """Poids des voisins de bord (à multiplier par V_big)."""
    inner = tuple(c - 2 for c in shape)
    out = np.zeros(inner)
    for axis, h in enumerate(spacing):
        index = [slice(None)] * len(inner)
        index[axis] = 0
        out[tuple(index)] += 1.0 / (h * h)
        index[axis] = -1
        out[tuple(index)] += 1.0 / (h * h)
    return out.ravel()


def _newton_box(L: sp.csr_matrix, edge: np.ndarray, a: float, c: float, p: float,
                v_big: float, w0: np.ndarray) -> np.ndarray:
    rhs = edge * v_big
    for damping in (1.0, 0.5, 0.25):
        w = w0.copy()
        for _ in range(NEWTON_MAX_ITER):
            F = L @ w - a * w + c * np.power(w, p) - rhs
            J = L + sp.diags(c * p * np.power(w, p - 1.0) - a)
            delta = splu(J.tocsc()).solve(F)
            if not np.all(np.isfinite(delta)):
                break
            w = np.maximum(w - damping * delta, 1e-300)
            if np.max(np.abs(delta)) <= 1e-12 * (1.0 + np.max(w)):
                return w
        logger.debug("Newton (V_big=%.3g) non convergé avec amortissement %.2f", v_big, damping)
    raise SolverError(f"Newton divergent pour le profil elliptique (V_big={v_big:.3g})",
                      {"v_big": v_big})


def elliptic_blowup_w(mesh: Mesh, box: Sequence[Tuple[int, int]], mu_star: float,
                      alpha0: float, alpha1: float, cB: float, p: float) -> BlowupProfile:
    """
    −Δw = (μ*/α₀)w − (cB/α₁)w^p sur U, w = V_big sur ∂U, V_big croissant.

    On s'arrête dès que les valeurs profondes (à distance ≥ moitié de la
    demi-largeur du bord) varient de moins de 1e−6 en relatif.

    Raises:
        InvalidRequestError: moins de 3 nœuds intérieurs par direction
        SolverError: Newton divergent malgré l'amortissement
    """
    counts = [hi - lo + 1 for lo, hi in box]
    if any(c - 2 < 3 for c in counts):
        raise InvalidRequestError("La boîte doit contenir au moins 3 nœuds intérieurs par direction",
                                  {"box": [tuple(b) for b in box]})
    if p <= 1 or cB <= 0 or alpha0 <= 0 or alpha1 <= 0:
        raise DomainError("Paramètres du profil elliptique invalides")

    shape = tuple(reversed(counts))
    spacing = tuple(reversed(mesh.spacing[:len(box)]))
    a = mu_star / alpha0
    c = cB / alpha1
    L = _box_laplacian(shape, spacing)
    edge = _boundary_coupling(shape, spacing)

    inner = tuple(s - 2 for s in shape)
    depth = np.full(inner, np.inf)
    for axis, m in enumerate(inner):
        idx = np.arange(m)
        d = np.minimum(idx + 1, m - idx)
        view = [1] * len(inner)
        view[axis] = m
        depth = np.minimum(depth, d.reshape(view))
    half = min(inner) // 2
    deep = (depth >= max(1, half // 2)).ravel()

    equilibrium = (a / c) ** (1.0 / (p - 1.0)) if a > 0 else 0.0
    base = equilibrium if equilibrium > 0 else 1.0
    profile = BlowupProfile(np.empty(0), mesh.box_nodes(box), math.nan, False)
    w = None
    previous = None
    for e in V_LADDER_EXPONENTS:
        v_big = base * 10.0 ** e
        w = _newton_box(L, edge, a, c, p, v_big, np.full(L.shape[0], v_big) if w is None else w)
        profile.ladder.append(v_big)
        profile.deep_values.append(w[deep].copy())
        profile.v_big = v_big
        if previous is not None:
            change = np.max(np.abs(w[deep] - previous) / np.maximum(np.abs(w[deep]), 1e-300))
            if change < INTERIOR_TOL:
                profile.converged = True
                break
        previous = w[deep].copy()

    full = np.full(shape, profile.v_big)
    full[tuple(slice(1, -1) for _ in shape)] = w.reshape(inner)
    profile.values = full.ravel()
    if not profile.converged:
        logger.info("Profil elliptique : intérieur encore sensible à V_big = %.3g", profile.v_big)
    return profile


# =============================================================================
# SOUS-CYLINDRES ET CERTIFICATS
# =============================================================================

@dataclass(frozen=True)
class SubCylinder:
    """Boîte d'indices (par direction x, y) × fenêtre [s, t] de pas de temps."""
    space_box: Tuple[Tuple[int, int], ...]
    time_window: Tuple[int, int]
    margin: int = 2

    def nodes(self, mesh: Mesh) -> np.ndarray:
        return mesh.box_nodes(self.space_box)

    def mask(self, mesh: Mesh, K: int) -> np.ndarray:
        out = np.zeros((K, mesh.n), dtype=bool)
        s, t = self.time_window
        out[np.ix_(np.arange(s, t + 1) % K, self.nodes(mesh))] = True
        return out


def propose_cylinders(Qb: SpaceTimeSet, mesh: Mesh, margin: int = 2,
                      max_cylinders: int = 16, min_nodes: int = 5) -> List[SubCylinder]:
    """
    Boîtes maximales gloutonnes dans Q_b érodé de `margin` mailles (sans bouclage en temps).
    """
    grid = Qb.to_grid()
    dim = grid.ndim - 1
    size = 2 * margin + 1
    eroded = ndimage.binary_erosion(grid, structure=np.ones((size,) * (dim + 1), dtype=bool),
                                    border_value=0)
    remaining = eroded.copy()
    cylinders: List[SubCylinder] = []

    def fits(k_lo, k_hi, lo, hi) -> bool:
        region = (slice(k_lo, k_hi + 1),) + tuple(slice(l, h + 1) for l, h in zip(lo, hi))
        return bool(eroded[region].all())

    while remaining.any() and len(cylinders) < max_cylinders:
        start = np.argwhere(remaining)[0]
        k = int(start[0])
        lo, hi = list(start[1:]), list(start[1:])
        grown = True
        while grown:
            grown = False
            for axis in range(dim):
                if lo[axis] > 0:
                    trial = lo.copy()
                    trial[axis] -= 1
                    if fits(k, k, trial, hi):
                        lo, grown = trial, True
                if hi[axis] < grid.shape[axis + 1] - 1:
                    trial = hi.copy()
                    trial[axis] += 1
                    if fits(k, k, lo, trial):
                        hi, grown = trial, True
        k_lo, k_hi = k, k
        while k_hi + 1 < grid.shape[0] and fits(k_lo, k_hi + 1, lo, hi):
            k_hi += 1
        while k_lo > 0 and fits(k_lo - 1, k_hi, lo, hi):
            k_lo -= 1

        region = (slice(k_lo, k_hi + 1),) + tuple(slice(l, h + 1) for l, h in zip(lo, hi))
        remaining[region] = False
        widths = [h - l + 1 for l, h in zip(lo, hi)]
        if k_hi > k_lo and min(widths) >= min_nodes:
            box = tuple((int(lo[a]), int(hi[a])) for a in reversed(range(dim)))
            cylinders.append(SubCylinder(box, (k_lo, k_hi), margin))
    logger.info("%d sous-cylindres proposés dans Q_b", len(cylinders))
    return cylinders


@dataclass(eq=False)
class BlowupCertificate:
    cylinder: SubCylinder
    B: float
    z_profile: np.ndarray
    w_profile: Optional[BlowupProfile]
    verified_mu: List[float]
    failures: List[Dict[str, Any]]
    max_u: float
    max_v: float
    reason: str = ""

    @property
    def verified(self) -> bool:
        return not self.failures and not self.reason

    def to_row(self, cylinder_id: int, mesh: Mesh) -> Dict[str, Any]:
        row: Dict[str, Any] = {"cylinder_id": cylinder_id}
        for d, (axis, (lo, hi)) in enumerate(zip("xy", self.cylinder.space_box)):
            row[f"{axis}_lo"] = float(mesh.bounds[d][0] + lo * mesh.spacing[d])
            row[f"{axis}_hi"] = float(mesh.bounds[d][0] + hi * mesh.spacing[d])
        row.update({
            "s": self.cylinder.time_window[0],
            "t": self.cylinder.time_window[1],
            "B": self.B,
            "max_u": self.max_u,
            "max_v": self.max_v,
            "verified": self.verified,
        })
        return row


def certify_local_bound(cyl: SubCylinder, curve: BifurcationCurve, problem: LogisticProblem,
                        mu_bound: Optional[float] = None) -> BlowupCertificate:
    """
    Construit v = w + z(t − t_s) sur le cylindre et contrôle u_μ ≤ v à chaque échelon.

    `mu_bound` remplace μ*(b) (obligatoire si μ* = +∞, par défaut le plus
    grand μ de la courbe). Les violations sont listées, jamais levées.

    Raises:
        InvalidRequestError: forme −α(t)Δ ou certificat de croissance absents
    """
    coeffs = problem.form.coeffs
    if coeffs.alpha_bounds is None or not coeffs.is_laplacian_form:
        raise InvalidRequestError("Certificat local : forme −α(t)Δ avec (α₀, α₁) requise")
    if problem.nl.growth is None:
        raise InvalidRequestError("Certificat local : certificat de croissance (c, p) requis")
    alpha0, alpha1 = coeffs.alpha_bounds
    c, p = problem.nl.growth
    mesh, grid = problem.mesh, problem.grid
    K = grid.K
    s, t = cyl.time_window
    nodes = cyl.nodes(mesh)
    layers = np.arange(s, t + 1) % K

    B = float(problem.weight.values[np.ix_(layers, nodes)].min())
    if mu_bound is None:
        mu_bound = curve.mu_star if math.isfinite(curve.mu_star) else float(np.max(curve.mu_values))
    if B <= 0:
        return BlowupCertificate(cyl, B, np.empty(0), None, [], [], math.nan, math.nan,
                                 reason="b s'annule sur le cylindre (B ≤ 0)")

    cB = c * B
    lags = (np.arange(s + 1, t + 1) - s) * grid.dt
    z = np.asarray(bernoulli_z(0.0, mu_bound, cB, p, lags), dtype=float)
    profile = elliptic_blowup_w(mesh, cyl.space_box, mu_bound, alpha0, alpha1, cB, p)
    v = profile.values[None, :] + z[:, None]

    verified, failures = [], []
    max_u = 0.0
    for j, (mu, sol) in enumerate(zip(curve.mu_values, curve.solutions)):
        if sol is None:
            continue
        u = sol.u.values[np.ix_(layers[1:], nodes)]
        max_u = max(max_u, float(u.max()))
        excess = u - v
        if np.all(excess <= CERTIFICATE_SLACK * (1.0 + np.abs(v))):
            verified.append(float(mu))
        else:
            k, i = np.unravel_index(int(np.argmax(excess)), excess.shape)
            failures.append({"rung": j, "mu": float(mu), "node": int(nodes[i]),
                             "time_index": int(layers[1:][k]), "excess": float(excess[k, i])})
    cert = BlowupCertificate(cyl, B, z, profile, verified, failures, max_u, float(v.max()))
    if failures:
        logger.warning("Certificat en échec sur %d échelon(s) (cylindre %s)", len(failures),
                       cyl.space_box)
    return cert


def certify_all(cylinders: Sequence[SubCylinder], curve: BifurcationCurve,
                problem: LogisticProblem, threads: int = 1,
                mu_bound: Optional[float] = None) -> List[BlowupCertificate]:
    def run(cyl):
        return certify_local_bound(cyl, curve, problem, mu_bound)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            return list(executor.map(run, cylinders))
    return [run(c) for c in cylinders]


# =============================================================================
# DIAGNOSTICS
# =============================================================================

def _cutoff(mesh: Mesh, inner: SubCylinder, outer: SubCylinder, grid: TimeGrid):
    """Fonction plateau : 1 sur Q₁, rampes linéaires nulles sur le bord parabolique de Q₂."""
    nodes = outer.nodes(mesh)
    space = np.ones(nodes.size)
    grad_max = 0.0
    for d, ((olo, ohi), (ilo, ihi)) in enumerate(zip(outer.space_box, inner.space_box)):
        h = mesh.spacing[d]
        x = (mesh.nodes[nodes, d] - mesh.bounds[d][0]) / h
        left, right = max(ilo - olo, 1), max(ohi - ihi, 1)
        ramp = np.clip(np.minimum((x - olo) / left, (ohi - x) / right), 0.0, 1.0)
        space *= ramp
        grad_max = max(grad_max, 1.0 / (min(left, right) * h))
    s2, t2 = outer.time_window
    s1 = inner.time_window[0]
    lead = max(s1 - s2, 1)
    k = np.arange(s2, t2 + 1)
    time = np.clip((k - s2) / lead, 0.0, 1.0)
    dvdt = 1.0 / (lead * grid.dt)
    return nodes, space, time, grad_max, dvdt


def sobolev_diagnostic(Q1: SubCylinder, Q2: SubCylinder, u: Trajectory,
                       problem: LogisticProblem, mu_star: float) -> Dict[str, Any]:
    """
    ‖u‖²_{L²(H¹(Q₁))} comparé à [(2/α₀)(μ*₊ + ‖v̇v‖ + 2α₁‖∇v‖²) + 1]‖u‖²_{L²(Q₂)}.

    La constante C² = |μ*|‖v‖ + ‖v̇v‖ + α₁‖∇v‖² est rapportée à titre indicatif.
    """
    coeffs = problem.form.coeffs
    if coeffs.alpha_bounds is None:
        raise InvalidRequestError("Diagnostic de Sobolev : bornes (α₀, α₁) requises")
    alpha0, alpha1 = coeffs.alpha_bounds
    mesh, grid = problem.mesh, problem.grid
    K = grid.K
    _, _, _, grad_max, dvdt = _cutoff(mesh, Q1, Q2, grid)

    inner_nodes = Q1.nodes(mesh)
    inner_set = np.zeros(mesh.n, dtype=bool)
    inner_set[inner_nodes] = True
    outer_nodes = Q2.nodes(mesh)
    w = mesh.weights
    dt = grid.dt

    lhs = 0.0
    for k in range(Q1.time_window[0], Q1.time_window[1] + 1):
        uk = u.values[k % K]
        energy = float(np.sum(w[inner_nodes] * uk[inner_nodes] ** 2))
        for fs in mesh.faces:
            keep = inner_set[fs.i] & inner_set[fs.j]
            diff = uk[fs.i[keep]] - uk[fs.j[keep]]
            energy += float(np.sum(fs.area[keep] / fs.h * diff * diff))
        lhs += dt * energy
    l2_outer = sum(dt * float(np.sum(w[outer_nodes] * u.values[k % K][outer_nodes] ** 2))
                   for k in range(Q2.time_window[0], Q2.time_window[1] + 1))

    c_squared = abs(mu_star) + dvdt + alpha1 * grad_max ** 2
    factor = (2.0 / alpha0) * (max(mu_star, 0.0) + dvdt + 2.0 * alpha1 * grad_max ** 2) + 1.0
    rhs = factor * l2_outer * (1.0 + TOL_QUAD)
    return {
        "lhs": lhs,
        "rhs": rhs,
        "C": math.sqrt(c_squared),
        "grad_cutoff": grad_max,
        "dvdt_cutoff": dvdt,
        "ratio": lhs / rhs if rhs > 0 else (0.0 if lhs == 0 else math.inf),
        "passed": bool(lhs <= rhs),
    }


def q_infinity_cover(certificates: Sequence[BlowupCertificate], Q0: SpaceTimeSet,
                     mesh: Mesh) -> Tuple[SpaceTimeSet, Dict[str, Any]]:
    """
    Masque Q∞ candidat : points intérieurs non couverts par un cylindre certifié.

    Une composante de Q₀ qui ne fait pas le tour de la période et dont le
    voisinage immédiat est entièrement couvert est déclarée bornée.
    """
    K = Q0.K
    covered = np.zeros((K, mesh.n), dtype=bool)
    for cert in certificates:
        if cert.verified:
            covered |= cert.cylinder.mask(mesh, K)

    labels, count = q0_components(Q0)
    shape = (K,) + tuple(mesh.grid_shape)
    cover_grid = covered.reshape(shape)
    structure = np.ones((3,) * len(shape), dtype=bool)
    enclosed = []
    bounded = covered.copy()
    for label in range(1, count + 1):
        comp = (labels == label)
        if np.all(comp.any(axis=1)):
            continue
        comp_grid = comp.reshape(shape)
        ring = ndimage.binary_dilation(comp_grid, structure=structure) & ~comp_grid
        if ring.any() and np.all(cover_grid[ring]):
            bounded |= comp
            enclosed.append(label)

    qinf = ~bounded & ~mesh.is_boundary[None, :]
    report = {
        "covered_points": int(covered.sum()),
        "covered_q0": int((covered & Q0.mask).sum()),
        "enclosed_components": enclosed,
        "qinf_points": int(qinf.sum()),
    }
    return SpaceTimeSet(qinf, "Qinf", mesh.grid_shape), report


def limit_equation_residual(problem: LogisticProblem, sol: PeriodicSolution,
                            bounded_mask: np.ndarray, mu_star: float) -> Dict[str, float]:
    """
    Résidu discret de u̇ + A u + c₀u − μ*u + b g(u)u sur les points classés bornés.

    Diagnostic seulement : u∞ n'est jamais formé.
    """
    form, grid, mesh = problem.form, problem.grid, problem.mesh
    free = mesh.free_nodes
    dt = grid.dt
    res = np.zeros((grid.K, mesh.n))
    for k in range(grid.K):
        t1 = (k + 1) * dt
        u0, u1 = sol.u.values[k], sol.u.values[k + 1]
        Au = np.zeros(mesh.n)
        Au[free] = (form.form_at(t1) @ u1[free]) / form.mass_free
        reaction = problem.weight.values[k + 1] * problem.nl.g(mesh.nodes, t1, u1) * u1
        res[k] = (u1 - u0) / dt + Au - mu_star * u1 + reaction
    res[:, ~np.isin(np.arange(mesh.n), free)] = 0.0
    sel = np.abs(res[bounded_mask]) if np.any(bounded_mask) else np.zeros(1)
    scale = 1.0 + float(np.max(np.abs(sol.u.values)))
    return {
        "max_residual": float(sel.max()),
        "mean_residual": float(sel.mean()),
        "relative": float(sel.max()) / scale,
        "points": int(np.sum(bounded_mask)),
    }
