"""
Maillages uniformes et assemblage de la forme bilinéaire discrète.

Maillage par sommets (volumes finis centrés aux nœuds) :
- 1D : intervalle [a, b] à n nœuds
- 2D : rectangle [ax, bx] × [ay, by] à nx × ny nœuds, indice iy*nx + ix

Chaque nœud porte une cellule duale de mesure w_i (masse condensée).
La forme 𝔞(t, u, v) est assemblée face par face :
- diffusion a_dd · aire / h (stencil à 3 points en 1D, 5 points en 2D)
- terme conservatif a_d u ∂_d v et convection b_d ∂_d u v centrés
- ordre zéro c₀ pondéré par la masse, Robin β₀ pondéré par la mesure de face

Les nœuds de Dirichlet (Γ₀) sont éliminés par restriction aux degrés de
liberté libres. Un nœud partagé entre un côté Dirichlet et un côté Robin
est traité comme Dirichlet.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import InvalidMeshError, NotEllipticError, RejectedInputError

logger = logging.getLogger(__name__)

# =============================================================================
# CONSTANTES
# =============================================================================

BC_KINDS = ("dirichlet", "robin")
BC_ALIASES = {"neumann": "robin"}
SIDES_1D = ("left", "right")
SIDES_2D = ("left", "right", "bottom", "top")
NORMAL_TOL = 1e-12
DEFAULT_SAMPLE_STEPS = 64


# =============================================================================
# TYPES
# =============================================================================

@dataclass(frozen=True)
class BoundaryFace:
    """Portion de bord attachée à un nœud : normale sortante et mesure."""
    node: int
    normal: Tuple[float, ...]
    weight: float
    side: str


@dataclass(frozen=True, eq=False)
class FaceSet:
    """Faces intérieures orientées selon une direction d (j = voisin de i en +d)."""
    direction: int
    i: np.ndarray
    j: np.ndarray
    area: np.ndarray
    h: float
    midpoints: np.ndarray


@dataclass(frozen=True, eq=False)
class Mesh:
    """
    Grille uniforme avec partition du bord Γ₀ (Dirichlet) / Γ₁ (Robin).

    `grid_shape` suit l'ordre des tableaux numpy : (nx,) en 1D, (ny, nx) en 2D.
    """
    dim: int
    bounds: Tuple[Tuple[float, float], ...]
    counts: Tuple[int, ...]
    spacing: Tuple[float, ...]
    nodes: np.ndarray
    cells: np.ndarray
    boundary_faces: Tuple[BoundaryFace, ...]
    gamma0_nodes: np.ndarray
    gamma1_faces: Tuple[int, ...]
    h: float
    weights: np.ndarray
    bc: Dict[str, str]
    faces: Tuple[FaceSet, ...] = field(repr=False)

    # ──────────────────────────────────────────────────────────────────────
    # Propriétés
    # ──────────────────────────────────────────────────────────────────────

    @property
    def n(self) -> int:
        return int(self.nodes.shape[0])

    @property
    def grid_shape(self) -> Tuple[int, ...]:
        return tuple(reversed(self.counts))

    @property
    def is_dirichlet(self) -> np.ndarray:
        mask = np.zeros(self.n, dtype=bool)
        mask[self.gamma0_nodes] = True
        return mask

    @property
    def free_nodes(self) -> np.ndarray:
        return np.flatnonzero(~self.is_dirichlet)

    @property
    def boundary_nodes(self) -> np.ndarray:
        return np.unique([f.node for f in self.boundary_faces])

    @property
    def is_boundary(self) -> np.ndarray:
        mask = np.zeros(self.n, dtype=bool)
        mask[self.boundary_nodes] = True
        return mask

    @property
    def interior_nodes(self) -> np.ndarray:
        return np.flatnonzero(~self.is_boundary)

    @property
    def has_dirichlet(self) -> bool:
        return self.gamma0_nodes.size > 0

    @property
    def measure(self) -> float:
        return float(np.prod([hi - lo for lo, hi in self.bounds]))

    # ──────────────────────────────────────────────────────────────────────
    # Requêtes
    # ──────────────────────────────────────────────────────────────────────

    def gamma1_nodes(self) -> np.ndarray:
        return np.unique([self.boundary_faces[k].node for k in self.gamma1_faces]).astype(int)

    def boundary_tags(self) -> List[str]:
        tags = ["interior"] * self.n
        for node in self.gamma1_nodes():
            tags[node] = "gamma1"
        for node in self.gamma0_nodes:
            tags[node] = "gamma0"
        return tags

    def restrict(self, u: np.ndarray) -> np.ndarray:
        """Valeurs nodales complètes → degrés de liberté libres."""
        u = np.asarray(u, dtype=float)
        return u[..., self.free_nodes]

    def extend(self, u_free: np.ndarray) -> np.ndarray:
        """Degrés de liberté libres → valeurs nodales (zéro sur Γ₀)."""
        u_free = np.asarray(u_free, dtype=float)
        out = np.zeros(u_free.shape[:-1] + (self.n,))
        out[..., self.free_nodes] = u_free
        return out

    def dist_to_boundary(self) -> np.ndarray:
        dist = np.full(self.n, np.inf)
        for d, (lo, hi) in enumerate(self.bounds):
            x = self.nodes[:, d]
            dist = np.minimum(dist, np.minimum(x - lo, hi - x))
        return np.maximum(dist, 0.0)

    def to_grid(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values)
        return values.reshape(values.shape[:-1] + self.grid_shape)

    def box_nodes(self, box: Sequence[Tuple[int, int]]) -> np.ndarray:
        """Nœuds d'une boîte d'indices ((ix_lo, ix_hi), (iy_lo, iy_hi)) bornes incluses."""
        ranges = [np.arange(lo, hi + 1) for lo, hi in box]
        if self.dim == 1:
            return ranges[0]
        iy, ix = np.meshgrid(ranges[1], ranges[0], indexing="ij")
        return (iy * self.counts[0] + ix).ravel()


# =============================================================================
# CONSTRUCTION
# =============================================================================

def _normalize_kind(kind: str, side: str) -> str:
    k = str(kind).strip().lower()
    k = BC_ALIASES.get(k, k)
    if k not in BC_KINDS:
        raise InvalidMeshError(
            f"Condition aux limites inconnue '{kind}' sur le côté {side}",
            {"side": side, "kind": kind},
        )
    return k


def _dual_lengths(count: int, h: float) -> np.ndarray:
    dual = np.full(count, h)
    dual[0] = dual[-1] = 0.5 * h
    return dual


def _build(bounds, counts, bc) -> Mesh:
    dim = len(counts)
    for (lo, hi), count in zip(bounds, counts):
        if not (np.isfinite(lo) and np.isfinite(hi)) or lo >= hi:
            raise InvalidMeshError(f"Bornes invalides [{lo}, {hi}]", {"bounds": (lo, hi)})
        if int(count) != count or count < 3:
            raise InvalidMeshError(f"Au moins 3 nœuds requis par direction (reçu {count})",
                                   {"n": count})

    counts = tuple(int(c) for c in counts)
    spacing = tuple((hi - lo) / (c - 1) for (lo, hi), c in zip(bounds, counts))
    axes = [np.linspace(lo, hi, c) for (lo, hi), c in zip(bounds, counts)]
    duals = [_dual_lengths(c, h) for c, h in zip(counts, spacing)]

    if dim == 1:
        nodes = axes[0][:, None]
        weights = duals[0].copy()
        cells = np.column_stack([np.arange(counts[0] - 1), np.arange(1, counts[0])])
        idx = np.arange(counts[0])
    else:
        nx, ny = counts
        yy, xx = np.meshgrid(axes[1], axes[0], indexing="ij")
        nodes = np.column_stack([xx.ravel(), yy.ravel()])
        weights = np.outer(duals[1], duals[0]).ravel()
        idx = np.arange(nx * ny).reshape(ny, nx)
        cells = np.column_stack([
            idx[:-1, :-1].ravel(), idx[:-1, 1:].ravel(),
            idx[1:, 1:].ravel(), idx[1:, :-1].ravel(),
        ])

    # Faces intérieures par direction physique d (axe numpy dim-1-d)
    faces = []
    for d in range(dim):
        axis = dim - 1 - d
        i = np.take(idx, np.arange(counts[d] - 1), axis=axis)
        j = np.take(idx, np.arange(1, counts[d]), axis=axis)
        if dim == 1:
            area = np.ones(i.shape)
        else:
            other = duals[1 - d]
            area = np.broadcast_to(other[:, None] if axis == 1 else other[None, :], i.shape)
        i, j, area = i.ravel(), j.ravel(), np.asarray(area, dtype=float).ravel()
        faces.append(FaceSet(d, i, j, area, spacing[d], 0.5 * (nodes[i] + nodes[j])))

    # Faces de bord
    boundary_faces: List[BoundaryFace] = []
    if dim == 1:
        boundary_faces.append(BoundaryFace(0, (-1.0,), 1.0, "left"))
        boundary_faces.append(BoundaryFace(counts[0] - 1, (1.0,), 1.0, "right"))
    else:
        nx, ny = counts
        for iy in range(ny):
            boundary_faces.append(BoundaryFace(int(idx[iy, 0]), (-1.0, 0.0), float(duals[1][iy]), "left"))
            boundary_faces.append(BoundaryFace(int(idx[iy, -1]), (1.0, 0.0), float(duals[1][iy]), "right"))
        for ix in range(nx):
            boundary_faces.append(BoundaryFace(int(idx[0, ix]), (0.0, -1.0), float(duals[0][ix]), "bottom"))
            boundary_faces.append(BoundaryFace(int(idx[-1, ix]), (0.0, 1.0), float(duals[0][ix]), "top"))

    for face in boundary_faces:
        if abs(np.linalg.norm(face.normal) - 1.0) > NORMAL_TOL or face.weight <= 0:
            raise InvalidMeshError("Face de bord dégénérée", {"side": face.side})

    gamma0 = sorted({f.node for f in boundary_faces if bc[f.side] == "dirichlet"})
    gamma0_set = set(gamma0)
    gamma1 = tuple(k for k, f in enumerate(boundary_faces)
                   if bc[f.side] == "robin" and f.node not in gamma0_set)

    if dim == 1:
        h = spacing[0]
    else:
        h = float(np.hypot(*spacing))

    mesh = Mesh(
        dim=dim,
        bounds=tuple((float(lo), float(hi)) for lo, hi in bounds),
        counts=counts,
        spacing=spacing,
        nodes=nodes,
        cells=cells,
        boundary_faces=tuple(boundary_faces),
        gamma0_nodes=np.asarray(gamma0, dtype=int),
        gamma1_faces=gamma1,
        h=float(h),
        weights=weights,
        bc=dict(bc),
        faces=tuple(faces),
    )
    logger.debug("Maillage %dD : %d nœuds, h=%.4g, |Γ₀|=%d", dim, mesh.n, mesh.h, len(gamma0))
    return mesh


def build_interval_mesh(a: float, b: float, n: int,
                        bc_left: str = "dirichlet", bc_right: str = "dirichlet") -> Mesh:
    """
    Maillage uniforme de [a, b] à n nœuds.

    Args:
        a, b: Extrémités (a < b)
        n: Nombre de nœuds (n ≥ 3)
        bc_left, bc_right: 'dirichlet' ou 'robin' ('neumann' accepté, β₀ = 0)

    Returns:
        Mesh 1D

    Raises:
        InvalidMeshError: n < 3, a ≥ b ou condition inconnue
    """
    bc = {"left": _normalize_kind(bc_left, "left"), "right": _normalize_kind(bc_right, "right")}
    return _build(((a, b),), (n,), bc)


def build_rectangle_mesh(ax: float, bx: float, ay: float, by: float, nx: int, ny: int,
                         bc: Optional[Dict[str, str]] = None) -> Mesh:
    """Maillage uniforme du rectangle ; `bc` associe left/right/bottom/top à un type."""
    bc = dict(bc or {})
    kinds = {side: _normalize_kind(bc.get(side, "dirichlet"), side) for side in SIDES_2D}
    return _build(((ax, bx), (ay, by)), (nx, ny), kinds)


# =============================================================================
# ELLIPTICITÉ
# =============================================================================

def _diffusion_samples(coeffs, points: np.ndarray, times: np.ndarray) -> np.ndarray:
    """Tenseurs a(x, t) échantillonnés, forme (len(times), len(points), dim, dim)."""
    dim = coeffs.dim
    out = np.empty((len(times), len(points), dim, dim))
    for k, t in enumerate(times):
        for j in range(dim):
            for l in range(dim):
                out[k, :, j, l] = coeffs.diffusion[j][l](points, float(t))
    return out


def check_ellipticity(coeffs, mesh: Mesh, times: Optional[np.ndarray] = None,
                      points: Optional[np.ndarray] = None) -> float:
    """
    Constante d'ellipticité α : minimum de la plus petite valeur propre de la
    partie symétrique de (a_jk) sur les échantillons (nœud, instant).

    Raises:
        NotEllipticError: si α ≤ 0 (les points fautifs sont listés)
    """
    if times is None:
        times = np.linspace(0.0, coeffs.T, DEFAULT_SAMPLE_STEPS + 1)
    if points is None:
        points = mesh.nodes
    tensors = _diffusion_samples(coeffs, points, np.asarray(times, dtype=float))
    sym = 0.5 * (tensors + np.swapaxes(tensors, -1, -2))
    smallest = np.linalg.eigvalsh(sym)[..., 0]
    alpha = float(smallest.min())
    if not np.isfinite(alpha) or alpha <= 0:
        bad = np.argwhere(~(smallest > 0))[:5]
        offending = [
            {"x": points[p].tolist(), "t": float(times[k]), "valeur": float(smallest[k, p])}
            for k, p in bad
        ]
        raise NotEllipticError(
            f"Opérateur non elliptique (α = {alpha:.4g})", {"points": offending}
        )
    return alpha


# =============================================================================
# FORME DISCRÈTE
# =============================================================================

class DiscreteForm:
    """
    Matrices de masse et de forme A_h(t) réalisant 𝔞(t, ·, ·).

    Invariant de coercivité : uᵀA_h(t)u + ω₀ uᵀMu ≥ (α/2)‖u‖²_V pour tout u
    nul sur Γ₀, avec ‖u‖²_V = uᵀKu + uᵀMu (K : raideur du laplacien unité).
    """

    def __init__(self, mesh: Mesh, coeffs, sample_times: Optional[np.ndarray] = None):
        if coeffs.dim != mesh.dim:
            raise RejectedInputError(
                f"Dimension des coefficients ({coeffs.dim}) ≠ dimension du maillage ({mesh.dim})"
            )
        self.mesh = mesh
        self.coeffs = coeffs
        self.T = float(coeffs.T)
        if sample_times is None:
            sample_times = np.linspace(0.0, self.T, DEFAULT_SAMPLE_STEPS + 1)
        self.sample_times = np.asarray(sample_times, dtype=float)
        self._free = mesh.free_nodes
        self._cache: Dict[Tuple[float, bool], sp.csr_matrix] = {}

        self._check_structure()
        self.mass = sp.diags(mesh.weights).tocsr()
        self.mass_free = mesh.weights[self._free]
        self.stiffness = self._laplace_stiffness()
        self.stiffness_free = self.stiffness[self._free][:, self._free].tocsc()
        self._dual_lu = None

        self.ellipticity_alpha = self._alpha_samples()
        self.convection_bounds = self._convection_bounds()
        c0_neg = max(0.0, -self._sample_min(coeffs.c0))
        conv = float(sum(c * c for c in self.convection_bounds)) / (2.0 * self.ellipticity_alpha)
        self.step_shift = conv
        self.coercivity_shift = 0.5 * self.ellipticity_alpha + conv + c0_neg
        self.bound_M = self._operator_bound()
        logger.debug("Forme discrète : α=%.4g ω₀=%.4g M=%.4g",
                     self.ellipticity_alpha, self.coercivity_shift, self.bound_M)

    # ──────────────────────────────────────────────────────────────────────
    # Vérifications et constantes
    # ──────────────────────────────────────────────────────────────────────

    def _check_structure(self):
        coeffs, mesh = self.coeffs, self.mesh
        if mesh.dim == 2:
            for j, l in ((0, 1), (1, 0)):
                fld = coeffs.diffusion[j][l]
                if fld.is_zero:
                    continue
                for t in self.sample_times:
                    if np.any(np.abs(fld(mesh.nodes, float(t))) > 1e-14):
                        raise RejectedInputError(
                            "Le stencil à 5 points exige a_12 = a_21 = 0",
                            {"terme": f"a{j + 1}{l + 1}"},
                        )
        robin_nodes = mesh.gamma1_nodes()
        if robin_nodes.size and not coeffs.beta0.is_zero:
            pts = mesh.nodes[robin_nodes]
            for t in self.sample_times:
                vals = coeffs.beta0(pts, float(t))
                if np.any(vals < 0):
                    k = int(np.argmin(vals))
                    raise RejectedInputError(
                        "β₀ < 0 : seule la forme normalisée β₀ ≥ 0 est acceptée",
                        {"x": pts[k].tolist(), "t": float(t), "beta0": float(vals[k])},
                    )

    def _sample_min(self, fld) -> float:
        if fld.is_constant:
            return float(fld.value)
        return float(min(np.min(fld(self.mesh.nodes, float(t))) for t in self.sample_times))

    def _sample_absmax(self, fld, points) -> float:
        if fld.is_constant:
            return abs(float(fld.value))
        return float(max(np.max(np.abs(fld(points, float(t)))) for t in self.sample_times))

    def _alpha_samples(self) -> float:
        pts = np.vstack([self.mesh.nodes] + [fs.midpoints for fs in self.mesh.faces])
        return check_ellipticity(self.coeffs, self.mesh, self.sample_times, pts)

    def _convection_bounds(self) -> List[float]:
        bounds = []
        for d, fs in enumerate(self.mesh.faces):
            worst = 0.0
            drift, conv = self.coeffs.drift[d], self.coeffs.convection[d]
            if drift.is_zero and conv.is_zero:
                bounds.append(0.0)
                continue
            for t in self.sample_times:
                a = np.abs(drift(fs.midpoints, float(t)))
                bn = np.abs(conv(self.mesh.nodes, float(t)))
                worst = max(worst, float(np.max(a + np.maximum(bn[fs.i], bn[fs.j]))))
            bounds.append(worst)
        return bounds

    def _operator_bound(self) -> float:
        c, mesh = self.coeffs, self.mesh
        diff = max(self._sample_absmax(c.diffusion[j][l], mesh.nodes)
                   for j in range(mesh.dim) for l in range(mesh.dim))
        drift = sum(self._sample_absmax(f, mesh.nodes) for f in c.drift)
        conv = sum(self._sample_absmax(f, mesh.nodes) for f in c.convection)
        zero = self._sample_absmax(c.c0, mesh.nodes)
        trace = 1.0 + 1.0 / min(hi - lo for lo, hi in mesh.bounds)
        beta = self._sample_absmax(c.beta0, mesh.nodes) if mesh.gamma1_faces else 0.0
        return float(diff + drift + conv + zero + trace * beta)

    # ──────────────────────────────────────────────────────────────────────
    # Assemblage
    # ──────────────────────────────────────────────────────────────────────

    def _laplace_stiffness(self) -> sp.csr_matrix:
        n = self.mesh.n
        rows, cols, vals = [], [], []
        for fs in self.mesh.faces:
            k = fs.area / fs.h
            rows += [fs.i, fs.j, fs.i, fs.j]
            cols += [fs.i, fs.j, fs.j, fs.i]
            vals += [k, k, -k, -k]
        return sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
        ).tocsr()

    def full_form_at(self, t: float, include_c0: bool = True) -> sp.csr_matrix:
        """A_h(t) sur tous les nœuds (lignes Dirichlet non éliminées)."""
        mesh, coeffs = self.mesh, self.coeffs
        t = float(t)
        n = mesh.n
        rows, cols, vals = [], [], []
        for d, fs in enumerate(mesh.faces):
            a = coeffs.diffusion[d][d](fs.midpoints, t)
            k = a * fs.area / fs.h
            rows += [fs.i, fs.j, fs.i, fs.j]
            cols += [fs.i, fs.j, fs.j, fs.i]
            vals += [k, k, -k, -k]

            if not coeffs.drift[d].is_zero:
                af = 0.5 * coeffs.drift[d](fs.midpoints, t) * fs.area
                rows += [fs.j, fs.j, fs.i, fs.i]
                cols += [fs.i, fs.j, fs.i, fs.j]
                vals += [af, af, -af, -af]

            if not coeffs.convection[d].is_zero:
                bn = coeffs.convection[d](mesh.nodes, t)
                bi = 0.5 * bn[fs.i] * fs.area
                bj = 0.5 * bn[fs.j] * fs.area
                rows += [fs.i, fs.i, fs.j, fs.j]
                cols += [fs.j, fs.i, fs.j, fs.i]
                vals += [bi, -bi, bj, -bj]

        diag = np.zeros(n)
        if include_c0 and not coeffs.c0.is_zero:
            diag += mesh.weights * coeffs.c0(mesh.nodes, t)
        if mesh.gamma1_faces and not coeffs.beta0.is_zero:
            faces = [mesh.boundary_faces[k] for k in mesh.gamma1_faces]
            idx = np.array([f.node for f in faces])
            wts = np.array([f.weight for f in faces])
            beta = coeffs.beta0(mesh.nodes[idx], t)
            if np.any(beta < 0):
                raise RejectedInputError("β₀ < 0 : seule la forme normalisée β₀ ≥ 0 est acceptée",
                                         {"t": t})
            np.add.at(diag, idx, beta * wts)
        rows.append(np.arange(n))
        cols.append(np.arange(n))
        vals.append(diag)

        return sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
        ).tocsr()

    def form_at(self, t: float, include_c0: bool = True) -> sp.csr_matrix:
        """A_h(t) restreinte aux degrés de liberté libres (Dirichlet éliminé)."""
        if self.coeffs.time_independent:
            key = (0.0, include_c0)
        else:
            key = (round(float(t) % self.T, 12), include_c0)
        cached = self._cache.get(key)
        if cached is not None:
            return cached
        full = self.full_form_at(t, include_c0)
        A = full[self._free][:, self._free].tocsr()
        if len(self._cache) > 4096:
            self._cache.clear()
        self._cache[key] = A
        return A

    def c0_at(self, t: float) -> np.ndarray:
        return self.coeffs.c0(self.mesh.nodes, float(t))

    # ──────────────────────────────────────────────────────────────────────
    # Normes discrètes
    # ──────────────────────────────────────────────────────────────────────

    def h_norm(self, u: np.ndarray) -> np.ndarray:
        """‖u‖_H = sqrt(uᵀMu) sur des vecteurs nodaux complets (dernier axe)."""
        u = np.asarray(u, dtype=float)
        return np.sqrt(np.einsum("...i,i,...i->...", u, self.mesh.weights, u))

    def v_norm(self, u: np.ndarray) -> np.ndarray:
        """‖u‖_V = sqrt(uᵀKu + uᵀMu) (norme H¹ discrète)."""
        u = np.asarray(u, dtype=float)
        Ku = (self.stiffness @ u.reshape(-1, self.mesh.n).T).T.reshape(u.shape)
        grad2 = np.einsum("...i,...i->...", u, Ku)
        return np.sqrt(np.maximum(grad2, 0.0) + self.h_norm(u) ** 2)

    def dual_norm(self, f: np.ndarray) -> float:
        """‖f‖_{V'} = sqrt((Mf)ᵀ(K+M)⁻¹(Mf)) sur les degrés de liberté libres."""
        if self._dual_lu is None:
            self._dual_lu = splu((self.stiffness_free + sp.diags(self.mass_free)).tocsc())
        mf = self.mass_free * self.mesh.restrict(f)
        return float(np.sqrt(max(mf @ self._dual_lu.solve(mf), 0.0)))

    # ──────────────────────────────────────────────────────────────────────
    # Propriétés structurelles
    # ──────────────────────────────────────────────────────────────────────

    def is_m_matrix(self, t: float = 0.0, tol: float = 1e-12) -> bool:
        """Z-matrice à diagonale positive et sommes de lignes ≥ 0."""
        A = self.form_at(t).tocoo()
        offdiag = A.data[A.row != A.col]
        diag = A.diagonal()
        scale = max(float(np.max(np.abs(diag))), 1.0)
        row_sums = np.asarray(A.sum(axis=1)).ravel()
        return bool(
            (offdiag.size == 0 or offdiag.max() <= tol * scale)
            and np.all(diag > 0)
            and np.all(row_sums >= -tol * scale)
        )

    def positive_part_coupling(self, t: float, u: np.ndarray) -> Dict[str, float]:
        """
        Couplage 𝔞_h(t, u⁺, u⁻) de la décomposition nodale u = u⁺ − u⁻.

        Seuls les termes hors diagonale contribuent ; pour une M-matrice le
        couplage est ≤ 0, ce qui suffit à la préservation de la positivité.
        """
        u = np.asarray(u, dtype=float)
        if u.shape[-1] == self.mesh.n and self.mesh.n != self._free.size:
            u = self.mesh.restrict(u)
        up, um = np.maximum(u, 0.0), np.maximum(-u, 0.0)
        coupling = float(up @ (self.form_at(t) @ um))
        norm2 = float(u @ u)
        ratio = abs(coupling) / norm2 if norm2 > 0 else 0.0
        return {
            "coupling": coupling,
            "norm2": norm2,
            "tol_offdiag": ratio,
            "sign_ok": bool(coupling <= 1e-14 * max(norm2, 1.0)),
        }


def assemble(mesh: Mesh, coeffs, t: float) -> sp.csr_matrix:
    """A_h(t) sur les nœuds libres, pour un appel ponctuel sans DiscreteForm réutilisée."""
    return DiscreteForm(mesh, coeffs).form_at(t)
