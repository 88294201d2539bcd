"""
Champs de coefficients T-périodiques et poids logistique b.

- SpaceTimeField : champ (x, t) ↦ valeur, constant, appelable ou expression
- CoefficientSet : a_jk, a_j, b_k, c₀, β₀ et bornes (α₀, α₁) de la forme −α(t)Δ
- Weight : poids b ≥ 0 échantillonné sur le réseau nœuds × pas de temps
- SpaceTimeSet : masques Q₀ / Q_b

Opérations : troncature b_δ, classification Q₀ / Q_b, recherche d'un chemin
T-périodique dans Q₀ (prédicteur heuristique de μ*(b) < ∞).
"""

import itertools
import logging
from dataclasses import dataclass, replace
from typing import Any, Callable, Dict, Iterator, List, Optional, Tuple

import numpy as np
from scipy import ndimage

from ..security import compile_expression
from .errors import PeriodicityError, RejectedInputError
from .mesh import Mesh

logger = logging.getLogger(__name__)

# =============================================================================
# CONSTANTES
# =============================================================================

PERIODICITY_TOL = 1e-12
RELATIVE_THRESHOLD = 1e-10
DISTANCE_TOL = 1e-12
COEFFICIENT_KEYS = ("a11", "a12", "a21", "a22", "a1", "a2", "b1", "b2", "c0", "beta0")


# =============================================================================
# CHAMPS
# =============================================================================

class SpaceTimeField:
    """
    Champ spatio-temporel évalué nœud par nœud : field(points, t) → (n,).

    Les constantes sont conservées comme scalaires et diffusées à l'évaluation.
    """

    def __init__(self,
                 func: Optional[Callable[[np.ndarray, float], Any]] = None,
                 value: Optional[float] = None,
                 expression: Optional[str] = None,
                 time_independent: bool = False,
                 name: str = ""):
        if func is None and value is None:
            raise ValueError("SpaceTimeField exige une fonction ou une valeur")
        self._func = func
        self._value = None if value is None else float(value)
        self.expression = expression
        self.time_independent = bool(time_independent or value is not None)
        self.name = name

    def __repr__(self) -> str:
        if self.expression is not None:
            return f"SpaceTimeField({self.name}={self.expression!r})"
        if self._value is not None:
            return f"SpaceTimeField({self.name}={self._value})"
        return f"SpaceTimeField({self.name}=<callable>)"

    @classmethod
    def constant(cls, value: float, name: str = "") -> "SpaceTimeField":
        return cls(value=value, expression=repr(float(value)), name=name)

    @classmethod
    def from_callable(cls, func, time_independent: bool = False, name: str = "") -> "SpaceTimeField":
        return cls(func=func, time_independent=time_independent, name=name)

    @classmethod
    def from_expression(cls, expression: Any, T: float, name: str = "") -> "SpaceTimeField":
        """
        Compile une expression de la grammaire restreinte (x, y, t, T, pi, sin…).

        Raises:
            ExpressionError: expression refusée par le compilateur sûr
        """
        if isinstance(expression, (int, float)) and not isinstance(expression, bool):
            return cls(value=float(expression), expression=str(expression), name=name)
        compiled = compile_expression(expression)
        period = float(T)
        if not compiled.variables:
            value = float(np.asarray(compiled(T=period)))
            return cls(value=value, expression=compiled.source, name=name)

        def evaluate(points: np.ndarray, t: float):
            x = points[:, 0]
            y = points[:, 1] if points.shape[1] > 1 else np.zeros_like(x)
            return compiled(x=x, y=y, t=t, T=period)

        return cls(func=evaluate, expression=compiled.source,
                   time_independent=not compiled.depends_on_time, name=name)

    # ──────────────────────────────────────────────────────────────────────
    # Propriétés
    # ──────────────────────────────────────────────────────────────────────

    @property
    def is_constant(self) -> bool:
        return self._value is not None

    @property
    def value(self) -> Optional[float]:
        return self._value

    @property
    def is_zero(self) -> bool:
        return self._value == 0.0

    def __call__(self, points: np.ndarray, t: float) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        n = points.shape[0]
        if self._value is not None:
            return np.full(n, self._value)
        out = np.asarray(self._func(points, float(t)), dtype=float)
        return np.broadcast_to(out, (n,)).copy()


ZERO = SpaceTimeField.constant(0.0, "zero")


@dataclass(frozen=True)
class CoefficientSet:
    """Coefficients T-périodiques de l'opérateur 𝒜(t) et de la condition de Robin."""
    T: float
    dim: int
    diffusion: Tuple[Tuple[SpaceTimeField, ...], ...]
    drift: Tuple[SpaceTimeField, ...]
    convection: Tuple[SpaceTimeField, ...]
    c0: SpaceTimeField = ZERO
    beta0: SpaceTimeField = ZERO
    alpha_bounds: Optional[Tuple[float, float]] = None

    def __post_init__(self):
        if not self.T > 0:
            raise RejectedInputError(f"Période T invalide : {self.T}")

    # ──────────────────────────────────────────────────────────────────────
    # Constructeurs
    # ──────────────────────────────────────────────────────────────────────

    @classmethod
    def laplacian(cls, T: float = 1.0, dim: int = 1, diffusivity: float = 1.0,
                  c0: float = 0.0, beta0: float = 0.0) -> "CoefficientSet":
        """−diffusivity·Δ + c₀, coefficients constants."""
        a = SpaceTimeField.constant(diffusivity, "a")
        diffusion = tuple(tuple(a if j == k else ZERO for k in range(dim)) for j in range(dim))
        return cls(
            T=float(T), dim=dim, diffusion=diffusion,
            drift=(ZERO,) * dim, convection=(ZERO,) * dim,
            c0=SpaceTimeField.constant(c0, "c0"),
            beta0=SpaceTimeField.constant(beta0, "beta0"),
            alpha_bounds=(float(diffusivity), float(diffusivity)),
        )

    @classmethod
    def from_expressions(cls, T: float, dim: int, expressions: Dict[str, Any],
                         alpha_bounds: Optional[Tuple[float, float]] = None) -> "CoefficientSet":
        """
        Construit les coefficients depuis des expressions textuelles.

        Clés reconnues : a11 a12 a21 a22 a1 a2 b1 b2 c0 beta0, ou `alpha`
        pour la forme −α(t)Δ (remplit a11 et a22). Les clés absentes valent
        1 sur la diagonale de diffusion et 0 ailleurs.
        """
        exprs = dict(expressions or {})
        unknown = set(exprs) - set(COEFFICIENT_KEYS) - {"alpha"}
        if unknown:
            raise RejectedInputError(f"Coefficients inconnus : {sorted(unknown)}")
        if "alpha" in exprs:
            for d in range(1, dim + 1):
                exprs.setdefault(f"a{d}{d}", exprs["alpha"])

        def make(key: str, default: float) -> SpaceTimeField:
            if key in exprs:
                return SpaceTimeField.from_expression(exprs[key], T, key)
            return SpaceTimeField.constant(default, key)

        diffusion = tuple(
            tuple(make(f"a{j + 1}{k + 1}", 1.0 if j == k else 0.0) for k in range(dim))
            for j in range(dim)
        )
        return cls(
            T=float(T), dim=dim, diffusion=diffusion,
            drift=tuple(make(f"a{d + 1}", 0.0) for d in range(dim)),
            convection=tuple(make(f"b{d + 1}", 0.0) for d in range(dim)),
            c0=make("c0", 0.0), beta0=make("beta0", 0.0),
            alpha_bounds=None if alpha_bounds is None else tuple(float(a) for a in alpha_bounds),
        )

    def with_c0(self, c0: SpaceTimeField) -> "CoefficientSet":
        return replace(self, c0=c0)

    # ──────────────────────────────────────────────────────────────────────
    # Requêtes
    # ──────────────────────────────────────────────────────────────────────

    def fields(self) -> Iterator[Tuple[str, SpaceTimeField]]:
        for j in range(self.dim):
            for k in range(self.dim):
                yield f"a{j + 1}{k + 1}", self.diffusion[j][k]
        for d in range(self.dim):
            yield f"a{d + 1}", self.drift[d]
            yield f"b{d + 1}", self.convection[d]
        yield "c0", self.c0
        yield "beta0", self.beta0

    @property
    def time_independent(self) -> bool:
        return all(f.time_independent for _, f in self.fields())

    @property
    def is_laplacian_form(self) -> bool:
        """Forme −α(t)Δ : diffusion diagonale isotrope, sans convection."""
        off = all(self.diffusion[j][k].is_zero
                  for j in range(self.dim) for k in range(self.dim) if j != k)
        conv = all(f.is_zero for f in self.drift + self.convection)
        return off and conv

    def check_periodicity(self, points: np.ndarray, n_times: int = 16):
        """Vérifie f(x, s+T) = f(x, s) pour s ∈ [−T, T) ; lève PeriodicityError sinon."""
        for name, fld in self.fields():
            check_field_periodicity(fld, self.T, points, name, n_times)


def check_field_periodicity(fld: SpaceTimeField, T: float, points: np.ndarray,
                            name: str, n_times: int = 16):
    """Échantillonne s ∈ [−T, T) et compare f(x, s) à f(x, s + T)."""
    if fld.time_independent:
        return
    for s in np.linspace(-T, T, 2 * n_times, endpoint=False):
        a = fld(points, float(s))
        b = fld(points, float(s + T))
        gap = np.abs(a - b)
        if not np.all(np.isfinite(a)) or not np.all(np.isfinite(b)):
            raise PeriodicityError(f"Champ '{name}' non borné à t = {s:.4g}",
                                   {"field": name, "t": float(s)})
        if np.any(gap > PERIODICITY_TOL * (1.0 + np.abs(a))):
            k = int(np.argmax(gap))
            raise PeriodicityError(
                f"Champ '{name}' non T-périodique : écart {gap[k]:.3g} en t = {s:.4g}",
                {"field": name, "t": float(s), "x": points[k].tolist()},
            )


# =============================================================================
# POIDS ET ENSEMBLES
# =============================================================================

@dataclass(eq=False)
class Weight:
    """Poids b ≥ 0 sur le réseau (K+1 instants) × n nœuds ; la couche K répète la couche 0."""
    values: np.ndarray
    times: np.ndarray
    grid_shape: Tuple[int, ...]
    boundary: np.ndarray
    threshold_eps: Optional[float] = None
    empty_support: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.times = np.asarray(self.times, dtype=float)
        if self.values.ndim != 2 or self.values.shape[0] != self.times.size:
            raise RejectedInputError("Réseau de poids incompatible avec la grille temporelle")
        if np.any(self.values < -1e-14):
            raise RejectedInputError("Le poids b doit être ≥ 0 sur tout le réseau",
                                     {"min": float(self.values.min())})
        self.values = np.maximum(self.values, 0.0)
        if self.threshold_eps is None:
            self.threshold_eps = RELATIVE_THRESHOLD * float(self.values.max(initial=0.0))

    @classmethod
    def from_field(cls, fld: SpaceTimeField, mesh: Mesh, grid,
                   threshold_eps: Optional[float] = None) -> "Weight":
        times = np.asarray(getattr(grid, "times", grid), dtype=float)
        values = np.stack([fld(mesh.nodes, float(t)) for t in times])
        return cls(values, times, mesh.grid_shape, mesh.is_boundary, threshold_eps)

    @classmethod
    def constant(cls, value: float, mesh: Mesh, grid) -> "Weight":
        return cls.from_field(SpaceTimeField.constant(value), mesh, grid)

    # ──────────────────────────────────────────────────────────────────────
    # Propriétés
    # ──────────────────────────────────────────────────────────────────────

    @property
    def K(self) -> int:
        return self.values.shape[0] - 1

    @property
    def T(self) -> float:
        return float(self.times[-1] - self.times[0])

    @property
    def support(self) -> np.ndarray:
        return self.values > self.threshold_eps

    @property
    def support_min(self) -> float:
        """min de b sur son support (0 si le support est vide)."""
        sup = self.support
        return float(self.values[sup].min()) if sup.any() else 0.0

    @property
    def is_zero(self) -> bool:
        return not self.support.any()

    def at_time(self, t: float) -> np.ndarray:
        """Interpolation linéaire périodique entre couches."""
        dt = self.T / self.K
        s = (float(t) - self.times[0]) % self.T
        k = int(np.floor(s / dt + 1e-12))
        k = min(k, self.K - 1)
        frac = (s - k * dt) / dt
        if frac <= 1e-12:
            return self.values[k]
        return (1.0 - frac) * self.values[k] + frac * self.values[k + 1]


@dataclass(eq=False)
class SpaceTimeSet:
    """Masque booléen (K couches) × n nœuds étiqueté Q0, Qb ou Qinf."""
    mask: np.ndarray
    label: str
    grid_shape: Tuple[int, ...]

    @property
    def count(self) -> int:
        return int(self.mask.sum())

    @property
    def K(self) -> int:
        return self.mask.shape[0]

    def to_grid(self) -> np.ndarray:
        return self.mask.reshape((self.K,) + tuple(self.grid_shape))


# =============================================================================
# OPÉRATIONS
# =============================================================================

def truncate_weight(w: Weight, mesh: Mesh, delta: float) -> Weight:
    """
    Troncature b_δ = b·1_{Ω_δ} : annule b aux nœuds à distance < δ de ∂Ω.

    Le drapeau `empty_support` signale Ω_δ = ∅.
    """
    if delta < 0:
        raise RejectedInputError(f"δ doit être ≥ 0 (reçu {delta})")
    keep = mesh.dist_to_boundary() >= delta - DISTANCE_TOL
    values = np.where(keep[None, :], w.values, 0.0)
    empty = not bool(keep.any())
    if empty:
        logger.warning("Troncature δ=%.4g : Ω_δ vide, poids identiquement nul", delta)
    return Weight(values, w.times, w.grid_shape, w.boundary, w.threshold_eps, empty)


def classify_sets(w: Weight) -> Tuple[SpaceTimeSet, SpaceTimeSet]:
    """
    Q_b : b > ε_b dans tout le voisinage 3×3(×3) ; Q₀ : b ≤ ε_b dans tout le voisinage.

    Le temps est périodique ; Q_b exclut les nœuds du bord.
    """
    K = w.K
    dim = len(w.grid_shape)
    positive = (w.values[:K] > w.threshold_eps).reshape((K,) + tuple(w.grid_shape))
    modes = ["wrap"] + ["nearest"] * dim
    all_positive = ndimage.minimum_filter(positive.astype(np.uint8), size=3, mode=modes) == 1
    none_positive = ndimage.maximum_filter(positive.astype(np.uint8), size=3, mode=modes) == 0
    qb = all_positive.reshape(K, -1) & ~w.boundary[None, :]
    q0 = none_positive.reshape(K, -1)
    return SpaceTimeSet(q0, "Q0", w.grid_shape), SpaceTimeSet(qb, "Qb", w.grid_shape)


def _reach_layers(q0: np.ndarray, start: np.ndarray, structure: np.ndarray) -> List[np.ndarray]:
    layers = [start]
    K = q0.shape[0]
    for k in range(1, K + 1):
        grown = ndimage.binary_dilation(layers[-1], structure=structure)
        layers.append(grown & q0[k % K])
        if not layers[-1].any():
            break
    return layers


def periodic_path_exists(Q0: SpaceTimeSet) -> Tuple[bool, Optional[np.ndarray]]:
    """
    Cherche un cycle de période exacte dans le graphe étagé de Q₀.

    Arêtes : un nœud vers ses voisins spatiaux (déplacements « roi », et
    lui-même) à la couche suivante, le temps bouclant à T.

    Returns:
        (existe, chemin) avec chemin = indices de nœuds aux instants 0…K
        (premier = dernier), None si aucun chemin
    """
    K = Q0.K
    grid = Q0.to_grid()
    dim = grid.ndim - 1
    structure = np.ones((3,) * dim, dtype=bool)

    if not grid[0].any():
        return False, None

    forward = _reach_layers(grid, grid[0], structure)
    if len(forward) < K + 1:
        return False, None
    candidates = np.flatnonzero((forward[K] & grid[0]).ravel())
    if candidates.size == 0:
        return False, None

    edge = np.ones(Q0.grid_shape, dtype=bool)
    edge[tuple(slice(1, -1) for _ in range(dim))] = False
    on_edge = edge.ravel()
    candidates = sorted(candidates, key=lambda c: (bool(on_edge[c]), int(c)))

    for start in candidates:
        seed = np.zeros(Q0.grid_shape, dtype=bool)
        seed.flat[start] = True
        layers = _reach_layers(grid, seed, structure)
        if len(layers) < K + 1 or not layers[K].flat[start]:
            continue
        path = _backtrack(layers, start, Q0.grid_shape)
        logger.debug("Chemin périodique trouvé depuis le nœud %d", start)
        return True, path
    return False, None


def _backtrack(layers: List[np.ndarray], start: int, shape: Tuple[int, ...]) -> np.ndarray:
    K = len(layers) - 1
    path = np.empty(K + 1, dtype=int)
    path[K] = start
    offsets = [o for o in itertools.product((0, -1, 1), repeat=len(shape))]
    for k in range(K - 1, -1, -1):
        here = np.unravel_index(path[k + 1], shape)
        for off in offsets:
            cand = tuple(h + o for h, o in zip(here, off))
            if all(0 <= c < s for c, s in zip(cand, shape)) and layers[k][cand]:
                path[k] = np.ravel_multi_index(cand, shape)
                break
    return path


def q0_components(Q0: SpaceTimeSet) -> Tuple[np.ndarray, int]:
    """Composantes connexes de Q₀ (voisinage complet, raccord à travers t = T)."""
    grid = Q0.to_grid()
    dim = grid.ndim
    labels, count = ndimage.label(grid, structure=np.ones((3,) * dim, dtype=bool))
    if count == 0:
        return labels.reshape(Q0.K, -1), 0

    parent = list(range(count + 1))

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    last, first = labels[-1], labels[0]
    shape = first.shape
    for pos in zip(*np.nonzero(last)):
        for off in itertools.product((-1, 0, 1), repeat=len(shape)):
            q = tuple(p + o for p, o in zip(pos, off))
            if all(0 <= c < s for c, s in zip(q, shape)) and first[q] > 0:
                ra, rb = find(int(last[pos])), find(int(first[q]))
                if ra != rb:
                    parent[max(ra, rb)] = min(ra, rb)

    roots = np.array([find(i) for i in range(count + 1)])
    unique = {r: i for i, r in enumerate(sorted(set(roots[1:])), start=1)}
    remap = np.array([0] + [unique[r] for r in roots[1:]])
    merged = remap[labels]
    return merged.reshape(Q0.K, -1), len(unique)


def moving_window_weight(T: float = 1.0, radius: float = 0.3,
                         amplitude: float = 0.6) -> SpaceTimeField:
    """Refuge mobile : b = 0 si |x − amplitude·sin(2πt/T)| < radius, b = 1 sinon."""
    expr = f"abs(x - {amplitude!r}*sin(2*pi*t/T)) >= {radius!r}"
    return SpaceTimeField.from_expression(expr, T, "b")
