"""
Chargeur des configurations de run (YAML).

Ce module est le point d'entrée unique pour lire un fichier de run :
les valeurs par défaut de defaults.yaml sont fusionnées sous le fichier
utilisateur, puis le résultat est validé (tolérances, expressions,
périodicité en t) avant de produire un RunConfig.

Usage:
    from backend.config_loader import parse_config, dump_config

    config = parse_config("configs/dirichlet_interval.yaml")
    text = dump_config(config)
"""

import copy
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import yaml

from backend.engine.coeffs import CoefficientSet, SpaceTimeField, check_field_periodicity
from backend.engine.errors import (
    ConfigError,
    MissingFieldError,
    PeriodicParabolicError,
)
from backend.security import ExpressionError, compile_expression

logger = logging.getLogger(__name__)

_DEFAULTS_PATH = Path(__file__).parent / "defaults.yaml"

COMMANDS = ("eigen", "mu-star", "logistic", "bifurcate", "blowup", "all")
NEEDS_NONLINEARITY = ("logistic", "bifurcate", "blowup", "all")
SAMPLES_PER_DIM = 9


class ConfigLoader:
    """Valeurs par défaut chargées depuis defaults.yaml."""

    def __init__(self, path: Path = _DEFAULTS_PATH):
        self._path = path
        self._data: Dict = {}
        self._load()

    # ──────────────────────────────────────────────────────────────────────
    # Chargement
    # ──────────────────────────────────────────────────────────────────────

    def _load(self):
        with open(self._path, encoding="utf-8") as f:
            self._data = yaml.safe_load(f) or {}

    def reload(self):
        """Recharge les valeurs par défaut (utile en développement)."""
        self._load()

    # ──────────────────────────────────────────────────────────────────────
    # Propriétés
    # ──────────────────────────────────────────────────────────────────────

    @property
    def defaults(self) -> Dict[str, Any]:
        return copy.deepcopy(self._data)

    @property
    def sections(self) -> List[str]:
        return list(self._data)

    @property
    def commands(self) -> tuple:
        return COMMANDS

    # ──────────────────────────────────────────────────────────────────────
    # Requêtes
    # ──────────────────────────────────────────────────────────────────────

    def get_section(self, name: str) -> Any:
        return copy.deepcopy(self._data.get(name))

    def merged(self, user: Dict[str, Any]) -> Dict[str, Any]:
        """Fusion profonde : les clés utilisateur priment, les dictionnaires sont fusionnés."""
        return _deep_merge(self.defaults, user or {})


def _deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out


# =============================================================================
# RUNCONFIG
# =============================================================================

@dataclass
class RunConfig:
    """Configuration validée d'un run ; `to_dict` / `from_dict` sont inverses."""
    command: str
    mesh: Dict[str, Any]
    time: Dict[str, Any]
    coefficients: Dict[str, Any] = field(default_factory=dict)
    alpha_bounds: Optional[List[float]] = None
    weight: Any = "1"
    nonlinearity: Optional[Dict[str, Any]] = None
    eigen: Dict[str, Any] = field(default_factory=dict)
    sweep: Dict[str, Any] = field(default_factory=dict)
    logistic: Dict[str, Any] = field(default_factory=dict)
    bifurcation: Dict[str, Any] = field(default_factory=dict)
    blowup: Dict[str, Any] = field(default_factory=dict)
    output: Dict[str, Any] = field(default_factory=dict)
    seed: int = 0
    threads: int = 1

    # Raccourcis
    @property
    def T(self) -> float:
        return float(self.time["T"])

    @property
    def K(self) -> int:
        return int(self.time["K"])

    @property
    def theta(self) -> float:
        return float(self.time["theta"])

    @property
    def dim(self) -> int:
        return int(self.mesh["dim"])

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"Sections inconnues dans la configuration : {sorted(unknown)}",
                              {"unknown": sorted(unknown)})
        missing = [name for name in ("command", "mesh", "time") if name not in data]
        if missing:
            raise MissingFieldError(f"Champ obligatoire absent : {missing[0]}",
                                    {"field": missing[0]})
        return cls(**{k: copy.deepcopy(v) for k, v in data.items()})


# =============================================================================
# ÉVALUATION DES EXPRESSIONS
# =============================================================================

def evaluate_constant(value: Any, name: str) -> float:
    """Nombre ou expression sans variable (`pi`, `2*pi`…)."""
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    try:
        compiled = compile_expression(value, variables=())
        return float(np.asarray(compiled()))
    except ExpressionError as exc:
        raise ConfigError(f"Valeur invalide pour '{name}' : {exc}", {"field": name}) from exc


def mesh_bounds(config: RunConfig) -> List[List[float]]:
    return [[evaluate_constant(lo, "mesh.bounds"), evaluate_constant(hi, "mesh.bounds")]
            for lo, hi in config.mesh["bounds"]]


def sample_points(config: RunConfig) -> np.ndarray:
    """Grille d'échantillonnage du contrôle de périodicité."""
    axes = [np.linspace(lo, hi, SAMPLES_PER_DIM) for lo, hi in mesh_bounds(config)]
    if len(axes) == 1:
        return axes[0][:, None]
    gx, gy = np.meshgrid(axes[0], axes[1], indexing="xy")
    return np.column_stack([gx.ravel(), gy.ravel()])


def build_coefficients(config: RunConfig) -> CoefficientSet:
    alpha = None if config.alpha_bounds is None else tuple(float(a) for a in config.alpha_bounds)
    return CoefficientSet.from_expressions(config.T, config.dim, config.coefficients, alpha)


def build_weight_field(config: RunConfig) -> SpaceTimeField:
    return SpaceTimeField.from_expression(config.weight, config.T, "b")


# =============================================================================
# VALIDATION
# =============================================================================

def _require_positive(section: Dict[str, Any], key: str, where: str, integer: bool = False):
    value = section.get(key)
    if value is None:
        return
    if isinstance(value, bool) or not isinstance(value, (int, float)) or value <= 0 \
            or (integer and int(value) != value):
        raise ConfigError(f"'{where}.{key}' doit être un {'entier ' if integer else ''}positif "
                          f"(reçu {value!r})", {"field": f"{where}.{key}"})


def validate_config(config: RunConfig):
    """
    Contrôles de cohérence, compilation des expressions et périodicité en t.

    Raises:
        ConfigError: valeur invalide
        MissingFieldError: champ requis par la commande absent
        PeriodicityError: expression non T-périodique (nomme le champ)
    """
    if config.command not in COMMANDS:
        raise ConfigError(f"Commande inconnue '{config.command}' (attendu : {', '.join(COMMANDS)})",
                          {"field": "command"})
    if config.dim not in (1, 2):
        raise ConfigError("mesh.dim doit valoir 1 ou 2", {"field": "mesh.dim"})
    for key in ("bounds", "n"):
        if len(config.mesh.get(key) or []) != config.dim:
            raise ConfigError(f"mesh.{key} doit avoir {config.dim} entrée(s)",
                              {"field": f"mesh.{key}"})
    _require_positive(config.time, "T", "time")
    _require_positive(config.time, "K", "time", integer=True)
    if config.theta not in (0.5, 1.0):
        raise ConfigError("time.theta doit valoir 0.5 ou 1", {"field": "time.theta"})
    _require_positive(config.eigen, "max_iter", "eigen", integer=True)
    _require_positive(config.logistic, "max_periods", "logistic", integer=True)
    _require_positive(config.logistic, "tol_fix", "logistic")
    _require_positive(config.bifurcation, "n_rungs", "bifurcation", integer=True)
    _require_positive(config.blowup, "max_cylinders", "blowup", integer=True)
    _require_positive({"threads": config.threads}, "threads", "run", integer=True)
    if config.alpha_bounds is not None:
        if len(config.alpha_bounds) != 2 or not 0 < config.alpha_bounds[0] <= config.alpha_bounds[1]:
            raise ConfigError("alpha_bounds doit être [α₀, α₁] avec 0 < α₀ ≤ α₁",
                              {"field": "alpha_bounds"})

    if config.command in NEEDS_NONLINEARITY:
        nl = config.nonlinearity or {}
        for key in ("g", "dg"):
            if nl.get(key) in (None, ""):
                raise MissingFieldError(
                    f"nonlinearity.{key} est requis pour la commande '{config.command}'",
                    {"field": f"nonlinearity.{key}"},
                )
        if config.command == "logistic" and config.logistic.get("mu") is None:
            raise MissingFieldError("logistic.mu est requis pour la commande 'logistic'",
                                    {"field": "logistic.mu"})
        if config.command in ("blowup", "all") and nl.get("growth") is None:
            raise MissingFieldError("nonlinearity.growth [c, p] est requis pour l'explosion",
                                    {"field": "nonlinearity.growth"})

    points = sample_points(config)
    try:
        coeffs = build_coefficients(config)
        weight = build_weight_field(config)
        for key in ("g", "dg"):
            if config.nonlinearity and config.nonlinearity.get(key) is not None:
                compile_expression(config.nonlinearity[key], {"x", "y", "t", "T", "xi"})
    except ExpressionError as exc:
        raise ConfigError(f"Expression refusée : {exc}") from exc
    coeffs.check_periodicity(points)
    check_field_periodicity(weight, config.T, points, "weight")


# =============================================================================
# API
# =============================================================================

_loader: Optional[ConfigLoader] = None


def get_loader() -> ConfigLoader:
    global _loader
    if _loader is None:
        _loader = ConfigLoader()
    return _loader


def load_config_text(text: str, source: str = "<texte>") -> RunConfig:
    """Parse un texte YAML, fusionne les défauts et valide."""
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        if mark is not None:
            raise ConfigError(
                f"YAML invalide dans {source} (ligne {mark.line + 1}, colonne {mark.column + 1})",
                {"line": mark.line + 1, "column": mark.column + 1},
            ) from exc
        raise ConfigError(f"YAML invalide dans {source}") from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{source} : un dictionnaire YAML est attendu à la racine")

    config = RunConfig.from_dict(get_loader().merged(data))
    try:
        validate_config(config)
    except ConfigError:
        raise
    except PeriodicParabolicError as exc:
        raise ConfigError(exc.message, exc.details) from exc
    logger.info("Configuration '%s' validée (commande %s)", source, config.command)
    return config


def parse_config(path) -> RunConfig:
    """
    Lit et valide un fichier de run.

    Raises:
        ConfigError: fichier absent, YAML invalide (ligne/colonne), valeur invalide
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Fichier de configuration introuvable : {path}", {"path": str(path)})
    return load_config_text(path.read_text(encoding="utf-8"), str(path))


def dump_config(config: RunConfig) -> str:
    """YAML tel que load_config_text(dump_config(c)) == c."""
    return yaml.safe_dump(config.to_dict(), sort_keys=False, allow_unicode=True)
