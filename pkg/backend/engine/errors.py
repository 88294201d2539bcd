"""
Hiérarchie d'erreurs du moteur périodique-parabolique.

Toutes les erreurs héritent de PeriodicParabolicError et portent :
- un message lisible (français)
- un dictionnaire `details` pour le diagnostic
- un code de sortie utilisé par la CLI (2 config, 3 numérique, 4 certificat)
"""

from typing import Any, Dict, Optional


class PeriodicParabolicError(Exception):
    """Erreur de base du moteur."""

    exit_code = 3

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}

    def to_dict(self) -> Dict[str, Any]:
        return {
            "type": type(self).__name__,
            "message": self.message,
            "details": self.details,
        }


# =============================================================================
# MAILLAGE / COEFFICIENTS
# =============================================================================

class InvalidMeshError(PeriodicParabolicError):
    """Maillage dégénéré (n trop petit, intervalle vide, CL inconnue)."""
    exit_code = 2


class RejectedInputError(PeriodicParabolicError):
    """Entrée hors de la forme normalisée acceptée (β₀ < 0, poids négatif…)."""
    exit_code = 2


class NotEllipticError(PeriodicParabolicError):
    """Tenseur de diffusion non uniformément elliptique."""
    exit_code = 2


# =============================================================================
# NUMÉRIQUE
# =============================================================================

class SolverError(PeriodicParabolicError):
    """Échec d'un solveur linéaire ou non linéaire."""


class NumericalBlowupError(PeriodicParabolicError):
    """Valeur non finie apparue pendant la propagation."""


class NoPositiveSolutionError(PeriodicParabolicError):
    """Aucune solution périodique positive n'existe pour ces paramètres."""


class EigenIterationError(PeriodicParabolicError):
    """L'itération de la puissance n'a pas convergé."""


class InsufficientLadderError(PeriodicParabolicError):
    """Échelle de γ trop courte pour estimer μ*(b)."""


class InvalidRequestError(PeriodicParabolicError):
    """Opération demandée incompatible avec l'état fourni."""


class OutOfRangeError(PeriodicParabolicError):
    """μ hors de l'intervalle d'existence ]μ₁(0), μ*(b)[."""


class SupersolutionFailureError(PeriodicParabolicError):
    """Impossible de construire une sur-solution (plafond de κ atteint)."""


class MonotonicityFailureError(PeriodicParabolicError):
    """Violation de l'encadrement ou de la monotonie des itérés."""


class CannotDifferentiateError(PeriodicParabolicError):
    """Marge de stabilité non positive : dérivée en μ indéfinie."""


class DivisionGuardError(PeriodicParabolicError):
    """Division par une fonction propre nulle en un point intérieur."""


class PositivityLossError(PeriodicParabolicError):
    """Pas rejeté après le nombre maximal de divisions de dt."""


class DomainError(PeriodicParabolicError):
    """Argument hors du domaine de définition."""
    exit_code = 2


# =============================================================================
# CERTIFICATS / CONFIGURATION
# =============================================================================

class CertificateFailure(PeriodicParabolicError):
    """Un certificat de borne locale n'a pas pu être vérifié."""
    exit_code = 4


class ConfigError(PeriodicParabolicError):
    """Fichier de configuration invalide."""
    exit_code = 2


class PeriodicityError(ConfigError):
    """Expression non T-périodique en t."""


class MissingFieldError(ConfigError):
    """Champ obligatoire absent pour la commande demandée."""


class StageError(PeriodicParabolicError):
    """Erreur d'une étape du pipeline, enveloppant la cause."""

    def __init__(self, stage: str, cause: Exception):
        message = f"Étape '{stage}' en échec : {cause}"
        details = {"stage": stage}
        if isinstance(cause, PeriodicParabolicError):
            details.update(cause.details)
            self.exit_code = cause.exit_code
        super().__init__(message, details)
        self.stage = stage
        self.cause = cause
