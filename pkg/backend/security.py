"""
=============================================================================
MODULE DE SÉCURITÉ - Cadre Périodique-Parabolique
=============================================================================

Ce module centralise toutes les fonctions de sécurité pour les exécutions
pilotées par fichier de configuration :
- Compilation sûre des expressions de coefficients (liste blanche AST)
- Validation des entrées utilisateur
- Nettoyage des noms de fichiers de sortie
- Gestion sécurisée des erreurs

Aucune expression n'est passée à eval() : l'arbre syntaxique est parcouru
et seuls les nœuds autorisés sont évalués, sur des tableaux numpy.

=============================================================================
"""

import ast
import logging
import operator
import re
from typing import Any, Callable, Dict, FrozenSet, Iterable, Optional

import numpy as np

logger = logging.getLogger(__name__)

# =============================================================================
# CONSTANTES DE SÉCURITÉ
# =============================================================================

# Longueurs maximales pour les inputs
MAX_EXPRESSION_LENGTH = 500
MAX_AST_NODES = 400
MAX_FILENAME_LENGTH = 120

# Variables et constantes reconnues dans les expressions
DEFAULT_VARIABLES = frozenset({"x", "y", "t", "T"})
CONSTANTS = {"pi": float(np.pi), "e": float(np.e)}

# Fonctions autorisées (grammaire volontairement minuscule)
ALLOWED_FUNCTIONS: Dict[str, Callable[..., Any]] = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "abs": np.abs,
    "sqrt": np.sqrt,
    "log": np.log,
    "min": np.minimum,
    "max": np.maximum,
}

_BINARY_OPERATORS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
}

_UNARY_OPERATORS = {
    ast.UAdd: operator.pos,
    ast.USub: operator.neg,
}

_COMPARISONS = {
    ast.Lt: np.less,
    ast.LtE: np.less_equal,
    ast.Gt: np.greater,
    ast.GtE: np.greater_equal,
    ast.Eq: np.equal,
    ast.NotEq: np.not_equal,
}

# Patterns dangereux à bloquer avant même l'analyse syntaxique
DANGEROUS_PATTERNS = [
    r'__',
    r'\bimport\b',
    r'\blambda\b',
    r'\bexec\b',
    r'\beval\b',
    r'\bopen\b',
    r'\bgetattr\b',
    r'[;`$]',
]

DANGEROUS_REGEX = re.compile('|'.join(DANGEROUS_PATTERNS), re.IGNORECASE)


# =============================================================================
# COMPILATION DES EXPRESSIONS
# =============================================================================

class ExpressionError(ValueError):
    """Expression rejetée (syntaxe, nœud interdit, nom inconnu)."""


class CompiledExpression:
    """
    Expression arithmétique compilée, évaluable sur des tableaux numpy.

    Les comparaisons renvoient 1.0 / 0.0, ce qui permet d'écrire des poids
    indicateurs (par ex. `abs(x - 0.6*sin(2*pi*t/T)) >= 0.3`).
    """

    def __init__(self, source: str, tree: ast.Expression, variables: FrozenSet[str]):
        self.source = source
        self._tree = tree
        self.variables = variables

    def __repr__(self) -> str:
        return f"CompiledExpression({self.source!r})"

    @property
    def depends_on_time(self) -> bool:
        return "t" in self.variables

    def __call__(self, **values: Any) -> Any:
        missing = self.variables - set(values)
        if missing:
            raise ExpressionError(
                f"Variables non fournies pour '{self.source}' : {sorted(missing)}"
            )
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            return _evaluate(self._tree.body, values)


def compile_expression(source: Any,
                       variables: Iterable[str] = DEFAULT_VARIABLES) -> CompiledExpression:
    """
    Compile une expression de coefficient après validation.

    Args:
        source: Texte de l'expression (ou nombre)
        variables: Noms de variables autorisés

    Returns:
        CompiledExpression évaluable

    Raises:
        ExpressionError: si l'expression est trop longue, contient un pattern
            dangereux, un nœud non autorisé ou un nom inconnu
    """
    text = str(source).strip()
    if not text:
        raise ExpressionError("Expression vide")
    if len(text) > MAX_EXPRESSION_LENGTH:
        raise ExpressionError(
            f"Expression trop longue ({len(text)} > {MAX_EXPRESSION_LENGTH} caractères)"
        )
    if DANGEROUS_REGEX.search(text):
        raise ExpressionError(f"Expression refusée (motif interdit) : '{text}'")

    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise ExpressionError(
            f"Syntaxe invalide dans '{text}' (colonne {exc.offset})"
        ) from exc

    allowed = frozenset(variables)
    used = set()
    n_nodes = 0
    for node in ast.walk(tree):
        n_nodes += 1
        _check_node(node, allowed, used, text)
    if n_nodes > MAX_AST_NODES:
        raise ExpressionError(f"Expression trop complexe ({n_nodes} nœuds)")

    return CompiledExpression(text, tree, frozenset(used))


def _check_node(node: ast.AST, allowed: FrozenSet[str], used: set, text: str):
    if isinstance(node, (ast.Expression, ast.Load, ast.BoolOp, ast.And, ast.Or)):
        return
    if isinstance(node, ast.Constant):
        if isinstance(node.value, bool) or not isinstance(node.value, (int, float)):
            raise ExpressionError(f"Constante non numérique dans '{text}'")
        return
    if isinstance(node, ast.Name):
        if node.id in allowed:
            used.add(node.id)
        elif node.id not in CONSTANTS and node.id not in ALLOWED_FUNCTIONS:
            raise ExpressionError(f"Nom inconnu '{node.id}' dans '{text}'")
        return
    if isinstance(node, ast.Call):
        if not isinstance(node.func, ast.Name) or node.func.id not in ALLOWED_FUNCTIONS:
            raise ExpressionError(f"Fonction non autorisée dans '{text}'")
        if node.keywords:
            raise ExpressionError(f"Arguments nommés interdits dans '{text}'")
        return
    if isinstance(node, ast.BinOp) and type(node.op) in _BINARY_OPERATORS:
        return
    if isinstance(node, ast.UnaryOp) and type(node.op) in _UNARY_OPERATORS:
        return
    if isinstance(node, ast.Compare) and all(type(op) in _COMPARISONS for op in node.ops):
        return
    if type(node) in _BINARY_OPERATORS or type(node) in _UNARY_OPERATORS:
        return
    if type(node) in _COMPARISONS:
        return
    raise ExpressionError(f"Construction '{type(node).__name__}' interdite dans '{text}'")


def _evaluate(node: ast.AST, values: Dict[str, Any]) -> Any:
    if isinstance(node, ast.Constant):
        return float(node.value)
    if isinstance(node, ast.Name):
        if node.id in values:
            return values[node.id]
        return CONSTANTS[node.id]
    if isinstance(node, ast.BinOp):
        return _BINARY_OPERATORS[type(node.op)](
            _evaluate(node.left, values), _evaluate(node.right, values)
        )
    if isinstance(node, ast.UnaryOp):
        return _UNARY_OPERATORS[type(node.op)](_evaluate(node.operand, values))
    if isinstance(node, ast.Compare):
        left = _evaluate(node.left, values)
        result = True
        for op, comparator in zip(node.ops, node.comparators):
            right = _evaluate(comparator, values)
            result = np.logical_and(result, _COMPARISONS[type(op)](left, right))
            left = right
        return np.where(result, 1.0, 0.0)
    if isinstance(node, ast.BoolOp):
        parts = [np.asarray(_evaluate(v, values)) != 0 for v in node.values]
        combine = np.logical_and if isinstance(node.op, ast.And) else np.logical_or
        out = parts[0]
        for part in parts[1:]:
            out = combine(out, part)
        return np.where(out, 1.0, 0.0)
    if isinstance(node, ast.Call):
        func = ALLOWED_FUNCTIONS[node.func.id]
        args = [_evaluate(a, values) for a in node.args]
        if node.func.id in ("min", "max") and len(args) > 2:
            out = args[0]
            for a in args[1:]:
                out = func(out, a)
            return out
        return func(*args)
    raise ExpressionError(f"Nœud non évaluable : {type(node).__name__}")


# =============================================================================
# VALIDATION DES ENTRÉES
# =============================================================================

def sanitize_filename(filename: str) -> str:
    """
    Nettoie un nom de fichier de sortie.

    Args:
        filename: Nom proposé

    Returns:
        Nom sans séparateurs de chemin ni caractères spéciaux
    """
    if not filename:
        return "sortie"
    name = str(filename).replace("\\", "/").split("/")[-1]
    name = re.sub(r'[^\w.\-]', '_', name)
    name = name.lstrip(".")
    return name[:MAX_FILENAME_LENGTH] or "sortie"


def safe_error_message(error: Exception, context: str = "") -> str:
    """
    Génère un message d'erreur destiné à l'utilisateur sans exposer la pile.

    Les erreurs du moteur portent déjà un message français explicite ; les
    autres exceptions sont ramenées à un message générique et le détail part
    dans le journal.

    Args:
        error: Exception capturée
        context: Contexte de l'erreur (pour le log)

    Returns:
        Message d'erreur sécurisé
    """
    # Messages génériques par type d'erreur
    error_messages = {
        'FileNotFoundError': "Fichier non trouvé",
        'PermissionError': "Accès non autorisé",
        'ValueError': "Valeur invalide fournie",
        'TypeError': "Type de données incorrect",
        'KeyError': "Données manquantes",
        'MemoryError': "Mémoire insuffisante",
        'ExpressionError': "Expression de coefficient refusée",
    }

    if context:
        logger.debug("Erreur dans %s : %r", context, error)

    message = getattr(error, "message", None)
    if message:
        return f"Erreur : {message}"

    error_type = type(error).__name__
    if error_type in error_messages:
        return f"Erreur : {error_messages[error_type]}"

    return "Erreur inattendue : consulter le journal d'exécution."
