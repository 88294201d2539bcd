"""
Audit Trail - Traçabilité des runs numériques
Enregistre les étapes, résultats et exports avec horodatage, et produit le
manifeste de run (manifest.json)
"""

import hashlib
import json
import logging
import time
import uuid
from contextlib import contextmanager
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)


class AuditTrail:
    """
    Journal d'événements d'un run.

    Fonctionnalités:
    - Horodatage de chaque étape
    - Hash des fichiers exportés
    - Détail des résultats (μ₁, μ*, statuts)
    - Persistance JSON optionnelle
    - Export CSV (audit_trail.csv dans le dossier du run)
    """

    # Types d'événements
    EVENT_TYPES = {
        "CONFIG": "Configuration",
        "STAGE": "Étape",
        "EIGEN": "Valeur propre",
        "SWEEP": "Balayage γ",
        "LOGISTIC": "Solution logistique",
        "BIFURCATION": "Bifurcation",
        "BLOWUP": "Explosion",
        "FILE_EXPORT": "Export fichier",
        "ERROR": "Erreur",
        "SESSION": "Session",
    }

    # Niveaux de sévérité
    SEVERITY_LEVELS = ("INFO", "SUCCESS", "WARNING", "ERROR", "CRITICAL")

    def __init__(self,
                 storage_path: Optional[str] = None,
                 max_memory_events: int = 1000):
        """
        Args:
            storage_path: Fichier JSON de persistance (None : mémoire seule)
            max_memory_events: Nombre max d'événements en mémoire
        """
        self.session_id = str(uuid.uuid4())[:8]
        self.session_start = datetime.now()
        self.events: List[Dict[str, Any]] = []
        self.max_memory_events = max_memory_events
        self.storage_path = Path(storage_path) if storage_path else None

        self.log_event(
            event_type="SESSION",
            action="session_start",
            description="Nouveau run démarré",
            details={"session_id": self.session_id},
        )

    def _generate_event_id(self) -> str:
        return f"{self.session_id}-{len(self.events):04d}-{uuid.uuid4().hex[:6]}"

    def log_event(self,
                  event_type: str,
                  action: str,
                  description: str,
                  severity: str = "INFO",
                  details: Optional[Dict[str, Any]] = None,
                  file_hash: Optional[str] = None) -> str:
        """
        Enregistre un événement.

        Returns:
            ID de l'événement créé
        """
        event_id = self._generate_event_id()
        self.events.append({
            "id": event_id,
            "timestamp": datetime.now().isoformat(),
            "session_id": self.session_id,
            "event_type": event_type,
            "event_type_label": self.EVENT_TYPES.get(event_type, event_type),
            "action": action,
            "description": description,
            "severity": severity if severity in self.SEVERITY_LEVELS else "INFO",
            "details": _jsonable(details or {}),
            "file_hash": file_hash,
        })
        if len(self.events) > self.max_memory_events:
            self.events = self.events[-self.max_memory_events:]
        if self.storage_path is not None:
            self._save_to_storage()
        return event_id

    # =========================================================================
    # MÉTHODES DE LOG SPÉCIALISÉES
    # =========================================================================

    def log_config(self, config_hash: str, command: str, summary: Dict[str, Any]) -> str:
        return self.log_event(
            event_type="CONFIG",
            action="load",
            description=f"Configuration chargée pour '{command}' (hash {config_hash[:12]})",
            details={"config_hash": config_hash, **summary},
        )

    def log_stage(self, stage: str, status: str, duration_s: float) -> str:
        return self.log_event(
            event_type="STAGE",
            action=stage,
            description=f"Étape '{stage}' : {status} en {duration_s:.3f} s",
            severity="SUCCESS" if status == "ok" else "ERROR",
            details={"status": status, "duration_s": duration_s},
        )

    def log_eigen(self, mu1: float, iterations: int, residual: float) -> str:
        return self.log_event(
            event_type="EIGEN",
            action="principal_pair",
            description=f"μ₁ = {mu1:.10g} ({iterations} itérations)",
            severity="SUCCESS",
            details={"mu1": mu1, "iterations": iterations, "residual": residual},
        )

    def log_sweep(self, status: str, mu_star: float, n_rungs: int) -> str:
        return self.log_event(
            event_type="SWEEP",
            action="mu_star_sweep",
            description=f"Balayage γ sur {n_rungs} échelons : {status}, μ* ≈ {mu_star:.6g}",
            severity="WARNING" if status == "UNRESOLVED" else "SUCCESS",
            details={"status": status, "mu_star": mu_star, "n_rungs": n_rungs},
        )

    def log_logistic(self, mu: float, sup_norm: float, iterations: int, margin: float) -> str:
        return self.log_event(
            event_type="LOGISTIC",
            action="solve_periodic",
            description=f"u_μ pour μ = {mu:.6g} : ‖u‖∞ = {sup_norm:.6g}",
            severity="SUCCESS",
            details={"mu": mu, "sup_norm": sup_norm, "iterations": iterations,
                     "stability_margin": margin},
        )

    def log_bifurcation(self, n_rungs: int, n_failed: int, monotone: bool) -> str:
        return self.log_event(
            event_type="BIFURCATION",
            action="bifurcation_sweep",
            description=f"Courbe de bifurcation : {n_rungs - n_failed}/{n_rungs} échelons",
            severity="WARNING" if n_failed or not monotone else "SUCCESS",
            details={"n_rungs": n_rungs, "n_failed": n_failed, "monotone_in_mu": monotone},
        )

    def log_blowup(self, n_certificates: int, n_verified: int, fraction_in_support: float) -> str:
        return self.log_event(
            event_type="BLOWUP",
            action="certify",
            description=f"{n_verified}/{n_certificates} certificats locaux vérifiés",
            severity="SUCCESS" if n_verified == n_certificates else "WARNING",
            details={"n_certificates": n_certificates, "n_verified": n_verified,
                     "fraction_in_support": fraction_in_support},
        )

    def log_export(self, path: str, file_hash: str, rows: Optional[int] = None) -> str:
        return self.log_event(
            event_type="FILE_EXPORT",
            action="export",
            description=f"Fichier '{Path(path).name}' écrit",
            severity="SUCCESS",
            file_hash=file_hash,
            details={"path": str(path), "rows": rows},
        )

    def log_error(self, error_type: str, error_message: str,
                  context: Optional[Dict[str, Any]] = None) -> str:
        return self.log_event(
            event_type="ERROR",
            action=error_type,
            description=error_message[:200],
            severity="ERROR",
            details={"context": context or {}},
        )

    # =========================================================================
    # PERSISTANCE ET EXPORTS
    # =========================================================================

    def _save_to_storage(self):
        try:
            self.storage_path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.storage_path, "w", encoding="utf-8") as f:
                json.dump({"session_id": self.session_id, "events": self.events},
                          f, ensure_ascii=False, indent=2)
        except OSError as exc:
            logger.warning("Journal d'audit non écrit (%s) : %s", self.storage_path, exc)

    def get_events(self, event_type: Optional[str] = None,
                   severity: Optional[str] = None) -> List[Dict[str, Any]]:
        filtered = self.events
        if event_type:
            filtered = [e for e in filtered if e["event_type"] == event_type]
        if severity:
            filtered = [e for e in filtered if e["severity"] == severity]
        return list(filtered)

    def export_to_dataframe(self, events: Optional[List[Dict[str, Any]]] = None) -> pd.DataFrame:
        events = self.events if events is None else events
        if not events:
            return pd.DataFrame()
        return pd.DataFrame([{
            "ID": e["id"],
            "Timestamp": e["timestamp"],
            "Session": e["session_id"],
            "Type": e["event_type_label"],
            "Action": e["action"],
            "Description": e["description"],
            "Sévérité": e["severity"],
            "Détails": json.dumps(e["details"], ensure_ascii=False)[:500],
            "Hash Fichier": e.get("file_hash") or "",
        } for e in events])

    def export_to_csv(self, filepath: str):
        self.export_to_dataframe().to_csv(filepath, index=False, encoding="utf-8")


def _jsonable(value: Any) -> Any:
    """Convertit récursivement numpy / inf / nan vers du JSON valide."""
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if v != v:
            return "nan"
        if v in (float("inf"), float("-inf")):
            return "inf" if v > 0 else "-inf"
        return v
    return value


# ============================================================================
# MANIFESTE DE RUN
# ============================================================================

@dataclass
class RunManifest:
    """Contenu de manifest.json : config, durées par étape, fichiers, chiffres clés."""
    command: str
    config_hash: str
    version: str
    seed: int
    threads: int
    status: str = "running"
    failed_stage: Optional[str] = None
    error: Optional[str] = None
    stages: Dict[str, float] = field(default_factory=dict)
    files: Dict[str, str] = field(default_factory=dict)
    headline: Dict[str, Any] = field(default_factory=dict)

    @contextmanager
    def stage(self, name: str, audit: Optional[AuditTrail] = None):
        """Chronomètre une étape ; l'exception éventuelle est propagée."""
        start = time.perf_counter()
        status = "ok"
        try:
            yield
        except Exception:
            status = "failed"
            raise
        finally:
            elapsed = time.perf_counter() - start
            self.stages[name] = elapsed
            if audit is not None:
                audit.log_stage(name, status, elapsed)

    def add_file(self, name: str, sha256: str):
        self.files[name] = sha256

    def to_dict(self) -> Dict[str, Any]:
        return _jsonable({
            "command": self.command,
            "config_hash": self.config_hash,
            "version": self.version,
            "seed": self.seed,
            "threads": self.threads,
            "status": self.status,
            "failed_stage": self.failed_stage,
            "error": self.error,
            "stages": self.stages,
            "files": self.files,
            "headline": self.headline,
        })

    def write(self, out_dir: Path) -> Path:
        path = Path(out_dir) / "manifest.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, ensure_ascii=False, indent=2)
        return path


def config_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


# ============================================================================
# INSTANCE GLOBALE
# ============================================================================

_audit_instance: Optional[AuditTrail] = None


def get_audit_trail(storage_path: Optional[str] = None) -> AuditTrail:
    """Retourne l'instance globale de l'audit trail"""
    global _audit_instance
    if _audit_instance is None:
        _audit_instance = AuditTrail(storage_path)
    return _audit_instance


def reset_audit_trail():
    """Réinitialise l'instance globale"""
    global _audit_instance
    _audit_instance = None
