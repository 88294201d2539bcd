"""
Orchestration d'un run : construction du problème discret, enchaînement
des étapes, exports CSV et manifeste.

Étapes (dans l'ordre, selon la commande) :
    setup → eigen → mu-star → logistic → bifurcate → blowup
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from backend.audit_trail import AuditTrail, RunManifest, config_hash
from backend.config_loader import (
    RunConfig,
    build_coefficients,
    build_weight_field,
    dump_config,
    mesh_bounds,
)
from backend.engine import exports
from backend.engine.blowup import (
    blowup_locus,
    certify_all,
    propose_cylinders,
    q_infinity_cover,
)
from backend.engine.coeffs import SpaceTimeSet, Weight, classify_sets, periodic_path_exists
from backend.engine.eigen import (
    DEFAULT_LADDER,
    EigenPair,
    GammaSweep,
    limit_eigenfunction,
    mu_star_sweep,
    principal_pair,
)
from backend.engine.errors import CertificateFailure, PeriodicParabolicError, StageError
from backend.engine.evolution import TimeGrid
from backend.engine.logistic import (
    BifurcationCurve,
    LogisticProblem,
    Nonlinearity,
    PeriodicSolution,
    bifurcation_sweep,
    solve_periodic,
)
from backend.engine.mesh import DiscreteForm, Mesh, build_interval_mesh, build_rectangle_mesh
from backend.security import sanitize_filename

logger = logging.getLogger(__name__)

__version__ = "1.0.0"
AUDIT_CSV = "audit_trail.csv"

STAGES = {
    "eigen": ("setup", "eigen"),
    "mu-star": ("setup", "eigen", "mu-star"),
    "logistic": ("setup", "eigen", "mu-star", "logistic"),
    "bifurcate": ("setup", "eigen", "mu-star", "bifurcate"),
    "blowup": ("setup", "eigen", "mu-star", "bifurcate", "blowup"),
    "all": ("setup", "eigen", "mu-star", "logistic", "bifurcate", "blowup"),
}


@dataclass
class RunState:
    """Objets produits par les étapes successives."""
    config: RunConfig
    mesh: Optional[Mesh] = None
    form: Optional[DiscreteForm] = None
    grid: Optional[TimeGrid] = None
    weight: Optional[Weight] = None
    sets: List[SpaceTimeSet] = field(default_factory=list)
    pair0: Optional[EigenPair] = None
    sweep: Optional[GammaSweep] = None
    problem: Optional[LogisticProblem] = None
    solution: Optional[PeriodicSolution] = None
    curve: Optional[BifurcationCurve] = None


# =============================================================================
# CONSTRUCTION
# =============================================================================

def build_mesh(config: RunConfig) -> Mesh:
    bounds = mesh_bounds(config)
    n = [int(v) for v in config.mesh["n"]]
    bc = config.mesh.get("bc") or {}
    if config.dim == 1:
        return build_interval_mesh(bounds[0][0], bounds[0][1], n[0],
                                   bc.get("left", "dirichlet"), bc.get("right", "dirichlet"))
    return build_rectangle_mesh(bounds[0][0], bounds[0][1], bounds[1][0], bounds[1][1],
                                n[0], n[1], bc)


def build_nonlinearity(config: RunConfig) -> Nonlinearity:
    nl = config.nonlinearity
    return Nonlinearity.from_expressions(nl["g"], nl["dg"], config.T, nl.get("growth"))


def gamma_ladder(config: RunConfig) -> np.ndarray:
    if config.sweep.get("ladder"):
        return np.asarray(config.sweep["ladder"], dtype=float)
    top = config.sweep.get("gamma_max_exponent")
    return DEFAULT_LADDER if top is None else 2.0 ** np.arange(int(top) + 1)


# =============================================================================
# ÉTAPES
# =============================================================================

class Runner:
    """Exécute les étapes d'une commande et tient le manifeste à jour."""

    def __init__(self, config: RunConfig, out_dir: Optional[Path] = None,
                 audit: Optional[AuditTrail] = None):
        self.config = config
        self.out_dir = Path(out_dir or config.output.get("dir", "out"))
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.audit = audit or AuditTrail(str(self.out_dir / "audit_trail.json"))
        text = dump_config(config)
        self.manifest = RunManifest(
            command=config.command,
            config_hash=config_hash(text),
            version=__version__,
            seed=int(config.seed),
            threads=int(config.threads),
        )
        self.state = RunState(config)
        self.audit.log_config(self.manifest.config_hash, config.command,
                              {"T": config.T, "K": config.K, "dim": config.dim})

    # ──────────────────────────────────────────────────────────────────────
    # Exports
    # ──────────────────────────────────────────────────────────────────────

    def _write(self, name: str, df) -> None:
        name = sanitize_filename(name)
        path = self.out_dir / name
        digest = exports.write_csv(df, path)
        self.manifest.add_file(name, digest)
        self.audit.log_export(str(path), digest, len(df))

    def _write_trajectory(self, stem: str, traj) -> None:
        self._write(f"{stem}.csv", exports.trajectory_frame(traj))
        if self.config.output.get("binary"):
            name = sanitize_filename(f"{stem}.bin")
            digest = exports.write_trajectory_binary(traj, self.out_dir / name)
            self.manifest.add_file(name, digest)

    # ──────────────────────────────────────────────────────────────────────
    # Étapes
    # ──────────────────────────────────────────────────────────────────────

    def stage_setup(self):
        cfg, st = self.config, self.state
        st.mesh = build_mesh(cfg)
        st.form = DiscreteForm(st.mesh, build_coefficients(cfg))
        st.grid = TimeGrid(cfg.T, cfg.K, cfg.theta, bool(cfg.time.get("fitted", True)))
        st.weight = Weight.from_field(build_weight_field(cfg), st.mesh, st.grid)
        Q0, Qb = classify_sets(st.weight)
        st.sets = [Q0, Qb]
        if cfg.command in ("logistic", "bifurcate", "blowup", "all"):
            st.problem = LogisticProblem(st.form, st.grid, st.weight, build_nonlinearity(cfg))
        self._write("mesh.csv", exports.mesh_frame(st.mesh))
        self.manifest.headline["n_nodes"] = st.mesh.n
        self.manifest.headline["m_matrix"] = bool(st.form.is_m_matrix(0.0))

    def stage_eigen(self):
        st = self.state
        st.pair0 = principal_pair(st.form, st.grid, seed=int(self.config.seed),
                                  max_iter=int(self.config.eigen.get("max_iter", 10000)))
        self.manifest.headline["mu1"] = st.pair0.mu1
        self.audit.log_eigen(st.pair0.mu1, st.pair0.iterations, st.pair0.residual)
        self._write_trajectory("eigenfunction", st.pair0.phi)

    def stage_mu_star(self):
        st = self.state
        st.sweep = mu_star_sweep(st.form, st.grid, st.weight, gamma_ladder(self.config),
                                 threads=int(self.config.threads), seed=int(self.config.seed),
                                 max_iter=int(self.config.eigen.get("max_iter", 10000)))
        self.manifest.headline.update({
            "mu_star": st.sweep.mu_star_estimate,
            "mu_star_extrapolated": st.sweep.extrapolated,
            "sweep_status": st.sweep.status,
            "sweep_monotone": st.sweep.monotone,
            # prédicteur seulement, jamais un certificat de μ* < ∞
            "q0_periodic_path": periodic_path_exists(st.sets[0])[0],
        })
        self.audit.log_sweep(st.sweep.status, st.sweep.mu_star_estimate, len(st.sweep.gammas))
        self._write("sweep.csv", exports.sweep_frame(st.sweep))
        if not st.sweep.is_divergent:
            limit = limit_eigenfunction(st.sweep, st.sets[0])
            self.manifest.headline["phi_inf_saturated"] = limit.saturated
            self._write_trajectory("phi_inf", limit.phi)

    def stage_logistic(self):
        st, lc = self.state, self.config.logistic
        st.solution = solve_periodic(
            st.problem, float(lc["mu"]), st.pair0, st.sweep,
            both_directions=bool(lc.get("both_directions")),
            max_periods=int(lc.get("max_periods", 2000)), tol_fix=lc.get("tol_fix"),
        )
        sol = st.solution
        self.manifest.headline.update({
            "logistic_mu": sol.mu,
            "logistic_sup_norm": sol.sup_norm,
            "stability_margin": sol.stability_margin,
        })
        self.audit.log_logistic(sol.mu, sol.sup_norm, sol.iterations, sol.stability_margin)
        self._write_trajectory("logistic", sol.u)

    def stage_bifurcate(self):
        st, bc, lc = self.state, self.config.bifurcation, self.config.logistic
        st.curve = bifurcation_sweep(
            st.problem, bc.get("ladder"), st.sweep, st.pair0,
            n_rungs=int(bc.get("n_rungs", 8)), threads=int(self.config.threads),
            max_periods=int(lc.get("max_periods", 2000)), tol_fix=lc.get("tol_fix"),
        )
        failed = sum(s is None for s in st.curve.solutions)
        self.manifest.headline["rungs"] = len(st.curve.mu_values)
        self.manifest.headline["rungs_failed"] = failed
        self.audit.log_bifurcation(len(st.curve.mu_values), failed, st.curve.monotone_in_mu)
        self._write("bifurcation.csv", exports.bifurcation_frame(st.curve))

    def stage_blowup(self):
        st, cfg = self.state, self.config
        Q0, Qb = st.sets[0], st.sets[1]
        phi_inf = st.sweep.pairs[-1].phi
        top = int(cfg.blowup.get("top_rungs", 3))
        locus = blowup_locus(st.curve, phi_inf, top=top)
        self._write("locus.csv", exports.locus_frame(locus))

        cylinders = propose_cylinders(Qb, st.mesh, margin=int(cfg.blowup.get("margin", 2)),
                                      max_cylinders=int(cfg.blowup.get("max_cylinders", 16)))
        certificates = certify_all(cylinders, st.curve, st.problem, threads=int(cfg.threads))
        self._write("certificates.csv", exports.certificates_frame(certificates, st.mesh))
        qinf, report = q_infinity_cover(certificates, Q0, st.mesh)
        st.sets.append(qinf)

        verified = sum(c.verified for c in certificates)
        self.manifest.headline.update({
            "certificates": len(certificates),
            "certificates_verified": verified,
            "locus_fraction_in_support": locus.fraction_in_support,
            "qinf_points": report["qinf_points"],
        })
        self.audit.log_blowup(len(certificates), verified, locus.fraction_in_support)
        if verified < len(certificates):
            raise CertificateFailure(
                f"{len(certificates) - verified} certificat(s) local(aux) non vérifié(s)",
                {"failed": [j for j, c in enumerate(certificates) if not c.verified]},
            )

    # ──────────────────────────────────────────────────────────────────────
    # Exécution
    # ──────────────────────────────────────────────────────────────────────

    def run(self) -> RunManifest:
        handlers = {
            "setup": self.stage_setup,
            "eigen": self.stage_eigen,
            "mu-star": self.stage_mu_star,
            "logistic": self.stage_logistic,
            "bifurcate": self.stage_bifurcate,
            "blowup": self.stage_blowup,
        }
        try:
            for name in STAGES[self.config.command]:
                try:
                    with self.manifest.stage(name, self.audit):
                        handlers[name]()
                except PeriodicParabolicError as exc:
                    raise StageError(name, exc) from exc
            self.manifest.status = "ok"
        except StageError as exc:
            logger.error("%s", exc.message)
            self.audit.log_error(type(exc.cause).__name__, exc.message, {"stage": exc.stage})
            self.manifest.status = "failed"
            self.manifest.failed_stage = exc.stage
            self.manifest.error = exc.message
            raise
        finally:
            if self.state.sets:
                self._write("sets.csv", exports.sets_frame(self.state.sets))
            self.manifest.write(self.out_dir)
            self.audit.export_to_csv(str(self.out_dir / AUDIT_CSV))
        return self.manifest


def run(config: RunConfig, out_dir: Optional[Path] = None,
        audit: Optional[AuditTrail] = None) -> RunManifest:
    """
    Exécute la commande de `config`, écrit les CSV et manifest.json.

    Raises:
        StageError: une étape a échoué (les sorties partielles restent sur disque)
    """
    return Runner(config, out_dir, audit).run()
