"""
Tests de la configuration, du runner et de la ligne de commande
===============================================================

Ce fichier teste :
1. Le chargement YAML (défauts, erreurs ligne/colonne, champs requis)
2. La compilation sûre des expressions
3. Les runs complets : fichiers, manifeste, reproductibilité
4. Les codes de sortie de app.main
"""

import json
import logging
import os
import sys

import numpy as np
import pandas as pd
import pytest
import yaml

PROJECT_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, PROJECT_DIR)

import app
from backend.audit_trail import AuditTrail, reset_audit_trail
from backend.config_loader import dump_config, load_config_text, parse_config
from backend.engine.errors import (
    ConfigError,
    MissingFieldError,
    NoPositiveSolutionError,
    PeriodicityError,
    StageError,
)
from backend.engine.exports import read_trajectory_binary
from backend.runner import run
from backend.security import (
    ExpressionError,
    compile_expression,
    safe_error_message,
    sanitize_filename,
)

CONFIGS = os.path.join(PROJECT_DIR, "configs")

SMALL_EIGEN = """
command: eigen
mesh:
  bounds: [[0.0, 1.0]]
  n: [11]
  bc: {left: dirichlet, right: dirichlet}
time:
  T: 1.0
  K: 10
"""


@pytest.fixture(autouse=True)
def fresh_audit():
    reset_audit_trail()
    yield
    reset_audit_trail()


def _write_config(path, data):
    path.write_text(yaml.safe_dump(data), encoding="utf-8")
    return str(path)


# ============================================================================
# TEST 1: CHARGEMENT DE LA CONFIGURATION
# ============================================================================

class TestConfigLoading:

    def test_defaults_merged(self):
        config = load_config_text("command: eigen")
        assert config.K == 100
        assert config.mesh["n"] == [51]
        assert config.mesh["bc"]["left"] == "robin"
        assert config.theta == 1.0

    def test_non_periodic_weight(self):
        with pytest.raises(PeriodicityError) as info:
            load_config_text("command: eigen\nweight: 't < 0'")
        assert info.value.details["field"] == "weight"

    def test_missing_nonlinearity_for_logistic(self):
        with pytest.raises(MissingFieldError) as info:
            load_config_text("command: logistic\nnonlinearity: {g: xi}\nlogistic: {mu: 2}")
        assert info.value.details["field"] == "nonlinearity.dg"

    def test_missing_mu_for_logistic(self):
        with pytest.raises(MissingFieldError):
            load_config_text("command: logistic\nnonlinearity: {g: xi, dg: '1'}")

    def test_yaml_syntax_error_located(self):
        with pytest.raises(ConfigError) as info:
            load_config_text("command: eigen\nmesh:\n  n: [11\ntime: {K: 10}\n")
        assert "line" in info.value.details
        assert "column" in info.value.details

    @pytest.mark.parametrize("text", [
        "command: eigen\nsolver: {tol: 1}",
        "command: eigen\ntime: {theta: 0.7}",
        "command: eigen\ntime: {K: -3}",
        "command: nowhere",
        "command: eigen\nweight: '__import__(1)'",
    ])
    def test_invalid_configurations(self, text):
        with pytest.raises(ConfigError):
            load_config_text(text)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            parse_config(tmp_path / "absent.yaml")

    def test_dump_and_reload(self):
        config = parse_config(os.path.join(CONFIGS, "neumann_scalar.yaml"))
        assert load_config_text(dump_config(config)) == config

    def test_shipped_configs_valid(self):
        for name in ("dirichlet_interval.yaml", "neumann_scalar.yaml", "moving_window.yaml"):
            parse_config(os.path.join(CONFIGS, name))


# ============================================================================
# TEST 2: EXPRESSIONS ET SÉCURITÉ
# ============================================================================

class TestExpressions:

    def test_vectorized_evaluation(self):
        expr = compile_expression("x * sin(2*pi*t/T)")
        x = np.array([0.0, 1.0, 2.0])
        assert expr(x=x, t=0.25, T=1.0) == pytest.approx([0.0, 1.0, 2.0])
        assert expr.depends_on_time

    @pytest.mark.parametrize("source", [
        "__import__('os')",
        "open('f')",
        "x.real",
        "[x]",
        "foo(x)",
        "'abc'",
        "",
    ])
    def test_rejected_expressions(self, source):
        with pytest.raises(ExpressionError):
            compile_expression(source)

    def test_unknown_variable(self):
        with pytest.raises(ExpressionError):
            compile_expression("xi + 1")
        assert compile_expression("xi + 1", {"xi"})(xi=1.0) == 2.0

    def test_missing_value_at_call(self):
        with pytest.raises(ExpressionError):
            compile_expression("x + t")(x=1.0)

    def test_filenames_sanitized(self):
        assert sanitize_filename("../../etc/passwd") == "passwd"
        assert sanitize_filename("run résultat.csv") == "run_résultat.csv"
        assert sanitize_filename("") == "sortie"

    def test_safe_error_message_hides_details(self):
        message = safe_error_message(KeyError("secret"), "test")
        assert "secret" not in message


# ============================================================================
# TEST 3: RUNS
# ============================================================================

class TestRuns:

    def test_dirichlet_interval_eigen(self, tmp_path):
        manifest = run(parse_config(os.path.join(CONFIGS, "dirichlet_interval.yaml")), tmp_path,
                       AuditTrail())
        assert manifest.status == "ok"
        assert abs(manifest.headline["mu1"] - 1.0) < 1e-2
        for name in ("mesh.csv", "eigenfunction.csv", "sets.csv"):
            assert name in manifest.files
            assert (tmp_path / name).is_file()
        stored = json.loads((tmp_path / "manifest.json").read_text(encoding="utf-8"))
        assert stored["status"] == "ok"
        assert set(stored["stages"]) == {"setup", "eigen"}

    def test_scalar_bifurcation_csv(self, tmp_path):
        manifest = run(parse_config(os.path.join(CONFIGS, "neumann_scalar.yaml")), tmp_path,
                       AuditTrail())
        assert manifest.headline["sweep_status"] == "DIVERGENT"
        assert manifest.headline["q0_periodic_path"] is False
        assert manifest.headline["rungs_failed"] == 0
        frame = pd.read_csv(tmp_path / "bifurcation.csv")
        assert np.allclose(frame["sup_norm"], frame["mu"], atol=1e-6)

    def test_checksums_reproducible(self, tmp_path):
        config = load_config_text(SMALL_EIGEN)
        first = run(config, tmp_path / "a", AuditTrail())
        second = run(config, tmp_path / "b", AuditTrail())
        assert first.files == second.files
        assert first.config_hash == second.config_hash

    def test_binary_dump(self, tmp_path):
        config = load_config_text(SMALL_EIGEN + "output: {binary: true}\n")
        manifest = run(config, tmp_path, AuditTrail())
        assert "eigenfunction.bin" in manifest.files
        values, T = read_trajectory_binary(tmp_path / "eigenfunction.bin")
        assert values.shape == (11, 11)
        assert T == pytest.approx(1.0)
        csv = pd.read_csv(tmp_path / "eigenfunction.csv")
        assert values[0, 5] == pytest.approx(
            csv[(csv["time_index"] == 0) & (csv["node_id"] == 5)]["value"].iloc[0], rel=1e-15)

    def test_failed_stage_keeps_partial_outputs(self, tmp_path):
        config = parse_config(os.path.join(CONFIGS, "neumann_scalar.yaml"))
        config.command = "logistic"
        config.logistic["mu"] = -1.0
        with pytest.raises(StageError) as info:
            run(config, tmp_path, AuditTrail())
        assert info.value.stage == "logistic"
        assert isinstance(info.value.cause, NoPositiveSolutionError)
        stored = json.loads((tmp_path / "manifest.json").read_text(encoding="utf-8"))
        assert stored["status"] == "failed"
        assert stored["failed_stage"] == "logistic"
        assert (tmp_path / "sweep.csv").is_file()

    def test_audit_records_stages(self, tmp_path):
        audit = AuditTrail()
        run(load_config_text(SMALL_EIGEN), tmp_path, audit)
        stages = [e["action"] for e in audit.get_events("STAGE")]
        assert stages == ["setup", "eigen"]
        assert audit.get_events("EIGEN")
        assert not audit.get_events(severity="ERROR")

    def test_audit_csv_written(self, tmp_path):
        manifest = run(load_config_text(SMALL_EIGEN), tmp_path, AuditTrail())
        assert manifest.status == "ok"
        frame = pd.read_csv(tmp_path / "audit_trail.csv")
        assert "Étape" in set(frame["Type"])
        assert {"setup", "eigen"} <= set(frame["Action"])

    def test_audit_storage_failure_logged(self, tmp_path, caplog):
        blocker = tmp_path / "fichier"
        blocker.write_text("occupé", encoding="utf-8")
        with caplog.at_level(logging.WARNING, logger="backend.audit_trail"):
            audit = AuditTrail(str(blocker / "audit.json"))
        assert audit.get_events("SESSION"), "Le journal en mémoire doit rester utilisable"
        assert any("Journal d'audit non écrit" in r.getMessage() for r in caplog.records)


# ============================================================================
# TEST 4: CODES DE SORTIE
# ============================================================================

class TestExitCodes:

    def test_eigen_success(self, tmp_path, capsys):
        path = _write_config(tmp_path / "run.yaml", yaml.safe_load(SMALL_EIGEN))
        code = app.main(["eigen", "--config", path, "--out", str(tmp_path / "out")])
        assert code == 0
        assert "mu1=" in capsys.readouterr().out
        assert (tmp_path / "out" / "manifest.json").is_file()

    def test_missing_config(self, tmp_path):
        assert app.main(["eigen", "--config", str(tmp_path / "absent.yaml")]) == 2

    def test_command_override_revalidated(self, tmp_path):
        path = _write_config(tmp_path / "run.yaml", yaml.safe_load(SMALL_EIGEN))
        assert app.main(["logistic", "--config", path, "--out", str(tmp_path / "out")]) == 2

    def test_numerical_failure(self, tmp_path):
        with open(os.path.join(CONFIGS, "neumann_scalar.yaml"), encoding="utf-8") as f:
            data = yaml.safe_load(f)
        data["logistic"]["mu"] = -1.0
        path = _write_config(tmp_path / "run.yaml", data)
        out = tmp_path / "out"
        assert app.main(["logistic", "--config", path, "--out", str(out)]) == 3
        stored = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
        assert stored["failed_stage"] == "logistic"
