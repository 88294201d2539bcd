"""Exports des résultats : tables CSV et dump binaire des trajectoires.

Chaque écriture renvoie l'empreinte sha256 du fichier pour le manifeste de run.
"""

import hashlib
import logging
from pathlib import Path
from typing import Iterable, Optional, Union

import numpy as np
import pandas as pd

from .blowup import BlowupCertificate, LocusReport
from .coeffs import SpaceTimeSet
from .eigen import GammaSweep
from .evolution import Trajectory
from .logistic import BifurcationCurve
from .mesh import Mesh

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
FLOAT_FORMAT = "%.17g"


def file_sha256(path: PathLike) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_csv(df: pd.DataFrame, path: PathLike) -> str:
    """Écrit `df` sans index, flottants à 17 chiffres significatifs ; renvoie le sha256."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    logger.debug("Export CSV : %s (%d lignes)", path, len(df))
    return file_sha256(path)


def write_trajectory_binary(traj: Trajectory, path: PathLike) -> str:
    """
    Dump binaire little-endian : int64 n, int64 K, float64 T, puis les
    (K+1)·n valeurs en float64, tranche par tranche.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    values = np.ascontiguousarray(traj.values, dtype="<f8")
    K = values.shape[0] - 1
    n = values.shape[1]
    T = float(traj.times[-1] - traj.times[0])
    with open(path, "wb") as fh:
        fh.write(np.array([n, K], dtype="<i8").tobytes())
        fh.write(np.array([T], dtype="<f8").tobytes())
        fh.write(values.tobytes())
    return file_sha256(path)


def read_trajectory_binary(path: PathLike) -> tuple:
    """Relit un dump : (values (K+1, n), T)."""
    raw = Path(path).read_bytes()
    n, K = np.frombuffer(raw[:16], dtype="<i8")
    T = float(np.frombuffer(raw[16:24], dtype="<f8")[0])
    values = np.frombuffer(raw[24:], dtype="<f8").reshape(int(K) + 1, int(n))
    return values.copy(), T


# =============================================================================
# TABLES
# =============================================================================

def mesh_frame(mesh: Mesh) -> pd.DataFrame:
    data = {"node_id": np.arange(mesh.n), "x": mesh.nodes[:, 0]}
    if mesh.dim == 2:
        data["y"] = mesh.nodes[:, 1]
    data["boundary_tag"] = mesh.boundary_tags()
    return pd.DataFrame(data)


def sets_frame(sets: Iterable[SpaceTimeSet]) -> pd.DataFrame:
    """Points (node_id, time_index) de chaque ensemble, étiquetés par son label."""
    parts = []
    for s in sets:
        k, i = np.nonzero(s.mask)
        parts.append(pd.DataFrame({"node_id": i, "time_index": k, "label": s.label}))
    if not parts:
        return pd.DataFrame(columns=["node_id", "time_index", "label"])
    return pd.concat(parts, ignore_index=True)


def trajectory_frame(traj: Trajectory) -> pd.DataFrame:
    return traj.to_frame()


def sweep_frame(sweep: GammaSweep) -> pd.DataFrame:
    return sweep.to_frame()


def bifurcation_frame(curve: BifurcationCurve) -> pd.DataFrame:
    return curve.to_frame()


def certificates_frame(certificates: Iterable[BlowupCertificate], mesh: Mesh) -> pd.DataFrame:
    rows = [cert.to_row(j, mesh) for j, cert in enumerate(certificates)]
    bounds = ["x_lo", "x_hi"] + (["y_lo", "y_hi"] if mesh.dim == 2 else [])
    columns = ["cylinder_id", *bounds, "s", "t", "B", "max_u", "max_v", "verified"]
    return pd.DataFrame(rows, columns=columns)


def locus_frame(report: Optional[LocusReport]) -> pd.DataFrame:
    if report is None:
        return pd.DataFrame(columns=["node_id", "time_index", "class", "growth_slope"])
    return report.to_frame()
