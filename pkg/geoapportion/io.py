# geoapportion/io.py
"""Reading concentration files and writing result bundles.

All CSV output is UTF-8 with LF line endings and 17 significant digits, so
every float survives a save/load cycle unchanged.
"""
import json
import logging
import warnings
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Union

import numpy as np
import pandas as pd

from geoapportion.config import EstimatorConfig, RunConfig
from geoapportion.errors import ApportionError, NegativeValueError, NonFiniteError, ParseError
from geoapportion.estimator import row_normalize
from geoapportion.geometry import hull_vertices, intrinsic_projection
from geoapportion.models import (
    ApportionmentEstimate,
    AttributionMatrix,
    ConcentrationMatrix,
    default_source_labels,
)
from geoapportion.synthgen import GroundTruth

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
FLOAT_FORMAT = "%.17g"

# file names of the simulate / estimate bundles
Y_FILE = "Y.csv"
W_FILE = "W.csv"
H_FILE = "H.csv"
MU_FILE = "mu.csv"
PHI_TRUE_FILE = "phi_true.csv"
PHI_SAMPLE_FILE = "phi_sample.csv"
PHI_HAT_FILE = "phi_hat.csv"
H_STAR_HAT_FILE = "h_star_hat.csv"
M_TILDE_FILE = "m_tilde.csv"
DIAGNOSTICS_FILE = "diagnostics.json"
METRICS_FILE = "metrics.csv"
SUMMARY_FILE = "summary.csv"
PHI_HEATMAP_FILE = "phi_heatmap.csv"
HULL_SCATTER_FILE = "hull_scatter.csv"
PHI_SCATTER_FILE = "phi_scatter.csv"
MANIFEST_FILE = "manifest.json"


# ---------------------------------------------------------
#  READING
# ---------------------------------------------------------
def load_concentrations(path: PathLike, format: str = "csv") -> ConcentrationMatrix:
    """Header row of pollutant names, then one numeric record per line.

    Error coordinates are file lines (the header is line 1) and column names.
    """
    if format != "csv":
        raise ValueError(f"unsupported format {format!r}")
    path = Path(path)
    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False, skip_blank_lines=False, encoding="utf-8")
    except pd.errors.EmptyDataError as exc:
        raise ParseError(1, None, "file is empty") from exc
    except pd.errors.ParserError as exc:
        raise ParseError(None, None, str(exc).strip()) from exc
    except UnicodeDecodeError as exc:
        raise ParseError(None, None, f"not UTF-8: {exc.reason}") from exc

    # pandas renames repeated headers ("a" -> "a.1"), so check the header as written
    header = pd.read_csv(path, header=None, nrows=1, dtype=str, keep_default_na=False, encoding="utf-8")
    names = [str(c).strip() for c in header.iloc[0]]
    seen = set()
    for name in names:
        if name in seen:
            raise ParseError(1, name, "duplicate column")
        seen.add(name)
    if raw.empty:
        raise ParseError(2, None, "no data rows")

    values = np.empty(raw.shape, dtype=float)
    for j, name in enumerate(names):
        column = raw.iloc[:, j].fillna("").str.strip()
        parsed = pd.to_numeric(column, errors="coerce").to_numpy(dtype=float)
        bad = np.flatnonzero(np.isnan(parsed) & ~column.str.lower().isin(["nan", "+nan", "-nan"]).to_numpy())
        if bad.size:
            i = int(bad[0])
            text = column.iloc[i]
            reason = "missing value" if text == "" else f"cannot parse {text!r} as a number"
            raise ParseError(i + 2, name, reason)
        values[:, j] = parsed

    # report the first offending cell in file order
    non_finite = np.argwhere(~np.isfinite(values))
    if non_finite.size:
        i, j = non_finite[0]
        raise NonFiniteError(int(i) + 2, names[j], float(values[i, j]))
    negative = np.argwhere(values < 0)
    if negative.size:
        i, j = negative[0]
        raise NegativeValueError(int(i) + 2, names[j], float(values[i, j]))

    logger.info("loaded %d x %d concentrations from %s", values.shape[0], values.shape[1], path)
    return ConcentrationMatrix(values, names)


def read_matrix(path: PathLike) -> pd.DataFrame:
    """A labelled matrix written by `write_frame` with its row labels in the first column."""
    return pd.read_csv(path, index_col=0, encoding="utf-8")


def read_attribution(path: PathLike) -> AttributionMatrix:
    frame = read_matrix(path)
    return AttributionMatrix(frame.to_numpy(dtype=float), [str(s) for s in frame.index])


def load_ground_truth(directory: PathLike) -> GroundTruth:
    """Inverse of `write_simulation` (process parameters are not restored)."""
    directory = Path(directory)
    return GroundTruth(
        W=pd.read_csv(directory / W_FILE, encoding="utf-8").to_numpy(dtype=float),
        H=read_matrix(directory / H_FILE).to_numpy(dtype=float),
        mu=read_matrix(directory / MU_FILE).iloc[:, 0].to_numpy(dtype=float),
        phi_true=read_attribution(directory / PHI_TRUE_FILE),
        phi_sample=read_attribution(directory / PHI_SAMPLE_FILE),
    )


# ---------------------------------------------------------
#  WRITING
# ---------------------------------------------------------
def write_frame(frame: pd.DataFrame, path: PathLike, index: bool = True) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=index, float_format=FLOAT_FORMAT, lineterminator="\n", encoding="utf-8")
    logger.info("wrote %s", path)
    return path


def write_json(payload: dict, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")
    logger.info("wrote %s", path)
    return path


def write_manifest(config: RunConfig, directory: PathLike, extra: Optional[dict] = None) -> Path:
    """Full run configuration; `created_at` is the only field that varies between identical runs."""
    payload = {
        "config": config.model_dump(mode="json"),
        "created_at": datetime.now(timezone.utc).isoformat(),
    }
    if extra:
        payload.update(extra)
    return write_json(payload, Path(directory) / MANIFEST_FILE)


def _source_frame(values: np.ndarray, labels: List[str], columns: Iterable[str]) -> pd.DataFrame:
    return pd.DataFrame(values, index=pd.Index(labels, name="source"), columns=list(columns))


def _vector_frame(values: np.ndarray, labels: List[str], name: str) -> pd.DataFrame:
    return pd.DataFrame({name: np.asarray(values, dtype=float)}, index=pd.Index(labels, name="source"))


def write_simulation(Y: ConcentrationMatrix, truth: GroundTruth, directory: PathLike) -> List[Path]:
    directory = Path(directory)
    labels = default_source_labels(truth.H.shape[0])
    return [
        write_frame(Y.to_frame(), directory / Y_FILE, index=False),
        write_frame(pd.DataFrame(truth.W, columns=labels), directory / W_FILE, index=False),
        write_frame(_source_frame(truth.H, labels, Y.pollutant_names), directory / H_FILE),
        write_frame(_vector_frame(truth.mu, labels, "mu"), directory / MU_FILE),
        write_frame(truth.phi_true.to_frame(Y.pollutant_names), directory / PHI_TRUE_FILE),
        write_frame(truth.phi_sample.to_frame(Y.pollutant_names), directory / PHI_SAMPLE_FILE),
    ]


# ---------------------------------------------------------
#  PLOT-READY DATA
# ---------------------------------------------------------
def phi_heatmap_frame(
    phi_hat: AttributionMatrix, pollutant_names: List[str], phi_true: Optional[AttributionMatrix] = None
) -> pd.DataFrame:
    """Long format: one row per (source, pollutant)."""
    frame = phi_hat.to_frame(pollutant_names).reset_index().melt(
        id_vars="source", var_name="pollutant", value_name="phi_hat"
    )
    if phi_true is not None:
        frame["phi_true"] = phi_true.to_frame(pollutant_names).reset_index().melt(
            id_vars="source", var_name="pollutant", value_name="phi_true"
        )["phi_true"].to_numpy()
    return frame


def hull_scatter_frame(
    Y: ConcentrationMatrix,
    estimate: ApportionmentEstimate,
    cfg: EstimatorConfig,
    h_star_true: Optional[np.ndarray] = None,
) -> pd.DataFrame:
    """Intrinsic coordinates of every kept row, flagged as hull vertex / selected profile.

    True profiles, when given, are appended as kind == "true_vertex".
    """
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        data = row_normalize(Y, "drop")
    selected = set(estimate.diagnostics.selected_rows)

    try:
        basis, z = intrinsic_projection(data.ystar, rank_cap=cfg.effective_rank_cap)
    except ApportionError:
        basis, z = None, np.zeros((len(data.kept_rows), 0))
    on_hull = np.zeros(len(data.kept_rows), dtype=bool)
    if basis is not None:
        try:
            on_hull[hull_vertices(z, hull_dim_max=cfg.hull_dim_max)] = True
        except ApportionError:
            pass

    coords = [f"z{d + 1}" for d in range(z.shape[1])]
    frame = pd.DataFrame(z, columns=coords)
    frame.insert(0, "kind", "observation")
    frame.insert(1, "row", data.kept_rows)
    frame["is_hull_vertex"] = on_hull
    frame["is_selected"] = [int(r) in selected for r in data.kept_rows]

    if h_star_true is not None and basis is not None:
        truth = pd.DataFrame(basis.project(h_star_true), columns=coords)
        truth.insert(0, "kind", "true_vertex")
        truth.insert(1, "row", -1)
        truth["is_hull_vertex"] = False
        truth["is_selected"] = False
        frame = pd.concat([frame, truth], ignore_index=True)
    return frame


# ---------------------------------------------------------
#  RESULT BUNDLE
# ---------------------------------------------------------
def write_estimate(
    Y: ConcentrationMatrix,
    estimate: ApportionmentEstimate,
    cfg: EstimatorConfig,
    directory: PathLike,
    truth: Optional[GroundTruth] = None,
    metrics: Optional[pd.DataFrame] = None,
) -> Dict[str, Path]:
    """phi_hat, h_star_hat, m_tilde, diagnostics and the plot-ready files; metrics when given."""
    directory = Path(directory)
    names = Y.pollutant_names
    labels = estimate.phi_hat.source_labels
    written = {
        "phi_hat": write_frame(estimate.phi_hat.to_frame(names), directory / PHI_HAT_FILE),
        "h_star_hat": write_frame(_source_frame(estimate.h_star_hat, labels, names), directory / H_STAR_HAT_FILE),
        "m_tilde": write_frame(_vector_frame(estimate.m_tilde, labels, "m_tilde"), directory / M_TILDE_FILE),
        "diagnostics": write_json(estimate.diagnostics.to_dict(), directory / DIAGNOSTICS_FILE),
        "phi_heatmap": write_frame(
            phi_heatmap_frame(estimate.phi_hat, names, truth.phi_true if truth else None),
            directory / PHI_HEATMAP_FILE,
            index=False,
        ),
        "hull_scatter": write_frame(
            hull_scatter_frame(Y, estimate, cfg, truth.h_star if truth else None),
            directory / HULL_SCATTER_FILE,
            index=False,
        ),
    }
    if metrics is not None:
        written["metrics"] = write_frame(metrics, directory / METRICS_FILE, index=False)
    return written
