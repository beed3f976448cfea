# geoapportion/evaluation.py
import logging
import time
import warnings
from dataclasses import dataclass, field
from itertools import permutations
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.optimize import linear_sum_assignment, nnls
from scipy.spatial.distance import cdist
from tqdm import tqdm

from geoapportion.config import StudyDesign
from geoapportion.errors import ApportionError, NotContainedWarning, ShapeMismatchError, ZeroNormRowError
from geoapportion.estimator import apportion
from geoapportion.geometry import affine_right_inverse, hull_vertices, intrinsic_projection
from geoapportion.synthgen import RngSpec, make_ground_truth

logger = logging.getLogger(__name__)

BRUTE_FORCE_MAX_K = 8
CONTAINMENT_TOL = 1e-8
SUM_TO_ONE_WEIGHT = 1e4
METRIC_COLUMNS = (
    "n", "replicate", "nrmse", "nfd", "runtime_seconds", "search_used",
    "log_volume", "vertex_hausdorff", "error", "stage",
)


# ---------------------------------------------------------
#  ALIGNMENT
# ---------------------------------------------------------
@dataclass(frozen=True)
class AlignmentResult:
    """`permutation[k]` is the estimated row matched to true row k, so
    `phi_hat[permutation]` is in the truth's order."""

    permutation: np.ndarray
    total_sq_distance: float


def _check_shapes(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape or a.ndim != 2:
        raise ShapeMismatchError(f"shapes {a.shape} and {b.shape} differ")


def align_rows(phi_true, phi_hat) -> AlignmentResult:
    phi_true = np.atleast_2d(np.asarray(phi_true, dtype=float))
    phi_hat = np.atleast_2d(np.asarray(phi_hat, dtype=float))
    _check_shapes(phi_true, phi_hat)
    K = phi_true.shape[0]
    cost = cdist(phi_true, phi_hat, "sqeuclidean")

    if K <= BRUTE_FORCE_MAX_K:
        perms = np.array(list(permutations(range(K))), dtype=np.intp)
        totals = cost[np.arange(K), perms].sum(axis=1)
        best = int(np.argmin(totals))
        return AlignmentResult(permutation=perms[best], total_sq_distance=float(totals[best]))

    rows, cols = linear_sum_assignment(cost)
    perm = cols[np.argsort(rows)]
    return AlignmentResult(permutation=perm, total_sq_distance=float(cost[np.arange(K), perm].sum()))


# ---------------------------------------------------------
#  METRICS
# ---------------------------------------------------------
def nrmse(phi_true, phi_hat_aligned) -> float:
    """Mean over sources of row RMSE divided by the true row's Euclidean norm."""
    phi_true = np.atleast_2d(np.asarray(phi_true, dtype=float))
    phi_hat_aligned = np.atleast_2d(np.asarray(phi_hat_aligned, dtype=float))
    _check_shapes(phi_true, phi_hat_aligned)
    norms = np.linalg.norm(phi_true, axis=1)
    if np.any(norms == 0):
        raise ZeroNormRowError(f"true rows {np.flatnonzero(norms == 0).tolist()} are all zero")
    rmse = np.sqrt(np.mean((phi_true - phi_hat_aligned) ** 2, axis=1))
    return float(np.mean(rmse / norms))


def nfd(phi_true, phi_hat_aligned) -> float:
    phi_true = np.atleast_2d(np.asarray(phi_true, dtype=float))
    phi_hat_aligned = np.atleast_2d(np.asarray(phi_hat_aligned, dtype=float))
    _check_shapes(phi_true, phi_hat_aligned)
    scale = np.linalg.norm(phi_true)
    if scale == 0:
        raise ZeroNormRowError("true matrix is zero")
    return float(np.linalg.norm(phi_true - phi_hat_aligned) / scale)


def vertex_hausdorff(h_true, h_hat) -> float:
    """Hausdorff distance between two finite vertex sets."""
    d = cdist(np.atleast_2d(h_true), np.atleast_2d(h_hat))
    return float(max(d.min(axis=1).max(), d.min(axis=0).max()))


def attribution_metrics(phi_hat, targets: dict) -> Tuple[pd.DataFrame, Dict[str, AlignmentResult]]:
    """NRMSE / NFD of one estimate against each named target, each with its own alignment."""
    rows, alignments = [], {}
    for name, phi in targets.items():
        alignment = align_rows(phi, phi_hat)
        aligned = np.asarray(phi_hat, dtype=float)[alignment.permutation]
        alignments[name] = alignment
        rows.append({
            "target": name,
            "nrmse": nrmse(phi, aligned),
            "nfd": nfd(phi, aligned),
            "total_sq_distance": alignment.total_sq_distance,
            "permutation": " ".join(str(int(p)) for p in alignment.permutation),
        })
    return pd.DataFrame(rows), alignments


# ---------------------------------------------------------
#  HULL CONVERGENCE
# ---------------------------------------------------------
def barycentric_grid(K: int, resolution: int) -> np.ndarray:
    """All weight vectors a/resolution with non-negative integer a summing to resolution."""
    if K == 1:
        return np.ones((1, 1))
    rows = []

    def fill(prefix, remaining, slots):
        if slots == 1:
            rows.append(prefix + [remaining])
            return
        for a in range(remaining + 1):
            fill(prefix + [a], remaining - a, slots - 1)

    fill([], resolution, K)
    return np.array(rows, dtype=float) / resolution


def _distance_to_hull(vertices: np.ndarray, point: np.ndarray) -> float:
    """Distance from point to conv(vertices) by NNLS with a weighted sum-to-one row."""
    A = np.vstack([vertices.T, SUM_TO_ONE_WEIGHT * np.ones(len(vertices))])
    b = np.append(point, SUM_TO_ONE_WEIGHT)
    lam, _ = nnls(A, b)
    total = lam.sum()
    if total > 0:
        lam = lam / total
    return float(np.linalg.norm(vertices.T @ lam - point))


def hausdorff_to_polytope(ystar, hstar, resolution: int = 20) -> float:
    """sup over conv(H*) of the distance to the sample hull, on a barycentric grid."""
    ystar = np.atleast_2d(np.asarray(ystar, dtype=float))
    hstar = np.atleast_2d(np.asarray(hstar, dtype=float))
    if ystar.shape[1] != hstar.shape[1]:
        raise ShapeMismatchError(f"{ystar.shape[1]} and {hstar.shape[1]} pollutant columns")
    K = hstar.shape[0]

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        R = affine_right_inverse(hstar)
    y_aug = np.hstack([ystar, np.ones((len(ystar), 1))])
    bary = y_aug @ R
    h_aug = np.hstack([hstar, np.ones((K, 1))])
    residual = np.linalg.norm(bary @ h_aug - y_aug, axis=1)
    outside = (residual > CONTAINMENT_TOL) | (bary.min(axis=1) < -CONTAINMENT_TOL)
    if np.any(outside):
        warnings.warn(
            f"{int(outside.sum())} rows lie outside conv(H*) by more than {CONTAINMENT_TOL}",
            NotContainedWarning,
            stacklevel=2,
        )

    if len(ystar) > K:
        try:
            _, z = intrinsic_projection(ystar, rank_cap=max(K - 1, 1))
            vertices = ystar[hull_vertices(z)]
        except ApportionError:
            vertices = np.unique(ystar, axis=0)
    else:
        vertices = np.unique(ystar, axis=0)

    grid = barycentric_grid(K, resolution) @ hstar
    return max(_distance_to_hull(vertices, g) for g in grid)


# ---------------------------------------------------------
#  MONTE CARLO STUDY
# ---------------------------------------------------------
@dataclass
class MetricsRecord:
    n: int
    replicate: int
    nrmse: float
    nfd: float
    runtime_seconds: float
    search_used: str
    log_volume: float = float("nan")
    vertex_hausdorff: float = float("nan")
    error: Optional[str] = None
    stage: Optional[str] = None
    phi_true: Optional[np.ndarray] = field(default=None, repr=False, compare=False)
    phi_hat_aligned: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in METRIC_COLUMNS}


def _replicate_key(design: StudyDesign, grid_index: int, replicate: int) -> int:
    return grid_index * design.replicates + replicate


def _failed(n: int, replicate: int, search: str, exc: ApportionError, stage: str, elapsed: float) -> MetricsRecord:
    logger.warning("n=%d replicate=%d %s failed at %s: %s", n, replicate, search, stage, exc)
    return MetricsRecord(n, replicate, np.nan, np.nan, elapsed, search, error=exc.category, stage=stage)


def run_replicate(design: StudyDesign, grid_index: int, replicate: int) -> List[MetricsRecord]:
    """One fresh ground truth, estimated once per requested search."""
    n = design.n_grid[grid_index]
    rng = RngSpec.for_replicate(design.master_seed, _replicate_key(design, grid_index, replicate))
    try:
        Y, truth = make_ground_truth(
            n, design.J, design.K, design.process, rng,
            plant_corners=design.plant_corners, n_candidates=design.n_candidates,
        )
    except ApportionError as exc:
        return [_failed(n, replicate, search, exc, "synthgen", 0.0) for search in design.searches()]

    records = []
    for search in design.searches():
        start = time.perf_counter()
        try:
            est = apportion(Y, design.estimator_config(search))
        except ApportionError as exc:
            records.append(_failed(n, replicate, search, exc, exc.stage or "-", time.perf_counter() - start))
            continue
        elapsed = time.perf_counter() - start
        alignment = align_rows(truth.phi_true.values, est.phi_hat.values)
        aligned = est.phi_hat.values[alignment.permutation]
        records.append(MetricsRecord(
            n=n,
            replicate=replicate,
            nrmse=nrmse(truth.phi_true.values, aligned),
            nfd=nfd(truth.phi_true.values, aligned),
            runtime_seconds=elapsed,
            search_used=est.diagnostics.search_used,
            log_volume=est.diagnostics.log_volume,
            vertex_hausdorff=vertex_hausdorff(truth.h_star, est.h_star_hat),
            phi_true=truth.phi_true.values,
            phi_hat_aligned=aligned,
        ))
    logger.info("n=%d replicate=%d done", n, replicate)
    return records


def convergence_study(design: StudyDesign, workers: int = 1, progress: bool = False) -> List[MetricsRecord]:
    """Every (n, replicate) of the design; output order is independent of `workers`."""
    tasks = [(g, r) for g in range(len(design.n_grid)) for r in range(design.replicates)]
    logger.info("convergence study: %d tasks on %d workers", len(tasks), workers)
    results = Parallel(n_jobs=workers, return_as="generator")(
        delayed(run_replicate)(design, g, r) for g, r in tasks
    )
    records = []
    for batch in tqdm(results, total=len(tasks), disable=not progress, desc="replicates"):
        records.extend(batch)
    return records


def records_frame(records: List[MetricsRecord]) -> pd.DataFrame:
    return pd.DataFrame([r.to_dict() for r in records], columns=list(METRIC_COLUMNS))


def phi_scatter_frame(records: List[MetricsRecord]) -> pd.DataFrame:
    """True against estimated Phi entries, one row per (record, source, pollutant)."""
    rows = []
    for r in records:
        if r.phi_true is None or r.phi_hat_aligned is None:
            continue
        K, J = r.phi_true.shape
        for k in range(K):
            for j in range(J):
                rows.append((r.n, r.replicate, r.search_used, k + 1, j + 1, r.phi_true[k, j], r.phi_hat_aligned[k, j]))
    return pd.DataFrame(rows, columns=["n", "replicate", "search_used", "source", "pollutant", "phi_true", "phi_hat"])


def summarize(records: List[MetricsRecord]) -> pd.DataFrame:
    """Median, quartiles and mean of NRMSE / NFD per (n, search), plus failure counts."""
    frame = records_frame(records)
    frame["failed"] = frame["error"].notna()
    rows = []
    for (n, search), group in frame.groupby(["n", "search_used"], sort=True):
        ok = group[~group["failed"]]
        row = {"n": n, "search_used": search, "replicates": len(group), "failures": int(group["failed"].sum())}
        for metric in ("nrmse", "nfd"):
            values = ok[metric].to_numpy()
            q25, q50, q75 = np.quantile(values, [0.25, 0.5, 0.75]) if values.size else (np.nan,) * 3
            row.update({
                f"{metric}_q25": q25,
                f"{metric}_median": q50,
                f"{metric}_q75": q75,
                f"{metric}_mean": values.mean() if values.size else np.nan,
            })
        rows.append(row)
    return pd.DataFrame(rows)
