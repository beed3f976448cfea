# geoapportion/estimator.py
"""End-to-end estimation of the source attribution matrix from concentrations.

row_normalize -> extract_candidates -> estimate_h_star -> estimate_mu_tilde -> compute_phi
"""
import logging
import math
import warnings
from contextlib import contextmanager
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from sklearn.cluster import MiniBatchKMeans

from geoapportion.config import EstimatorConfig
from geoapportion.errors import (
    ApportionError,
    DroppedRowsWarning,
    EmptyDataError,
    HullDimensionExceededError,
    HullFallbackWarning,
    NegativeMeanWarning,
    SearchFallbackWarning,
    TooFewCandidatesError,
    ZeroRowError,
)
from geoapportion.geometry import (
    ProjectionBasis,
    VertexSubset,
    affine_right_inverse,
    hull_vertices,
    intrinsic_projection,
    max_volume_exhaustive,
    max_volume_greedy,
)
from geoapportion.models import (
    ApportionmentEstimate,
    AttributionMatrix,
    ConcentrationMatrix,
    Diagnostics,
    RowNormalizedData,
)

logger = logging.getLogger(__name__)

PRUNE_MAX_ITER = 20


@dataclass(frozen=True)
class CandidateSet:
    """Hull-vertex rows of Y* that compete for the K profile slots."""

    rows: np.ndarray
    row_indices: np.ndarray
    projected: Optional[np.ndarray]
    basis: Optional[ProjectionBasis]
    n_hull_vertices: int

    @property
    def m(self) -> int:
        return len(self.row_indices)


@dataclass(frozen=True)
class ProfileEstimate:
    h_star_hat: np.ndarray
    row_indices: np.ndarray
    subset: VertexSubset
    search_used: str
    candidates: CandidateSet


# ---------------------------------------------------------
#  ROW NORMALIZATION
# ---------------------------------------------------------
def row_normalize(Y: ConcentrationMatrix, zero_row_policy: str = "drop") -> RowNormalizedData:
    r = Y.values.sum(axis=1)
    zero = np.flatnonzero(r <= 0)
    if zero.size:
        if zero_row_policy == "error":
            raise ZeroRowError(zero.tolist())
        warnings.warn(f"dropped {zero.size} all-zero rows", DroppedRowsWarning, stacklevel=2)
    kept = np.flatnonzero(r > 0)
    if kept.size == 0:
        raise EmptyDataError("every row is zero")
    ystar = Y.values[kept] / r[kept, None]
    return RowNormalizedData(ystar=ystar, row_sums=r[kept], kept_rows=kept, n_total=Y.n)


# ---------------------------------------------------------
#  CANDIDATES
# ---------------------------------------------------------
def _prune(ystar_cand: np.ndarray, cfg: EstimatorConfig) -> np.ndarray:
    """One representative per cluster: the member farthest from the candidate centroid."""
    km = MiniBatchKMeans(
        n_clusters=cfg.effective_cluster_count,
        max_iter=PRUNE_MAX_ITER,
        n_init=3,
        random_state=cfg.cluster_seed,
    )
    labels = km.fit_predict(ystar_cand)
    spread = np.linalg.norm(ystar_cand - ystar_cand.mean(axis=0), axis=1)
    keep = []
    for label in np.unique(labels):
        members = np.flatnonzero(labels == label)
        keep.append(members[np.argmax(spread[members])])
    return np.sort(np.array(keep))


def extract_candidates(data: RowNormalizedData, cfg: EstimatorConfig) -> CandidateSet:
    n = data.ystar.shape[0]
    if n < cfg.K + 1:
        raise TooFewCandidatesError(f"{n} usable rows for K={cfg.K} sources")

    if cfg.K == 1:
        idx = np.arange(n)
        return CandidateSet(rows=data.ystar, row_indices=idx, projected=None, basis=None, n_hull_vertices=n)

    basis, z = intrinsic_projection(data.ystar, rank_cap=cfg.effective_rank_cap)
    try:
        idx = hull_vertices(z, hull_dim_max=cfg.hull_dim_max)
        n_hull = len(idx)
    except HullDimensionExceededError as exc:
        warnings.warn(f"{exc}; using all rows as candidates", HullFallbackWarning, stacklevel=2)
        idx = np.arange(n)
        n_hull = n
    logger.info("projection rank r_B=%d, %d hull vertices among %d rows", basis.rank, n_hull, n)

    if cfg.prune and len(idx) > cfg.effective_cluster_count:
        idx = idx[_prune(data.ystar[idx], cfg)]
        logger.info("pruned candidates to %d", len(idx))

    if len(idx) < cfg.K:
        raise TooFewCandidatesError(f"only {len(idx)} candidates for K={cfg.K} sources")
    return CandidateSet(rows=data.ystar[idx], row_indices=idx, projected=z[idx], basis=basis, n_hull_vertices=n_hull)


# ---------------------------------------------------------
#  PROFILES
# ---------------------------------------------------------
def _search(candidates: CandidateSet, cfg: EstimatorConfig) -> tuple:
    points = candidates.projected
    within_budget = math.comb(candidates.m, cfg.K) <= cfg.exhaustive_budget
    if cfg.search in ("exhaustive", "auto") and within_budget:
        return max_volume_exhaustive(points, cfg.K, cfg.exhaustive_budget), "exhaustive"
    if cfg.search == "exhaustive":
        warnings.warn(
            f"C({candidates.m},{cfg.K}) exceeds the exhaustive budget; falling back to greedy",
            SearchFallbackWarning,
            stacklevel=3,
        )
    return max_volume_greedy(points, cfg.K, cfg.max_sweeps), "greedy"


def estimate_h_star(
    data: RowNormalizedData, cfg: EstimatorConfig, candidates: Optional[CandidateSet] = None
) -> ProfileEstimate:
    """Max-volume K-subset of the candidates, returned as rows of Y*."""
    if candidates is None:
        candidates = extract_candidates(data, cfg)

    if cfg.K == 1:
        # single source: the row closest to the cloud's mean stands in for the vertex
        centre = data.ystar.mean(axis=0)
        pick = int(np.argmin(np.linalg.norm(data.ystar - centre, axis=1)))
        subset = VertexSubset(indices=(pick,), log_volume=0.0)
        return ProfileEstimate(data.ystar[[pick]], np.array([pick]), subset, "single", candidates)

    subset, search_used = _search(candidates, cfg)
    local = np.array(subset.indices)
    rows = candidates.row_indices[local]
    logger.info("%s search picked rows %s (log volume %.6g)", search_used, rows.tolist(), subset.log_volume)
    return ProfileEstimate(candidates.rows[local], rows, subset, search_used, candidates)


# ---------------------------------------------------------
#  SOURCE MEANS
# ---------------------------------------------------------
def estimate_mu_tilde(
    Y: ConcentrationMatrix, data: RowNormalizedData, hstar_hat, cfg: EstimatorConfig
) -> np.ndarray:
    """Mean emission per source on the row-normalized profile scale."""
    hstar_hat = np.atleast_2d(np.asarray(hstar_hat, dtype=float))
    if hstar_hat.shape[0] == 1:
        return np.array([Y.values.sum(axis=1).mean()])

    R = affine_right_inverse(hstar_hat)
    if cfg.mean_method == "affine":
        y_bar = Y.values.mean(axis=0)
        m_tilde = np.append(y_bar, y_bar.sum()) @ R
    else:
        y_aug = np.hstack([data.ystar, np.ones((data.ystar.shape[0], 1))])
        w_raw = np.maximum(y_aug @ R, cfg.epsilon_clip)
        w_hat = w_raw / w_raw.sum(axis=1, keepdims=True)
        # dropped rows carry zero mass, so they only enter through the denominator
        m_tilde = (data.row_sums[:, None] * w_hat).sum(axis=0) / data.n_total

    if np.any(m_tilde < 0):
        warnings.warn(
            f"clipped negative source means {m_tilde[m_tilde < 0].tolist()} to zero",
            NegativeMeanWarning,
            stacklevel=2,
        )
        m_tilde = np.maximum(m_tilde, 0.0)
    return m_tilde


def compute_phi(m_tilde, hstar_hat, source_labels: Optional[List[str]] = None) -> AttributionMatrix:
    return AttributionMatrix.from_means(m_tilde, hstar_hat, source_labels)


# ---------------------------------------------------------
#  PIPELINE
# ---------------------------------------------------------
@contextmanager
def _stage(name: str):
    try:
        yield
    except ApportionError as exc:
        if exc.stage is None:
            exc.stage = name
        raise


def apportion(Y: ConcentrationMatrix, cfg: EstimatorConfig) -> ApportionmentEstimate:
    """Estimate H*, the source means and Phi from one concentration matrix."""
    if not 1 <= cfg.K < Y.J:
        raise ValueError(f"K={cfg.K} must satisfy 1 <= K < J={Y.J}")

    diag = Diagnostics()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")

        with _stage("row_normalize"):
            data = row_normalize(Y, cfg.zero_row_policy)
        diag.n_rows_dropped = data.n_dropped

        with _stage("extract_candidates"):
            candidates = extract_candidates(data, cfg)
        diag.r_B = candidates.basis.rank if candidates.basis is not None else None
        diag.n_hull_vertices = candidates.n_hull_vertices
        diag.n_candidates_after_prune = candidates.m

        with _stage("estimate_h_star"):
            profiles = estimate_h_star(data, cfg, candidates)
        diag.log_volume = profiles.subset.log_volume
        diag.search_used = profiles.search_used
        diag.selected_rows = data.kept_rows[profiles.row_indices].tolist()

        with _stage("estimate_mu_tilde"):
            m_tilde = estimate_mu_tilde(Y, data, profiles.h_star_hat, cfg)

        with _stage("compute_phi"):
            phi_hat = compute_phi(m_tilde, profiles.h_star_hat)

    for w in caught:
        label = getattr(w.category, "category", w.category.__name__)
        diag.warnings.append({"category": label, "message": str(w.message)})
        logger.warning("%s: %s", label, w.message)

    return ApportionmentEstimate(h_star_hat=profiles.h_star_hat, m_tilde=m_tilde, phi_hat=phi_hat, diagnostics=diag)
