# geoapportion/geometry.py
"""Convex geometry on row-normalized data.

Points live on the probability simplex; everything here works in the
intrinsic coordinates produced by `intrinsic_projection`, where the cloud is
full-dimensional and volumes are well defined.
"""
import logging
import math
import warnings
from dataclasses import dataclass
from itertools import chain, combinations, islice
from typing import Optional, Tuple

import numpy as np
from scipy.spatial import ConvexHull, QhullError
from scipy.special import gammaln

from geoapportion.config import DEFAULT_EXHAUSTIVE_BUDGET, DEFAULT_HULL_DIM_MAX
from geoapportion.errors import (
    AllDegenerateError,
    BudgetExceededError,
    DegenerateCloudError,
    HullDimensionExceededError,
    RankDeficientWarning,
)

logger = logging.getLogger(__name__)

SIMPLEX_TOL = 1e-8
DEGENERATE_GRAM = 1e-300
SWAP_GAIN = 1e-12
_CHUNK = 50_000


# ---------------------------------------------------------
#  TYPES
# ---------------------------------------------------------
@dataclass(frozen=True)
class ProjectionBasis:
    mean_offset: np.ndarray
    basis: np.ndarray
    rank: int
    singular_values: np.ndarray

    def project(self, ystar) -> np.ndarray:
        """Intrinsic coordinates of arbitrary simplex rows (e.g. a known H*)."""
        ystar = np.atleast_2d(np.asarray(ystar, dtype=float))
        return (ystar[:, :-1] - self.mean_offset) @ self.basis


@dataclass(frozen=True)
class VertexSubset:
    indices: Tuple[int, ...]
    log_volume: float


def _check_simplex_rows(ystar: np.ndarray, tol: float = SIMPLEX_TOL) -> None:
    if ystar.ndim != 2:
        raise ValueError(f"expected a 2-D array, got shape {ystar.shape}")
    if not np.all(np.isfinite(ystar)):
        raise ValueError("coordinates must be finite")
    if np.any(np.abs(ystar.sum(axis=1) - 1.0) > tol):
        raise ValueError("rows must sum to 1")


# ---------------------------------------------------------
#  INTRINSIC PROJECTION
# ---------------------------------------------------------
def intrinsic_projection(ystar, rank_cap: Optional[int] = None) -> Tuple[ProjectionBasis, np.ndarray]:
    """Center the first J-1 coordinates and keep the leading right singular vectors."""
    ystar = np.asarray(ystar, dtype=float)
    _check_simplex_rows(ystar)
    n, J = ystar.shape
    if n < 2:
        raise DegenerateCloudError("need at least two rows to project")

    y_red = ystar[:, : J - 1]
    m_red = y_red.mean(axis=0)
    y_c = y_red - m_red
    _, s, vt = np.linalg.svd(y_c, full_matrices=False)
    eps = np.finfo(float).eps
    # centering identical rows leaves rounding noise, not spread
    if s.size == 0 or s[0] <= n * eps * max(1.0, float(np.abs(y_red).max(initial=0.0))):
        raise DegenerateCloudError("all rows are identical")

    tol = n * eps * s[0]
    rank = int(np.count_nonzero(s > tol))
    if rank_cap is not None:
        rank = min(rank, int(rank_cap))
    if rank < 1:
        raise DegenerateCloudError("centered cloud has rank 0")

    basis = vt[:rank].T
    z = y_c @ basis
    return ProjectionBasis(mean_offset=m_red, basis=basis, rank=rank, singular_values=s), z


# ---------------------------------------------------------
#  HULL VERTICES
# ---------------------------------------------------------
def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _monotone_chain(pts: np.ndarray) -> list:
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    coords = [tuple(p) for p in pts.tolist()]

    def half(seq):
        chain = []
        for i in seq:
            while len(chain) >= 2 and _cross(coords[chain[-2]], coords[chain[-1]], coords[i]) <= 0:
                chain.pop()
            chain.append(i)
        return chain

    lower = half(order)
    upper = half(order[::-1])
    return lower[:-1] + upper[:-1]


def _octagon_filter(pts: np.ndarray) -> np.ndarray:
    """Indices that survive the Akl-Toussaint throw-away step."""
    if len(pts) < 64:
        return np.arange(len(pts))
    x, y = pts[:, 0], pts[:, 1]
    probes = [np.argmin(x), np.argmax(x), np.argmin(y), np.argmax(y),
              np.argmin(x + y), np.argmax(x + y), np.argmin(x - y), np.argmax(x - y)]
    extreme = np.unique(probes)
    if len(extreme) < 3:
        return np.arange(len(pts))
    ring = extreme[_monotone_chain(pts[extreme])]
    if len(ring) < 3:
        return np.arange(len(pts))
    inside = np.ones(len(pts), dtype=bool)
    for a, b in zip(ring, np.roll(ring, -1)):
        ax, ay = pts[a]
        bx, by = pts[b]
        inside &= (bx - ax) * (y - ay) - (by - ay) * (x - ax) > 0
    return np.flatnonzero(~inside)


def _qhull_vertices(pts: np.ndarray) -> np.ndarray:
    try:
        return ConvexHull(pts).vertices
    except QhullError:
        # retry once on a relatively jittered copy; degenerate facets are numeric
        scale = float(np.ptp(pts, axis=0).max()) or 1.0
        jitter = np.random.default_rng(0).standard_normal(pts.shape) * 1e-12 * scale
        logger.debug("qhull failed on %d points, retrying with jitter", len(pts))
        try:
            return ConvexHull(pts + jitter).vertices
        except QhullError as exc:
            raise DegenerateCloudError(f"convex hull failed: {exc}") from exc


def hull_vertices(z, hull_dim_max: int = DEFAULT_HULL_DIM_MAX) -> np.ndarray:
    """Sorted indices of the extreme points of conv{z_1..z_n}.

    Duplicate points are represented by their first occurrence.
    """
    z = np.asarray(z, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    n, r = z.shape
    if r < 1:
        raise ValueError("need at least one coordinate")
    if r > hull_dim_max:
        raise HullDimensionExceededError(f"hull dimension {r} exceeds limit {hull_dim_max}")
    if n < r + 1:
        raise DegenerateCloudError(f"{n} points cannot span {r} dimensions")

    uniq, first = np.unique(z, axis=0, return_index=True)
    if len(uniq) < r + 1 or np.linalg.matrix_rank(uniq - uniq.mean(axis=0)) < r:
        raise DegenerateCloudError(f"points are affinely dependent below dimension {r}")

    if r == 1:
        local = np.array([np.argmin(uniq[:, 0]), np.argmax(uniq[:, 0])])
    elif r == 2:
        keep = _octagon_filter(uniq)
        local = keep[_monotone_chain(uniq[keep])]
        if len(local) < 3:
            raise DegenerateCloudError("all points are collinear")
    else:
        local = _qhull_vertices(uniq)
    return np.sort(first[np.unique(local)])


# ---------------------------------------------------------
#  SIMPLEX VOLUME
# ---------------------------------------------------------
def _log_volumes(points: np.ndarray, subsets: np.ndarray) -> np.ndarray:
    """Batched log (K-1)-volumes; subsets is (B, K) of row indices into points."""
    K = subsets.shape[1]
    edges = points[subsets[:, 1:]] - points[subsets[:, :1]]
    gram = edges @ np.swapaxes(edges, 1, 2)
    sign, logdet = np.linalg.slogdet(gram)
    out = 0.5 * logdet - gammaln(K)
    out[(sign <= 0) | (logdet <= math.log(DEGENERATE_GRAM))] = -np.inf
    return out


def simplex_log_volume(vertices) -> float:
    """log of sqrt(det(M^T M)) / (K-1)! with M the edge vectors from the first vertex."""
    vertices = np.atleast_2d(np.asarray(vertices, dtype=float))
    K = vertices.shape[0]
    if K < 2:
        raise ValueError("a simplex needs at least two vertices")
    return float(_log_volumes(vertices, np.arange(K)[None, :])[0])


# ---------------------------------------------------------
#  MAX-VOLUME SEARCH
# ---------------------------------------------------------
def subset_blocks(m: int, K: int, chunk: int = _CHUNK):
    """All K-subsets of range(m) in lexicographic order, as (B, K) index blocks."""
    pool = combinations(range(m), K)
    while True:
        flat = np.fromiter(chain.from_iterable(islice(pool, chunk)), dtype=np.intp)
        if flat.size == 0:
            return
        yield flat.reshape(-1, K)


def max_volume_exhaustive(candidates, K: int, exhaustive_budget: int = DEFAULT_EXHAUSTIVE_BUDGET) -> VertexSubset:
    """Scan all K-subsets in lexicographic order; the first maximiser wins ties."""
    candidates = np.asarray(candidates, dtype=float)
    m = candidates.shape[0]
    if m < K:
        raise ValueError(f"{m} candidates for {K} vertices")
    total = math.comb(m, K)
    if total > exhaustive_budget:
        raise BudgetExceededError(f"{total} subsets exceed the exhaustive budget {exhaustive_budget}")

    best_value, best_subset = -np.inf, None
    for block in subset_blocks(m, K):
        values = _log_volumes(candidates, block)
        pos = int(np.argmax(values))
        if values[pos] > best_value:
            best_value, best_subset = float(values[pos]), tuple(int(i) for i in block[pos])

    if best_subset is None:
        raise AllDegenerateError(f"every {K}-subset of {m} candidates is degenerate")
    return VertexSubset(indices=best_subset, log_volume=best_value)


def atgp(candidates, K: int) -> list:
    """Automatic target generation: successive maximum-residual picks.

    Works on the candidates augmented with a unit coordinate so the picks are
    affinely independent rather than merely linearly independent.
    """
    candidates = np.asarray(candidates, dtype=float)
    aug = np.hstack([candidates, np.ones((candidates.shape[0], 1))])
    picked = []
    residual = aug
    for _ in range(K):
        norms = np.einsum("ij,ij->i", residual, residual)
        norms[picked] = -np.inf
        idx = int(np.argmax(norms))
        picked.append(idx)
        q, _ = np.linalg.qr(aug[picked].T)
        residual = aug - (aug @ q) @ q.T
    return picked


def max_volume_greedy(candidates, K: int, max_sweeps: int = 100) -> VertexSubset:
    """ATGP start followed by best single-vertex replacement sweeps."""
    candidates = np.asarray(candidates, dtype=float)
    m = candidates.shape[0]
    if m < K:
        raise ValueError(f"{m} candidates for {K} vertices")

    current = atgp(candidates, K)
    value = float(_log_volumes(candidates, np.array([current]))[0])
    logger.debug("greedy start %s log_volume=%.6g", current, value)

    for sweep in range(max_sweeps):
        accepted = False
        for pos in range(K):
            trial = np.tile(np.array(current, dtype=np.intp), (m, 1))
            trial[:, pos] = np.arange(m)
            values = _log_volumes(candidates, trial)
            values[current] = -np.inf
            best = int(np.argmax(values))
            if values[best] > value + SWAP_GAIN:
                logger.debug("sweep %d: slot %d %d -> %d (%.6g)", sweep, pos, current[pos], best, values[best])
                current[pos] = best
                value = float(values[best])
                accepted = True
        if not accepted:
            break

    if not np.isfinite(value):
        raise AllDegenerateError(f"no {K} affinely independent points among {m} candidates")
    return VertexSubset(indices=tuple(sorted(current)), log_volume=value)


# ---------------------------------------------------------
#  AFFINE RIGHT INVERSE
# ---------------------------------------------------------
def affine_right_inverse(hstar_hat) -> np.ndarray:
    """R = H_aug^T (H_aug H_aug^T)^+ with H_aug = [H* | 1]."""
    hstar_hat = np.atleast_2d(np.asarray(hstar_hat, dtype=float))
    if np.any(hstar_hat < 0):
        raise ValueError("profile matrix must be non-negative")
    _check_simplex_rows(hstar_hat)
    K = hstar_hat.shape[0]
    h_aug = np.hstack([hstar_hat, np.ones((K, 1))])
    s = np.linalg.svd(h_aug, compute_uv=False)
    if s[-1] < 1e-10 * s[0]:
        warnings.warn(
            f"augmented profile matrix is rank deficient (sigma_min/sigma_max = {s[-1] / s[0]:.3g})",
            RankDeficientWarning,
            stacklevel=2,
        )
    return h_aug.T @ np.linalg.pinv(h_aug @ h_aug.T)
