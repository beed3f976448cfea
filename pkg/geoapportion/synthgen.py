# geoapportion/synthgen.py
"""Synthetic ground truth: profile matrices, stationary emission processes, true Phi."""
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Tuple, Union

import numpy as np
from scipy.signal import lfilter
from scipy.spatial.distance import cdist
from tenacity import Retrying, before_sleep_log, retry_if_exception_type, stop_after_attempt

from geoapportion.config import DEFAULT_EXHAUSTIVE_BUDGET, DEFAULT_HULL_DIM_MAX
from geoapportion.errors import DegenerateCloudError, HullDimensionExceededError, ProfileRejectedError
from geoapportion.geometry import hull_vertices, intrinsic_projection, subset_blocks
from geoapportion.models import AttributionMatrix, ConcentrationMatrix, default_pollutant_names

logger = logging.getLogger(__name__)

STREAM_STRIDE = 2**16
PARAMS_SLOT = STREAM_STRIDE - 2
PROFILE_SLOT = STREAM_STRIDE - 1
MAX_PROFILE_ATTEMPTS = 100
DEFAULT_PROFILE_CANDIDATES = 500
AR1_PHI = 0.8


# ---------------------------------------------------------
#  RANDOM STREAMS
# ---------------------------------------------------------
@dataclass(frozen=True)
class RngSpec:
    """Philox stream keyed by (master_seed, stream_id).

    Replicate r, source k draws from stream r * 2**16 + k; profile and
    parameter draws use the two top slots of the replicate's block.
    """

    master_seed: int
    stream_id: int = 0

    @classmethod
    def for_replicate(cls, master_seed: int, replicate: int) -> "RngSpec":
        return cls(master_seed, replicate * STREAM_STRIDE)

    def substream(self, slot: int) -> "RngSpec":
        return RngSpec(self.master_seed, self.stream_id + slot)

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(self.master_seed, spawn_key=(self.stream_id,))
        return np.random.Generator(np.random.Philox(seq))


# ---------------------------------------------------------
#  PROCESS PARAMETERS
# ---------------------------------------------------------
@dataclass(frozen=True)
class LogAR1Params:
    phi: np.ndarray
    mu_g: np.ndarray
    sigma_eps: np.ndarray

    def __post_init__(self):
        phi, mu_g, sigma = (np.atleast_1d(np.asarray(a, dtype=float)) for a in (self.phi, self.mu_g, self.sigma_eps))
        if not phi.shape == mu_g.shape == sigma.shape:
            raise ValueError("phi, mu_g and sigma_eps must have one entry per source")
        if np.any(np.abs(phi) >= 1):
            raise ValueError("AR coefficients must satisfy |phi| < 1")
        if np.any(sigma < 0):
            raise ValueError("innovation scales must be non-negative")
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "mu_g", mu_g)
        object.__setattr__(self, "sigma_eps", sigma)

    @property
    def K(self) -> int:
        return self.phi.size

    @property
    def stationary_var(self) -> np.ndarray:
        return self.sigma_eps**2 / (1.0 - self.phi**2)


@dataclass(frozen=True)
class LognormalMixtureParams:
    """Per source k: weights, log-means and log-sds of its C_k components."""

    weights: Tuple[np.ndarray, ...]
    means: Tuple[np.ndarray, ...]
    sds: Tuple[np.ndarray, ...]

    def __post_init__(self):
        w = tuple(np.atleast_1d(np.asarray(a, dtype=float)) for a in self.weights)
        m = tuple(np.atleast_1d(np.asarray(a, dtype=float)) for a in self.means)
        s = tuple(np.atleast_1d(np.asarray(a, dtype=float)) for a in self.sds)
        if not len(w) == len(m) == len(s):
            raise ValueError("weights, means and sds must cover the same sources")
        for k, (wk, mk, sk) in enumerate(zip(w, m, s)):
            if wk.size < 1 or not wk.shape == mk.shape == sk.shape:
                raise ValueError(f"source {k}: inconsistent component counts")
            if np.any(wk < 0) or abs(wk.sum() - 1.0) > 1e-12:
                raise ValueError(f"source {k}: weights must lie on the simplex")
            if np.any(sk < 0):
                raise ValueError(f"source {k}: component sds must be non-negative")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "sds", s)

    @property
    def K(self) -> int:
        return len(self.weights)

    @property
    def component_counts(self) -> np.ndarray:
        return np.array([w.size for w in self.weights])


ProcessParams = Union[LogAR1Params, LognormalMixtureParams]


@dataclass(frozen=True)
class GroundTruth:
    W: np.ndarray
    H: np.ndarray
    mu: np.ndarray
    phi_true: AttributionMatrix
    phi_sample: AttributionMatrix
    params: Optional[ProcessParams] = field(default=None, repr=False)

    @property
    def h_star(self) -> np.ndarray:
        return self.H / self.H.sum(axis=1, keepdims=True)


# ---------------------------------------------------------
#  PROFILES
# ---------------------------------------------------------
def _max_min_distance(points: np.ndarray, K: int, budget: int) -> np.ndarray:
    """K points whose smallest pairwise distance is largest."""
    m = len(points)
    if K == 1:
        return np.array([0])
    dist = cdist(points, points)
    pairs = [(a, b) for a in range(K) for b in range(a + 1, K)]

    if math.comb(m, K) <= budget:
        best_value, best = -np.inf, None
        for block in subset_blocks(m, K):
            spread = np.min(np.stack([dist[block[:, a], block[:, b]] for a, b in pairs]), axis=0)
            pos = int(np.argmax(spread))
            if spread[pos] > best_value:
                best_value, best = spread[pos], block[pos]
        return np.asarray(best)

    # farthest-point insertion, then single swaps while the minimum spacing grows
    first, second = np.unravel_index(int(np.argmax(dist)), dist.shape)
    chosen = [int(min(first, second)), int(max(first, second))]
    while len(chosen) < K:
        gap = dist[:, chosen].min(axis=1)
        gap[chosen] = -np.inf
        chosen.append(int(np.argmax(gap)))

    def spacing(idx):
        sub = dist[np.ix_(idx, idx)]
        return sub[np.triu_indices(len(idx), 1)].min()

    value = spacing(chosen)
    improved = True
    while improved:
        improved = False
        for pos in range(K):
            for cand in range(m):
                if cand in chosen:
                    continue
                trial = chosen[:pos] + [cand] + chosen[pos + 1:]
                v = spacing(trial)
                if v > value:
                    chosen, value, improved = trial, v, True
    return np.sort(np.array(chosen))


def _draw_profile(gen: np.random.Generator, J: int, K: int, n_candidates: int, budget: int, hull_dim_max: int):
    raw = gen.exponential(1.0, size=(n_candidates, J))
    candidates = raw / raw.sum(axis=1, keepdims=True)
    try:
        _, z = intrinsic_projection(candidates)
        verts = hull_vertices(z, hull_dim_max=hull_dim_max)
    except HullDimensionExceededError:
        verts = np.arange(n_candidates)
    except DegenerateCloudError as exc:
        raise ProfileRejectedError(f"candidate cloud is degenerate: {exc}") from exc
    if len(verts) < K:
        raise ProfileRejectedError(f"hull has {len(verts)} vertices, need {K}")

    H = candidates[verts[_max_min_distance(candidates[verts], K, budget)]]
    s = np.linalg.svd(H, compute_uv=False)
    if s[-1] <= 1e-10 * s[0]:
        raise ProfileRejectedError("selected profiles are not of full row rank")
    return H


def generate_profile_matrix(
    J: int,
    K: int,
    n_candidates: Optional[int] = None,
    rng: Optional[RngSpec] = None,
    exhaustive_budget: int = DEFAULT_EXHAUSTIVE_BUDGET,
    hull_dim_max: int = DEFAULT_HULL_DIM_MAX,
) -> np.ndarray:
    """K well-separated hull vertices of Exp(1) vectors mapped to the simplex."""
    if not 1 <= K < J:
        raise ValueError(f"need 1 <= K < J, got K={K}, J={J}")
    n_candidates = n_candidates or max(DEFAULT_PROFILE_CANDIDATES, 10 * K)
    if n_candidates < 10 * K:
        raise ValueError("n_candidates must be at least 10*K")
    gen = (rng or RngSpec(0)).generator()

    retrying = Retrying(
        stop=stop_after_attempt(MAX_PROFILE_ATTEMPTS),
        retry=retry_if_exception_type(ProfileRejectedError),
        before_sleep=before_sleep_log(logger, logging.DEBUG),
        reraise=True,
    )
    for attempt in retrying:
        with attempt:
            return _draw_profile(gen, J, K, n_candidates, exhaustive_budget, hull_dim_max)


# ---------------------------------------------------------
#  EMISSION PROCESSES
# ---------------------------------------------------------
def simulate_log_ar1(n: int, params: LogAR1Params, rng: RngSpec) -> np.ndarray:
    """W_ik = exp(g_ik) with g_.k a stationary Gaussian AR(1), started in its stationary law."""
    W = np.empty((n, params.K))
    sd0 = np.sqrt(params.stationary_var)
    for k in range(params.K):
        shocks = rng.substream(k).generator().standard_normal(n)
        e = params.sigma_eps[k] * shocks
        e[0] = sd0[k] * shocks[0]
        dev = lfilter([1.0], [1.0, -params.phi[k]], e)
        W[:, k] = np.exp(params.mu_g[k] + dev)
    return W


def population_mean_log_ar1(params: LogAR1Params) -> np.ndarray:
    return np.exp(params.mu_g + 0.5 * params.stationary_var)


def draw_ar1_params(K: int, rng: RngSpec) -> LogAR1Params:
    gen = rng.generator()
    mu_g = gen.uniform(-0.5, 0.5, size=K)
    sigma = gen.uniform(0.15, 0.5, size=K)
    return LogAR1Params(phi=np.full(K, AR1_PHI), mu_g=mu_g, sigma_eps=sigma)


def simulate_lognormal_mixture(n: int, params: LognormalMixtureParams, rng: RngSpec) -> np.ndarray:
    """Rows iid; column k draws a component then a lognormal value from it."""
    W = np.empty((n, params.K))
    for k in range(params.K):
        gen = rng.substream(k).generator()
        comp = gen.choice(params.weights[k].size, size=n, p=params.weights[k])
        W[:, k] = np.exp(params.means[k][comp] + params.sds[k][comp] * gen.standard_normal(n))
    return W


def population_mean_mixture(params: LognormalMixtureParams) -> np.ndarray:
    return np.array([
        np.sum(w * np.exp(m + 0.5 * s**2)) for w, m, s in zip(params.weights, params.means, params.sds)
    ])


def draw_mixture_params(K: int, rng: RngSpec) -> LognormalMixtureParams:
    gen = rng.generator()
    weights, means, sds = [], [], []
    for _ in range(K):
        c = int(gen.poisson(3.0)) + 1
        weights.append(gen.dirichlet(np.ones(c)))
        means.append(gen.uniform(-1.0, 1.0, size=c))
        sds.append(gen.uniform(0.1, 1.0, size=c))
    return LognormalMixtureParams(tuple(weights), tuple(means), tuple(sds))


# ---------------------------------------------------------
#  ATTRIBUTIONS
# ---------------------------------------------------------
def true_phi(mu, H) -> AttributionMatrix:
    """Population attribution matrix from source means and profiles."""
    return AttributionMatrix.from_means(mu, H)


def sample_phi(W, H) -> AttributionMatrix:
    """Share of the observed pollutant totals produced by each source in this sample."""
    return AttributionMatrix.from_means(np.asarray(W, dtype=float).mean(axis=0), H)


def make_ground_truth(
    n: int,
    J: int,
    K: int,
    process: str = "ar1",
    rng: Optional[RngSpec] = None,
    plant_corners: bool = False,
    n_candidates: Optional[int] = None,
) -> Tuple[ConcentrationMatrix, GroundTruth]:
    """Draw H, process parameters and W; return Y = W H with its truth.

    With plant_corners, K extra rows mu_k e_k are appended to W so the data
    contain every profile exactly.
    """
    rng = rng or RngSpec(0)
    H = generate_profile_matrix(J, K, n_candidates, rng.substream(PROFILE_SLOT))
    if process == "ar1":
        params = draw_ar1_params(K, rng.substream(PARAMS_SLOT))
        W = simulate_log_ar1(n, params, rng)
        mu = population_mean_log_ar1(params)
    elif process == "mixture":
        params = draw_mixture_params(K, rng.substream(PARAMS_SLOT))
        W = simulate_lognormal_mixture(n, params, rng)
        mu = population_mean_mixture(params)
    else:
        raise ValueError(f"unknown process {process!r}")

    if plant_corners:
        W = np.vstack([W, np.diag(mu)])
    Y = ConcentrationMatrix(W @ H, default_pollutant_names(J))
    truth = GroundTruth(W=W, H=H, mu=mu, phi_true=true_phi(mu, H), phi_sample=sample_phi(W, H), params=params)
    return Y, truth
