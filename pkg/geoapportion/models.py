# geoapportion/models.py
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd

from geoapportion.errors import InvalidDataError, NegativeValueError, NonFiniteError, ZeroDenominatorError

COLUMN_SUM_TOL = 1e-10


def default_source_labels(K: int) -> List[str]:
    return [f"source_{k + 1}" for k in range(K)]


def default_pollutant_names(J: int) -> List[str]:
    return [f"pollutant_{j + 1}" for j in range(J)]


# ---------------------------------------------------------
#  OBSERVED DATA
# ---------------------------------------------------------
@dataclass(frozen=True)
class ConcentrationMatrix:
    """Observed n x J non-negative concentrations with pollutant labels."""

    values: np.ndarray
    pollutant_names: List[str] = field(default_factory=list)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise InvalidDataError(f"expected a non-empty 2-D matrix, got shape {values.shape}")
        bad = np.argwhere(~np.isfinite(values))
        if bad.size:
            i, j = bad[0]
            raise NonFiniteError(int(i) + 1, str(j), float(values[i, j]))
        neg = np.argwhere(values < 0)
        if neg.size:
            i, j = neg[0]
            raise NegativeValueError(int(i) + 1, str(j), float(values[i, j]))
        zero_cols = np.flatnonzero(~values.any(axis=0))
        if zero_cols.size:
            raise InvalidDataError(f"columns {zero_cols.tolist()} are entirely zero")
        names = list(self.pollutant_names) or default_pollutant_names(values.shape[1])
        if len(names) != values.shape[1]:
            raise InvalidDataError(f"{len(names)} pollutant names for {values.shape[1]} columns")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "pollutant_names", names)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def J(self) -> int:
        return self.values.shape[1]

    def scaled(self, column_scales: Sequence[float]) -> "ConcentrationMatrix":
        """Same records in different units: column j multiplied by column_scales[j]."""
        return ConcentrationMatrix(self.values * np.asarray(column_scales, dtype=float), self.pollutant_names)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.values, columns=self.pollutant_names)


@dataclass(frozen=True)
class RowNormalizedData:
    """Rows of Y projected onto the simplex, with the totals that were divided out."""

    ystar: np.ndarray
    row_sums: np.ndarray
    kept_rows: np.ndarray
    n_total: int

    @property
    def n_dropped(self) -> int:
        return self.n_total - len(self.kept_rows)


# ---------------------------------------------------------
#  ATTRIBUTIONS
# ---------------------------------------------------------
@dataclass(frozen=True)
class AttributionMatrix:
    """K x J column-stochastic matrix: share of pollutant j attributable to source k."""

    values: np.ndarray
    source_labels: List[str] = field(default_factory=list)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise ValueError(f"attribution matrix must be 2-D, got shape {values.shape}")
        sums = values.sum(axis=0)
        if np.any(np.abs(sums - 1.0) > COLUMN_SUM_TOL) or np.any(values < 0) or np.any(values > 1):
            raise ValueError("attribution matrix columns must lie on the simplex")
        labels = list(self.source_labels) or default_source_labels(values.shape[0])
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "source_labels", labels)

    @classmethod
    def from_means(cls, means, profiles, source_labels: Optional[List[str]] = None) -> "AttributionMatrix":
        """phi_kj = m_k H_kj / sum_l m_l H_lj."""
        means = np.asarray(means, dtype=float).ravel()
        profiles = np.atleast_2d(np.asarray(profiles, dtype=float))
        if profiles.shape[0] != means.size:
            raise ValueError(f"{means.size} means for {profiles.shape[0]} profile rows")
        if np.any(means < 0) or not np.all(np.isfinite(means)):
            raise ValueError("means must be finite and non-negative")
        contrib = means[:, None] * profiles
        denom = contrib.sum(axis=0)
        zero = np.flatnonzero(denom <= 0)
        if zero.size:
            raise ZeroDenominatorError(int(zero[0]))
        phi = np.clip(contrib / denom, 0.0, 1.0)
        return cls(phi, source_labels or [])

    @property
    def K(self) -> int:
        return self.values.shape[0]

    def permuted(self, permutation) -> "AttributionMatrix":
        permutation = np.asarray(permutation)
        return AttributionMatrix(self.values[permutation], [self.source_labels[p] for p in permutation])

    def to_frame(self, pollutant_names: Optional[List[str]] = None) -> pd.DataFrame:
        cols = pollutant_names or default_pollutant_names(self.values.shape[1])
        return pd.DataFrame(self.values, index=pd.Index(self.source_labels, name="source"), columns=cols)


# ---------------------------------------------------------
#  ESTIMATOR OUTPUT
# ---------------------------------------------------------
@dataclass
class Diagnostics:
    r_B: Optional[int] = None
    n_rows_dropped: int = 0
    n_hull_vertices: Optional[int] = None
    n_candidates_after_prune: Optional[int] = None
    log_volume: Optional[float] = None
    search_used: Optional[str] = None
    selected_rows: List[int] = field(default_factory=list)
    warnings: List[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        log_volume = self.log_volume
        if log_volume is not None and not np.isfinite(log_volume):
            log_volume = None
        return {
            "r_B": self.r_B,
            "n_rows_dropped": self.n_rows_dropped,
            "n_hull_vertices": self.n_hull_vertices,
            "n_candidates_after_prune": self.n_candidates_after_prune,
            "log_volume": log_volume,
            "search_used": self.search_used,
            "selected_rows": list(self.selected_rows),
            "warnings": list(self.warnings),
        }


@dataclass(frozen=True)
class ApportionmentEstimate:
    h_star_hat: np.ndarray
    m_tilde: np.ndarray
    phi_hat: AttributionMatrix
    diagnostics: Diagnostics

    def permuted(self, permutation) -> "ApportionmentEstimate":
        """Relabel sources; used to report estimates in the truth's row order."""
        permutation = np.asarray(permutation)
        return ApportionmentEstimate(
            h_star_hat=self.h_star_hat[permutation],
            m_tilde=self.m_tilde[permutation],
            phi_hat=self.phi_hat.permuted(permutation),
            diagnostics=self.diagnostics,
        )
