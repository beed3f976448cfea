# geoapportion/config.py
import os
from typing import Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

# Environment default for the study worker pool (overridden by --workers)
WORKERS_ENV = "GEOAPPORTION_WORKERS"

DEFAULT_EXHAUSTIVE_BUDGET = 2_000_000
DEFAULT_HULL_DIM_MAX = 8


def default_workers() -> int:
    raw = os.getenv(WORKERS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


# ---------------------------------------------------------
#  ESTIMATOR
# ---------------------------------------------------------
class EstimatorConfig(BaseModel):
    """Knobs of the apportionment pipeline. K is required, everything else defaults."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    K: int = Field(ge=1)
    search: Literal["greedy", "exhaustive", "auto"] = "auto"
    prune: bool = False
    cluster_count: Optional[int] = Field(default=None, ge=1)
    epsilon_clip: float = Field(default=1e-10, gt=0.0, le=1e-3)
    rank_cap: Optional[int] = Field(default=None, ge=1)
    exhaustive_budget: int = Field(default=DEFAULT_EXHAUSTIVE_BUDGET, ge=1)
    max_sweeps: int = Field(default=100, ge=0)
    mean_method: Literal["affine", "projected"] = "affine"
    zero_row_policy: Literal["drop", "error"] = "drop"
    hull_dim_max: int = Field(default=DEFAULT_HULL_DIM_MAX, ge=1)
    cluster_seed: int = 0

    @property
    def effective_rank_cap(self) -> int:
        # noiseless data has centered rank exactly K-1
        return self.rank_cap if self.rank_cap is not None else max(self.K - 1, 1)

    @property
    def effective_cluster_count(self) -> int:
        return self.cluster_count if self.cluster_count is not None else 10 * self.K


# ---------------------------------------------------------
#  MONTE CARLO STUDY
# ---------------------------------------------------------
class StudyDesign(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    process: Literal["ar1", "mixture"] = "ar1"
    J: int = Field(default=8, ge=2)
    K: int = Field(default=3, ge=1)
    n_grid: Tuple[int, ...] = (100, 300, 1500, 10000)
    replicates: int = Field(default=50, ge=1)
    search: Literal["greedy", "exhaustive", "auto", "both"] = "greedy"
    master_seed: int = Field(default=0, ge=0, lt=2**64)
    plant_corners: bool = False
    n_candidates: Optional[int] = None
    prune: bool = False
    mean_method: Literal["affine", "projected"] = "affine"

    @field_validator("n_grid")
    @classmethod
    def _positive_grid(cls, v):
        if not v or any(n < 1 for n in v):
            raise ValueError("n_grid must be a non-empty list of positive sizes")
        return tuple(v)

    @model_validator(mode="after")
    def _sources_fit(self):
        if self.K >= self.J:
            raise ValueError(f"K={self.K} must be smaller than J={self.J}")
        if self.n_candidates is not None and self.n_candidates < 10 * self.K:
            raise ValueError("n_candidates must be at least 10*K")
        return self

    def searches(self) -> Tuple[str, ...]:
        return ("greedy", "exhaustive") if self.search == "both" else (self.search,)

    def estimator_config(self, search: str) -> EstimatorConfig:
        return EstimatorConfig(K=self.K, search=search, prune=self.prune, mean_method=self.mean_method)


# ---------------------------------------------------------
#  CLI RUN
# ---------------------------------------------------------
class RunConfig(BaseModel):
    """Everything a CLI invocation used; serialised into each manifest."""

    command: Literal["simulate", "estimate", "evaluate", "convergence-study"]
    input_path: Optional[str] = None
    truth_path: Optional[str] = None
    output_dir: str
    estimator: Optional[EstimatorConfig] = None
    design: Optional[StudyDesign] = None
    n: Optional[int] = None
    replicate: int = 0
    master_seed: Optional[int] = None
    worker_count: int = Field(default_factory=default_workers, ge=1)
