# geoapportion/errors.py
from typing import Optional


# ---------------------------------------------------------
#  ERRORS
# ---------------------------------------------------------
class ApportionError(Exception):
    """Root of every failure the pipeline reports.

    `category` is a stable snake_case label for machine consumers; `stage` is
    filled in by `apportion` when the error leaves one of its stages.
    """

    category = "apportion_error"

    def __init__(self, message: str, *, stage: Optional[str] = None):
        super().__init__(message)
        self.stage = stage

    def __str__(self) -> str:
        base = super().__str__()
        return f"[{self.stage}] {base}" if self.stage else base


class DegenerateCloudError(ApportionError):
    category = "degenerate_cloud"


class HullDimensionExceededError(ApportionError):
    category = "hull_dimension_exceeded"


class BudgetExceededError(ApportionError):
    category = "budget_exceeded"


class AllDegenerateError(ApportionError):
    category = "all_degenerate"


class ZeroRowError(ApportionError):
    category = "zero_row"

    def __init__(self, rows, **kw):
        self.rows = list(rows)
        preview = ", ".join(str(r) for r in self.rows[:5])
        super().__init__(f"{len(self.rows)} all-zero rows (first: {preview})", **kw)


class EmptyDataError(ApportionError):
    category = "empty_data"


class TooFewCandidatesError(ApportionError):
    category = "too_few_candidates"


class ZeroDenominatorError(ApportionError):
    category = "zero_denominator"

    def __init__(self, column: int, **kw):
        self.column = column
        super().__init__(f"pollutant column {column} is not explained by any source", **kw)


class ShapeMismatchError(ApportionError):
    category = "shape_mismatch"


class ZeroNormRowError(ApportionError):
    category = "zero_norm_row"


class ProfileRejectedError(ApportionError):
    category = "profile_rejected"


class InvalidDataError(ApportionError):
    category = "invalid_data"


class ParseError(InvalidDataError):
    category = "parse_error"

    def __init__(self, line: Optional[int], column: Optional[str], reason: str, **kw):
        self.line, self.column, self.reason = line, column, reason
        super().__init__(f"line {line}, column {column}: {reason}", **kw)


class NegativeValueError(InvalidDataError):
    category = "negative_value"

    def __init__(self, line: int, column: str, value: float, **kw):
        self.line, self.column, self.value = line, column, value
        super().__init__(f"line {line}, column {column}: negative value {value!r}", **kw)


class NonFiniteError(InvalidDataError):
    category = "non_finite"

    def __init__(self, line: int, column: str, value: float, **kw):
        self.line, self.column, self.value = line, column, value
        super().__init__(f"line {line}, column {column}: non-finite value {value!r}", **kw)


# ---------------------------------------------------------
#  WARNINGS
# ---------------------------------------------------------
class ApportionWarning(UserWarning):
    category = "apportion_warning"


class RankDeficientWarning(ApportionWarning):
    category = "rank_deficient"


class NegativeMeanWarning(ApportionWarning):
    category = "negative_mean"


class DroppedRowsWarning(ApportionWarning):
    category = "dropped_rows"


class HullFallbackWarning(ApportionWarning):
    category = "hull_fallback"


class SearchFallbackWarning(ApportionWarning):
    category = "search_fallback"


class NotContainedWarning(ApportionWarning):
    category = "not_contained"
