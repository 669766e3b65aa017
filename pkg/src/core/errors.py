from __future__ import annotations


class HedgeClipperError(Exception):
    """Base class for every error raised by the library."""


# --- dataset ---

class DatasetError(HedgeClipperError, ValueError):
    """Invalid dataset input or split request."""


class MalformedLine(DatasetError):
    def __init__(self, line_no: int, reason: str) -> None:
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no


class NonIncreasingIndex(DatasetError):
    def __init__(self, line_no: int, index: int) -> None:
        super().__init__(f"line {line_no}: feature index {index} is not strictly increasing")
        self.line_no = line_no
        self.index = index


class UnmappedLabel(DatasetError):
    def __init__(self, token: str, line_no: int | None = None) -> None:
        where = f" (line {line_no})" if line_no is not None else ""
        super().__init__(f"UnmappedLabel({token!r}){where}")
        self.token = token
        self.line_no = line_no


class InvalidBudget(DatasetError):
    """Requested labeled budget is not in 1..len(examples)."""


class EmptyUnlabeled(DatasetError):
    """A split would leave no unlabeled examples."""


class MissingLabel(DatasetError):
    """An operation that needs labels got an unlabeled example."""


# --- model container ---

class ModelFormatError(HedgeClipperError, ValueError):
    """A model file cannot be decoded."""


class BadFormat(ModelFormatError):
    pass


class VersionMismatch(ModelFormatError):
    pass


class Truncated(ModelFormatError):
    pass


class ChecksumMismatch(ModelFormatError):
    pass


class Inconsistent(ModelFormatError):
    pass


# --- specialists ---

class ZeroCoverageRow(HedgeClipperError, ValueError):
    """A specialist row participates on no unlabeled example."""


class DimensionMismatch(HedgeClipperError, ValueError):
    pass


class PartitionViolation(HedgeClipperError, RuntimeError):
    """A tree's leaf rows do not cover every unlabeled example exactly once."""


# --- estimation ---

class DropRow(HedgeClipperError):
    """Signal: a row is awake on no labeled example and cannot be estimated."""


class EstimationFailed(HedgeClipperError, RuntimeError):
    """No row survived correlation-bound estimation."""


# --- game solver ---

class NonFiniteInput(HedgeClipperError, ValueError):
    pass


class StepTooLarge(HedgeClipperError, RuntimeError):
    """SGD diverged: the slack rose far above its starting value."""


class ProblemTooLarge(HedgeClipperError, ValueError):
    """An exact oracle was asked to solve an instance beyond its size limit."""


class Infeasible(HedgeClipperError, RuntimeError):
    """The adversary's constraint set is empty (the game has no finite value)."""


class SolverFailed(HedgeClipperError, RuntimeError):
    """The LP backend stopped without an optimal solution."""


class ClippingViolation(HedgeClipperError, RuntimeError):
    pass


# --- metrics ---

class UndefinedMetric(HedgeClipperError, ValueError):
    """A metric is undefined for the given labels (e.g. AUC with one class)."""
