"""Exception hierarchy.

Two broad families matter for the command line: data errors (malformed or
inconsistent input, exit code 2) and numerical errors (rank deficiency,
unidentified leave-out clusters and the like, exit code 3).
"""

from __future__ import annotations


class ClusterVarError(Exception):
    """Base class for all clustervar errors."""


class DataError(ClusterVarError):
    """Malformed or inconsistent input data."""


class NumericalError(ClusterVarError):
    """Numerical failure: the requested quantity is not identified."""


# ---------------------------------------------------------------------------
# data errors


class NonFiniteError(DataError):
    """Input contains NaN or Inf entries."""


class UnknownClusterError(DataError):
    """A cluster label is not present in the partition."""

    def __init__(self, label: object):
        self.label = label
        super().__init__(f"unknown cluster label: {label!r}")


class BlockShapeMismatchError(DataError):
    """A per-cluster covariance block does not match the cluster layout."""


class NonPsdBlockError(DataError):
    """A covariance block is not positive semidefinite."""


class MissingColumnError(DataError):
    def __init__(self, column: str):
        self.column = column
        super().__init__(f"column not found in file: {column!r}")


class NonNumericCellError(DataError):
    def __init__(self, row: int, column: str, value: str):
        self.row = row
        self.column = column
        self.value = value
        super().__init__(
            f"non-numeric value {value!r} in column {column!r}, data row {row}"
        )


class EmptyFileError(DataError):
    pass


class DuplicateHeaderError(DataError):
    def __init__(self, column: str):
        self.column = column
        super().__init__(f"duplicate column name in header: {column!r}")


# ---------------------------------------------------------------------------
# numerical errors


class RankDeficientError(NumericalError):
    """The design matrix is numerically rank deficient."""

    def __init__(self, rank: int, needed: int):
        self.rank = rank
        self.needed = needed
        super().__init__(
            f"design matrix is rank deficient: numerical rank {rank}, "
            f"need {needed} independent columns"
        )


class ClusterNotLeaveOutIdentifiedError(NumericalError):
    """Leaving a cluster out makes the within-cluster annihilator singular.

    The smallest eigenvalue of the cluster's annihilator block is at or
    below tolerance, so leave-cluster-out residuals (and every estimator
    built on them) are not identified for this cluster.
    """

    def __init__(self, label: object, min_eigenvalue: float):
        self.label = label
        self.min_eigenvalue = min_eigenvalue
        super().__init__(
            f"cluster {label!r} is not leave-out identified: "
            f"min annihilator eigenvalue {min_eigenvalue:.3e}"
        )


class SingularOmegaBlockError(NumericalError):
    def __init__(self, label: object, min_eigenvalue: float):
        self.label = label
        self.min_eigenvalue = min_eigenvalue
        super().__init__(
            f"covariance block for cluster {label!r} is singular "
            f"(min eigenvalue {min_eigenvalue:.3e})"
        )


class ZeroDenominatorError(NumericalError):
    """The direction vector is annihilated by the design."""


class NonPositiveVarianceError(NumericalError):
    """A requested coordinate has non-positive estimated variance."""


class DegenerateDistributionError(NumericalError):
    """Simulated statistics are degenerate (zero variance)."""
