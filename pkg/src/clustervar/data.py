"""Core data containers: cluster partitions and regression problems.

Observations are indexed 0..n-1 in file/array order; they do not need to be
sorted by cluster. A partition maps every observation to exactly one cluster
and exposes, per cluster, the ordered list of member indices used for all
block extraction downstream.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .exceptions import UnknownClusterError
from .validation import check_finite, check_matrix, check_vector, readonly

__all__ = ["ClusterPartition", "RegressionProblem"]


@dataclass(frozen=True)
class ClusterPartition:
    """One-way partition of observations into clusters.

    Parameters
    ----------
    assignments : sequence
        Cluster label for each observation, in observation order. Labels are
        opaque but must be mutually comparable (all strings or all ints);
        cluster-ordered reductions iterate labels in ascending order.
    """

    assignments: tuple = field()

    def __init__(self, assignments):
        labels = tuple(assignments)
        if len(labels) == 0:
            raise ValueError("partition needs at least one observation")
        object.__setattr__(self, "assignments", labels)
        # fail fast if the labels cannot be ordered
        self.labels  # noqa: B018

    @cached_property
    def groups(self) -> dict:
        """Map label -> ascending array of member observation indices."""
        out: dict = {}
        for i, lab in enumerate(self.assignments):
            out.setdefault(lab, []).append(i)
        return {lab: np.asarray(idx, dtype=np.intp) for lab, idx in out.items()}

    @cached_property
    def labels(self) -> tuple:
        """Cluster labels in ascending order."""
        try:
            return tuple(sorted(set(self.assignments)))
        except TypeError:
            raise ValueError(
                "cluster labels must be mutually orderable (all strings or "
                "all numbers); deterministic reductions iterate them in order"
            ) from None

    @property
    def n_obs(self) -> int:
        return len(self.assignments)

    @property
    def n_clusters(self) -> int:
        return len(self.labels)

    def indices(self, label) -> np.ndarray:
        try:
            return self.groups[label]
        except KeyError:
            raise UnknownClusterError(label) from None

    def sizes(self) -> dict:
        return {lab: len(idx) for lab, idx in self.groups.items()}

    @classmethod
    def singletons(cls, n: int) -> "ClusterPartition":
        """Each observation is its own cluster (degenerate clustering)."""
        return cls(range(n))


@dataclass(frozen=True, eq=False)
class RegressionProblem:
    """A response, focal regressors, nuisance controls and a partition.

    The fitted design is ``(W, X)``: controls first, then the r focal
    columns whose coefficients are the target of inference. All arrays are
    stored as read-only copies, so a problem can be shared across threads.

    Parameters
    ----------
    y : array, shape (n,)
    X : array, shape (n, r)
        Focal regressors; r >= 1.
    W : array, shape (n, k), optional
        Nuisance controls; defaults to no controls.
    partition : ClusterPartition
    """

    y: np.ndarray
    X: np.ndarray
    W: np.ndarray
    partition: ClusterPartition

    def __init__(self, y, X, W=None, partition: ClusterPartition | None = None):
        y = check_vector(y, "y")
        n = y.shape[0]
        X = check_matrix(X, "X", n_rows=n)
        if X.shape[1] < 1:
            raise ValueError("X needs at least one focal column")
        W = np.empty((n, 0)) if W is None else check_matrix(W, "W", n_rows=n)
        if partition is None:
            partition = ClusterPartition.singletons(n)
        if partition.n_obs != n:
            raise ValueError(
                f"partition covers {partition.n_obs} observations, data has {n}"
            )
        for name, arr in (("y", y), ("X", X), ("W", W)):
            check_finite(arr, name)
        if n < X.shape[1] + W.shape[1]:
            raise ValueError(
                f"need at least as many observations as regressors: "
                f"n={n}, p={X.shape[1] + W.shape[1]}"
            )
        object.__setattr__(self, "y", readonly(y))
        object.__setattr__(self, "X", readonly(X))
        object.__setattr__(self, "W", readonly(W))
        object.__setattr__(self, "partition", partition)

    @property
    def n_obs(self) -> int:
        return self.y.shape[0]

    @property
    def n_focal(self) -> int:
        return self.X.shape[1]

    @property
    def n_controls(self) -> int:
        return self.W.shape[1]

    @property
    def n_params(self) -> int:
        return self.n_focal + self.n_controls

    def design(self) -> np.ndarray:
        """Assembled design matrix (W, X); controls first, focal last."""
        return np.hstack([self.W, self.X])

    def with_response(self, y) -> "RegressionProblem":
        """Same design and partition, new response vector."""
        return RegressionProblem(y, self.X, self.W, self.partition)
