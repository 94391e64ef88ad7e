"""Block-diagonal error covariance specifications.

An OmegaSpec holds one symmetric PSD block per cluster. Parametric
constructors cover the families used for bias audits and simulation ground
truth: scaled identity, equicorrelated, and within-cluster AR(1).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import ClusterPartition
from .exceptions import BlockShapeMismatchError, NonPsdBlockError
from .validation import check_symmetric, readonly

__all__ = ["OmegaSpec", "PSD_TOL"]

#: eigenvalue tolerance below which a matrix is treated as not PSD / singular
PSD_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class OmegaSpec:
    """Per-cluster error covariance blocks, keyed by cluster label."""

    blocks: dict = field()

    def __init__(self, blocks: dict):
        checked = {}
        for lab, block in blocks.items():
            arr = np.asarray(block, dtype=float)
            if arr.ndim == 0:
                arr = arr.reshape(1, 1)
            if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
                raise BlockShapeMismatchError(
                    f"block for cluster {lab!r} must be square, got {arr.shape}"
                )
            try:
                arr = check_symmetric(arr, f"block {lab!r}")
            except ValueError as exc:
                raise NonPsdBlockError(str(exc)) from None
            if np.linalg.eigvalsh(arr)[0] < -PSD_TOL:
                raise NonPsdBlockError(
                    f"block for cluster {lab!r} is not positive semidefinite"
                )
            checked[lab] = readonly(arr)
        object.__setattr__(self, "blocks", checked)

    def block(self, label) -> np.ndarray:
        return self.blocks[label]

    def validate_for(self, partition: ClusterPartition) -> None:
        """Check the blocks cover exactly the partition's clusters and sizes."""
        sizes = partition.sizes()
        missing = set(sizes) - set(self.blocks)
        extra = set(self.blocks) - set(sizes)
        if missing or extra:
            raise BlockShapeMismatchError(
                f"blocks do not match partition: missing {sorted(map(repr, missing))}, "
                f"extra {sorted(map(repr, extra))}"
            )
        for lab, size in sizes.items():
            if self.blocks[lab].shape[0] != size:
                raise BlockShapeMismatchError(
                    f"block for cluster {lab!r} has size {self.blocks[lab].shape[0]}, "
                    f"cluster has {size} members"
                )

    def max_eigenvalue(self) -> float:
        """Largest eigenvalue of the full block-diagonal matrix."""
        return max(float(np.linalg.eigvalsh(b)[-1]) for b in self.blocks.values())

    # ------------------------------------------------------------------
    # parametric families

    @classmethod
    def scaled_identity(cls, partition: ClusterPartition, sigma2: float) -> "OmegaSpec":
        """Homoskedastic independent errors: sigma2 * I per cluster."""
        if sigma2 < 0:
            raise ValueError("sigma2 must be non-negative")
        return cls(
            {lab: sigma2 * np.eye(size) for lab, size in partition.sizes().items()}
        )

    @classmethod
    def equicorrelated(
        cls, partition: ClusterPartition, sigma2: float, rho: float
    ) -> "OmegaSpec":
        """Exchangeable within-cluster correlation rho at variance sigma2."""
        if sigma2 < 0:
            raise ValueError("sigma2 must be non-negative")
        blocks = {}
        for lab, size in partition.sizes().items():
            blocks[lab] = sigma2 * ((1 - rho) * np.eye(size) + rho * np.ones((size, size)))
        return cls(blocks)

    @classmethod
    def ar1(cls, partition: ClusterPartition, sigma2: float, rho: float) -> "OmegaSpec":
        """Within-cluster AR(1) correlation: sigma2 * rho^|s-t|."""
        if sigma2 < 0:
            raise ValueError("sigma2 must be non-negative")
        if not -1 < rho < 1:
            raise ValueError("AR(1) rho must lie in (-1, 1)")
        blocks = {}
        for lab, size in partition.sizes().items():
            t = np.arange(size)
            blocks[lab] = sigma2 * rho ** np.abs(t[:, None] - t[None, :])
        return cls(blocks)
