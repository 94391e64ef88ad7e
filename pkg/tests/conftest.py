import numpy as np
import pytest

from clustervar import ClusterPartition, RegressionProblem


def make_problem(rng, n_clusters=5, size_range=(1, 5), r=2, k=3, shuffle=True,
                 noise=1.0):
    """Random full-rank problem with unsorted cluster labels."""
    sizes = rng.integers(size_range[0], size_range[1] + 1, size=n_clusters)
    n = int(sizes.sum())
    p = r + k
    if n < p + 2:
        sizes[0] += p + 2 - n
        n = int(sizes.sum())
    labels = np.repeat(np.arange(n_clusters), sizes)
    if shuffle:
        rng.shuffle(labels)
    X = rng.standard_normal((n, r))
    W = rng.standard_normal((n, k))
    coef = rng.standard_normal(p)
    y = W @ coef[:k] + X @ coef[k:] + noise * rng.standard_normal(n)
    return RegressionProblem(y, X, W, ClusterPartition(labels))


@pytest.fixture
def rng():
    return np.random.default_rng(20260808)
