"""Independent reference implementations used by the tests."""

import numpy as np


def brute_force_dbscan(X, eps, min_pts):
    """Density-connectivity by transitive closure of the core adjacency matrix.

    Returns ``(partition, noise)``: a set of frozensets of indices and the set
    of noise indices. Border points go to the cluster of their lowest-index
    core neighbor.
    """
    X = np.asarray(X, dtype=np.float64)
    k = len(X)
    d = np.sqrt(((X[:, None, :] - X[None, :, :]) ** 2).sum(-1))
    adj = d <= eps
    core = adj.sum(1) >= min_pts
    reach = adj & core[:, None] & core[None, :]
    reach |= np.eye(k, dtype=bool) & core[:, None]
    # Warshall closure
    for m in range(k):
        reach |= reach[:, m:m + 1] & reach[m:m + 1, :]
    owner = np.full(k, -1)
    for i in range(k):
        if core[i]:
            owner[i] = int(np.flatnonzero(reach[i])[0])
    for i in range(k):
        if not core[i]:
            nb = np.flatnonzero(adj[i] & core)
            if nb.size:
                owner[i] = owner[nb[0]]
    groups = {}
    for i, o in enumerate(owner):
        if o >= 0:
            groups.setdefault(o, set()).add(i)
    return {frozenset(g) for g in groups.values()}, set(np.flatnonzero(owner < 0).tolist())


def partition_of(labels):
    labels = np.asarray(labels)
    groups = {frozenset(np.flatnonzero(labels == c).tolist()) for c in set(labels.tolist()) if c >= 0}
    return groups, set(np.flatnonzero(labels < 0).tolist())


def random_instance(rng, k_max=100, d_max=61):
    """Blobs of varying spread plus uniform background points."""
    k = int(rng.integers(2, k_max + 1))
    dim = int(rng.integers(1, d_max + 1))
    n_blobs = int(rng.integers(1, 5))
    centers = rng.normal(scale=4.0, size=(n_blobs, dim))
    which = rng.integers(0, n_blobs, size=k)
    X = centers[which] + rng.normal(scale=rng.uniform(0.2, 1.5), size=(k, dim))
    n_bg = int(rng.integers(0, max(1, k // 5)))
    if n_bg:
        X[:n_bg] = rng.uniform(-8, 8, size=(n_bg, dim))
    return X
