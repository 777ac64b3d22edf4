"""Independent brute-force reference implementations used to check the
package's fast paths. Everything here is O(N*M) on purpose."""

import numpy as np


def all_pairs_dist(a, b):
    """(len(a), len(b)) Euclidean distance matrix, plain numpy."""
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt((diff * diff).sum(axis=-1))


def nn_brute(points, queries):
    """(indices, distances) of each query's nearest point; ties go to the
    lowest index."""
    d = all_pairs_dist(np.asarray(queries, dtype=float), np.asarray(points, dtype=float))
    idx = d.argmin(axis=1)  # argmin returns the first (lowest) index on ties
    return idx, d[np.arange(len(idx)), idx]


def knn_brute(points, q, k):
    """k nearest (index, distance) pairs for one query, sorted by
    (distance, index)."""
    d = all_pairs_dist(np.asarray(q, dtype=float).reshape(1, 3), points)[0]
    order = sorted(range(len(d)), key=lambda i: (d[i], i))[:k]
    return [(i, d[i]) for i in order]


def sor_removed_brute(points, k, std_ratio):
    """Indices removed by the mean-kNN-distance outlier rule, ascending."""
    n = len(points)
    d_all = all_pairs_dist(points, points)
    means = np.empty(n)
    for i in range(n):
        row = np.delete(d_all[i], i)
        row.sort()
        means[i] = row[:k].mean()
    cut = means.mean() + std_ratio * means.std()
    return np.nonzero(means > cut)[0]


def precision_brute(psc_pts, pgt_pts, eps):
    """Fraction of psc points whose nearest pgt point is within eps."""
    d = all_pairs_dist(psc_pts, pgt_pts).min(axis=1)
    return float((d <= eps).sum() / len(psc_pts))


def recall_brute(psc_pts, pgt_pts, eps):
    return precision_brute(pgt_pts, psc_pts, eps)


def invert_matrix(T_4x4):
    """Generic numeric 4x4 inverse (no rigid-structure shortcut)."""
    return np.linalg.inv(T_4x4)


def random_rotation(rng):
    """Uniform-ish random rotation from a normalized random quaternion."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )
