import numpy as np
from scipy.spatial.distance import cdist
from sklearn.utils.validation import check_array


class FeatureMismatchError(ValueError):
    """New data does not carry the features a fitted model was trained on."""


def check_data(X, min_samples=1):
    return check_array(X, dtype=np.float64, ensure_min_samples=min_samples)


def check_n_clusters(k, n):
    if isinstance(k, bool) or not isinstance(k, (int, np.integer)) or k < 1:
        raise ValueError(f"n_clusters must be a positive integer, got {k!r}")
    if k > n:
        raise ValueError(f"n_clusters={k} exceeds the number of samples ({n})")


def sq_distances(X, C):
    return cdist(X, C, "sqeuclidean")


def nearest(dist):
    """Row-wise argmin; equal distances resolve to the lowest column."""
    return np.argmin(dist, axis=1)


def farthest_donor(own_dist, labels, k):
    """Index of the point farthest from its centre among clusters of size > 1."""
    sizes = np.bincount(labels, minlength=k)
    eligible = sizes[labels] > 1
    if not eligible.any():
        return None
    d = np.where(eligible, own_dist, -np.inf)
    return int(np.argmax(d))
