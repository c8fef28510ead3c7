import logging

import numpy as np
from scipy.spatial.distance import cdist
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_is_fitted

from ._base import check_data, check_n_clusters, nearest

logger = logging.getLogger(__name__)

_CHUNK = 512


def pam_build(D, k):
    """Greedy BUILD: start from the most central point, then repeatedly add
    the point giving the largest drop in total distance."""
    n = D.shape[0]
    medoids = [int(np.argmin(D.sum(axis=1)))]
    near = D[:, medoids[0]].copy()
    for _ in range(1, k):
        gain = np.maximum(near[:, None] - D, 0.0).sum(axis=0)
        gain[medoids] = -np.inf
        m = int(np.argmax(gain))
        medoids.append(m)
        near = np.minimum(near, D[:, m])
    return medoids


def _nearest_two(D, medoids):
    dm = D[:, medoids]
    order = np.argsort(dm, axis=1, kind="stable")
    first = order[:, 0]
    rows = np.arange(D.shape[0])
    d1 = dm[rows, first]
    d2 = dm[rows, order[:, 1]] if len(medoids) > 1 else np.full(D.shape[0], np.inf)
    return first, d1, d2


def pam_swap(D, medoids, max_iter=300):
    """Apply best-improvement swaps until none strictly lowers the cost.

    Returns the final medoids and the cost after BUILD and after every
    accepted swap.
    """
    medoids = list(medoids)
    n, k = D.shape[0], len(medoids)
    first, d1, d2 = _nearest_two(D, medoids)
    cost = float(d1.sum())
    history = [cost]
    for _ in range(max_iter):
        is_medoid = np.zeros(n, dtype=bool)
        is_medoid[medoids] = True
        best = (cost, -1, -1)
        for slot in range(k):
            # distance to the closest remaining medoid if this slot is vacated
            other = np.where(first == slot, d2, d1)
            for lo in range(0, n, _CHUNK):
                hi = min(lo + _CHUNK, n)
                c = np.minimum(other[:, None], D[:, lo:hi]).sum(axis=0)
                c[is_medoid[lo:hi]] = np.inf
                j = int(np.argmin(c))
                if c[j] < best[0]:
                    best = (float(c[j]), slot, lo + j)
        new_cost, slot, cand = best
        if slot < 0 or not new_cost < cost - 1e-12 * max(abs(cost), 1.0):
            break
        medoids[slot] = cand
        first, d1, d2 = _nearest_two(D, medoids)
        cost = float(d1.sum())
        history.append(cost)
    return medoids, history


class KMedoids(ClusterMixin, BaseEstimator):
    """Partitioning Around Medoids (BUILD + SWAP) with Euclidean distances.

    Deterministic: there is no random initialization, so ``random_state`` is
    accepted only for interface parity with the other clusterers.

    Attributes
    ----------
    medoid_indices_ : ndarray of shape (n_clusters,)
    cluster_centers_ : ndarray of shape (n_clusters, n_features)
    labels_ : ndarray of shape (n_samples,)
    inertia_ : float
        Total distance from each point to its medoid.
    cost_history_ : list of float
    """

    def __init__(self, n_clusters=3, max_iter=300, random_state=0):
        self.n_clusters = n_clusters
        self.max_iter = max_iter
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_data(X)
        check_n_clusters(self.n_clusters, X.shape[0])
        D = cdist(X, X)
        medoids = pam_build(D, self.n_clusters)
        medoids, history = pam_swap(D, medoids, self.max_iter)
        self.medoid_indices_ = np.array(medoids)
        self.cluster_centers_ = X[self.medoid_indices_]
        self.labels_ = nearest(D[:, self.medoid_indices_])
        self.inertia_ = history[-1]
        self.cost_history_ = history
        self.n_iter_ = len(history) - 1
        return self

    def predict(self, X):
        check_is_fitted(self, "cluster_centers_")
        return nearest(cdist(check_data(X), self.cluster_centers_))
