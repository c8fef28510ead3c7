import logging
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_is_fitted

from .._random import hash64, make_rng
from ._base import check_data, check_n_clusters, farthest_donor, nearest, sq_distances

logger = logging.getLogger(__name__)


def kmeans_plusplus(X, k, rng):
    """D^2-weighted seeding; returns row indices of the initial centres."""
    n = X.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = sq_distances(X, X[chosen]).ravel()
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        else:
            idx = int(rng.integers(n))
        chosen.append(idx)
        d2 = np.minimum(d2, sq_distances(X, X[idx : idx + 1]).ravel())
    return np.array(chosen)


def _assign(X, centers, k):
    d2 = sq_distances(X, centers)
    labels = nearest(d2)
    own = d2[np.arange(len(X)), labels]
    # Refill any empty cluster with the point farthest from its centre.
    for j in range(k):
        if np.any(labels == j):
            continue
        p = farthest_donor(own, labels, k)
        if p is None:
            break
        labels[p] = j
        centers[j] = X[p]
        own[p] = 0.0
    return labels


def _means(X, labels, k):
    centers = np.zeros((k, X.shape[1]))
    np.add.at(centers, labels, X)
    counts = np.bincount(labels, minlength=k)
    return centers / counts[:, None]


def lloyd(X, init_centers, max_iter=300, tol=1e-6):
    """Lloyd iterations from given centres.

    Stops when the relative inertia improvement drops below ``tol`` or after
    ``max_iter`` centre updates. Returns ``(labels, centers, inertia,
    history)`` where ``history`` is the inertia after every update.
    """
    k = len(init_centers)
    centers = np.array(init_centers, dtype=float)
    labels = _assign(X, centers, k)
    history = []
    for _ in range(max_iter):
        centers = _means(X, labels, k)
        inertia = float(np.sum((X - centers[labels]) ** 2))
        history.append(inertia)
        if len(history) > 1:
            prev = history[-2]
            improvement = (prev - inertia) / prev if prev > 0 else 0.0
            if improvement < tol:
                break
        new_labels = _assign(X, centers.copy(), k)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return labels, centers, history[-1], history


class KMeans(ClusterMixin, BaseEstimator):
    """Lloyd's k-means with k-means++ seeding and seeded restarts.

    Restart ``r`` draws from a generator seeded with
    ``hash64(random_state, r)``; the restart with the lowest inertia wins,
    earlier restarts winning ties.

    Attributes
    ----------
    cluster_centers_ : ndarray of shape (n_clusters, n_features)
    labels_ : ndarray of shape (n_samples,)
    inertia_ : float
        Within-cluster sum of squared Euclidean distances.
    inertia_history_ : list of float
        Inertia after each centre update of the winning restart.
    """

    def __init__(self, n_clusters=3, n_init=10, max_iter=300, tol=1e-6,
                 random_state=0, n_jobs=1):
        self.n_clusters = n_clusters
        self.n_init = n_init
        self.max_iter = max_iter
        self.tol = tol
        self.random_state = random_state
        self.n_jobs = n_jobs

    def _run(self, X, r):
        rng = make_rng(hash64(self.random_state, r))
        init = X[kmeans_plusplus(X, self.n_clusters, rng)]
        return lloyd(X, init, self.max_iter, self.tol)

    def fit(self, X, y=None):
        X = check_data(X)
        check_n_clusters(self.n_clusters, X.shape[0])
        if self.n_init < 1:
            raise ValueError("n_init must be at least 1")
        restarts = range(self.n_init)
        if self.n_jobs > 1:
            with ThreadPoolExecutor(max_workers=self.n_jobs) as pool:
                runs = list(pool.map(lambda r: self._run(X, r), restarts))
        else:
            runs = [self._run(X, r) for r in restarts]
        best = min(restarts, key=lambda r: (runs[r][2], r))
        self.labels_, self.cluster_centers_, self.inertia_, self.inertia_history_ = runs[best]
        self.n_iter_ = len(self.inertia_history_)
        self.best_restart_ = best
        logger.debug("kmeans k=%d inertia=%.6g restart=%d", self.n_clusters, self.inertia_, best)
        return self

    def predict(self, X):
        check_is_fitted(self, "cluster_centers_")
        return nearest(sq_distances(check_data(X), self.cluster_centers_))
