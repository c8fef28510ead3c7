from collections import deque

import numpy as np
from scipy.spatial.distance import cdist
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_is_fitted

from ..model import NOISE
from ._base import check_data


def kdistance_eps(D, min_pts, quantile=0.9):
    """Eps from the k-distance heuristic.

    The k-distance of a point is its distance to the ``min_pts``-th closest
    point counting itself, so that at the chosen eps a ``quantile`` share of
    points are core points.
    """
    n = D.shape[0]
    k = min(min_pts, n) - 1
    kth = np.partition(D, k, axis=1)[:, k]
    eps = float(np.percentile(kth, 100 * quantile))
    if eps <= 0:
        positive = D[D > 0]
        eps = float(positive.min()) if positive.size else 1.0
    return eps


class DBSCAN(ClusterMixin, BaseEstimator):
    """Density-based clustering with a deterministic border rule.

    A point is core when at least ``min_pts`` points (itself included) lie
    within ``eps``. Clusters are the eps-connected components of core points,
    numbered in order of their lowest core-point index. A non-core point within eps of some
    core point takes the label of the lowest-indexed such core point;
    everything else is noise (-1). With ``eps=None`` the radius comes from
    :func:`kdistance_eps`.
    """

    def __init__(self, eps=None, min_pts=5, eps_quantile=0.9):
        self.eps = eps
        self.min_pts = min_pts
        self.eps_quantile = eps_quantile

    def fit(self, X, y=None):
        X = check_data(X)
        if self.min_pts < 1:
            raise ValueError("min_pts must be >= 1")
        if self.eps is not None and not self.eps > 0:
            raise ValueError("eps must be > 0")
        D = cdist(X, X)
        eps = self.eps if self.eps is not None else kdistance_eps(D, self.min_pts, self.eps_quantile)
        within = D <= eps
        core = within.sum(axis=1) >= self.min_pts
        n = len(X)
        labels = np.full(n, NOISE)
        cluster = 0
        for start in np.flatnonzero(core):
            if labels[start] != NOISE:
                continue
            labels[start] = cluster
            queue = deque([start])
            while queue:
                p = queue.popleft()
                for q in np.flatnonzero(within[p] & core & (labels == NOISE)):
                    labels[q] = cluster
                    queue.append(q)
            cluster += 1
        core_idx = np.flatnonzero(core)
        for p in np.flatnonzero(~core):
            reach = core_idx[within[p, core_idx]]
            if reach.size:
                labels[p] = labels[reach[0]]
        self.eps_ = float(eps)
        self.labels_ = labels
        self.core_sample_indices_ = core_idx
        self.components_ = X[core_idx]
        self.n_clusters_ = cluster
        return self

    def predict(self, X):
        """Label of the nearest core point if within eps, else noise."""
        check_is_fitted(self, "components_")
        X = check_data(X)
        out = np.full(len(X), NOISE)
        if len(self.components_) == 0:
            return out
        d = cdist(X, self.components_)
        j = np.argmin(d, axis=1)
        hit = d[np.arange(len(X)), j] <= self.eps_
        out[hit] = self.labels_[self.core_sample_indices_][j[hit]]
        return out
