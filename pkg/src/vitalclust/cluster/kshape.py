"""k-Shape on multichannel series with a shape-based distance.

Distances use normalized cross-correlation (NCC) over integer shifts with zero
padding. For multichannel series one shift is shared across channels and the
per-channel NCC values are averaged before taking the maximum.
"""

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_is_fitted

from .._random import hash64, make_rng
from ..features import EPS, cross_products, shift_order, znorm
from ._base import check_n_clusters, farthest_donor


def sbd(x, y):
    """Shape-based distance between two equal-length series.

    Both inputs are z-normalized first. Returns ``(distance, shift)`` where
    ``distance = 1 - max_w NCC(w)`` lies in ``[0, 2]`` and ``shift`` is the
    lag ``w`` that maximizes ``sum_t x[t] * y[t - w] / (|x| |y|)``. Ties go to
    the smallest ``|w|``, negative before positive. A constant input has no
    shape; its NCC is 0 at every shift, giving distance 1 at shift 0.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 1 or y.ndim != 1 or x.shape != y.shape:
        raise ValueError(f"sbd needs two 1-D series of equal length, got {x.shape} and {y.shape}")
    if x.size < 2:
        raise ValueError("sbd needs series of length >= 2")
    ncc = _ncc(znorm(x), znorm(y))
    i = int(np.argmax(ncc))
    return float(np.clip(1.0 - ncc[i], 0.0, 2.0)), int(shift_order(x.size)[i])


def _ncc(x, y):
    """NCC over shift_order for broadcastable ``(..., T)`` arrays."""
    nx = np.sqrt(np.sum(x * x, axis=-1))
    ny = np.sqrt(np.sum(y * y, axis=-1))
    den = nx * ny
    cc = cross_products(x, y)
    ok = den > EPS
    return np.where(ok[..., None], cc / np.where(ok, den, 1.0)[..., None], 0.0)


def _unit_rows(X):
    # Each channel scaled to unit norm; channels with no energy become zero.
    norm = np.sqrt(np.sum(X * X, axis=-1, keepdims=True))
    return np.where(norm > EPS, X / np.where(norm > EPS, norm, 1.0), 0.0)


def multichannel_ncc(shapes, grids, unit_grids=False):
    """Mean-over-channels NCC of every grid against every shape.

    ``shapes`` is ``(k, C, T)`` (or a single ``(C, T)`` shape), ``grids`` is
    ``(n, C, T)``; returns ``(n, k, 2T - 1)`` with the last axis in
    :func:`shift_order`. Uses ``sum_t s[t] m[t - w] = m . shift(s, -w)``;
    summing over channels turns the whole computation into one matrix
    product over the flattened channel-time axis. Pass ``unit_grids=True``
    when every grid channel already has unit or zero norm.
    """
    shapes = np.asarray(shapes, dtype=float)
    if shapes.ndim == 2:
        shapes = shapes[None]
    k, C, T = shapes.shape
    n = grids.shape[0]
    shifts = shift_order(T)
    unit = _unit_rows(shapes)
    shifted = np.stack([shift_series(unit, -w) for w in shifts], axis=1)  # (k, W, C, T)
    if not unit_grids:
        grids = _unit_rows(grids)
    total = grids.reshape(n, C * T) @ shifted.reshape(k * len(shifts), C * T).T
    return total.reshape(n, k, len(shifts)) / C


def multichannel_sbd(shape, grids):
    """Distances and best shared shifts of every grid to one shape.

    Both sides are z-normalized per channel first, as in :func:`sbd`.
    """
    grids = znorm(np.asarray(grids, dtype=float))
    ncc = multichannel_ncc(znorm(shape), grids)[:, 0]
    best = np.argmax(ncc, axis=1)
    dist = 1.0 - ncc[np.arange(len(grids)), best]
    return np.clip(dist, 0.0, 2.0), shift_order(grids.shape[-1])[best]


def shift_series(x, w):
    """``out[..., t] = x[..., t - w]`` with zero fill."""
    out = np.zeros_like(x)
    n = x.shape[-1]
    if w >= 0:
        out[..., w:] = x[..., : n - w]
    else:
        out[..., : n + w] = x[..., -w:]
    return out


def shift_each(X, shifts):
    """Row-wise :func:`shift_series` of ``X`` (m, C, T) by ``shifts`` (m,)."""
    shifts = np.asarray(shifts)
    out = np.empty_like(X)
    for w in np.unique(shifts):
        rows = shifts == w
        out[rows] = shift_series(X[rows], int(w))
    return out


def power_iteration(M, tol=1e-8, max_iter=100, v0=None):
    """Dominant eigenvector of a symmetric PSD matrix, unit norm.

    Starts from ``v0`` when it has a component in the range of ``M``,
    otherwise from the column of ``M`` with the largest norm. Returns zeros
    for a zero matrix.
    """
    M = np.asarray(M, dtype=float)
    v0 = None if v0 is None else np.asarray(v0, dtype=float)[None]
    return _power_batch(M[None], tol, max_iter, v0)[0]


def _power_batch(M, tol=1e-8, max_iter=100, v0=None):
    # Independent power iterations on a stack (b, T, T); each item stops on
    # its own convergence, exactly as if run alone.
    b, T, _ = M.shape
    norms = np.sqrt(np.einsum("bij,bij->bj", M, M))
    top = norms.max(axis=1)
    v = np.zeros((b, T))
    live = top > EPS
    idx = np.flatnonzero(live)
    v[idx] = M[idx, :, np.argmax(norms[idx], axis=1)] / top[idx, None]
    if v0 is not None:
        w = np.einsum("bij,bj->bi", M, v0)
        nw = np.sqrt(np.einsum("bi,bi->b", w, w))
        warm = live & (nw > EPS)
        v[warm] = w[warm] / nw[warm, None]
    for _ in range(max_iter):
        if not idx.size:
            break
        w = np.einsum("bij,bj->bi", M[idx], v[idx])
        nw = np.sqrt(np.einsum("bi,bi->b", w, w))
        moving = nw > EPS
        idx, w, nw = idx[moving], w[moving], nw[moving]
        w /= nw[:, None]
        diff = w - v[idx]
        v[idx] = w
        idx = idx[np.sqrt(np.einsum("bi,bi->b", diff, diff)) >= tol]
    return v


def _centering(T):
    return np.eye(T) - np.ones((T, T)) / T


def _signed_shapes(mean, vecs):
    # Orient each eigenvector toward the centred member mean, then z-normalize.
    mean = mean - mean.mean(axis=-1, keepdims=True)
    flip = np.sum(vecs * mean, axis=-1) < 0
    return znorm(np.where(flip[..., None], -vecs, vecs))


def extract_shape(aligned, previous=None):
    """Shape extract for one channel from aligned members ``(m, T)``.

    The dominant eigenvector of ``Q S Q`` with ``S`` the members' scatter
    matrix and ``Q`` the centering matrix, signed to correlate non-negatively
    with the members' mean, then z-normalized.
    """
    aligned = np.asarray(aligned, dtype=float)
    Q = _centering(aligned.shape[-1])
    v = power_iteration(Q @ (aligned.T @ aligned) @ Q, v0=previous)
    return _signed_shapes(aligned.mean(axis=0), v)


def refine_shapes(grids, labels, shapes, unit_grids=False, ncc=None):
    """Recompute every cluster's shape from members aligned to the old shape.

    ``ncc`` may carry :func:`multichannel_ncc` of ``grids`` against
    ``shapes`` when the caller already has it. Empty clusters get a zero
    shape.
    """
    k, C, T = shapes.shape
    labels = np.asarray(labels)
    if ncc is None:
        ncc = multichannel_ncc(shapes, grids, unit_grids)
    own = ncc[np.arange(len(grids)), labels]
    # A zero (not yet estimated) shape has NCC 0 everywhere, so shift 0.
    aligned = shift_each(grids, shift_order(T)[np.argmax(own, axis=1)])
    Q = _centering(T)
    S = np.zeros((k, C, T, T))
    means = np.zeros((k, C, T))
    for j in range(k):
        members = aligned[labels == j]
        if len(members):
            per_channel = members.transpose(1, 0, 2)
            S[j] = per_channel.transpose(0, 2, 1) @ per_channel
            means[j] = members.mean(axis=0)
    vecs = _power_batch((Q @ S @ Q).reshape(k * C, T, T), v0=shapes.reshape(k * C, T))
    return _signed_shapes(means, vecs.reshape(k, C, T))


def _distances(grids, shapes):
    # grids are unit-normalized by KShape._check_grids
    return np.clip(1.0 - multichannel_ncc(shapes, grids, True).max(axis=2), 0.0, 2.0)


class KShape(ClusterMixin, BaseEstimator):
    """k-Shape clustering of ``(n, channels, T)`` grids.

    Each channel of each patient is z-normalized before fitting. Restart
    ``r`` starts from a balanced random partition drawn with seed
    ``hash64(random_state, r)``; the run with the smallest summed distance
    wins.
    """

    def __init__(self, n_clusters=3, n_init=10, max_iter=300, random_state=0):
        self.n_clusters = n_clusters
        self.n_init = n_init
        self.max_iter = max_iter
        self.random_state = random_state

    @staticmethod
    def _check_grids(X):
        X = np.asarray(X, dtype=float)
        if X.ndim == 2:
            X = X[:, None, :]
        if X.ndim != 3 or X.shape[-1] < 2:
            raise ValueError(f"expected (n, channels, T) grids with T >= 2, got {X.shape}")
        if not np.all(np.isfinite(X)):
            raise ValueError("grids contain non-finite values")
        return _unit_rows(znorm(X))

    def _run(self, Z, r):
        n, k = len(Z), self.n_clusters
        rng = make_rng(hash64(self.random_state, r))
        labels = rng.permutation(n) % k
        shapes = refine_shapes(Z, labels, np.zeros((k,) + Z.shape[1:]), True)
        for it in range(self.max_iter):
            ncc = multichannel_ncc(shapes, Z, True)
            dist = np.clip(1.0 - ncc.max(axis=2), 0.0, 2.0)
            new = np.argmin(dist, axis=1)
            own = dist[np.arange(n), new]
            for j in range(k):
                if not np.any(new == j):
                    p = farthest_donor(own, new, k)
                    new[p] = j
                    own[p] = 0.0
            if np.array_equal(new, labels):
                break
            labels = new
            shapes = refine_shapes(Z, labels, shapes, True, ncc)
        dist = _distances(Z, shapes)
        labels = np.argmin(dist, axis=1)
        for j in range(k):
            if not np.any(labels == j):
                own = dist[np.arange(n), labels]
                labels[farthest_donor(own, labels, k)] = j
        inertia = float(dist[np.arange(n), labels].sum())
        return labels, shapes, inertia, it + 1

    def fit(self, X, y=None):
        Z = self._check_grids(X)
        check_n_clusters(self.n_clusters, Z.shape[0])
        runs = [self._run(Z, r) for r in range(self.n_init)]
        best = min(range(self.n_init), key=lambda r: (runs[r][2], r))
        self.labels_, self.cluster_centers_, self.inertia_, self.n_iter_ = runs[best]
        self.best_restart_ = best
        return self

    def transform(self, X):
        """Multichannel SBD from each grid to each shape."""
        check_is_fitted(self, "cluster_centers_")
        return _distances(self._check_grids(X), self.cluster_centers_)

    def predict(self, X):
        return np.argmin(self.transform(X), axis=1)
