"""Cluster validity indices, elbow selection of k, ARI and the model sweep."""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .cluster import ClusterParams, fit_cluster_model
from .model import NOISE, FeatureMatrix

logger = logging.getLogger(__name__)


class UndefinedIndexError(ValueError):
    """A validity index is undefined for the given partition."""


class CoincidentCentroidsError(UndefinedIndexError, ZeroDivisionError):
    pass


def _encode(labels):
    uniq, inv = np.unique(np.asarray(labels), return_inverse=True)
    return uniq, inv.ravel()


def _centroids(X, inv, k):
    C = np.zeros((k, X.shape[1]))
    np.add.at(C, inv, X)
    counts = np.bincount(inv, minlength=k)
    return C / counts[:, None], counts


def inertia(X, labels, centers):
    """Sum of squared distances from each point to its assigned centre."""
    X = np.asarray(X, dtype=float)
    centers = np.asarray(centers, dtype=float)
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= len(centers)):
        raise IndexError(f"labels must lie in [0, {len(centers)})")
    return float(np.sum((X - centers[labels]) ** 2))


def _prepare(X, labels):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    uniq, inv = _encode(labels)
    if len(inv) != len(X):
        raise ValueError("labels and X differ in length")
    return X, uniq, inv


def chi(X, labels):
    """Calinski-Harabasz index ``[B/(k-1)] / [W/(n-k)]``; higher is better."""
    X, uniq, inv = _prepare(X, labels)
    n, k = len(X), len(uniq)
    if k < 2 or n <= k:
        raise UndefinedIndexError(f"CHI needs 2 <= k < n, got k={k}, n={n}")
    C, counts = _centroids(X, inv, k)
    mean = X.mean(axis=0)
    between = float(np.sum(counts * np.sum((C - mean) ** 2, axis=1)))
    within = float(np.sum((X - C[inv]) ** 2))
    if within == 0.0:
        return math.inf
    return (between / (k - 1)) / (within / (n - k))


def dbi(X, labels):
    """Davies-Bouldin index using mean member-to-centroid distance; lower is better."""
    X, uniq, inv = _prepare(X, labels)
    k = len(uniq)
    if k < 2:
        raise UndefinedIndexError(f"DBI needs at least 2 clusters, got {k}")
    C, _ = _centroids(X, inv, k)
    scatter = np.bincount(inv, weights=np.linalg.norm(X - C[inv], axis=1), minlength=k)
    scatter /= np.bincount(inv, minlength=k)
    sep = np.linalg.norm(C[:, None, :] - C[None, :, :], axis=-1)
    worst = np.zeros(k)
    for i in range(k):
        for j in range(k):
            if i == j:
                continue
            if sep[i, j] == 0.0:
                raise CoincidentCentroidsError(
                    f"clusters {uniq[i]!r} and {uniq[j]!r} share a centroid"
                )
            worst[i] = max(worst[i], (scatter[i] + scatter[j]) / sep[i, j])
    return float(worst.mean())


def elbow_select_k(inertia_by_k):
    """Pick the interior k with the largest second difference of inertia.

    ``inertia_by_k`` maps consecutive integers k to inertia; at least three
    entries are needed. Ties go to the smallest k.
    """
    ks = sorted(inertia_by_k)
    if len(ks) < 3:
        raise ValueError("elbow selection needs at least 3 consecutive k values")
    if ks != list(range(ks[0], ks[-1] + 1)):
        raise ValueError(f"k values must be consecutive, got {ks}")
    I = inertia_by_k
    best_k, best = None, -math.inf
    for k in ks[1:-1]:
        d2 = (I[k - 1] - I[k]) - (I[k] - I[k + 1])
        if d2 > best:
            best_k, best = k, d2
    return best_k


def contingency(a, b):
    _, ia = _encode(a)
    _, ib = _encode(b)
    table = np.zeros((ia.max() + 1, ib.max() + 1), dtype=np.int64)
    np.add.at(table, (ia, ib), 1)
    return table


def _comb2(x):
    x = np.asarray(x, dtype=np.float64)
    return x * (x - 1) / 2.0


def ari(labels_a, labels_b):
    """Adjusted Rand index from the pair-counting contingency table."""
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    if a.shape != b.shape:
        raise ValueError(f"label vectors differ in length: {a.shape} vs {b.shape}")
    if a.size < 2:
        raise ValueError("ARI needs at least 2 labels")
    table = contingency(a, b)
    index = _comb2(table).sum()
    sa = _comb2(table.sum(axis=1)).sum()
    sb = _comb2(table.sum(axis=0)).sum()
    expected = sa * sb / _comb2(a.size)
    top = (sa + sb) / 2.0
    if top == expected:
        return 1.0
    return float((index - expected) / (top - expected))


@dataclass
class ValidityReport:
    rows: list
    chosen_algorithm: str | None
    chosen_k: int | None
    elbow_k: dict = field(default_factory=dict)
    models: dict = field(default_factory=dict, repr=False)

    def row(self, algorithm, k):
        for r in self.rows:
            if r["algorithm"] == algorithm and r["k"] == k:
                return r
        raise KeyError((algorithm, k))

    @property
    def chosen_model(self):
        return self.models[(self.chosen_algorithm, self.chosen_k)]

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["algorithm", "k", "inertia", "chi", "dbi", "chosen"])
            for r in self.rows:
                chosen = r["algorithm"] == self.chosen_algorithm and r["k"] == self.chosen_k
                w.writerow([r["algorithm"], r["k"], _num(r["inertia"]), _num(r["chi"]),
                            _num(r["dbi"]), int(chosen)])

    def summary(self):
        return {
            "chosen_algorithm": self.chosen_algorithm,
            "chosen_k": self.chosen_k,
            "elbow_k": self.elbow_k,
            "ranking_rule": "CHI descending, then DBI ascending, at each algorithm's elbow k",
            "rows": [{key: _jsonable(v) for key, v in r.items()} for r in self.rows],
        }

    def to_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _num(v):
    return "" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))


def _jsonable(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def _safe(fn, X, labels):
    try:
        return fn(X, labels)
    except UndefinedIndexError:
        return math.nan


def score_partition(X, labels):
    """(inertia to cluster means, CHI, DBI) with noise points left out."""
    labels = np.asarray(labels)
    keep = labels != NOISE
    Xk, lk = X[keep], labels[keep]
    if lk.size == 0:
        return math.nan, math.nan, math.nan
    uniq, inv = _encode(lk)
    C, _ = _centroids(Xk, inv, len(uniq))
    return inertia(Xk, inv, C), _safe(chi, Xk, lk), _safe(dbi, Xk, lk)


def sweep(features: FeatureMatrix, algorithms=("kmeans",), k_range=range(2, 7),
          params: ClusterParams | None = None, grids=None, dbscan_eps=(None,), n_jobs=1):
    """Fit every (algorithm, k), score it, and choose a model.

    ``features`` is the normalized, selected matrix; CHI and DBI are always
    computed on it, including for k-shape, whose inertia is instead the sum
    of its shape-based distances. Each algorithm's k comes from the elbow of
    its inertia curve (or the best CHI when fewer than three k values were
    swept); algorithms are then ranked by CHI, DBI breaking ties. DBSCAN is
    fitted once per ``dbscan_eps`` value and reported with its discovered
    cluster count.
    """
    params = params or ClusterParams()
    X = features.values
    k_range = list(k_range)
    if not k_range or k_range != sorted(set(k_range)):
        raise ValueError("k_range must be non-empty and strictly ascending")
    jobs = []
    for alg in algorithms:
        if alg == "dbscan":
            jobs += [(alg, None, eps) for eps in dbscan_eps]
        else:
            jobs += [(alg, k, None) for k in k_range]

    def run(job):
        alg, k, eps = job
        p = replace(params, algorithm=alg, k=k if k is not None else params.k, eps=eps)
        model = fit_cluster_model(p, features, grids=grids)
        labels = np.array([model.labels[pid] for pid in features.patient_ids])
        inert, c, d = score_partition(X, labels)
        if alg == "kshape":
            inert = model.inertia
        k_found = model.n_clusters
        return model, {"algorithm": alg, "k": k_found, "inertia": inert, "chi": c, "dbi": d}

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(j) for j in jobs]

    rows, models = [], {}
    for model, row in results:
        key = (row["algorithm"], row["k"])
        if key in models:
            continue  # repeated DBSCAN cluster count: keep the first eps
        models[key] = model
        rows.append(row)
        logger.info("sweep %s k=%s inertia=%.6g chi=%.6g dbi=%.6g",
                    row["algorithm"], row["k"], row["inertia"], row["chi"], row["dbi"])

    elbow = {}
    for alg in algorithms:
        alg_rows = [r for r in rows if r["algorithm"] == alg]
        if not alg_rows:
            continue
        curve = {r["k"]: r["inertia"] for r in alg_rows}
        ks = sorted(curve)
        if alg != "dbscan" and len(ks) >= 3:
            elbow[alg] = elbow_select_k(curve)
        else:
            elbow[alg] = min(alg_rows, key=_rank_key)["k"]

    candidates = [r for r in rows if elbow.get(r["algorithm"]) == r["k"]]
    best = min(candidates, key=_rank_key) if candidates else None
    return ValidityReport(
        rows=rows,
        chosen_algorithm=best["algorithm"] if best else None,
        chosen_k=best["k"] if best else None,
        elbow_k=elbow,
        models=models,
    )


def _rank_key(row):
    c, d = row["chi"], row["dbi"]
    c = -math.inf if math.isnan(c) else c
    d = math.inf if math.isnan(d) else d
    return (-c, d)
