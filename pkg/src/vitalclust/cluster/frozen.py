"""Fit any of the four clusterers into a :class:`ClusterModel` and label new
patients with a frozen model."""

import csv
import json
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from ..features import apply_stats
from ..model import NOISE, ClusterModel, FeatureMatrix
from .._random import check_seed
from ._base import FeatureMismatchError, nearest, sq_distances
from .dbscan import DBSCAN
from .kmeans import KMeans
from .kmedoids import KMedoids
from .kshape import KShape, _distances


@dataclass
class ClusterParams:
    algorithm: str = "kmeans"
    k: Optional[int] = 3
    seed: int = 0
    max_iter: int = 300
    tol: float = 1e-6
    n_init: int = 10
    eps: Optional[float] = None
    min_pts: int = 5

    def __post_init__(self):
        if self.algorithm not in ("kmeans", "kmedoids", "kshape", "dbscan"):
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        self.seed = check_seed(self.seed)
        if self.algorithm != "dbscan" and (self.k is None or self.k < 1):
            raise ValueError("k must be >= 1 for centroid methods")
        if self.eps is not None and not self.eps > 0:
            raise ValueError("eps must be > 0")
        if self.min_pts < 1:
            raise ValueError("min_pts must be >= 1")
        if self.max_iter < 1 or self.n_init < 1:
            raise ValueError("max_iter and n_init must be >= 1")

    def estimator(self, n_jobs=1):
        if self.algorithm == "kmeans":
            return KMeans(self.k, n_init=self.n_init, max_iter=self.max_iter,
                          tol=self.tol, random_state=self.seed, n_jobs=n_jobs)
        if self.algorithm == "kmedoids":
            return KMedoids(self.k, max_iter=self.max_iter, random_state=self.seed)
        if self.algorithm == "kshape":
            return KShape(self.k, n_init=self.n_init, max_iter=self.max_iter,
                          random_state=self.seed)
        return DBSCAN(eps=self.eps, min_pts=self.min_pts)


def canonical_order(patient_ids):
    """Row permutation sorting patients by id, so fits ignore file order."""
    return np.array(sorted(range(len(patient_ids)), key=lambda i: patient_ids[i]))


def fit_cluster_model(params: ClusterParams, features: FeatureMatrix = None,
                      grids=None, n_jobs=1):
    """Fit ``params.algorithm`` and package the result as a ClusterModel.

    ``features`` must be the normalized, selected matrix (its
    ``column_stats`` become the frozen normalization). k-shape also needs
    ``grids`` of shape ``(n, channels, T)`` in the same row order.
    Patients are fitted in ascending id order.
    """
    if features is None:
        raise ValueError("features are required")
    ids = features.patient_ids
    order = canonical_order(ids)
    sorted_ids = [ids[i] for i in order]
    est = params.estimator(n_jobs)
    extra = {}
    if params.algorithm == "kshape":
        if grids is None or len(grids) != len(ids):
            raise ValueError("k-shape needs one grid per patient")
        est.fit(np.asarray(grids)[order])
        centers = est.cluster_centers_
    else:
        est.fit(features.values[order])
        if params.algorithm == "dbscan":
            core = est.core_sample_indices_
            centers = est.components_
            extra = {
                "core_ids": [sorted_ids[i] for i in core],
                "core_labels": [int(v) for v in est.labels_[core]],
            }
        else:
            centers = est.cluster_centers_
            if params.algorithm == "kmedoids":
                extra = {"medoid_ids": [sorted_ids[i] for i in est.medoid_indices_]}

    record = asdict(params)
    if params.algorithm == "dbscan":
        record["eps"] = est.eps_
    labels = {pid: int(v) for pid, v in zip(sorted_ids, est.labels_)}
    labels = {pid: labels[pid] for pid in ids}
    return ClusterModel(
        algorithm=params.algorithm,
        k=None if params.algorithm == "dbscan" else params.k,
        seed=params.seed,
        params=record,
        selected_features=list(features.feature_names),
        normalization=features.column_stats,
        centers=centers,
        labels=labels,
        inertia=float(getattr(est, "inertia_", np.nan)) if params.algorithm != "dbscan" else None,
        **extra,
    )


def prepare_features(model: ClusterModel, raw: FeatureMatrix):
    """Select the model's columns from an un-normalized matrix and apply the
    frozen normalization."""
    missing = [n for n in model.selected_features if n not in set(raw.feature_names)]
    if missing:
        raise FeatureMismatchError(
            f"new data lacks {len(missing)} model feature(s), e.g. {missing[:3]}"
        )
    sub = raw.columns(model.selected_features)
    if model.normalization is None:
        return sub.values
    return apply_stats(sub.values, model.normalization)


def assign_frozen(model: ClusterModel, features: FeatureMatrix = None, grids=None):
    """Label new patients without refitting.

    ``features`` is the raw (un-normalized) catalog matrix of the new
    patients; k-shape models take ``grids`` instead. Ties go to the lowest
    cluster index. DBSCAN returns -1 when no core point lies within eps.
    """
    if model.algorithm == "kshape":
        if grids is None:
            raise ValueError("k-shape assignment needs grids")
        grids = np.asarray(grids, dtype=float)
        if grids.shape[1:] != model.centers.shape[1:]:
            raise FeatureMismatchError(
                f"grid shape {grids.shape[1:]} does not match model shapes {model.centers.shape[1:]}"
            )
        return np.argmin(_distances(KShape._check_grids(grids), model.centers), axis=1)
    if features is None:
        raise ValueError("feature matrix required")
    X = prepare_features(model, features)
    if model.algorithm in ("kmeans", "kmedoids"):
        return nearest(sq_distances(X, model.centers))
    out = np.full(len(X), NOISE)
    if len(model.centers) == 0:
        return out
    d = sq_distances(X, model.centers)
    j = nearest(d)
    hit = np.sqrt(d[np.arange(len(X)), j]) <= model.params["eps"]
    out[hit] = np.asarray(model.core_labels)[j[hit]]
    return out


def save_model(model: ClusterModel, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        return ClusterModel.from_dict(json.load(fh))


def write_labels_csv(labels, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["patient_id", "cluster"])
        for pid, c in labels.items():
            w.writerow([pid, int(c)])
