from ._base import FeatureMismatchError
from .dbscan import DBSCAN, kdistance_eps
from .frozen import (
    ClusterParams,
    assign_frozen,
    fit_cluster_model,
    load_model,
    save_model,
    write_labels_csv,
)
from .kmeans import KMeans, kmeans_plusplus, lloyd
from .kmedoids import KMedoids, pam_build, pam_swap
from .kshape import KShape, extract_shape, multichannel_sbd, power_iteration, sbd

__all__ = [
    "ClusterParams",
    "DBSCAN",
    "FeatureMismatchError",
    "KMeans",
    "KMedoids",
    "KShape",
    "assign_frozen",
    "extract_shape",
    "fit_cluster_model",
    "kdistance_eps",
    "kmeans_plusplus",
    "lloyd",
    "load_model",
    "multichannel_sbd",
    "pam_build",
    "pam_swap",
    "power_iteration",
    "save_model",
    "sbd",
    "write_labels_csv",
]
