"""Shared domain types: vital-sign grids, static records, cohorts, feature
matrices and fitted cluster models.

Types here carry data and validation only; parsing lives in
:mod:`vitalclust.ingest` and algorithms in their own modules.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

DEFAULT_HOURS = 8
MIN_HOURS = 3
NOISE = -1

DEVELOPMENT = "development"
VALIDATION = "validation"
ERAS = (DEVELOPMENT, VALIDATION)


class VitalChannel(enum.Enum):
    """The five monitored vital signs, in canonical matrix order."""

    TEMPERATURE = ("temp", "Temperature", "°C")
    HEART_RATE = ("hr", "Heart rate", "beats/min")
    MEAN_BP = ("mbp", "Mean blood pressure", "mmHg")
    RESP_RATE = ("rr", "Respiratory rate", "breaths/min")
    SPO2 = ("spo2", "SpO2", "%")

    def __init__(self, code, label, unit):
        self.code = code
        self.label = label
        self.unit = unit

    @property
    def index(self):
        return CHANNELS.index(self)

    @classmethod
    def from_code(cls, code):
        try:
            return _BY_CODE[code]
        except KeyError:
            raise ValueError(
                f"unknown channel {code!r}; expected one of {sorted(_BY_CODE)}"
            ) from None


CHANNELS = tuple(VitalChannel)
CHANNEL_CODES = tuple(c.code for c in CHANNELS)
_BY_CODE = {c.code: c for c in CHANNELS}
N_CHANNELS = len(CHANNELS)


def _frozen_array(values, dtype=float):
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class PatientSeries:
    """One patient's channels x hours grid of vital signs."""

    patient_id: str
    grid: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "grid", _frozen_array(self.grid))

    @property
    def n_hours(self):
        return self.grid.shape[-1] if self.grid.ndim == 2 else 0

    def channel(self, channel: VitalChannel) -> np.ndarray:
        return self.grid[channel.index]

    def __eq__(self, other):
        if not isinstance(other, PatientSeries):
            return NotImplemented
        return (
            self.patient_id == other.patient_id
            and self.grid.shape == other.grid.shape
            and np.array_equal(self.grid, other.grid, equal_nan=True)
        )

    __hash__ = None


@dataclass(frozen=True)
class StaticRecord:
    patient_id: str
    age: int
    gender: str
    icu_death: bool
    hospital_death: bool
    era: str
    race: Optional[str] = None
    height_cm: Optional[float] = None
    weight_kg: Optional[float] = None
    dod: Optional[str] = None


@dataclass(frozen=True)
class Cohort:
    """Series plus their static records, keyed by patient id."""

    series: tuple = ()
    statics: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "series", tuple(self.series))
        object.__setattr__(self, "statics", dict(self.statics))

    def __len__(self):
        return len(self.series)

    @property
    def patient_ids(self):
        return [s.patient_id for s in self.series]

    @property
    def n_hours(self):
        return self.series[0].n_hours if self.series else DEFAULT_HOURS

    def grids(self) -> np.ndarray:
        """Stack grids into an ``(n_patients, n_channels, n_hours)`` array."""
        if not self.series:
            return np.empty((0, N_CHANNELS, self.n_hours))
        return np.stack([s.grid for s in self.series])

    def subset(self, patient_ids):
        keep = set(patient_ids)
        series = [s for s in self.series if s.patient_id in keep]
        statics = {s.patient_id: self.statics[s.patient_id] for s in series}
        return Cohort(series, statics)


class Violation(NamedTuple):
    patient_id: str
    rule: str
    detail: str = ""


def validate_cohort(cohort: Cohort) -> list:
    """Check every cohort invariant and return the violations found.

    An empty list means the cohort is well formed. Violations are reported
    in series order first, then for static records without a series.
    """
    out = []
    seen = set()
    for s in cohort.series:
        pid = s.patient_id
        if pid in seen:
            out.append(Violation(pid, "duplicate patient_id"))
        seen.add(pid)
        grid = s.grid
        if grid.ndim != 2 or grid.shape[0] != N_CHANNELS:
            out.append(Violation(pid, "grid shape", f"got {grid.shape}"))
            continue
        if grid.shape[1] < MIN_HOURS:
            out.append(
                Violation(pid, "too few hours", f"{grid.shape[1]} < {MIN_HOURS}")
            )
        bad = np.argwhere(~np.isfinite(grid))
        for c, t in bad:
            out.append(
                Violation(pid, "non-finite cell", f"{CHANNELS[c].code} hour {t}")
            )
        if pid not in cohort.statics:
            out.append(Violation(pid, "missing static record"))

    hours = {s.n_hours for s in cohort.series}
    if len(hours) > 1:
        out.append(Violation("", "inconsistent hours", f"{sorted(hours)}"))

    for key, rec in cohort.statics.items():
        if rec.patient_id != key:
            out.append(Violation(key, "static key mismatch", rec.patient_id))
        if key not in seen:
            out.append(Violation(key, "static record without series"))
        if rec.icu_death and not rec.hospital_death:
            out.append(Violation(key, "death-flag inconsistency"))
        if rec.era not in ERAS:
            out.append(Violation(key, "invalid era", repr(rec.era)))
        if not isinstance(rec.age, (int, np.integer)) or rec.age < 0:
            out.append(Violation(key, "invalid age", repr(rec.age)))
    return out


@dataclass
class FeatureMatrix:
    """Patients x named features.

    ``column_stats`` holds the per-feature ``(mean, std)`` pairs recorded by
    normalization, aligned with ``feature_names``.
    """

    patient_ids: list
    feature_names: list
    values: np.ndarray
    column_stats: Optional[np.ndarray] = None

    def __post_init__(self):
        self.patient_ids = list(self.patient_ids)
        self.feature_names = list(self.feature_names)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(self.patient_ids), len(self.feature_names)):
            raise ValueError(
                f"values shape {self.values.shape} does not match "
                f"{len(self.patient_ids)} patients x {len(self.feature_names)} features"
            )
        if len(set(self.feature_names)) != len(self.feature_names):
            raise ValueError("feature names must be unique")
        if self.column_stats is not None:
            self.column_stats = np.asarray(self.column_stats, dtype=float)

    @property
    def shape(self):
        return self.values.shape

    def columns(self, names):
        index = {n: i for i, n in enumerate(self.feature_names)}
        missing = [n for n in names if n not in index]
        if missing:
            raise KeyError(f"features not present: {missing}")
        cols = [index[n] for n in names]
        stats = None if self.column_stats is None else self.column_stats[cols]
        return FeatureMatrix(self.patient_ids, names, self.values[:, cols], stats)


ALGORITHMS = ("kmeans", "kmedoids", "kshape", "dbscan")


@dataclass
class ClusterModel:
    """A fitted clustering, self-contained enough to label new patients.

    ``centers`` holds the algorithm-specific artifact: centroid rows for
    k-means, medoid feature rows for k-medoids, ``(k, channels, hours)``
    shapes for k-shape, and core-point rows for DBSCAN. ``medoid_ids`` and
    ``core_ids`` name the patients behind medoids and core points.
    """

    algorithm: str
    seed: int
    params: dict
    selected_features: list
    normalization: Optional[np.ndarray]
    centers: np.ndarray
    labels: dict
    k: Optional[int] = None
    medoid_ids: Optional[list] = None
    core_ids: Optional[list] = None
    core_labels: Optional[list] = None
    inertia: Optional[float] = None

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        self.centers = np.asarray(self.centers, dtype=float)
        if self.normalization is not None:
            self.normalization = np.asarray(self.normalization, dtype=float)

    @property
    def n_clusters(self):
        if self.k is not None:
            return self.k
        found = {v for v in self.labels.values() if v != NOISE}
        return len(found)

    def to_dict(self):
        return {
            "algorithm": self.algorithm,
            "k": self.k,
            "seed": self.seed,
            "params": self.params,
            "selected_features": list(self.selected_features),
            "normalization": None
            if self.normalization is None
            else [
                {"feature": f, "mean": float(m), "std": float(s)}
                for f, (m, s) in zip(self.selected_features, self.normalization)
            ],
            "centers": self.centers.tolist(),
            "medoid_ids": self.medoid_ids,
            "core_ids": self.core_ids,
            "core_labels": self.core_labels,
            "inertia": self.inertia,
            "labels": {pid: int(v) for pid, v in self.labels.items()},
        }

    @classmethod
    def from_dict(cls, d):
        norm = d.get("normalization")
        if norm is not None:
            if [n["feature"] for n in norm] != list(d["selected_features"]):
                raise ValueError("normalization entries do not match selected features")
            norm = [[n["mean"], n["std"]] for n in norm]
        return cls(
            algorithm=d["algorithm"],
            k=d.get("k"),
            seed=int(d["seed"]),
            params=dict(d.get("params", {})),
            selected_features=list(d["selected_features"]),
            normalization=norm,
            centers=np.asarray(d["centers"], dtype=float),
            medoid_ids=d.get("medoid_ids"),
            core_ids=d.get("core_ids"),
            core_labels=d.get("core_labels"),
            inertia=d.get("inertia"),
            labels={pid: int(v) for pid, v in d["labels"].items()},
        )
