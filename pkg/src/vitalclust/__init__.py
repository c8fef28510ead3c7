"""Multivariate vital-sign time-series clustering for ICU subgroup discovery."""

__version__ = "0.1.0"

from .model import (  # noqa: E402
    CHANNELS,
    NOISE,
    ClusterModel,
    Cohort,
    FeatureMatrix,
    PatientSeries,
    StaticRecord,
    VitalChannel,
    validate_cohort,
)
