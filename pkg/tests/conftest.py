import numpy as np
import pytest

from vitalclust.ingest import SyntheticSpec, generate_synthetic_cohort
from vitalclust.model import DEVELOPMENT, N_CHANNELS, Cohort, PatientSeries, StaticRecord


def make_static(pid, **kw):
    fields = dict(patient_id=pid, age=50, gender="M", icu_death=False,
                  hospital_death=False, era=DEVELOPMENT)
    fields.update(kw)
    return StaticRecord(**fields)


def make_cohort(grids, ids=None, **static_kw):
    grids = np.asarray(grids, dtype=float)
    ids = ids or [f"P{i:03d}" for i in range(len(grids))]
    series = [PatientSeries(pid, g) for pid, g in zip(ids, grids)]
    return Cohort(series, {pid: make_static(pid, **static_kw) for pid in ids})


def small_spec(seed=0, n=60, noise_scale=1.0, **kw):
    """Three well separated subgroups, ``n`` patients each."""
    spec = SyntheticSpec.default(seed=seed)
    arche = spec.archetypes.copy()
    arche[..., 2] *= noise_scale
    d = dict(n_patients=[n] * 3, archetypes=arche, mortality=spec.mortality,
             seed=seed, era_fraction_validation=0.25)
    d.update(kw)
    return SyntheticSpec(**d)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_cohort():
    return generate_synthetic_cohort(small_spec(seed=3))


@pytest.fixture
def random_grids(rng):
    return rng.normal(size=(6, N_CHANNELS, 8))


ACCEPTANCE = {}


def record_acceptance(number, title, passed, detail=""):
    ACCEPTANCE[number] = (title, bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, passed, detail = ACCEPTANCE[number]
        line = f"criterion {number} {'PASS' if passed else 'FAIL'}: {title}"
        terminalreporter.write_line(line + (f" ({detail})" if detail else ""))
