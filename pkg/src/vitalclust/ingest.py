"""CSV ingestion, cohort inclusion rules, era split and synthetic cohorts.

Time-series CSV header: ``patient_id,hour,channel,value,unit`` where
``channel`` is one of ``temp,hr,mbp,rr,spo2`` and ``unit`` is blank, or
``C``/``F`` for temperature (Fahrenheit is converted to Celsius).

Static CSV header:
``patient_id,age,gender,race,height_cm,weight_kg,icu_death,hospital_death,era,dod``
with 0/1 booleans and ``era`` given as the admission-year group
``2008-2016`` (development) or ``2017-2019`` (validation).
"""

from __future__ import annotations

import csv
import json
import logging
from collections import Counter, OrderedDict
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np

from ._random import check_seed, make_rng
from .model import (
    CHANNEL_CODES,
    CHANNELS,
    DEFAULT_HOURS,
    DEVELOPMENT,
    ERAS,
    N_CHANNELS,
    VALIDATION,
    Cohort,
    PatientSeries,
    StaticRecord,
    VitalChannel,
)

logger = logging.getLogger(__name__)

TIMESERIES_HEADER = ["patient_id", "hour", "channel", "value", "unit"]
STATIC_HEADER = [
    "patient_id", "age", "gender", "race", "height_cm", "weight_kg",
    "icu_death", "hospital_death", "era", "dod",
]
EXCLUSION_HEADER = ["patient_id", "reason"]
TRUTH_HEADER = ["patient_id", "true_subgroup"]

ERA_CODES = {
    "2008-2016": DEVELOPMENT,
    "2017-2019": VALIDATION,
    DEVELOPMENT: DEVELOPMENT,
    VALIDATION: VALIDATION,
}
ERA_LABELS = {DEVELOPMENT: "2008-2016", VALIDATION: "2017-2019"}

# Checked in this order; a patient is logged under the first that applies.
EXCLUSION_REASONS = ("no_static", "underage", "duplicate_hour", "incomplete_grid")
ADULT_AGE = 18


class IngestError(ValueError):
    """Raised for file-level problems: missing file, bad header, duplicates."""


class RowError(NamedTuple):
    line: int
    message: str


class CSVRowError(IngestError):
    """One or more data rows could not be parsed.

    ``errors`` lists every bad row with its 1-based line number (the header is
    line 1); ``records`` holds the rows that did parse.
    """

    def __init__(self, path, errors, records):
        self.path = str(path)
        self.errors = list(errors)
        self.records = list(records)
        shown = "; ".join(f"line {e.line}: {e.message}" for e in self.errors[:5])
        more = f" (+{len(self.errors) - 5} more)" if len(self.errors) > 5 else ""
        super().__init__(f"{self.path}: {len(self.errors)} bad row(s): {shown}{more}")


class RawObservation(NamedTuple):
    patient_id: str
    hour: int
    channel: VitalChannel
    value: float
    unit: Optional[str] = None


def _open_rows(path, header):
    path = Path(path)
    if not path.is_file():
        raise IngestError(f"file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            got = next(reader)
        except StopIteration:
            raise IngestError(f"{path}: empty file, expected header {','.join(header)}")
        got = [h.strip() for h in got]
        if got != header:
            missing = [h for h in header if h not in got]
            raise IngestError(
                f"{path}: header {','.join(got)!r} does not match "
                f"{','.join(header)!r}" + (f"; missing {missing}" if missing else "")
            )
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            yield lineno, [c.strip() for c in row]


def _parse_int(text, what):
    try:
        f = float(text)
    except ValueError:
        raise ValueError(f"{what} {text!r} is not numeric") from None
    if not f.is_integer():
        raise ValueError(f"{what} {text!r} is not an integer")
    return int(f)


def _parse_float(text, what):
    try:
        v = float(text)
    except ValueError:
        raise ValueError(f"{what} {text!r} is not numeric") from None
    return v


def _parse_bool(text, what):
    if text in ("0", "1"):
        return text == "1"
    raise ValueError(f"{what} must be 0 or 1, got {text!r}")


def parse_timeseries_csv(path):
    """Read long-format vital-sign rows into :class:`RawObservation` records.

    Raises :class:`CSVRowError` listing every malformed row if any are found.
    """
    out, errors = [], []
    for lineno, row in _open_rows(path, TIMESERIES_HEADER):
        try:
            if len(row) != len(TIMESERIES_HEADER):
                raise ValueError(f"expected {len(TIMESERIES_HEADER)} fields, got {len(row)}")
            pid, hour, chan, value, unit = row
            if not pid:
                raise ValueError("empty patient_id")
            hour = _parse_int(hour, "hour")
            if hour < 0:
                raise ValueError(f"negative hour {hour}")
            channel = VitalChannel.from_code(chan)
            value = _parse_float(value, "value")
            unit = unit or None
            if channel is VitalChannel.TEMPERATURE:
                if unit not in (None, "C", "F"):
                    raise ValueError(f"temperature unit must be C or F, got {unit!r}")
                if unit == "F":
                    value = (value - 32.0) * 5.0 / 9.0
                    unit = "C"
            elif unit is not None:
                raise ValueError(f"unit only allowed for temp, got {unit!r} for {chan}")
        except ValueError as exc:
            errors.append(RowError(lineno, str(exc)))
            continue
        out.append(RawObservation(pid, hour, channel, value, unit))
    if errors:
        raise CSVRowError(path, errors, out)
    return out


def parse_static_csv(path):
    """Read one :class:`StaticRecord` per row; duplicate ids are fatal."""
    out, errors = [], []
    seen = {}
    for lineno, row in _open_rows(path, STATIC_HEADER):
        try:
            if len(row) != len(STATIC_HEADER):
                raise ValueError(f"expected {len(STATIC_HEADER)} fields, got {len(row)}")
            pid, age, gender, race, height, weight, icu, hosp, era, dod = row
            if not pid:
                raise ValueError("empty patient_id")
            if era not in ERA_CODES:
                raise ValueError(
                    f"unknown era {era!r}; expected 2008-2016 or 2017-2019"
                )
            rec = StaticRecord(
                patient_id=pid,
                age=_parse_int(age, "age"),
                gender=gender,
                race=race or None,
                height_cm=_parse_float(height, "height_cm") if height else None,
                weight_kg=_parse_float(weight, "weight_kg") if weight else None,
                icu_death=_parse_bool(icu, "icu_death"),
                hospital_death=_parse_bool(hosp, "hospital_death"),
                era=ERA_CODES[era],
                dod=dod or None,
            )
            if rec.age < 0:
                raise ValueError(f"negative age {rec.age}")
        except ValueError as exc:
            errors.append(RowError(lineno, str(exc)))
            continue
        if pid in seen:
            raise IngestError(
                f"{path}: duplicate patient_id {pid!r} on lines {seen[pid]} and {lineno}"
            )
        seen[pid] = lineno
        out.append(rec)
    if errors:
        raise CSVRowError(path, errors, out)
    return out


def apply_cohort_filters(observations, statics, n_hours=DEFAULT_HOURS):
    """Keep adult patients with a complete, unambiguous channels x hours grid.

    Hours at or beyond ``n_hours`` are ignored. Returns the cohort and an
    exclusion log of ``(patient_id, reason)`` pairs; every input patient ends
    up either retained or logged exactly once.
    """
    if n_hours < 1:
        raise ValueError("n_hours must be positive")
    static_by_id = {}
    for rec in statics:
        if rec.patient_id in static_by_id:
            raise IngestError(f"duplicate static record for {rec.patient_id!r}")
        static_by_id[rec.patient_id] = rec

    cells = OrderedDict()
    for obs in observations:
        cells.setdefault(obs.patient_id, Counter())
        if obs.hour < n_hours:
            cells[obs.patient_id][(obs.channel.index, obs.hour)] += 1
    values = {}
    for obs in observations:
        if obs.hour < n_hours:
            values[(obs.patient_id, obs.channel.index, obs.hour)] = obs.value

    order = list(cells)
    order += [pid for pid in static_by_id if pid not in cells]

    series, kept_statics, excluded = [], {}, []
    full = N_CHANNELS * n_hours
    for pid in order:
        rec = static_by_id.get(pid)
        counts = cells.get(pid, Counter())
        if rec is None:
            reason = "no_static"
        elif rec.age < ADULT_AGE:
            reason = "underage"
        elif any(c > 1 for c in counts.values()):
            reason = "duplicate_hour"
        elif len(counts) != full:
            reason = "incomplete_grid"
        else:
            reason = None
        if reason is not None:
            excluded.append((pid, reason))
            continue
        grid = np.empty((N_CHANNELS, n_hours))
        for c in range(N_CHANNELS):
            for t in range(n_hours):
                grid[c, t] = values[(pid, c, t)]
        if not np.all(np.isfinite(grid)):
            excluded.append((pid, "incomplete_grid"))
            continue
        series.append(PatientSeries(pid, grid))
        kept_statics[pid] = rec

    tally = Counter(r for _, r in excluded)
    logger.info(
        "cohort filters: %d retained, excluded %s",
        len(series), {r: tally.get(r, 0) for r in EXCLUSION_REASONS},
    )
    return Cohort(series, kept_statics), excluded


def split_by_era(cohort):
    """Partition a cohort into (development, validation) by static era."""
    parts = {era: [] for era in ERAS}
    for s in cohort.series:
        parts[cohort.statics[s.patient_id].era].append(s)
    return tuple(
        Cohort(parts[era], {s.patient_id: cohort.statics[s.patient_id] for s in parts[era]})
        for era in ERAS
    )


@dataclass
class SyntheticSpec:
    """Generator parameters for a planted-subgroup cohort.

    ``archetypes[g][c]`` is ``(baseline, slope_per_hour, noise_std)`` for
    subgroup ``g`` and channel ``c`` in canonical channel order;
    ``mortality[g]`` is ``(icu_death_prob, hospital_death_prob)``.
    """

    n_patients: list
    archetypes: list
    mortality: list
    seed: int
    era_fraction_validation: float = 0.2
    n_hours: int = DEFAULT_HOURS

    def __post_init__(self):
        self.seed = check_seed(self.seed)
        self.n_patients = [int(n) for n in self.n_patients]
        self.archetypes = np.asarray(self.archetypes, dtype=float)
        self.mortality = np.asarray(self.mortality, dtype=float)
        g = len(self.n_patients)
        if g == 0 or any(n <= 0 for n in self.n_patients):
            raise ValueError("n_patients must be a non-empty list of positive integers")
        if self.archetypes.shape != (g, N_CHANNELS, 3):
            raise ValueError(
                f"archetypes must have shape ({g}, {N_CHANNELS}, 3), got {self.archetypes.shape}"
            )
        if not np.all(np.isfinite(self.archetypes)) or np.any(self.archetypes[..., 2] < 0):
            raise ValueError("archetype entries must be finite with non-negative noise")
        if self.mortality.shape != (g, 2):
            raise ValueError(f"mortality must have shape ({g}, 2), got {self.mortality.shape}")
        if np.any((self.mortality < 0) | (self.mortality > 1)):
            raise ValueError("mortality probabilities must lie in [0, 1]")
        if np.any(self.mortality[:, 0] > self.mortality[:, 1]):
            raise ValueError("icu_death probability must not exceed hospital_death probability")
        if not 0.0 <= self.era_fraction_validation <= 1.0:
            raise ValueError("era_fraction_validation must lie in [0, 1]")
        if self.n_hours < 3:
            raise ValueError("n_hours must be at least 3")

    @classmethod
    def from_dict(cls, d):
        allowed = {"n_patients", "archetypes", "mortality", "seed",
                   "era_fraction_validation", "n_hours"}
        unknown = set(d) - allowed
        if unknown:
            raise ValueError(f"unknown synthetic spec keys: {sorted(unknown)}")
        d = dict(d)
        arche = d["archetypes"]
        if arche and isinstance(arche[0], dict):
            # {"temp": [b, s, n], ...} per subgroup
            d["archetypes"] = [[a[c] for c in CHANNEL_CODES] for a in arche]
        mort = d["mortality"]
        if mort and isinstance(mort[0], dict):
            d["mortality"] = [[m["icu_death"], m["hospital_death"]] for m in mort]
        return cls(**d)

    def to_dict(self):
        return {
            "n_patients": list(self.n_patients),
            "archetypes": [
                {code: list(map(float, row)) for code, row in zip(CHANNEL_CODES, g)}
                for g in self.archetypes
            ],
            "mortality": [
                {"icu_death": float(i), "hospital_death": float(h)}
                for i, h in self.mortality
            ],
            "seed": self.seed,
            "era_fraction_validation": self.era_fraction_validation,
            "n_hours": self.n_hours,
        }

    @classmethod
    def default(cls, seed=0, **overrides):
        """Three-subgroup defaults read from the packaged ``default_synth.json``."""
        text = resources.files("vitalclust").joinpath("data/default_synth.json").read_text()
        d = json.loads(text)
        d["seed"] = seed
        d.update(overrides)
        return cls.from_dict(d)


def generate_synthetic_cohort(spec: SyntheticSpec):
    """Draw a cohort from planted archetypes.

    One PCG64 stream seeded with ``spec.seed`` is consumed patient by patient
    (subgroups in order): ``channels x hours`` standard normals (channel-major,
    hours ascending), then two uniforms for ICU and hospital death, then one
    uniform for the era. Returns ``(cohort, truth)`` where ``truth`` maps
    patient id to its 0-based subgroup.
    """
    rng = make_rng(spec.seed)
    hours = np.arange(spec.n_hours, dtype=float)
    series, statics, truth = [], {}, {}
    idx = 0
    for g, n in enumerate(spec.n_patients):
        base = spec.archetypes[g, :, 0][:, None]
        slope = spec.archetypes[g, :, 1][:, None]
        noise = spec.archetypes[g, :, 2][:, None]
        p_icu, p_hosp = spec.mortality[g]
        # P(hospital | not icu) chosen so the marginal hospital rate is p_hosp.
        p_rest = 0.0 if p_icu >= 1.0 else (p_hosp - p_icu) / (1.0 - p_icu)
        for _ in range(n):
            z = rng.standard_normal((N_CHANNELS, spec.n_hours))
            grid = base + slope * hours + noise * z
            u_icu, u_hosp = rng.random(2)
            u_era = rng.random()
            icu = bool(u_icu < p_icu)
            hosp = icu or bool(u_hosp < p_rest)
            pid = f"P{idx:06d}"
            series.append(PatientSeries(pid, grid))
            statics[pid] = StaticRecord(
                patient_id=pid,
                age=ADULT_AGE + (idx * 37) % 72,
                gender="F" if idx % 2 else "M",
                icu_death=icu,
                hospital_death=hosp,
                era=VALIDATION if u_era < spec.era_fraction_validation else DEVELOPMENT,
            )
            truth[pid] = g
            idx += 1
    return Cohort(series, statics), truth


def _fmt_num(v):
    return repr(float(v))


def write_timeseries_csv(cohort, path):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TIMESERIES_HEADER)
        for s in cohort.series:
            for c, chan in enumerate(CHANNELS):
                unit = "C" if chan is VitalChannel.TEMPERATURE else ""
                for t in range(s.n_hours):
                    w.writerow([s.patient_id, t, chan.code, _fmt_num(s.grid[c, t]), unit])


def _opt(v):
    return "" if v is None else v


def write_static_csv(cohort, path):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STATIC_HEADER)
        for s in cohort.series:
            r = cohort.statics[s.patient_id]
            w.writerow([
                r.patient_id, r.age, r.gender, _opt(r.race),
                "" if r.height_cm is None else _fmt_num(r.height_cm),
                "" if r.weight_kg is None else _fmt_num(r.weight_kg),
                int(r.icu_death), int(r.hospital_death), ERA_LABELS[r.era], _opt(r.dod),
            ])


def write_exclusions_csv(excluded, path):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EXCLUSION_HEADER)
        w.writerows(excluded)


def write_truth_csv(truth, path):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRUTH_HEADER)
        for pid, g in truth.items():
            w.writerow([pid, g])


def read_truth_csv(path):
    return {row[0]: int(row[1]) for _, row in _open_rows(path, TRUTH_HEADER)}


def load_cohort(timeseries_path, static_path, n_hours=DEFAULT_HOURS):
    obs = parse_timeseries_csv(timeseries_path)
    statics = parse_static_csv(static_path)
    return apply_cohort_filters(obs, statics, n_hours)

