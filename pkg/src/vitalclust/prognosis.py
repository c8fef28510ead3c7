"""Per-subgroup ICU and hospital mortality with bootstrap standard errors.

The ``±`` figure reported next to each mortality rate is the standard
deviation of ``B`` bootstrap resample means (resampling patients with
replacement). Replicate ``b`` draws from a generator seeded with
``hash64(seed, b)``, so results are independent of how replicates are
scheduled.
"""

from __future__ import annotations

import csv
import json
import zlib
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from ._random import check_seed, hash64, make_rng
from .model import ERAS, NOISE

DEFAULT_B = 1000
OUTCOMES = ("icu", "hospital")
OVERALL = "overall"
NOISE_ROW = "noise"


def mortality_bootstrap(flags, B=DEFAULT_B, seed=0):
    """Mortality rate and its bootstrap standard error (population SD of the
    ``B`` resample means)."""
    flags = np.asarray(flags, dtype=float).ravel()
    if flags.size == 0:
        raise ValueError("mortality_bootstrap needs at least one patient")
    if B < 1:
        raise ValueError("B must be >= 1")
    seed = check_seed(seed)
    n = flags.size
    means = np.empty(B)
    for b in range(B):
        idx = make_rng(hash64(seed, b)).integers(0, n, size=n)
        means[b] = flags[idx].mean()
    return float(flags.mean()), float(means.std())


def align_labels(reference, other, reference_centers=None, other_centers=None):
    """Permutation ``perm`` mapping ``other`` cluster indices onto
    ``reference`` ones (``perm[j]`` is the reference index for other's ``j``).

    With two labelings of the same patients, the total overlap of the
    contingency table is maximized (Hungarian assignment). With centres
    instead, the summed centre-to-centre distance is minimized.
    """
    if reference_centers is not None and other_centers is not None:
        rc = np.asarray(reference_centers, dtype=float)
        oc = np.asarray(other_centers, dtype=float)
        if len(rc) != len(oc):
            raise ValueError(f"mismatched k: {len(rc)} vs {len(oc)}")
        cost = cdist(oc.reshape(len(oc), -1), rc.reshape(len(rc), -1))
    else:
        ref = np.asarray(reference)
        oth = np.asarray(other)
        if ref.shape != oth.shape:
            raise ValueError("labelings must cover the same patients")
        k = int(max(ref.max(), oth.max())) + 1
        k_ref, k_oth = len(np.unique(ref)), len(np.unique(oth))
        if k_ref != k_oth:
            raise ValueError(f"mismatched k: {k_ref} vs {k_oth}")
        table = np.zeros((k, k), dtype=np.int64)
        np.add.at(table, (oth, ref), 1)
        cost = -table
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(len(rows), dtype=int)
    perm[rows] = cols
    return perm


def relabel(labels, perm):
    labels = np.asarray(labels)
    out = labels.copy()
    hit = labels != NOISE
    out[hit] = np.asarray(perm)[labels[hit]]
    return out


def subgroup_name(index):
    return f"Subgroup{index + 1}"


@dataclass
class PrognosisReport:
    rows: list
    B: int
    seed: int
    rankings: dict = field(default_factory=dict)

    def get(self, era, subgroup):
        for r in self.rows:
            if r["era"] == era and r["subgroup"] == subgroup:
                return r
        raise KeyError((era, subgroup))

    def to_csv(self, path):
        cols = ["era", "subgroup", "n", "icu_mean", "icu_se", "hosp_mean", "hosp_se"]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for r in self.rows:
                w.writerow([r["era"], r["subgroup"], r["n"]]
                           + ["" if r[c] is None else repr(r[c]) for c in cols[3:]])

    def summary(self):
        return {
            "uncertainty": f"bootstrap standard error, B={self.B}, seed={self.seed}",
            "B": self.B,
            "seed": self.seed,
            "rows": self.rows,
            "rankings": self.rankings,
        }

    def to_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _member_key(pids):
    # Seeds follow group membership, not cluster index, so relabeling a
    # clustering only renames rows.
    return zlib.crc32("\n".join(sorted(pids)).encode())


def _row(era, name, pids, icu, hosp, B, seed):
    n = len(icu)
    if n == 0:
        return {"era": era, "subgroup": name, "n": 0, "icu_deaths": 0, "hosp_deaths": 0,
                "icu_mean": None, "icu_se": None, "hosp_mean": None, "hosp_se": None,
                "empty": True}
    base = hash64(seed, _member_key(pids))
    im, ise = mortality_bootstrap(icu, B, hash64(base, 0))
    hm, hse = mortality_bootstrap(hosp, B, hash64(base, 1))
    return {"era": era, "subgroup": name, "n": n,
            "icu_deaths": int(icu.sum()), "hosp_deaths": int(hosp.sum()),
            "icu_mean": im, "icu_se": ise, "hosp_mean": hm, "hosp_se": hse, "empty": False}


def subgroup_report(labels_by_era, statics, k=None, B=DEFAULT_B, seed=0):
    """Mortality per (era, subgroup) plus an overall row per era.

    ``labels_by_era`` maps an era name to ``{patient_id: cluster}``, with
    labels already aligned across eras. Subgroup ``j`` is reported as
    ``Subgroup{j+1}``. Noise points get a separate ``noise`` row, present
    only when an era has any, so the non-overall rows always partition the
    era. Rows for clusters with no patients in an era are flagged ``empty``.
    Rankings list subgroup names from highest to lowest mortality per era
    and outcome.
    """
    seed = check_seed(seed)
    if k is None:
        k = 1 + max((c for labels in labels_by_era.values() for c in labels.values()
                     if c != NOISE), default=-1)
    eras = [e for e in ERAS if e in labels_by_era] + sorted(
        e for e in labels_by_era if e not in ERAS
    )
    rows, rankings = [], {}
    for era in eras:
        labels = labels_by_era[era]
        pids = list(labels)
        lab = np.array([labels[p] for p in pids], dtype=int)
        icu = np.array([statics[p].icu_death for p in pids], dtype=float)
        hosp = np.array([statics[p].hospital_death for p in pids], dtype=float)
        era_rows = []
        for j in range(k):
            m = lab == j
            members = [p for p, keep in zip(pids, m) if keep]
            era_rows.append(_row(era, subgroup_name(j), members, icu[m], hosp[m], B, seed))
        rows += era_rows
        noise = lab == NOISE
        if noise.any():
            members = [p for p, keep in zip(pids, noise) if keep]
            rows.append(_row(era, NOISE_ROW, members, icu[noise], hosp[noise], B, seed))
        if pids:
            rows.append(_row(era, OVERALL, pids, icu, hosp, B, seed))
        live = [r for r in era_rows if not r["empty"]]
        rankings[era] = {
            "icu": [r["subgroup"] for r in sorted(live, key=lambda r: -r["icu_mean"])],
            "hospital": [r["subgroup"] for r in sorted(live, key=lambda r: -r["hosp_mean"])],
        }
    return PrognosisReport(rows, B, seed, rankings)

