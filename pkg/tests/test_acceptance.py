"""Acceptance gate. Each test checks one criterion at its stated tolerance and
records a PASS/FAIL line, printed in the terminal summary."""

import json
import math
import time

import numpy as np

from vitalclust.cli import main
from vitalclust.cluster import DBSCAN, KMeans, kmeans_plusplus, lloyd, pam_build, pam_swap, sbd
from vitalclust.features import FeaturePreprocessor, assemble_matrix
from vitalclust.ingest import SyntheticSpec, generate_synthetic_cohort
from vitalclust.model import DEVELOPMENT
from vitalclust.prognosis import OVERALL, align_labels, mortality_bootstrap, relabel, subgroup_name, subgroup_report
from vitalclust.validity import ari, chi, dbi, elbow_select_k

from conftest import make_static, record_acceptance, small_spec
from oracles import ari_oracle, chi_oracle, dbi_oracle, dbscan_oracle, sbd_oracle

REPORTS = []


def identity_holds(report):
    """Subgroup counts and means reproduce the overall row exactly."""
    for era in report.rankings:
        overall = report.get(era, OVERALL)
        rows = [r for r in report.rows if r["era"] == era and r["subgroup"] != OVERALL]
        for deaths, mean in (("icu_deaths", "icu_mean"), ("hosp_deaths", "hosp_mean")):
            if sum(r[deaths] for r in rows) != round(overall["n"] * overall[mean]):
                return False
            total = sum(r["n"] * r[mean] for r in rows if not r["empty"])
            if abs(total - overall["n"] * overall[mean]) > 1e-9:
                return False
    return True


def test_1_oracle_equivalence():
    start = time.perf_counter()
    failures = {}
    for seed in range(100):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(6, 51))
        d = int(rng.integers(1, 6))
        k = int(rng.integers(2, 6))
        labels = np.concatenate([np.arange(k), rng.integers(0, k, n - k)])
        X = rng.normal(size=(n, d)) + labels[:, None] * rng.uniform(0, 3)
        if abs(chi(X, labels) - chi_oracle(X.tolist(), labels.tolist())) > 1e-9:
            failures.setdefault("chi", []).append(seed)
        if abs(dbi(X, labels) - dbi_oracle(X.tolist(), labels.tolist())) > 1e-9:
            failures.setdefault("dbi", []).append(seed)
        other = rng.integers(0, int(rng.integers(1, 6)), n)
        if abs(ari(labels, other) - ari_oracle(labels.tolist(), other.tolist())) > 1e-9:
            failures.setdefault("ari", []).append(seed)
        eps, m = float(rng.uniform(0.3, 1.5)), int(rng.integers(1, 7))
        if DBSCAN(eps=eps, min_pts=m).fit(X).labels_.tolist() != dbscan_oracle(X.tolist(), eps, m):
            failures.setdefault("dbscan", []).append(seed)
        x, y = rng.normal(size=n), rng.normal(size=n)
        (dist, shift), (ref, ref_shift) = sbd(x, y), sbd_oracle(x, y)
        if abs(dist - ref) > 1e-9 or shift != ref_shift:
            failures.setdefault("sbd", []).append(seed)
    elapsed = time.perf_counter() - start
    ok = not failures and elapsed < 30
    record_acceptance(1, "oracle equivalence, 100 instances x 5 routines", ok,
                      f"{elapsed:.1f}s, failures={failures or 'none'}")
    assert not failures
    assert elapsed < 30


def test_2_hand_fixtures():
    line = [[0.0], [2.0], [10.0], [12.0]]
    four = np.array([[0.0], [1.0], [9.0], [10.0]])
    checks = {
        "chi": chi(line, [0, 0, 1, 1]) == 50.0,
        "dbi": abs(dbi(line, [0, 0, 1, 1]) - 0.2) < 1e-15,
        "inertia": abs(KMeans(2, random_state=0).fit(four).inertia_ - 1.0) < 1e-15,
        "elbow": elbow_select_k({1: 100, 2: 60, 3: 20, 4: 18, 5: 17}) == 3,
    }
    record_acceptance(2, "hand-computed fixtures", all(checks.values()), str(checks))
    assert all(checks.values()), checks


def test_3_planted_recovery(tmp_path):
    data = tmp_path / "data"
    assert main(["synth", "--seed", "2024", "--out", str(data)]) == 0
    cfg = {"seed": 2024, "timeseries_csv": "data/timeseries.csv", "static_csv": "data/static.csv",
           "truth_csv": "data/truth.csv", "k_range": [2, 6]}
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    start = time.perf_counter()
    code = main(["run", "--config", str(tmp_path / "cfg.json"), "--out", str(tmp_path / "out")])
    elapsed = time.perf_counter() - start
    manifest = json.loads((tmp_path / "out/manifest.json").read_text())
    ok = (code == 0 and manifest["chosen"]["k"] == 3 and manifest["validation_mode"] == "frozen-assign"
          and min(manifest["ari"].values()) >= 0.9 and elapsed < 60)
    record_acceptance(3, "planted recovery, all algorithms, k in [2,6]", ok,
                      f"chosen={manifest['chosen']['algorithm']} k={manifest['chosen']['k']}, "
                      f"ARI={manifest['ari']}, counts={manifest['counts']}, {elapsed:.1f}s")
    assert code == 0
    assert manifest["chosen"]["k"] == 3
    assert min(manifest["ari"].values()) >= 0.9
    assert elapsed < 60


def test_4_prognosis_ranking():
    passed = 0
    for seed in range(100):
        spec = SyntheticSpec.default(seed=seed, n_patients=[2000] * 3, era_fraction_validation=0.0)
        cohort, truth = generate_synthetic_cohort(spec)
        raw = assemble_matrix(cohort)
        feats = FeaturePreprocessor(0.9).fit(raw).transform(raw)
        labels = KMeans(3, n_init=3, random_state=seed).fit(feats.values).labels_
        reference = np.array([truth[p] for p in feats.patient_ids])
        labels = relabel(labels, align_labels(reference, labels))
        report = subgroup_report({DEVELOPMENT: dict(zip(feats.patient_ids, labels.tolist()))},
                                 cohort.statics, k=3, B=20, seed=seed)
        REPORTS.append(report)
        overall = report.get(DEVELOPMENT, OVERALL)["icu_mean"]
        hospital_top = report.rankings[DEVELOPMENT]["hospital"][0] == subgroup_name(1)
        icu_above = all(report.get(DEVELOPMENT, subgroup_name(j))["icu_mean"] > overall for j in (0, 1))
        passed += hospital_top and icu_above
    record_acceptance(4, "prognosis ranking reproduced in >= 95 of 100 seeds", passed >= 95,
                      f"{passed}/100")
    assert passed >= 95


def test_5_worker_determinism(tmp_path):
    (tmp_path / "spec.json").write_text(json.dumps(small_spec(seed=21, n=80).to_dict()))
    assert main(["synth", "--spec", str(tmp_path / "spec.json"), "--out", str(tmp_path / "data")]) == 0
    cfg = {"seed": 9, "timeseries_csv": "data/timeseries.csv", "static_csv": "data/static.csv",
           "k_range": [2, 4], "n_init": 3, "bootstrap_b": 200}
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    hashes = []
    for workers in (1, 4):
        out = tmp_path / f"out{workers}"
        assert main(["run", "--config", str(tmp_path / "cfg.json"), "--out", str(out),
                     "--workers", str(workers)]) == 0
        hashes.append(json.loads((out / "manifest.json").read_text())["numeric_outputs_sha256"])
    record_acceptance(5, "manifest hash independent of --workers", hashes[0] == hashes[1],
                      f"{hashes[0][:12]} vs {hashes[1][:12]}")
    assert hashes[0] == hashes[1]


def test_6_invariants():
    results = {}
    lloyd_ok = True
    for seed in range(50):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(200, 4))
        _, _, _, history = lloyd(X, X[kmeans_plusplus(X, 5, rng)], max_iter=300, tol=0.0)
        lloyd_ok &= all(b <= a for a, b in zip(history, history[1:]))
    results["lloyd"] = lloyd_ok

    pam_ok = True
    for seed in range(20):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(80, 3))
        D = np.linalg.norm(X[:, None] - X[None], axis=-1)
        for start in (pam_build(D, 4), list(rng.choice(80, 4, replace=False))):
            _, history = pam_swap(D, start)
            pam_ok &= all(b < a for a, b in zip(history, history[1:]))
    results["pam"] = pam_ok

    sbd_ok = True
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(2, 33))
        x, y = rng.normal(size=n), rng.normal(size=n)
        d_xy, d_yx, d_xx = sbd(x, y)[0], sbd(y, x)[0], sbd(x, x)[0]
        sbd_ok &= abs(d_xy - d_yx) <= 1e-12 and 0.0 <= d_xy <= 2.0 and abs(d_xx) <= 1e-12
    results["sbd"] = sbd_ok

    rng = np.random.default_rng(1)
    reports = list(REPORTS)
    for seed in range(20):
        n = int(rng.integers(5, 200))
        statics = {}
        for i in range(n):
            icu = bool(rng.random() < 0.1)
            statics[f"p{i}"] = make_static(f"p{i}", icu_death=icu,
                                           hospital_death=icu or bool(rng.random() < 0.1))
        labels = {p: int(rng.integers(-1, 4)) for p in statics}
        reports.append(subgroup_report({DEVELOPMENT: labels}, statics, B=20, seed=seed))
    results["weighted_mean"] = all(identity_holds(r) for r in reports)
    ok = all(results.values())
    record_acceptance(6, "algorithm invariant suites", ok, f"{results}, {len(reports)} reports")
    assert ok, results


def test_7_bootstrap_sanity():
    _, se = mortality_bootstrap([1, 0, 0, 0], B=10000, seed=7)
    analytic = math.sqrt(0.25 * 0.75 / 4)
    rel = abs(se - analytic) / analytic
    record_acceptance(7, "bootstrap SE within 10% of analytic 0.2165", rel < 0.10,
                      f"se={se:.4f}, rel err={rel:.3f}")
    assert rel < 0.10
