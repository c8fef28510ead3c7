import csv
import itertools
import json
import subprocess
import sys

import pytest

from vitalclust.cli import main
from vitalclust.ingest import load_cohort, read_truth_csv

from conftest import small_spec

FAST = {"algorithms": ["kmeans", "kmedoids"], "k_range": [2, 5], "n_init": 3, "bootstrap_b": 50}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "spec.json").write_text(json.dumps(small_spec(seed=11, n=50).to_dict()))
    assert main(["synth", "--spec", str(root / "spec.json"), "--out", str(root / "data")]) == 0
    cfg = {"seed": 5, "timeseries_csv": "data/timeseries.csv", "static_csv": "data/static.csv",
           "truth_csv": "data/truth.csv", **FAST}
    (root / "cfg.json").write_text(json.dumps(cfg))
    return root


def read_labels_csv(path):
    with open(path, newline="") as fh:
        return {row["patient_id"]: int(row["cluster"]) for row in csv.DictReader(fh)}


def run(root, out, workers=1):
    code = main(["run", "--config", str(root / "cfg.json"), "--out", str(root / out),
                 "--workers", str(workers)])
    manifest = json.loads((root / out / "manifest.json").read_text())
    return code, manifest


@pytest.fixture(scope="module")
def first_run(workspace):
    return run(workspace, "run1")


class TestSynth:
    def test_files_round_trip(self, workspace):
        cohort, excluded = load_cohort(workspace / "data/timeseries.csv", workspace / "data/static.csv")
        assert len(cohort) == 150 and not excluded
        assert len(read_truth_csv(workspace / "data/truth.csv")) == 150

    def test_same_seed_same_bytes(self, workspace, tmp_path):
        assert main(["synth", "--spec", str(workspace / "spec.json"), "--out", str(tmp_path)]) == 0
        for name in ("timeseries.csv", "static.csv", "truth.csv"):
            assert (tmp_path / name).read_bytes() == (workspace / "data" / name).read_bytes()

    def test_seed_required(self, tmp_path, capsys):
        assert main(["synth", "--out", str(tmp_path)]) == 2
        assert "seed" in capsys.readouterr().err


class TestRun:
    def test_recovers_planted_subgroups(self, first_run):
        code, manifest = first_run
        assert code == 0
        assert manifest["chosen"]["k"] == 3
        assert min(manifest["ari"].values()) >= 0.9
        assert manifest["counts"]["retained"] == 150

    def test_workers_do_not_change_outputs(self, workspace, first_run):
        code, manifest = run(workspace, "run3", workers=3)
        assert code == 0
        assert manifest["numeric_outputs_sha256"] == first_run[1]["numeric_outputs_sha256"]

    def test_refit_validation_flag(self, workspace, first_run):
        out = workspace / "refit"
        assert main(["run", "--config", str(workspace / "cfg.json"), "--out", str(out),
                     "--refit-validation"]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["validation_mode"] == "refit"
        frozen = read_labels_csv(workspace / "run1/labels_validation.csv")
        refit = read_labels_csv(out / "labels_validation.csv")
        ids = sorted(frozen)
        agree = lambda perm: sum(perm[refit[p]] == frozen[p] for p in ids)
        assert agree([0, 1, 2]) == max(agree(q) for q in itertools.permutations(range(3)))

    def test_missing_seed_is_usage_error(self, workspace, tmp_path, capsys):
        cfg = json.loads((workspace / "cfg.json").read_text())
        del cfg["seed"]
        (tmp_path / "c.json").write_text(json.dumps(cfg))
        assert main(["run", "--config", str(tmp_path / "c.json")]) == 2
        assert "seed" in capsys.readouterr().err

    def test_unknown_key_is_usage_error(self, workspace, tmp_path):
        cfg = json.loads((workspace / "cfg.json").read_text())
        cfg["k_rnage"] = [2, 3]
        (tmp_path / "c.json").write_text(json.dumps(cfg))
        assert main(["run", "--config", str(tmp_path / "c.json")]) == 2

    def test_stage_named_on_failure(self, tmp_path, capsys):
        (tmp_path / "c.json").write_text(json.dumps(
            {"seed": 1, "timeseries_csv": "nope.csv", "static_csv": "nope2.csv"}))
        assert main(["run", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path)]) == 1
        assert "stage 'ingest'" in capsys.readouterr().err


class TestReport:
    def test_matches_run_outputs(self, workspace, first_run):
        out = workspace / "report"
        assert main(["report", "--config", str(workspace / "cfg.json"), "--out", str(out),
                     "--model", str(workspace / "run1/model.json")]) == 0
        names = ["prognosis.csv", "prognosis.json", "trajectories_development.csv",
                 "trajectories_development.svg", "trajectories_validation.csv",
                 "labels_validation.csv"]
        for name in names:
            assert (out / name).read_bytes() == (workspace / "run1" / name).read_bytes(), name

    def test_missing_model_exit_two(self, workspace, tmp_path):
        assert main(["report", "--config", str(workspace / "cfg.json"),
                     "--model", str(tmp_path / "absent.json")]) == 2

    def test_feature_mismatch_named(self, workspace, first_run, tmp_path, capsys):
        model = json.loads((workspace / "run1/model.json").read_text())
        model["selected_features"][0] = "hr__no_such_feature"
        model["normalization"][0]["feature"] = "hr__no_such_feature"
        (tmp_path / "m.json").write_text(json.dumps(model))
        code = main(["report", "--config", str(workspace / "cfg.json"), "--out", str(tmp_path),
                     "--model", str(tmp_path / "m.json")])
        err = capsys.readouterr().err
        assert code == 1
        assert "hr__no_such_feature" in err and "stage 'validation'" in err


class TestValidate:
    def test_counts_printed(self, workspace, capsys):
        assert main(["validate", "--config", str(workspace / "cfg.json")]) == 0
        out = capsys.readouterr().out
        assert "retained 150 patients" in out
        assert "excluded[incomplete_grid] = 0" in out


def test_module_entry_point(workspace, tmp_path):
    proc = subprocess.run([sys.executable, "-m", "vitalclust.cli", "sweep", "--config",
                           str(workspace / "cfg.json"), "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert proc.stdout.startswith("chosen: ")
    assert (tmp_path / "validity.csv").exists()
