"""End-to-end run: ingest, features, sweep, final model, validation labels,
prognosis and trajectories, plus a manifest of everything written."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from ._random import check_seed
from .cluster import ClusterParams, assign_frozen, fit_cluster_model, save_model, write_labels_csv
from .features import FeaturePreprocessor, assemble_matrix, write_feature_matrix
from .ingest import load_cohort, read_truth_csv, split_by_era, write_exclusions_csv
from .model import ALGORITHMS, DEFAULT_HOURS, DEVELOPMENT, NOISE, VALIDATION
from .prognosis import DEFAULT_B, align_labels, relabel, subgroup_report
from .trajectories import aggregate, emit_plot_data
from .validity import ari, sweep

logger = logging.getLogger(__name__)

VALIDATION_MODES = ("frozen-assign", "refit")


class ConfigError(ValueError):
    """Invalid or incomplete pipeline configuration."""


class StageError(RuntimeError):
    def __init__(self, stage, exc):
        self.stage = stage
        self.cause = exc
        super().__init__(f"stage '{stage}' failed: {exc}")


@dataclass
class PipelineConfig:
    """Everything a run depends on. Relative paths resolve against the
    directory of the config file they were read from."""

    seed: int
    timeseries_csv: Optional[str] = None
    static_csv: Optional[str] = None
    output_dir: Optional[str] = None
    truth_csv: Optional[str] = None
    n_hours: int = DEFAULT_HOURS
    max_abs_corr: float = 0.9
    top_n: Optional[int] = None
    algorithms: list = field(default_factory=lambda: list(ALGORITHMS))
    k_range: list = field(default_factory=lambda: [2, 6])
    n_init: int = 10
    max_iter: int = 300
    tol: float = 1e-6
    dbscan_eps: Optional[float] = None
    dbscan_min_pts: int = 5
    bootstrap_b: int = DEFAULT_B
    validation_mode: str = "frozen-assign"
    band_multiplier: float = 1.0

    def __post_init__(self):
        try:
            self.seed = check_seed(self.seed)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        if not self.algorithms or any(a not in ALGORITHMS for a in self.algorithms):
            raise ConfigError(f"algorithms must be a non-empty subset of {ALGORITHMS}")
        ks = self.ks
        if not ks or ks != sorted(set(ks)) or ks[0] < 1:
            raise ConfigError("k_range must be a non-empty ascending range of positive k")
        if self.validation_mode not in VALIDATION_MODES:
            raise ConfigError(f"validation_mode must be one of {VALIDATION_MODES}")
        if not 0 < self.max_abs_corr <= 1:
            raise ConfigError("max_abs_corr must lie in (0, 1]")
        if self.bootstrap_b < 1:
            raise ConfigError("bootstrap_b must be >= 1")
        if self.n_hours < 3:
            raise ConfigError("n_hours must be >= 3")

    @property
    def ks(self):
        """``[lo, hi]`` is read as an inclusive range; longer lists verbatim."""
        k = list(self.k_range)
        if len(k) == 2 and k[1] >= k[0]:
            return list(range(k[0], k[1] + 1))
        return k

    @classmethod
    def from_dict(cls, d, base_dir=None):
        known = {f for f in cls.__dataclass_fields__}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        if "seed" not in d or d["seed"] is None:
            raise ConfigError("config must set 'seed'")
        d = dict(d)
        if base_dir is not None:
            for key in ("timeseries_csv", "static_csv", "output_dir", "truth_csv"):
                if d.get(key):
                    d[key] = str((Path(base_dir) / d[key]).resolve())
        return cls(**d)

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            d = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
        if not isinstance(d, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(d, base_dir=path.parent)

    def canonical_hash(self):
        """Hash of the settings that influence numeric output (paths excluded)."""
        d = asdict(self)
        for key in ("timeseries_csv", "static_csv", "output_dir", "truth_csv"):
            d.pop(key)
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def cluster_params(self):
        return ClusterParams(
            algorithm=self.algorithms[0], k=self.ks[0], seed=self.seed,
            max_iter=self.max_iter, tol=self.tol, n_init=self.n_init,
            eps=self.dbscan_eps, min_pts=self.dbscan_min_pts,
        )


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class _Stage:
    def __init__(self, name):
        self.name = name

    def __enter__(self):
        logger.info("stage %s", self.name)

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and not isinstance(exc, (StageError, ConfigError)):
            raise StageError(self.name, exc) from exc
        return False


def prepare(cfg: PipelineConfig, n_workers=1):
    """Ingest and featurize. Returns a dict of intermediate products."""
    with _Stage("ingest"):
        if not cfg.timeseries_csv or not cfg.static_csv:
            raise ConfigError("timeseries_csv and static_csv must be set")
        cohort, excluded = load_cohort(cfg.timeseries_csv, cfg.static_csv, cfg.n_hours)
        dev, val = split_by_era(cohort)
        if len(dev) == 0:
            raise ValueError("no development-era patients after filtering")
    with _Stage("features"):
        raw_dev = assemble_matrix(dev, n_workers)
        raw_val = assemble_matrix(val, n_workers)
        pre = FeaturePreprocessor(cfg.max_abs_corr, cfg.top_n).fit(raw_dev)
        dev_feats = pre.transform(raw_dev)
    return {
        "cohort": cohort, "excluded": excluded, "dev": dev, "val": val,
        "raw_dev": raw_dev, "raw_val": raw_val, "pre": pre, "dev_feats": dev_feats,
    }


def run_sweep(cfg: PipelineConfig, prep, n_workers=1):
    with _Stage("sweep"):
        return sweep(
            prep["dev_feats"], cfg.algorithms, cfg.ks, cfg.cluster_params(),
            grids=prep["dev"].grids(), dbscan_eps=(cfg.dbscan_eps,), n_jobs=n_workers,
        )


def validation_labels(cfg, model, prep):
    """Validation-era labels, aligned to the development clusters."""
    val = prep["val"]
    if len(val) == 0:
        return {}
    frozen = assign_frozen(model, prep["raw_val"], grids=val.grids())
    if cfg.validation_mode == "frozen-assign":
        return dict(zip(val.patient_ids, (int(v) for v in frozen)))
    # refit: cluster the validation era from scratch with the development
    # features, then map its clusters onto the frozen assignment.
    val_feats = FeaturePreprocessor(1.0).fit(prep["raw_val"].columns(model.selected_features))
    val_feats = val_feats.transform(prep["raw_val"])
    params = ClusterParams(**{k: v for k, v in model.params.items()})
    refit = fit_cluster_model(params, val_feats, grids=val.grids())
    labels = np.array([refit.labels[p] for p in val.patient_ids])
    found = sorted(set(labels.tolist()) - {NOISE})
    frozen_found = sorted(set(frozen.tolist()) - {NOISE})
    if NOISE not in labels and len(found) == len(frozen_found) == model.n_clusters:
        labels = relabel(labels, align_labels(frozen, labels))
    return dict(zip(val.patient_ids, (int(v) for v in labels)))


def write_reports(cfg, model, prep, val_labels, out):
    """Prognosis and trajectory outputs; returns ``{name: path}``."""
    dev, val = prep["dev"], prep["val"]
    dev_labels = {p: model.labels[p] for p in dev.patient_ids}
    labels_by_era = {DEVELOPMENT: dev_labels}
    if len(val):
        labels_by_era[VALIDATION] = val_labels
    paths = {}
    with _Stage("prognosis"):
        report = subgroup_report(labels_by_era, prep["cohort"].statics,
                                 k=model.n_clusters, B=cfg.bootstrap_b, seed=cfg.seed)
        report.to_csv(out / "prognosis.csv")
        report.to_json(out / "prognosis.json")
        paths["prognosis_csv"] = out / "prognosis.csv"
        paths["prognosis_json"] = out / "prognosis.json"
    with _Stage("trajectories"):
        cohorts = {DEVELOPMENT: dev, VALIDATION: val}
        summary = aggregate({e: cohorts[e] for e in labels_by_era}, labels_by_era)
        for p in emit_plot_data(summary, out, band=cfg.band_multiplier):
            paths[p.stem + "_" + p.suffix.lstrip(".")] = p
    if len(val):
        write_labels_csv(val_labels, out / "labels_validation.csv")
        paths["labels_validation"] = out / "labels_validation.csv"
    return report, paths


def _write_manifest(cfg, out, paths, extra):
    outputs = {name: {"file": Path(p).name, "sha256": _sha256(p)} for name, p in sorted(paths.items())}
    digest = hashlib.sha256(
        "\n".join(f"{n}:{o['sha256']}" for n, o in outputs.items()).encode()
    ).hexdigest()
    manifest = {
        "version": __version__,
        "config_sha256": cfg.canonical_hash(),
        "seed": cfg.seed,
        "outputs": outputs,
        "numeric_outputs_sha256": digest,
        **extra,
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest


def run_pipeline(cfg: PipelineConfig, out_dir=None, n_workers=1):
    """Execute the full pipeline and return the manifest dict."""
    out = Path(out_dir or cfg.output_dir or "out")
    out.mkdir(parents=True, exist_ok=True)
    prep = prepare(cfg, n_workers)
    paths = {}
    write_exclusions_csv(prep["excluded"], out / "exclusions.csv")
    paths["exclusions"] = out / "exclusions.csv"
    write_feature_matrix(prep["dev_feats"], out / "features_development.csv",
                         out / "feature_stats.csv")
    paths["features_development"] = out / "features_development.csv"
    paths["feature_stats"] = out / "feature_stats.csv"

    report = run_sweep(cfg, prep, n_workers)
    report.to_csv(out / "validity.csv")
    report.to_json(out / "validity.json")
    paths["validity_csv"] = out / "validity.csv"
    paths["validity_json"] = out / "validity.json"
    if report.chosen_algorithm is None:
        raise StageError("sweep", ValueError("no algorithm produced a scorable clustering"))
    model = report.chosen_model
    logger.info("chosen %s k=%s", model.algorithm, model.n_clusters)

    with _Stage("model"):
        save_model(model, out / "model.json")
        write_labels_csv({p: model.labels[p] for p in prep["dev"].patient_ids},
                         out / "labels_development.csv")
        paths["model"] = out / "model.json"
        paths["labels_development"] = out / "labels_development.csv"
    with _Stage("validation"):
        val_labels = validation_labels(cfg, model, prep)
    prog, more = write_reports(cfg, model, prep, val_labels, out)
    paths.update(more)

    extra = {
        "chosen": {"algorithm": model.algorithm, "k": model.n_clusters,
                   "selected_features": len(model.selected_features)},
        "counts": {"retained": len(prep["cohort"]), "excluded": len(prep["excluded"]),
                   "development": len(prep["dev"]), "validation": len(prep["val"])},
        "validation_mode": cfg.validation_mode,
    }
    if cfg.truth_csv:
        with _Stage("truth"):
            extra["ari"] = truth_agreement(cfg.truth_csv, model, prep, val_labels)
    return _write_manifest(cfg, out, paths, extra)


def truth_agreement(truth_csv, model, prep, val_labels):
    truth = read_truth_csv(truth_csv)
    dev_ids = prep["dev"].patient_ids
    result = {DEVELOPMENT: ari([truth[p] for p in dev_ids], [model.labels[p] for p in dev_ids])}
    if len(val_labels) >= 2:
        ids = list(val_labels)
        result[VALIDATION] = ari([truth[p] for p in ids], [val_labels[p] for p in ids])
    return result


def run_report(cfg: PipelineConfig, model, out_dir=None, n_workers=1):
    """Prognosis and trajectories from a stored model, without refitting."""
    out = Path(out_dir or cfg.output_dir or "out")
    out.mkdir(parents=True, exist_ok=True)
    prep = prepare(cfg, n_workers)
    with _Stage("model"):
        missing = [p for p in prep["dev"].patient_ids if p not in model.labels]
        if missing:
            raise ValueError(f"model has no labels for {len(missing)} development patient(s), "
                             f"e.g. {missing[:3]}")
    with _Stage("validation"):
        val_labels = validation_labels(cfg, model, prep)
    _, paths = write_reports(cfg, model, prep, val_labels, out)
    return paths
