"""Command-line entry point: ``vitalclust {synth,validate,sweep,run,report}``.

Log verbosity comes from the ``VITALCLUST_LOG`` environment variable
(``DEBUG``, ``INFO``, ``WARNING``; default ``WARNING``).
"""

import argparse
import json
import logging
import os
import sys
from collections import Counter
from pathlib import Path

from .cluster import load_model
from .ingest import (
    EXCLUSION_REASONS,
    IngestError,
    SyntheticSpec,
    generate_synthetic_cohort,
    load_cohort,
    write_static_csv,
    write_timeseries_csv,
    write_truth_csv,
)
from .model import validate_cohort
from .pipeline import ConfigError, PipelineConfig, StageError, prepare, run_pipeline, run_report, run_sweep

logger = logging.getLogger("vitalclust")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _load_config(args):
    if not args.config:
        raise ConfigError("--config is required")
    cfg = PipelineConfig.load(args.config)
    if getattr(args, "refit_validation", False):
        cfg.validation_mode = "refit"
    return cfg


def cmd_synth(args):
    if args.spec:
        try:
            d = json.loads(Path(args.spec).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"spec file not found: {args.spec}") from None
        if args.seed is not None:
            d["seed"] = args.seed
        if d.get("seed") is None:
            raise ConfigError("synthetic spec must set 'seed' (or pass --seed)")
        spec = SyntheticSpec.from_dict(d)
    else:
        if args.seed is None:
            raise ConfigError("--seed is required when no --spec is given")
        spec = SyntheticSpec.default(seed=args.seed)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    cohort, truth = generate_synthetic_cohort(spec)
    write_timeseries_csv(cohort, out / "timeseries.csv")
    write_static_csv(cohort, out / "static.csv")
    write_truth_csv(truth, out / "truth.csv")
    print(f"wrote {len(cohort)} patients to {out}")
    return EXIT_OK


def cmd_validate(args):
    cfg = _load_config(args)
    cohort, excluded = load_cohort(cfg.timeseries_csv, cfg.static_csv, cfg.n_hours)
    tally = Counter(r for _, r in excluded)
    print(f"retained {len(cohort)} patients")
    for reason in EXCLUSION_REASONS:
        print(f"excluded[{reason}] = {tally.get(reason, 0)}")
    violations = validate_cohort(cohort)
    for v in violations:
        print(f"violation: {v.patient_id}: {v.rule} {v.detail}".rstrip())
    return EXIT_FAIL if violations else EXIT_OK


def cmd_sweep(args):
    cfg = _load_config(args)
    out = Path(args.out or cfg.output_dir or "out")
    out.mkdir(parents=True, exist_ok=True)
    prep = prepare(cfg, args.workers)
    report = run_sweep(cfg, prep, args.workers)
    report.to_csv(out / "validity.csv")
    report.to_json(out / "validity.json")
    print(f"chosen: {report.chosen_algorithm} k={report.chosen_k}")
    return EXIT_OK


def cmd_run(args):
    cfg = _load_config(args)
    manifest = run_pipeline(cfg, args.out, args.workers)
    chosen = manifest["chosen"]
    print(f"chosen: {chosen['algorithm']} k={chosen['k']}")
    if "ari" in manifest:
        print("ARI vs truth: " + ", ".join(f"{k}={v:.4f}" for k, v in manifest["ari"].items()))
    print(f"numeric outputs sha256: {manifest['numeric_outputs_sha256']}")
    return EXIT_OK


def cmd_report(args):
    cfg = _load_config(args)
    model_path = Path(args.model)
    if not model_path.is_file():
        raise ConfigError(f"model file not found: {model_path}")
    model = load_model(model_path)
    paths = run_report(cfg, model, args.out, args.workers)
    for p in paths.values():
        print(p)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="vitalclust",
        description="Cluster ICU patients by early vital-sign trajectories.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="pipeline config (JSON)")
    common.add_argument("--workers", type=int, default=1,
                        help="worker threads; outputs do not depend on it")
    common.add_argument("--out", help="output directory (overrides config)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic cohort")
    p.add_argument("--spec", help="synthetic spec JSON (defaults: packaged archetypes)")
    p.add_argument("--seed", type=int, help="seed (overrides the spec's)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("validate", parents=[common], help="ingest and check the cohort")
    p.set_defaults(func=cmd_validate)
    p = sub.add_parser("sweep", parents=[common], help="model selection only")
    p.set_defaults(func=cmd_sweep)
    p = sub.add_parser("run", parents=[common], help="full pipeline")
    p.add_argument("--refit-validation", action="store_true",
                   help="re-cluster the validation era and align labels (default: frozen assignment)")
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("report", parents=[common], help="reports from a stored model")
    p.add_argument("--refit-validation", action="store_true",
                   help="re-cluster the validation era and align labels")
    p.add_argument("--model", required=True, help="model.json from a previous run")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    level = os.environ.get("VITALCLUST_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.workers < 1:
        parser.error("--workers must be >= 1")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"{parser.prog} {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except StageError as exc:
        print(f"{parser.prog} {args.command}: error in stage '{exc.stage}': {exc.cause}",
              file=sys.stderr)
        return EXIT_FAIL
    except (IngestError, ValueError) as exc:
        print(f"{parser.prog} {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
