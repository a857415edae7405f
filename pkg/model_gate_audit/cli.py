import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from model_gate_audit.cohort import (
    Cohort,
    cohort_config_from_ini,
    default_cohort_config,
    generate_synthetic,
    load_cohort_csv,
    read_schema,
    stratified_split,
    write_cohort_csv,
)
from model_gate_audit.errors import AuditError, ConfigError
from model_gate_audit.explain import linear_attributions, load_attributions, write_attributions
from model_gate_audit.perturb import PerturbationBattery, apply, default_battery, load_battery
from model_gate_audit.report import (
    build_document,
    document_json_schema,
    dumps,
    read_document,
    render_table,
    sweep_from_document,
    write_document,
)
from model_gate_audit.runner import EvaluationPlan, evaluate_all, pss_monotonicity_check
from model_gate_audit.scorers import (
    LogisticBaseline,
    LogisticFitConfig,
    fit_logistic,
    load_score_set,
    write_score_set,
)
from model_gate_audit.stats import BCA, PERCENTILE, BootstrapConfig, empirical_coverage

EXIT_USAGE = 2
DEFAULT_RESCALE_COLUMN = "age"
DEFAULT_TEST_FRACTION = 0.2
DEFAULT_SIGMAS = (0.0, 0.025, 0.05, 0.10)


@dataclass
class AppSettings:
    seed: int
    workers: int
    replicates: int


def _int_env(name: str, default: int, minimum: int) -> int:
    raw = (os.environ.get(name) or "").strip()
    if not raw:
        return default
    try:
        value = int(raw)
    except ValueError as exc:
        raise SystemExit(f"{name} must be an integer") from exc
    if value < minimum:
        raise SystemExit(f"{name} must be at least {minimum}")
    return value


def read_settings() -> AppSettings:
    return AppSettings(
        seed=_int_env("MODEL_GATE_AUDIT_SEED", 42, 0),
        workers=_int_env("MODEL_GATE_AUDIT_WORKERS", 1, 1),
        replicates=_int_env("MODEL_GATE_AUDIT_BOOT", 1000, 1),
    )


def setup_logging() -> logging.Logger:
    level_name = os.environ.get("LOG_LEVEL", "INFO").upper()
    level = getattr(logging, level_name, logging.INFO)
    logging.basicConfig(
        level=level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
        stream=sys.stderr,
    )
    return logging.getLogger("model_gate_audit")


def _json_print(payload: object) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True))


def parse_threshold_overrides(entries: Sequence[str]) -> Dict[str, float]:
    overrides: Dict[str, float] = {}
    for entry in entries:
        criterion_id, sep, raw = entry.partition("=")
        if not sep or not criterion_id.strip():
            raise ConfigError(f"threshold override {entry!r} is not ID=VALUE")
        try:
            overrides[criterion_id.strip()] = float(raw)
        except ValueError as exc:
            raise ConfigError(f"threshold override {entry!r} has a non-numeric value") from exc
    return overrides


def _thresholds(raw: Sequence[str]) -> List[float]:
    values: List[float] = []
    for part in raw:
        for item in part.split(","):
            item = item.strip()
            if not item:
                continue
            try:
                values.append(float(item))
            except ValueError as exc:
                raise ConfigError(f"threshold {item!r} is not a number") from exc
    return values


def _add_bootstrap_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--boot", type=int, default=None, help="Bootstrap replicates B (default: MODEL_GATE_AUDIT_BOOT or 1000).")
    parser.add_argument("--seed", type=int, default=None, help="Master seed (default: MODEL_GATE_AUDIT_SEED or 42).")
    parser.add_argument("--method", choices=(BCA, PERCENTILE), default=BCA)


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(
        prog="model-gate-audit",
        description="Pre-deployment audit of binary classifiers with interval-backed verdicts.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    generate = sub.add_parser("generate-cohort", help="Write a synthetic cohort CSV and its schema sidecar.")
    generate.add_argument("--n", type=int, default=10000)
    generate.add_argument("--seed", type=int, default=None)
    generate.add_argument("--out", required=True, help="Output CSV path.")
    generate.add_argument("--config", default=None, help="Generator INI file (default: bundled marginals).")

    evaluate = sub.add_parser("evaluate", help="Audit one model on one cohort.")
    evaluate.add_argument("--cohort", required=True)
    evaluate.add_argument("--schema", default=None, help="Schema JSON (default: <cohort>.schema.json).")
    mode = evaluate.add_mutually_exclusive_group(required=True)
    mode.add_argument("--model", choices=("builtin",), help="Fit the logistic baseline on a stratified split.")
    mode.add_argument("--scores", help="Precomputed score CSV with one score@<id> column per perturbation.")
    evaluate.add_argument("--battery", default=None, help="Battery INI file (default: built-in battery).")
    evaluate.add_argument("--rescale-column", default=DEFAULT_RESCALE_COLUMN)
    evaluate.add_argument("--tau0", type=float, default=0.5)
    evaluate.add_argument("--delta", type=float, default=0.05)
    _add_bootstrap_args(evaluate)
    evaluate.add_argument("--workers", type=int, default=None)
    evaluate.add_argument("--cluster-by", default=None, help="Subgroup attribute whose groups are resampled whole.")
    evaluate.add_argument("--threshold", action="append", default=[], metavar="ID=VALUE")
    evaluate.add_argument("--per-attribute", action="store_true", help="Test I1/I2 once per subgroup attribute.")
    evaluate.add_argument("--test-fraction", type=float, default=DEFAULT_TEST_FRACTION)
    evaluate.add_argument("--attributions", default=None, help="Attribution CSV for D2 in score-set mode.")
    evaluate.add_argument("--latency-ms", type=float, default=None, help="Measured cohort latency for D1 in score-set mode.")
    evaluate.add_argument("--model-descriptor", default=None, help="Model name recorded in score-set mode.")
    evaluate.add_argument("--json", dest="json_out", default=None, help="Write the scorecard JSON here.")
    evaluate.add_argument("--table", action="store_true", help="Print the text table to stdout.")
    evaluate.add_argument("--export-cohort", default=None)
    evaluate.add_argument("--export-scores", default=None)
    evaluate.add_argument("--export-attributions", default=None)
    evaluate.add_argument("--export-weights", default=None)

    sweep = sub.add_parser("sweep", help="Re-classify an interval-backed criterion over several thresholds.")
    sweep.add_argument("--scorecard", required=True)
    sweep.add_argument("--criterion", required=True)
    sweep.add_argument("--thresholds", nargs="+", required=True)

    coverage = sub.add_parser("coverage", help="Empirical coverage of the interval on a normal-mean harness.")
    coverage.add_argument("--trials", type=int, default=1000)
    coverage.add_argument("--sample-size", type=int, default=200)
    coverage.add_argument("--alpha", type=float, default=0.05)
    _add_bootstrap_args(coverage)

    monotonicity = sub.add_parser("monotonicity", help="PSS of the built-in model over increasing noise.")
    monotonicity.add_argument("--cohort", required=True)
    monotonicity.add_argument("--schema", default=None)
    monotonicity.add_argument("--sigmas", nargs="+", default=[str(s) for s in DEFAULT_SIGMAS])
    monotonicity.add_argument("--seed", type=int, default=None)
    monotonicity.add_argument("--tau0", type=float, default=0.5)
    monotonicity.add_argument("--test-fraction", type=float, default=DEFAULT_TEST_FRACTION)

    sub.add_parser("schema", help="Print the scorecard JSON Schema.")
    return parser.parse_args(argv)


def _schema_path(cohort_path: str, schema_path: Optional[str]) -> Path:
    if schema_path:
        return Path(schema_path)
    path = Path(cohort_path)
    return path.with_name(path.stem + ".schema.json")


def _fit_builtin(cohort: Cohort, test_fraction: float, seed: int, logger: logging.Logger):
    train, test = stratified_split(cohort, test_fraction, seed)
    model = fit_logistic(train, LogisticFitConfig(seed=seed))
    logger.info("Built-in model ready: %s", model.descriptor)
    return model, test


def _battery(args: argparse.Namespace, cohort: Cohort, seed: int) -> PerturbationBattery:
    if args.battery:
        return load_battery(args.battery, master_seed=seed)
    return default_battery(cohort.features.continuous_columns(), args.rescale_column, master_seed=seed)


def _export(args: argparse.Namespace, model: LogisticBaseline, cohort: Cohort, battery: PerturbationBattery) -> None:
    X = cohort.features
    if args.export_cohort:
        write_cohort_csv(cohort, args.export_cohort)
    if args.export_scores:
        perturbed = {spec.id: model.score(apply(spec, X, battery.master_seed)) for spec in battery.specs}
        write_score_set(args.export_scores, cohort.row_ids, model.score(X), perturbed)
    if args.export_attributions:
        write_attributions(args.export_attributions, linear_attributions(model, X), cohort.row_ids)
    if args.export_weights:
        model.dump(args.export_weights)


def cmd_generate(args: argparse.Namespace, settings: AppSettings, logger: logging.Logger) -> int:
    seed = settings.seed if args.seed is None else args.seed
    if args.config:
        config = cohort_config_from_ini(Path(args.config).read_text(encoding="utf-8"), n=args.n, seed=seed)
    else:
        config = default_cohort_config(n=args.n, seed=seed)
    cohort = generate_synthetic(config)
    sidecar = write_cohort_csv(cohort, args.out)
    logger.info("Cohort written: path=%s schema=%s", args.out, sidecar)
    _json_print({"out": str(args.out), "schema": str(sidecar), "n": cohort.n, "prevalence": cohort.prevalence})
    return 0


def cmd_evaluate(args: argparse.Namespace, settings: AppSettings, logger: logging.Logger) -> int:
    seed = settings.seed if args.seed is None else args.seed
    loaded = load_cohort_csv(args.cohort, read_schema(_schema_path(args.cohort, args.schema)))
    bootstrap = BootstrapConfig(
        replicates=settings.replicates if args.boot is None else args.boot,
        seed=seed,
        alpha=0.05,
        method=args.method,
        cluster_by=args.cluster_by,
        workers=settings.workers if args.workers is None else args.workers,
    )
    exporting = args.export_cohort or args.export_scores or args.export_attributions or args.export_weights

    model: Optional[LogisticBaseline] = None
    if args.model == "builtin":
        if args.attributions or args.latency_ms is not None:
            raise ConfigError("--attributions and --latency-ms apply to score-set mode only")
        model, cohort = _fit_builtin(loaded.cohort, args.test_fraction, seed, logger)
        score_set = None
        attributions = None
    else:
        if exporting:
            raise ConfigError("--export-* options need --model builtin")
        cohort = loaded.cohort
        score_set = load_score_set(args.scores, cohort)
        attributions = load_attributions(args.attributions, cohort) if args.attributions else None

    battery = _battery(args, cohort, seed)
    plan = EvaluationPlan(
        cohort=cohort,
        battery=battery,
        scorer=model,
        score_set=score_set,
        tau0=args.tau0,
        delta=args.delta,
        bootstrap=bootstrap,
        threshold_overrides=parse_threshold_overrides(args.threshold),
        per_attribute_inclusivity=args.per_attribute,
        latency_ms=args.latency_ms,
        attributions=attributions,
        model_descriptor=args.model_descriptor,
    )
    result = evaluate_all(plan)
    document = build_document(result, loaded.content_sha256)
    if model is not None:
        _export(args, model, cohort, battery)

    if args.json_out:
        write_document(document, args.json_out)
        logger.info("Scorecard written: path=%s", args.json_out)
    if args.table:
        sys.stdout.write(render_table(document))
    elif not args.json_out:
        sys.stdout.write(dumps(document))
    logger.info("Gate: passed=%s exit=%s", document.gate, document.exit_code)
    return document.exit_code


def cmd_sweep(args: argparse.Namespace, settings: AppSettings, logger: logging.Logger) -> int:
    document = read_document(args.scorecard)
    thresholds = _thresholds(args.thresholds)
    for threshold, verdict in sweep_from_document(document, args.criterion, thresholds):
        print(f"{args.criterion}\t{threshold:g}\t{verdict.value}")
    return 0


def cmd_coverage(args: argparse.Namespace, settings: AppSettings, logger: logging.Logger) -> int:
    config = BootstrapConfig(
        replicates=settings.replicates if args.boot is None else args.boot,
        seed=settings.seed if args.seed is None else args.seed,
        alpha=args.alpha,
        method=args.method,
    )
    coverage = empirical_coverage(
        lambda sample: sample.mean(axis=-1),
        0.0,
        args.trials,
        config,
        sample_size=args.sample_size,
    )
    _json_print(
        {
            "trials": args.trials,
            "sample_size": args.sample_size,
            "replicates": config.replicates,
            "method": config.method,
            "seed": config.seed,
            "nominal": 1.0 - config.alpha,
            "coverage": coverage,
        }
    )
    return 0


def cmd_monotonicity(args: argparse.Namespace, settings: AppSettings, logger: logging.Logger) -> int:
    seed = settings.seed if args.seed is None else args.seed
    loaded = load_cohort_csv(args.cohort, read_schema(_schema_path(args.cohort, args.schema)))
    model, cohort = _fit_builtin(loaded.cohort, args.test_fraction, seed, logger)
    plan = EvaluationPlan(
        cohort=cohort,
        battery=default_battery(cohort.features.continuous_columns(), DEFAULT_RESCALE_COLUMN, master_seed=seed),
        scorer=model,
        tau0=args.tau0,
    )
    report = pss_monotonicity_check(plan, _thresholds(args.sigmas))
    _json_print(
        {
            "rows": [{"sigma": sigma, "pss": value} for sigma, value in report.rows],
            "monotone": report.monotone,
            "tolerance": report.tolerance,
        }
    )
    return 0 if report.monotone else 1


def cmd_schema(args: argparse.Namespace, settings: AppSettings, logger: logging.Logger) -> int:
    _json_print(document_json_schema())
    return 0


COMMANDS = {
    "generate-cohort": cmd_generate,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "coverage": cmd_coverage,
    "monotonicity": cmd_monotonicity,
    "schema": cmd_schema,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    logger = setup_logging()
    args = parse_args(argv)
    settings = read_settings()
    try:
        return COMMANDS[args.command](args, settings, logger)
    except AuditError as exc:
        logger.error("%s failed: %s", args.command, exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        logger.error("%s failed: %s", args.command, exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
