"""Experiment-runner CLI.

Subcommands::

    snntrain train    --config cfg.yaml [--set k=v ...] [--out DIR]
    snntrain sweep    --config cfg.yaml [--set k=v ...] [--out DIR] [--jobs N]
    snntrain explore  --config cfg.yaml [--set k=v ...] [--out DIR] [--jobs N] [--only LABEL ...]
    snntrain schedule --kind KIND [--epochs N] [--param k=v ...] [--out FILE]
    snntrain report   --runs DIR [DIR ...] [--baseline LABEL] --out DIR [--config cfg.yaml]

Exit codes: 0 success, 2 config error, 3 runtime failure.  All artifacts
land under the resolved output directory (``--out``, else the config's
``output_dir``, else ``$SNNTRAIN_OUT`` or ``./runs`` plus a name derived
from the config file).  Reruns with an identical config and seed produce
byte-identical JSON/CSV outputs; the default fixed timing mode exists for
exactly that reason.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import yaml

from . import carbon as carbon_mod
from .config import ExperimentConfig, config_to_dict, load_config
from .errors import ConfigError, TrainingDiverged, ValidationError
from .schedule import (
    DecreasingStep,
    build_schedule,
    default_policy,
    policy_from_dict,
    policy_to_dict,
    sota_baseline_policy,
    table1_grid,
    trace_to_csv,
)
from .trainer import (
    ExploreResult,
    RunLog,
    explore_grid,
    report_csv,
    report_text,
    run_training,
    runlog_from_json,
    runlog_to_csv,
    runlog_to_json,
    speedup_report,
)

BASELINE_LABEL = "SOTA_DS"


def entrypoint() -> None:
    sys.exit(main())


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return 2
    except ValidationError as exc:
        for problem in exc.problems:
            print(f"invalid arguments: {problem}", file=sys.stderr)
        return 2


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="snntrain", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(required=True)

    def add_config_flags(p):
        p.add_argument("--config", required=True, help="experiment config YAML")
        p.add_argument(
            "--set",
            dest="sets",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="dotted-path config override (repeatable)",
        )
        p.add_argument("--out", help="output directory (overrides config output_dir)")

    p_train = sub.add_parser("train", help="run one training configuration")
    add_config_flags(p_train)
    p_train.set_defaults(func=cmd_train)

    p_sweep = sub.add_parser("sweep", help="rate-range sweep with the baseline step policy")
    add_config_flags(p_sweep)
    p_sweep.add_argument("--jobs", type=int, default=1, help="parallel runs")
    p_sweep.set_defaults(func=cmd_sweep)

    p_explore = sub.add_parser("explore", help="run the stock exploration grid")
    add_config_flags(p_explore)
    p_explore.add_argument("--jobs", type=int, default=1, help="parallel runs")
    p_explore.add_argument(
        "--only", action="append", default=[], metavar="LABEL", help="restrict to grid labels (repeatable)"
    )
    p_explore.set_defaults(func=cmd_explore)

    p_sched = sub.add_parser("schedule", help="dump a policy's epoch,lr trace as CSV")
    p_sched.add_argument("--kind", required=True, help="policy kind (e.g. one-cycle, warm-restarts)")
    p_sched.add_argument("--epochs", type=int, default=200)
    p_sched.add_argument(
        "--param",
        dest="params",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="policy field override (repeatable)",
    )
    p_sched.add_argument("--out", help="output CSV file (default: stdout)")
    p_sched.set_defaults(func=cmd_schedule)

    p_report = sub.add_parser("report", help="rebuild comparison tables from saved run logs")
    p_report.add_argument("--runs", nargs="+", required=True, help="directories containing runlog.json files")
    p_report.add_argument("--baseline", default=BASELINE_LABEL, help="label of the baseline run")
    p_report.add_argument("--out", required=True, help="output directory")
    p_report.add_argument("--config", help="config supplying the carbon profile (optional)")
    p_report.set_defaults(func=cmd_report)
    return parser


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------


def _resolve_out(args, cfg: ExperimentConfig | None, suffix: str) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    if cfg is not None and cfg.output_dir:
        return Path(cfg.output_dir)
    root = Path(os.environ.get("SNNTRAIN_OUT", "runs"))
    stem = Path(args.config).stem if getattr(args, "config", None) else "run"
    return root / f"{stem}_{suffix}"


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _write_config_echo(out_dir: Path, cfg: ExperimentConfig) -> None:
    _write(out_dir / "config.json", json.dumps(config_to_dict(cfg), indent=2) + "\n")


def _emission_rows(cfg: ExperimentConfig, entries: list[tuple[str, float]], baseline_hours: float | None):
    """(label, report, reduction-vs-baseline) rows for every configured mode."""
    modes = ("full", "gpu_only") if cfg.carbon.mode == "both" else (cfg.carbon.mode,)
    rows = []
    for mode in modes:
        profile = cfg.carbon.profile if mode == "full" else carbon_mod.gpu_only(cfg.carbon.profile)
        base = (
            carbon_mod.carbon_emission(profile, baseline_hours) if baseline_hours is not None else None
        )
        for label, hours in entries:
            report = carbon_mod.carbon_emission(profile, hours)
            reduction = None
            if base is not None and base.co2e_lbs > 0:
                reduction = carbon_mod.emission_reduction(report, base)
            tag = label if len(modes) == 1 else f"{label}[{mode}]"
            rows.append((tag, report, reduction))
    return rows


def _write_run_outputs(out_dir: Path, cfg: ExperimentConfig, log: RunLog) -> None:
    _write(out_dir / "runlog.json", runlog_to_json(log))
    _write(out_dir / "runlog.csv", runlog_to_csv(log))
    hours = log.total_wall_time_s / 3600.0
    rows = _emission_rows(cfg, [(log.config.label, hours)], baseline_hours=hours)
    _write(out_dir / "emissions.csv", carbon_mod.emission_csv(rows, seed=cfg.seed))


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.sets)
    out_dir = _resolve_out(args, cfg, "train")
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_config_echo(out_dir, cfg)
    train_samples, test_samples = cfg.load_dataset()
    spec = cfg.build_network_spec(cfg.dataset.height, cfg.dataset.width)
    try:
        log = run_training(
            cfg.train,
            spec,
            train_samples,
            test_samples,
            frame_mode=cfg.network.frame_mode,
            epoch_seconds=cfg.timing.epoch_seconds,
        )
    except TrainingDiverged as exc:
        if exc.runlog is not None:
            _write(out_dir / "runlog.json", runlog_to_json(exc.runlog))
            _write(out_dir / "runlog.csv", runlog_to_csv(exc.runlog))
        print(f"training diverged: {exc}", file=sys.stderr)
        return 3
    _write_run_outputs(out_dir, cfg, log)
    stable = log.first_stable_epoch if log.first_stable_epoch is not None else "never"
    final = log.records[-1].test_accuracy
    print(f"{log.config.label}: {log.epochs_run} epochs, test acc {final:.1f}%, first stable epoch {stable}")
    return 0


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------


def _lr_label(value: float) -> str:
    return f"lr_{value:g}"


def sweep_summary_rows(results: list[tuple[float, RunLog]], margin_pct: float):
    """Per-rate summary plus an effectiveness flag.

    A rate is effective when its final test accuracy trails the best final
    accuracy in the sweep by at most ``margin_pct`` points.
    """
    finals = {lr: log.records[-1].test_accuracy for lr, log in results}
    best = max(finals.values())
    rows = []
    for lr, log in results:
        rows.append(
            {
                "lr": lr,
                "final_test_acc": finals[lr],
                "best_test_acc": max(r.test_accuracy for r in log.records),
                "first_stable_epoch": log.first_stable_epoch,
                "effective": finals[lr] >= best - margin_pct,
            }
        )
    return rows


def cmd_sweep(args) -> int:
    cfg = load_config(args.config, args.sets)
    out_dir = _resolve_out(args, cfg, "sweep")
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_config_echo(out_dir, cfg)
    train_samples, test_samples = cfg.load_dataset()
    spec = cfg.build_network_spec(cfg.dataset.height, cfg.dataset.width)
    base_policy = cfg.train.policy
    if isinstance(base_policy, DecreasingStep):
        r_f, r_int = base_policy.r_f, base_policy.r_int
    else:
        r_f, r_int = 0.5, 20
    from .schedule import GridEntry  # sweep entries reuse the grid runner

    entries = [
        GridEntry(
            label=_lr_label(v),
            policy=DecreasingStep(init_lr=v, epochs=cfg.train.epochs, r_f=r_f, r_int=r_int),
            batch_size=cfg.train.batch_size,
            v_th=cfg.train.v_th,
        )
        for v in cfg.sweep.values
    ]
    base_cfg = replace(cfg.train, early_stop=False)  # full curves for range inspection
    results = explore_grid(
        entries,
        base_cfg,
        spec,
        train_samples,
        test_samples,
        frame_mode=cfg.network.frame_mode,
        epoch_seconds=cfg.timing.epoch_seconds,
        jobs=args.jobs,
    )
    failed = [r for r in results if r.error is not None]
    ok = [(lr, r.runlog) for lr, r in zip(cfg.sweep.values, results) if r.runlog is not None]
    for lr, result in zip(cfg.sweep.values, results):
        if result.runlog is not None:
            _write_run_outputs(out_dir / _lr_label(lr), cfg, result.runlog)
        else:
            print(f"{_lr_label(lr)} failed: {result.error}", file=sys.stderr)
    if ok:
        rows = sweep_summary_rows(ok, cfg.sweep.margin_pct)
        lines = [f"# seed={cfg.seed}", "lr,final_test_acc,best_test_acc,first_stable_epoch,effective"]
        for row in rows:
            stable = row["first_stable_epoch"] if row["first_stable_epoch"] is not None else ""
            lines.append(
                f"{row['lr']!r},{row['final_test_acc']!r},{row['best_test_acc']!r},{stable},{int(row['effective'])}"
            )
        _write(out_dir / "sweep_summary.csv", "\n".join(lines) + "\n")
        effective = [row["lr"] for row in rows if row["effective"]]
        if effective:
            print(f"effective rate range: {min(effective):g} to {max(effective):g}")
    return 3 if failed else 0


# ---------------------------------------------------------------------------
# explore
# ---------------------------------------------------------------------------


def cmd_explore(args) -> int:
    cfg = load_config(args.config, args.sets)
    out_dir = _resolve_out(args, cfg, "explore")
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_config_echo(out_dir, cfg)
    train_samples, test_samples = cfg.load_dataset()
    spec = cfg.build_network_spec(cfg.dataset.height, cfg.dataset.width)

    entries = table1_grid(epochs=cfg.train.epochs)
    if args.only:
        known = {e.label for e in entries}
        unknown = [label for label in args.only if label not in known]
        if unknown:
            raise ConfigError([f"--only label {u!r} not in the grid ({sorted(known)})" for u in unknown])
        entries = [e for e in entries if e.label in args.only]

    baseline_cfg = replace(
        cfg.train,
        policy=sota_baseline_policy(epochs=cfg.train.epochs, init_lr=1e-3),
        batch_size=40,
        v_th=0.4,
        early_stop=False,
        label=BASELINE_LABEL,
    )
    baseline = run_training(
        baseline_cfg,
        spec,
        train_samples,
        test_samples,
        frame_mode=cfg.network.frame_mode,
        epoch_seconds=cfg.timing.epoch_seconds,
    )
    _write_run_outputs(out_dir / BASELINE_LABEL, cfg, baseline)

    results = explore_grid(
        entries,
        cfg.train,
        spec,
        train_samples,
        test_samples,
        frame_mode=cfg.network.frame_mode,
        epoch_seconds=cfg.timing.epoch_seconds,
        jobs=args.jobs,
    )
    rows = []
    failed = []
    for result in results:
        if result.runlog is None:
            failed.append(result)
            print(f"{result.label} failed: {result.error}", file=sys.stderr)
            continue
        _write_run_outputs(out_dir / result.label, cfg, result.runlog)
        rows.append(speedup_report(result.runlog, baseline))
    _write(out_dir / "report.csv", report_csv(rows, seed=cfg.seed))
    _write(out_dir / "report.txt", report_text(rows, baseline_label=BASELINE_LABEL))
    _write(out_dir / "emissions.csv", _explore_emissions(cfg, baseline, results))
    print(report_text(rows, baseline_label=BASELINE_LABEL))
    return 3 if failed else 0


def _explore_emissions(cfg: ExperimentConfig, baseline: RunLog, results: list[ExploreResult]) -> str:
    entries = [(f"{BASELINE_LABEL}_full", baseline.total_wall_time_s / 3600.0)]
    if baseline.first_stable_epoch is not None:
        fast = sum(r.wall_time_s for r in baseline.records[: baseline.first_stable_epoch])
        entries.append((f"{BASELINE_LABEL}_fast", fast / 3600.0))
    entries.extend(
        (r.label, r.runlog.total_wall_time_s / 3600.0) for r in results if r.runlog is not None
    )
    rows = _emission_rows(cfg, entries, baseline_hours=baseline.total_wall_time_s / 3600.0)
    return carbon_mod.emission_csv(rows, seed=cfg.seed)


# ---------------------------------------------------------------------------
# schedule
# ---------------------------------------------------------------------------


def cmd_schedule(args) -> int:
    base = default_policy(args.kind, epochs=args.epochs)
    data = policy_to_dict(base)
    data["epochs"] = args.epochs
    for item in args.params:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ValidationError([f"--param {item!r} must look like key=value"])
        try:
            data[key] = yaml.safe_load(raw)
        except yaml.YAMLError:
            data[key] = raw
    policy = policy_from_dict(data)
    csv_text = trace_to_csv(build_schedule(policy))
    if args.out:
        _write(Path(args.out), csv_text)
    else:
        sys.stdout.write(csv_text)
    return 0


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


def cmd_report(args) -> int:
    logs: list[RunLog] = []
    for root in args.runs:
        for path in sorted(Path(root).rglob("runlog.json")):
            logs.append(runlog_from_json(path.read_text()))
    if not logs:
        raise ConfigError([f"no runlog.json files found under {args.runs}"])
    by_label = {log.config.label: log for log in logs}
    if args.baseline not in by_label:
        raise ConfigError(
            [f"baseline label {args.baseline!r} not among runs ({sorted(by_label)})"]
        )
    baseline = by_label[args.baseline]
    rows = [
        speedup_report(log, baseline) for log in logs if log.config.label != args.baseline
    ]
    out_dir = Path(args.out)
    seed = baseline.config.seed
    _write(out_dir / "report.csv", report_csv(rows, seed=seed))
    _write(out_dir / "report.txt", report_text(rows, baseline_label=args.baseline))
    if args.config:
        cfg = load_config(args.config)
        results = [
            ExploreResult(log.config.label, log, None)
            for log in logs
            if log.config.label != args.baseline
        ]
        _write(out_dir / "emissions.csv", _explore_emissions(cfg, baseline, results))
    print(report_text(rows, baseline_label=args.baseline))
    return 0


if __name__ == "__main__":
    entrypoint()
