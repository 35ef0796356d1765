"""Training orchestration: epoch loop, stability detection, reports.

A run walks a schedule trace epoch by epoch (seeded shuffle, mini-batch
forward/backward/SGD, test evaluation) and watches the accuracy curve for
stability: the run is considered stable once the population standard
deviation of the last ``window`` epochs' accuracies drops to ``acc_th``
percentage points or below.  With early stopping enabled the run halts at
the first stable epoch; either way the log records where stability first
held and the accuracy there.

Comparison reports put a candidate run against a baseline run, expressing
the candidate's epochs-to-stability as a speedup over both the baseline's
full length and the baseline's own stability point.
"""

from __future__ import annotations

import csv
import io
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import partial
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import TrainingDiverged, ValidationError
from .events import EventSample, accumulate_frames
from .schedule import (
    GridEntry,
    PolicyConfig,
    build_schedule,
    policy_from_dict,
    policy_to_dict,
    validate_policy,
)
from .snn import (
    NetworkSpec,
    backward_stbp,
    forward_batch,
    init_state,
    update_weights,
    weights_finite,
)

__all__ = [
    "ComparisonRow",
    "EpochRecord",
    "ExploreResult",
    "RunLog",
    "StabilityCriterion",
    "TrainConfig",
    "evaluate",
    "explore_grid",
    "first_stable_epoch",
    "report_csv",
    "report_text",
    "run_training",
    "runlog_from_json",
    "runlog_to_csv",
    "runlog_to_json",
    "speedup_report",
    "stability_check",
]

_EVAL_CHUNK = 256


@dataclass(frozen=True)
class StabilityCriterion:
    """Accuracy-curve stability: population std of the last ``window``
    epochs' accuracies at most ``acc_th`` percentage points."""

    window: int = 10
    acc_th: float = 1.0


@dataclass(frozen=True)
class TrainConfig:
    policy: PolicyConfig
    epochs: int = 200
    batch_size: int = 40
    v_th: float = 0.4
    seed: int = 0
    stability: StabilityCriterion = field(default_factory=StabilityCriterion)
    early_stop: bool = True
    stability_metric: str = "test"  # which accuracy feeds the detector
    label: str = "run"


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_accuracy: float
    test_accuracy: float
    wall_time_s: float
    stable_so_far: bool


@dataclass
class RunLog:
    config: TrainConfig
    records: list[EpochRecord]
    first_stable_epoch: Optional[int]
    accuracy_at_stability: Optional[float]
    total_wall_time_s: float
    diverged: bool = False
    diagnostic: Optional[str] = None

    @property
    def epochs_run(self) -> int:
        return len(self.records)


def validate_train_config(cfg: TrainConfig) -> list[str]:
    problems = [f"policy.{p}" for p in validate_policy(cfg.policy)]
    if cfg.batch_size < 1:
        problems.append(f"batch_size must be >= 1, got {cfg.batch_size}")
    if cfg.stability.window < 2:
        problems.append(f"stability.window must be >= 2, got {cfg.stability.window}")
    if cfg.stability.acc_th <= 0:
        problems.append(f"stability.acc_th must be positive, got {cfg.stability.acc_th}")
    if cfg.epochs < cfg.stability.window:
        problems.append(f"epochs ({cfg.epochs}) must be >= stability.window ({cfg.stability.window})")
    if not isinstance(cfg.seed, int) or cfg.seed < 0:
        problems.append(f"seed must be a non-negative integer, got {cfg.seed!r}")
    if cfg.stability_metric not in ("test", "train"):
        problems.append(f"stability_metric must be 'test' or 'train', got {cfg.stability_metric!r}")
    if not problems and cfg.policy.epochs != cfg.epochs:
        problems.append(f"policy.epochs ({cfg.policy.epochs}) must equal epochs ({cfg.epochs})")
    return problems


# ---------------------------------------------------------------------------
# Stability detection
# ---------------------------------------------------------------------------


def stability_check(accuracies: Sequence[float], crit: StabilityCriterion) -> bool:
    """True once at least ``window`` accuracies exist and the population
    std of the last ``window`` of them is at most ``acc_th``."""
    if len(accuracies) < crit.window:
        return False
    tail = np.asarray(accuracies[-crit.window :], dtype=np.float64)
    return float(np.std(tail)) <= crit.acc_th


def first_stable_epoch(
    records: Sequence[EpochRecord],
    crit: StabilityCriterion | None = None,
    metric: str = "test",
) -> Optional[int]:
    """Smallest epoch whose trailing window satisfies the criterion."""
    crit = crit or StabilityCriterion()
    accs = [r.test_accuracy if metric == "test" else r.train_accuracy for r in records]
    for i in range(crit.window, len(accs) + 1):
        if stability_check(accs[:i], crit):
            return records[i - 1].epoch
    return None


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


def evaluate(spec: NetworkSpec, state, frames: np.ndarray, labels: np.ndarray) -> float:
    """Test accuracy in percent; pure read of the weights (argmax over
    spike counts, ties to the lowest class index)."""
    correct = 0
    for start in range(0, len(frames), _EVAL_CHUNK):
        counts, _ = forward_batch(spec, state, frames[start : start + _EVAL_CHUNK], record_cache=False)
        correct += int((counts.argmax(axis=1) == labels[start : start + _EVAL_CHUNK]).sum())
    return 100.0 * correct / len(frames)


def _stack_frames(samples: list[EventSample], timesteps: int, mode: str):
    frames = np.stack([accumulate_frames(s, timesteps, mode) for s in samples])
    labels = np.array([s.label for s in samples], dtype=np.int64)
    return frames, labels


def run_training(
    cfg: TrainConfig,
    spec: NetworkSpec,
    train_samples: list[EventSample],
    test_samples: list[EventSample],
    frame_mode: str = "count",
    epoch_seconds: float | None = None,
) -> RunLog:
    """Full training protocol for one configuration.

    Each epoch takes its rate from the schedule trace, shuffles with an
    rng derived from (seed, epoch), applies mini-batch SGD, and evaluates
    test accuracy.  ``epoch_seconds`` substitutes a fixed per-epoch wall
    time for measured time so logs are byte-reproducible.

    Raises :class:`TrainingDiverged` (carrying the partial log) if the
    weights go non-finite.
    """
    problems = validate_train_config(cfg)
    if problems:
        raise ValidationError(problems)
    if not train_samples or not test_samples:
        raise ValueError("train and test sets must be nonempty")
    if len({s.label for s in train_samples}) < 2:
        raise ValueError("training set must contain both classes")

    trace = build_schedule(cfg.policy)
    spec = replace(spec, lif=replace(spec.lif, v_th=cfg.v_th))
    state = init_state(spec, cfg.seed)
    train_frames, train_labels = _stack_frames(train_samples, spec.timesteps, frame_mode)
    test_frames, test_labels = _stack_frames(test_samples, spec.timesteps, frame_mode)

    n_train = len(train_samples)
    records: list[EpochRecord] = []
    accs: list[float] = []
    for ep in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        lr = trace.lr_at(ep)
        rng = np.random.default_rng([cfg.seed, ep])
        perm = rng.permutation(n_train)
        correct = 0
        for start in range(0, n_train, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            counts, cache = forward_batch(spec, state, train_frames[idx])
            grads = backward_stbp(spec, state, cache, train_labels[idx])
            update_weights(state, grads, lr, len(idx))
            correct += int((counts.argmax(axis=1) == train_labels[idx]).sum())
        if not weights_finite(state):
            diagnostic = f"non-finite weights after epoch {ep} (lr={lr:g})"
            partial = RunLog(
                config=cfg,
                records=records,
                first_stable_epoch=None,
                accuracy_at_stability=None,
                total_wall_time_s=sum(r.wall_time_s for r in records),
                diverged=True,
                diagnostic=diagnostic,
            )
            raise TrainingDiverged(diagnostic, partial)
        train_acc = 100.0 * correct / n_train
        test_acc = evaluate(spec, state, test_frames, test_labels)
        wall = epoch_seconds if epoch_seconds is not None else time.perf_counter() - t0
        accs.append(test_acc if cfg.stability_metric == "test" else train_acc)
        stable = stability_check(accs, cfg.stability)
        records.append(EpochRecord(ep, lr, train_acc, test_acc, wall, stable))
        if cfg.early_stop and stable:
            break

    stable_ep = first_stable_epoch(records, cfg.stability, cfg.stability_metric)
    acc_at = None
    if stable_ep is not None:
        rec = records[stable_ep - 1]
        acc_at = rec.test_accuracy if cfg.stability_metric == "test" else rec.train_accuracy
    return RunLog(
        config=cfg,
        records=records,
        first_stable_epoch=stable_ep,
        accuracy_at_stability=acc_at,
        total_wall_time_s=sum(r.wall_time_s for r in records),
    )


# ---------------------------------------------------------------------------
# Comparison reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ComparisonRow:
    """One report row: a candidate's stability point and its speedups
    relative to a baseline run.  ``None`` speedups mark an unstable run."""

    label: str
    first_stable_epoch: Optional[int]
    accuracy_at_stability: Optional[float]
    speedup_vs_full: Optional[float]
    speedup_vs_stable: Optional[float]


def speedup_report(candidate: RunLog, baseline: RunLog) -> ComparisonRow:
    """Candidate epochs-to-stability versus the baseline's full length and
    versus the baseline's own stability point."""
    if not candidate.records or not baseline.records:
        raise ValueError("both run logs must be nonempty")
    stable = candidate.first_stable_epoch
    if stable is None:
        return ComparisonRow(candidate.config.label, None, None, None, None)
    vs_full = baseline.epochs_run / stable
    vs_stable = baseline.first_stable_epoch / stable if baseline.first_stable_epoch else None
    return ComparisonRow(
        label=candidate.config.label,
        first_stable_epoch=stable,
        accuracy_at_stability=candidate.accuracy_at_stability,
        speedup_vs_full=vs_full,
        speedup_vs_stable=vs_stable,
    )


def _fmt_speedup(x: Optional[float]) -> str:
    return f"{x:.1f}x" if x is not None else ""


def report_csv(rows: Sequence[ComparisonRow], seed: int | None = None) -> str:
    out = io.StringIO()
    if seed is not None:
        out.write(f"# seed={seed}\n")
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(
        [
            "label",
            "first_stable_epoch",
            "accuracy_at_stability_pct",
            "speedup_vs_baseline_full",
            "speedup_vs_baseline_stable",
        ]
    )
    for r in rows:
        writer.writerow(
            [
                r.label,
                r.first_stable_epoch if r.first_stable_epoch is not None else "unstable",
                f"{r.accuracy_at_stability:.2f}" if r.accuracy_at_stability is not None else "",
                _fmt_speedup(r.speedup_vs_full),
                _fmt_speedup(r.speedup_vs_stable),
            ]
        )
    return out.getvalue()


def report_text(rows: Sequence[ComparisonRow], baseline_label: str = "baseline") -> str:
    """Aligned plain-text table mirroring the comparison-table layout."""
    headers = [
        "",
        "Reaching first stable accuracy [epochs]",
        "Accuracy at first stable accuracy",
        f"Speedup vs. {baseline_label} full training",
        f"Speedup vs. {baseline_label} first stable accuracy",
    ]
    body = [
        [
            r.label,
            str(r.first_stable_epoch) if r.first_stable_epoch is not None else "unstable",
            f"{r.accuracy_at_stability:.1f}%" if r.accuracy_at_stability is not None else "-",
            _fmt_speedup(r.speedup_vs_full) or "-",
            _fmt_speedup(r.speedup_vs_stable) or "-",
        ]
        for r in rows
    ]
    widths = [max(len(h), *(len(row[i]) for row in body)) if body else len(h) for i, h in enumerate(headers)]
    lines = [" | ".join(h.ljust(w) for h, w in zip(headers, widths)).rstrip()]
    lines.append("-+-".join("-" * w for w in widths))
    lines.extend(" | ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in body)
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Grid exploration
# ---------------------------------------------------------------------------


@dataclass
class ExploreResult:
    label: str
    runlog: Optional[RunLog]
    error: Optional[str]


def _run_grid_entry(
    entry: GridEntry,
    base_cfg: TrainConfig,
    spec: NetworkSpec,
    train_samples,
    test_samples,
    frame_mode: str,
    epoch_seconds: float | None,
) -> ExploreResult:
    cfg = replace(
        base_cfg,
        policy=entry.policy,
        batch_size=entry.batch_size,
        v_th=entry.v_th,
        label=entry.label,
    )
    try:
        log = run_training(cfg, spec, train_samples, test_samples, frame_mode, epoch_seconds)
        return ExploreResult(entry.label, log, None)
    except Exception as exc:  # per-entry isolation: errors must not kill the grid
        return ExploreResult(entry.label, None, f"{type(exc).__name__}: {exc}")


def explore_grid(
    entries: Sequence[GridEntry],
    base_cfg: TrainConfig,
    spec: NetworkSpec,
    train_samples: list[EventSample],
    test_samples: list[EventSample],
    frame_mode: str = "count",
    epoch_seconds: float | None = None,
    jobs: int = 1,
) -> list[ExploreResult]:
    """One deterministic run per grid entry over a shared dataset/seed.

    Entries are independent; with ``jobs > 1`` they run in a process pool.
    Results keep grid order and per-entry failures are reported in place.
    """
    worker = partial(
        _run_grid_entry,
        base_cfg=base_cfg,
        spec=spec,
        train_samples=train_samples,
        test_samples=test_samples,
        frame_mode=frame_mode,
        epoch_seconds=epoch_seconds,
    )
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(worker, entries))
    return [worker(e) for e in entries]


# ---------------------------------------------------------------------------
# Run-log serialization
# ---------------------------------------------------------------------------


def train_config_to_dict(cfg: TrainConfig) -> dict:
    return {
        "policy": policy_to_dict(cfg.policy),
        "epochs": cfg.epochs,
        "batch_size": cfg.batch_size,
        "v_th": cfg.v_th,
        "seed": cfg.seed,
        "stability": {"window": cfg.stability.window, "acc_th": cfg.stability.acc_th},
        "early_stop": cfg.early_stop,
        "stability_metric": cfg.stability_metric,
        "label": cfg.label,
    }


def train_config_from_dict(data: dict) -> TrainConfig:
    return TrainConfig(
        policy=policy_from_dict(data["policy"]),
        epochs=data["epochs"],
        batch_size=data["batch_size"],
        v_th=data["v_th"],
        seed=data["seed"],
        stability=StabilityCriterion(**data["stability"]),
        early_stop=data["early_stop"],
        stability_metric=data["stability_metric"],
        label=data["label"],
    )


def runlog_to_json(log: RunLog) -> str:
    doc = {
        "config": train_config_to_dict(log.config),
        "records": [
            {
                "epoch": r.epoch,
                "lr": r.lr,
                "train_accuracy": r.train_accuracy,
                "test_accuracy": r.test_accuracy,
                "wall_time_s": r.wall_time_s,
                "stable_so_far": r.stable_so_far,
            }
            for r in log.records
        ],
        "summary": {
            "epochs_run": log.epochs_run,
            "first_stable_epoch": log.first_stable_epoch,
            "accuracy_at_stability": log.accuracy_at_stability,
            "total_wall_time_s": log.total_wall_time_s,
            "diverged": log.diverged,
            "diagnostic": log.diagnostic,
        },
    }
    return json.dumps(doc, indent=2) + "\n"


def runlog_from_json(text: str) -> RunLog:
    doc = json.loads(text)
    return RunLog(
        config=train_config_from_dict(doc["config"]),
        records=[
            EpochRecord(
                epoch=r["epoch"],
                lr=r["lr"],
                train_accuracy=r["train_accuracy"],
                test_accuracy=r["test_accuracy"],
                wall_time_s=r["wall_time_s"],
                stable_so_far=r["stable_so_far"],
            )
            for r in doc["records"]
        ],
        first_stable_epoch=doc["summary"]["first_stable_epoch"],
        accuracy_at_stability=doc["summary"]["accuracy_at_stability"],
        total_wall_time_s=doc["summary"]["total_wall_time_s"],
        diverged=doc["summary"]["diverged"],
        diagnostic=doc["summary"]["diagnostic"],
    )


def runlog_to_csv(log: RunLog) -> str:
    lines = [f"# seed={log.config.seed}", "epoch,lr,train_acc,test_acc,wall_s,stable"]
    lines.extend(
        f"{r.epoch},{r.lr!r},{r.train_accuracy!r},{r.test_accuracy!r},{r.wall_time_s!r},{int(r.stable_so_far)}"
        for r in log.records
    )
    return "\n".join(lines) + "\n"
