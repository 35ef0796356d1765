"""Epoch-indexed learning-rate policies.

Six deterministic policies map a 1-based epoch index to a learning rate:

* decreasing step   -- multiply by a fixed factor every N epochs
* exponential decay -- smooth geometric decay every epoch
* one-cycle         -- linear ramp up, linear descent, low-rate tail
* cyclical          -- triangular wave between a floor and a ceiling
* decreasing cyclical -- sawtooth whose per-cycle ceiling shrinks
* warm restarts     -- cosine annealing that resets to the ceiling at
                       each cycle boundary (equal-length or geometrically
                       growing cycles)

Every policy is a pure function of its config and the epoch, so whole-run
traces can be materialized (:func:`build_schedule`), dumped to CSV, and
compared byte-for-byte across runs.  The module also enumerates the stock
exploration grid used by the experiment runner: six warm-restart peak
counts plus six exponential-decay batch-size/threshold combinations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Union

from .errors import ValidationError

__all__ = [
    "DecreasingStep",
    "ExponentialDecay",
    "OneCycle",
    "Cyclical",
    "DecreasingCyclical",
    "EqualCycles",
    "Geometric",
    "WarmRestarts",
    "PolicyConfig",
    "ScheduleTrace",
    "GridEntry",
    "build_schedule",
    "default_policy",
    "lr_cyclical",
    "lr_decreasing_cyclical",
    "lr_decreasing_step",
    "lr_exponential_decay",
    "lr_one_cycle",
    "lr_warm_restarts",
    "one_cycle_preset",
    "policy_from_dict",
    "policy_to_dict",
    "sota_baseline_policy",
    "table1_grid",
    "trace_from_csv",
    "trace_to_csv",
    "validate_policy",
]


# ---------------------------------------------------------------------------
# Policy configs (tagged union on `kind`)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DecreasingStep:
    """Step decay: the rate is multiplied by ``r_f`` every ``r_int`` epochs."""

    init_lr: float
    epochs: int
    r_f: float = 0.5
    r_int: int = 20

    kind = "decreasing_step"


@dataclass(frozen=True)
class ExponentialDecay:
    """Geometric decay: ``init_lr * d_rate ** (epoch / d_steps)``."""

    init_lr: float
    epochs: int
    d_rate: float = 0.98
    d_steps: int = 1

    kind = "exponential_decay"


@dataclass(frozen=True)
class OneCycle:
    """Linear ramp ``start_lr -> max_lr`` until ``p_ep``, linear descent to
    ``min_lr`` until ``d_ep``, then a final descent toward ``end_lr``.

    ``init_lr`` is carried for config parity with the other policies but
    never enters the piecewise arithmetic.
    """

    epochs: int
    p_ep: int = 90
    d_ep: int = 180
    start_lr: float = 1e-5
    max_lr: float = 1e-2
    min_lr: float = 1e-5
    end_lr: float = 1e-8
    init_lr: float = 0.1

    kind = "one_cycle"


@dataclass(frozen=True)
class Cyclical:
    """Triangular wave between ``min_lr`` and ``max_lr`` with half-cycle
    length ``h_cycle`` (full period ``2 * h_cycle``)."""

    epochs: int
    min_lr: float = 1e-5
    max_lr: float = 1e-2
    h_cycle: int = 25
    init_lr: float = 0.1

    kind = "cyclical"


@dataclass(frozen=True)
class DecreasingCyclical:
    """Sawtooth from a per-cycle ceiling down to ``min_lr``; the ceiling
    itself decreases each cycle.

    ``decay="linear"`` lowers the ceiling by a constant step sized so the
    last cycle starts at ``min_lr``; ``decay="multiplicative"`` scales the
    ceiling by ``mult_factor`` per completed cycle.  The rate is clamped at
    ``min_lr`` from below either way.
    """

    epochs: int
    min_lr: float = 1e-5
    max_lr: float = 1e-2
    c_length: int = 40
    decay: str = "linear"
    mult_factor: float = 0.9
    init_lr: float = 0.1

    kind = "decreasing_cyclical"


@dataclass(frozen=True)
class EqualCycles:
    """Warm-restart mode: ``peaks`` cycles of equal length ``epochs/peaks``."""

    peaks: int


@dataclass(frozen=True)
class Geometric:
    """Warm-restart mode: cycle lengths ``t_max, t_max*t_mult, ...``."""

    t_max: int = 4
    t_mult: int = 2


@dataclass(frozen=True)
class WarmRestarts:
    """Cosine annealing from ``max_lr`` to ``min_lr`` within each cycle,
    resetting to ``max_lr`` at every cycle boundary.

    With ``literal_recursive=True`` the cosine amplitude is the *previous*
    epoch's rate instead of ``max_lr`` (seeded by ``init_lr``), which
    compounds decay across epochs and never returns to full height; it is
    kept as an opt-in variant for comparison.
    """

    epochs: int
    min_lr: float = 1e-5
    max_lr: float = 1e-2
    mode: Union[EqualCycles, Geometric] = field(default_factory=Geometric)
    literal_recursive: bool = False
    init_lr: float = 0.1

    kind = "warm_restarts"


PolicyConfig = Union[
    DecreasingStep, ExponentialDecay, OneCycle, Cyclical, DecreasingCyclical, WarmRestarts
]

_POLICY_CLASSES = (
    DecreasingStep,
    ExponentialDecay,
    OneCycle,
    Cyclical,
    DecreasingCyclical,
    WarmRestarts,
)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def _positive(problems, name, value):
    if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
        problems.append(f"{name} must be a positive finite number, got {value!r}")


def validate_policy(cfg: PolicyConfig) -> list[str]:
    """Return every violated invariant of ``cfg`` (empty list if valid)."""
    problems: list[str] = []
    if not isinstance(cfg, _POLICY_CLASSES):
        return [f"unknown policy config type {type(cfg).__name__}"]
    if not _is_int(cfg.epochs) or cfg.epochs < 1:
        problems.append(f"epochs must be an integer >= 1, got {cfg.epochs!r}")
    _positive(problems, "init_lr", cfg.init_lr)

    if isinstance(cfg, DecreasingStep):
        if not (isinstance(cfg.r_f, (int, float)) and 0 < cfg.r_f <= 1):
            problems.append(f"r_f must lie in (0, 1], got {cfg.r_f!r}")
        if not _is_int(cfg.r_int) or cfg.r_int < 1:
            problems.append(f"r_int must be an integer >= 1, got {cfg.r_int!r}")
    elif isinstance(cfg, ExponentialDecay):
        if not (isinstance(cfg.d_rate, (int, float)) and 0 < cfg.d_rate <= 1):
            problems.append(f"d_rate must lie in (0, 1], got {cfg.d_rate!r}")
        if not _is_int(cfg.d_steps) or cfg.d_steps < 1:
            problems.append(f"d_steps must be an integer >= 1, got {cfg.d_steps!r}")
    elif isinstance(cfg, OneCycle):
        for name in ("start_lr", "max_lr", "min_lr", "end_lr"):
            _positive(problems, name, getattr(cfg, name))
        if not (_is_int(cfg.p_ep) and _is_int(cfg.d_ep)):
            problems.append("p_ep and d_ep must be integers")
        elif not (0 < cfg.p_ep < cfg.d_ep < cfg.epochs if _is_int(cfg.epochs) else False):
            problems.append(
                f"need 0 < p_ep < d_ep < epochs, got p_ep={cfg.p_ep}, "
                f"d_ep={cfg.d_ep}, epochs={cfg.epochs}"
            )
        if cfg.min_lr > cfg.max_lr:
            problems.append(f"min_lr must not exceed max_lr ({cfg.min_lr} > {cfg.max_lr})")
        if cfg.start_lr > cfg.max_lr:
            problems.append(f"start_lr must not exceed max_lr ({cfg.start_lr} > {cfg.max_lr})")
        if cfg.end_lr > cfg.min_lr:
            problems.append(f"end_lr must not exceed min_lr ({cfg.end_lr} > {cfg.min_lr})")
    elif isinstance(cfg, Cyclical):
        _check_lr_band(problems, cfg)
        if not _is_int(cfg.h_cycle) or cfg.h_cycle < 1:
            problems.append(f"h_cycle must be an integer >= 1, got {cfg.h_cycle!r}")
    elif isinstance(cfg, DecreasingCyclical):
        _check_lr_band(problems, cfg)
        if not _is_int(cfg.c_length) or cfg.c_length < 1:
            problems.append(f"c_length must be an integer >= 1, got {cfg.c_length!r}")
        elif _is_int(cfg.epochs) and cfg.epochs % cfg.c_length != 0:
            problems.append(
                f"c_length must divide epochs ({cfg.epochs} % {cfg.c_length} != 0)"
            )
        if cfg.decay not in ("linear", "multiplicative"):
            problems.append(f"decay must be 'linear' or 'multiplicative', got {cfg.decay!r}")
        if not (isinstance(cfg.mult_factor, (int, float)) and 0 < cfg.mult_factor <= 1):
            problems.append(f"mult_factor must lie in (0, 1], got {cfg.mult_factor!r}")
    elif isinstance(cfg, WarmRestarts):
        _check_lr_band(problems, cfg)
        if isinstance(cfg.mode, EqualCycles):
            if not _is_int(cfg.mode.peaks) or cfg.mode.peaks < 1:
                problems.append(f"peaks must be an integer >= 1, got {cfg.mode.peaks!r}")
        elif isinstance(cfg.mode, Geometric):
            if not _is_int(cfg.mode.t_max) or cfg.mode.t_max < 1:
                problems.append(f"t_max must be an integer >= 1, got {cfg.mode.t_max!r}")
            if not _is_int(cfg.mode.t_mult) or cfg.mode.t_mult < 1:
                problems.append(f"t_mult must be an integer >= 1, got {cfg.mode.t_mult!r}")
        else:
            problems.append(f"mode must be EqualCycles or Geometric, got {cfg.mode!r}")
    return problems


def _check_lr_band(problems, cfg):
    _positive(problems, "min_lr", cfg.min_lr)
    _positive(problems, "max_lr", cfg.max_lr)
    if (
        isinstance(cfg.min_lr, (int, float))
        and isinstance(cfg.max_lr, (int, float))
        and cfg.min_lr > cfg.max_lr
    ):
        problems.append(f"min_lr must not exceed max_lr ({cfg.min_lr} > {cfg.max_lr})")


def _check_epoch(cfg: PolicyConfig, ep: int) -> None:
    if not _is_int(ep) or not 1 <= ep <= cfg.epochs:
        raise ValueError(f"epoch must lie in [1, {cfg.epochs}], got {ep!r}")


# ---------------------------------------------------------------------------
# Per-policy learning rates (1-based epoch index)
# ---------------------------------------------------------------------------


def lr_decreasing_step(cfg: DecreasingStep, ep: int) -> float:
    """Rate after ``floor(ep / r_int)`` multiplicative reductions."""
    _check_epoch(cfg, ep)
    return cfg.init_lr * cfg.r_f ** (ep // cfg.r_int)


def lr_exponential_decay(cfg: ExponentialDecay, ep: int) -> float:
    """``init_lr * d_rate ** (ep / d_steps)`` with a real-valued exponent."""
    _check_epoch(cfg, ep)
    return cfg.init_lr * cfg.d_rate ** (ep / cfg.d_steps)


def lr_one_cycle(cfg: OneCycle, ep: int) -> float:
    """Piecewise-linear ramp, descent, and tail.

    The three branches meet exactly: the descent starts at ``max_lr`` when
    ``ep == p_ep`` and the tail starts at ``min_lr`` when ``ep == d_ep``.
    """
    _check_epoch(cfg, ep)
    if ep < cfg.p_ep:
        return cfg.start_lr + (cfg.max_lr - cfg.start_lr) / cfg.p_ep * ep
    if ep < cfg.d_ep:
        return cfg.max_lr - (cfg.max_lr - cfg.min_lr) / (cfg.d_ep - cfg.p_ep) * (ep - cfg.p_ep)
    return cfg.min_lr - (cfg.min_lr - cfg.end_lr) / (cfg.epochs - cfg.d_ep) * (ep - cfg.d_ep)


def lr_cyclical(cfg: Cyclical, ep: int) -> float:
    """Triangular wave with period ``2 * h_cycle``."""
    _check_epoch(cfg, ep)
    pos = ep % (2 * cfg.h_cycle)
    if pos < cfg.h_cycle:
        return cfg.min_lr + (cfg.max_lr - cfg.min_lr) * pos / cfg.h_cycle
    return cfg.max_lr - (cfg.max_lr - cfg.min_lr) * (pos - cfg.h_cycle) / cfg.h_cycle


def lr_decreasing_cyclical(cfg: DecreasingCyclical, ep: int) -> float:
    """Descending sawtooth with a shrinking per-cycle ceiling, floored at
    ``min_lr``."""
    _check_epoch(cfg, ep)
    n_cycles = ep // cfg.c_length
    total_cycles = cfg.epochs // cfg.c_length
    if cfg.decay == "linear":
        # Single-cycle configs have no later cycle to decay toward.
        step = (cfg.max_lr - cfg.min_lr) / (total_cycles - 1) if total_cycles > 1 else 0.0
        cur_max = cfg.max_lr - step * n_cycles
    else:
        cur_max = cfg.max_lr * cfg.mult_factor**n_cycles
    progress = (ep % cfg.c_length) / cfg.c_length
    lr = cur_max - (cur_max - cfg.min_lr) * progress
    return max(lr, cfg.min_lr)


def _warm_restart_cycle(cfg: WarmRestarts, ep: int) -> tuple[float, float]:
    """Position within the current cycle and that cycle's length."""
    if isinstance(cfg.mode, EqualCycles):
        period = cfg.epochs / cfg.mode.peaks
        return ep % period, period
    t_cur = float(ep)
    t_i = float(cfg.mode.t_max)
    while t_cur >= t_i:
        t_cur -= t_i
        t_i *= cfg.mode.t_mult
    return t_cur, t_i


def lr_warm_restarts(cfg: WarmRestarts, ep: int) -> float:
    """Cosine-annealed rate; exactly ``max_lr`` at each cycle start."""
    _check_epoch(cfg, ep)
    if cfg.literal_recursive:
        lr = cfg.init_lr
        for e in range(1, ep + 1):
            t_cur, t_i = _warm_restart_cycle(cfg, e)
            lr = cfg.min_lr + (lr - cfg.min_lr) * 0.5 * (1.0 + math.cos(math.pi * t_cur / t_i))
        return lr
    t_cur, t_i = _warm_restart_cycle(cfg, ep)
    # Written as max - amplitude*(1-cos)/2 so a cycle start yields max_lr
    # exactly (no floating-point residue from re-adding min_lr).
    return cfg.max_lr - (cfg.max_lr - cfg.min_lr) * 0.5 * (1.0 - math.cos(math.pi * t_cur / t_i))


_LR_FUNCS = {
    DecreasingStep: lr_decreasing_step,
    ExponentialDecay: lr_exponential_decay,
    OneCycle: lr_one_cycle,
    Cyclical: lr_cyclical,
    DecreasingCyclical: lr_decreasing_cyclical,
    WarmRestarts: lr_warm_restarts,
}


def policy_lr(cfg: PolicyConfig, ep: int) -> float:
    """Dispatch to the policy-specific rate function."""
    return _LR_FUNCS[type(cfg)](cfg, ep)


# ---------------------------------------------------------------------------
# Whole-run traces
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScheduleTrace:
    """Materialized learning rate for every epoch of a run (1-based)."""

    lr_by_epoch: tuple[float, ...]

    def __len__(self) -> int:
        return len(self.lr_by_epoch)

    def __iter__(self):
        return iter(self.lr_by_epoch)

    def lr_at(self, ep: int) -> float:
        """Rate at 1-based epoch ``ep``."""
        if not 1 <= ep <= len(self.lr_by_epoch):
            raise ValueError(f"epoch must lie in [1, {len(self.lr_by_epoch)}], got {ep!r}")
        return self.lr_by_epoch[ep - 1]


def build_schedule(cfg: PolicyConfig) -> ScheduleTrace:
    """Materialize the full trace; raises listing *every* invalid field."""
    problems = validate_policy(cfg)
    if problems:
        raise ValidationError(problems)
    fn = _LR_FUNCS[type(cfg)]
    return ScheduleTrace(tuple(fn(cfg, ep) for ep in range(1, cfg.epochs + 1)))


def trace_to_csv(trace: ScheduleTrace) -> str:
    """``epoch,lr`` CSV with 17 significant digits (round-trippable)."""
    lines = ["epoch,lr"]
    lines.extend(f"{ep},{lr:.17g}" for ep, lr in enumerate(trace.lr_by_epoch, start=1))
    return "\n".join(lines) + "\n"


def trace_from_csv(text: str) -> ScheduleTrace:
    """Parse a trace produced by :func:`trace_to_csv`."""
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    if not lines or lines[0] != "epoch,lr":
        raise ValueError("not a schedule trace CSV (missing 'epoch,lr' header)")
    values = []
    for i, ln in enumerate(lines[1:], start=1):
        ep_str, lr_str = ln.split(",")
        if int(ep_str) != i:
            raise ValueError(f"non-contiguous epoch column at row {i}")
        values.append(float(lr_str))
    return ScheduleTrace(tuple(values))


# ---------------------------------------------------------------------------
# Named presets and the exploration grid
# ---------------------------------------------------------------------------


def sota_baseline_policy(epochs: int = 200, init_lr: float = 1e-3) -> DecreasingStep:
    """The comparison-partner policy: halve the rate every 20 epochs."""
    return DecreasingStep(init_lr=init_lr, epochs=epochs, r_f=0.5, r_int=20)


def one_cycle_preset(name: str = "peak90", epochs: int = 200) -> OneCycle:
    """Named one-cycle parameterizations.

    ``peak90`` places the peak at epoch 90 (descent until 180); ``peak100``
    places it at epoch 100.  Both share the 1e-5/1e-2 band and 1e-8 tail.
    """
    presets = {"peak90": 90, "peak100": 100}
    if name not in presets:
        raise ValueError(f"unknown one-cycle preset {name!r}; choose from {sorted(presets)}")
    return OneCycle(epochs=epochs, p_ep=presets[name], d_ep=180)


def default_policy(kind: str, epochs: int = 200) -> PolicyConfig:
    """Stock parameterization for each policy kind (CLI dump defaults)."""
    key = _normalize_kind(kind)
    defaults: dict[str, PolicyConfig] = {
        "decreasing_step": DecreasingStep(init_lr=0.1, epochs=epochs),
        "exponential_decay": ExponentialDecay(init_lr=0.1, epochs=epochs),
        "one_cycle": one_cycle_preset("peak90", epochs=epochs),
        "cyclical": Cyclical(epochs=epochs),
        "decreasing_cyclical": DecreasingCyclical(epochs=epochs),
        "warm_restarts": WarmRestarts(epochs=epochs),
    }
    if key not in defaults:
        raise ValidationError([f"unknown policy kind {kind!r}; choose from {sorted(defaults)}"])
    return defaults[key]


@dataclass(frozen=True)
class GridEntry:
    """One exploration-grid setting: a policy plus training overrides."""

    label: str
    policy: PolicyConfig
    batch_size: int
    v_th: float


def table1_grid(epochs: int = 200) -> list[GridEntry]:
    """The 12-entry exploration grid.

    Six warm-restart settings (2/3/4/6/7/10 equal-length peaks, batch 40,
    threshold 0.4) and six exponential-decay settings varying batch size
    and threshold, all with a 1e-2 initial rate.
    """
    entries = [
        GridEntry(
            label=f"WR_{peaks}P",
            policy=WarmRestarts(
                epochs=epochs,
                min_lr=1e-5,
                max_lr=1e-2,
                mode=EqualCycles(peaks=peaks),
                init_lr=1e-2,
            ),
            batch_size=40,
            v_th=0.4,
        )
        for peaks in (2, 3, 4, 6, 7, 10)
    ]
    ed = ExponentialDecay(init_lr=1e-2, epochs=epochs, d_rate=0.98, d_steps=1)
    entries.extend(
        GridEntry(label=label, policy=ed, batch_size=batch, v_th=v_th)
        for label, batch, v_th in (
            ("ED_B40_V3", 40, 0.3),
            ("ED_B40_V4", 40, 0.4),
            ("ED_B40_V5", 40, 0.5),
            ("ED_B40_V6", 40, 0.6),
            ("ED_B30_V4", 30, 0.4),
            ("ED_B20_V4", 20, 0.4),
        )
    )
    return entries


# ---------------------------------------------------------------------------
# Dict round trip (config files, run logs, checkpoints)
# ---------------------------------------------------------------------------


def _normalize_kind(kind: str) -> str:
    flat = str(kind).replace("-", "").replace("_", "").lower()
    names = {
        "decreasingstep": "decreasing_step",
        "exponentialdecay": "exponential_decay",
        "onecycle": "one_cycle",
        "cyclical": "cyclical",
        "decreasingcyclical": "decreasing_cyclical",
        "warmrestarts": "warm_restarts",
    }
    return names.get(flat, flat)


def policy_to_dict(cfg: PolicyConfig) -> dict:
    """Flat dict form with a ``kind`` discriminator."""
    d: dict = {"kind": cfg.kind}
    if isinstance(cfg, WarmRestarts):
        d.update(
            init_lr=cfg.init_lr,
            epochs=cfg.epochs,
            min_lr=cfg.min_lr,
            max_lr=cfg.max_lr,
            literal_recursive=cfg.literal_recursive,
        )
        if isinstance(cfg.mode, EqualCycles):
            d.update(mode="equal_cycles", peaks=cfg.mode.peaks)
        else:
            d.update(mode="geometric", t_max=cfg.mode.t_max, t_mult=cfg.mode.t_mult)
        return d
    for f in type(cfg).__dataclass_fields__:
        d[f] = getattr(cfg, f)
    return d


def policy_from_dict(data: dict) -> PolicyConfig:
    """Build a policy config from its dict form; raises listing every problem."""
    problems: list[str] = []
    if not isinstance(data, dict):
        raise ValidationError([f"policy must be a mapping, got {type(data).__name__}"])
    data = dict(data)
    kind = _normalize_kind(data.pop("kind", ""))
    classes = {
        "decreasing_step": DecreasingStep,
        "exponential_decay": ExponentialDecay,
        "one_cycle": OneCycle,
        "cyclical": Cyclical,
        "decreasing_cyclical": DecreasingCyclical,
        "warm_restarts": WarmRestarts,
    }
    if kind not in classes:
        raise ValidationError(
            [f"unknown policy kind {data.get('kind', kind)!r}; choose from {sorted(classes)}"]
        )
    cls = classes[kind]
    if cls is WarmRestarts:
        mode_name = str(data.pop("mode", "geometric")).replace("-", "_").lower()
        if mode_name in ("equal_cycles", "equalcycles"):
            mode = EqualCycles(peaks=data.pop("peaks", 4))
        elif mode_name == "geometric":
            mode = Geometric(t_max=data.pop("t_max", 4), t_mult=data.pop("t_mult", 2))
        else:
            problems.append(f"mode must be 'equal_cycles' or 'geometric', got {mode_name!r}")
            mode = Geometric()
        data["mode"] = mode
    allowed = set(cls.__dataclass_fields__)
    unknown = set(data) - allowed
    if unknown:
        problems.append(f"unknown {kind} fields: {', '.join(sorted(unknown))}")
        for k in unknown:
            data.pop(k)
    try:
        cfg = cls(**data)
    except TypeError as exc:
        raise ValidationError(problems + [f"bad {kind} config: {exc}"]) from exc
    problems.extend(validate_policy(cfg))
    if problems:
        raise ValidationError(problems)
    return cfg


def with_epochs(cfg: PolicyConfig, epochs: int) -> PolicyConfig:
    """Copy of ``cfg`` targeting a different run length."""
    return replace(cfg, epochs=epochs)
