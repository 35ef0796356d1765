"""Experiment config files: YAML sections, dotted-path overrides, and
validation that reports every violation in one pass.

A config mirrors the experiment pipeline: a ``dataset`` section (synthetic
generator parameters or a container path), a ``network`` section (layer
stack and neuron constants), a ``train`` section (policy, batch size,
threshold, stability criterion), a ``carbon`` section (power profile), a
``timing`` section (fixed per-epoch seconds by default, so output files
are byte-reproducible; ``measured`` uses real wall time), and a ``sweep``
section (rate list and effectiveness margin).  One top-level ``seed``
drives dataset generation, the split, and training.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .carbon import PowerProfile
from .errors import ConfigError
from .events import EventSample, generate_synthetic_dataset, load_events, split_dataset
from .schedule import PolicyConfig, policy_from_dict, policy_to_dict, sota_baseline_policy
from .snn import Conv2d, Dense, LifParams, NetworkSpec, SurrogateConfig, spec_to_dict
from .trainer import StabilityCriterion, TrainConfig, validate_train_config

__all__ = [
    "CarbonConfig",
    "DatasetConfig",
    "ExperimentConfig",
    "NetworkConfig",
    "SweepConfig",
    "TimingConfig",
    "DEFAULT_SWEEP_VALUES",
    "config_to_dict",
    "load_config",
    "parse_overrides",
]

DEFAULT_SWEEP_VALUES = (1e-6, 5e-6, 1e-5, 5e-5, 1e-2, 5e-2, 1e-1)


@dataclass
class DatasetConfig:
    kind: str = "synthetic"  # or "file"
    path: str | None = None
    n_samples: int = 250
    width: int = 32
    height: int = 32
    duration_us: int = 100_000
    mean_events: int = 600
    train_fraction: float = 0.8


@dataclass
class NetworkConfig:
    layers: list[dict] = field(default_factory=list)  # empty -> stock stack
    timesteps: int = 10
    n_classes: int = 2
    lif: LifParams = field(default_factory=LifParams)
    surrogate_width: float = 1.0
    frame_mode: str = "count"


@dataclass
class CarbonConfig:
    profile: PowerProfile = field(default_factory=lambda: PowerProfile(65.0, 10.0, 0.0, 0))
    mode: str = "full"  # full | gpu_only | both


@dataclass
class TimingConfig:
    mode: str = "fixed"  # fixed | measured
    seconds_per_epoch: float = 1.0

    @property
    def epoch_seconds(self) -> float | None:
        return self.seconds_per_epoch if self.mode == "fixed" else None


@dataclass
class SweepConfig:
    values: tuple[float, ...] = DEFAULT_SWEEP_VALUES
    margin_pct: float = 10.0


@dataclass
class ExperimentConfig:
    seed: int = 0
    output_dir: str | None = None
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(policy=sota_baseline_policy()))
    carbon: CarbonConfig = field(default_factory=CarbonConfig)
    timing: TimingConfig = field(default_factory=TimingConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)

    def load_dataset(self) -> tuple[list[EventSample], list[EventSample]]:
        """Materialize the dataset and its stratified train/test split."""
        d = self.dataset
        if d.kind == "synthetic":
            samples = generate_synthetic_dataset(
                seed=self.seed,
                n_samples=d.n_samples,
                width=d.width,
                height=d.height,
                duration_us=d.duration_us,
                mean_events=d.mean_events,
            )
        else:
            samples = load_events(d.path)
        return split_dataset(samples, d.train_fraction, self.seed)

    def build_network_spec(self, height: int, width: int) -> NetworkSpec:
        """Resolve the layer stack against the sensor geometry."""
        net = self.network
        lif = LifParams(
            v_rest=net.lif.v_rest, v_th=self.train.v_th, tau=net.lif.tau, r_in=net.lif.r_in
        )
        surrogate = SurrogateConfig(width_a=net.surrogate_width)
        shape: tuple[int, ...] = (2, height, width)
        layers: list = []
        entries = net.layers or [
            {"type": "conv2d", "out_channels": 8, "kernel": 5, "stride": 2},
            {"type": "dense", "out_features": 32},
            {"type": "dense", "out_features": net.n_classes},
        ]
        for entry in entries:
            if entry["type"] == "conv2d":
                c, h, w = shape
                layer = Conv2d(
                    in_channels=c,
                    out_channels=entry["out_channels"],
                    kernel=entry["kernel"],
                    stride=entry.get("stride", 1),
                )
                shape = (
                    layer.out_channels,
                    (h - layer.kernel) // layer.stride + 1,
                    (w - layer.kernel) // layer.stride + 1,
                )
            else:
                flat = 1
                for dim in shape:
                    flat *= dim
                layer = Dense(in_features=flat, out_features=entry["out_features"])
                shape = (layer.out_features,)
            layers.append(layer)
        return NetworkSpec(
            layers=tuple(layers),
            input_shape=(2, height, width),
            timesteps=net.timesteps,
            n_classes=net.n_classes,
            lif=lif,
            surrogate=surrogate,
        )


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------


def parse_overrides(sets: list[str]) -> list[tuple[list[str], object]]:
    """Parse ``a.b.c=value`` strings; values go through YAML scalar rules."""
    parsed = []
    problems = []
    for item in sets:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            problems.append(f"override {item!r} must look like section.key=value")
            continue
        try:
            value = yaml.safe_load(raw) if raw != "" else None
        except yaml.YAMLError:
            value = raw
        parsed.append((key.split("."), value))
    if problems:
        raise ConfigError(problems)
    return parsed


def _apply_overrides(data: dict, sets: list[str]) -> dict:
    for path, value in parse_overrides(sets):
        node = data
        for part in path[:-1]:
            nxt = node.get(part)
            if not isinstance(nxt, dict):
                nxt = {}
                node[part] = nxt
            node = nxt
        node[path[-1]] = value
    return data


class _Section:
    """Mapping reader that tracks the keys it consumed."""

    def __init__(self, data, prefix, problems):
        self.data = data if isinstance(data, dict) else {}
        self.prefix = prefix
        self.problems = problems
        self.seen: set[str] = set()
        if data is not None and not isinstance(data, dict):
            problems.append(f"{prefix or 'config'}: expected a mapping, got {type(data).__name__}")

    def take(self, key, default=None):
        self.seen.add(key)
        return self.data.get(key, default)

    def has(self, key) -> bool:
        return key in self.data

    def finish(self):
        unknown = set(self.data) - self.seen
        for key in sorted(unknown):
            dotted = f"{self.prefix}.{key}" if self.prefix else key
            self.problems.append(f"unknown config key {dotted!r}")

    def number(self, key, default, *, minimum=None, integer=False):
        value = self.take(key, default)
        dotted = f"{self.prefix}.{key}" if self.prefix else key
        if integer and not (isinstance(value, int) and not isinstance(value, bool)):
            self.problems.append(f"{dotted} must be an integer, got {value!r}")
            return default
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            self.problems.append(f"{dotted} must be a number, got {value!r}")
            return default
        if minimum is not None and value < minimum:
            self.problems.append(f"{dotted} must be >= {minimum}, got {value!r}")
            return default
        return value

    def choice(self, key, default, options):
        value = self.take(key, default)
        dotted = f"{self.prefix}.{key}" if self.prefix else key
        if value not in options:
            self.problems.append(f"{dotted} must be one of {sorted(options)}, got {value!r}")
            return default
        return value


def load_config(path, sets: list[str] | None = None) -> ExperimentConfig:
    """Load + override + validate; raises :class:`ConfigError` listing every
    problem found anywhere in the file."""
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError([f"config is not valid YAML: {exc}"]) from exc
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError([f"config root must be a mapping, got {type(raw).__name__}"])
    _apply_overrides(raw, list(sets or []))

    problems: list[str] = []
    top = _Section(raw, "", problems)
    seed = top.number("seed", 0, minimum=0, integer=True)
    output_dir = top.take("output_dir")
    if output_dir is not None and not isinstance(output_dir, str):
        problems.append(f"output_dir must be a string path, got {output_dir!r}")
        output_dir = None

    ds = _Section(top.take("dataset"), "dataset", problems)
    dataset = DatasetConfig(
        kind=ds.choice("kind", "synthetic", ("synthetic", "file")),
        path=ds.take("path"),
        n_samples=ds.number("n_samples", 250, minimum=2, integer=True),
        width=ds.number("width", 32, minimum=4, integer=True),
        height=ds.number("height", 32, minimum=4, integer=True),
        duration_us=ds.number("duration_us", 100_000, minimum=1, integer=True),
        mean_events=ds.number("mean_events", 600, minimum=1, integer=True),
        train_fraction=ds.number("train_fraction", 0.8),
    )
    if not 0 < dataset.train_fraction < 1:
        problems.append(f"dataset.train_fraction must lie in (0, 1), got {dataset.train_fraction!r}")
    if dataset.kind == "file":
        if not dataset.path:
            problems.append("dataset.path is required when dataset.kind is 'file'")
        elif not Path(dataset.path).exists():
            problems.append(f"dataset.path does not exist: {dataset.path}")
    ds.finish()

    net_sec = _Section(top.take("network"), "network", problems)
    lif_sec = _Section(net_sec.take("lif"), "network.lif", problems)
    lif = LifParams(
        v_rest=lif_sec.number("v_rest", 0.0),
        v_th=lif_sec.number("v_th", 0.4),
        tau=lif_sec.number("tau", 2.0),
        r_in=lif_sec.number("r_in", 1.0),
    )
    lif_sec.finish()
    layers = net_sec.take("layers", [])
    if not isinstance(layers, list):
        problems.append(f"network.layers must be a list, got {type(layers).__name__}")
        layers = []
    else:
        layers = _check_layers(layers, problems)
    network = NetworkConfig(
        layers=layers,
        timesteps=net_sec.number("timesteps", 10, minimum=1, integer=True),
        n_classes=net_sec.number("n_classes", 2, minimum=2, integer=True),
        lif=lif,
        surrogate_width=net_sec.number("surrogate_width", 1.0),
        frame_mode=net_sec.choice("frame_mode", "count", ("count", "binary")),
    )
    if network.surrogate_width <= 0:
        problems.append(f"network.surrogate_width must be positive, got {network.surrogate_width!r}")
    net_sec.finish()

    tr = _Section(top.take("train"), "train", problems)
    epochs = tr.number("epochs", 200, minimum=1, integer=True)
    policy_raw = tr.take("policy")
    policy = _parse_policy(policy_raw, epochs, problems)
    stab = _Section(tr.take("stability"), "train.stability", problems)
    stability = StabilityCriterion(
        window=stab.number("window", 10, minimum=2, integer=True),
        acc_th=stab.number("acc_th", 1.0),
    )
    stab.finish()
    v_th = tr.number("v_th", None) if tr.has("v_th") else None
    if v_th is not None and lif_sec.has("v_th") and v_th != lif.v_th:
        problems.append(
            f"train.v_th ({v_th}) conflicts with network.lif.v_th ({lif.v_th}); set only one"
        )
    train = TrainConfig(
        policy=policy,
        epochs=epochs,
        batch_size=tr.number("batch_size", 40, minimum=1, integer=True),
        v_th=v_th if v_th is not None else lif.v_th,
        seed=seed,
        stability=stability,
        early_stop=bool(tr.take("early_stop", True)),
        stability_metric=tr.choice("stability_metric", "test", ("test", "train")),
        label=str(tr.take("label", "run")),
    )
    tr.finish()

    cb = _Section(top.take("carbon"), "carbon", problems)
    carbon = CarbonConfig(
        profile=PowerProfile(
            p_cpu_w=cb.number("p_cpu_w", 65.0, minimum=0),
            p_mem_w=cb.number("p_mem_w", 10.0, minimum=0),
            p_gpu_w=cb.number("p_gpu_w", 0.0, minimum=0),
            gpus=cb.number("gpus", 0, minimum=0, integer=True),
        ),
        mode=cb.choice("mode", "full", ("full", "gpu_only", "both")),
    )
    cb.finish()

    tm = _Section(top.take("timing"), "timing", problems)
    timing = TimingConfig(
        mode=tm.choice("mode", "fixed", ("fixed", "measured")),
        seconds_per_epoch=tm.number("seconds_per_epoch", 1.0, minimum=0),
    )
    tm.finish()

    sw = _Section(top.take("sweep"), "sweep", problems)
    values = sw.take("values", list(DEFAULT_SWEEP_VALUES))
    if not isinstance(values, list) or not values or not all(
        isinstance(v, (int, float)) and v > 0 for v in values
    ):
        problems.append(f"sweep.values must be a nonempty list of positive rates, got {values!r}")
        values = list(DEFAULT_SWEEP_VALUES)
    sweep = SweepConfig(values=tuple(float(v) for v in values), margin_pct=sw.number("margin_pct", 10.0, minimum=0))
    sw.finish()
    top.finish()

    problems.extend(f"train.{p}" for p in validate_train_config(train))
    if problems:
        raise ConfigError(problems)
    return ExperimentConfig(
        seed=seed,
        output_dir=output_dir,
        dataset=dataset,
        network=network,
        train=train,
        carbon=carbon,
        timing=timing,
        sweep=sweep,
    )


def _check_layers(layers: list, problems: list[str]) -> list[dict]:
    checked = []
    allowed = {"conv2d": {"out_channels", "kernel", "stride"}, "dense": {"out_features"}}
    for i, entry in enumerate(layers):
        if not isinstance(entry, dict) or entry.get("type") not in allowed:
            problems.append(f"network.layers[{i}] must be a mapping with type 'conv2d' or 'dense'")
            continue
        kind = entry["type"]
        unknown = set(entry) - allowed[kind] - {"type"}
        if unknown:
            problems.append(f"network.layers[{i}]: unknown keys {sorted(unknown)}")
        required = {"conv2d": ("out_channels", "kernel"), "dense": ("out_features",)}[kind]
        missing = [k for k in required if k not in entry]
        if missing:
            problems.append(f"network.layers[{i}]: missing keys {missing}")
            continue
        checked.append(entry)
    return checked


def _parse_policy(policy_raw, epochs: int, problems: list[str]) -> PolicyConfig:
    if policy_raw is None:
        return sota_baseline_policy(epochs=epochs)
    if not isinstance(policy_raw, dict):
        problems.append(f"train.policy must be a mapping, got {type(policy_raw).__name__}")
        return sota_baseline_policy(epochs=epochs)
    data = dict(policy_raw)
    if "epochs" in data and data["epochs"] != epochs:
        problems.append(
            f"train.policy.epochs ({data['epochs']}) conflicts with train.epochs ({epochs})"
        )
    data["epochs"] = epochs
    try:
        return policy_from_dict(data)
    except ConfigError as exc:
        problems.extend(f"train.policy.{p}" for p in exc.problems)
    except Exception as exc:
        problems.extend(f"train.policy.{p}" for p in getattr(exc, "problems", [str(exc)]))
    return sota_baseline_policy(epochs=epochs)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    """Deterministic echo of the resolved config (written into run output)."""
    from .trainer import train_config_to_dict

    return {
        "seed": cfg.seed,
        "output_dir": cfg.output_dir,
        "dataset": {
            "kind": cfg.dataset.kind,
            "path": cfg.dataset.path,
            "n_samples": cfg.dataset.n_samples,
            "width": cfg.dataset.width,
            "height": cfg.dataset.height,
            "duration_us": cfg.dataset.duration_us,
            "mean_events": cfg.dataset.mean_events,
            "train_fraction": cfg.dataset.train_fraction,
        },
        "network": {
            "layers": cfg.network.layers,
            "timesteps": cfg.network.timesteps,
            "n_classes": cfg.network.n_classes,
            "lif": {
                "v_rest": cfg.network.lif.v_rest,
                "v_th": cfg.network.lif.v_th,
                "tau": cfg.network.lif.tau,
                "r_in": cfg.network.lif.r_in,
            },
            "surrogate_width": cfg.network.surrogate_width,
            "frame_mode": cfg.network.frame_mode,
        },
        "train": train_config_to_dict(cfg.train),
        "carbon": {
            "p_cpu_w": cfg.carbon.profile.p_cpu_w,
            "p_mem_w": cfg.carbon.profile.p_mem_w,
            "p_gpu_w": cfg.carbon.profile.p_gpu_w,
            "gpus": cfg.carbon.profile.gpus,
            "mode": cfg.carbon.mode,
        },
        "timing": {"mode": cfg.timing.mode, "seconds_per_epoch": cfg.timing.seconds_per_epoch},
        "sweep": {"values": list(cfg.sweep.values), "margin_pct": cfg.sweep.margin_pct},
    }
