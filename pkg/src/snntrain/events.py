"""Event-camera data model, synthetic dataset generation, and file I/O.

A recording is a time-ordered stream of ``(x, y, t, polarity)`` brightness
events.  Samples are labeled two-class recordings of fixed duration
(class 1 contains a spatially coherent moving-bar motif, class 0 is
rate-matched uniform noise).  :func:`accumulate_frames` bins a sample into
the dense ``[T, 2, height, width]`` frame tensor the network consumes:
event with timestamp ``t`` lands in bin ``floor(t * T / duration_us)`` on
the channel selected by its polarity.

Datasets are stored in a compact little-endian binary container (magic
``EVDS``, version byte, sample count, then per-sample headers and packed
9-byte event records).  Round trips are exact.
"""

from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path

import numpy as np

from .errors import DatasetFormatError

__all__ = [
    "Event",
    "EventSample",
    "FrameTensor",
    "Polarity",
    "accumulate_frames",
    "generate_synthetic_dataset",
    "import_ncars_dat",
    "load_events",
    "metadata_csv",
    "save_events",
    "split_dataset",
]

MAGIC = b"EVDS"
FORMAT_VERSION = 1

_SAMPLE_HEADER = struct.Struct("<HIHHI")  # label, duration_us, width, height, n_events
_EVENT_DTYPE = np.dtype([("x", "<u2"), ("y", "<u2"), ("t", "<u4"), ("p", "u1")])

# Dense frame stack of shape [timesteps, 2 polarity channels, height, width].
FrameTensor = np.ndarray


class Polarity(IntEnum):
    NEGATIVE = 0
    POSITIVE = 1


@dataclass(frozen=True, slots=True)
class Event:
    """One brightness-change event: pixel, microsecond timestamp, sign."""

    x: int
    y: int
    t: int
    polarity: Polarity


@dataclass
class EventSample:
    """A labeled recording: time-sorted events on a fixed sensor."""

    events: list[Event]
    label: int
    duration_us: int
    width: int
    height: int


def sample_problems(sample: EventSample) -> list[str]:
    """Every violated sample invariant (empty list if valid)."""
    problems = []
    if sample.width < 1 or sample.height < 1:
        problems.append(f"sensor dims must be positive, got {sample.width}x{sample.height}")
    if sample.duration_us < 1:
        problems.append(f"duration_us must be positive, got {sample.duration_us}")
    if sample.label < 0:
        problems.append(f"label must be non-negative, got {sample.label}")
    prev_t = -1
    for i, ev in enumerate(sample.events):
        if not (0 <= ev.x < sample.width and 0 <= ev.y < sample.height):
            problems.append(f"event {i} at ({ev.x},{ev.y}) outside {sample.width}x{sample.height}")
            break
        if not 0 <= ev.t < sample.duration_us:
            problems.append(f"event {i} timestamp {ev.t} outside [0, {sample.duration_us})")
            break
        if ev.t < prev_t:
            problems.append(f"event {i} breaks non-decreasing timestamp order")
            break
        prev_t = ev.t
    return problems


def _events_to_array(events: list[Event]) -> np.ndarray:
    arr = np.empty(len(events), dtype=_EVENT_DTYPE)
    for i, ev in enumerate(events):
        arr[i] = (ev.x, ev.y, ev.t, int(ev.polarity))
    return arr


def _events_from_array(arr: np.ndarray) -> list[Event]:
    return [
        Event(int(x), int(y), int(t), Polarity(int(p)))
        for x, y, t, p in zip(arr["x"], arr["y"], arr["t"], arr["p"])
    ]


# ---------------------------------------------------------------------------
# Frame accumulation
# ---------------------------------------------------------------------------


def accumulate_frames(sample: EventSample, timesteps: int, mode: str = "count") -> FrameTensor:
    """Bin a sample's events into a ``[T, 2, H, W]`` float64 tensor.

    ``count`` stores per-bin event counts (the tensor sum equals the number
    of events); ``binary`` stores 1.0 wherever at least one event landed.
    """
    if timesteps < 1:
        raise ValueError(f"timesteps must be >= 1, got {timesteps}")
    if sample.width < 1 or sample.height < 1:
        raise ValueError(f"sensor dims must be positive, got {sample.width}x{sample.height}")
    if mode not in ("count", "binary"):
        raise ValueError(f"mode must be 'count' or 'binary', got {mode!r}")
    frames = np.zeros((timesteps, 2, sample.height, sample.width), dtype=np.float64)
    if sample.events:
        arr = _events_to_array(sample.events)
        # Integer arithmetic: bin = floor(t * T / duration), exact for t < 2**32.
        bins = (arr["t"].astype(np.int64) * timesteps) // sample.duration_us
        np.add.at(frames, (bins, arr["p"], arr["y"].astype(np.int64), arr["x"].astype(np.int64)), 1.0)
    if mode == "binary":
        frames = (frames > 0).astype(np.float64)
    return frames


# ---------------------------------------------------------------------------
# Synthetic generation
# ---------------------------------------------------------------------------


def generate_synthetic_dataset(
    seed: int,
    n_samples: int,
    width: int = 32,
    height: int = 32,
    duration_us: int = 100_000,
    mean_events: int = 600,
) -> list[EventSample]:
    """Deterministic two-class dataset with balanced, interleaved labels.

    Class 1 samples contain a vertical bar translating horizontally across
    the sensor (leading edge emits positive polarity, trailing edge
    negative); class 0 samples are uniform noise drawn at the same mean
    event rate.  Identical arguments yield byte-identical datasets.
    """
    if n_samples < 2 or n_samples % 2 != 0:
        raise ValueError(f"n_samples must be an even count >= 2, got {n_samples}")
    if width < 4 or height < 4:
        raise ValueError(f"sensor must be at least 4x4 pixels, got {width}x{height}")
    if duration_us < 1:
        raise ValueError(f"duration_us must be positive, got {duration_us}")
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(n_samples):
        label = i % 2
        n_ev = max(1, int(rng.poisson(mean_events)))
        t = np.sort(rng.integers(0, duration_us, size=n_ev))
        if label == 1:
            bar_h = max(2, int(round(0.6 * height)))
            y0 = int(rng.integers(0, height - bar_h + 1))
            start = float(rng.uniform(0.05, 0.25) * width)
            travel = float(rng.uniform(0.5, 0.8) * width)
            direction = 1.0 if rng.random() < 0.5 else -1.0
            if direction < 0:
                start = width - 1 - start
            pos = start + direction * travel * (t / duration_us)
            jitter = rng.normal(0.0, 0.6, size=n_ev)
            x = np.clip(np.rint(pos + jitter), 0, width - 1).astype(np.int64)
            y = rng.integers(y0, y0 + bar_h, size=n_ev)
            pol = (jitter * direction >= 0).astype(np.int64)
        else:
            x = rng.integers(0, width, size=n_ev)
            y = rng.integers(0, height, size=n_ev)
            pol = rng.integers(0, 2, size=n_ev)
        events = [
            Event(int(xi), int(yi), int(ti), Polarity(int(pi)))
            for xi, yi, ti, pi in zip(x, y, t, pol)
        ]
        samples.append(
            EventSample(events=events, label=label, duration_us=duration_us, width=width, height=height)
        )
    return samples


def split_dataset(
    samples: list[EventSample], train_fraction: float, seed: int
) -> tuple[list[EventSample], list[EventSample]]:
    """Deterministic stratified split preserving per-class balance."""
    if not 0 < train_fraction < 1:
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    by_label: dict[int, list[int]] = {}
    for i, s in enumerate(samples):
        by_label.setdefault(s.label, []).append(i)
    rng = np.random.default_rng(seed)
    train_idx: list[int] = []
    test_idx: list[int] = []
    for label in sorted(by_label):
        idx = np.array(by_label[label], dtype=np.int64)
        if len(idx) < 2:
            raise ValueError(f"class {label} needs at least 2 samples to split, got {len(idx)}")
        rng.shuffle(idx)
        n_train = int(round(train_fraction * len(idx)))
        n_train = min(max(n_train, 1), len(idx) - 1)
        train_idx.extend(idx[:n_train].tolist())
        test_idx.extend(idx[n_train:].tolist())
    train = [samples[i] for i in sorted(train_idx)]
    test = [samples[i] for i in sorted(test_idx)]
    return train, test


# ---------------------------------------------------------------------------
# Binary container I/O
# ---------------------------------------------------------------------------


def save_events(samples: list[EventSample], path) -> None:
    """Write the dataset container; round-trips exactly through
    :func:`load_events`."""
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(bytes([FORMAT_VERSION]))
    buf.write(struct.pack("<I", len(samples)))
    for i, s in enumerate(samples):
        if not (0 <= s.label < 2**16 and s.width < 2**16 and s.height < 2**16):
            raise ValueError(f"sample {i} has fields exceeding the container's 16-bit range")
        buf.write(_SAMPLE_HEADER.pack(s.label, s.duration_us, s.width, s.height, len(s.events)))
        buf.write(_events_to_array(s.events).tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_events(path) -> list[EventSample]:
    """Read a dataset container, validating structure and invariants."""
    raw = Path(path).read_bytes()
    off = 0

    def need(n: int, what: str) -> bytes:
        nonlocal off
        if off + n > len(raw):
            raise DatasetFormatError(f"truncated file while reading {what}", off)
        chunk = raw[off : off + n]
        off += n
        return chunk

    if need(4, "magic") != MAGIC:
        raise DatasetFormatError("bad magic; not an event-dataset container", 0)
    version = need(1, "version")[0]
    if version != FORMAT_VERSION:
        raise DatasetFormatError(f"unsupported container version {version}", 4)
    (count,) = struct.unpack("<I", need(4, "sample count"))
    samples = []
    for i in range(count):
        header_off = off
        label, duration_us, width, height, n_events = _SAMPLE_HEADER.unpack(
            need(_SAMPLE_HEADER.size, f"sample {i} header")
        )
        data = need(n_events * _EVENT_DTYPE.itemsize, f"sample {i} events")
        arr = np.frombuffer(data, dtype=_EVENT_DTYPE)
        sample = EventSample(
            events=_events_from_array(arr),
            label=label,
            duration_us=duration_us,
            width=width,
            height=height,
        )
        problems = sample_problems(sample)
        if problems:
            raise DatasetFormatError(f"sample {i} invalid: {problems[0]}", header_off)
        samples.append(sample)
    if off != len(raw):
        raise DatasetFormatError(f"{len(raw) - off} trailing bytes after last sample", off)
    return samples


def metadata_csv(samples: list[EventSample]) -> str:
    """Per-sample metadata table: ``index,label,n_events,duration_us``."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["index", "label", "n_events", "duration_us"])
    for i, s in enumerate(samples):
        writer.writerow([i, s.label, len(s.events), s.duration_us])
    return out.getvalue()


# ---------------------------------------------------------------------------
# Best-effort import of externally obtained .dat recordings
# ---------------------------------------------------------------------------


def import_ncars_dat(
    path,
    label: int,
    duration_us: int | None = None,
    width: int | None = None,
    height: int | None = None,
) -> EventSample:
    """Convert one automotive-benchmark ``.dat`` recording into a sample.

    Best-effort adapter for the common layout: optional ``%``-prefixed
    ASCII header lines, an optional event-type/size byte pair, then 8-byte
    little-endian records of a timestamp word and an address word packing
    x (bits 0-13), y (bits 14-27), and polarity (bit 28).  Sensor dims and
    duration default to the tight bounds of the decoded events.
    """
    raw = Path(path).read_bytes()
    off = 0
    while raw[off : off + 1] == b"%":
        nl = raw.find(b"\n", off)
        if nl < 0:
            raise DatasetFormatError("unterminated header line", off)
        off = nl + 1
    # Event-type/size pair written by some recorders; size is always 8.
    if len(raw) - off >= 2 and raw[off + 1] == 8 and raw[off] < 32:
        off += 2
    body = raw[off:]
    if len(body) % 8 != 0:
        raise DatasetFormatError("event payload is not a multiple of 8 bytes", off)
    words = np.frombuffer(body, dtype="<u4").reshape(-1, 2)
    ts = words[:, 0].astype(np.int64)
    addr = words[:, 1]
    x = (addr & 0x3FFF).astype(np.int64)
    y = ((addr >> 14) & 0x3FFF).astype(np.int64)
    pol = ((addr >> 28) & 0x1).astype(np.int64)
    order = np.argsort(ts, kind="stable")
    ts, x, y, pol = ts[order], x[order], y[order], pol[order]
    if width is None:
        width = int(x.max()) + 1 if len(x) else 1
    if height is None:
        height = int(y.max()) + 1 if len(y) else 1
    if duration_us is None:
        duration_us = int(ts.max()) + 1 if len(ts) else 1
    events = [
        Event(int(xi), int(yi), int(ti), Polarity(int(pi)))
        for xi, yi, ti, pi in zip(x, y, ts, pol)
    ]
    sample = EventSample(events=events, label=label, duration_us=duration_us, width=width, height=height)
    problems = sample_problems(sample)
    if problems:
        raise DatasetFormatError(f"decoded recording invalid: {problems[0]}", off)
    return sample
