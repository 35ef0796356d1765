"""Discrete-time LIF network with surrogate-gradient training.

Membrane dynamics use a forward-Euler step of the leaky-integrator ODE
with a unit timestep: ``u = v + (v_rest - v + r_in * i) / tau``.  A neuron
whose candidate potential reaches ``v_th`` emits a binary spike and is
hard-reset to ``v_rest``.

Training unrolls the network over layers and timesteps and backpropagates
a rate-MSE loss through both, substituting a rectangular window of width
``width_a`` (height ``1/width_a``, centered on the threshold) for the
spike nonlinearity's derivative and stopping gradients through the reset
path.  The rectangular window is exactly the derivative of a clipped ramp,
so a "relaxed" forward mode that propagates the ramp value instead of the
binary spike (keeping the binary reset) makes the backward pass the true
analytic gradient of a well-defined loss; finite differences of that
relaxed loss validate the whole backward machinery.

All numerics are float64 for reproducibility.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Union

import numpy as np

from .errors import StateError, ValidationError

__all__ = [
    "Conv2d",
    "Dense",
    "ForwardCache",
    "LifParams",
    "NetworkSpec",
    "NetworkState",
    "SurrogateConfig",
    "backward_stbp",
    "default_network",
    "forward_batch",
    "forward_pass",
    "init_state",
    "layer_output_shapes",
    "lif_step",
    "load_checkpoint",
    "rate_mse_loss",
    "save_checkpoint",
    "spec_from_dict",
    "spec_to_dict",
    "surrogate_grad",
    "update_weights",
    "validate_spec",
]


@dataclass(frozen=True)
class LifParams:
    """Leaky integrate-and-fire constants (potentials are dimensionless,
    ``tau`` is in timestep units)."""

    v_rest: float = 0.0
    v_th: float = 0.4
    tau: float = 2.0
    r_in: float = 1.0


@dataclass(frozen=True)
class SurrogateConfig:
    """Rectangular surrogate-derivative window width around ``v_th``."""

    width_a: float = 1.0


@dataclass(frozen=True)
class Dense:
    in_features: int
    out_features: int


@dataclass(frozen=True)
class Conv2d:
    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 1


LayerSpec = Union[Dense, Conv2d]


@dataclass(frozen=True)
class NetworkSpec:
    """Layer stack, input geometry, and shared neuron constants.

    Every layer's linear map is followed elementwise by LIF dynamics.  The
    flattened width of the last layer must equal ``n_classes``.
    """

    layers: tuple[LayerSpec, ...]
    input_shape: tuple[int, int, int]  # (channels, height, width)
    timesteps: int = 10
    n_classes: int = 2
    lif: LifParams = field(default_factory=LifParams)
    surrogate: SurrogateConfig = field(default_factory=SurrogateConfig)


@dataclass
class NetworkState:
    """Trainable parameters: one weight array per layer (no biases)."""

    weights: list[np.ndarray]


@dataclass
class ForwardCache:
    """Per-layer, per-timestep trajectories recorded for the backward pass.

    ``u`` is the pre-reset candidate potential, ``gate`` the binary spike
    indicator used for the reset, ``s_prop`` the value propagated to the
    next layer (equal to ``gate`` in hard mode, the clipped ramp in relaxed
    mode), and ``v_post`` the stored post-reset potential.
    """

    frames: np.ndarray
    u: list[list[np.ndarray]]
    gate: list[list[np.ndarray]]
    s_prop: list[list[np.ndarray]]
    v_post: list[list[np.ndarray]]
    counts: np.ndarray
    relaxed: bool


# ---------------------------------------------------------------------------
# Spec plumbing
# ---------------------------------------------------------------------------


def layer_output_shapes(spec: NetworkSpec) -> list[tuple[int, ...]]:
    """Per-layer output shapes (excluding the batch axis); raises on any
    incompatibility."""
    problems, shapes = _shape_chain(spec)
    if problems:
        raise ValidationError(problems)
    return shapes


def _shape_chain(spec: NetworkSpec):
    problems: list[str] = []
    shapes: list[tuple[int, ...]] = []
    shape: tuple[int, ...] = tuple(spec.input_shape)
    if len(shape) != 3 or any(d < 1 for d in shape):
        return [f"input_shape must be (channels, height, width) positive, got {shape}"], []
    for i, layer in enumerate(spec.layers):
        if isinstance(layer, Conv2d):
            if len(shape) != 3:
                problems.append(f"layer {i}: conv2d needs a (C,H,W) input, got {shape}")
                break
            c, h, w = shape
            if layer.in_channels != c:
                problems.append(f"layer {i}: conv2d expects {layer.in_channels} channels, input has {c}")
            if layer.kernel < 1 or layer.stride < 1:
                problems.append(f"layer {i}: kernel and stride must be >= 1")
                break
            if layer.kernel > h or layer.kernel > w:
                problems.append(f"layer {i}: kernel {layer.kernel} exceeds input {h}x{w}")
                break
            shape = (
                layer.out_channels,
                (h - layer.kernel) // layer.stride + 1,
                (w - layer.kernel) // layer.stride + 1,
            )
        elif isinstance(layer, Dense):
            flat = int(np.prod(shape))
            if layer.in_features != flat:
                problems.append(
                    f"layer {i}: dense expects {layer.in_features} inputs, previous layer yields {flat}"
                )
            shape = (layer.out_features,)
        else:
            problems.append(f"layer {i}: unknown layer type {type(layer).__name__}")
            break
        shapes.append(shape)
    return problems, shapes


def validate_spec(spec: NetworkSpec) -> list[str]:
    """Every violated spec invariant (empty list if valid)."""
    problems, shapes = _shape_chain(spec)
    if not spec.layers:
        problems.append("network needs at least one layer")
    if spec.timesteps < 1:
        problems.append(f"timesteps must be >= 1, got {spec.timesteps}")
    if spec.n_classes < 1:
        problems.append(f"n_classes must be >= 1, got {spec.n_classes}")
    if not problems and shapes and int(np.prod(shapes[-1])) != spec.n_classes:
        problems.append(
            f"final layer yields {int(np.prod(shapes[-1]))} outputs, expected n_classes={spec.n_classes}"
        )
    p = spec.lif
    if p.tau <= 0:
        problems.append(f"tau must be positive, got {p.tau}")
    if p.v_th <= p.v_rest:
        problems.append(f"v_th must exceed v_rest ({p.v_th} <= {p.v_rest})")
    if p.r_in <= 0:
        problems.append(f"r_in must be positive, got {p.r_in}")
    if spec.surrogate.width_a <= 0:
        problems.append(f"width_a must be positive, got {spec.surrogate.width_a}")
    return problems


def default_network(
    height: int,
    width: int,
    timesteps: int = 10,
    n_classes: int = 2,
    lif: LifParams | None = None,
    surrogate: SurrogateConfig | None = None,
) -> NetworkSpec:
    """Stock desk-scale stack: 2->8 conv (k5, s2), dense 32, dense head."""
    conv = Conv2d(in_channels=2, out_channels=8, kernel=5, stride=2)
    oh = (height - conv.kernel) // conv.stride + 1
    ow = (width - conv.kernel) // conv.stride + 1
    return NetworkSpec(
        layers=(
            conv,
            Dense(in_features=conv.out_channels * oh * ow, out_features=32),
            Dense(in_features=32, out_features=n_classes),
        ),
        input_shape=(2, height, width),
        timesteps=timesteps,
        n_classes=n_classes,
        lif=lif or LifParams(),
        surrogate=surrogate or SurrogateConfig(),
    )


def init_state(spec: NetworkSpec, seed: int) -> NetworkState:
    """Seeded uniform init in [-b, b] with ``b = sqrt(1 / fan_in)``."""
    problems = validate_spec(spec)
    if problems:
        raise ValidationError(problems)
    rng = np.random.default_rng(seed)
    weights = []
    for layer in spec.layers:
        if isinstance(layer, Dense):
            fan_in = layer.in_features
            shape = (layer.out_features, layer.in_features)
        else:
            fan_in = layer.in_channels * layer.kernel * layer.kernel
            shape = (layer.out_channels, layer.in_channels, layer.kernel, layer.kernel)
        bound = float(np.sqrt(1.0 / fan_in))
        weights.append(rng.uniform(-bound, bound, size=shape))
    return NetworkState(weights=weights)


# ---------------------------------------------------------------------------
# Neuron dynamics
# ---------------------------------------------------------------------------


def _charge(v, drive, p: LifParams):
    """One Euler step of the leaky integrator: leak toward rest plus drive."""
    return v + (p.v_rest - v + drive) / p.tau


def lif_step(v, i_in, p: LifParams):
    """Advance one membrane timestep; returns ``(v_next, spike)``.

    The candidate potential integrates the input current; reaching the
    threshold emits a spike (1.0) and resets the stored potential to rest
    exactly, otherwise the candidate is kept.
    """
    v = np.asarray(v, dtype=np.float64)
    i_in = np.asarray(i_in, dtype=np.float64)
    if not (np.all(np.isfinite(v)) and np.all(np.isfinite(i_in))):
        raise FloatingPointError("non-finite membrane potential or input current")
    u = _charge(v, p.r_in * i_in, p)
    spiked = u >= p.v_th
    v_next = np.where(spiked, p.v_rest, u)
    return v_next, spiked.astype(np.float64)


def surrogate_grad(v_candidate, cfg: SurrogateConfig, p: LifParams):
    """Rectangular stand-in for the spike derivative: ``1/width_a`` inside
    the window ``|v - v_th| <= width_a / 2``, zero outside (unit area)."""
    v_candidate = np.asarray(v_candidate, dtype=np.float64)
    inside = np.abs(v_candidate - p.v_th) <= cfg.width_a / 2.0
    return inside.astype(np.float64) / cfg.width_a


# ---------------------------------------------------------------------------
# Layer linear maps
# ---------------------------------------------------------------------------


def _im2col(x: np.ndarray, kernel: int, stride: int) -> np.ndarray:
    """Patch matrix of shape (N * out_h * out_w, C * k * k)."""
    view = np.lib.stride_tricks.sliding_window_view(x, (kernel, kernel), axis=(2, 3))
    view = view[:, :, ::stride, ::stride]
    n, c, oh, ow, _, _ = view.shape
    return np.ascontiguousarray(view.transpose(0, 2, 3, 1, 4, 5)).reshape(n * oh * ow, c * kernel * kernel)


def _conv_forward(x: np.ndarray, w: np.ndarray, stride: int) -> np.ndarray:
    n, _, h, wd = x.shape
    o, _, k, _ = w.shape
    oh = (h - k) // stride + 1
    ow = (wd - k) // stride + 1
    cols = _im2col(x, k, stride)
    out = cols @ w.reshape(o, -1).T
    return out.reshape(n, oh, ow, o).transpose(0, 3, 1, 2)


def _conv_grad_w(x: np.ndarray, g: np.ndarray, w_shape, stride: int) -> np.ndarray:
    o, c, k, _ = w_shape
    n, _, oh, ow = g.shape
    cols = _im2col(x, k, stride)
    g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * oh * ow, o)
    return (g2.T @ cols).reshape(o, c, k, k)


def _conv_grad_x(g: np.ndarray, w: np.ndarray, x_shape, stride: int) -> np.ndarray:
    _, _, oh, ow = g.shape
    k = w.shape[2]
    dx = np.zeros(x_shape, dtype=np.float64)
    # (N, oh, ow, C, k, k): contribution of each output position to each tap.
    tg = np.tensordot(g, w, axes=([1], [0]))
    for a in range(k):
        rows = slice(a, a + (oh - 1) * stride + 1, stride)
        for b in range(k):
            cols = slice(b, b + (ow - 1) * stride + 1, stride)
            dx[:, :, rows, cols] += tg[:, :, :, :, a, b].transpose(0, 3, 1, 2)
    return dx


def _layer_forward(layer: LayerSpec, w: np.ndarray, x: np.ndarray) -> np.ndarray:
    if isinstance(layer, Dense):
        return x.reshape(x.shape[0], -1) @ w.T
    return _conv_forward(x, w, layer.stride)


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------


def forward_batch(
    spec: NetworkSpec,
    state: NetworkState,
    frames: np.ndarray,
    record_cache: bool = True,
    relaxed: bool = False,
):
    """Run ``timesteps`` steps over a batch of frame stacks.

    ``frames`` has shape (N, T, C, H, W).  Returns per-class spike counts
    of shape (N, n_classes) and, when ``record_cache``, the trajectories
    needed by :func:`backward_stbp`.  Membranes start from rest for every
    call, so repeated evaluation of the same batch is side-effect free.
    """
    frames = np.asarray(frames, dtype=np.float64)
    expected = (spec.timesteps, *spec.input_shape)
    if frames.ndim != 5 or frames.shape[1:] != expected:
        raise ValueError(f"frames must have shape (N, {', '.join(map(str, expected))}), got {frames.shape}")
    n = frames.shape[0]
    p = spec.lif
    width_a = spec.surrogate.width_a
    shapes = layer_output_shapes(spec)
    v = [np.full((n, *shape), p.v_rest, dtype=np.float64) for shape in shapes]
    counts = np.zeros((n, spec.n_classes), dtype=np.float64)
    cache = (
        ForwardCache(
            frames=frames,
            u=[[] for _ in spec.layers],
            gate=[[] for _ in spec.layers],
            s_prop=[[] for _ in spec.layers],
            v_post=[[] for _ in spec.layers],
            counts=counts,
            relaxed=relaxed,
        )
        if record_cache
        else None
    )
    for t in range(spec.timesteps):
        x = frames[:, t]
        for l, layer in enumerate(spec.layers):
            drive = p.r_in * _layer_forward(layer, state.weights[l], x)
            u = _charge(v[l], drive, p)
            gate_bool = u >= p.v_th
            gate = gate_bool.astype(np.float64)
            if relaxed:
                s = np.clip((u - p.v_th) / width_a + 0.5, 0.0, 1.0)
            else:
                s = gate
            v[l] = np.where(gate_bool, p.v_rest, u)
            if cache is not None:
                cache.u[l].append(u)
                cache.gate[l].append(gate)
                cache.s_prop[l].append(s)
                cache.v_post[l].append(v[l])
            x = s
        counts += x.reshape(n, -1)
    return counts, cache


def forward_pass(spec: NetworkSpec, state: NetworkState, frames: np.ndarray):
    """Single-sample convenience wrapper; ``frames`` is (T, C, H, W)."""
    counts, cache = forward_batch(spec, state, np.asarray(frames)[None, ...])
    return counts[0], cache


def rate_mse_loss(counts: np.ndarray, targets: np.ndarray, timesteps: int, loss_scale: float = 1.0) -> float:
    """Summed-over-batch MSE between firing rates and one-hot targets.

    Per sample the loss is the mean over classes of the squared rate
    error; the batch loss is the sum of per-sample losses (the optimizer
    divides by the batch size).
    """
    rates = counts / timesteps
    onehot = np.zeros_like(rates)
    onehot[np.arange(len(targets)), targets] = 1.0
    return float(loss_scale * np.mean((rates - onehot) ** 2, axis=1).sum())


def backward_stbp(
    spec: NetworkSpec,
    state: NetworkState,
    cache: ForwardCache,
    targets: np.ndarray,
    loss_scale: float = 1.0,
) -> list[np.ndarray]:
    """Gradients of the batch rate-MSE loss w.r.t. every weight array.

    Backpropagates through layers and timesteps, replacing the spike
    derivative with the rectangular surrogate and stopping gradients
    through the reset (a neuron that fired passes no membrane gradient to
    its own past).  Gradients are summed over the batch.
    """
    if cache is None:
        raise StateError("backward pass requires the forward cache; run forward with record_cache=True")
    targets = np.asarray(targets)
    n = cache.frames.shape[0]
    if targets.shape != (n,):
        raise ValueError(f"targets must have shape ({n},), got {targets.shape}")
    if targets.min() < 0 or targets.max() >= spec.n_classes:
        raise ValueError("target class index out of range")
    p = spec.lif
    width_a = spec.surrogate.width_a
    t_steps = spec.timesteps
    n_layers = len(spec.layers)

    rates = cache.counts / t_steps
    onehot = np.zeros_like(rates)
    onehot[np.arange(n), targets] = 1.0
    # d(batch loss)/d(count) with the per-sample mean over classes.
    g_counts = loss_scale * 2.0 * (rates - onehot) / (spec.n_classes * t_steps)

    decay = 1.0 - 1.0 / p.tau
    drive_gain = p.r_in / p.tau
    grads = [np.zeros_like(w) for w in state.weights]
    g_v = [np.zeros_like(cache.u[l][0]) for l in range(n_layers)]

    for t in reversed(range(t_steps)):
        g_above = g_counts
        for l in reversed(range(n_layers)):
            u = cache.u[l][t]
            gate = cache.gate[l][t]
            g_s = g_above.reshape(u.shape)
            surr = (np.abs(u - p.v_th) <= width_a / 2.0).astype(np.float64) / width_a
            g_u = g_s * surr + g_v[l] * (1.0 - gate)
            g_v[l] = g_u * decay
            g_c = g_u * drive_gain
            below = cache.frames[:, t] if l == 0 else cache.s_prop[l - 1][t]
            layer = spec.layers[l]
            if isinstance(layer, Dense):
                gc2 = g_c.reshape(n, -1)
                grads[l] += gc2.T @ below.reshape(n, -1)
                if l > 0:
                    g_above = gc2 @ state.weights[l]
            else:
                grads[l] += _conv_grad_w(below, g_c, state.weights[l].shape, layer.stride)
                if l > 0:
                    g_above = _conv_grad_x(g_c, state.weights[l], below.shape, layer.stride)
    return grads


def update_weights(state: NetworkState, grads: list[np.ndarray], lr: float, batch_size: int) -> NetworkState:
    """In-place SGD step with the batch-mean gradient: ``w -= lr * g / B``."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    if len(grads) != len(state.weights):
        raise ValueError(f"expected {len(state.weights)} gradient arrays, got {len(grads)}")
    for i, (w, g) in enumerate(zip(state.weights, grads)):
        if w.shape != g.shape:
            raise ValueError(f"gradient {i} shape {g.shape} does not match weight shape {w.shape}")
        w -= lr * (g / batch_size)
    return state


def weights_finite(state: NetworkState) -> bool:
    return all(np.all(np.isfinite(w)) for w in state.weights)


# ---------------------------------------------------------------------------
# Spec dict round trip and checkpoints
# ---------------------------------------------------------------------------


def spec_to_dict(spec: NetworkSpec) -> dict:
    layers = []
    for layer in spec.layers:
        if isinstance(layer, Dense):
            layers.append({"type": "dense", "in_features": layer.in_features, "out_features": layer.out_features})
        else:
            layers.append(
                {
                    "type": "conv2d",
                    "in_channels": layer.in_channels,
                    "out_channels": layer.out_channels,
                    "kernel": layer.kernel,
                    "stride": layer.stride,
                }
            )
    return {
        "layers": layers,
        "input_shape": list(spec.input_shape),
        "timesteps": spec.timesteps,
        "n_classes": spec.n_classes,
        "lif": {"v_rest": spec.lif.v_rest, "v_th": spec.lif.v_th, "tau": spec.lif.tau, "r_in": spec.lif.r_in},
        "surrogate": {"width_a": spec.surrogate.width_a},
    }


def spec_from_dict(data: dict) -> NetworkSpec:
    layers = []
    for entry in data["layers"]:
        if entry["type"] == "dense":
            layers.append(Dense(in_features=entry["in_features"], out_features=entry["out_features"]))
        elif entry["type"] == "conv2d":
            layers.append(
                Conv2d(
                    in_channels=entry["in_channels"],
                    out_channels=entry["out_channels"],
                    kernel=entry["kernel"],
                    stride=entry.get("stride", 1),
                )
            )
        else:
            raise ValidationError([f"unknown layer type {entry['type']!r}"])
    return NetworkSpec(
        layers=tuple(layers),
        input_shape=tuple(data["input_shape"]),
        timesteps=data["timesteps"],
        n_classes=data["n_classes"],
        lif=LifParams(**data["lif"]),
        surrogate=SurrogateConfig(**data["surrogate"]),
    )


CHECKPOINT_MAGIC = b"SNCK"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, spec: NetworkSpec, state: NetworkState, seed: int) -> None:
    """Versioned binary blob of spec + weights + seed; bit-exact round trip."""
    header = json.dumps({"spec": spec_to_dict(spec), "seed": seed}, sort_keys=True).encode()
    out = bytearray()
    out += CHECKPOINT_MAGIC
    out.append(CHECKPOINT_VERSION)
    out += struct.pack("<I", len(header))
    out += header
    out += struct.pack("<I", len(state.weights))
    for w in state.weights:
        out += struct.pack("<I", w.ndim)
        out += struct.pack(f"<{w.ndim}I", *w.shape)
        out += np.ascontiguousarray(w, dtype="<f8").tobytes()
    Path(path).write_bytes(bytes(out))


def load_checkpoint(path) -> tuple[NetworkSpec, NetworkState, int]:
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ValueError("not a checkpoint file (bad magic)")
    if raw[4] != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {raw[4]}")
    off = 5
    (hlen,) = struct.unpack_from("<I", raw, off)
    off += 4
    header = json.loads(raw[off : off + hlen].decode())
    off += hlen
    (n_weights,) = struct.unpack_from("<I", raw, off)
    off += 4
    weights = []
    for _ in range(n_weights):
        (ndim,) = struct.unpack_from("<I", raw, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}I", raw, off)
        off += 4 * ndim
        size = int(np.prod(shape)) * 8
        weights.append(np.frombuffer(raw[off : off + size], dtype="<f8").reshape(shape).copy())
        off += size
    return spec_from_dict(header["spec"]), NetworkState(weights=weights), header["seed"]
