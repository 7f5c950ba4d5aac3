"""A tiny fully connected scalar field f(x, y, z) and its derivatives.

The network applies tanh after every layer, including the last, so outputs
live strictly inside (-1, 1) and the field is odd under negation of the
final layer's parameters.  Parameters are stored as one flat vector with
per-layer views: for each layer, the weight matrix row-major, then the bias
vector.  The same layout, prefixed with the layer-size list, is the
snapshot file format (all little-endian):

    uint32   layer count L
    uint32*L layer sizes
    float64* parameters, per layer: weights row-major, then biases

Everything here is deterministic given (seed, inputs, call order): no
hidden global RNG, reductions in fixed order.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

DEFAULT_LAYER_SIZES = (3, 6, 12, 24, 12, 6, 3, 1)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class MlpSpec:
    layer_sizes: tuple[int, ...] = DEFAULT_LAYER_SIZES

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2:
            raise ValueError("need at least an input and an output layer")
        if any(s < 1 for s in sizes):
            raise ValueError("layer sizes must be positive")
        if sizes[0] != 3:
            raise ValueError(f"first layer must take 3 coordinates, got {sizes[0]}")
        if sizes[-1] != 1:
            raise ValueError(f"last layer must emit 1 value, got {sizes[-1]}")

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes) - 1

    @property
    def param_count(self) -> int:
        return sum(a * b + b for a, b in zip(self.layer_sizes, self.layer_sizes[1:]))

    def slices(self) -> list[tuple[slice, slice]]:
        """Per-layer (weight slice, bias slice) into the flat parameter vector."""
        out = []
        off = 0
        for a, b in zip(self.layer_sizes, self.layer_sizes[1:]):
            w = slice(off, off + a * b)
            off += a * b
            bias = slice(off, off + b)
            off += b
            out.append((w, bias))
        return out


@dataclass
class MlpParams:
    spec: MlpSpec
    flat: np.ndarray

    def __post_init__(self):
        self.flat = np.asarray(self.flat)
        if self.flat.shape != (self.spec.param_count,):
            raise ValueError(f"expected {self.spec.param_count} parameters, got {self.flat.shape}")
        if not np.all(np.isfinite(self.flat)):
            raise ValueError("parameters must be finite")

    def views(self) -> tuple[list[np.ndarray], list[np.ndarray]]:
        """(weight matrices, bias vectors) as views into the flat vector."""
        sizes = self.spec.layer_sizes
        weights, biases = [], []
        for (wsl, bsl), (a, b) in zip(self.spec.slices(), zip(sizes, sizes[1:])):
            weights.append(self.flat[wsl].reshape(a, b))
            biases.append(self.flat[bsl])
        return weights, biases

    def copy(self) -> "MlpParams":
        return MlpParams(self.spec, self.flat.copy())

    def astype(self, dtype) -> "MlpParams":
        return MlpParams(self.spec, self.flat.astype(dtype))


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def fresh(cls, params: MlpParams) -> "AdamState":
        return cls(np.zeros_like(params.flat), np.zeros_like(params.flat), 0)


def init_params(spec: MlpSpec, seed: int, dtype=np.float64) -> MlpParams:
    """Weights uniform in (-1/sqrt(fan_in), +1/sqrt(fan_in)), biases zero."""
    rng = np.random.default_rng(seed)
    flat = np.zeros(spec.param_count, dtype=dtype)
    params = MlpParams(spec, flat)
    weights, _ = params.views()
    for w in weights:
        fan_in = w.shape[0]
        lim = 1.0 / np.sqrt(fan_in)
        w[...] = rng.uniform(-lim, lim, size=w.shape)
    return params


class Workspace:
    """Preallocated buffers for repeated forward/backward over one batch size.

    The trainer reuses a workspace across tens of thousands of iterations;
    allocating activations per call would dominate the runtime.  ``backward``
    consumes the activations stored by the last ``forward`` (destructively,
    except the input), so call order is forward -> backward.
    """

    def __init__(self, spec: MlpSpec, n_points: int, dtype=np.float64):
        self.spec = spec
        self.n_points = n_points
        self.dtype = np.dtype(dtype)
        sizes = spec.layer_sizes
        self.acts = [None] + [np.empty((n_points, s), dtype) for s in sizes[1:]]
        self.deltas = [None] + [np.empty((n_points, s), dtype) for s in sizes[1:]]
        self.grad = np.zeros(spec.param_count, dtype=dtype)
        self._gviews = MlpParams(spec, self.grad).views()

    def forward(self, params: MlpParams, points: np.ndarray) -> np.ndarray:
        """Field values for a (n_points, 3) batch; activations are retained."""
        weights, biases = params.views()
        self.acts[0] = points
        for l in range(self.spec.n_layers):
            a = self.acts[l + 1]
            np.dot(self.acts[l], weights[l], out=a)
            a += biases[l]
            np.tanh(a, out=a)
        return self.acts[-1][:, 0]

    def backward(self, params: MlpParams, upstream: np.ndarray) -> np.ndarray:
        """Gradient of sum_i upstream_i * f(p_i) for the last forward batch.

        Returns the workspace's flat gradient buffer (valid until next call).
        Hidden activations are overwritten in the process.
        """
        weights, _ = params.views()
        gw, gb = self._gviews
        acts, deltas = self.acts, self.deltas
        top = self.spec.n_layers
        d = deltas[top]
        np.multiply(acts[top], acts[top], out=d)
        np.subtract(1.0, d, out=d)
        d *= upstream[:, None]
        for l in range(top - 1, -1, -1):
            np.dot(acts[l].T, deltas[l + 1], out=gw[l])
            np.sum(deltas[l + 1], axis=0, out=gb[l])
            if l > 0:
                np.dot(deltas[l + 1], weights[l].T, out=deltas[l])
                a = acts[l]  # safe to destroy: gw[l] above was its last reader
                np.multiply(a, a, out=a)
                np.subtract(1.0, a, out=a)
                deltas[l] *= a
        return self.grad


def forward(params: MlpParams, points: np.ndarray) -> np.ndarray:
    """Evaluate the field at a batch of (x, y, z) points; values in (-1, 1)."""
    points = np.asarray(points, dtype=params.flat.dtype)
    if points.ndim != 2 or points.shape[1] != 3:
        raise ValueError(f"points must have shape (n, 3), got {points.shape}")
    if not np.all(np.isfinite(points)):
        raise ValueError("points must be finite")
    ws = Workspace(params.spec, len(points), points.dtype)
    return ws.forward(params, points).copy()


def backward(params: MlpParams, points: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Flat gradient of sum_i upstream_i * f(p_i) with respect to parameters."""
    points = np.asarray(points, dtype=params.flat.dtype)
    upstream = np.asarray(upstream, dtype=params.flat.dtype)
    if upstream.shape != (len(points),):
        raise ValueError(f"upstream shape {upstream.shape} does not match {len(points)} points")
    if not np.all(np.isfinite(upstream)):
        raise ValueError("upstream must be finite")
    ws = Workspace(params.spec, len(points), points.dtype)
    ws.forward(params, points)
    return ws.backward(params, upstream).copy()


def _forward_keep(params: MlpParams, points: np.ndarray) -> list[np.ndarray]:
    weights, biases = params.views()
    acts = [points]
    for w, b in zip(weights, biases):
        acts.append(np.tanh(acts[-1] @ w + b))
    return acts


def spatial_gradient(params: MlpParams, points: np.ndarray) -> np.ndarray:
    """Per-point (df/dx, df/dy, df/dz), shape (n, 3)."""
    points = np.asarray(points, dtype=params.flat.dtype)
    if not np.all(np.isfinite(points)):
        raise ValueError("points must be finite")
    weights, _ = params.views()
    acts = _forward_keep(params, points)
    v = 1.0 - acts[-1] ** 2
    for l in range(len(weights) - 1, 0, -1):
        v = (v @ weights[l].T) * (1.0 - acts[l] ** 2)
    return v @ weights[0].T


def gradnorm_backward(params: MlpParams, points: np.ndarray, coeffs: np.ndarray):
    """Value and parameter gradient of S = sum_i coeffs_i * ||grad f(p_i)||^2.

    This differentiates through the spatial-gradient computation itself
    (second-order in the network), which is what training against a
    gradient-norm loss term requires.
    """
    points = np.asarray(points, dtype=params.flat.dtype)
    coeffs = np.asarray(coeffs, dtype=params.flat.dtype)
    weights, _ = params.views()
    n_layers = len(weights)
    acts = _forward_keep(params, points)
    sq = [None] + [1.0 - acts[l] ** 2 for l in range(1, n_layers + 1)]

    # forward sweep of the gradient computation, keeping intermediates
    v = [None] * (n_layers + 1)
    u = [None] * (n_layers + 1)
    v[n_layers] = sq[n_layers]
    for l in range(n_layers - 1, 0, -1):
        u[l] = v[l + 1] @ weights[l].T
        v[l] = u[l] * sq[l]
    g = v[1] @ weights[0].T
    value = float(np.sum(coeffs * np.sum(g * g, axis=1)))

    grad = np.zeros(params.spec.param_count, dtype=params.flat.dtype)
    gw, gb = MlpParams(params.spec, grad).views()

    g_bar = 2.0 * coeffs[:, None] * g
    abar = [None] + [np.zeros_like(acts[l]) for l in range(1, n_layers + 1)]
    vbar = g_bar @ weights[0]
    gw[0] += g_bar.T @ v[1]
    for l in range(1, n_layers):
        ubar = vbar * sq[l]
        abar[l] += (vbar * u[l]) * (-2.0 * acts[l])
        gw[l] += ubar.T @ v[l + 1]
        vbar = ubar @ weights[l]
    abar[n_layers] += vbar * (-2.0 * acts[n_layers])

    # primal backprop of sum_l <abar_l, a_l>
    delta = np.zeros_like(acts[n_layers])
    for l in range(n_layers, 0, -1):
        delta = (delta + abar[l]) * sq[l]
        gw[l - 1] += acts[l - 1].T @ delta
        gb[l - 1] += delta.sum(axis=0)
        if l > 1:
            delta = delta @ weights[l - 1].T
    return value, grad


def adam_step(
    params: MlpParams,
    grad: np.ndarray,
    state: AdamState,
    lr: float,
    weight_decay: float = 0.0,
    beta1: float = ADAM_BETA1,
    beta2: float = ADAM_BETA2,
    eps: float = ADAM_EPS,
    decoupled: bool = False,
) -> tuple[MlpParams, AdamState]:
    """One Adam update, in place on ``params`` and ``state``.

    Weight decay is L2-coupled by default (added to the gradient before the
    moment updates); ``decoupled=True`` subtracts lr * wd * theta directly
    instead.
    """
    if grad.shape != params.flat.shape:
        raise ValueError(f"gradient shape {grad.shape} does not match parameters {params.flat.shape}")
    if not np.all(np.isfinite(grad)):
        bad = int(np.flatnonzero(~np.isfinite(grad))[0])
        for layer, (wsl, bsl) in enumerate(params.spec.slices()):
            if wsl.start <= bad < bsl.stop:
                raise FloatingPointError(f"non-finite gradient in layer {layer}")
        raise FloatingPointError("non-finite gradient")
    theta = params.flat
    if weight_decay != 0.0 and not decoupled:
        grad = grad + weight_decay * theta
    state.t += 1
    state.m *= beta1
    state.m += (1.0 - beta1) * grad
    state.v *= beta2
    state.v += (1.0 - beta2) * np.square(grad)
    m_hat = state.m / (1.0 - beta1 ** state.t)
    v_hat = state.v / (1.0 - beta2 ** state.t)
    theta -= lr * m_hat / (np.sqrt(v_hat) + eps)
    if weight_decay != 0.0 and decoupled:
        theta -= lr * weight_decay * theta
    return params, state


def save_params(params: MlpParams, path) -> None:
    """Write a snapshot in the documented byte layout (always float64)."""
    sizes = np.asarray(params.spec.layer_sizes, dtype="<u4")
    header = np.asarray([len(params.spec.layer_sizes)], dtype="<u4")
    body = params.flat.astype("<f8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(header.tobytes() + sizes.tobytes() + body.tobytes())
    tmp.replace(path)


def load_params(path) -> MlpParams:
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise ValueError(f"{path}: truncated parameter snapshot")
    n = int(np.frombuffer(raw[:4], dtype="<u4")[0])
    head = 4 + 4 * n
    if len(raw) < head:
        raise ValueError(f"{path}: truncated layer-size list")
    sizes = tuple(int(s) for s in np.frombuffer(raw[4:head], dtype="<u4"))
    spec = MlpSpec(sizes)
    flat = np.frombuffer(raw[head:], dtype="<f8")
    if flat.shape != (spec.param_count,):
        raise ValueError(f"{path}: expected {spec.param_count} parameters, found {flat.size}")
    return MlpParams(spec, flat.astype(np.float64))
