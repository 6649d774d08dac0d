"""Small dense-network kernel: layers, reverse-mode gradients, Adam.

Matrices are plain 2-D float64 ``numpy`` arrays with one sample per row.
A layer weight is stored ``[out x in]`` so a forward pass computes
``x @ W.T + b``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

RELU = "relu"
IDENTITY = "identity"
_ACTIVATIONS = (RELU, IDENTITY)


class DimensionError(ValueError):
    """Raised when an array does not have the width an operation expects."""

    def __init__(self, what: str, expected: int, got: int):
        self.what = what
        self.expected = expected
        self.got = got
        super().__init__(f"{what}: expected dimension {expected}, got {got}")


class StaleCacheError(RuntimeError):
    pass


class NonFiniteError(FloatingPointError):
    pass


@dataclass(eq=False)
class Layer:
    weight: np.ndarray  # [out x in]
    bias: np.ndarray  # [out]
    activation: str = IDENTITY

    def __post_init__(self):
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise DimensionError("bias", self.weight.shape[0], self.bias.shape[0])

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


@dataclass(eq=False)
class DenseNet:
    layers: list[Layer]
    # bumped whenever parameters change in place; lets backward() reject caches
    # produced before an update
    version: int = field(default=0, compare=False)

    def __post_init__(self):
        if not self.layers:
            raise ValueError("a DenseNet needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise DimensionError("layer input", prev.out_dim, nxt.in_dim)
        if self.layers[-1].activation != IDENTITY:
            raise ValueError("final layer must be linear")

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def sizes(self) -> list[int]:
        return [self.in_dim] + [layer.out_dim for layer in self.layers]

    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend((layer.weight, layer.bias))
        return out

    def n_params(self) -> int:
        return sum(p.size for p in self.params())

    def touch(self) -> None:
        self.version += 1

    def copy(self) -> "DenseNet":
        return DenseNet(
            [Layer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers],
            version=self.version,
        )

    def same_params(self, other: "DenseNet") -> bool:
        if self.sizes != other.sizes:
            return False
        return all(np.array_equal(a, b) for a, b in zip(self.params(), other.params()))


def init_dense(sizes: Sequence[int], rng: np.random.Generator, hidden=RELU) -> DenseNet:
    """Glorot-uniform weights, zero biases; every layer but the last uses ``hidden``."""
    if len(sizes) < 2:
        raise ValueError("need at least input and output sizes")
    layers = []
    for k, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        act = IDENTITY if k == len(sizes) - 2 else hidden
        layers.append(Layer(w, np.zeros(fan_out), act))
    return DenseNet(layers)


@dataclass
class ForwardCache:
    net_id: int
    version: int
    inputs: list[np.ndarray]  # input to each layer
    pre: list[np.ndarray]  # pre-activation of each layer


def as_matrix(batch, width: int | None = None, what="batch") -> np.ndarray:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise ValueError(f"{what} must be 2-D, got shape {x.shape}")
    if width is not None and x.shape[1] != width:
        raise DimensionError(what, width, x.shape[1])
    return x


def forward(net: DenseNet, batch) -> tuple[np.ndarray, ForwardCache]:
    x = as_matrix(batch, net.in_dim)
    inputs, pre = [], []
    h = x
    for layer in net.layers:
        inputs.append(h)
        a = h @ layer.weight.T + layer.bias
        pre.append(a)
        h = np.maximum(a, 0.0) if layer.activation == RELU else a
    return h, ForwardCache(id(net), net.version, inputs, pre)


def predict(net: DenseNet, batch) -> np.ndarray:
    return forward(net, batch)[0]


def backward(net: DenseNet, cache: ForwardCache, output_grad) -> tuple[list[np.ndarray], np.ndarray]:
    """Backpropagate ``output_grad`` through the cached forward pass.

    Returns gradients ordered like ``net.params()`` and the gradient with
    respect to the batch. The ReLU derivative at exactly 0 is taken as 0.
    """
    if cache.net_id != id(net) or len(cache.inputs) != len(net.layers):
        raise StaleCacheError("cache was produced by a different network")
    if cache.version != net.version:
        raise StaleCacheError(
            f"cache is from parameter version {cache.version}, network is at {net.version}"
        )
    g = as_matrix(output_grad, net.out_dim, "output_grad")
    if g.shape[0] != cache.inputs[0].shape[0]:
        raise DimensionError("output_grad rows", cache.inputs[0].shape[0], g.shape[0])
    grads: list[np.ndarray] = [None] * (2 * len(net.layers))
    for k in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[k]
        if layer.activation == RELU:
            g = g * (cache.pre[k] > 0.0)
        grads[2 * k] = g.T @ cache.inputs[k]
        grads[2 * k + 1] = g.sum(axis=0)
        g = g @ layer.weight
    return grads, g


def mse_sum(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Sum of squared errors and its gradient with respect to ``pred``."""
    diff = pred - target
    return float(np.sum(diff * diff)), 2.0 * diff


def softmax_xent(logits: np.ndarray, labels: np.ndarray, mask: np.ndarray | None = None):
    """Summed cross-entropy over rows; columns where ``mask`` is False are excluded.

    Returns (loss, dloss/dlogits).
    """
    z = np.array(logits, dtype=np.float64)
    if mask is not None:
        z = np.where(mask[None, :], z, -np.inf)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    rows = np.arange(z.shape[0])
    loss = -float(np.sum(z[rows, labels] - np.log(e.sum(axis=1))))
    grad = p.copy()
    grad[rows, labels] -= 1.0
    return loss, grad


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray], **kw) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], **kw)


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState, lr: float) -> None:
    """In-place bias-corrected Adam update of ``params``."""
    if not (len(params) == len(grads) == len(state.m)):
        raise DimensionError("parameter count", len(params), len(grads))
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise DimensionError(f"gradient shape {g.shape} vs parameter", p.size, g.size)
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        if lr != 0.0:
            p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def finite_diff_grad(loss_fn: Callable[[], float], params: Sequence[np.ndarray], step: float = 1e-5) -> list[np.ndarray]:
    """Central-difference gradient of ``loss_fn()`` with respect to each array in ``params``.

    Arrays are perturbed in place and restored afterwards.
    """
    out = []
    for p in params:
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + step
            up = loss_fn()
            flat[idx] = orig - step
            down = loss_fn()
            flat[idx] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NonFiniteError(f"loss is not finite at parameter entry {idx}")
            gflat[idx] = (up - down) / (2.0 * step)
        out.append(g)
    return out


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    """Largest entrywise |a-b| / max(|a|, |b|, floor)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))
