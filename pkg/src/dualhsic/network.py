"""A small feedforward classifier ``h = g(f(x))`` with manual backpropagation.

The encoder ``f`` has ``L`` hidden layers whose post-activation outputs
``Z_1..Z_L`` are recorded in a :class:`ForwardTrace`.  :func:`backward`
accepts gradients injected at any of those outputs in addition to the
gradient at the logits, which is how the HSIC terms reach the weights.

Hidden layers are numbered from 1, matching ``Z_1..Z_L``.  Weights are
stored ``(fan_in, fan_out)`` so a layer computes ``x @ W + b``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .numerics import ShapeError

ACTIVATIONS = ("relu", "tanh")


class TrainingDivergenceError(FloatingPointError):
    """A loss or gradient became non-finite."""


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden_dims: tuple[int, ...]
    num_classes: int
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if not self.hidden_dims:
            raise ValueError("an MLP needs at least one hidden layer")
        if min(self.input_dim, self.num_classes, *self.hidden_dims) < 1:
            raise ValueError("all layer widths must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def num_layers(self) -> int:
        return len(self.hidden_dims)

    @property
    def dims(self) -> list[int]:
        return [self.input_dim, *self.hidden_dims, self.num_classes]

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_dims": list(self.hidden_dims),
            "num_classes": self.num_classes,
            "activation": self.activation,
        }


def _act(name, pre):
    if name == "relu":
        return np.maximum(pre, 0.0)
    return np.tanh(pre)


def _act_grad(name, pre, out, grad_out):
    if name == "relu":
        return grad_out * (pre > 0.0)
    return grad_out * (1.0 - out * out)


def _init_weight(rng, fan_in, fan_out, activation):
    # He-uniform for relu, LeCun-uniform for tanh
    limit = np.sqrt((6.0 if activation == "relu" else 3.0) / fan_in)
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


@dataclass
class MlpParams:
    """Encoder layers ``f1..fL`` followed by the classifier ``g``."""

    spec: MlpSpec
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    init_seed: int | None = None
    init_scheme: str = "fan-in-uniform"

    def named(self) -> dict[str, np.ndarray]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            tag = "g" if i == len(self.weights) - 1 else f"f{i + 1}"
            out[f"{tag}.W"] = w
            out[f"{tag}.b"] = b
        return out

    def with_arrays(self, arrays: dict[str, np.ndarray]) -> "MlpParams":
        n = len(self.weights)
        tags = [f"f{i + 1}" for i in range(n - 1)] + ["g"]
        return replace(
            self,
            weights=[arrays[f"{t}.W"] for t in tags],
            biases=[arrays[f"{t}.b"] for t in tags],
        )


@dataclass
class ProjectionHead:
    """Two-layer perceptron ``d -> 4d -> d`` used for the alignment loss."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    activation: str = "relu"

    @property
    def width(self) -> int:
        return self.w1.shape[0]

    def named(self) -> dict[str, np.ndarray]:
        return {"p1.W": self.w1, "p1.b": self.b1, "p2.W": self.w2, "p2.b": self.b2}

    def with_arrays(self, arrays: dict[str, np.ndarray]) -> "ProjectionHead":
        return replace(self, w1=arrays["p1.W"], b1=arrays["p1.b"], w2=arrays["p2.W"], b2=arrays["p2.b"])


@dataclass
class ForwardTrace:
    x: np.ndarray
    pre: list[np.ndarray]
    hidden: list[np.ndarray]
    logits: np.ndarray

    @property
    def num_layers(self) -> int:
        return len(self.hidden)

    def z(self, j: int) -> np.ndarray:
        """Post-activation output of hidden layer ``j`` (1-based)."""
        if not 1 <= j <= len(self.hidden):
            raise IndexError(f"layer {j} outside 1..{len(self.hidden)}")
        return self.hidden[j - 1]


def init_params(spec: MlpSpec, rng: np.random.Generator, seed: int | None = None) -> MlpParams:
    dims = spec.dims
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        weights.append(_init_weight(rng, fan_in, fan_out, spec.activation))
        biases.append(np.zeros(fan_out))
    return MlpParams(spec=spec, weights=weights, biases=biases, init_seed=seed)


def init_head(width: int, rng: np.random.Generator, activation: str = "relu") -> ProjectionHead:
    inner = 4 * width
    return ProjectionHead(
        w1=_init_weight(rng, width, inner, activation),
        b1=np.zeros(inner),
        w2=_init_weight(rng, inner, width, activation),
        b2=np.zeros(width),
        activation=activation,
    )


def forward(params: MlpParams, x) -> ForwardTrace:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.spec.input_dim:
        raise ShapeError(f"expected input of width {params.spec.input_dim}, got shape {x.shape}")
    act = params.spec.activation
    pre, hidden = [], []
    h = x
    for w, b in zip(params.weights[:-1], params.biases[:-1]):
        a = h @ w + b
        h = _act(act, a)
        pre.append(a)
        hidden.append(h)
    logits = h @ params.weights[-1] + params.biases[-1]
    return ForwardTrace(x=x, pre=pre, hidden=hidden, logits=logits)


def _normalise_injections(grad_hidden, trace: ForwardTrace) -> dict[int, np.ndarray]:
    if grad_hidden is None:
        return {}
    items = grad_hidden.items() if isinstance(grad_hidden, dict) else grad_hidden
    merged: dict[int, np.ndarray] = {}
    for j, g in items:
        if not 1 <= j <= trace.num_layers:
            raise IndexError(f"injected gradient for layer {j} outside 1..{trace.num_layers}")
        g = np.asarray(g, dtype=np.float64)
        if g.shape != trace.hidden[j - 1].shape:
            raise ShapeError(f"gradient for layer {j} has shape {g.shape}, expected {trace.hidden[j - 1].shape}")
        merged[j] = merged[j] + g if j in merged else g
    return merged


def backward(params: MlpParams, trace: ForwardTrace, grad_logits, grad_hidden=None) -> dict[str, np.ndarray]:
    """Parameter gradients given dLoss/dlogits and optional dLoss/dZ_j injections.

    ``grad_hidden`` is a mapping or iterable of ``(layer, gradient)`` pairs;
    repeated layers are summed.  Returns a dict keyed like
    :meth:`MlpParams.named`.
    """
    grad_logits = np.asarray(grad_logits, dtype=np.float64)
    if grad_logits.shape != trace.logits.shape:
        raise ShapeError(f"grad_logits shape {grad_logits.shape} != logits shape {trace.logits.shape}")
    injected = _normalise_injections(grad_hidden, trace)
    act = params.spec.activation
    L = trace.num_layers
    grads = {}

    top = trace.hidden[-1]
    grads["g.W"] = top.T @ grad_logits
    grads["g.b"] = grad_logits.sum(axis=0)
    g = grad_logits @ params.weights[-1].T
    for j in range(L, 0, -1):
        if j in injected:
            g = g + injected[j]
        g_pre = _act_grad(act, trace.pre[j - 1], trace.hidden[j - 1], g)
        below = trace.x if j == 1 else trace.hidden[j - 2]
        grads[f"f{j}.W"] = below.T @ g_pre
        grads[f"f{j}.b"] = g_pre.sum(axis=0)
        g = g_pre @ params.weights[j - 1].T
    return grads


def input_gradient(params: MlpParams, trace: ForwardTrace, grad_logits, grad_hidden=None) -> np.ndarray:
    """dLoss/dx for the same inputs as :func:`backward`; used by gradient checks."""
    injected = _normalise_injections(grad_hidden, trace)
    act = params.spec.activation
    g = np.asarray(grad_logits, dtype=np.float64) @ params.weights[-1].T
    for j in range(trace.num_layers, 0, -1):
        if j in injected:
            g = g + injected[j]
        g = _act_grad(act, trace.pre[j - 1], trace.hidden[j - 1], g) @ params.weights[j - 1].T
    return g


@dataclass
class HeadCache:
    z: np.ndarray
    pre: np.ndarray
    mid: np.ndarray
    out: np.ndarray = field(repr=False, default=None)


def head_forward(head: ProjectionHead, z) -> tuple[np.ndarray, HeadCache]:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] != head.width:
        raise ShapeError(f"projection head expects width {head.width}, got shape {z.shape}")
    pre = z @ head.w1 + head.b1
    mid = _act(head.activation, pre)
    out = mid @ head.w2 + head.b2
    return out, HeadCache(z=z, pre=pre, mid=mid, out=out)


def head_backward(head: ProjectionHead, cache: HeadCache, grad_out) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    grad_out = np.asarray(grad_out, dtype=np.float64)
    grads = {"p2.W": cache.mid.T @ grad_out, "p2.b": grad_out.sum(axis=0)}
    g_pre = _act_grad(head.activation, cache.pre, cache.mid, grad_out @ head.w2.T)
    grads["p1.W"] = cache.z.T @ g_pre
    grads["p1.b"] = g_pre.sum(axis=0)
    return g_pre @ head.w1.T, grads


def project(head: ProjectionHead, z) -> np.ndarray:
    return head_forward(head, z)[0]


def sgd_step(params, grads: dict[str, np.ndarray], lr: float):
    """Plain gradient descent on an :class:`MlpParams` or :class:`ProjectionHead`.

    Parameters without an entry in ``grads`` are left untouched.
    """
    if not lr > 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    arrays = params.named()
    updated = {}
    for name, value in arrays.items():
        g = grads.get(name)
        if g is None:
            updated[name] = value
            continue
        g = np.asarray(g, dtype=np.float64)
        if g.shape != value.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, expected {value.shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingDivergenceError(f"non-finite gradient for {name}")
        updated[name] = value - lr * g
    return params.with_arrays(updated)
