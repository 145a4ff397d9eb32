"""Dense layers with hand-written backpropagation and an Adam optimizer.

Everything here works in float64. A layer's weights have shape (out, in), and
inputs are either a single vector of shape (in,) or a batch of row vectors of
shape (batch, in).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, StateError, TrainingError

RELU = "relu"
IDENTITY = "identity"
ACTIVATIONS = (RELU, IDENTITY)


def seed_rng(seed) -> np.random.Generator:
    """Return the generator that all initialization and shuffling draw from.

    ``seed`` is a non-negative int or a sequence of them.
    """
    return np.random.Generator(np.random.PCG64(seed))


@dataclass
class DenseLayer:
    weights: np.ndarray
    bias: np.ndarray
    activation: str = RELU
    frozen: bool = False
    name: str = "dense"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2:
            raise ShapeError(f"{self.name}: weights must be 2-D, got shape {self.weights.shape}")
        if self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(
                f"{self.name}: bias length {self.bias.shape} does not match "
                f"weights rows {self.weights.shape[0]}"
            )
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]


def he_uniform(fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


def glorot_uniform(fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


def init_dense(
    in_dim: int, out_dim: int, activation: str, rng: np.random.Generator, name: str
) -> DenseLayer:
    """He-uniform weights for ReLU layers, Glorot-uniform otherwise; zero bias."""
    init = he_uniform if activation == RELU else glorot_uniform
    return DenseLayer(
        weights=init(in_dim, out_dim, rng),
        bias=np.zeros(out_dim),
        activation=activation,
        name=name,
    )


@dataclass
class GradientTape:
    """Forward caches and parameter gradients for one optimizer step."""

    activations: dict = field(default_factory=dict)
    weight_grads: dict = field(default_factory=dict)
    bias_grads: dict = field(default_factory=dict)

    def clear(self):
        self.activations.clear()
        self.weight_grads.clear()
        self.bias_grads.clear()


def forward(layer: DenseLayer, x, tape: GradientTape | None = None) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2):
        raise ShapeError(f"{layer.name}: input must be a vector or a batch, got shape {x.shape}")
    if x.shape[-1] != layer.in_dim:
        raise ShapeError(
            f"{layer.name}: input has {x.shape[-1]} features, layer expects {layer.in_dim}"
        )
    pre = x @ layer.weights.T + layer.bias
    if tape is not None:
        tape.activations[layer.name] = (x, pre)
    if layer.activation == RELU:
        return np.maximum(pre, 0.0)
    return pre


def backward(layer: DenseLayer, upstream_grad, tape: GradientTape) -> np.ndarray:
    """Accumulate parameter gradients on ``tape`` and return d(loss)/d(input).

    For batched inputs the parameter gradients are summed over the batch; the
    loss is expected to carry any averaging. The ReLU derivative at a
    pre-activation of exactly zero is taken as zero.
    """
    try:
        x, pre = tape.activations[layer.name]
    except KeyError:
        raise StateError(f"{layer.name}: backward called without a cached forward pass") from None
    g = np.asarray(upstream_grad, dtype=np.float64)
    if g.shape != pre.shape:
        raise ShapeError(f"{layer.name}: upstream gradient shape {g.shape} != output shape {pre.shape}")
    if layer.activation == RELU:
        g = g * (pre > 0.0)
    if g.ndim == 1:
        dw = np.outer(g, x)
        db = g.copy()
    else:
        dw = g.T @ x
        db = g.sum(axis=0)
    tape.weight_grads[layer.name] = dw
    tape.bias_grads[layer.name] = db
    return g @ layer.weights


def forward_stack(layers, x, tape: GradientTape | None = None) -> np.ndarray:
    for layer in layers:
        x = forward(layer, x, tape)
    return x


def backward_stack(layers, upstream_grad, tape: GradientTape) -> np.ndarray:
    g = upstream_grad
    for layer in reversed(layers):
        g = backward(layer, g, tape)
    return g


def mse_loss(pred, target) -> tuple[float, np.ndarray]:
    """Sum of squared differences and its gradient with respect to ``pred``."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {target.shape}")
    diff = pred - target
    return float(np.sum(diff * diff)), 2.0 * diff


@dataclass(frozen=True)
class AdamHyper:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(layers, tape: GradientTape, state: AdamState, hyper: AdamHyper = AdamHyper()) -> AdamState:
    """Apply one bias-corrected Adam update to every non-frozen layer in place.

    Gradients are read from ``tape``; frozen layers are skipped entirely, so
    their parameters stay bit-identical.
    """
    trainable = [layer for layer in layers if not layer.frozen]
    grads = {}
    for layer in trainable:
        if layer.name not in tape.weight_grads:
            raise StateError(f"{layer.name}: no gradient on tape")
        gw = tape.weight_grads[layer.name]
        gb = tape.bias_grads[layer.name]
        if gw.shape != layer.weights.shape or gb.shape != layer.bias.shape:
            raise ShapeError(f"{layer.name}: gradient shapes do not match parameters")
        if not (np.all(np.isfinite(gw)) and np.all(np.isfinite(gb))):
            raise TrainingError(f"non-finite gradient in layer {layer.name!r}")
        grads[layer.name] = (gw, gb)

    state.step += 1
    t = state.step
    c1 = 1.0 - hyper.beta1**t
    c2 = 1.0 - hyper.beta2**t
    for layer in trainable:
        for key, param, g in (
            ((layer.name, "w"), layer.weights, grads[layer.name][0]),
            ((layer.name, "b"), layer.bias, grads[layer.name][1]),
        ):
            m = state.m.get(key)
            v = state.v.get(key)
            if m is None:
                m = np.zeros_like(param)
                v = np.zeros_like(param)
            m = hyper.beta1 * m + (1.0 - hyper.beta1) * g
            v = hyper.beta2 * v + (1.0 - hyper.beta2) * g * g
            state.m[key] = m
            state.v[key] = v
            param -= hyper.lr * (m / c1) / (np.sqrt(v / c2) + hyper.eps)
    return state
