"""Dense feedforward networks with softmax outputs.

Forward pass, soft-target cross-entropy, exact backpropagation to both
parameters and inputs, and plain SGD.  Everything is float64; the
gradient-check tolerances used in the tests leave no headroom for mixed
precision.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Literal, NamedTuple, Sequence

import numpy as np

Activation = Literal["relu", "identity"]

# Guards log(0) when a soft target puts weight on a zero-probability entry.
LOG_CLAMP = 1e-300
FORMAT_VERSION = 1


class ShapeError(ValueError):
    """Array dimensions do not match the network contract."""


@dataclass
class DenseLayer:
    weights: np.ndarray  # (out_dim, in_dim)
    biases: np.ndarray  # (out_dim,)
    activation: Activation = "relu"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.biases = np.asarray(self.biases, dtype=np.float64)
        if self.weights.ndim != 2 or self.biases.ndim != 1:
            raise ShapeError("weights must be 2-D and biases 1-D")
        if self.weights.shape[0] != self.biases.shape[0]:
            raise ShapeError(
                f"bias length {self.biases.shape[0]} does not match "
                f"weight rows {self.weights.shape[0]}"
            )
        if self.activation not in ("relu", "identity"):
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]


@dataclass
class Network:
    layers: list[DenseLayer]

    def __post_init__(self):
        if not self.layers:
            raise ValueError("network needs at least one layer")
        for prev, cur in zip(self.layers, self.layers[1:]):
            if prev.out_dim != cur.in_dim:
                raise ShapeError(
                    f"layer dims do not chain: {prev.out_dim} -> {cur.in_dim}"
                )
        for layer in self.layers[:-1]:
            if layer.activation == "identity":
                raise ValueError("identity activation is only allowed on the final layer")
        if self.num_classes < 2:
            raise ValueError("need at least two output classes")
        self.check_finite()

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def num_classes(self) -> int:
        return self.layers[-1].out_dim

    def check_finite(self):
        for i, layer in enumerate(self.layers):
            if not (np.isfinite(layer.weights).all() and np.isfinite(layer.biases).all()):
                raise ValueError(f"non-finite parameters in layer {i}")


@dataclass
class ForwardTrace:
    inputs: np.ndarray  # (B, d)
    pre_activations: list[np.ndarray]  # per layer, (B, out_dim)
    activations: list[np.ndarray]  # per layer, (B, out_dim)

    @property
    def logits(self) -> np.ndarray:
        return self.activations[-1]

    @property
    def batch_size(self) -> int:
        return self.inputs.shape[0]


@dataclass
class Gradients:
    weight_grads: list[np.ndarray] | None = None
    bias_grads: list[np.ndarray] | None = None
    input_grad: np.ndarray | None = None  # (B, d), per-example loss gradient


class SoftCrossEntropy(NamedTuple):
    value: float | np.ndarray
    clamped: bool


def make_mlp(dims: Sequence[int], rng: np.random.Generator) -> Network:
    """Fully connected net with relu hidden layers and an identity logit layer.

    Weights are uniform in +-sqrt(6 / (fan_in + fan_out)), biases zero.
    """
    if len(dims) < 2:
        raise ValueError("dims must list at least input and output sizes")
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(dims, dims[1:])):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        activation = "identity" if i == len(dims) - 2 else "relu"
        layers.append(DenseLayer(weights, np.zeros(fan_out), activation))
    return Network(layers)


def _as_batch(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x[None, :]
    if x.ndim != 2:
        raise ShapeError(f"expected 1-D or 2-D input, got shape {x.shape}")
    return x


def forward(net: Network, batch: np.ndarray) -> ForwardTrace:
    """Run the network on a (B, d) batch and keep per-layer values."""
    batch = _as_batch(batch)
    if batch.shape[1] != net.input_dim:
        raise ShapeError(
            f"input has {batch.shape[1]} columns, network expects {net.input_dim}"
        )
    if not np.isfinite(batch).all():
        raise ValueError("non-finite entries in input batch")
    pre, act = [], []
    a = batch
    for layer in net.layers:
        z = a @ layer.weights.T + layer.biases
        pre.append(z)
        a = np.maximum(z, 0.0) if layer.activation == "relu" else z
        act.append(a)
    return ForwardTrace(batch, pre, act)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction for stability."""
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _check_prob_vector(p: np.ndarray, name: str, tol: float):
    sums = p.sum(axis=-1)
    if not np.allclose(sums, 1.0, atol=tol, rtol=0.0):
        raise ValueError(f"{name} rows must sum to 1 within {tol}")


def cross_entropy_soft(probs: np.ndarray, target: np.ndarray) -> SoftCrossEntropy:
    """-sum_k target_k * log(probs_k), per example.

    Zero probabilities that carry positive target weight are clamped at
    LOG_CLAMP before the log; the `clamped` flag reports whether that
    happened anywhere.
    """
    probs = np.asarray(probs, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if probs.shape != target.shape:
        raise ShapeError(f"probs shape {probs.shape} != target shape {target.shape}")
    _check_prob_vector(probs, "probs", 1e-9)
    _check_prob_vector(target, "target", 1e-9)
    clamped = bool(np.any((probs == 0.0) & (target > 0.0)))
    losses = -(target * np.log(np.maximum(probs, LOG_CLAMP))).sum(axis=-1)
    value = float(losses) if losses.ndim == 0 else losses
    return SoftCrossEntropy(value, clamped)


def _check_trace(net: Network, trace: ForwardTrace):
    if len(trace.activations) != len(net.layers):
        raise ShapeError("trace depth does not match network")
    for layer, z in zip(net.layers, trace.pre_activations):
        if z.shape[1] != layer.out_dim:
            raise ShapeError("trace widths do not match network")
    if trace.inputs.shape[1] != net.input_dim:
        raise ShapeError("trace input width does not match network")


def backward_from_logit_grad(
    net: Network,
    trace: ForwardTrace,
    dlogits: np.ndarray,
    wrt: Literal["params", "input", "both"] = "both",
) -> Gradients:
    """Backpropagate an arbitrary per-example logit gradient.

    Parameter gradients are averaged over the batch; the input gradient is
    per example and unscaled, which is what attack objectives need.
    """
    _check_trace(net, trace)
    dlogits = np.asarray(dlogits, dtype=np.float64)
    if dlogits.shape != trace.logits.shape:
        raise ShapeError("dlogits shape does not match trace logits")
    batch = trace.batch_size
    want_params = wrt in ("params", "both")
    want_input = wrt in ("input", "both")

    weight_grads = [None] * len(net.layers) if want_params else None
    bias_grads = [None] * len(net.layers) if want_params else None
    dz = dlogits
    if net.layers[-1].activation == "relu":
        dz = dz * (trace.pre_activations[-1] > 0.0)
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        a_prev = trace.activations[i - 1] if i > 0 else trace.inputs
        if want_params:
            weight_grads[i] = dz.T @ a_prev / batch
            bias_grads[i] = dz.sum(axis=0) / batch
        if i == 0 and not want_input:
            break
        da_prev = dz @ layer.weights
        if i > 0:
            prev_layer = net.layers[i - 1]
            if prev_layer.activation == "relu":
                da_prev = da_prev * (trace.pre_activations[i - 1] > 0.0)
            dz = da_prev
        else:
            dz = da_prev  # gradient with respect to the inputs
    input_grad = dz if want_input else None
    return Gradients(weight_grads, bias_grads, input_grad)


def backward(
    net: Network,
    trace: ForwardTrace,
    targets: np.ndarray,
    wrt: Literal["params", "input", "both"] = "both",
) -> Gradients:
    """Gradients of the mean batch cross-entropy against soft targets."""
    targets = np.asarray(targets, dtype=np.float64)
    if targets.ndim == 1:
        targets = targets[None, :]
    if targets.shape != trace.logits.shape:
        raise ShapeError("targets shape does not match trace logits")
    probs = softmax(trace.logits)
    return backward_from_logit_grad(net, trace, probs - targets, wrt)


def sgd_step(net: Network, grads: Gradients, lr: float):
    """In-place w -= lr * grad.  Rejects non-finite gradients untouched."""
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    if grads.weight_grads is None or grads.bias_grads is None:
        raise ValueError("sgd_step needs parameter gradients")
    for gw, gb in zip(grads.weight_grads, grads.bias_grads):
        if not (np.isfinite(gw).all() and np.isfinite(gb).all()):
            raise ValueError("non-finite gradient; step rejected")
    for layer, gw, gb in zip(net.layers, grads.weight_grads, grads.bias_grads):
        if gw.shape != layer.weights.shape or gb.shape != layer.biases.shape:
            raise ShapeError("gradient shapes do not match network")
    for layer, gw, gb in zip(net.layers, grads.weight_grads, grads.bias_grads):
        layer.weights -= lr * gw
        layer.biases -= lr * gb


def predict(net: Network, batch: np.ndarray):
    """Labels, top confidences, and full probability rows for a batch."""
    probs = softmax(forward(net, batch).logits)
    labels = probs.argmax(axis=-1)
    return labels, probs[np.arange(probs.shape[0]), labels], probs


def save_network(net: Network, path: str):
    """Write the network as JSON; float64 values round-trip bit-exactly."""
    doc = {
        "version": FORMAT_VERSION,
        "layers": [
            {
                "in_dim": layer.in_dim,
                "out_dim": layer.out_dim,
                "activation": layer.activation,
                "weights": layer.weights.ravel().tolist(),  # row-major
                "biases": layer.biases.tolist(),
            }
            for layer in net.layers
        ],
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f)


def load_network(path: str) -> Network:
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    if doc.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {doc.get('version')!r}")
    layers = []
    for spec in doc["layers"]:
        weights = np.array(spec["weights"], dtype=np.float64).reshape(
            spec["out_dim"], spec["in_dim"]
        )
        biases = np.array(spec["biases"], dtype=np.float64)
        layers.append(DenseLayer(weights, biases, spec["activation"]))
    return Network(layers)
