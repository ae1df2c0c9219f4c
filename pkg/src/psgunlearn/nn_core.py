"""Small dense classifier with exact backpropagation in float64.

Everything here is plain numpy. A :class:`Model` is a stack of affine
layers, each followed by ReLU or identity; the last layer emits ``K``
logits. Gradients are available with respect to the parameters (for
training) and with respect to the input (for boundary search).

Batches are row-major: ``X`` has shape ``(n, d)``, targets ``(n, K)``.
A single 1-D input is treated as a batch of one and squeezed back.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InvalidInputError, NumericError, ParseError

ACTIVATIONS = ("relu", "identity")
CHECKPOINT_FORMAT = "psgunlearn-model"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "relu"

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


@dataclass(frozen=True)
class Model:
    layers: tuple[Layer, ...]
    frozen: tuple[bool, ...] = field(default=())

    def __post_init__(self):
        layers = tuple(self.layers)
        object.__setattr__(self, "layers", layers)
        if not layers:
            raise InvalidInputError("model needs at least one layer")
        frozen = tuple(bool(f) for f in self.frozen) or (False,) * len(layers)
        if len(frozen) != len(layers):
            raise InvalidInputError("frozen mask length must equal layer count")
        object.__setattr__(self, "frozen", frozen)
        for i, layer in enumerate(layers):
            if layer.activation not in ACTIVATIONS:
                raise InvalidInputError(f"layer {i}: unknown activation {layer.activation!r}")
            if layer.weight.ndim != 2 or layer.bias.shape != (layer.out_dim,):
                raise InvalidInputError(f"layer {i}: weight/bias shapes do not match")
            if i and layers[i - 1].out_dim != layer.in_dim:
                raise InvalidInputError(
                    f"layer {i}: in-dim {layer.in_dim} != previous out-dim {layers[i - 1].out_dim}"
                )
            if not (np.all(np.isfinite(layer.weight)) and np.all(np.isfinite(layer.bias))):
                raise InvalidInputError(f"layer {i}: non-finite parameters")
        if layers[-1].out_dim < 2:
            raise InvalidInputError("final layer must emit K >= 2 logits")

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def n_classes(self) -> int:
        return self.layers[-1].out_dim

    @property
    def widths(self) -> list[int]:
        return [self.input_dim] + [layer.out_dim for layer in self.layers]

    def with_frozen(self, mask: Sequence[bool]) -> "Model":
        return replace(self, frozen=tuple(mask))

    def freeze_first(self, k: int) -> "Model":
        return self.with_frozen([i < k for i in range(len(self.layers))])

    def flat_params(self) -> np.ndarray:
        return np.concatenate([np.concatenate([l.weight.ravel(), l.bias]) for l in self.layers])

    def with_flat_params(self, flat: np.ndarray) -> "Model":
        flat = np.asarray(flat, dtype=np.float64)
        layers, pos = [], 0
        for layer in self.layers:
            nw = layer.weight.size
            w = flat[pos:pos + nw].reshape(layer.weight.shape)
            pos += nw
            b = flat[pos:pos + layer.out_dim]
            pos += layer.out_dim
            layers.append(Layer(w.copy(), b.copy(), layer.activation))
        if pos != flat.size:
            raise InvalidInputError("flat parameter vector has the wrong length")
        return Model(tuple(layers), self.frozen)


@dataclass(frozen=True)
class PredictionBundle:
    logits: np.ndarray
    probabilities: np.ndarray
    loss: float | np.ndarray | None = None


def init_model(widths: Sequence[int], seed: int, activation: str = "relu") -> Model:
    """Glorot-uniform weights, zero biases; hidden layers use ``activation``."""
    widths = [int(w) for w in widths]
    if len(widths) < 2:
        raise InvalidInputError("need at least input and output widths")
    rng = np.random.default_rng(seed)
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        act = "identity" if i == len(widths) - 2 else activation
        layers.append(Layer(w, np.zeros(fan_out), act))
    return Model(tuple(layers))


def _as_batch(model: Model, x) -> tuple[np.ndarray, bool]:
    X = np.asarray(x, dtype=np.float64)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != model.input_dim:
        raise InvalidInputError(
            f"expected input of dimension {model.input_dim}, got shape {np.shape(x)}"
        )
    if not np.all(np.isfinite(X)):
        raise InvalidInputError("input contains non-finite entries")
    return X, single


def _as_targets(model: Model, target, n: int) -> np.ndarray:
    T = np.asarray(target, dtype=np.float64)
    if T.ndim == 1:
        T = T[None, :]
    if T.shape != (n, model.n_classes):
        raise InvalidInputError(f"target shape {T.shape} does not match ({n}, {model.n_classes})")
    return T


def _forward_cache(model: Model, X: np.ndarray):
    # cache[i] = (input to layer i, pre-activation of layer i)
    cache = []
    h = X
    for i, layer in enumerate(model.layers):
        with np.errstate(over="ignore", invalid="ignore"):
            z = h @ layer.weight.T + layer.bias
        if not np.all(np.isfinite(z)):
            raise NumericError(f"non-finite activations in layer {i}", layer=i)
        cache.append((h, z))
        h = np.maximum(z, 0.0) if layer.activation == "relu" else z
    return h, cache


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Per-row ``-sum_j t_j log p_j`` computed through log-sum-exp."""
    lp = log_softmax(logits)
    # 0 * log p must stay 0 even where log p is very negative
    return -np.where(target > 0, target * lp, 0.0).sum(axis=-1)


def logits(model: Model, x) -> np.ndarray:
    X, single = _as_batch(model, x)
    out, _ = _forward_cache(model, X)
    return out[0] if single else out


def forward(model: Model, x, target=None) -> PredictionBundle:
    X, single = _as_batch(model, x)
    z, _ = _forward_cache(model, X)
    p = softmax(z)
    loss = None
    if target is not None:
        loss = cross_entropy(z, _as_targets(model, target, X.shape[0]))
        loss = float(loss[0]) if single else loss
    if single:
        return PredictionBundle(z[0], p[0], loss)
    return PredictionBundle(z, p, loss)


def predict(model: Model, x) -> np.ndarray:
    return np.argmax(logits(model, x), axis=-1)


def _backward(model: Model, cache, dz: np.ndarray, need_params: bool):
    grads = [None] * len(model.layers)
    for i in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[i]
        h_in, z = cache[i]
        if layer.activation == "relu":
            dz = dz * (z > 0)
        if need_params:
            if model.frozen[i]:
                grads[i] = (np.zeros_like(layer.weight), np.zeros_like(layer.bias))
            else:
                grads[i] = (dz.T @ h_in, dz.sum(axis=0))
        dz = dz @ layer.weight
    return grads, dz


def loss_grad_params(model: Model, x, target):
    """Mean cross-entropy over the batch and its gradient per layer.

    Returns ``(loss, grads)`` where ``grads[i] = (dW, db)``; frozen layers
    get exact zeros.
    """
    X, _ = _as_batch(model, x)
    T = _as_targets(model, target, X.shape[0])
    z, cache = _forward_cache(model, X)
    loss = cross_entropy(z, T)
    if not np.all(np.isfinite(loss)):
        raise NumericError("non-finite loss", layer=len(model.layers) - 1)
    n = X.shape[0]
    # d(mean CE)/dlogits = (p * sum_j t_j - t) / n; sum_j t_j = 1 for distributions
    dz = (softmax(z) * T.sum(axis=1, keepdims=True) - T) / n
    grads, _ = _backward(model, cache, dz, need_params=True)
    return float(loss.mean()), grads


def loss_grad_input(model: Model, x, target):
    """Per-row loss and its gradient with respect to that row's input.

    Rows are independent, so row ``i`` of the gradient is the gradient of
    loss ``i`` alone. Single-vector inputs return a float and a vector.
    """
    X, single = _as_batch(model, x)
    T = _as_targets(model, target, X.shape[0])
    z, cache = _forward_cache(model, X)
    loss = cross_entropy(z, T)
    if not np.all(np.isfinite(loss)):
        raise NumericError("non-finite loss", layer=len(model.layers) - 1)
    dz = softmax(z) * T.sum(axis=1, keepdims=True) - T
    _, gx = _backward(model, cache, dz, need_params=False)
    if single:
        return float(loss[0]), gx[0]
    return loss, gx


def sgd_step(model: Model, grads, lr: float) -> Model:
    """Return a new model with ``param -= lr * grad`` on unfrozen layers."""
    if not lr > 0:
        raise InvalidInputError("learning rate must be positive")
    if len(grads) != len(model.layers):
        raise InvalidInputError("one gradient pair per layer required")
    layers = []
    for layer, frozen, (gw, gb) in zip(model.layers, model.frozen, grads):
        if frozen:
            layers.append(layer)
            continue
        w = layer.weight - lr * gw
        b = layer.bias - lr * gb
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise NumericError("parameters became non-finite", layer=len(layers))
        layers.append(Layer(w, b, layer.activation))
    return Model(tuple(layers), model.frozen)


def scale_grads(grads, factor: float):
    return [(gw * factor, gb * factor) for gw, gb in grads]


def add_grads(a, b):
    return [(aw + bw, ab + bb) for (aw, ab), (bw, bb) in zip(a, b)]


# -- checkpoints -------------------------------------------------------------

def model_to_dict(model: Model) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "n_layers": len(model.layers),
        "n_classes": model.n_classes,
        "layers": [
            {
                "in": layer.in_dim,
                "out": layer.out_dim,
                "activation": layer.activation,
                "frozen": frozen,
                # float repr round-trips float64 exactly
                "weight": layer.weight.ravel(order="C").tolist(),
                "bias": layer.bias.tolist(),
            }
            for layer, frozen in zip(model.layers, model.frozen)
        ],
    }


def model_from_dict(data: dict) -> Model:
    if data.get("format") != CHECKPOINT_FORMAT:
        raise ParseError(f"not a {CHECKPOINT_FORMAT} checkpoint")
    if data.get("version") != CHECKPOINT_VERSION:
        raise ParseError(f"unsupported checkpoint version {data.get('version')!r}")
    entries = data["layers"]
    if len(entries) != data["n_layers"]:
        raise ParseError("layer count does not match header")
    layers, frozen = [], []
    for entry in entries:
        w = np.asarray(entry["weight"], dtype=np.float64)
        if w.size != entry["out"] * entry["in"]:
            raise ParseError("weight size does not match declared shape")
        layers.append(Layer(w.reshape(entry["out"], entry["in"]),
                            np.asarray(entry["bias"], dtype=np.float64),
                            entry["activation"]))
        frozen.append(bool(entry.get("frozen", False)))
    model = Model(tuple(layers), tuple(frozen))
    if model.n_classes != data["n_classes"]:
        raise ParseError("class count does not match header")
    return model


def save_model(model: Model, path, meta: dict | None = None) -> None:
    """Write a JSON checkpoint; ``meta`` is stored verbatim and ignored on load."""
    data = model_to_dict(model)
    if meta is not None:
        data["meta"] = meta
    Path(path).write_text(json.dumps(data, sort_keys=True))


def load_model(path) -> Model:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"checkpoint is not valid JSON: {exc}") from exc
    return model_from_dict(data)
