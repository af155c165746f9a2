"""Plain-numpy MLP: forward with ReLU + inverted dropout, backprop, SGD.

Weights are float64 (fan_in, fan_out) matrices so gradient checks against
central finite differences can be tight. The head applies a per-output
link (identity or softplus); `forward` returns post-link outputs while the
tape keeps the raw pre-link values for the loss gradients.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import special
from .exceptions import ConfigError, ShapeError, TrainingError, UsageError

MODEL_FORMAT_VERSION = 1

LINKS = ("identity", "softplus")


@dataclass(frozen=True)
class HeadSpec:
    """Number of outputs and their links, e.g. ("identity", "softplus")."""

    links: tuple[str, ...]

    def __post_init__(self):
        if not self.links:
            raise ConfigError("head needs at least one output")
        bad = [l for l in self.links if l not in LINKS]
        if bad:
            raise ConfigError(f"unknown link(s) {bad}; expected one of {LINKS}")

    @property
    def n_outputs(self):
        return len(self.links)


@dataclass
class MlpModel:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    head: HeadSpec
    dropout_rate: float = 0.2
    rng_seed: int = 0

    @property
    def layer_dims(self):
        dims = [self.weights[0].shape[0]]
        dims.extend(w.shape[1] for w in self.weights)
        return dims

    @property
    def n_hidden_layers(self):
        return len(self.weights) - 1

    def clone(self):
        return MlpModel(
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            head=self.head,
            dropout_rate=self.dropout_rate,
            rng_seed=self.rng_seed,
        )


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]


@dataclass
class GradientTape:
    """Forward-pass cache consumed by one backward call."""

    model: MlpModel
    inputs: np.ndarray
    pre_activations: list[np.ndarray]
    activations: list[np.ndarray]          # post-ReLU, post-dropout
    dropout_masks: list[np.ndarray | None]
    raw_outputs: np.ndarray
    consumed: bool = field(default=False)


def _validate_chain(weights, biases):
    if len(weights) != len(biases):
        raise ShapeError("weights/biases layer counts differ",
                         expected=len(weights), got=len(biases))
    for i, (w, b) in enumerate(zip(weights, biases)):
        if w.ndim != 2 or b.ndim != 1 or w.shape[1] != b.shape[0]:
            raise ShapeError(f"layer {i}: weight {w.shape} and bias {b.shape} do not chain")
        if i > 0 and weights[i - 1].shape[1] != w.shape[0]:
            raise ShapeError(
                f"layer {i}: input dim {w.shape[0]} does not match previous output "
                f"{weights[i - 1].shape[1]}")


def init_mlp(input_dim, hidden_widths, head, dropout_rate=0.2, seed=0):
    """Glorot-uniform weights (+/- sqrt(6/(fan_in+fan_out))), zero biases."""
    if input_dim < 1:
        raise ConfigError(f"input_dim must be >= 1, got {input_dim}")
    if not 0.0 <= dropout_rate < 1.0:
        raise ConfigError(f"dropout_rate must be in [0, 1), got {dropout_rate}")
    rng = np.random.default_rng(seed)
    dims = [int(input_dim), *[int(w) for w in hidden_widths], head.n_outputs]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    _validate_chain(weights, biases)
    return MlpModel(weights=weights, biases=biases, head=head,
                    dropout_rate=float(dropout_rate), rng_seed=int(seed))


def _apply_links(head, raw):
    out = raw.copy()
    for j, link in enumerate(head.links):
        if link == "softplus":
            out[:, j] = special.softplus(raw[:, j])
    return out


def forward(model, batch, training=False, rng=None):
    """Run the network; returns (post-link outputs, tape).

    Dropout is the inverted variant, applied to hidden activations only and
    disabled when `training` is false. When `rng` is omitted a generator is
    derived from `model.rng_seed`, so repeated calls draw identical masks;
    the training loop passes its own stream to vary masks across steps.
    """
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2:
        raise ShapeError(f"batch must be 2-D, got ndim={batch.ndim}")
    if batch.shape[1] != model.weights[0].shape[0]:
        raise ShapeError("batch width does not match the model input dimension",
                         expected=model.weights[0].shape[0], got=batch.shape[1])

    use_dropout = training and model.dropout_rate > 0.0
    if use_dropout and rng is None:
        rng = np.random.default_rng(model.rng_seed)

    keep = 1.0 - model.dropout_rate
    a = batch
    pre_acts, acts, masks = [], [], []
    for w, b in zip(model.weights[:-1], model.biases[:-1]):
        z = a @ w + b
        h = np.maximum(z, 0.0)
        if use_dropout:
            mask = (rng.random(h.shape) < keep) / keep
            h = h * mask
        else:
            mask = None
        pre_acts.append(z)
        acts.append(h)
        masks.append(mask)
        a = h

    raw = a @ model.weights[-1] + model.biases[-1]
    if not np.all(np.isfinite(raw)):
        raise TrainingError("non-finite values in forward outputs")
    outputs = _apply_links(model.head, raw)
    tape = GradientTape(model=model, inputs=batch, pre_activations=pre_acts,
                        activations=acts, dropout_masks=masks, raw_outputs=raw)
    return outputs, tape


def backward(tape, output_grads):
    """Backpropagate d(loss)/d(raw outputs) to all parameter gradients.

    `output_grads` are w.r.t. the raw pre-link outputs (the loss side owns
    the link chain rule). Dropout masks recorded on the tape are respected.
    A tape can be consumed once.
    """
    if tape.consumed:
        raise UsageError("gradient tape already consumed by a previous backward call")
    tape.consumed = True

    g = np.asarray(output_grads, dtype=np.float64)
    if g.shape != tape.raw_outputs.shape:
        raise ShapeError("output_grads shape does not match forward outputs",
                         expected=tape.raw_outputs.shape, got=g.shape)

    model = tape.model
    n_layers = len(model.weights)
    d_weights = [None] * n_layers
    d_biases = [None] * n_layers

    a_prev = tape.activations[-1] if tape.activations else tape.inputs
    d_weights[-1] = a_prev.T @ g
    d_biases[-1] = g.sum(axis=0)

    for l in range(n_layers - 2, -1, -1):
        g = g @ model.weights[l + 1].T
        if tape.dropout_masks[l] is not None:
            g = g * tape.dropout_masks[l]
        g = g * (tape.pre_activations[l] > 0.0)
        a_prev = tape.activations[l - 1] if l > 0 else tape.inputs
        d_weights[l] = a_prev.T @ g
        d_biases[l] = g.sum(axis=0)

    return Gradients(weights=d_weights, biases=d_biases)


def sgd_step(model, grads, learning_rate):
    """In-place theta <- theta - lr * grad; returns the model."""
    if learning_rate <= 0:
        raise ConfigError(f"learning_rate must be > 0, got {learning_rate}")
    for i, (dw, db) in enumerate(zip(grads.weights, grads.biases)):
        if not np.all(np.isfinite(dw)):
            raise TrainingError(f"non-finite weight gradient in layer {i}",
                                layer=i, param="weights")
        if not np.all(np.isfinite(db)):
            raise TrainingError(f"non-finite bias gradient in layer {i}",
                                layer=i, param="biases")
        model.weights[i] -= learning_rate * dw
        model.biases[i] -= learning_rate * db
    return model


# ---------------------------------------------------------------------------
# Serialization: versioned JSON with bit-exact round-trip
# ---------------------------------------------------------------------------

def model_to_dict(model):
    return {
        "format_version": MODEL_FORMAT_VERSION,
        "layer_dims": model.layer_dims,
        "weights": [w.ravel().tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
        "links": list(model.head.links),
        "dropout_rate": model.dropout_rate,
        "rng_seed": model.rng_seed,
    }


def model_from_dict(doc):
    version = doc.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise ConfigError(f"unsupported model format_version {version!r}")
    dims = doc["layer_dims"]
    weights, biases = [], []
    for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        weights.append(np.asarray(doc["weights"][i], dtype=np.float64)
                       .reshape(fan_in, fan_out))
        biases.append(np.asarray(doc["biases"][i], dtype=np.float64))
    _validate_chain(weights, biases)
    return MlpModel(weights=weights, biases=biases,
                    head=HeadSpec(links=tuple(doc["links"])),
                    dropout_rate=float(doc["dropout_rate"]),
                    rng_seed=int(doc["rng_seed"]))


def model_to_json(model):
    return json.dumps(model_to_dict(model), sort_keys=True)


def model_from_json(text):
    return model_from_dict(json.loads(text))
