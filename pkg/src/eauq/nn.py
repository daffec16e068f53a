"""Small feedforward binary classifier trained with plain SGD.

The network is a stack of dense layers with ReLU hidden activations, optional
inverted dropout after every hidden activation and a single sigmoid output
giving the probability of class one. Gradients are computed by explicit
backpropagation; there is no autograd dependency.

Weights are stored as ``(fan_in, fan_out)`` matrices so that a batch ``X`` of
shape ``(n, d)`` propagates as ``X @ W + b``.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit

__all__ = [
    "MlpModel",
    "Gradient",
    "TrainConfig",
    "Checkpoint",
    "TrainingDivergedError",
    "init_mlp",
    "forward",
    "dropout_mask",
    "loss_and_gradient",
    "train",
    "finetune_config",
    "finetune_to_experts",
    "model_to_text",
    "model_from_text",
    "save_model",
    "load_model",
]

# forward() clips into the open interval so that 0 < p < 1 holds even when
# the logit saturates float64 sigmoid.
_PROB_FLOOR = 1e-15

MODEL_FORMAT = "eauq-mlp"
MODEL_FORMAT_VERSION = 1

LOSSES = ("bce", "mse")
SCHEDULES = ("constant", "linear", "exponential")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class MlpModel:
    """Immutable parameter container for a binary MLP classifier."""

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    dropout_rate: float = 0.0
    hidden_activation: str = "relu"

    def __post_init__(self):
        if len(self.weights) == 0 or len(self.weights) != len(self.biases):
            raise ValueError("need one bias vector per weight matrix")
        weights = tuple(_frozen(w) for w in self.weights)
        biases = tuple(_frozen(b) for b in self.biases)
        for i, (w, b) in enumerate(zip(weights, biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError(f"layer {i}: weight {w.shape} and bias {b.shape} disagree")
            if i > 0 and w.shape[0] != weights[i - 1].shape[1]:
                raise ValueError(f"layer {i}: expects {w.shape[0]} inputs, previous layer emits {weights[i - 1].shape[1]}")
        if weights[-1].shape[1] != 1:
            raise ValueError("output layer must have a single unit")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if self.hidden_activation != "relu":
            raise ValueError(f"unsupported hidden activation {self.hidden_activation!r}")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "biases", biases)

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    @property
    def n_inputs(self) -> int:
        return self.weights[0].shape[0]

    def n_parameters(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def with_params(self, weights, biases) -> "MlpModel":
        return MlpModel(tuple(weights), tuple(biases), self.dropout_rate, self.hidden_activation)

    def params_equal(self, other: "MlpModel") -> bool:
        """Bit-for-bit parameter equality."""
        if self.layer_sizes != other.layer_sizes:
            return False
        return all(
            np.array_equal(a, b)
            for a, b in zip(self.weights + self.biases, other.weights + other.biases)
        )


@dataclass
class Gradient:
    """Loss gradient with exactly the parameter shapes of an :class:`MlpModel`."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def flat(self) -> np.ndarray:
        return np.concatenate([g.ravel() for g in self.weights + self.biases])

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(g)) for g in self.weights + self.biases)


def init_mlp(layer_sizes: Sequence[int], seed: int, dropout_rate: float = 0.0) -> MlpModel:
    """Glorot-uniform weights and zero biases."""
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2 or any(s <= 0 for s in sizes):
        raise ValueError(f"layer_sizes must hold at least two positive sizes, got {layer_sizes}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpModel(tuple(weights), tuple(biases), dropout_rate)


def dropout_mask(shape, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted-dropout mask: entries are 0 or ``1 / (1 - rate)``."""
    if rate <= 0.0:
        return np.ones(shape)
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


def _as_rng(dropout):
    if dropout is None or isinstance(dropout, np.random.Generator):
        return dropout
    return np.random.default_rng(dropout)


def _as_batch(model: MlpModel, x) -> tuple[np.ndarray, bool]:
    X = np.asarray(x, dtype=np.float64)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != model.n_inputs:
        raise ValueError(f"expected inputs of dimension {model.n_inputs}, got shape {np.shape(x)}")
    return X, single


def _propagate(weights, biases, X, dropout_rate, rng):
    """Return output logits plus the per-layer cache needed for backprop."""
    acts = [X]
    pre = []
    masks = []
    h = X
    last = len(weights) - 1
    for i, (w, b) in enumerate(zip(weights, biases)):
        z = h @ w + b
        if i == last:
            return z[:, 0], acts, pre, masks
        pre.append(z)
        h = np.maximum(z, 0.0)
        if rng is not None and dropout_rate > 0.0:
            m = dropout_mask(h.shape, dropout_rate, rng)
            h = h * m
        else:
            m = None
        masks.append(m)
        acts.append(h)
    raise AssertionError("unreachable")


def forward(model: MlpModel, x, dropout=None):
    """Probability of class one.

    Parameters
    ----------
    model : MlpModel
    x : array_like
        A single feature vector of shape ``(d,)`` or a batch ``(n, d)``.
    dropout : None, int or numpy.random.Generator
        ``None`` runs deterministic inference. Anything else activates
        inverted dropout at ``model.dropout_rate`` with masks drawn from that
        seed or generator.

    Returns
    -------
    float or ndarray
        Scalar for a single vector, shape ``(n,)`` for a batch; always
        strictly inside ``(0, 1)``.
    """
    X, single = _as_batch(model, x)
    logits = _propagate(model.weights, model.biases, X, model.dropout_rate, _as_rng(dropout))[0]
    p = np.clip(expit(logits), _PROB_FLOOR, 1.0 - _PROB_FLOOR)
    return float(p[0]) if single else p


def _loss_and_grad(weights, biases, X, y, loss, dropout_rate, rng):
    n = X.shape[0]
    logits, acts, pre, masks = _propagate(weights, biases, X, dropout_rate, rng)
    p = expit(logits)
    if loss == "bce":
        value = float(np.mean(np.logaddexp(0.0, logits) - y * logits))
        dz = (p - y) / n
    elif loss == "mse":
        value = float(np.mean((p - y) ** 2))
        dz = 2.0 * (p - y) * p * (1.0 - p) / n
    else:
        raise ValueError(f"unknown loss {loss!r}; expected one of {LOSSES}")

    gw = [None] * len(weights)
    gb = [None] * len(weights)
    delta = dz[:, None]
    for i in range(len(weights) - 1, -1, -1):
        gw[i] = acts[i].T @ delta
        gb[i] = delta.sum(axis=0)
        if i == 0:
            break
        delta = delta @ weights[i].T
        if masks[i - 1] is not None:
            delta = delta * masks[i - 1]
        delta = delta * (pre[i - 1] > 0.0)
    return value, Gradient(gw, gb)


def _check_targets(X, y):
    y = np.asarray(y, dtype=np.float64).ravel()
    if X.shape[0] == 0:
        raise ValueError("batch is empty")
    if y.shape[0] != X.shape[0]:
        raise ValueError(f"{X.shape[0]} inputs but {y.shape[0]} targets")
    if np.any(~np.isfinite(y)) or np.any((y < 0.0) | (y > 1.0)):
        raise ValueError("targets must lie in [0, 1]")
    return y


def loss_and_gradient(model: MlpModel, X, targets, loss: str = "bce", dropout=None) -> tuple[float, Gradient]:
    """Batch-mean loss and its exact gradient with respect to every parameter.

    Targets are reals in ``[0, 1]``; binary labels and soft expert-mean
    targets go through the same code path. ``dropout`` has the same meaning
    as in :func:`forward`.
    """
    X, _ = _as_batch(model, X)
    y = _check_targets(X, targets)
    return _loss_and_grad(model.weights, model.biases, X, y, loss, model.dropout_rate, _as_rng(dropout))


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int, what: str = "loss"):
        super().__init__(f"training diverged: non-finite {what} at epoch {epoch}")
        self.epoch = epoch


@dataclass(frozen=True)
class TrainConfig:
    """SGD hyperparameters.

    Defaults are the nominal classification schedule: 800 epochs, learning
    rate 1e-4 decreasing linearly to a tenth of its start, weight decay 5e-5.
    """

    epochs: int = 800
    initial_lr: float = 1e-4
    lr_schedule: str = "linear"
    decay_factor: float = 0.99
    weight_decay: float = 5e-5
    batch_size: int = 16
    seed: int = 0
    checkpoint_interval: int | None = None
    loss: str = "bce"

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        if not self.initial_lr > 0:
            raise ValueError("initial_lr must be positive")
        if self.lr_schedule not in SCHEDULES:
            raise ValueError(f"lr_schedule must be one of {SCHEDULES}, got {self.lr_schedule!r}")
        if not 0.0 < self.decay_factor <= 1.0:
            raise ValueError("decay_factor must lie in (0, 1]")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")
        if self.batch_size <= 0:
            raise ValueError("batch_size must be positive")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if self.checkpoint_interval is not None:
            if self.checkpoint_interval <= 0:
                raise ValueError("checkpoint_interval must be positive")
            if self.checkpoint_interval > self.epochs:
                raise ValueError("checkpoint_interval cannot exceed epochs")

    def lr_at(self, epoch: int) -> float:
        """Learning rate used throughout 0-based ``epoch``."""
        if self.lr_schedule == "constant":
            return self.initial_lr
        if self.lr_schedule == "exponential":
            return self.initial_lr * self.decay_factor**epoch
        span = max(self.epochs - 1, 1)
        return self.initial_lr * (1.0 - 0.9 * min(epoch, span) / span)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True, eq=False)
class Checkpoint:
    epoch: int
    model: MlpModel


def train(model: MlpModel, X, targets, config: TrainConfig) -> tuple[MlpModel, list[Checkpoint]]:
    """Minibatch SGD with per-step L2 shrinkage of the weight matrices.

    Shuffling and dropout masks come from one generator seeded by
    ``config.seed``, so the result is a pure function of the initial model,
    the data order and the config. Dropout is active during training
    whenever ``model.dropout_rate > 0``.

    Returns the final model and the checkpoints taken every
    ``config.checkpoint_interval`` epochs (oldest first).
    """
    X, _ = _as_batch(model, X)
    y = _check_targets(X, targets)
    if config.epochs == 0:
        return model, []

    rng = np.random.default_rng(config.seed)
    weights = [w.copy() for w in model.weights]
    biases = [b.copy() for b in model.biases]
    n = X.shape[0]
    bs = config.batch_size
    checkpoints: list[Checkpoint] = []

    for epoch in range(config.epochs):
        lr = config.lr_at(epoch)
        shrink = 1.0 - lr * config.weight_decay
        order = rng.permutation(n)
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            value, grad = _loss_and_grad(weights, biases, X[idx], y[idx], config.loss, model.dropout_rate, rng)
            if not math.isfinite(value):
                raise TrainingDivergedError(epoch + 1)
            if not grad.is_finite():
                raise TrainingDivergedError(epoch + 1, "gradient")
            for i in range(len(weights)):
                weights[i] *= shrink
                weights[i] -= lr * grad.weights[i]
                biases[i] -= lr * grad.biases[i]
        interval = config.checkpoint_interval
        if interval and (epoch + 1) % interval == 0:
            checkpoints.append(Checkpoint(epoch + 1, model.with_params(weights, biases)))

    return model.with_params(weights, biases), checkpoints


def finetune_config(base: TrainConfig, epochs: int = 40, initial_lr: float = 1e-5, decay_factor: float = 0.99) -> TrainConfig:
    """Fine-tuning schedule derived from a classification config.

    Exponentially decaying learning rate, no checkpoints; weight decay,
    batch size and loss are inherited from ``base``.
    """
    return base.replace(
        epochs=epochs,
        initial_lr=initial_lr,
        lr_schedule="exponential",
        decay_factor=decay_factor,
        checkpoint_interval=None,
    )


def finetune_to_experts(model: MlpModel, X, expert_means, config: TrainConfig | None = None) -> MlpModel:
    """Continue training ``model`` to regress the mean expert vote.

    ``expert_means`` holds one value in ``[0, 1]`` per row of ``X``; NaN marks
    an example without votes and is rejected. The input model is not
    modified.
    """
    if config is None:
        config = finetune_config(TrainConfig())
    means = np.asarray(expert_means, dtype=np.float64).ravel()
    missing = np.flatnonzero(np.isnan(means))
    if missing.size:
        raise ValueError(f"{missing.size} examples lack expert votes (first at row {missing[0]})")
    tuned, _ = train(model, X, means, config.replace(checkpoint_interval=None))
    return tuned


# -- serialization -----------------------------------------------------------

def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def _array_text(a: np.ndarray) -> str:
    if a.ndim == 1:
        return "[" + ", ".join(_fmt(v) for v in a) + "]"
    return "[\n    " + ",\n    ".join(_array_text(row) for row in a) + "\n  ]"


def model_to_text(model: MlpModel) -> str:
    """JSON document with 17-significant-digit weights (bit-faithful round trip)."""
    lines = [
        "{",
        f'  "format": "{MODEL_FORMAT}",',
        f'  "version": {MODEL_FORMAT_VERSION},',
        f'  "layer_sizes": {json.dumps(list(model.layer_sizes))},',
        f'  "dropout_rate": {_fmt(model.dropout_rate)},',
        f'  "hidden_activation": "{model.hidden_activation}",',
        '  "output_activation": "sigmoid",',
    ]
    blocks = []
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        blocks.append(f'  "W{i}": {_array_text(w)},\n  "b{i}": {_array_text(b)}')
    return "\n".join(lines) + "\n" + ",\n".join(blocks) + "\n}\n"


def model_from_text(text: str) -> MlpModel:
    doc = json.loads(text)
    if doc.get("format") != MODEL_FORMAT:
        raise ValueError(f"not an {MODEL_FORMAT} document")
    if doc.get("version") != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported {MODEL_FORMAT} version {doc.get('version')}")
    sizes = doc["layer_sizes"]
    weights, biases = [], []
    for i in range(len(sizes) - 1):
        w = np.array(doc[f"W{i}"], dtype=np.float64).reshape(sizes[i], sizes[i + 1])
        weights.append(w)
        biases.append(np.array(doc[f"b{i}"], dtype=np.float64).reshape(sizes[i + 1]))
    return MlpModel(tuple(weights), tuple(biases), float(doc["dropout_rate"]), doc["hidden_activation"])


def save_model(model: MlpModel, path) -> None:
    Path(path).write_text(model_to_text(model), encoding="utf-8")


def load_model(path) -> MlpModel:
    return model_from_text(Path(path).read_text(encoding="utf-8"))
