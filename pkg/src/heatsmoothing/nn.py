"""Feed-forward classifiers, SGD with momentum, and base-model training."""

from __future__ import annotations

import json
import logging
import math
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad

log = logging.getLogger(__name__)

ACTIVATIONS = ("relu", "tanh")
OUTPUT_MODES = ("logits", "probabilities")


class TrainingDiverged(RuntimeError):
    """Raised when a training loss becomes NaN or infinite."""


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class Mlp:
    """Fully connected classifier ``R^d -> R^Nc``.

    Weights are stored as ``(fan_in, fan_out)`` matrices so a batch ``X`` of
    shape ``(N, d)`` maps through ``X @ W + b``.  Parameters are autodiff
    leaves; :meth:`predict` is a graph-free numpy path for inference.

    ``n_evals`` counts examples pushed through the model (one per input row,
    either path).
    """

    def __init__(self, layer_sizes: Sequence[int], weights: Sequence[np.ndarray],
                 biases: Sequence[np.ndarray], activation: str = "relu",
                 output_mode: str = "logits", seed: int | None = None,
                 provenance: str = ""):
        layer_sizes = [int(s) for s in layer_sizes]
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        if output_mode not in OUTPUT_MODES:
            raise ValueError(f"unknown output mode {output_mode!r}")
        if len(weights) != len(layer_sizes) - 1 or len(biases) != len(weights):
            raise ValueError("need one weight matrix and one bias per layer transition")
        for i, (w, b) in enumerate(zip(weights, biases)):
            expect = (layer_sizes[i], layer_sizes[i + 1])
            if np.shape(w) != expect or np.shape(b) != (layer_sizes[i + 1],):
                raise ValueError(f"layer {i}: expected weight {expect}, got {np.shape(w)} / bias {np.shape(b)}")
        self.layer_sizes = layer_sizes
        self.activation = activation
        self.output_mode = output_mode
        self.seed = seed
        self.provenance = provenance
        self.weights = [ad.Tensor(w, requires_grad=True) for w in weights]
        self.biases = [ad.Tensor(b, requires_grad=True) for b in biases]
        self.info: dict = {}
        self.n_evals = 0
        self._lock = threading.Lock()

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_classes(self) -> int:
        return self.layer_sizes[-1]

    @property
    def params(self) -> list[ad.Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def _count(self, n: int) -> None:
        with self._lock:
            self.n_evals += n

    def _check_input(self, shape: tuple) -> None:
        if len(shape) not in (1, 2) or shape[-1] != self.input_dim:
            raise ValueError(f"input shape {shape} does not match input dim {self.input_dim}")

    def logits(self, x) -> ad.Tensor:
        """Differentiable pre-softmax output for ``x`` of shape (d,) or (N, d)."""
        x = x if isinstance(x, ad.Tensor) else ad.Tensor(x)
        self._check_input(x.shape)
        self._count(1 if x.data.ndim == 1 else x.shape[0])
        act = ad.relu if self.activation == "relu" else ad.tanh
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                h = act(h)
        return h

    def __call__(self, x) -> ad.Tensor:
        z = self.logits(x)
        return ad.softmax(z) if self.output_mode == "probabilities" else z

    def log_probs(self, x) -> ad.Tensor:
        return ad.log_softmax(self.logits(x))

    def predict_logits(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        self._check_input(x.shape)
        self._count(1 if x.ndim == 1 else x.shape[0])
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w.data + b.data
            if i < last:
                h = np.maximum(h, 0.0) if self.activation == "relu" else np.tanh(h)
        return h

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Graph-free forward pass in the model's output mode."""
        z = self.predict_logits(x)
        return _softmax(z) if self.output_mode == "probabilities" else z

    def probabilities(self, x: np.ndarray) -> np.ndarray:
        return _softmax(self.predict_logits(x))

    def classify(self, x: np.ndarray) -> np.ndarray:
        # argmax breaks ties toward the lowest index
        return np.argmax(self.predict_logits(x), axis=-1)

    def copy(self, output_mode: str | None = None) -> "Mlp":
        m = Mlp(self.layer_sizes, [w.data.copy() for w in self.weights],
                [b.data.copy() for b in self.biases], self.activation,
                output_mode or self.output_mode, self.seed, self.provenance)
        m.info = json.loads(json.dumps(self.info))
        return m

    def load_state(self, other: "Mlp") -> None:
        for mine, theirs in zip(self.params, other.params):
            mine.data[...] = theirs.data

    # serialization
    def to_dict(self) -> dict:
        return {
            "layer_sizes": self.layer_sizes,
            "activation": self.activation,
            "output_mode": self.output_mode,
            "weights": [w.data.tolist() for w in self.weights],
            "biases": [b.data.tolist() for b in self.biases],
            "seed": self.seed,
            "provenance": self.provenance,
            "info": self.info,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Mlp":
        m = cls(d["layer_sizes"], [np.array(w, dtype=np.float64) for w in d["weights"]],
                [np.array(b, dtype=np.float64) for b in d["biases"]],
                d.get("activation", "relu"), d.get("output_mode", "logits"),
                d.get("seed"), d.get("provenance", ""))
        m.info = d.get("info", {})
        return m

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "Mlp":
        return cls.from_dict(json.loads(Path(path).read_text()))


def init_mlp(layer_sizes: Sequence[int], activation: str = "relu", seed: int = 0,
             output_mode: str = "logits") -> Mlp:
    """Glorot-uniform weights, zero biases."""
    if not layer_sizes:
        raise ValueError("layer_sizes is empty")
    if len(layer_sizes) < 3:
        raise ValueError("need at least one hidden layer")
    if any(int(s) < 1 for s in layer_sizes):
        raise ValueError(f"layer sizes must be >= 1, got {list(layer_sizes)}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return Mlp(layer_sizes, weights, biases, activation, output_mode, seed, "init")


def forward(model: Mlp, x) -> ad.Tensor:
    return model(x)


@dataclass
class OptimConfig:
    """SGD-with-momentum settings.

    ``epochs`` is the number of passes per training call; when smoothing it
    is the number of epochs spent on each timestep.  ``schedule`` holds
    ``(epoch, multiplier)`` pairs: from that epoch on the base rate is scaled
    by the multiplier.  ``None`` means step decay by 0.1 at 50% and 75%.
    ``clip_norm`` rescales any minibatch gradient whose global l2 norm exceeds it.
    """

    learning_rate: float = 0.05
    momentum: float = 0.9
    epochs: int = 100
    batch_size: int = 64
    schedule: list[tuple[int, float]] | None = None
    seed: int = 0
    clip_norm: float | None = None

    def __post_init__(self):
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.schedule is not None:
            self.schedule = [(int(e), float(m)) for e, m in self.schedule]
            epochs = [e for e, _ in self.schedule]
            if any(b <= a for a, b in zip(epochs, epochs[1:])):
                raise ValueError("schedule epochs must be strictly increasing")
            if any(m <= 0 for _, m in self.schedule):
                raise ValueError("schedule multipliers must be positive")

    def milestones(self) -> list[tuple[int, float]]:
        if self.schedule is not None:
            return self.schedule
        return [(self.epochs // 2, 0.1), ((3 * self.epochs) // 4, 0.01)]

    def lr_at(self, epoch: int) -> float:
        mult = 1.0
        for e, m in self.milestones():
            if epoch >= e:
                mult = m
        return self.learning_rate * mult


class SGD:
    """Heavy-ball momentum: ``buf = mu * buf + g; p -= lr * buf``."""

    def __init__(self, params: Sequence[ad.Tensor], lr: float, momentum: float = 0.0,
                 clip_norm: float | None = None):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.clip_norm = clip_norm
        self._buf = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads: dict) -> None:
        scale = 1.0
        if self.clip_norm is not None:
            total = math.sqrt(sum(float(np.sum(grads[p] ** 2)) for p in self.params))
            if total > self.clip_norm:
                scale = self.clip_norm / total
        for p, buf in zip(self.params, self._buf):
            g = grads[p] * scale if scale != 1.0 else grads[p]
            if self.momentum:
                buf *= self.momentum
                buf += g
                g = buf
            p.data -= self.lr * g


def cross_entropy(logits: ad.Tensor, labels: np.ndarray) -> ad.Tensor:
    onehot = np.zeros(logits.shape)
    onehot[np.arange(len(labels)), labels] = 1.0
    return ad.neg(ad.mean(ad.sum(ad.log_softmax(logits) * onehot, axis=1)))


def sgd_loop(model: Mlp, n: int, batch_loss: Callable[[np.ndarray, int], ad.Tensor],
             optim: OptimConfig, rng: np.random.Generator,
             on_epoch: Callable[[int, float], None] | None = None) -> float:
    """Run ``optim.epochs`` epochs of minibatch SGD over ``n`` examples.

    ``batch_loss(indices, epoch)`` builds the scalar loss for one minibatch.
    Returns the mean loss of the final epoch.
    """
    opt = SGD(model.params, optim.learning_rate, optim.momentum, optim.clip_norm)
    last = float("nan")
    for epoch in range(optim.epochs):
        opt.lr = optim.lr_at(epoch)
        order = rng.permutation(n)
        total, count = 0.0, 0
        for start in range(0, n, optim.batch_size):
            idx = order[start:start + optim.batch_size]
            loss = batch_loss(idx, epoch)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDiverged(f"non-finite loss {value} at epoch {epoch}, batch starting {start}")
            opt.step(ad.grad(loss, model.params))
            total += value * len(idx)
            count += len(idx)
        last = total / count
        if on_epoch is not None:
            on_epoch(epoch, last)
    return last


def accuracy(model: Mlp, inputs: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(model.classify(inputs) == labels))


def train_base(inputs: np.ndarray, labels: np.ndarray, layer_sizes: Sequence[int],
               optim: OptimConfig | None = None, activation: str = "relu") -> Mlp:
    """Train the base classifier with cross-entropy on logits."""
    optim = optim or OptimConfig()
    inputs = np.asarray(inputs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if len(inputs) == 0:
        raise ValueError("empty dataset")
    if len(inputs) != len(labels):
        raise ValueError("inputs and labels differ in length")
    n_classes = layer_sizes[-1]
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError(f"labels must lie in 0..{n_classes - 1}")
    model = init_mlp(layer_sizes, activation, optim.seed)
    rng = np.random.default_rng([optim.seed, 1])

    def batch_loss(idx, _epoch):
        return cross_entropy(model.logits(inputs[idx]), labels[idx])

    final = sgd_loop(model, len(inputs), batch_loss, optim, rng)
    acc = accuracy(model, inputs, labels)
    model.provenance = "train_base"
    model.info = {"train_accuracy": acc, "final_loss": final, "epochs": optim.epochs}
    model.n_evals = 0
    log.info("base model: train accuracy %.4f, final loss %.4g", acc, final)
    return model
