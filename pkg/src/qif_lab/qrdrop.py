"""Dropout-consistency training of a small MLP (R-Drop / QR-Drop).

Every example goes through the network twice with independent dropout
masks. The loss is the mean two-pass NLL plus ``beta`` times a consistency
term between the two softmax outputs: bidirectional KL (R-Drop), QIF
(QR-Drop) or nothing. Backpropagation is written out by hand in numpy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import divergences as dv
from .datasets import Dataset, DatasetError
from .divergences import DEFAULT_CLAMP, ClampPolicy
from .seeding import stream

CONSISTENCY_KINDS = ("none", "kl_bidirectional", "qif")


class TrainingError(FloatingPointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    layer_widths: tuple[int, ...] = (2, 32, 32, 2)
    dropout_rate: float = 0.1
    beta: float = 1.0
    epochs: int = 200
    learning_rate: float = 0.1
    batch_size: int = 32
    consistency: str = "qif"
    seed: int = 0
    clamp: ClampPolicy = DEFAULT_CLAMP

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        if len(widths) < 2 or any(w < 1 for w in widths):
            raise ValueError("layer_widths needs at least two positive entries")
        if widths[-1] < 2:
            raise ValueError("final width is the class count and must be >= 2")
        if not (0.0 <= self.dropout_rate < 1.0):
            raise ValueError("dropout_rate must lie in [0, 1)")
        if not self.beta >= 0:
            raise ValueError("beta must be nonnegative")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be nonnegative")
        if self.consistency not in CONSISTENCY_KINDS:
            raise ValueError(f"unknown consistency {self.consistency!r}; choose from {CONSISTENCY_KINDS}")
        if self.seed < 0:
            raise ValueError("seed must be unsigned")

    @property
    def n_classes(self) -> int:
        return self.layer_widths[-1]

    @property
    def consistency_active(self) -> bool:
        # with dropout off the two passes coincide and the term vanishes identically
        return self.consistency != "none" and self.beta > 0 and self.dropout_rate > 0


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    test_loss: float
    train_acc: float
    test_acc: float
    consistency_loss_mean: float


HISTORY_HEADER = "epoch,train_loss,test_loss,train_acc,test_acc,consistency_mean"


def write_history(path, history: list[EpochRecord]):
    with open(path, "w", newline="") as f:
        f.write(HISTORY_HEADER + "\n")
        for r in history:
            f.write(
                f"{r.epoch},{r.train_loss!r},{r.test_loss!r},{r.train_acc!r},{r.test_acc!r},{r.consistency_loss_mean!r}\n"
            )


# -- model ------------------------------------------------------------------


@dataclass
class MLP:
    """tanh hidden layers, softmax output. ``weights[l]`` has shape ``(in, out)``."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    dropout_rate: float = 0.0

    @classmethod
    def init(cls, widths, rng: np.random.Generator, dropout_rate: float = 0.0) -> "MLP":
        weights, biases = [], []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, (fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases, dropout_rate)

    @property
    def widths(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    def params(self) -> list[np.ndarray]:
        return [a for pair in zip(self.weights, self.biases) for a in pair]

    def copy(self) -> "MLP":
        return MLP([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.dropout_rate)

    def draw_masks(self, rng: np.random.Generator, batch: int) -> list[np.ndarray]:
        """Inverted-dropout masks for every hidden layer: 0 or ``1 / (1 - rate)``."""
        masks = []
        keep = 1.0 - self.dropout_rate
        for w in self.weights[:-1]:
            if self.dropout_rate == 0:
                masks.append(np.ones((batch, w.shape[1])))
            else:
                masks.append((rng.random((batch, w.shape[1])) < keep) / keep)
        return masks

    def forward(self, x: np.ndarray, masks: list[np.ndarray] | None = None):
        """Return ``(probs, cache)``; ``masks=None`` means dropout disabled."""
        h = np.atleast_2d(x)
        cache = [h]
        for layer, (w, b) in enumerate(zip(self.weights[:-1], self.biases[:-1])):
            a = np.tanh(h @ w + b)
            h = a * masks[layer] if masks is not None else a
            cache.append(a)
            cache.append(h)
        z = h @ self.weights[-1] + self.biases[-1]
        if not np.all(np.isfinite(z)):
            raise TrainingError("non-finite activation in forward pass")
        return softmax(z), cache

    def backward(self, grad_z: np.ndarray, cache, masks) -> list[np.ndarray]:
        """Parameter gradients given dLoss/dlogits; order matches :meth:`params`."""
        n_hidden = len(self.weights) - 1
        gw = [None] * len(self.weights)
        gb = [None] * len(self.weights)
        h_last = cache[-1]
        gw[-1] = h_last.T @ grad_z
        gb[-1] = grad_z.sum(0)
        g = grad_z @ self.weights[-1].T
        for layer in range(n_hidden - 1, -1, -1):
            a = cache[1 + 2 * layer]
            h_in = cache[2 * layer]
            if masks is not None:
                g = g * masks[layer]
            g = g * (1.0 - a * a)
            gw[layer] = h_in.T @ g
            gb[layer] = g.sum(0)
            g = g @ self.weights[layer].T
        return [a for pair in zip(gw, gb) for a in pair]

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x, None)[0]


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def forward_dropout(model: MLP, x, mask_seed: int) -> dv.DiscreteDistribution:
    """Class distribution for one feature row under the dropout mask drawn from ``mask_seed``."""
    rng = np.random.default_rng(mask_seed)
    masks = model.draw_masks(rng, 1)
    probs, _ = model.forward(np.asarray(x, dtype=np.float64).reshape(1, -1), masks)
    return dv.DiscreteDistribution(probs[0])


# -- losses -----------------------------------------------------------------


def consistency_loss(p1, p2, kind: str, clamp: ClampPolicy = DEFAULT_CLAMP) -> float:
    """Symmetric consistency between two dropout outputs."""
    if kind == "kl_bidirectional":
        return 0.5 * (dv.kl(p1, p2, clamp) + dv.kl(p2, p1, clamp))
    if kind == "qif":
        return dv.qif(p1, p2, clamp)
    if kind == "none":
        dv._pair(p1, p2)
        return 0.0
    raise ValueError(f"unknown consistency kind {kind!r}")


def _rows_kl(p: np.ndarray, q: np.ndarray, eps: float) -> np.ndarray:
    with np.errstate(divide="ignore"):
        logp = np.where(p > 0, np.log(np.where(p > 0, p, 1.0)), 0.0)
    return (p * (logp - np.log(np.maximum(q, eps)))).sum(1)


def _rows_consistency(p1: np.ndarray, p2: np.ndarray, kind: str, eps: float):
    """Per-row consistency values and their gradients w.r.t. ``p1`` and ``p2``."""
    if kind == "kl_bidirectional":
        value = 0.5 * (_rows_kl(p1, p2, eps) + _rows_kl(p2, p1, eps))
        g1 = 0.5 * (dv.kl_grad_p(p1, p2, eps) + dv.kl_grad_q(p2, p1, eps))
        g2 = 0.5 * (dv.kl_grad_p(p2, p1, eps) + dv.kl_grad_q(p1, p2, eps))
        return value, g1, g2
    if kind == "qif":
        b = np.sqrt(p1 * p2).sum(1, keepdims=True)
        f = np.minimum(b * b, 1.0)
        fc = np.maximum(f, eps)
        value = np.where(fc >= 1.0, 0.0, -fc * np.log(fc))[:, 0]
        scale = np.where(f < eps, 0.0, -(np.log(fc) + 1.0) * b)
        g1 = scale * np.sqrt(p2 / np.maximum(p1, eps))
        g2 = scale * np.sqrt(p1 / np.maximum(p2, eps))
        return value, g1, g2
    raise ValueError(f"unknown consistency kind {kind!r}")


def _softmax_backward(p: np.ndarray, g: np.ndarray) -> np.ndarray:
    return p * (g - (p * g).sum(1, keepdims=True))


def _nll(p: np.ndarray, y: np.ndarray, eps: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-row NLL and its gradient w.r.t. the logits."""
    rows = np.arange(len(y))
    py = p[rows, y]
    loss = -np.log(np.maximum(py, eps))
    grad = p.copy()
    grad[rows, y] -= 1.0
    grad[py <= eps] = 0.0
    return loss, grad


@dataclass
class LossResult:
    loss: float
    grads: list[np.ndarray]
    nll: float
    consistency: float


def total_loss(
    x: np.ndarray,
    y: np.ndarray,
    model: MLP,
    cfg: TrainConfig,
    masks1: list[np.ndarray],
    masks2: list[np.ndarray],
) -> LossResult:
    """Mean over the batch of ``(NLL(p1) + NLL(p2)) / 2 + beta * consistency(p1, p2)``.

    Gradients flow back through both dropout passes.
    """
    eps = cfg.clamp.epsilon
    n = len(y)
    p1, cache1 = model.forward(x, masks1)
    p2, cache2 = model.forward(x, masks2)
    nll1, gz1 = _nll(p1, y, eps)
    nll2, gz2 = _nll(p2, y, eps)
    nll = 0.5 * (nll1 + nll2)
    gz1 = 0.5 * gz1
    gz2 = 0.5 * gz2
    cons = np.zeros(n)
    if cfg.consistency_active:
        cons, gp1, gp2 = _rows_consistency(p1, p2, cfg.consistency, eps)
        gz1 = gz1 + cfg.beta * _softmax_backward(p1, gp1)
        gz2 = gz2 + cfg.beta * _softmax_backward(p2, gp2)
    loss = float((nll + cfg.beta * cons).mean())
    if not math.isfinite(loss):
        raise TrainingError("non-finite loss")
    g1 = model.backward(gz1 / n, cache1, masks1)
    g2 = model.backward(gz2 / n, cache2, masks2)
    grads = [a + b for a, b in zip(g1, g2)]
    return LossResult(loss, grads, float(nll.mean()), float(cons.mean()))


# -- training ---------------------------------------------------------------


def evaluate(model: MLP, data: Dataset, eps: float = DEFAULT_CLAMP.epsilon) -> tuple[float, float]:
    """Dropout-free mean NLL and accuracy."""
    p = model.predict_proba(data.features)
    loss, _ = _nll(p, data.labels, eps)
    acc = float((p.argmax(1) == data.labels).mean())
    return float(loss.mean()), acc


def _validate(train_set: Dataset, test_set: Dataset, cfg: TrainConfig):
    k_in = cfg.layer_widths[0]
    for name, d in (("train", train_set), ("test", test_set)):
        if d.n_features != k_in:
            raise DatasetError(f"{name} set has {d.n_features} features, network expects {k_in}")
        if d.labels.max() >= cfg.n_classes:
            raise DatasetError(f"{name} set has labels outside [0, {cfg.n_classes})")
    missing = [c for c in range(cfg.n_classes) if c not in set(train_set.labels.tolist())]
    if missing:
        raise DatasetError(f"training split is missing classes {missing}")


def train(
    train_set: Dataset,
    test_set: Dataset,
    cfg: TrainConfig,
    model: MLP | None = None,
) -> tuple[list[EpochRecord], MLP]:
    """Minibatch SGD at a constant learning rate.

    Weight init, shuffling and dropout masks each come from their own seed
    stream, so toggling the consistency kind leaves the other random draws
    untouched.
    """
    _validate(train_set, test_set, cfg)
    if model is None:
        model = MLP.init(cfg.layer_widths, stream(cfg.seed, "weights"), cfg.dropout_rate)
    else:
        model = model.copy()
        model.dropout_rate = cfg.dropout_rate
    shuffle_rng = stream(cfg.seed, "shuffle")
    dropout_rng = stream(cfg.seed, "dropout")
    x_all, y_all = train_set.features, train_set.labels
    m = len(y_all)
    history = []
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(m)
        loss_sum = cons_sum = 0.0
        for start in range(0, m, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            masks1 = model.draw_masks(dropout_rng, len(idx))
            masks2 = model.draw_masks(dropout_rng, len(idx))
            res = total_loss(x_all[idx], y_all[idx], model, cfg, masks1, masks2)
            for param, grad in zip(model.params(), res.grads):
                param -= cfg.learning_rate * grad
            loss_sum += res.loss * len(idx)
            cons_sum += res.consistency * len(idx)
        _, train_acc = evaluate(model, train_set, cfg.clamp.epsilon)
        test_loss, test_acc = evaluate(model, test_set, cfg.clamp.epsilon)
        history.append(EpochRecord(epoch, loss_sum / m, test_loss, train_acc, test_acc, cons_sum / m))
    return history, model
