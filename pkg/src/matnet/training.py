"""Losses, Adam, weight penalties, early stopping and the epoch loop."""

from __future__ import annotations

import copy
import math
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Protocol

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tape, named_arrays, named_grads, value_of


# ---------------------------------------------------------------------------
# Optimizer


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    for name, g in grads.items():
        if params[name].shape != g.shape:
            raise ShapeError(f"gradient for {name!r} has the wrong shape", g.shape, params[name].shape)
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for name, g in grads.items():
        if name not in state.m:
            state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        params[name] -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state


class Adam:
    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.state = AdamState(lr, beta1, beta2, eps)

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        adam_step(params, grads, self.state)


# ---------------------------------------------------------------------------
# Losses


def softmax_cross_entropy(logits, target: int) -> tuple[float, np.ndarray]:
    """-log softmax(logits)[target] and its gradient with respect to the logits."""
    z = np.asarray(logits, dtype=np.float64).reshape(-1)
    if not 0 <= target < z.size:
        raise ValueError(f"target {target} out of range for {z.size} classes")
    shifted = z - z.max()
    log_probs = shifted - np.log(np.exp(shifted).sum())
    grad = np.exp(log_probs)
    grad[target] -= 1.0
    return float(-log_probs[target]), grad


def cross_entropy(logits, targets):
    """Mean softmax cross-entropy over a batch of logit rows."""
    z = value_of(logits)
    y = np.asarray(targets, dtype=np.intp)
    if z.ndim != 2 or y.shape != (z.shape[0],):
        raise ShapeError("cross_entropy needs (N, K) logits and N targets", z.shape, y.shape)
    if (y < 0).any() or (y >= z.shape[1]).any():
        raise ValueError("target class out of range")
    shifted = z - z.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    n = z.shape[0]
    loss = -log_probs[np.arange(n), y].mean()

    def back(g):
        grad = np.exp(log_probs)
        grad[np.arange(n), y] -= 1.0
        return (g * grad / n,)

    return T.record(np.asarray(loss), (logits,), back)


def mse_loss(pred, target):
    if value_of(pred).shape != value_of(target).shape:
        raise ShapeError("mse_loss shapes differ", value_of(pred).shape, value_of(target).shape)
    diff = T.sub(pred, target)
    return T.mean_all(T.hadamard(diff, diff))


def bce_loss(pred, target, eps: float = 1e-7):
    """Binary cross-entropy for predictions in (0, 1)."""
    p = value_of(pred)
    t = value_of(target)
    if p.shape != t.shape:
        raise ShapeError("bce_loss shapes differ", p.shape, t.shape)
    pc = np.clip(p, eps, 1.0 - eps)
    loss = -(t * np.log(pc) + (1.0 - t) * np.log(1.0 - pc)).mean()

    def back(g):
        return (g * (pc - t) / (pc * (1.0 - pc)) / p.size, None)

    return T.record(np.asarray(loss), (pred, target), back)


def weight_penalty(params, l1: float = 0.0, l2: float = 0.0) -> tuple[float, dict[str, np.ndarray]]:
    """l1 * sum|w| + l2 * sum w^2 over all arrays, with gradients (sign(0) = 0)."""
    if l1 < 0 or l2 < 0:
        raise ValueError("penalty coefficients must be non-negative")
    arrays = named_arrays(params)
    value = 0.0
    grads = {}
    for name, w in arrays.items():
        value += l1 * np.abs(w).sum() + l2 * (w * w).sum()
        grads[name] = l1 * np.sign(w) + 2.0 * l2 * w
    return float(value), grads


def penalty_term(bound, l1: float = 0.0, l2: float = 0.0):
    """Tape version of :func:`weight_penalty` over the leaves of ``bound``."""
    total = None
    for _, w in T._walk(bound):
        terms = []
        if l1:
            terms.append(T.scale(T.sum_all(T.abs_(w)), l1))
        if l2:
            terms.append(T.scale(T.sum_all(T.hadamard(w, w)), l2))
        for t in terms:
            total = t if total is None else T.add(total, t)
    return total


# ---------------------------------------------------------------------------
# Early stopping


@dataclass
class StoppingRule:
    """Stop after ``patience`` consecutive epochs without a strict improvement."""

    patience: int = 10
    best_val: float = math.inf
    epochs_since_best: int = 0

    def update(self, val_loss: float) -> bool:
        """Record one epoch; return True if it set a new best."""
        if val_loss < self.best_val:
            self.best_val = val_loss
            self.epochs_since_best = 0
            return True
        self.epochs_since_best += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.epochs_since_best >= self.patience


# ---------------------------------------------------------------------------
# Tasks


class Task(Protocol):
    params: Any
    metric_name: str

    def loss(self, p, inputs, targets, training: bool, rng) -> Any: ...

    def evaluate(self, inputs, targets) -> tuple[float, float]: ...


def _batches(n: int, size: int):
    for start in range(0, n, size):
        yield slice(start, min(start + size, n))


class ClassificationTask:
    """Wraps a net whose ``forward(p, X, training, rng)`` returns ``(N, K)`` logits."""

    metric_name = "accuracy"

    def __init__(self, net, eval_batch: int = 256):
        self.net = net
        self.params = net.params
        self.eval_batch = eval_batch

    def loss(self, p, X, y, training=False, rng=None):
        return cross_entropy(self.net.forward(p, X, training=training, rng=rng), y)

    def predict(self, X) -> np.ndarray:
        return np.concatenate([value_of(self.net.forward(self.params, X[s]))
                               for s in _batches(len(X), self.eval_batch)])

    def evaluate(self, X, y):
        logits = self.predict(X)
        loss = float(value_of(cross_entropy(logits, y)))
        return loss, float((logits.argmax(axis=1) == y).mean())


class ReconstructionTask:
    """Wraps a net mapping inputs to reconstructions of ``targets``."""

    metric_name = "mse"

    def __init__(self, net, loss: str = "mse", eval_batch: int = 256, forward: Callable | None = None):
        if loss not in ("mse", "bce"):
            raise ValueError(f"unknown reconstruction loss {loss!r}")
        self.net = net
        self.params = net.params
        self.kind = loss
        self.eval_batch = eval_batch
        self._forward = forward or (lambda p, X, training, rng: net.forward(p, X, training=training, rng=rng))

    def _loss(self, pred, target):
        return mse_loss(pred, target) if self.kind == "mse" else bce_loss(pred, target)

    def loss(self, p, X, target, training=False, rng=None):
        return self._loss(self._forward(p, X, training, rng), target)

    def evaluate(self, X, target):
        total = mse_total = 0.0
        for s in _batches(len(X), self.eval_batch):
            pred = value_of(self._forward(self.params, X[s], False, None))
            n = s.stop - s.start
            total += n * float(value_of(self._loss(pred, target[s])))
            mse_total += n * float(value_of(mse_loss(pred, target[s])))
        return total / len(X), mse_total / len(X)


class NodeClassificationTask:
    """Transductive node classification: inputs are node indices."""

    metric_name = "accuracy"

    def __init__(self, net):
        self.net = net
        self.params = net.params
        self.labels = np.asarray(net.graph.labels)

    def loss(self, p, idx, y, training=False, rng=None):
        logits = self.net.forward(p, training=training, rng=rng)
        return cross_entropy(T.take_rows(logits, idx), y)

    def evaluate(self, idx, y):
        logits = value_of(self.net.forward(self.params))[idx]
        loss = float(value_of(cross_entropy(logits, y)))
        return loss, float((logits.argmax(axis=1) == y).mean())


def stack_outputs(outputs: list):
    """Stack T per-step ``(N, c, r)`` outputs into ``(N, T, c, r)``."""
    parts = [T.reshape(o, value_of(o).shape[:1] + (1,) + value_of(o).shape[1:]) for o in outputs]
    return T.concat(parts, axis=1)


# ---------------------------------------------------------------------------
# Loop


@dataclass
class Split:
    train: tuple
    val: tuple | None = None
    test: tuple | None = None


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    metric: float
    wall_ms: float | None = None


@dataclass
class TrainingRecord:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float = math.inf
    stopped_early: bool = False
    steps: int = 0


def train_loop(task: Task, data: Split, optimizer: Adam, stopping: StoppingRule | None,
               epochs: int, rng: np.random.Generator, batch_size: int = 32,
               l1: float = 0.0, l2: float = 0.0, time_epochs: bool = False,
               on_epoch: Callable[[EpochRecord], None] | None = None) -> TrainingRecord:
    """Minibatch Adam training with early stopping on validation loss.

    Without a validation split the training-set evaluation stands in for it.
    On return ``task.params`` hold the best-validation weights.
    """
    X, y = data.train
    n = len(X)
    if n == 0:
        raise ValueError("empty training split")
    if stopping is None:
        stopping = StoppingRule(patience=epochs + 1)
    params = named_arrays(task.params)
    record = TrainingRecord()
    best = copy.deepcopy(params)
    for epoch in range(epochs):
        start = time.perf_counter()
        order = rng.permutation(n)
        total = 0.0
        for s in _batches(n, batch_size):
            idx = order[s]
            tape = Tape()
            bound = tape.watch(task.params)
            loss = task.loss(bound, X[idx], y[idx], training=True, rng=rng)
            total += float(value_of(loss)) * len(idx)
            if l1 or l2:
                loss = T.add(loss, penalty_term(bound, l1, l2))
            tape.backward(loss)
            optimizer.step(params, named_grads(bound))
            record.steps += 1
        train_loss = total / n
        eval_split = data.val if data.val is not None else data.train
        val_loss, metric = task.evaluate(*eval_split)
        wall = (time.perf_counter() - start) * 1e3 if time_epochs else None
        rec = EpochRecord(epoch, train_loss, val_loss, metric, wall)
        record.epochs.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
        if stopping.update(val_loss):
            record.best_epoch = epoch
            record.best_val_loss = val_loss
            best = copy.deepcopy(params)
        elif stopping.should_stop:
            record.stopped_early = True
            break
    for name, arr in params.items():
        arr[...] = best[name]
    return record
