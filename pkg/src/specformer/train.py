"""Optimizer, losses, metrics and the two training loops."""

from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .analysis import CondensedAttention, condense_attention
from .autodiff import Tape, Var
from .graph import SparseGraph, SyntheticTask, normalized_laplacian
from .linalg import EigenSystem, symmetric_eig
from .model import ModelConfig, Specformer

__all__ = [
    "UndefinedMetricError",
    "AdamState",
    "adam_step",
    "clip_grad_norm",
    "sse_loss",
    "r2_score",
    "cross_entropy_loss",
    "accuracy",
    "TrainConfig",
    "EarlyStopping",
    "MetricsReport",
    "format_table_cell",
    "effective_response",
    "train_synthetic",
    "train_nodecls",
]


class UndefinedMetricError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0

    @classmethod
    def create(cls, params: Mapping[str, np.ndarray], **hyper) -> "AdamState":
        return cls(
            m={k: np.zeros_like(v) for k, v in params.items()},
            v={k: np.zeros_like(v) for k, v in params.items()},
            **hyper,
        )


def adam_step(
    params: dict[str, np.ndarray], grads: Mapping[str, np.ndarray], state: AdamState
) -> tuple[dict[str, np.ndarray], AdamState]:
    """Bias-corrected Adam, updating ``params`` and ``state`` in place.

    A positive ``weight_decay`` is applied decoupled from the gradient
    (``p -= lr * wd * p``), i.e. the AdamW form.
    """
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if g.shape != params[name].shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {params[name].shape}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name, g in grads.items():
        p = params[name]
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if state.weight_decay:
            p -= state.lr * state.weight_decay * p
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Rescale ``grads`` in place so their global L2 norm is at most ``max_norm``."""
    total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total > max_norm:
        factor = max_norm / total
        for g in grads.values():
            g *= factor
    return total


# ---------------------------------------------------------------------------
# losses and metrics
# ---------------------------------------------------------------------------


def sse_loss(pred: Var, target) -> Var:
    """Sum of squared errors as a 1x1 Var."""
    if not isinstance(target, Var):
        target = pred.tape.constant(np.asarray(target, dtype=np.float64).reshape(pred.shape[0], -1))
    if pred.shape != target.shape:
        raise ad.ShapeError(f"sse_loss: shape mismatch {pred.shape} vs {target.shape}")
    diff = pred - target
    return ad.sum_all(diff * diff)


def r2_score(pred, target) -> float:
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    target = np.asarray(target, dtype=np.float64).reshape(-1)
    if pred.shape != target.shape:
        raise ValueError(f"r2_score: shape mismatch {pred.shape} vs {target.shape}")
    ss_tot = float(((target - target.mean()) ** 2).sum())
    if ss_tot == 0.0:
        raise UndefinedMetricError("R^2 is undefined for a constant target")
    return 1.0 - float(((target - pred) ** 2).sum()) / ss_tot


def cross_entropy_loss(logits: Var, labels, mask) -> Var:
    """Mean negative log-likelihood over the nodes selected by ``mask``."""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    mask = np.asarray(mask)
    if mask.dtype != bool:
        idx = mask.astype(np.int64)
        mask = np.zeros(logits.shape[0], dtype=bool)
        mask[idx] = True
    count = int(mask.sum())
    if count == 0:
        raise ValueError("cross_entropy_loss: mask selects no nodes")
    if labels.shape[0] != logits.shape[0]:
        raise ad.ShapeError(f"cross_entropy_loss: {labels.shape[0]} labels for {logits.shape[0]} rows")
    picker = np.zeros(logits.shape)
    rows = np.flatnonzero(mask)
    picker[rows, labels[rows]] = 1.0
    picked = ad.log_softmax_rows(logits) * logits.tape.constant(picker)
    return ad.scale(ad.sum_all(picked), -1.0 / count)


def accuracy(logits, labels, index) -> float:
    logits = np.asarray(logits)
    index = np.asarray(index, dtype=np.int64)
    return float(np.mean(logits[index].argmax(axis=1) == np.asarray(labels)[index]))


# ---------------------------------------------------------------------------
# training configuration and bookkeeping
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 2000
    patience: int = 200
    lr: float = 0.01
    weight_decay: float = 0.0
    seed: int = 0
    loss: str = "sse"
    metric: str = "r2"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    max_grad_norm: Optional[float] = None

    def __post_init__(self):
        if self.max_epochs < 1 or self.patience < 1:
            raise ValueError("max_epochs and patience must be positive")
        if self.patience > self.max_epochs:
            raise ValueError(f"patience {self.patience} exceeds max_epochs {self.max_epochs}")
        if self.loss not in ("sse", "cross-entropy"):
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.metric not in ("sse", "r2", "accuracy"):
            raise ValueError(f"unknown metric {self.metric!r}")

    def adam(self, params) -> AdamState:
        return AdamState.create(
            params,
            lr=self.lr,
            beta1=self.beta1,
            beta2=self.beta2,
            eps=self.adam_eps,
            weight_decay=self.weight_decay,
        )


class EarlyStopping:
    """Stop after ``patience`` consecutive epochs without a strict improvement.

    Ties do not count as improvements, so the earliest best epoch is kept.
    """

    def __init__(self, patience: int):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = 0
        self.bad_epochs = 0

    def update(self, epoch: int, value: float) -> tuple[bool, bool]:
        """Returns ``(improved, should_stop)``."""
        if value < self.best:
            self.best = value
            self.best_epoch = epoch
            self.bad_epochs = 0
            return True, False
        self.bad_epochs += 1
        return False, self.bad_epochs >= self.patience


@dataclass
class MetricsReport:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[Optional[float]] = field(default_factory=list)
    best_epoch: int = 0
    final_sse: Optional[float] = None
    r2: Optional[float] = None
    test_accuracy: Optional[float] = None
    seconds: float = 0.0
    param_count: int = 0
    filter_curve: Optional[np.ndarray] = None  # columns lambda, g_true, g_learned
    attention: Optional[CondensedAttention] = None

    @property
    def epochs(self) -> int:
        return len(self.train_loss)

    def loss_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss"])
        for k, (tr, va) in enumerate(zip(self.train_loss, self.val_loss), start=1):
            w.writerow([k, f"{tr:.17g}", "" if va is None else f"{va:.17g}"])
        return buf.getvalue()

    def summary(self) -> dict:
        return {
            "final_sse": self.final_sse,
            "r2": self.r2,
            "test_accuracy": self.test_accuracy,
            "seconds": self.seconds,
            "param_count": self.param_count,
            "epochs": self.epochs,
            "best_epoch": self.best_epoch,
        }

    def table_cell(self) -> str:
        """Mean SSE with R^2 in parentheses, e.g. ``0.0002(.9999)``."""
        return format_table_cell(self.final_sse, self.r2)

    def summary_json(self) -> str:
        return json.dumps(self.summary(), indent=2)


def format_table_cell(sse: float, r2: float, digits: int = 4) -> str:
    r2_text = f"{r2:.{digits}f}"
    if r2_text.startswith("0."):
        r2_text = r2_text[1:]
    elif r2_text.startswith("-0."):
        r2_text = "-" + r2_text[2:]
    return f"{sse:.{digits}f}({r2_text})"


def _snapshot(params: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: v.copy() for k, v in params.items()}


# ---------------------------------------------------------------------------
# synthetic filter regression
# ---------------------------------------------------------------------------


def effective_response(
    model: Specformer,
    eig: EigenSystem,
    indices: Sequence[int],
    base: Optional[np.ndarray] = None,
    delta: float = 1e-3,
) -> np.ndarray:
    """Spectral response of the trained network at selected eigenvalues.

    ``g(lam_k) = u_k^T (f(x0 + delta u_k) - f(x0 - delta u_k)) / (2 delta)``,
    the Jacobian of the network at ``x0`` read in the eigenbasis. ``base``
    defaults to the zero signal. For a network that is linear in its input
    this is exactly the implemented filter.
    """
    u = eig.eigenvectors
    x0 = np.zeros((eig.n, 1)) if base is None else np.asarray(base, dtype=np.float64).reshape(eig.n, 1)
    inputs = []
    for k in indices:
        inputs += [x0 + delta * u[:, [k]], x0 - delta * u[:, [k]]]
    tape = Tape()
    outs, _ = model.run(tape, tape.params(model.params), eig, inputs, train=False)
    return np.array(
        [
            u[:, k] @ (outs[2 * j].value[:, 0] - outs[2 * j + 1].value[:, 0]) / (2.0 * delta)
            for j, k in enumerate(indices)
        ]
    )


def downsample_indices(n: int, max_points: int = 256) -> np.ndarray:
    """Uniform 1:ratio subsample of ``range(n)`` keeping at most ``max_points``."""
    ratio = max(1, math.ceil(n / max_points))
    return np.arange(0, n, ratio)


def _synthetic_loss(model, tape, eig, task, train, rng):
    p = tape.params(model.params)
    outs, banks = model.run(tape, p, eig, task.inputs, train=train, rng=rng)
    total = None
    for out, y in zip(outs, task.targets):
        sse = sse_loss(out, y)
        total = sse if total is None else total + sse
    return ad.scale(total, 1.0 / len(outs)), outs, banks


def train_synthetic(
    task: SyntheticTask,
    model_config: ModelConfig,
    train_config: TrainConfig,
    max_filter_points: int = 256,
) -> tuple[MetricsReport, Specformer]:
    """Full-batch regression of filtered signals with early stopping on training loss.

    The loss is the mean over signals of each signal's sum of squared errors.
    The returned model carries the parameters of the best epoch.
    """
    if train_config.loss != "sse":
        raise ValueError("synthetic regression trains with the sse loss")
    start = time.perf_counter()
    rng = np.random.default_rng(train_config.seed)
    model = Specformer.init(model_config, rng)
    eig = task.eigensystem
    adam = train_config.adam(model.params)
    stopper = EarlyStopping(train_config.patience)
    report = MetricsReport(param_count=model.num_params)
    best = _snapshot(model.params)

    for epoch in range(1, train_config.max_epochs + 1):
        tape = Tape()
        loss, _, _ = _synthetic_loss(model, tape, eig, task, True, rng)
        value = float(loss.value[0, 0])
        report.train_loss.append(value)
        report.val_loss.append(None)
        improved, stop = stopper.update(epoch, value)
        if improved:
            best = _snapshot(model.params)
        if stop or not math.isfinite(value):
            break
        grads = ad.backward(tape, loss).named()
        if train_config.max_grad_norm is not None:
            clip_grad_norm(grads, train_config.max_grad_norm)
        adam_step(model.params, grads, adam)

    model.params = best
    report.best_epoch = stopper.best_epoch
    tape = Tape()
    _, outs, banks = _synthetic_loss(model, tape, eig, task, False, None)
    preds = [o.value for o in outs]
    report.final_sse = float(np.mean([((p - y) ** 2).sum() for p, y in zip(preds, task.targets)]))
    report.r2 = float(np.mean([r2_score(p, y) for p, y in zip(preds, task.targets)]))

    idx = downsample_indices(eig.q, max_filter_points)
    lam = eig.eigenvalues[idx]
    report.filter_curve = np.column_stack(
        [lam, task.filter(lam), effective_response(model, eig, idx, base=task.inputs[0])]
    )
    report.attention = condense_attention(banks[0].mean_attention(), eig.eigenvalues)
    report.seconds = time.perf_counter() - start
    return report, model


# ---------------------------------------------------------------------------
# node classification
# ---------------------------------------------------------------------------


def train_nodecls(
    graph: SparseGraph,
    splits: tuple[np.ndarray, np.ndarray, np.ndarray],
    model_config: ModelConfig,
    train_config: TrainConfig,
    eig: Optional[EigenSystem] = None,
) -> tuple[MetricsReport, Specformer]:
    """Cross-entropy training with early stopping on validation loss.

    Test accuracy is measured with the parameters of the epoch that attained
    the lowest validation loss (earliest on ties).
    """
    if graph.labels is None or graph.features is None:
        raise ValueError("node classification needs features and labels")
    start = time.perf_counter()
    if eig is None:
        eig = symmetric_eig(normalized_laplacian(graph))
    train_idx, val_idx, test_idx = (np.asarray(s, dtype=np.int64) for s in splits)
    labels = graph.labels
    features = graph.features
    rng = np.random.default_rng(train_config.seed)
    model = Specformer.init(model_config, rng)
    adam = train_config.adam(model.params)
    stopper = EarlyStopping(train_config.patience)
    report = MetricsReport(param_count=model.num_params)
    best = _snapshot(model.params)

    for epoch in range(1, train_config.max_epochs + 1):
        tape = Tape()
        outs, _ = model.run(tape, tape.params(model.params), eig, [features], train=True, rng=rng)
        loss = cross_entropy_loss(outs[0], labels, train_idx)
        grads = ad.backward(tape, loss).named()

        eval_tape = Tape()
        logits, _ = model.run(eval_tape, eval_tape.params(model.params), eig, [features])
        val = float(cross_entropy_loss(logits[0], labels, val_idx).value[0, 0])
        report.train_loss.append(float(loss.value[0, 0]))
        report.val_loss.append(val)
        improved, stop = stopper.update(epoch, val)
        if improved:
            best = _snapshot(model.params)
        if stop:
            break
        if train_config.max_grad_norm is not None:
            clip_grad_norm(grads, train_config.max_grad_norm)
        adam_step(model.params, grads, adam)

    model.params = best
    report.best_epoch = stopper.best_epoch
    logits = model.predict(eig, features)
    report.test_accuracy = accuracy(logits, labels, test_idx)
    report.seconds = time.perf_counter() - start
    return report, model
