"""Loss, AdamW, the warmup + cosine schedule and the training loop."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import metrics, seeding
from . import tensor as T
from .classifier import ClassifierHead, SidecarExtractor
from .errors import ContractError
from .network import SurrogateNet
from .nn import Module, Parameter
from .tensor import Tensor

log = logging.getLogger(__name__)


def cross_entropy(logits, labels) -> Tensor:
    """Mean of -log softmax(logits)[label] over the batch."""
    logits = T.as_tensor(logits)
    single = logits.ndim == 1
    if single:
        logits = T.reshape(logits, (1, -1))
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    n_classes = logits.shape[-1]
    if labels.shape[0] != logits.shape[0]:
        raise ContractError(f"{labels.shape[0]} labels for {logits.shape[0]} rows")
    if np.any(labels < 0) or np.any(labels >= n_classes):
        raise ContractError(f"label outside [0, {n_classes})")
    logp = T.log_softmax(logits, axis=-1)
    picked = logp[np.arange(labels.shape[0]), labels]
    return -T.mean(picked)


# ------------------------------------------------------------------ optimizer


@dataclass
class OptimState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adamw_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: OptimState,
               lr: float | None = None) -> list[np.ndarray]:
    """One decoupled-weight-decay Adam step; returns the updated arrays.

    theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta)
    """
    lr = state.lr if lr is None else lr
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise ContractError(f"parameter {i}: shape {p.shape} vs gradient {g.shape}")
        state.m[i] = b1 * state.m[i] + (1 - b1) * g
        state.v[i] = b2 * state.v[i] + (1 - b2) * g * g
        m_hat = state.m[i] / (1 - b1**t)
        v_hat = state.v[i] / (1 - b2**t)
        out.append(p - lr * (m_hat / (np.sqrt(v_hat) + state.eps) + state.weight_decay * p))
    return out


class AdamW:
    def __init__(self, params: Sequence[Parameter], **hyper):
        self.params = list(params)
        self.state = OptimState(**hyper)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self, lr: float | None = None) -> None:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        new = adamw_step([p.data for p in self.params], grads, self.state, lr)
        for p, value in zip(self.params, new):
            p.data = value


def lr_schedule(epoch: int, warmup_epochs: int, cosine_epochs: int, lr_max: float = 1e-4) -> float:
    """Linear warmup to ``lr_max`` over ``warmup_epochs``, then cosine decay to 0."""
    if epoch < 0:
        raise ContractError("epoch must be >= 0")
    if epoch < warmup_epochs:
        return lr_max * (epoch + 1) / warmup_epochs
    if cosine_epochs <= 0:
        return 0.0
    tau = min(1.0, (epoch - warmup_epochs) / cosine_epochs)
    return max(0.0, lr_max * 0.5 * (1.0 + math.cos(math.pi * tau)))


# ------------------------------------------------------------------- training


@dataclass(frozen=True)
class Sample:
    """One prepared subject.

    Learned compression uses ``stacks`` (N, 3, H, W), ``slice_text`` (N, d_t)
    and ``global_text`` (d_t,). Pooling baselines carry a fixed ``surrogate``
    (3, H, W); sidecar runs carry the row index into the feature file.
    """

    label: int
    subject_id: str
    stacks: np.ndarray | None = None
    slice_text: np.ndarray | None = None
    global_text: np.ndarray | None = None
    surrogate: np.ndarray | None = None
    feature_row: int | None = None


@dataclass(frozen=True)
class TrainConfig:
    warmup_epochs: int = 2
    cosine_epochs: int = 30
    batch_size: int = 8
    lr_max: float = 1e-4
    weight_decay: float = 1e-4
    seed: int = 0
    n_classes: int = 2

    def __post_init__(self):
        if self.warmup_epochs < 0 or self.cosine_epochs < 0 or self.epochs < 1:
            raise ContractError("schedule needs at least one epoch")
        if self.batch_size < 1:
            raise ContractError("batch_size must be >= 1")

    @property
    def epochs(self) -> int:
        return self.warmup_epochs + self.cosine_epochs


class SurrogateClassifier(Module):
    """Trainable part of the pipeline: optional surrogate network plus MLP head."""

    def __init__(self, net: SurrogateNet | None, head: ClassifierHead):
        self.net = net
        self.head = head

    def surrogates(self, batch: Sequence[Sample]) -> Tensor:
        if self.net is None:
            return Tensor(np.stack([s.surrogate for s in batch]))
        stacks = np.stack([s.stacks for s in batch])
        slice_text = np.stack([s.slice_text for s in batch])
        global_text = np.stack([s.global_text for s in batch])
        return self.net(stacks, slice_text, global_text)

    def logits(self, batch: Sequence[Sample], extractor) -> Tensor:
        if isinstance(extractor, SidecarExtractor):
            feats = extractor.rows([s.feature_row for s in batch])
        else:
            feats = extractor(self.surrogates(batch))
        return self.head(feats)


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    train_acc: float
    val_auc: float
    val_macro_auc: float
    val_acc: float

    HEADER = "epoch,lr,train_loss,train_acc,val_auc,val_macro_auc,val_acc"

    def line(self) -> str:
        return (f"{self.epoch},{self.lr:.10g},{self.train_loss:.10g},{self.train_acc:.10g},"
                f"{self.val_auc:.10g},{self.val_macro_auc:.10g},{self.val_acc:.10g}")


@dataclass
class Evaluation:
    probabilities: np.ndarray
    labels: np.ndarray
    loss: float
    accuracy: float
    auc: float
    macro_auc: float

    def report(self) -> dict[str, float]:
        return {"loss": self.loss, "accuracy": self.accuracy, "auc": self.auc,
                "macro_auc": self.macro_auc, "n": float(self.labels.size)}


def _batches(samples: Sequence[Sample], size: int, order=None):
    order = range(len(samples)) if order is None else order
    order = list(order)
    for start in range(0, len(order), size):
        yield [samples[i] for i in order[start:start + size]]


def positive_scores(prob: np.ndarray) -> np.ndarray:
    """AD-vs-rest score: the last class column (the positive class when binary)."""
    return prob[:, -1]


def evaluate(samples: Sequence[Sample], model: SurrogateClassifier, extractor,
             batch_size: int = 8) -> Evaluation:
    """Evaluation-mode probabilities and metrics; AUC entries are NaN if undefined."""
    prev = model.training
    model.eval()
    probs, losses = [], []
    with T.no_grad():
        for batch in _batches(samples, batch_size):
            logits = model.logits(batch, extractor)
            labels = [s.label for s in batch]
            losses.append(cross_entropy(logits, labels).item() * len(batch))
            probs.append(T.softmax(logits, axis=-1).data)
    model.train(prev)
    prob = np.concatenate(probs)
    labels = np.array([s.label for s in samples])
    try:
        pos_auc = metrics.auc(positive_scores(prob), labels == prob.shape[1] - 1)
    except metrics.UndefinedMetricError:
        pos_auc = float("nan")
    try:
        m_auc = metrics.macro_auc(prob, labels)
    except metrics.UndefinedMetricError:
        m_auc = float("nan")
    return Evaluation(prob, labels, float(np.sum(losses) / len(samples)),
                      metrics.accuracy(prob, labels), pos_auc, m_auc)


@dataclass
class History:
    records: list[EpochRecord] = field(default_factory=list)
    steps: int = 0

    def lines(self) -> list[str]:
        return [EpochRecord.HEADER] + [r.line() for r in self.records]


def train(samples: Sequence[Sample], cfg: TrainConfig, model: SurrogateClassifier, extractor,
          val_samples: Sequence[Sample] | None = None,
          on_epoch: Callable[[EpochRecord], None] | None = None) -> History:
    """Fit ``model`` in place; the extractor is only read, never updated."""
    if not samples:
        raise ContractError("training set is empty")
    opt = AdamW(model.parameters(), lr=cfg.lr_max, weight_decay=cfg.weight_decay)
    history = History()
    nan = float("nan")
    for epoch in range(cfg.epochs):
        lr = lr_schedule(epoch, cfg.warmup_epochs, cfg.cosine_epochs, cfg.lr_max)
        order = seeding.stage_rng(cfg.seed, seeding.SHUFFLE, epoch).permutation(len(samples))
        model.train()
        loss_sum, correct = 0.0, 0
        for batch in _batches(samples, cfg.batch_size, order):
            logits = model.logits(batch, extractor)
            labels = [s.label for s in batch]
            loss = cross_entropy(logits, labels)
            opt.zero_grad()
            T.backward(loss)
            opt.step(lr)
            history.steps += 1
            loss_sum += loss.item() * len(batch)
            correct += int(np.sum(np.argmax(logits.data, axis=1) == np.array(labels)))
        val = evaluate(val_samples, model, extractor, cfg.batch_size) if val_samples else None
        record = EpochRecord(epoch, lr, loss_sum / len(samples), correct / len(samples),
                             val.auc if val else nan, val.macro_auc if val else nan,
                             val.accuracy if val else nan)
        history.records.append(record)
        log.info(record.line())
        if on_epoch is not None:
            on_epoch(record)
    return history
