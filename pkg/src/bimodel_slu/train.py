"""Asynchronous training of the two task networks, plus the epoch loop."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .config import RunConfig
from .data import Batch, Utterance, batches
from .metrics import EvalReport, evaluate
from .model import (BiModel, compute_shared_states, intent_loss, predict_intent, predict_slots,
                    refresh_intent_states, slot_loss)
from .tensor import Adam, ContractError

logger = logging.getLogger(__name__)


def make_optimizers(model: BiModel) -> tuple[Adam, Adam]:
    lr = model.config.learning_rate
    return Adam(model.intent_parameters(), lr=lr), Adam(model.slot_parameters(), lr=lr)


def train_iteration(model: BiModel, batch: Batch, adam1: Adam, adam2: Adam) -> tuple[float, float]:
    """One asynchronous update: intent network first, then slot network.

    Both networks read states of the other that were computed before their
    own update and carry no gradient. With ``refresh_h1`` the slot network
    sees intent states from the freshly updated intent network.
    """
    cfg = model.config
    shared = compute_shared_states(model, batch)

    model.zero_grad()
    l1 = intent_loss(predict_intent(model, batch, shared), batch.intent_ids)
    l1.backward()
    T.clip_grad_norm(adam1.params, cfg.clip_norm)
    adam1.step()

    if cfg.refresh_h1:
        shared = refresh_intent_states(model, batch, shared)

    model.zero_grad()
    l2 = slot_loss(predict_slots(model, batch, shared, teacher_labels=batch.tag_ids), batch.tag_ids, batch.mask)
    l2.backward()
    T.clip_grad_norm(adam2.params, cfg.clip_norm)
    adam2.step()
    model.zero_grad()
    return l1.item(), l2.item()


@dataclass
class EpochRecord:
    epoch: int
    intent_loss: float
    slot_loss: float
    dev_f1: float | None
    dev_accuracy: float | None
    improved: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class TrainResult:
    log: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_state: dict[str, np.ndarray] | None = None
    best_report: EvalReport | None = None


def train(model: BiModel, train_set: Sequence[Utterance], dev_set: Sequence[Utterance],
          config: RunConfig | None = None,
          on_epoch: Callable[[EpochRecord], None] | None = None) -> TrainResult:
    """Epoch loop with early stopping on dev ``(slot F1, intent accuracy)``.

    The model ends up holding the best parameters seen. Without a dev set
    the last epoch counts as best.
    """
    cfg = config or model.config
    if not train_set:
        raise ContractError("train: empty training set")
    adam1, adam2 = make_optimizers(model)
    result = TrainResult()
    best_key: tuple[float, float] | None = None
    since_best = 0
    for epoch in range(1, cfg.max_epochs + 1):
        start = time.perf_counter()
        l1s, l2s, sizes = [], [], []
        for batch in batches(train_set, model.vocab, cfg.batch_size, shuffle_seed=cfg.seed * 100003 + epoch):
            l1, l2 = train_iteration(model, batch, adam1, adam2)
            l1s.append(l1)
            l2s.append(l2)
            sizes.append(batch.size)
        w = np.asarray(sizes, dtype=np.float64)
        mean_l1 = float(np.dot(l1s, w) / w.sum())
        mean_l2 = float(np.dot(l2s, w) / w.sum())
        report = evaluate(model, dev_set, strict=cfg.strict_chunks) if dev_set else None
        key = (report.slot_f1, report.intent_accuracy) if report else (float(epoch), 0.0)
        improved = best_key is None or key > best_key
        if improved:
            best_key = key
            since_best = 0
            result.best_epoch = epoch
            result.best_state = model.state_dict()
            result.best_report = report
        else:
            since_best += 1
        rec = EpochRecord(epoch, mean_l1, mean_l2, key[0] if report else None,
                          key[1] if report else None, improved)
        result.log.append(rec)
        logger.info("epoch %d  L1=%.4f  L2=%.4f  dev F1=%s  acc=%s  %.1fs%s", epoch, mean_l1, mean_l2,
                    rec.dev_f1, rec.dev_accuracy, time.perf_counter() - start, "  *" if improved else "")
        if on_epoch is not None:
            on_epoch(rec)
        if since_best >= cfg.patience:
            break
    if result.best_state is not None:
        model.load_state_dict(result.best_state)
    return result


def train_steps(model: BiModel, data: Sequence[Utterance], iterations: int,
                batch_size: int | None = None) -> list[tuple[float, float]]:
    """Run ``iterations`` asynchronous updates cycling over fixed batches."""
    if not data:
        raise ContractError("train_steps: empty data")
    adam1, adam2 = make_optimizers(model)
    fixed = list(batches(data, model.vocab, batch_size or model.config.batch_size))
    return [train_iteration(model, fixed[i % len(fixed)], adam1, adam2) for i in range(iterations)]
