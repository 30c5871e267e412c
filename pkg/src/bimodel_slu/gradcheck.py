"""Finite-difference verification of every parameter gradient of both losses.

Each loss is checked with the other network's shared states held fixed, which
is exactly the function whose gradient the detached training pass computes.
For every parameter tensor we compare the reverse-mode gradient with central
differences on a sample of entries plus one random direction covering the
whole tensor. The error for a tensor is

    max |analytic - numeric| / max(max |analytic|, max |numeric|, floor)

taken over everything compared for that tensor.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from . import tensor as T
from .config import RunConfig
from .data import Utterance, Vocabulary, build_vocab, encode_batch
from .model import (BiModel, compute_shared_states, intent_loss, predict_intent, predict_slots,
                    slot_loss)

STEP = 1e-4
THRESHOLD = 1e-3
SCALE_FLOOR = 1e-6


@dataclass
class ParamCheck:
    variant: str
    loss: str
    name: str
    max_error: float
    entries: int


@dataclass
class GradcheckReport:
    checks: list[ParamCheck] = field(default_factory=list)
    threshold: float = THRESHOLD

    @property
    def worst(self) -> ParamCheck:
        return max(self.checks, key=lambda c: c.max_error)

    @property
    def max_error(self) -> float:
        return self.worst.max_error if self.checks else 0.0

    @property
    def passed(self) -> bool:
        return bool(self.checks) and self.max_error < self.threshold

    def group_errors(self) -> dict[str, float]:
        """Max error per parameter group (``variant/loss/component``)."""
        out: dict[str, float] = {}
        for c in self.checks:
            group = f"{c.variant}/{c.loss}/{'.'.join(c.name.split('.')[:2])}"
            out[group] = max(out.get(group, 0.0), c.max_error)
        return out

    def lines(self) -> list[str]:
        rows = [f"{g:<48} {e:.3e}" for g, e in sorted(self.group_errors().items())]
        w = self.worst
        rows.append(f"max relative error {self.max_error:.3e} at {w.variant}/{w.loss}/{w.name} "
                    f"(threshold {self.threshold:g})")
        return rows


def tiny_corpus(vocab_size: int = 20, n: int = 3, seed: int = 0) -> list[Utterance]:
    """Random utterances whose word vocabulary has exactly ``vocab_size`` ids."""
    rng = np.random.default_rng(seed)
    words = [f"w{i}" for i in range(vocab_size - 2)]
    tags = ["O", "B-a", "I-a", "B-b"]
    out = []
    lengths = [4, 3, 2, 4][:n] if n <= 4 else rng.integers(2, 5, size=n)
    for i, length in enumerate(lengths):
        toks = [words[(i * 5 + j) % len(words)] for j in range(length)]
        out.append(Utterance(tuple(toks), tuple(rng.choice(tags, size=length)), f"intent{i % 2}"))
    # make every word appear so the vocabulary is complete
    out.append(Utterance(tuple(words), tuple(["O"] * len(words)), "intent0"))
    return out


def numeric_vs_analytic(loss_fn: Callable[[], T.Tensor], param: T.Tensor, rng: np.random.Generator,
                        max_entries: int, step: float = STEP) -> tuple[float, int]:
    param.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = param.grad.copy() if param.grad is not None else np.zeros_like(param.data)
    param.grad = None
    flat = param.data.reshape(-1)
    idx = np.arange(flat.size) if flat.size <= max_entries else rng.choice(flat.size, max_entries, replace=False)

    def value() -> float:
        with T.no_grad():
            return float(loss_fn().data)

    numeric = np.empty(len(idx))
    for j, i in enumerate(idx):
        old = flat[i]
        flat[i] = old + step
        up = value()
        flat[i] = old - step
        down = value()
        flat[i] = old
        numeric[j] = (up - down) / (2 * step)
    an = analytic.reshape(-1)[idx]
    # one random direction touching every entry
    d = rng.standard_normal(param.shape)
    original = param.data.copy()
    param.data[...] = original + step * d
    up = value()
    param.data[...] = original - step * d
    down = value()
    param.data[...] = original
    num_dir = (up - down) / (2 * step)
    an_dir = float((analytic * d).sum())
    diff = max(np.max(np.abs(an - numeric)) if len(idx) else 0.0, abs(an_dir - num_dir) / np.sqrt(d.size))
    scale = max(np.max(np.abs(an)) if len(idx) else 0.0, np.max(np.abs(numeric)) if len(idx) else 0.0,
                np.max(np.abs(analytic)), SCALE_FLOOR)
    return float(diff / scale), len(idx) + 1


def check_model(model: BiModel, utterances: list[Utterance], rng: np.random.Generator,
                max_entries: int = 64) -> list[ParamCheck]:
    batch = encode_batch(utterances, model.vocab)
    shared = compute_shared_states(model, batch)
    variant = model.config.variant

    def l1():
        return intent_loss(predict_intent(model, batch, shared), batch.intent_ids)

    def l2():
        return slot_loss(predict_slots(model, batch, shared, teacher_labels=batch.tag_ids),
                         batch.tag_ids, batch.mask)

    checks = []
    for loss_name, fn, params in (("L1", l1, model.intent_parameters()), ("L2", l2, model.slot_parameters())):
        for p in params:
            err, n = numeric_vs_analytic(fn, p, rng, max_entries)
            checks.append(ParamCheck(variant, loss_name, p.name, err, n))
    model.zero_grad()
    return checks


def run_gradcheck(hidden: int = 8, vocab_size: int = 20, seed: int = 0, max_entries: int = 64,
                  variants: Iterable[str] = ("with_decoder", "without_decoder"),
                  threshold: float = THRESHOLD) -> GradcheckReport:
    corpus = tiny_corpus(vocab_size, seed=seed)
    vocab: Vocabulary = build_vocab(corpus)
    probe = corpus[:3]
    report = GradcheckReport(threshold=threshold)
    rng = np.random.default_rng(seed)
    for variant in variants:
        cfg = RunConfig(variant=variant, hidden_dim=hidden, num_layers=2, embed_dim=6, label_embed_dim=4,
                        batch_size=len(probe), seed=seed)
        model = BiModel(cfg, vocab).astype(np.float64)
        # move off the tiny initial weights so every path carries signal
        for p in model.named_parameters().values():
            p.data += rng.uniform(-0.3, 0.3, size=p.shape)
        report.checks.extend(check_model(model, probe, rng, max_entries))
    return report
