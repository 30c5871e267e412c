"""Chunk-level slot F1 with conlleval semantics, and intent accuracy."""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Sequence

from .tensor import ContractError

REPORT_FIELDS = (
    "slot_precision", "slot_recall", "slot_f1", "intent_accuracy",
    "true_positive_chunks", "predicted_chunks", "gold_chunks",
    "intent_correct", "intent_total", "intent_confusion",
)


class Chunk(NamedTuple):
    type: str
    start: int
    end: int  # inclusive


def _split(tag: str) -> tuple[str, str]:
    if tag == "O" or "-" not in tag:
        return "O", ""
    prefix, _, typ = tag.partition("-")
    return prefix, typ


def extract_chunks(tags: Sequence[str], strict: bool = False) -> list[Chunk]:
    """Chunks of an IOB sequence.

    ``I-X`` that does not continue an ``X`` chunk opens a new one, as
    conlleval does. With ``strict=True`` such tags are ignored instead.
    """
    chunks: list[Chunk] = []
    cur_type, cur_start = None, 0
    for i, tag in enumerate(tags):
        prefix, typ = _split(tag)
        if prefix == "I" and cur_type == typ:
            continue
        if cur_type is not None:
            chunks.append(Chunk(cur_type, cur_start, i - 1))
            cur_type = None
        if prefix == "B" or (prefix == "I" and not strict):
            cur_type, cur_start = typ, i
    if cur_type is not None:
        chunks.append(Chunk(cur_type, cur_start, len(tags) - 1))
    return chunks


class PRF(NamedTuple):
    precision: float
    recall: float
    f1: float


def _prf(tp: int, n_pred: int, n_gold: int) -> PRF:
    p = 100.0 * tp / n_pred if n_pred else 0.0
    r = 100.0 * tp / n_gold if n_gold else 0.0
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return PRF(p, r, f)


def chunk_counts(gold: Sequence[Sequence[str]], pred: Sequence[Sequence[str]],
                 strict: bool = False) -> tuple[int, int, int]:
    """Micro-averaged ``(true_positive, predicted, gold)`` chunk counts."""
    if len(gold) != len(pred):
        raise ContractError(f"slot_f1: {len(gold)} gold sequences but {len(pred)} predicted")
    tp = n_pred = n_gold = 0
    for i, (g, p) in enumerate(zip(gold, pred)):
        if len(g) != len(p):
            raise ContractError(f"slot_f1: utterance {i} has {len(g)} gold tags but {len(p)} predicted")
        gc = set(extract_chunks(g, strict))
        pc = set(extract_chunks(p, strict))
        tp += len(gc & pc)
        n_pred += len(pc)
        n_gold += len(gc)
    return tp, n_pred, n_gold


def slot_f1(gold: Sequence[Sequence[str]], pred: Sequence[Sequence[str]], strict: bool = False) -> PRF:
    """Precision, recall and F1 as percentages."""
    return _prf(*chunk_counts(gold, pred, strict))


def intent_accuracy(gold: Sequence[str], pred: Sequence[str]) -> float:
    if len(gold) != len(pred):
        raise ContractError(f"intent_accuracy: {len(gold)} gold labels but {len(pred)} predicted")
    if not gold:
        raise ContractError("intent_accuracy: no labels")
    return 100.0 * sum(g == p for g, p in zip(gold, pred)) / len(gold)


@dataclass
class EvalReport:
    slot_precision: float
    slot_recall: float
    slot_f1: float
    intent_accuracy: float
    true_positive_chunks: int
    predicted_chunks: int
    gold_chunks: int
    intent_correct: int
    intent_total: int
    intent_confusion: dict[str, dict[str, int]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(**{k: d[k] for k in REPORT_FIELDS})

    def table(self) -> str:
        rows = [
            ("slot precision", f"{self.slot_precision:.2f}"),
            ("slot recall", f"{self.slot_recall:.2f}"),
            ("slot F1", f"{self.slot_f1:.2f}"),
            ("intent accuracy", f"{self.intent_accuracy:.2f}"),
            ("chunks tp/pred/gold", f"{self.true_positive_chunks}/{self.predicted_chunks}/{self.gold_chunks}"),
            ("intents correct/total", f"{self.intent_correct}/{self.intent_total}"),
        ]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v:>12}" for k, v in rows)


def build_report(gold_tags: Sequence[Sequence[str]], pred_tags: Sequence[Sequence[str]],
                 gold_intents: Sequence[str], pred_intents: Sequence[str], strict: bool = False) -> EvalReport:
    tp, n_pred, n_gold = chunk_counts(gold_tags, pred_tags, strict)
    prf = _prf(tp, n_pred, n_gold)
    acc = intent_accuracy(gold_intents, pred_intents)
    confusion: dict[str, dict[str, int]] = defaultdict(dict)
    for g, p in zip(gold_intents, pred_intents):
        confusion[g][p] = confusion[g].get(p, 0) + 1
    return EvalReport(
        prf.precision, prf.recall, prf.f1, acc, tp, n_pred, n_gold,
        sum(g == p for g, p in zip(gold_intents, pred_intents)), len(gold_intents),
        {g: dict(sorted(row.items())) for g, row in sorted(confusion.items())},
    )


def evaluate(model, dataset, strict: bool = False, batch_size: int = 64) -> EvalReport:
    """Greedy-decode every utterance of ``dataset`` and score it.

    Utterances are decoded in fixed consecutive chunks, so the report is a
    deterministic function of the model and the dataset order.
    """
    from .model import predict_batch

    dataset = list(dataset)
    if not dataset:
        raise ContractError("evaluate: empty dataset")
    pred_intents, pred_tags = [], []
    for i in range(0, len(dataset), batch_size):
        for intent, tags in predict_batch(model, dataset[i:i + batch_size]):
            pred_intents.append(intent)
            pred_tags.append(tags)
    return build_report([u.slot_tags for u in dataset], pred_tags,
                        [u.intent for u in dataset], pred_intents, strict)
