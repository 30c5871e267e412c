import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bimodel_slu.metrics import (REPORT_FIELDS, Chunk, EvalReport, build_report, chunk_counts,
                                 extract_chunks, intent_accuracy, slot_f1)
from bimodel_slu.tensor import ContractError

TAGS = ["O", "B-a", "I-a", "B-b", "I-b"]


# --- oracle: streaming counter modelled on conlleval.pl (IOB subset) -------

def _split(tag):
    return ("O", "") if tag == "O" else tuple(tag.split("-", 1))


def _end_of_chunk(prev_tag, tag, prev_type, typ):
    end = (prev_tag, tag) in {("B", "B"), ("B", "O"), ("I", "B"), ("I", "O")}
    return end or (prev_tag != "O" and prev_type != typ)


def _start_of_chunk(prev_tag, tag, prev_type, typ):
    start = (prev_tag, tag) in {("B", "B"), ("I", "B"), ("O", "B"), ("O", "I")}
    return start or (tag != "O" and prev_type != typ)


def conlleval_counts(gold_seqs, pred_seqs):
    correct = found_gold = found_pred = 0
    for gold, pred in zip(gold_seqs, pred_seqs):
        in_correct = False
        lg, lg_t, lp, lp_t = "O", "", "O", ""
        for g_raw, p_raw in list(zip(gold, pred)) + [("O", "O")]:  # sentence boundary closes chunks
            g, g_t = _split(g_raw)
            p, p_t = _split(p_raw)
            if in_correct:
                g_end = _end_of_chunk(lg, g, lg_t, g_t)
                p_end = _end_of_chunk(lp, p, lp_t, p_t)
                if g_end and p_end and lp_t == lg_t:
                    in_correct = False
                    correct += 1
                elif g_end != p_end or g_t != p_t:
                    in_correct = False
            g_start = _start_of_chunk(lg, g, lg_t, g_t)
            p_start = _start_of_chunk(lp, p, lp_t, p_t)
            if g_start and p_start and g_t == p_t:
                in_correct = True
            found_gold += g_start
            found_pred += p_start
            lg, lg_t, lp, lp_t = g, g_t, p, p_t
    return correct, found_pred, found_gold


def random_pairs(n, seed=0):
    rng = np.random.default_rng(seed)
    gold, pred = [], []
    for _ in range(n):
        length = int(rng.integers(1, 12))
        gold.append([TAGS[i] for i in rng.integers(0, len(TAGS), length)])
        pred.append([TAGS[i] for i in rng.integers(0, len(TAGS), length)])
    return gold, pred


# ---------------------------------------------------------------------------

@pytest.mark.parametrize("tags,expected", [
    (["O", "B-a", "I-a", "O"], [Chunk("a", 1, 2)]),
    (["B-a", "B-a"], [Chunk("a", 0, 0), Chunk("a", 1, 1)]),
    (["I-a", "I-a", "O"], [Chunk("a", 0, 1)]),
    (["B-a", "I-b"], [Chunk("a", 0, 0), Chunk("b", 1, 1)]),
    (["O", "O"], []),
    (["B-a", "I-a"], [Chunk("a", 0, 1)]),
])
def test_extract_chunks(tags, expected):
    assert extract_chunks(tags) == expected


def test_strict_ignores_orphan_inside():
    assert extract_chunks(["I-a", "I-a", "B-b", "I-a"], strict=True) == [Chunk("b", 2, 2)]


def test_perfect_prediction():
    gold = [["B-a", "I-a", "O", "B-b"]]
    assert slot_f1(gold, gold) == (100.0, 100.0, 100.0)


def test_partial_prediction():
    gold = [["B-a", "I-a", "O", "B-b"]]
    pred = [["B-a", "O", "O", "B-b"]]  # a-chunk boundary wrong
    p, r, f = slot_f1(gold, pred)
    assert (p, r) == (50.0, 50.0) and f == pytest.approx(50.0)


def test_no_chunks_anywhere_gives_zero():
    assert slot_f1([["O"]], [["O"]]) == (0.0, 0.0, 0.0)


def test_misaligned_sequences():
    with pytest.raises(ContractError):
        chunk_counts([["O", "O"]], [["O"]])
    with pytest.raises(ContractError):
        chunk_counts([["O"]], [])


def test_matches_conlleval_oracle():
    gold, pred = random_pairs(1000)
    assert chunk_counts(gold, pred) == conlleval_counts(gold, pred)


def test_intent_accuracy():
    gold = ["x"] * 893
    pred = ["x"] * 884 + ["y"] * 9
    assert round(intent_accuracy(gold, pred), 1) == 99.0
    with pytest.raises(ContractError):
        intent_accuracy([], [])
    with pytest.raises(ContractError):
        intent_accuracy(["x"], ["x", "y"])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_permutation_invariance(seed):
    gold, pred = random_pairs(20, seed)
    perm = np.random.default_rng(seed).permutation(20)
    assert slot_f1(gold, pred) == slot_f1([gold[i] for i in perm], [pred[i] for i in perm])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_swapping_roles_swaps_precision_and_recall(seed):
    gold, pred = random_pairs(15, seed)
    p, r, f = slot_f1(gold, pred)
    p2, r2, f2 = slot_f1(pred, gold)
    assert (p, r) == (r2, p2) and f == pytest.approx(f2)


def test_report_fields_and_json():
    rep = build_report([["B-a", "O"]], [["B-a", "O"]], ["x", "y"], ["x", "x"])
    d = json.loads(rep.to_json())
    assert tuple(sorted(d)) == tuple(sorted(REPORT_FIELDS))
    assert d["intent_confusion"] == {"x": {"x": 1}, "y": {"x": 1}}
    assert (rep.intent_correct, rep.intent_total, rep.intent_accuracy) == (1, 2, 50.0)
    assert EvalReport.from_dict(d) == rep
    assert "slot F1" in rep.table()
