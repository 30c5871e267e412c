import pytest

from bimodel_slu.gradcheck import GradcheckReport, ParamCheck, run_gradcheck, tiny_corpus
from bimodel_slu.data import build_vocab


def test_tiny_corpus_covers_vocabulary():
    vocab = build_vocab(tiny_corpus(20))
    assert vocab.num_words == 20


@pytest.mark.parametrize("variant", ["with_decoder", "without_decoder"])
def test_every_entry_of_every_parameter(variant):
    report = run_gradcheck(hidden=4, max_entries=10**9, variants=[variant])
    assert report.passed, report.lines()[-1]
    assert all(c.entries > 1 for c in report.checks)


def test_report_summary():
    report = GradcheckReport([ParamCheck("v", "L1", "intent.proj.W", 2e-3, 5),
                              ParamCheck("v", "L2", "slot.proj.b", 1e-9, 5)])
    assert not report.passed and report.worst.name == "intent.proj.W"
    assert report.group_errors() == {"v/L1/intent.proj": 2e-3, "v/L2/slot.proj": 1e-9}
    assert "intent.proj.W" in report.lines()[-1]
    assert not GradcheckReport().passed
