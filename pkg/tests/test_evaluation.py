import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hamam.dataset import SentimentLabel
from hamam.errors import AlignmentError
from hamam.evaluation import ConfusionMatrix, confusion, error_report, macro_f1_pn, metrics

from helpers import make_record

POS, NEG, NEU = SentimentLabel


def script_f1(counts, c):
    """F1 = 2TP / (2TP + FP + FN); zero when there are no true positives."""
    tp = counts[c][c]
    fp = sum(counts[r][c] for r in range(3)) - tp
    fn = sum(counts[c]) - tp
    return 0.0 if tp == 0 else 2 * tp / (2 * tp + fp + fn)


def script_macro(counts):
    return 100 * (script_f1(counts, 0) + script_f1(counts, 1)) / 2


def test_confusion_examples():
    assert confusion([0, 1, 2] * 3, [0, 1, 2] * 3).to_list() == [[3, 0, 0], [0, 3, 0], [0, 0, 3]]
    assert confusion([], []).to_list() == [[0] * 3] * 3
    cm = confusion([POS, NEG, NEU, POS], [NEG, NEG, NEU, POS])
    assert cm.counts[POS, NEG] == 1 and cm.counts[POS, POS] == 1
    assert cm.counts[NEG, NEG] == 1 and cm.counts[NEU, NEU] == 1
    assert cm.total == 4


def test_confusion_alignment_errors():
    with pytest.raises(AlignmentError):
        confusion([0, 1], [0])
    with pytest.raises(AlignmentError, match="b!=c"):
        confusion([0, 1], [0, 1], gold_ids=["a", "b"], pred_ids=["a", "c"])


def test_macro_f1_hand_computed_matrix():
    counts = [[8, 1, 1], [2, 6, 2], [1, 1, 18]]
    # F1(pos) = 16/21, F1(neg) = 12/18, mean = 5/7
    assert macro_f1_pn(ConfusionMatrix(counts)) == pytest.approx(500 / 7, abs=1e-12)
    assert macro_f1_pn(ConfusionMatrix(counts)) == pytest.approx(script_macro(counts), abs=1e-12)


def test_macro_f1_perfect_and_all_neutral():
    assert macro_f1_pn(confusion([0, 1, 2, 2], [0, 1, 2, 2])) == 100.0
    assert macro_f1_pn(confusion([0, 1, 2, 0], [2, 2, 2, 2])) == 0.0


@given(st.lists(st.integers(0, 30), min_size=9, max_size=9))
def test_macro_f1_matches_script_oracle(flat):
    counts = np.array(flat).reshape(3, 3)
    score = macro_f1_pn(ConfusionMatrix(counts))
    assert score == pytest.approx(script_macro(counts.tolist()), abs=1e-9)
    assert 0.0 <= score <= 100.0


@given(st.lists(st.integers(0, 30), min_size=9, max_size=9), st.integers(0, 100))
def test_neutral_diagonal_never_matters(flat, nn):
    counts = np.array(flat).reshape(3, 3)
    changed = counts.copy()
    changed[2, 2] = nn
    assert macro_f1_pn(ConfusionMatrix(counts)) == macro_f1_pn(ConfusionMatrix(changed))


@given(st.lists(st.tuples(st.integers(0, 2), st.integers(0, 2)), max_size=40), st.randoms())
def test_metrics_permutation_invariant(pairs, rnd):
    shuffled = list(pairs)
    rnd.shuffle(shuffled)
    a = confusion([g for g, _ in pairs], [p for _, p in pairs])
    b = confusion([g for g, _ in shuffled], [p for _, p in shuffled])
    assert metrics(a) == metrics(b)


def test_metrics_json_shape():
    m = metrics(confusion([0, 1, 2], [0, 2, 2]))
    assert set(m) == {"macro_f1_pn", "f1_positive", "f1_negative", "f1_neutral", "confusion_matrix"}
    json.dumps(m)


def _recs(n):
    return [make_record(f"r{i}", ["the", f"e{i}", "went"], 1) for i in range(n)]


def test_error_report_empty():
    recs = _recs(3)
    rep = error_report(recs, [0, 1, 2], [0, 1, 2], [[1, 0, 0], [0, 1, 0], [0, 0, 1]])
    assert rep.groups == {}
    assert rep.render().startswith("Error report: 0 misclassified of 3")
    assert json.loads(rep.to_json())["errors"] == 0


def test_error_report_singleton():
    recs = _recs(2)
    rep = error_report(recs, [NEU, POS], [NEG, POS], [[0.1, 0.6, 0.3], [0.8, 0.1, 0.1]])
    assert list(rep.groups) == [(NEU, NEG)]
    (entry,) = rep.groups[(NEU, NEG)]
    assert entry.id == "r0" and entry.pred_prob == pytest.approx(0.6)
    assert rep.polarity_flips == 0


def test_error_report_ordering_matches_brute_force():
    rng = np.random.default_rng(4)
    n = 60
    recs = _recs(n)
    golds = rng.integers(0, 3, n)
    preds = rng.integers(0, 3, n)
    probs = rng.dirichlet(np.ones(3), n)
    rep = error_report(recs, golds, preds, probs)

    # brute force: enumerate every cell, sort entries by hand
    cells = {}
    for i in range(n):
        if golds[i] != preds[i]:
            cells.setdefault((int(golds[i]), int(preds[i])), []).append((-probs[i][preds[i]], f"r{i}"))
    flips = [c for c in cells if set(c) == {0, 1}]
    others = [c for c in cells if set(c) != {0, 1}]
    expected_order = sorted(flips, key=lambda c: (-len(cells[c]), c)) + sorted(others, key=lambda c: (-len(cells[c]), c))
    assert [(int(g), int(p)) for g, p in rep.groups] == expected_order
    for (g, p), entries in rep.groups.items():
        assert [e.id for e in entries] == [rid for _, rid in sorted(cells[(int(g), int(p))])]
    assert rep.error_count == int((golds != preds).sum())
    assert rep.polarity_flips == sum(len(cells[c]) for c in flips)
    assert "[POLARITY FLIP]" in rep.render()
