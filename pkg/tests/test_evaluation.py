import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dsnerlab.corpus import CorpusError, TagSet
from dsnerlab.evaluation import (
    SpanMetrics,
    f1_score,
    predict_labels,
    selected_label_f1,
    span_prf,
    span_prf_by_type,
    teacher_label_f1,
    token_selection_counts,
)
from dsnerlab.tagger import TaggerArch, init_params, window_ids

TS = TagSet(["PER", "LOC", "ORG", "MISC"])
B_PER, I_PER = TS.index("B-PER"), TS.index("I-PER")
B_LOC, B_ORG = TS.index("B-LOC"), TS.index("B-ORG")


def test_perfect_prediction():
    gold = [[B_PER, I_PER, 0], [0, B_LOC, 0]]
    m = span_prf(gold, gold, TS)
    assert (m.precision, m.recall, m.f1) == (1.0, 1.0, 1.0)


def test_published_harmonic_mean_point():
    # the reference KB-matching row: P=81.13, R=63.75 must give F1=71.40
    assert round(100 * f1_score(0.8113, 0.6375), 2) == 71.40


def test_hand_counted_case():
    gold = [[B_PER, 0, B_LOC]]
    pred = [[B_PER, 0, B_ORG]]  # hits PER, invents ORG, misses LOC
    m = span_prf(pred, gold, TS)
    assert (m.tp, m.fp, m.fn) == (1, 1, 1)
    assert m.precision == m.recall == m.f1 == 0.5


def test_boundary_must_match_exactly():
    gold = [[B_PER, I_PER, 0]]
    pred = [[B_PER, 0, 0]]
    m = span_prf(pred, gold, TS)
    assert m.tp == 0 and m.fp == 1 and m.fn == 1


def test_zero_denominators():
    m = span_prf([[0, 0]], [[0, 0]], TS)
    assert m.precision == m.recall == m.f1 == 0.0


def test_shape_mismatch_raises():
    with pytest.raises(CorpusError):
        span_prf([[0]], [[0], [0]], TS)
    with pytest.raises(CorpusError):
        span_prf([[0, 0]], [[0]], TS)


def test_micro_counts_additive_over_partitions():
    rng = np.random.default_rng(4)
    pred = [list(rng.integers(0, 9, size=rng.integers(1, 10))) for _ in range(12)]
    gold = [list(rng.integers(0, 9, size=len(p))) for p in pred]
    whole = span_prf(pred, gold, TS)
    left = span_prf(pred[:5], gold[:5], TS)
    right = span_prf(pred[5:], gold[5:], TS)
    assert whole.tp == left.tp + right.tp
    assert whole.fp == left.fp + right.fp
    assert whole.fn == left.fn + right.fn


def test_swap_pred_gold_swaps_p_and_r():
    rng = np.random.default_rng(9)
    pred = [list(rng.integers(0, 9, size=8)) for _ in range(6)]
    gold = [list(rng.integers(0, 9, size=8)) for _ in range(6)]
    a = span_prf(pred, gold, TS)
    b = span_prf(gold, pred, TS)
    assert a.tp == b.tp and a.precision == b.recall and a.recall == b.precision
    assert a.f1 == pytest.approx(b.f1)


def test_permutation_invariance():
    rng = np.random.default_rng(2)
    pred = [list(rng.integers(0, 9, size=6)) for _ in range(10)]
    gold = [list(rng.integers(0, 9, size=6)) for _ in range(10)]
    base = span_prf(pred, gold, TS)
    order = rng.permutation(10)
    shuffled = span_prf([pred[i] for i in order], [gold[i] for i in order], TS)
    assert base == shuffled


def test_by_type_totals_match_overall():
    rng = np.random.default_rng(7)
    pred = [list(rng.integers(0, 9, size=10)) for _ in range(15)]
    gold = [list(rng.integers(0, 9, size=10)) for _ in range(15)]
    overall = span_prf(pred, gold, TS)
    per_type = span_prf_by_type(pred, gold, TS)
    assert sum(m.tp for m in per_type.values()) == overall.tp
    assert sum(m.fp for m in per_type.values()) == overall.fp
    assert sum(m.fn for m in per_type.values()) == overall.fn


# -- token-level selection quality ----------------------------------------------


def test_selected_all_masked_is_flagged_empty():
    m = selected_label_f1([np.array([1, 2])], [np.array([0, 0])],
                          [np.array([1, 2])])
    assert m.empty and m.f1 == 0.0 and m.tp == 0


def test_selected_perfect():
    seqs = [np.array([B_PER, I_PER, 0])]
    m = selected_label_f1(seqs, [np.ones(3, dtype=np.uint8)], seqs)
    assert m.f1 == 1.0 and not m.empty


def test_selected_requires_gold():
    with pytest.raises(CorpusError, match="clean reference"):
        selected_label_f1([np.array([0])], [np.array([1])], None)


def test_selected_against_independent_tally():
    rng = np.random.default_rng(0)
    pseudo = rng.integers(0, 9, size=20)
    mask = rng.integers(0, 2, size=20).astype(np.uint8)
    gold = rng.integers(0, 9, size=20)
    m = selected_label_f1([pseudo], [mask], [gold])
    # independent per-token count
    tp = pred = gp = 0
    for p, k, g in zip(pseudo, mask, gold):
        if not k:
            continue
        if p != 0:
            pred += 1
        if g != 0:
            gp += 1
        if p == g != 0:
            tp += 1
    assert (m.tp, m.tp + m.fp, m.tp + m.fn) == (tp, pred, gp)
    should_p = tp / pred if pred else 0.0
    should_r = tp / gp if gp else 0.0
    assert m.precision == pytest.approx(should_p)
    assert m.recall == pytest.approx(should_r)


def test_token_counts_o_agreement_excluded_from_tp():
    tp, pred, gp, pop = token_selection_counts(
        np.array([0, 0]), np.array([1, 1]), np.array([0, 0]))
    assert (tp, pred, gp, pop) == (0, 0, 0, 2)


# -- teacher quality ---------------------------------------------------------------


def make_corpus(rng, n=6):
    ids = [rng.integers(1, 10, size=rng.integers(2, 7)) for _ in range(n)]
    wins = [window_ids(a, 1) for a in ids]
    gold = [list(rng.integers(0, 9, size=len(a))) for a in ids]
    return wins, gold


def test_teacher_all_o_scores_zero():
    arch = TaggerArch(3, 1, 4, 9, 0.0, 0)
    params = init_params(arch, 10)
    for _, a in params.named_arrays():
        a[:] = 0.0
    params.b_out[0] = 100.0  # forces O everywhere
    rng = np.random.default_rng(1)
    wins, gold = make_corpus(rng)
    gold[0][0] = B_PER
    m = teacher_label_f1(params, wins, gold, TS)
    assert m.precision == 0.0 and m.recall == 0.0 and m.f1 == 0.0


def test_teacher_equals_span_prf_on_materialized_predictions():
    arch = TaggerArch(3, 1, 4, 9, 0.0, 4)
    params = init_params(arch, 10)
    rng = np.random.default_rng(2)
    wins, gold = make_corpus(rng, n=10)
    direct = teacher_label_f1(params, wins, gold, TS)
    materialized = span_prf([list(p) for p in predict_labels(params, wins)],
                            gold, TS)
    assert direct == materialized


def test_metrics_dict_schema():
    m = SpanMetrics.from_counts(3, 1, 2)
    d = m.to_dict()
    assert set(d) == {"precision", "recall", "f1", "tp", "fp", "fn"}
    assert d["precision"] == 0.75 and d["recall"] == 0.6


@given(st.integers(0, 50), st.integers(0, 50), st.integers(0, 50))
@settings(max_examples=100)
def test_f1_formula_consistency(tp, fp, fn):
    m = SpanMetrics.from_counts(tp, fp, fn)
    if m.precision + m.recall > 0:
        assert m.f1 == pytest.approx(
            2 * m.precision * m.recall / (m.precision + m.recall))
    else:
        assert m.f1 == 0.0
    assert 0.0 <= m.f1 <= 1.0
