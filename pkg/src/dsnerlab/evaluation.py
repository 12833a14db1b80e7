"""Span-level P/R/F1, token-level selection diagnostics, teacher quality."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .corpus import CorpusError, TagSet, decode_bio_to_spans
from .tagger import TaggerParams, eval_probs


def f1_score(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


@dataclass(frozen=True)
class SpanMetrics:
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int) -> "SpanMetrics":
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        return cls(tp=tp, fp=fp, fn=fn, precision=p, recall=r, f1=f1_score(p, r))

    def to_dict(self) -> dict:
        return {
            "precision": self.precision, "recall": self.recall, "f1": self.f1,
            "tp": self.tp, "fp": self.fp, "fn": self.fn,
        }


def span_prf(pred: Sequence[Sequence[int]], gold: Sequence[Sequence[int]],
             tagset: TagSet) -> SpanMetrics:
    """Exact-match (start, end, type) span P/R/F1, micro-averaged.

    Both inputs are per-sentence label-index sequences over the same corpus;
    illegal BIO transitions are repaired by the decoder, so scoring is total.
    """
    if len(pred) != len(gold):
        raise CorpusError(f"{len(pred)} predicted sentences vs {len(gold)} gold")
    tp = fp = fn = 0
    for pred_labels, gold_labels in zip(pred, gold):
        if len(pred_labels) != len(gold_labels):
            raise CorpusError("sentence length mismatch between pred and gold")
        p_spans = set(decode_bio_to_spans(pred_labels, tagset))
        g_spans = set(decode_bio_to_spans(gold_labels, tagset))
        tp += len(p_spans & g_spans)
        fp += len(p_spans - g_spans)
        fn += len(g_spans - p_spans)
    return SpanMetrics.from_counts(tp, fp, fn)


def span_prf_by_type(pred, gold, tagset: TagSet) -> dict:
    """Per-entity-type exact-match span metrics (same counting as span_prf)."""
    counts = {t: [0, 0, 0] for t in tagset.entity_types}  # tp, fp, fn
    for pred_labels, gold_labels in zip(pred, gold):
        p_spans = set(decode_bio_to_spans(pred_labels, tagset))
        g_spans = set(decode_bio_to_spans(gold_labels, tagset))
        for s in p_spans & g_spans:
            counts[s.etype][0] += 1
        for s in p_spans - g_spans:
            counts[s.etype][1] += 1
        for s in g_spans - p_spans:
            counts[s.etype][2] += 1
    return {t: SpanMetrics.from_counts(*c) for t, c in counts.items()}


# ---------------------------------------------------------------------------
# Token-level diagnostics for pseudo-label selection. Selection is
# token-granular, so its quality is scored per token: within the population
# of selected (unmasked) tokens, a token counts as tp only when the pseudo
# label equals the gold label and is not O — O agreements carry no entity
# information and are excluded from tp.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TokenMetrics:
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float
    population: int  # number of tokens in the scored population

    @property
    def empty(self) -> bool:
        return self.population == 0

    @classmethod
    def from_counts(cls, tp: int, pred_pos: int, gold_pos: int,
                    population: int) -> "TokenMetrics":
        p = tp / pred_pos if pred_pos else 0.0
        r = tp / gold_pos if gold_pos else 0.0
        return cls(tp=tp, fp=pred_pos - tp, fn=gold_pos - tp,
                   precision=p, recall=r, f1=f1_score(p, r),
                   population=population)

    def to_dict(self) -> dict:
        return {
            "precision": self.precision, "recall": self.recall, "f1": self.f1,
            "tp": self.tp, "fp": self.fp, "fn": self.fn,
            "population": self.population, "empty": self.empty,
        }


def token_selection_counts(pseudo: np.ndarray, mask: np.ndarray,
                           gold: np.ndarray) -> tuple:
    """(tp, pred_pos, gold_pos, population) over the mask==1 tokens."""
    sel = np.asarray(mask, dtype=bool)
    p = np.asarray(pseudo)[sel]
    g = np.asarray(gold)[sel]
    tp = int(((p == g) & (g != 0)).sum())
    return tp, int((p != 0).sum()), int((g != 0).sum()), int(sel.sum())


def selected_label_f1(pseudo: Sequence[np.ndarray], masks: Sequence[np.ndarray],
                      gold: Optional[Sequence[np.ndarray]]) -> TokenMetrics:
    """Token-level P/R/F1 of the selected pseudo labels against gold.

    An all-masked corpus has no population and comes back as zero-count
    metrics with `empty` set rather than an error.
    """
    if gold is None:
        raise CorpusError("analysis requires clean reference labels")
    tp = pred_pos = gold_pos = pop = 0
    for p, m, g in zip(pseudo, masks, gold):
        a, b, c, d = token_selection_counts(p, m, np.asarray(g))
        tp += a
        pred_pos += b
        gold_pos += c
        pop += d
    return TokenMetrics.from_counts(tp, pred_pos, gold_pos, pop)


def predict_labels(params: TaggerParams,
                   win_ids_list: Sequence[np.ndarray]) -> list:
    """Deterministic argmax label sequences for a list of encoded sentences."""
    if not win_ids_list:
        return []
    lengths = [len(w) for w in win_ids_list]
    labels = eval_probs(params, np.concatenate(win_ids_list)).argmax(axis=1)
    bounds = np.concatenate([[0], np.cumsum(lengths)])
    return [labels[bounds[i]:bounds[i + 1]] for i in range(len(lengths))]


def teacher_label_f1(params: TaggerParams, win_ids_list: Sequence[np.ndarray],
                     gold: Sequence[Sequence[int]], tagset: TagSet) -> SpanMetrics:
    """Span quality of the teacher's deterministic predictions on a corpus
    with clean reference labels (pseudo-labeling ability)."""
    preds = predict_labels(params, win_ids_list)
    return span_prf(preds, gold, tagset)


def format_conll_report(overall: SpanMetrics, by_type: dict) -> str:
    """conlleval-style text summary."""
    lines = [
        "processed spans: tp=%d fp=%d fn=%d" % (overall.tp, overall.fp, overall.fn),
        "accuracy-like overall: precision: %6.2f%%; recall: %6.2f%%; FB1: %6.2f"
        % (100 * overall.precision, 100 * overall.recall, 100 * overall.f1),
    ]
    for etype in sorted(by_type):
        m = by_type[etype]
        lines.append(
            "%17s: precision: %6.2f%%; recall: %6.2f%%; FB1: %6.2f  %d"
            % (etype, 100 * m.precision, 100 * m.recall, 100 * m.f1, m.tp + m.fp)
        )
    return "\n".join(lines) + "\n"
