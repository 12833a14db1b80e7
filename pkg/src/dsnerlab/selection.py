"""Uncertainty-aware pseudo-label selection.

The teacher proposes a label per token (argmax of its deterministic
distribution, with the predicted probability as the confidence score). K
stochastic dropout passes then re-score the *fixed* proposed label; the
population variance of those K probabilities is the token's uncertainty.
A token survives selection only when its confidence is strictly above the
confidence threshold and its uncertainty strictly below the uncertainty
threshold; labels transferred from the peer network bypass the gate.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .tagger import (
    TaggerParams,
    eval_probs,
    hidden_activations,
    mc_dropout_mask,
    mc_probs,
    output_probs,
)

SOURCE_TEACHER = 0
SOURCE_TRANSFERRED = 1


@dataclass
class PseudoLabels:
    labels: np.ndarray      # (T,) proposed label indices
    confidence: np.ndarray  # (T,) teacher probability of the proposed label
    source: np.ndarray      # (T,) SOURCE_TEACHER or SOURCE_TRANSFERRED

    def __len__(self) -> int:
        return len(self.labels)

    def as_transferred(self) -> "PseudoLabels":
        """Copy marked as coming from the peer network."""
        return PseudoLabels(
            labels=self.labels.copy(),
            confidence=self.confidence.copy(),
            source=np.full(len(self.labels), SOURCE_TRANSFERRED, dtype=np.uint8),
        )


@dataclass
class UncertaintyScores:
    variance: np.ndarray  # (T,) population variance over the K passes
    k_passes: int


def pseudo_from_probs(probs: np.ndarray) -> PseudoLabels:
    """Argmax labels + confidences from a (T, L) distribution matrix.

    np.argmax resolves ties toward the lowest label index, which is the
    tie-break rule used throughout.
    """
    labels = probs.argmax(axis=1)
    confidence = probs[np.arange(len(labels)), labels]
    return PseudoLabels(
        labels=labels.astype(np.int64),
        confidence=confidence,
        source=np.zeros(len(labels), dtype=np.uint8),
    )


def predict_pseudo_labels(params: TaggerParams, win_ids: np.ndarray) -> PseudoLabels:
    return pseudo_from_probs(eval_probs(params, win_ids))


def estimate_uncertainty(params: TaggerParams, win_ids: np.ndarray,
                         pseudo: PseudoLabels, k_passes: int,
                         dropout_rate: float, base_seed: int,
                         sentence_index: int,
                         hidden: Optional[np.ndarray] = None) -> UncertaintyScores:
    """Variance of the proposed label's probability over K dropout passes.

    Divides by K (population variance). Passing precomputed pre-dropout
    `hidden` activations is an optimization only; results are identical to
    re-running every forward pass from scratch.
    """
    if k_passes < 2:
        raise ValueError("uncertainty estimation needs at least 2 passes")
    if hidden is None:
        hidden = hidden_activations(params, win_ids)
    idx = np.arange(len(pseudo.labels))
    picked = np.empty((k_passes, len(idx)))
    for k in range(k_passes):
        probs = mc_probs(params, win_ids, dropout_rate, base_seed, k,
                         sentence_index, hidden=hidden)
        picked[k] = probs[idx, pseudo.labels]
    return UncertaintyScores(variance=picked.var(axis=0), k_passes=k_passes)


def estimate_uncertainty_batch(params: TaggerParams, hidden: np.ndarray,
                               offsets: np.ndarray, labels_cat: np.ndarray,
                               k_passes: int, dropout_rate: float,
                               base_seed: int, sentence_indices,
                               mask_cache: Optional[dict] = None) -> np.ndarray:
    """Vectorized sibling of `estimate_uncertainty` over packed sentences.

    `hidden` holds the pre-dropout activations of all sentences concatenated,
    with `offsets[s]:offsets[s+1]` slicing sentence s, and `sentence_indices`
    carrying each sentence's corpus-level index. Dropout masks are still
    keyed per (base_seed, pass, sentence), so the result equals running
    `estimate_uncertainty` sentence by sentence; `mask_cache` (keyed by
    (pass, sentence)) only avoids regenerating identical masks.

    Returns the concatenated per-token variance vector.
    """
    if k_passes < 2:
        raise ValueError("uncertainty estimation needs at least 2 passes")
    n = hidden.shape[0]
    keep = 1.0 - dropout_rate
    idx = np.arange(n)
    picked = np.empty((k_passes, n))
    for k in range(k_passes):
        blocks = []
        for s, sent_index in enumerate(sentence_indices):
            size = offsets[s + 1] - offsets[s]
            key = (k, int(sent_index))
            mask = mask_cache.get(key) if mask_cache is not None else None
            if mask is None:
                mask = mc_dropout_mask(size, hidden.shape[1], dropout_rate,
                                       base_seed, k, int(sent_index))
                if mask_cache is not None:
                    mask_cache[key] = mask
            blocks.append(mask)
        big_mask = np.concatenate(blocks) if len(blocks) > 1 else blocks[0]
        probs = output_probs(params, hidden * big_mask / keep)
        picked[k] = probs[idx, labels_cat]
    return picked.var(axis=0)


def build_mask(pseudo: PseudoLabels, unc: UncertaintyScores,
               sigma_co: float, sigma_ua: float) -> np.ndarray:
    """Per-token selection gate.

    1 iff (variance < sigma_ua AND confidence > sigma_co), both strict;
    transferred labels are always 1.
    """
    gate = (unc.variance < sigma_ua) & (pseudo.confidence > sigma_co)
    gate |= pseudo.source == SOURCE_TRANSFERRED
    return gate.astype(np.uint8)
