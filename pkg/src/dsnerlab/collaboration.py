"""Small-loss label exchange between the two student networks.

Per batch, each student ranks sentences by its own mean-token cross entropy
against its teacher's proposed labels; low loss means the sentence sits far
from the decision boundary and its labels are likely clean. Each student
donates its floor(delta * B) lowest-loss sentences: the receiving student
trains on the donor teacher's labels for those sentences, unconditionally
unmasked downstream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .selection import PseudoLabels
from .tagger import TaggerParams, eval_probs, output_probs


def score_small_loss(params: TaggerParams,
                     win_ids_list: Sequence[np.ndarray],
                     pseudo_list: Sequence[PseudoLabels],
                     hidden_list: Optional[Sequence[np.ndarray]] = None) -> np.ndarray:
    """Deterministic per-sentence score: mean token CE of the student's
    no-dropout distribution against the proposed labels (all tokens, no mask).
    """
    scores = np.empty(len(win_ids_list))
    for i, (win, pl) in enumerate(zip(win_ids_list, pseudo_list)):
        if hidden_list is not None:
            probs = output_probs(params, hidden_list[i])
        else:
            probs = eval_probs(params, win)
        ce = -np.log(probs[np.arange(len(pl.labels)), pl.labels])
        scores[i] = ce.mean()
    return scores


@dataclass
class BatchView:
    """One network's view of a batch: its teacher's proposed labels and its
    student's small-loss score per sentence."""

    net_id: str
    pseudo: list          # list[PseudoLabels], one per batch sentence
    scores: np.ndarray    # (B,)


@dataclass
class TransferPlan:
    """Batch indices each student receives from the other network's teacher."""

    to_first: tuple   # indices selected by network II's student
    to_second: tuple  # indices selected by network I's student


def select_small_loss(scores: np.ndarray, delta: float) -> tuple:
    """Indices of the floor(delta * B) smallest scores, ties to lower index."""
    if not 0.0 <= delta <= 1.0:
        raise ValueError("delta must be in [0, 1]")
    n_take = math.floor(delta * len(scores))
    order = np.argsort(scores, kind="stable")
    return tuple(int(i) for i in order[:n_take])


def select_and_transfer(view_1: BatchView, view_2: BatchView,
                        delta: float) -> TransferPlan:
    if len(view_1.pseudo) != len(view_2.pseudo):
        raise ValueError("views cover different batches")
    return TransferPlan(
        to_first=select_small_loss(view_2.scores, delta),
        to_second=select_small_loss(view_1.scores, delta),
    )


def apply_transfer(plan: TransferPlan, view_1: BatchView, view_2: BatchView) -> None:
    """Overwrite each receiver's labels for the planned sentences, marking
    every transferred token so the selection gate passes it."""
    donations_1 = [(i, view_2.pseudo[i]) for i in plan.to_first]
    donations_2 = [(i, view_1.pseudo[i]) for i in plan.to_second]
    for i, donor in donations_1:
        view_1.pseudo[i] = donor.as_transferred()
    for i, donor in donations_2:
        view_2.pseudo[i] = donor.as_transferred()
