"""Dual teacher-student self-training, end to end.

Stages: warm up two architecturally different taggers on the noisy labels,
duplicate each into a teacher-student pair, then iterate per batch:

  1. each teacher proposes labels for the batch (deterministic forward);
  2. per-token confidence plus K-pass dropout variance gate the proposals;
  3. each student donates its smallest-loss sentences' proposals to the
     other student, unmasked;
  4. each student takes one Adam step on the masked cross entropy;
  5. each teacher moves toward its student by exponential moving average.

A label store per network (initialized from the noisy labels) is refreshed
from gate-passing teacher proposals every `update_cycle` steps and tracked
for diagnostics. Model selection is argmax dev F1 over the four models at
every epoch end; the chosen snapshot is evaluated once on the test set.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .collaboration import (
    BatchView,
    apply_transfer,
    score_small_loss,
    select_and_transfer,
)
from .config import ConfigFile, ExperimentConfig, config_to_flat_dict
from .corpus import (
    Dataset,
    TagSet,
    Vocabulary,
    attach_gold,
    build_vocabulary,
    read_conll,
)
from .evaluation import (
    TokenMetrics,
    predict_labels,
    span_prf,
    teacher_label_f1,
    token_selection_counts,
)
from .rng import (
    STREAM_INIT,
    STREAM_MC_DROPOUT,
    STREAM_PRETRAIN_DROPOUT,
    STREAM_PRETRAIN_SHUFFLE,
    STREAM_SELFTRAIN_DROPOUT,
    STREAM_SELFTRAIN_SHUFFLE,
    derive_rng,
    derive_seed,
)
from .selection import (
    UncertaintyScores,
    build_mask,
    estimate_uncertainty_batch,
    pseudo_from_probs,
)
from .tagger import (
    AdamState,
    TaggerArch,
    TaggerParams,
    adam_step,
    ema_update,
    hidden_activations,
    init_adam,
    init_params,
    loss_and_grad,
    output_probs,
    snapshot,
    train_dropout_mask,
    warmup_lr,
    window_ids,
)

NET_IDS = ("I", "II")


@dataclass
class TeacherStudentPair:
    net_index: int
    arch: TaggerArch
    teacher: TaggerParams
    student: TaggerParams
    adam: AdamState

    @property
    def net_id(self) -> str:
        return NET_IDS[self.net_index]


@dataclass
class LabelStore:
    """Per-network full-corpus label arrays, refreshed at cycle boundaries."""

    labels: list  # [net_index][sentence_index] -> np.ndarray of label ids

    @classmethod
    def from_sequences(cls, label_arrays: Sequence[np.ndarray],
                       n_nets: int = 2) -> "LabelStore":
        return cls([[arr.copy() for arr in label_arrays] for _ in range(n_nets)])


def make_pair(net_index: int, arch: TaggerArch, vocab_size: int,
              cfg: ExperimentConfig) -> TeacherStudentPair:
    params = init_params(arch, vocab_size)
    return TeacherStudentPair(
        net_index=net_index,
        arch=arch,
        teacher=snapshot(params),
        student=params,
        adam=init_adam(params, cfg.lr),
    )


def encode_corpus(dataset: Dataset, vocab: Vocabulary) -> list:
    return [vocab.encode(s.tokens) for s in dataset.sentences]


def window_views(token_id_arrays: Sequence[np.ndarray], radius: int) -> list:
    return [window_ids(ids, radius) for ids in token_id_arrays]


def _batches(order: np.ndarray, size: int):
    for i in range(0, len(order), size):
        yield order[i:i + size]


def pretrain(pair: TeacherStudentPair, windows: Sequence[np.ndarray],
             labels: Sequence[np.ndarray], cfg: ExperimentConfig) -> list:
    """Warm up the student on the stored (noisy) labels, then duplicate it
    into the teacher and reset the optimizer for self-training.

    Returns the mean batch loss per warm-up epoch.
    """
    if not windows:
        raise ValueError("cannot pretrain on an empty corpus")
    n = len(windows)
    epoch_losses = []
    step = 0
    for epoch in range(cfg.pretrain_epochs):
        perm = derive_rng(cfg.seed, STREAM_PRETRAIN_SHUFFLE,
                          pair.net_index, epoch).permutation(n)
        losses = []
        for chunk in _batches(perm, cfg.batch_size):
            step += 1
            win = np.concatenate([windows[i] for i in chunk])
            y = np.concatenate([labels[i] for i in chunk])
            w = np.ones(len(y))
            rng = derive_rng(cfg.seed, STREAM_PRETRAIN_DROPOUT,
                             pair.net_index, step)
            dmask = train_dropout_mask(len(y), pair.arch.hidden_dim,
                                       cfg.dropout_rate, rng)
            loss, grads, _ = loss_and_grad(pair.student, win, y, w,
                                           dmask, cfg.dropout_rate)
            adam_step(pair.student, grads, pair.adam,
                      lr=warmup_lr(cfg.lr, pair.adam.step + 1, cfg.warmup_steps))
            losses.append(loss)
        epoch_losses.append(float(np.mean(losses)))
    pair.teacher = snapshot(pair.student)
    pair.adam = init_adam(pair.student, cfg.lr)
    return epoch_losses


def _gate_variance(params, hidden, offsets, labels_cat, batch_indices,
                   cfg: ExperimentConfig, mc_base: int,
                   mask_cache: Optional[dict]) -> np.ndarray:
    """Per-token proposal variance, skipping the stochastic passes entirely
    when the uncertainty gate is infinite (every finite variance passes)."""
    if np.isinf(cfg.sigma_ua):
        return np.zeros(hidden.shape[0])
    return estimate_uncertainty_batch(
        params, hidden, offsets, labels_cat, cfg.mc_passes,
        cfg.dropout_rate, mc_base, batch_indices, mask_cache=mask_cache)


def self_train_step(pairs, batch_indices, windows_by_net, cfg: ExperimentConfig,
                    global_step: int,
                    gold_arrays: Optional[Sequence[np.ndarray]] = None,
                    mask_caches: Optional[list] = None) -> dict:
    """One iteration of the self-training loop over one batch.

    `batch_indices` are corpus-level sentence indices (they key the
    stochastic-pass streams, so uncertainty is reproducible no matter how
    sentences land in batches). `mask_caches` (one dict per network) only
    memoizes the deterministic per-(pass, sentence) dropout masks across
    epochs; it never changes results.
    """
    batch = [int(i) for i in batch_indices]
    b = len(batch)
    net_data = []
    for pair in pairs:
        wins = [windows_by_net[pair.net_index][i] for i in batch]
        lengths = [len(w) for w in wins]
        offsets = np.concatenate([[0], np.cumsum(lengths)])
        win_cat = np.concatenate(wins)
        h_teacher = hidden_activations(pair.teacher, win_cat)
        cat = pseudo_from_probs(output_probs(pair.teacher, h_teacher))
        pseudo = [
            type(cat)(cat.labels[offsets[s]:offsets[s + 1]].copy(),
                      cat.confidence[offsets[s]:offsets[s + 1]].copy(),
                      cat.source[offsets[s]:offsets[s + 1]].copy())
            for s in range(b)
        ]
        mc_base = derive_seed(cfg.seed, STREAM_MC_DROPOUT, pair.net_index)
        cache = mask_caches[pair.net_index] if mask_caches is not None else None
        var_cat = _gate_variance(pair.teacher, h_teacher, offsets, cat.labels,
                                 batch, cfg, mc_base, cache)
        masks = []
        for s in range(b):
            unc = UncertaintyScores(var_cat[offsets[s]:offsets[s + 1]],
                                    cfg.mc_passes)
            masks.append(build_mask(pseudo[s], unc, cfg.sigma_co, cfg.sigma_ua))
        var_sum = float(var_cat.sum())
        h_student = hidden_activations(pair.student, win_cat)
        h_slices = [h_student[offsets[s]:offsets[s + 1]] for s in range(b)]
        scores = score_small_loss(pair.student, wins, pseudo,
                                  hidden_list=h_slices)
        net_data.append({
            "wins": wins, "win_cat": win_cat, "offsets": offsets,
            "pseudo": pseudo, "masks": masks, "scores": scores,
            "tokens": int(offsets[-1]),
            "teacher_unmasked": int(sum(int(m.sum()) for m in masks)),
            "conf_sum": float(cat.confidence.sum()),
            "var_sum": var_sum,
        })

    view_1 = BatchView(NET_IDS[0], net_data[0]["pseudo"], net_data[0]["scores"])
    view_2 = BatchView(NET_IDS[1], net_data[1]["pseudo"], net_data[1]["scores"])
    plan = select_and_transfer(view_1, view_2, cfg.scl_delta)
    apply_transfer(plan, view_1, view_2)
    for nd, received in zip(net_data, (plan.to_first, plan.to_second)):
        for s in received:
            nd["masks"][s] = np.ones(len(nd["pseudo"][s].labels), dtype=np.uint8)
        nd["transferred_tokens"] = int(sum(len(nd["pseudo"][s].labels)
                                           for s in received))
        nd["received_sentences"] = len(received)

    def donor_stats(scores: np.ndarray, selected) -> dict:
        sel = np.zeros(len(scores), dtype=bool)
        sel[list(selected)] = True
        return {
            "sentences": int(sel.sum()),
            "loss_selected_sum": float(scores[sel].sum()),
            "loss_unselected_sum": float(scores[~sel].sum()),
            "unselected_sentences": int((~sel).sum()),
        }

    report = {
        "step": global_step,
        "transfers": {
            "I_to_II": donor_stats(net_data[0]["scores"], plan.to_second),
            "II_to_I": donor_stats(net_data[1]["scores"], plan.to_first),
        },
        "nets": {},
    }

    for pair, nd in zip(pairs, net_data):
        y = np.concatenate([pl.labels for pl in nd["pseudo"]])
        w = np.concatenate(nd["masks"]).astype(np.float64)
        rng = derive_rng(cfg.seed, STREAM_SELFTRAIN_DROPOUT,
                         pair.net_index, global_step)
        dmask = train_dropout_mask(len(y), pair.arch.hidden_dim,
                                   cfg.dropout_rate, rng)
        loss, grads, used = loss_and_grad(pair.student, nd["win_cat"], y, w,
                                          dmask, cfg.dropout_rate)
        adam_step(pair.student, grads, pair.adam,
                  lr=warmup_lr(cfg.lr, pair.adam.step + 1, cfg.warmup_steps))
        ema_update(pair.teacher, pair.student, cfg.ema_alpha)

        entry = {
            "tokens": nd["tokens"],
            "teacher_unmasked": nd["teacher_unmasked"],
            "transferred_tokens": nd["transferred_tokens"],
            "received_sentences": nd["received_sentences"],
            "unmasked_total": used,
            "loss": loss,
            "confidence_sum": nd["conf_sum"],
            "uncertainty_sum": nd["var_sum"],
        }
        if gold_arrays is not None:
            sel = unsel = (0, 0, 0, 0)
            gold_cat = np.concatenate([gold_arrays[i] for i in batch])
            mask_cat = np.concatenate(nd["masks"])
            sel = token_selection_counts(y, mask_cat, gold_cat)
            unsel = token_selection_counts(y, 1 - mask_cat, gold_cat)
            entry["selected_counts"] = sel
            entry["unselected_counts"] = unsel
        report["nets"][pair.net_id] = entry
    return report


def refresh_labels(pairs, windows_by_net, store: LabelStore,
                   cfg: ExperimentConfig, gold_seqs=None,
                   tagset: Optional[TagSet] = None,
                   mask_caches: Optional[list] = None) -> dict:
    """Overwrite each network's stored labels wherever its teacher's current
    proposal passes that network's own gate; gated-out tokens keep their
    stored labels."""
    report = {}
    for pair in pairs:
        wins = windows_by_net[pair.net_index]
        lengths = [len(w) for w in wins]
        offsets = np.concatenate([[0], np.cumsum(lengths)])
        win_cat = np.concatenate(wins)
        h = hidden_activations(pair.teacher, win_cat)
        cat = pseudo_from_probs(output_probs(pair.teacher, h))
        mc_base = derive_seed(cfg.seed, STREAM_MC_DROPOUT, pair.net_index)
        cache = mask_caches[pair.net_index] if mask_caches is not None else None
        var_cat = _gate_variance(pair.teacher, h, offsets, cat.labels,
                                 list(range(len(wins))), cfg, mc_base, cache)
        changed = unmasked = 0
        for i in range(len(wins)):
            lo, hi = offsets[i], offsets[i + 1]
            pl = type(cat)(cat.labels[lo:hi], cat.confidence[lo:hi],
                           cat.source[lo:hi])
            unc = UncertaintyScores(var_cat[lo:hi], cfg.mc_passes)
            keep = build_mask(pl, unc, cfg.sigma_co, cfg.sigma_ua).astype(bool)
            stored = store.labels[pair.net_index][i]
            changed += int((stored[keep] != pl.labels[keep]).sum())
            stored[keep] = pl.labels[keep]
            unmasked += int(keep.sum())
        entry = {"unmasked_tokens": unmasked, "changed_tokens": changed}
        if gold_seqs is not None and tagset is not None:
            entry["store_span_metrics"] = span_prf(
                store.labels[pair.net_index], gold_seqs, tagset).to_dict()
        report[pair.net_id] = entry
    return report


# ---------------------------------------------------------------------------
# Whole-experiment orchestration
# ---------------------------------------------------------------------------


@dataclass
class ExperimentResult:
    result: dict            # JSON-ready run record
    best_name: str
    best_net_index: int
    best_arch: TaggerArch
    best_params: TaggerParams
    vocab: Vocabulary
    tagset: TagSet


def _eval_four(pairs, dev_windows_by_net, dev_gold, tagset) -> dict:
    out = {}
    for pair in pairs:
        wins = dev_windows_by_net[pair.net_index]
        for role, params in (("teacher", pair.teacher), ("student", pair.student)):
            preds = predict_labels(params, wins)
            out[f"{role}_{pair.net_id}"] = span_prf(preds, dev_gold, tagset).to_dict()
    return out


def _candidates(pairs):
    """Dev-selection order: ties resolve teacher over student, then net I
    over net II (first strictly better candidate wins)."""
    order = []
    for role in ("teacher", "student"):
        for pair in pairs:
            order.append((f"{role}_{pair.net_id}", pair,
                          pair.teacher if role == "teacher" else pair.student))
    return order


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def run_experiment(config: ConfigFile, *, train: Optional[Dataset] = None,
                   dev: Optional[Dataset] = None, test: Optional[Dataset] = None,
                   train_gold: Optional[Dataset] = None) -> ExperimentResult:
    """Execute the full pipeline for one configuration.

    Datasets may be passed in memory; otherwise they are read from the
    configured paths. The returned record is deterministic for a fixed
    configuration, byte for byte once serialized.
    """
    config.validate()
    cfg = config.experiment
    tagset = TagSet(cfg.entity_types)
    if train is None:
        train = read_conll(cfg.train_path, tagset, name="train")
    if dev is None:
        dev = read_conll(cfg.dev_path, tagset, name="dev")
    if test is None:
        test = read_conll(cfg.test_path, tagset, name="test")
    if train_gold is None and cfg.train_gold_path:
        train_gold = read_conll(cfg.train_gold_path, tagset, name="train-gold")
    if train_gold is not None:
        train = attach_gold(train, train_gold)
    if len(train) == 0:
        raise ValueError("training corpus is empty")

    vocab = build_vocabulary(train, cfg.vocab_min_count, cfg.case_folding)
    train_ids = encode_corpus(train, vocab)
    archs = (
        TaggerArch(cfg.embedding_dim, cfg.net1_window, cfg.net1_hidden,
                   tagset.num_labels, cfg.dropout_rate,
                   init_seed=derive_seed(cfg.seed, STREAM_INIT, 0)),
        TaggerArch(cfg.embedding_dim, cfg.net2_window, cfg.net2_hidden,
                   tagset.num_labels, cfg.dropout_rate,
                   init_seed=derive_seed(cfg.seed, STREAM_INIT, 1)),
    )
    pairs = tuple(make_pair(i, arch, len(vocab), cfg)
                  for i, arch in enumerate(archs))
    windows_by_net = [window_views(train_ids, arch.window_radius)
                      for arch in archs]
    dev_ids = encode_corpus(dev, vocab)
    dev_windows = [window_views(dev_ids, arch.window_radius) for arch in archs]
    test_ids = encode_corpus(test, vocab)
    test_windows = [window_views(test_ids, arch.window_radius) for arch in archs]

    train_labels = [np.array(s.labels, dtype=np.int64) for s in train.sentences]
    gold_seqs = train.gold_sequences()
    gold_arrays = ([np.array(g, dtype=np.int64) for g in gold_seqs]
                   if gold_seqs is not None else None)
    dev_gold = dev.label_sequences()
    test_gold = test.label_sequences()

    pretrain_losses = {}
    for pair in pairs:
        pretrain_losses[pair.net_id] = pretrain(
            pair, windows_by_net[pair.net_index], train_labels, cfg)

    def teacher_train_span():
        if gold_seqs is None:
            return None
        return {
            pair.net_id: teacher_label_f1(
                pair.teacher, windows_by_net[pair.net_index],
                gold_seqs, tagset).to_dict()
            for pair in pairs
        }

    pretrain_record = {
        "loss": pretrain_losses,
        "dev": _eval_four(pairs, dev_windows, dev_gold, tagset),
        "teacher_train_span": teacher_train_span(),
    }

    store = LabelStore.from_sequences(train_labels, n_nets=len(pairs))
    trace = []
    refreshes = []
    best = None  # (name, net_index, epoch, f1, params snapshot)
    global_step = 0
    n_train = len(train_labels)
    mask_caches = [{} for _ in pairs]

    for epoch in range(1, cfg.total_epochs + 1):
        perm = derive_rng(cfg.seed, STREAM_SELFTRAIN_SHUFFLE,
                          epoch).permutation(n_train)
        agg = {
            net: {"tokens": 0, "teacher_unmasked": 0, "transferred_tokens": 0,
                  "received_sentences": 0, "unmasked_total": 0,
                  "loss_sum": 0.0, "confidence_sum": 0.0,
                  "uncertainty_sum": 0.0, "steps": 0,
                  "selected_counts": [0, 0, 0, 0],
                  "unselected_counts": [0, 0, 0, 0]}
            for net in NET_IDS
        }
        tr_agg = {d: {"sentences": 0, "loss_selected_sum": 0.0,
                      "loss_unselected_sum": 0.0, "unselected_sentences": 0}
                  for d in ("I_to_II", "II_to_I")}
        for chunk in _batches(perm, cfg.batch_size):
            global_step += 1
            rep = self_train_step(pairs, chunk, windows_by_net, cfg,
                                  global_step, gold_arrays, mask_caches)
            for net in NET_IDS:
                e = rep["nets"][net]
                a = agg[net]
                a["steps"] += 1
                for key in ("tokens", "teacher_unmasked", "transferred_tokens",
                            "received_sentences", "unmasked_total"):
                    a[key] += e[key]
                a["loss_sum"] += e["loss"]
                a["confidence_sum"] += e["confidence_sum"]
                a["uncertainty_sum"] += e["uncertainty_sum"]
                if gold_arrays is not None:
                    for j in range(4):
                        a["selected_counts"][j] += e["selected_counts"][j]
                        a["unselected_counts"][j] += e["unselected_counts"][j]
            for d in tr_agg:
                for key in tr_agg[d]:
                    tr_agg[d][key] += rep["transfers"][d][key]
            if cfg.update_cycle and global_step % cfg.update_cycle == 0:
                refreshes.append({
                    "step": global_step,
                    "report": refresh_labels(pairs, windows_by_net, store, cfg,
                                             gold_seqs, tagset, mask_caches),
                })

        record = {"epoch": epoch, "selection": {}, "transfers": {},
                  "pseudo_quality": None}
        for net in NET_IDS:
            a = agg[net]
            record["selection"][net] = {
                "tokens": a["tokens"],
                "teacher_unmasked": a["teacher_unmasked"],
                "transferred_tokens": a["transferred_tokens"],
                "unmasked_total": a["unmasked_total"],
                "mean_confidence": a["confidence_sum"] / max(1, a["tokens"]),
                "mean_uncertainty": a["uncertainty_sum"] / max(1, a["tokens"]),
                "mean_loss": a["loss_sum"] / max(1, a["steps"]),
            }
        for d, t in tr_agg.items():
            record["transfers"][d] = {
                "sentences": t["sentences"],
                "mean_loss_selected": (t["loss_selected_sum"] / t["sentences"]
                                       if t["sentences"] else None),
                "mean_loss_unselected": (
                    t["loss_unselected_sum"] / t["unselected_sentences"]
                    if t["unselected_sentences"] else None),
            }
        if gold_arrays is not None:
            quality = {}
            combined = {"selected": [0, 0, 0, 0], "unselected": [0, 0, 0, 0]}
            for net in NET_IDS:
                q = {}
                for kind in ("selected", "unselected"):
                    counts = agg[net][f"{kind}_counts"]
                    q[kind] = TokenMetrics.from_counts(*counts).to_dict()
                    for j in range(4):
                        combined[kind][j] += counts[j]
                quality[net] = q
            quality["combined"] = {
                kind: TokenMetrics.from_counts(*combined[kind]).to_dict()
                for kind in ("selected", "unselected")
            }
            record["pseudo_quality"] = quality
        record["dev"] = _eval_four(pairs, dev_windows, dev_gold, tagset)

        for name, pair, params in _candidates(pairs):
            f1 = record["dev"][name]["f1"]
            if best is None or f1 > best[3]:
                best = (name, pair.net_index, epoch, f1, snapshot(params))
        trace.append(record)

    best_name, best_net, best_epoch, best_f1, best_params = best
    test_preds = predict_labels(best_params, test_windows[best_net])
    test_metrics = span_prf(test_preds, test_gold, tagset)

    result = {
        "format_version": 1,
        "config": config_to_flat_dict(config),
        "data": {
            "train_sentences": len(train), "train_tokens": train.n_tokens,
            "dev_sentences": len(dev), "test_sentences": len(test),
            "vocab_size": len(vocab), "train_has_gold": gold_seqs is not None,
        },
        "pretrain": pretrain_record,
        "epochs": trace,
        "refreshes": refreshes,
        "best": {"model": best_name, "net": NET_IDS[best_net],
                 "epoch": best_epoch, "dev_f1": best_f1},
        "test": test_metrics.to_dict(),
        "analysis": {
            "teacher_train_span_pretrain": pretrain_record["teacher_train_span"],
            "teacher_train_span_final": teacher_train_span(),
        },
    }
    return ExperimentResult(
        result=_jsonable(result),
        best_name=best_name,
        best_net_index=best_net,
        best_arch=archs[best_net],
        best_params=best_params,
        vocab=vocab,
        tagset=tagset,
    )
