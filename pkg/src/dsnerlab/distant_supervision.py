"""Noisy-corpus construction.

Two routes into label noise:

* gazetteer matching over raw text — greedy longest-match against a
  surface-to-type dictionary, which naturally produces both incomplete
  annotation (uncovered mentions fall to O) and inaccurate annotation
  (context-free matching picks the dictionary's first type, right or wrong);

* controlled corruption of a clean corpus — a chosen percentage of entity
  spans is replaced with a different type, dropped to O, or a 50/50 mix.

Plus a synthetic corpus generator so the whole pipeline runs at desk scale
with a knowable noise profile.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

from .corpus import (
    CorpusError,
    Dataset,
    Sentence,
    Span,
    TagSet,
    decode_bio_to_spans,
    encode_spans_to_bio,
)
from .evaluation import SpanMetrics, span_prf
from .rng import STREAM_GENERATOR, STREAM_NOISE, derive_rng


class ConfigError(ValueError):
    """Inconsistent generator or noise settings."""


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


# ---------------------------------------------------------------------------
# Gazetteer matching
# ---------------------------------------------------------------------------


class Gazetteer:
    """Surface-string dictionary: token tuple -> ordered entity types.

    The first type of an entry is what the matcher assigns; later types
    record known alternatives (the source of inaccurate annotations).
    """

    def __init__(self, entries: dict):
        self.entries = {}
        for surface, types in entries.items():
            toks = tuple(surface.split()) if isinstance(surface, str) else tuple(surface)
            if not toks or any(not t for t in toks):
                raise CorpusError(f"empty gazetteer surface: {surface!r}")
            types = tuple(types)
            if not types:
                raise CorpusError(f"gazetteer entry {surface!r} has no types")
            self.entries[toks] = types
        self.max_entry_len = max((len(t) for t in self.entries), default=0)

    def __len__(self) -> int:
        return len(self.entries)

    def to_text(self) -> str:
        lines = []
        for toks in sorted(self.entries):
            lines.append(" ".join(toks) + "\t" + ",".join(self.entries[toks]))
        return "\n".join(lines) + ("\n" if lines else "")

    @classmethod
    def from_text(cls, text: str) -> "Gazetteer":
        entries = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise CorpusError(f"gazetteer line {lineno}: expected `surface<TAB>types`")
            entries[parts[0]] = tuple(t.strip() for t in parts[1].split(","))
        return cls(entries)


def match_gazetteer(tokens: Sequence[str], gazetteer: Gazetteer,
                    tagset: TagSet) -> list:
    """Greedy left-to-right longest-match labeling; unmatched tokens get O."""
    n = len(tokens)
    labels = [0] * n
    i = 0
    while i < n:
        matched = 0
        for length in range(min(gazetteer.max_entry_len, n - i), 0, -1):
            types = gazetteer.entries.get(tuple(tokens[i:i + length]))
            if types is not None:
                etype = types[0]
                labels[i] = tagset.begin_of(etype)
                inside = tagset.inside_of(etype)
                for j in range(i + 1, i + length):
                    labels[j] = inside
                matched = length
                break
        i += matched if matched else 1
    return labels


def match_dataset(clean: Dataset, gazetteer: Gazetteer) -> Dataset:
    """Re-annotate a clean corpus by dictionary matching; the clean labels
    ride along as the gold reference."""
    sentences = tuple(
        Sentence(s.tokens, tuple(match_gazetteer(s.tokens, gazetteer, clean.tagset)),
                 gold_labels=s.labels)
        for s in clean.sentences
    )
    return Dataset(sentences, clean.tagset, name=f"{clean.name}-ds")


# ---------------------------------------------------------------------------
# Controlled corruption
# ---------------------------------------------------------------------------

REPLACE_TYPE = "replace_type"
DROP_TO_O = "drop_to_O"
MIXED = "mixed"
NOISE_MODES = (REPLACE_TYPE, DROP_TO_O, MIXED)


@dataclass(frozen=True)
class NoiseSpec:
    ratio_percent: float
    mode: str = MIXED
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.ratio_percent <= 100.0:
            raise ConfigError(
                f"noise ratio {self.ratio_percent} outside [0, 100]"
            )
        if self.mode not in NOISE_MODES:
            raise ConfigError(f"unknown noise mode {self.mode!r}")


def inject_noise(dataset: Dataset, spec: NoiseSpec) -> Dataset:
    """Perturb round-half-up(k% of entity spans), selected uniformly without
    replacement via one seeded shuffle.

    Because selection takes a prefix of the shuffled span list, the perturbed
    set at a lower ratio is a subset of the set at any higher ratio under the
    same seed. Mixed mode alternates replace/drop along that shuffled order,
    splitting the perturbations 50/50. Original labels are kept as gold.
    """
    rng = derive_rng(spec.seed, STREAM_NOISE)
    tagset = dataset.tagset
    per_sentence = [decode_bio_to_spans(s.labels, tagset) for s in dataset.sentences]
    flat = [(si, pi) for si, spans in enumerate(per_sentence)
            for pi in range(len(spans))]
    n_perturb = _round_half_up(spec.ratio_percent / 100.0 * len(flat))
    order = rng.permutation(len(flat)) if flat else []

    replacements = {}  # (sentence, span position) -> new type or None (drop)
    for j in range(n_perturb):
        si, pi = flat[int(order[j])]
        mode = spec.mode
        if mode == MIXED:
            mode = REPLACE_TYPE if j % 2 == 0 else DROP_TO_O
        if mode == REPLACE_TYPE:
            others = [t for t in tagset.entity_types
                      if t != per_sentence[si][pi].etype]
            if not others:
                raise ConfigError("replace_type needs at least 2 entity types")
            replacements[(si, pi)] = others[int(rng.integers(len(others)))]
        else:
            replacements[(si, pi)] = None

    sentences = []
    for si, sent in enumerate(dataset.sentences):
        new_spans = []
        for pi, span in enumerate(per_sentence[si]):
            key = (si, pi)
            if key not in replacements:
                new_spans.append(span)
            elif replacements[key] is not None:
                new_spans.append(Span(span.start, span.end, replacements[key]))
        labels = tuple(encode_spans_to_bio(new_spans, len(sent), tagset))
        sentences.append(Sentence(sent.tokens, labels, gold_labels=sent.labels))
    return Dataset(tuple(sentences), tagset,
                   name=f"{dataset.name}-noise{spec.ratio_percent:g}")


# ---------------------------------------------------------------------------
# Synthetic corpus generation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GeneratorConfig:
    seed: int = 0
    entity_types: tuple = ("PER", "LOC", "ORG", "MISC")
    context_vocab_size: int = 300
    tokens_per_type: int = 30
    surfaces_per_type: int = 60
    surface_len_min: int = 1
    surface_len_max: int = 3
    cues_per_type: int = 3
    train_sentences: int = 2000
    dev_sentences: int = 300
    test_sentences: int = 400
    sentence_len_min: int = 6
    sentence_len_max: int = 14
    entity_density: float = 1.5
    max_entities_per_sentence: int = 3
    trigger_prob: float = 0.6
    coverage: float = 0.7
    ambiguity: float = 0.2
    noise_ratio: float = 0.0
    noise_mode: str = MIXED

    def validate(self) -> None:
        if not self.entity_types:
            raise ConfigError("need at least one entity type")
        if self.context_vocab_size < 1 or self.tokens_per_type < 1:
            raise ConfigError("vocabulary sizes must be >= 1")
        if self.surfaces_per_type < 1:
            raise ConfigError("surface settings must be >= 1")
        if not 1 <= self.surface_len_min <= self.surface_len_max:
            raise ConfigError(
                f"bad surface length range "
                f"[{self.surface_len_min}, {self.surface_len_max}]"
            )
        if not 1 <= self.sentence_len_min <= self.sentence_len_max:
            raise ConfigError(
                f"bad sentence length range "
                f"[{self.sentence_len_min}, {self.sentence_len_max}]"
            )
        if min(self.train_sentences, self.dev_sentences, self.test_sentences) < 0:
            raise ConfigError("split sizes must be >= 0")
        if self.entity_density < 0:
            raise ConfigError("entity_density must be >= 0")
        for name, frac in (("coverage", self.coverage),
                           ("ambiguity", self.ambiguity),
                           ("trigger_prob", self.trigger_prob)):
            if not 0.0 <= frac <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1]")
        if not 0.0 <= self.noise_ratio <= 100.0:
            raise ConfigError("noise_ratio must be in [0, 100]")
        if self.noise_mode not in NOISE_MODES:
            raise ConfigError(f"unknown noise mode {self.noise_mode!r}")

    @property
    def total_sentences(self) -> int:
        return self.train_sentences + self.dev_sentences + self.test_sentences


def _build_surfaces(cfg: GeneratorConfig, rng) -> dict:
    """Distinct entity surfaces per type, infix-free across the whole pool.

    Infix-freeness (no surface is a contiguous subsequence of another) keeps
    dictionary matching clean: a mention is matched iff its own surface is
    covered, so coverage translates directly into the incomplete-annotation
    rate.
    """
    alphabets = {
        t: [f"{t.lower()}~{i:02d}" for i in range(cfg.tokens_per_type)]
        for t in cfg.entity_types
    }
    accepted: list = []
    surfaces = {t: [] for t in cfg.entity_types}
    attempts_left = 400 * cfg.surfaces_per_type * len(cfg.entity_types)

    def clashes(cand):
        for other in accepted:
            short, long_ = (cand, other) if len(cand) <= len(other) else (other, cand)
            n = len(short)
            if any(long_[i:i + n] == short for i in range(len(long_) - n + 1)):
                return True
        return False

    for t in cfg.entity_types:
        pool = alphabets[t]
        while len(surfaces[t]) < cfg.surfaces_per_type:
            if attempts_left <= 0:
                raise ConfigError(
                    "cannot build enough distinct infix-free surfaces; "
                    "raise tokens_per_type or lower surfaces_per_type"
                )
            attempts_left -= 1
            length = int(rng.integers(cfg.surface_len_min, cfg.surface_len_max + 1))
            cand = tuple(pool[int(rng.integers(len(pool)))] for _ in range(length))
            if not clashes(cand):
                accepted.append(cand)
                surfaces[t].append(cand)
    return surfaces


def generate_synthetic(cfg: GeneratorConfig):
    """Deterministically build (clean corpus, gazetteer) from the settings.

    The corpus holds train + dev + test sentences in that order (use
    `split_dataset` to cut it); every sentence carries gold labels equal to
    its labels. The gazetteer covers a `coverage` fraction of the distinct
    surfaces of each type, and an `ambiguity` fraction of the covered
    entries lists a wrong type first, so matching the clean text reproduces
    both noise families at known rates.
    """
    cfg.validate()
    rng = derive_rng(cfg.seed, STREAM_GENERATOR)
    tagset = TagSet(cfg.entity_types)
    types = cfg.entity_types

    context = [f"w{i:03d}" for i in range(cfg.context_vocab_size)]
    cues = {t: [f"{t.lower()}cue{j}" for j in range(cfg.cues_per_type)]
            for t in types}
    surfaces = _build_surfaces(cfg, rng)

    sentences = []
    for _ in range(cfg.total_sentences):
        n_ctx = int(rng.integers(cfg.sentence_len_min, cfg.sentence_len_max + 1))
        n_ent = min(int(rng.poisson(cfg.entity_density)),
                    cfg.max_entities_per_sentence, n_ctx + 1)
        slots = set(int(s) for s in rng.choice(n_ctx + 1, size=n_ent, replace=False))
        ctx_draw = rng.integers(0, len(context), size=n_ctx)

        tokens: list = []
        labels: list = []
        for pos in range(n_ctx + 1):
            if pos in slots:
                t = types[int(rng.integers(len(types)))]
                surface = surfaces[t][int(rng.integers(len(surfaces[t])))]
                if rng.random() < cfg.trigger_prob:
                    cue = cues[t][int(rng.integers(len(cues[t])))]
                    tokens.append(cue)
                    labels.append(0)
                tokens.append(surface[0])
                labels.append(tagset.begin_of(t))
                inside = tagset.inside_of(t)
                for tok in surface[1:]:
                    tokens.append(tok)
                    labels.append(inside)
            if pos < n_ctx:
                tokens.append(context[int(ctx_draw[pos])])
                labels.append(0)
        sentences.append(Sentence(tuple(tokens), tuple(labels),
                                  gold_labels=tuple(labels)))

    entries = {}
    for t in types:
        pool = surfaces[t]
        n_cov = _round_half_up(cfg.coverage * len(pool))
        covered = [pool[int(i)] for i in rng.choice(len(pool), size=n_cov,
                                                    replace=False)]
        n_amb = _round_half_up(cfg.ambiguity * n_cov)
        ambiguous = set(int(i) for i in rng.choice(n_cov, size=n_amb,
                                                   replace=False)) if n_cov else set()
        other_types = [u for u in types if u != t]
        for j, surface in enumerate(covered):
            if j in ambiguous and other_types:
                wrong = other_types[int(rng.integers(len(other_types)))]
                entries[" ".join(surface)] = (wrong, t)
            else:
                entries[" ".join(surface)] = (t,)

    clean = Dataset(tuple(sentences), tagset, name="synthetic")
    return clean, Gazetteer(entries)


def split_dataset(dataset: Dataset, cfg: GeneratorConfig):
    """Cut a generated corpus into (train, dev, test) by the configured sizes."""
    n1, n2 = cfg.train_sentences, cfg.train_sentences + cfg.dev_sentences
    if cfg.total_sentences != len(dataset):
        raise ConfigError(
            f"dataset has {len(dataset)} sentences, settings expect "
            f"{cfg.total_sentences}"
        )
    parts = (dataset.sentences[:n1], dataset.sentences[n1:n2],
             dataset.sentences[n2:])
    names = ("train", "dev", "test")
    return tuple(Dataset(p, dataset.tagset, name=f"{dataset.name}-{n}")
                 for p, n in zip(parts, names))


def noise_profile(ds: Dataset) -> dict:
    """Measure a noisy corpus against its own gold reference.

    Reports the incomplete-annotation rate (gold mentions labeled entirely
    O), the inaccurate rate (gold mentions matched at exact boundaries but
    with the wrong type), and span P/R/F1 of the noisy labels.
    """
    gold_seqs = ds.gold_sequences()
    if gold_seqs is None:
        raise CorpusError("noise profile requires gold labels")
    tagset = ds.tagset
    mentions = incomplete = inaccurate = 0
    for sent, gold in zip(ds.sentences, gold_seqs):
        noisy_spans = {(s.start, s.end): s.etype
                       for s in decode_bio_to_spans(sent.labels, tagset)}
        for g in decode_bio_to_spans(gold, tagset):
            mentions += 1
            if all(sent.labels[i] == 0 for i in range(g.start, g.end + 1)):
                incomplete += 1
            else:
                etype = noisy_spans.get((g.start, g.end))
                if etype is not None and etype != g.etype:
                    inaccurate += 1
    metrics: SpanMetrics = span_prf([s.labels for s in ds.sentences],
                                    gold_seqs, tagset)
    return {
        "gold_mentions": mentions,
        "incomplete_rate": incomplete / mentions if mentions else 0.0,
        "inaccurate_rate": inaccurate / mentions if mentions else 0.0,
        "span_metrics": metrics.to_dict(),
    }
