"""Tokenized, BIO-labeled text: tag sets, sentences, span codecs, CoNLL I/O.

Label indices are laid out as ``O=0, B-t1=1, I-t1=2, B-t2=3, ...`` so index 0
is always the non-entity label. All types here are immutable after
construction and safe to share across workers.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
PAD_ID = 0
UNK_ID = 1
O_LABEL = "O"


class CorpusError(ValueError):
    """Malformed tag sets, label sequences, spans, or CoNLL input."""


class TagSet:
    """The label alphabet {O} ∪ {B-t, I-t} over an ordered list of entity types."""

    def __init__(self, entity_types: Sequence[str]):
        types = tuple(entity_types)
        seen = set()
        for t in types:
            if not t or any(c.isspace() for c in t) or "-" in t:
                raise CorpusError(f"invalid entity type name: {t!r}")
            if t in seen:
                raise CorpusError(f"duplicate entity type: {t!r}")
            seen.add(t)
        self.entity_types = types
        labels = [O_LABEL]
        for t in types:
            labels.append(f"B-{t}")
            labels.append(f"I-{t}")
        self.labels = tuple(labels)
        self.label_index = {lab: i for i, lab in enumerate(self.labels)}

    @property
    def num_labels(self) -> int:
        return len(self.labels)

    def index(self, label: str) -> int:
        try:
            return self.label_index[label]
        except KeyError:
            raise CorpusError(f"unknown tag {label!r}") from None

    def label(self, index: int) -> str:
        if not 0 <= index < self.num_labels:
            raise CorpusError(f"label index {index} out of range")
        return self.labels[index]

    def entity_type_of(self, index: int) -> Optional[str]:
        """Entity type of a label index, or None for O."""
        if index == 0:
            return None
        return self.entity_types[(index - 1) // 2]

    def is_begin(self, index: int) -> bool:
        return index > 0 and index % 2 == 1

    def is_inside(self, index: int) -> bool:
        return index > 0 and index % 2 == 0

    def begin_of(self, etype: str) -> int:
        return self.index(f"B-{etype}")

    def inside_of(self, etype: str) -> int:
        return self.index(f"I-{etype}")

    def __eq__(self, other: object) -> bool:
        return isinstance(other, TagSet) and self.entity_types == other.entity_types

    def __hash__(self) -> int:
        return hash(self.entity_types)

    def __repr__(self) -> str:
        return f"TagSet({list(self.entity_types)!r})"


@dataclass(frozen=True)
class Span:
    """An entity mention: inclusive token indices [start, end] plus a type."""

    start: int
    end: int
    etype: str

    def __post_init__(self):
        if not 0 <= self.start <= self.end:
            raise CorpusError(f"bad span bounds ({self.start}, {self.end})")


@dataclass(frozen=True)
class Sentence:
    tokens: tuple
    labels: tuple
    gold_labels: Optional[tuple] = None

    def __post_init__(self):
        if len(self.tokens) < 1:
            raise CorpusError("empty sentence")
        if len(self.tokens) != len(self.labels):
            raise CorpusError(
                f"{len(self.tokens)} tokens but {len(self.labels)} labels"
            )
        if self.gold_labels is not None and len(self.gold_labels) != len(self.tokens):
            raise CorpusError("gold label length mismatch")

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class Dataset:
    sentences: tuple
    tagset: TagSet
    name: str = ""

    def __post_init__(self):
        hi = self.tagset.num_labels
        for k, sent in enumerate(self.sentences):
            for seq in (sent.labels, sent.gold_labels or ()):
                for lab in seq:
                    if not 0 <= lab < hi:
                        raise CorpusError(
                            f"sentence {k}: label index {lab} invalid for tagset"
                        )

    def __len__(self) -> int:
        return len(self.sentences)

    @property
    def n_tokens(self) -> int:
        return sum(len(s) for s in self.sentences)

    def label_sequences(self):
        return [s.labels for s in self.sentences]

    def gold_sequences(self):
        if any(s.gold_labels is None for s in self.sentences):
            return None
        return [s.gold_labels for s in self.sentences]


def is_bio_legal(labels: Sequence[int], tagset: TagSet) -> bool:
    """True iff every I-t is preceded by B-t or I-t of the same type."""
    prev = 0
    for lab in labels:
        if tagset.is_inside(lab):
            same = prev in (lab, lab - 1)  # I-t or B-t of the same type
            if not same:
                return False
        prev = lab
    return True


def decode_bio_to_spans(labels: Sequence[int], tagset: TagSet) -> list:
    """Maximal entity spans of a label sequence, sorted by start.

    Total over arbitrary label sequences: an I-t with no compatible
    predecessor is repaired as B-t (conlleval-compatible).
    """
    spans = []
    start = None
    cur_type = None

    def close(upto: int):
        nonlocal start, cur_type
        if start is not None:
            spans.append(Span(start, upto, cur_type))
        start, cur_type = None, None

    for i, lab in enumerate(labels):
        if lab == 0:
            close(i - 1)
        elif tagset.is_begin(lab):
            close(i - 1)
            start, cur_type = i, tagset.entity_type_of(lab)
        else:  # inside
            etype = tagset.entity_type_of(lab)
            if cur_type != etype:  # orphan I-t: repair as B-t
                close(i - 1)
                start, cur_type = i, etype
    close(len(labels) - 1)
    return spans


def encode_spans_to_bio(spans: Iterable[Span], length: int, tagset: TagSet) -> list:
    """Inverse of decode for BIO-legal sequences; uncovered tokens get O."""
    labels = [0] * length
    claimed = [None] * length
    for span in sorted(spans, key=lambda s: (s.start, s.end)):
        if span.end >= length:
            raise CorpusError(f"span {span} exceeds sentence length {length}")
        for i in range(span.start, span.end + 1):
            if claimed[i] is not None:
                raise CorpusError(f"overlapping spans: {claimed[i]} and {span}")
            claimed[i] = span
        labels[span.start] = tagset.begin_of(span.etype)
        inside = tagset.inside_of(span.etype)
        for i in range(span.start + 1, span.end + 1):
            labels[i] = inside
    return labels


def repair_bio(labels: Sequence[int], tagset: TagSet) -> list:
    """Nearest BIO-legal sequence under the orphan-I repair rule."""
    return encode_spans_to_bio(decode_bio_to_spans(labels, tagset), len(labels), tagset)


# ---------------------------------------------------------------------------
# CoNLL format: one `<token> <tag>` per line (single space or tab), blank
# line between sentences, UTF-8. The writer emits the canonical form:
# single-space separator, one blank line between sentences, trailing newline.
# ---------------------------------------------------------------------------


def parse_conll(text, tagset: TagSet, name: str = "") -> Dataset:
    """Parse CoNLL two-column text (a string or an iterable of lines)."""
    if isinstance(text, str):
        lines = text.split("\n")
        # split("\n") turns a trailing newline into one empty tail element
        if lines and lines[-1] == "":
            lines.pop()
    else:
        lines = [ln.rstrip("\n") for ln in text]

    sentences = []
    tokens: list = []
    labels: list = []

    def flush():
        nonlocal tokens, labels
        if tokens:
            sentences.append(Sentence(tuple(tokens), tuple(labels)))
            tokens, labels = [], []

    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            flush()
            continue
        parts = line.split()
        if len(parts) != 2:
            raise CorpusError(
                f"line {lineno}: expected `<token> <tag>`, got {line!r}"
            )
        tok, tag = parts
        tokens.append(tok)
        labels.append(tagset.index(tag))
    flush()
    return Dataset(tuple(sentences), tagset, name=name)


def to_conll(dataset: Dataset) -> str:
    blocks = []
    for sent in dataset.sentences:
        lines = [
            f"{tok} {dataset.tagset.label(lab)}\n"
            for tok, lab in zip(sent.tokens, sent.labels)
        ]
        blocks.append("".join(lines))
    return "\n".join(blocks)


def read_conll(path, tagset: TagSet, name: str = "") -> Dataset:
    with open(path, encoding="utf-8") as fh:
        return parse_conll(fh.read(), tagset, name=name or str(path))


def write_conll(dataset: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(to_conll(dataset))


def attach_gold(dataset: Dataset, gold: Dataset) -> Dataset:
    """Attach a clean reference corpus (same tokenization, same order)."""
    if len(dataset) != len(gold):
        raise CorpusError(
            f"gold corpus has {len(gold)} sentences, expected {len(dataset)}"
        )
    sentences = []
    for k, (noisy, clean) in enumerate(zip(dataset.sentences, gold.sentences)):
        if noisy.tokens != clean.tokens:
            raise CorpusError(f"sentence {k}: token mismatch with gold corpus")
        sentences.append(Sentence(noisy.tokens, noisy.labels, clean.labels))
    return Dataset(tuple(sentences), dataset.tagset, name=dataset.name)


class Vocabulary:
    """Token-to-id map with fixed PAD=0 / UNK=1 ids.

    Ids are assigned in descending frequency with lexicographic tie-break,
    so vocabularies are identical across platforms.
    """

    def __init__(self, ordered_tokens: Sequence[str], min_count: int = 1,
                 case_folding: bool = False):
        self.min_count = min_count
        self.case_folding = case_folding
        self.ordered_tokens = tuple(ordered_tokens)
        self.token_to_id = {PAD_TOKEN: PAD_ID, UNK_TOKEN: UNK_ID}
        for i, tok in enumerate(self.ordered_tokens, start=2):
            self.token_to_id[tok] = i

    def __len__(self) -> int:
        return len(self.token_to_id)

    def id_of(self, token: str) -> int:
        if self.case_folding:
            token = token.lower()
        return self.token_to_id.get(token, UNK_ID)

    def encode(self, tokens: Sequence[str]) -> np.ndarray:
        return np.array([self.id_of(t) for t in tokens], dtype=np.int64)

    def to_dict(self) -> dict:
        return {
            "tokens": list(self.ordered_tokens),
            "min_count": self.min_count,
            "case_folding": self.case_folding,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "Vocabulary":
        return cls(payload["tokens"], payload["min_count"], payload["case_folding"])


def build_vocabulary(dataset: Dataset, min_count: int = 1,
                     case_folding: bool = False) -> Vocabulary:
    if min_count < 1:
        raise CorpusError("min_count must be >= 1")
    counts: Counter = Counter()
    for sent in dataset.sentences:
        for tok in sent.tokens:
            counts[tok.lower() if case_folding else tok] += 1
    kept = [t for t, c in counts.items() if c >= min_count]
    kept.sort(key=lambda t: (-counts[t], t))
    return Vocabulary(kept, min_count=min_count, case_folding=case_folding)
