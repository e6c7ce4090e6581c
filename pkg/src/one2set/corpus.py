"""Dataset ingestion, preprocessing, vocabulary and target preparation.

Samples arrive as JSONL records ``{"title": ..., "abstract": ...,
"keyphrases": [...]}``.  Preprocessing lowercases, detaches punctuation,
replaces all-digit tokens and concatenates title and abstract.  Targets are
split into present/absent halves by stemmed contiguous containment in the
source and encoded against a per-document extended vocabulary so that
out-of-vocabulary source words stay reachable through the copy path.
"""

from __future__ import annotations

import hashlib
import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from .stemming import stem_tokens

PAD_ID, UNK_ID, BOS_ID, EOS_ID, NULL_ID, SEP_ID, DIGIT_ID = range(7)

PAD_TOKEN = "⟨pad⟩"
UNK_TOKEN = "⟨unk⟩"
BOS_TOKEN = "⟨bos⟩"
EOS_TOKEN = "⟨eos⟩"
NULL_TOKEN = "⟨null⟩"
SEP_TOKEN = "⟨sep⟩"
DIGIT_TOKEN = "⟨digit⟩"

RESERVED_TOKENS = (
    PAD_TOKEN, UNK_TOKEN, BOS_TOKEN, EOS_TOKEN,
    NULL_TOKEN, SEP_TOKEN, DIGIT_TOKEN,
)

# reserved placeholders tokenize atomically so preprocessing is idempotent
_TOKEN_RE = re.compile(
    "|".join(re.escape(t) for t in
             ("⟨pad⟩", "⟨unk⟩", "⟨bos⟩",
              "⟨eos⟩", "⟨null⟩", "⟨sep⟩",
              "⟨digit⟩"))
    + r"|\w+|[^\w\s]"
)
_ALL_DIGITS_RE = re.compile(r"[0-9]+")


class PreprocessError(ValueError):
    """Raised for samples that cannot be turned into a usable document."""


@dataclass(frozen=True)
class RawSample:
    title: str
    abstract: str
    keyphrases: tuple[str, ...]


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, detach punctuation, replace
    all-digit tokens with the digit placeholder."""
    tokens = _TOKEN_RE.findall(text.lower())
    return [DIGIT_TOKEN if _ALL_DIGITS_RE.fullmatch(t) else t for t in tokens]


@dataclass(frozen=True)
class PreprocessedSample:
    source_tokens: tuple[str, ...]
    keyphrase_tokens: tuple[tuple[str, ...], ...]


def preprocess(raw: RawSample, insert_sep: bool = False) -> PreprocessedSample:
    """Tokenize a raw sample; title comes first, optionally followed by a
    separator token before the abstract.  Rejects empty sources."""
    title = tokenize(raw.title)
    abstract = tokenize(raw.abstract)
    source = title + ([SEP_TOKEN] if insert_sep and title and abstract else []) + abstract
    if not source:
        raise PreprocessError("empty source after preprocessing")
    phrases = tuple(tuple(tokenize(p)) for p in raw.keyphrases)
    phrases = tuple(p for p in phrases if p)
    return PreprocessedSample(tuple(source), phrases)


class Vocabulary:
    """Bijective word/id map with reserved tokens at fixed lowest ids."""

    def __init__(self, words: Sequence[str]):
        if tuple(words[: len(RESERVED_TOKENS)]) != RESERVED_TOKENS:
            raise ValueError("vocabulary must start with the reserved tokens")
        self.id_to_word: list[str] = list(words)
        self.word_to_id: dict[str, int] = {w: i for i, w in enumerate(words)}
        if len(self.word_to_id) != len(self.id_to_word):
            raise ValueError("duplicate words in vocabulary")

    def __len__(self) -> int:
        return len(self.id_to_word)

    def get(self, word: str) -> int:
        return self.word_to_id.get(word, UNK_ID)

    def word(self, idx: int) -> str:
        return self.id_to_word[idx]

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.id_to_word) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        words = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(words)

    def content_hash(self) -> str:
        payload = "\n".join(self.id_to_word).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()


def build_vocabulary(token_streams: Iterable[Sequence[str]], cap: int) -> Vocabulary:
    """Rank words by corpus frequency (ties broken lexicographically) and
    keep the most frequent ones under the total cap, reserved included."""
    if cap <= len(RESERVED_TOKENS):
        raise ValueError(f"cap must exceed the {len(RESERVED_TOKENS)} reserved tokens")
    counts: Counter[str] = Counter()
    for stream in token_streams:
        counts.update(stream)
    for tok in RESERVED_TOKENS:
        counts.pop(tok, None)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    keep = [w for w, _ in ranked[: cap - len(RESERVED_TOKENS)]]
    return Vocabulary(list(RESERVED_TOKENS) + keep)


@dataclass(frozen=True)
class Document:
    tokens: tuple[str, ...]
    source_ids: tuple[int, ...]
    source_oov_words: tuple[str, ...]
    extended_ids: tuple[int, ...]

    @property
    def oov_count(self) -> int:
        return len(self.source_oov_words)


def encode_document(tokens: Sequence[str], vocab: Vocabulary) -> Document:
    """Map tokens to ids; every out-of-vocabulary surface form gets an
    extended id ``len(vocab) + position`` in first-seen order."""
    source_ids: list[int] = []
    extended_ids: list[int] = []
    oov_index: dict[str, int] = {}
    oov_words: list[str] = []
    for tok in tokens:
        idx = vocab.get(tok)
        source_ids.append(idx)
        if idx == UNK_ID and tok != UNK_TOKEN:
            if tok not in oov_index:
                oov_index[tok] = len(oov_words)
                oov_words.append(tok)
            extended_ids.append(len(vocab) + oov_index[tok])
        else:
            extended_ids.append(idx)
    return Document(tuple(tokens), tuple(source_ids), tuple(oov_words), tuple(extended_ids))


def decode_extended(ids: Sequence[int], doc: Document, vocab: Vocabulary) -> list[str]:
    """Inverse of ``encode_document``/``encode_phrase`` for one document."""
    out = []
    for idx in ids:
        if idx < len(vocab):
            out.append(vocab.word(idx))
        else:
            out.append(doc.source_oov_words[idx - len(vocab)])
    return out


@dataclass(frozen=True)
class KeyphraseTarget:
    """One target phrase encoded against the document's extended vocabulary
    and terminated with EOS, or the single-token null placeholder."""

    ids: tuple[int, ...]
    tokens: tuple[str, ...] = ()
    is_null: bool = False
    first_pos: int | None = None

    def __post_init__(self):
        if self.is_null:
            if self.ids != (NULL_ID,):
                raise ValueError("null target must be exactly the null token")
        else:
            if not self.ids or self.ids[-1] != EOS_ID or NULL_ID in self.ids:
                raise ValueError("target must end with EOS and contain no null token")

    def __len__(self) -> int:
        return len(self.ids)


NULL_TARGET = KeyphraseTarget(ids=(NULL_ID,), is_null=True)


def encode_phrase(tokens: Sequence[str], doc: Document, vocab: Vocabulary,
                  first_pos: int | None = None) -> KeyphraseTarget:
    ids = []
    oov_index = {w: i for i, w in enumerate(doc.source_oov_words)}
    for tok in tokens:
        idx = vocab.get(tok)
        if idx == UNK_ID and tok in oov_index:
            idx = len(vocab) + oov_index[tok]
        ids.append(idx)
    ids.append(EOS_ID)
    return KeyphraseTarget(ids=tuple(ids), tokens=tuple(tokens), first_pos=first_pos)


@dataclass(frozen=True)
class TargetSet:
    present: tuple[KeyphraseTarget, ...]
    absent: tuple[KeyphraseTarget, ...]


def find_stemmed(source_stems: Sequence[str], phrase_stems: Sequence[str]) -> int | None:
    """First index where the phrase occurs contiguously, or None."""
    n, m = len(source_stems), len(phrase_stems)
    if m == 0 or m > n:
        return None
    for i in range(n - m + 1):
        if tuple(source_stems[i : i + m]) == tuple(phrase_stems):
            return i
    return None


def split_present_absent(doc: Document, phrases: Sequence[Sequence[str]],
                         vocab: Vocabulary) -> TargetSet:
    """A phrase is present iff its stemmed tokens occur contiguously in the
    stemmed source.  Duplicates after stemming keep the first occurrence."""
    source_stems = stem_tokens(list(doc.tokens))
    seen: set[tuple[str, ...]] = set()
    present, absent = [], []
    for phrase in phrases:
        stems = stem_tokens(list(phrase))
        if stems in seen:
            continue
        seen.add(stems)
        pos = find_stemmed(source_stems, stems)
        target = encode_phrase(phrase, doc, vocab, first_pos=pos)
        if pos is not None:
            present.append(target)
        else:
            absent.append(target)
    return TargetSet(tuple(present), tuple(absent))


def pad_target_set(targets: Sequence[KeyphraseTarget], slots: int,
                   counters: Counter | None = None) -> list[KeyphraseTarget]:
    """Pad with null targets up to ``slots``; overlong sets keep the first
    ``slots`` targets in document order and bump the truncation counter."""
    if len(targets) > slots:
        if counters is not None:
            counters["truncated_target_sets"] += 1
            counters["truncated_targets"] += len(targets) - slots
        return list(targets[:slots])
    return list(targets) + [NULL_TARGET] * (slots - len(targets))


def build_one2seq_target(ts: TargetSet) -> list[int]:
    """Concatenated-sequence target for the sequence-paradigm baseline:
    present phrases by first occurrence in the source, absent phrases in
    their original order, separator-joined and EOS-terminated."""
    ordered = sorted(ts.present, key=lambda t: t.first_pos)
    ordered += list(ts.absent)
    ids: list[int] = []
    for i, target in enumerate(ordered):
        if i > 0:
            ids.append(SEP_ID)
        ids.extend(target.ids[:-1])  # strip per-phrase EOS
    ids.append(EOS_ID)
    return ids


@dataclass
class PreparedSample:
    doc: Document
    targets: TargetSet
    sample_id: str = ""


def read_jsonl(path: str | Path) -> Iterator[RawSample]:
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            yield RawSample(
                title=rec.get("title", ""),
                abstract=rec.get("abstract", ""),
                keyphrases=tuple(rec.get("keyphrases", [])),
            )


def dedup_key(sample: PreprocessedSample) -> tuple:
    phrase_stems = sorted(stem_tokens(list(p)) for p in sample.keyphrase_tokens)
    return (sample.source_tokens, tuple(phrase_stems))


def prepare_corpus(
    samples: Iterable[RawSample],
    vocab: Vocabulary,
    insert_sep: bool = False,
    max_source_len: int | None = None,
    counters: Counter | None = None,
) -> list[PreparedSample]:
    """Preprocess, drop duplicates and rejected samples, encode documents
    and split targets.  Duplicate detection matches on the exact source
    tokens plus the sorted stemmed keyphrases."""
    counters = counters if counters is not None else Counter()
    seen_keys: set = set()
    prepared = []
    for i, raw in enumerate(samples):
        try:
            pre = preprocess(raw, insert_sep=insert_sep)
        except PreprocessError:
            counters["rejected_samples"] += 1
            continue
        key = dedup_key(pre)
        if key in seen_keys:
            counters["duplicate_samples"] += 1
            continue
        seen_keys.add(key)
        tokens = pre.source_tokens
        if max_source_len is not None and len(tokens) > max_source_len:
            counters["truncated_sources"] += 1
            tokens = tokens[:max_source_len]
        doc = encode_document(tokens, vocab)
        targets = split_present_absent(doc, pre.keyphrase_tokens, vocab)
        prepared.append(PreparedSample(doc=doc, targets=targets, sample_id=str(i)))
    return prepared
