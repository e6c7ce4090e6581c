"""Synthetic corpus generator for desk-scale end-to-end runs.

Documents are random token sequences with present keyphrases planted
contiguously.  Absent keyphrases follow a deterministic rule the model can
learn: every document opens with a topic word from a small pool, and each
topic maps to a fixed set of answer words drawn from a reserved vocabulary
slice that never appears inside any document.  The generator verifies both
directions of the present/absent contract with the same stemmed
containment test used on real data.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path

from .corpus import RawSample, find_stemmed
from .stemming import stem_tokens

_CONSONANTS = "bcdfghjklmnpqrstvwxz"
_VOWELS = "aeiou"
_SYLLABLES = [c + v for c in _CONSONANTS for v in _VOWELS]


def synthetic_word(i: int) -> str:
    """Bijective index -> pronounceable lowercase word, no digits."""
    if i < 0 or i >= len(_SYLLABLES) ** 2:
        raise ValueError("word index out of range")
    return _SYLLABLES[i // len(_SYLLABLES)] + _SYLLABLES[i % len(_SYLLABLES)]


@dataclass
class SyntheticSpec:
    vocab_size: int = 200
    num_documents: int = 200
    doc_len_range: tuple[int, int] = (20, 40)
    phrases_range: tuple[int, int] = (2, 5)
    absent_ratio: float = 0.35
    seed: int = 0
    topic_pool: int = 20
    max_absent: int = 2
    title_len: int = 5
    max_phrase_words: int = 3

    def __post_init__(self):
        if self.doc_len_range[0] > self.doc_len_range[1] or self.doc_len_range[0] < 4:
            raise ValueError("bad document length range")
        if self.phrases_range[0] < 1 or self.phrases_range[0] > self.phrases_range[1]:
            raise ValueError("bad phrases-per-document range")
        if not 0.0 <= self.absent_ratio <= 1.0:
            raise ValueError("absent_ratio must lie in [0, 1]")
        reserved = self.topic_pool * (1 + self.max_absent)
        if self.vocab_size <= reserved + 10:
            raise ValueError("vocab too small for topic and answer slices")


def _vocab_slices(spec: SyntheticSpec):
    words = [synthetic_word(i) for i in range(spec.vocab_size)]
    topics = words[: spec.topic_pool]
    answer_base = spec.topic_pool
    free = words[spec.topic_pool * (1 + spec.max_absent):]
    return words, topics, answer_base, free


def absent_answer(spec: SyntheticSpec, topic_index: int, j: int) -> str:
    """Deterministic topic -> j-th absent keyphrase word."""
    return synthetic_word(spec.topic_pool + topic_index * spec.max_absent + j)


def generate_synthetic(spec: SyntheticSpec) -> list[RawSample]:
    rng = random.Random(spec.seed)
    words, topics, _, free = _vocab_slices(spec)
    samples = []
    for _ in range(spec.num_documents):
        topic_index = rng.randrange(spec.topic_pool)
        topic = topics[topic_index]
        total = rng.randint(*spec.phrases_range)
        n_absent = min(int(round(total * spec.absent_ratio)), spec.max_absent)
        if spec.absent_ratio > 0:
            n_absent = max(1, n_absent)
        n_absent = min(n_absent, total - 1) if total > 1 else n_absent
        n_present = total - n_absent

        absent_phrases = [[absent_answer(spec, topic_index, j)] for j in range(n_absent)]

        present_phrases = []
        used_stems = set()
        while len(present_phrases) < n_present:
            length = rng.randint(1, spec.max_phrase_words)
            phrase = [rng.choice(free) for _ in range(length)]
            key = stem_tokens(phrase)
            if key in used_stems:
                continue
            used_stems.add(key)
            present_phrases.append(phrase)

        doc_len = rng.randint(*spec.doc_len_range)
        doc_len = max(doc_len, 1 + sum(len(p) for p in present_phrases) + n_present)
        tokens = [rng.choice(free) for _ in range(doc_len)]
        tokens[0] = topic

        taken: list[tuple[int, int]] = []
        for phrase in present_phrases:
            while True:
                start = rng.randint(1, doc_len - len(phrase))
                span = (start, start + len(phrase))
                if all(span[1] <= s or span[0] >= e for s, e in taken):
                    taken.append(span)
                    tokens[span[0]: span[1]] = phrase
                    break

        _verify(tokens, present_phrases, absent_phrases)

        keyphrases = [" ".join(p) for p in present_phrases + absent_phrases]
        rng.shuffle(keyphrases)
        samples.append(RawSample(
            title=" ".join(tokens[: spec.title_len]),
            abstract=" ".join(tokens[spec.title_len:]),
            keyphrases=tuple(keyphrases),
        ))
    return samples


def _verify(tokens, present_phrases, absent_phrases):
    source_stems = stem_tokens(tokens)
    for phrase in present_phrases:
        if find_stemmed(source_stems, stem_tokens(phrase)) is None:
            raise RuntimeError(f"planted phrase {phrase} not found in document")
    for phrase in absent_phrases:
        if find_stemmed(source_stems, stem_tokens(phrase)) is not None:
            raise RuntimeError(f"absent phrase {phrase} occurs in document")


def write_jsonl(samples, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for s in samples:
            handle.write(json.dumps({
                "title": s.title,
                "abstract": s.abstract,
                "keyphrases": list(s.keyphrases),
            }) + "\n")
