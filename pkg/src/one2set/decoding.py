"""Parallel greedy inference over all codes and assembly of the final set.

Every code decodes greedily from BOS in lock-step with the others but sees
only its own prefix.  A code stops at EOS, at the null token (which marks
the whole slot empty) or after ``max_len`` emitted tokens.  Assembly drops
empty slots, restores copied out-of-vocabulary surface forms, and removes
stem-level duplicates while keeping first occurrences; the pre-dedup count
feeds the duplication-ratio metric.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import torch

from .corpus import (
    BOS_ID,
    EOS_ID,
    NULL_ID,
    SEP_ID,
    Document,
    Vocabulary,
    decode_extended,
    find_stemmed,
)
from .stemming import stem_tokens


def generate_batch(model, docs, max_len: int, codes=None) -> list[list[list[int]]]:
    """Greedy token ids per document and code; terminal token included when
    one fired.  All codes advance in lock-step but see only their own
    prefix, so batching is purely an efficiency measure."""
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    model.eval()
    with torch.no_grad():
        memory, ext, mask = model.encode_batch(docs)
        b = len(docs)
        n = model.cfg.num_codes if codes is None else len(codes)
        prefix = torch.full((b, n, 1), BOS_ID, dtype=torch.long)
        sequences = [[[] for _ in range(n)] for _ in range(b)]
        finished = [[False] * n for _ in range(b)]
        for _ in range(max_len):
            dist = model.decode_step(memory, ext, mask, prefix, codes=codes)
            token = dist.argmax(dim=-1)
            for i in range(b):
                for j in range(n):
                    if not finished[i][j]:
                        t = int(token[i, j])
                        sequences[i][j].append(t)
                        if t in (EOS_ID, NULL_ID):
                            finished[i][j] = True
            if all(all(row) for row in finished):
                break
            prefix = torch.cat([prefix, token.unsqueeze(-1)], dim=-1)
    return sequences


def generate(model, doc: Document, max_len: int, codes=None) -> list[list[int]]:
    """Single-document greedy decode over all codes."""
    return generate_batch(model, [doc], max_len, codes=codes)[0]


@dataclass
class DecodedSet:
    """Assembled predictions with per-code provenance."""

    per_code_tokens: list[list[str] | None]  # None marks an empty slot
    phrases: list[list[str]]                 # post-dedup, first occurrence kept
    phrase_codes: list[int]
    raw_count: int
    dup_count: int


def assemble(sequences: list[list[int]], doc: Document, vocab: Vocabulary) -> DecodedSet:
    per_code: list[list[str] | None] = []
    for seq in sequences:
        if NULL_ID in seq:
            per_code.append(None)
            continue
        ids = [t for t in seq if t != EOS_ID]
        if not ids:
            per_code.append(None)
            continue
        per_code.append(decode_extended(ids, doc, vocab))

    raw_count = sum(1 for p in per_code if p is not None)
    phrases: list[list[str]] = []
    phrase_codes: list[int] = []
    seen: set[tuple[str, ...]] = set()
    for code, tokens in enumerate(per_code):
        if tokens is None:
            continue
        key = stem_tokens(tokens)
        if key in seen:
            continue
        seen.add(key)
        phrases.append(list(tokens))
        phrase_codes.append(code)
    return DecodedSet(
        per_code_tokens=per_code,
        phrases=phrases,
        phrase_codes=phrase_codes,
        raw_count=raw_count,
        dup_count=raw_count - len(phrases),
    )


def split_prediction_phrases(phrases: list[list[str]], doc: Document):
    """Present/absent split of predictions by the same stemmed containment
    test the corpus uses for gold phrases."""
    source_stems = stem_tokens(list(doc.tokens))
    present, absent = [], []
    for phrase in phrases:
        if find_stemmed(source_stems, stem_tokens(phrase)) is not None:
            present.append(phrase)
        else:
            absent.append(phrase)
    return present, absent


def predict_document(model, doc: Document, vocab: Vocabulary, max_len: int):
    """generate + assemble, the full single-document inference pipeline."""
    sequences = generate(model, doc, max_len)
    return assemble(sequences, doc, vocab)


def split_concatenated(sequence: list[int]) -> list[list[int]]:
    """Cut a separator-joined keyphrase sequence into per-phrase id lists."""
    phrases, current = [], []
    for token in sequence:
        if token == EOS_ID:
            break
        if token == SEP_ID:
            if current:
                phrases.append(current)
            current = []
        else:
            current.append(token)
    if current:
        phrases.append(current)
    return phrases


def predict_document_seq(model, doc: Document, vocab: Vocabulary,
                         max_len: int) -> DecodedSet:
    """Inference for the concatenated-sequence baseline: decode one zeroed
    code until EOS and split the output on separators."""
    sequence = generate_batch(model, [doc], max_len, codes=[0])[0][0]
    segments = split_concatenated(sequence)
    padded = [seg + [EOS_ID] for seg in segments]
    return assemble(padded, doc, vocab)


def prediction_record(sample_id: str, decoded: DecodedSet, doc: Document) -> dict:
    present, absent = split_prediction_phrases(decoded.phrases, doc)
    return {
        "id": sample_id,
        "present_pred": [" ".join(p) for p in present],
        "absent_pred": [" ".join(p) for p in absent],
        "raw_count": decoded.raw_count,
        "dup_count": decoded.dup_count,
    }


def write_predictions_jsonl(path, records) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for rec in records:
            handle.write(json.dumps(rec) + "\n")


def read_predictions_jsonl(path) -> list[dict]:
    with open(path, encoding="utf-8") as handle:
        return [json.loads(line) for line in handle if line.strip()]
