"""Stemmed-match F1 metrics, duplication ratio and per-code usage stats.

Predictions and gold phrases are compared as Porter-stemmed token
sequences.  F1@M scores every prediction the model made; F1@5 scores
exactly five slots per document, truncating overlong prediction lists and
padding short ones with guaranteed-incorrect filler phrases so precision
is measured against five slots.  All scores are macro-averaged over
documents; documents without gold phrases in a category are skipped for
that category and counted.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Sequence

from .corpus import find_stemmed
from .stemming import stem_tokens

Phrase = Sequence[str]


def match(pred: Phrase, gold: Phrase) -> bool:
    """True iff the stemmed token sequences are equal."""
    return stem_tokens(list(pred)) == stem_tokens(list(gold))


def _greedy_matches(preds: Sequence[Phrase], golds: Sequence[Phrase]) -> int:
    gold_stems = [stem_tokens(list(g)) for g in golds]
    taken = [False] * len(golds)
    matched = 0
    for pred in preds:
        stems = stem_tokens(list(pred))
        for i, gs in enumerate(gold_stems):
            if not taken[i] and stems == gs:
                taken[i] = True
                matched += 1
                break
    return matched


def f1_at_m(preds: Sequence[Phrase], golds: Sequence[Phrase]):
    """Precision over all predictions, recall over all golds, harmonic F1.

    Empty predictions give (0, 0, 0); empty golds are a caller error (the
    document should be skipped and counted for that category).
    """
    if not golds:
        raise ValueError("no gold phrases for this category; skip the document")
    if not preds:
        return 0.0, 0.0, 0.0
    matched = _greedy_matches(preds, golds)
    precision = matched / len(preds)
    recall = matched / len(golds)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def _filler_phrase(rng: random.Random, i: int) -> list[str]:
    # bracketed filler can never stem-match a preprocessed phrase; the rng
    # keeps the appended-at-random interface without affecting scores
    return [f"⟨filler-{rng.randrange(1 << 30)}-{i}⟩"]


def f1_at_5(preds: Sequence[Phrase], golds: Sequence[Phrase],
            rng: random.Random | None = None, pad_incorrect: bool = True):
    """Score exactly five slots: truncate to the first five predictions or
    append never-matching fillers up to five.  With padding disabled and
    fewer than five predictions this reduces to f1_at_m."""
    rng = rng or random.Random(0)
    preds = list(preds)
    if len(preds) > 5:
        preds = preds[:5]
    elif pad_incorrect:
        preds = preds + [_filler_phrase(rng, i) for i in range(5 - len(preds))]
    return f1_at_m(preds, golds)


def split_gold_phrases(source_tokens: Sequence[str], phrases: Sequence[Phrase]):
    """Present/absent split of gold phrases with stem dedup, first kept."""
    source_stems = stem_tokens(list(source_tokens))
    seen = set()
    present, absent = [], []
    for phrase in phrases:
        stems = stem_tokens(list(phrase))
        if not stems or stems in seen:
            continue
        seen.add(stems)
        if find_stemmed(source_stems, stems) is not None:
            present.append(list(phrase))
        else:
            absent.append(list(phrase))
    return present, absent


@dataclass
class CategoryMetrics:
    precision_m: float = 0.0
    recall_m: float = 0.0
    f1_m: float = 0.0
    precision_5: float = 0.0
    recall_5: float = 0.0
    f1_5: float = 0.0
    scored_documents: int = 0
    skipped_documents: int = 0


@dataclass
class DocumentOutcome:
    """Everything the metric suite needs to know about one test document."""

    pred_present: list[list[str]]
    pred_absent: list[list[str]]
    gold_present: list[list[str]]
    gold_absent: list[list[str]]
    raw_count: int = 0
    dup_count: int = 0
    code_classes: list[str] = field(default_factory=list)  # present|absent|null


@dataclass
class EvalReport:
    present: CategoryMetrics
    absent: CategoryMetrics
    avg_present_predictions: float
    avg_absent_predictions: float
    duplication_ratio: float
    code_usage: list[tuple[float, float, float]]
    num_documents: int


def code_usage_stats(per_doc_classes: Sequence[Sequence[str]],
                     num_codes: int) -> list[tuple[float, float, float]]:
    """Per code: fraction of documents where it produced a present phrase,
    an absent phrase, or nothing; the three sum to one."""
    usage = []
    docs = len(per_doc_classes)
    for code in range(num_codes):
        pres = sum(1 for classes in per_doc_classes if classes[code] == "present")
        absent = sum(1 for classes in per_doc_classes if classes[code] == "absent")
        null = sum(1 for classes in per_doc_classes if classes[code] == "null")
        if pres + absent + null != docs:
            raise ValueError("each code needs exactly one class per document")
        usage.append((pres / docs, absent / docs, null / docs) if docs else (0.0, 0.0, 0.0))
    return usage


def _category(preds_by_doc, golds_by_doc, rng: random.Random) -> CategoryMetrics:
    out = CategoryMetrics()
    sums = [0.0] * 6
    for preds, golds in zip(preds_by_doc, golds_by_doc):
        if not golds:
            out.skipped_documents += 1
            continue
        p_m, r_m, f_m = f1_at_m(preds, golds)
        p_5, r_5, f_5 = f1_at_5(preds, golds, rng)
        for i, v in enumerate((p_m, r_m, f_m, p_5, r_5, f_5)):
            sums[i] += v
        out.scored_documents += 1
    if out.scored_documents:
        (out.precision_m, out.recall_m, out.f1_m,
         out.precision_5, out.recall_5, out.f1_5) = [
            s / out.scored_documents for s in sums
        ]
    return out


def evaluate_outcomes(outcomes: Sequence[DocumentOutcome],
                      num_codes: int = 0, seed: int = 0) -> EvalReport:
    rng = random.Random(seed)
    present = _category([o.pred_present for o in outcomes],
                        [o.gold_present for o in outcomes], rng)
    absent = _category([o.pred_absent for o in outcomes],
                       [o.gold_absent for o in outcomes], rng)
    n = len(outcomes)
    avg_pk = sum(len(o.pred_present) for o in outcomes) / n if n else 0.0
    avg_ak = sum(len(o.pred_absent) for o in outcomes) / n if n else 0.0
    with_preds = [o for o in outcomes if o.raw_count > 0]
    dup = (
        sum(o.dup_count / o.raw_count for o in with_preds) / len(with_preds)
        if with_preds
        else 0.0
    )
    usage = (
        code_usage_stats([o.code_classes for o in outcomes], num_codes)
        if num_codes and all(o.code_classes for o in outcomes)
        else []
    )
    return EvalReport(
        present=present,
        absent=absent,
        avg_present_predictions=avg_pk,
        avg_absent_predictions=avg_ak,
        duplication_ratio=dup,
        code_usage=usage,
        num_documents=n,
    )


def format_report(report: EvalReport) -> str:
    lines = [
        f"documents: {report.num_documents}",
        "category   P@M     R@M     F1@M    P@5     R@5     F1@5    scored  skipped",
    ]
    for name, cat in (("present", report.present), ("absent", report.absent)):
        lines.append(
            f"{name:<10}{cat.precision_m:<8.4f}{cat.recall_m:<8.4f}{cat.f1_m:<8.4f}"
            f"{cat.precision_5:<8.4f}{cat.recall_5:<8.4f}{cat.f1_5:<8.4f}"
            f"{cat.scored_documents:<8}{cat.skipped_documents}"
        )
    lines.append(
        f"avg #PK: {report.avg_present_predictions:.2f}  "
        f"avg #AK: {report.avg_absent_predictions:.2f}  "
        f"dup ratio: {report.duplication_ratio:.4f}"
    )
    return "\n".join(lines)


def report_csv_rows(report: EvalReport) -> list[list]:
    rows = [["category", "p_at_m", "r_at_m", "f1_at_m", "p_at_5", "r_at_5",
             "f1_at_5", "scored", "skipped"]]
    for name, cat in (("present", report.present), ("absent", report.absent)):
        rows.append([name, cat.precision_m, cat.recall_m, cat.f1_m,
                     cat.precision_5, cat.recall_5, cat.f1_5,
                     cat.scored_documents, cat.skipped_documents])
    rows.append(["counts", report.avg_present_predictions,
                 report.avg_absent_predictions, report.duplication_ratio,
                 "", "", "", report.num_documents, ""])
    return rows


def code_usage_csv_rows(report: EvalReport) -> list[list]:
    rows = [["code", "present_ratio", "absent_ratio", "null_ratio"]]
    for i, (p, a, n) in enumerate(report.code_usage):
        rows.append([i, p, a, n])
    return rows
