"""End-to-end training loop with ablation switches and parameter sweeps.

Each step: encode the batch, free-run every code for K steps without
gradients, assign targets per half by bipartite matching (or by the
configured ablation rule), then take an optimizer step on the
teacher-forced set loss.  Periodic validation F1@M drives best-checkpoint
selection with patience-based early stopping.  Runs are deterministic for
a fixed config and seed.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import random
from collections import Counter
from dataclasses import dataclass, field, fields
from pathlib import Path

import torch

from . import assignment as assign_mod
from .assignment import RolloutDistributions
from .checkpoint import save_checkpoint
from .corpus import (
    PreparedSample,
    Vocabulary,
    build_one2seq_target,
    build_vocabulary,
    prepare_corpus,
    preprocess,
    read_jsonl,
)
from .decoding import predict_document, predict_document_seq, split_prediction_phrases
from .evaluation import DocumentOutcome, EvalReport, evaluate_outcomes, split_gold_phrases
from .loss import LossConfig, one2seq_loss, set_loss
from .model import ModelConfig, SetTransformer

ABLATION_FLAGS = (
    "no_codes", "fixed_assign", "random_assign",
    "student_forcing", "single_set_loss", "one2seq_baseline",
)


class TrainingDiverged(RuntimeError):
    pass


def configure_threads() -> int:
    """Cap torch worker parallelism from ONE2SET_THREADS when set."""
    value = os.environ.get("ONE2SET_THREADS")
    if value:
        threads = max(1, int(value))
        torch.set_num_threads(threads)
        return threads
    return torch.get_num_threads()


@dataclass
class TrainConfig:
    train_path: str = ""
    valid_path: str = ""
    out_dir: str = "runs/default"

    vocab_cap: int = 50002
    insert_sep: bool = False
    max_source_len: int = 256

    layers: int = 2
    heads: int = 4
    model_dim: int = 64
    feedforward_dim: int = 128
    embed_dim: int = 64
    num_codes: int = 8
    max_phrase_len: int = 8
    dropout: float = 0.0

    learning_rate: float = 0.0001
    beta1: float = 0.9
    beta2: float = 0.999
    batch_size: int = 12
    max_steps: int = 2000
    seed: int = 0

    k_steps: int = 2
    lambda_pre: float = 0.2
    lambda_abs: float = 0.1

    no_codes: bool = False
    fixed_assign: bool = False
    random_assign: bool = False
    student_forcing: bool = False
    single_set_loss: bool = False
    one2seq_baseline: bool = False

    eval_every: int = 200
    eval_docs: int = 200
    patience: int = 10

    def __post_init__(self):
        active = [f for f in ABLATION_FLAGS if getattr(self, f)]
        if len(active) > 1:
            raise ValueError(f"at most one ablation flag may be active, got {active}")
        if self.num_codes % 2 != 0:
            raise ValueError("num_codes must be even")
        if self.k_steps < 1:
            raise ValueError("k_steps must be >= 1")

    @property
    def active_ablation(self) -> str | None:
        for f in ABLATION_FLAGS:
            if getattr(self, f):
                return f
        return None

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def load_flat_config(path: str | Path) -> dict:
    """Parse the flat ``key = value`` run-configuration format."""
    values: dict = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key] = _coerce(value)
    return values


def _coerce(text: str):
    if text.lower() in ("true", "false"):
        return text.lower() == "true"
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text.strip("\"'")


def config_from_file(path: str | Path, **overrides) -> TrainConfig:
    values = load_flat_config(path)
    values.update(overrides)
    known = {f.name for f in fields(TrainConfig)}
    unknown = set(values) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return TrainConfig(**values)


@dataclass
class TrainResult:
    final_checkpoint: str
    best_checkpoint: str
    checkpoint_hash: str
    best_metric: float
    best_report: EvalReport | None
    steps_run: int
    counters: Counter = field(default_factory=Counter)
    log_path: str = ""


def _file_hash(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _build_dataset(cfg: TrainConfig, counters: Counter):
    samples = list(read_jsonl(cfg.train_path))
    streams = []
    for raw in samples:
        try:
            pre = preprocess(raw, insert_sep=cfg.insert_sep)
        except ValueError:
            continue
        streams.append(list(pre.source_tokens))
        for phrase in pre.keyphrase_tokens:
            streams.append(list(phrase))
    vocab = build_vocabulary(streams, cfg.vocab_cap)
    train = prepare_corpus(samples, vocab, insert_sep=cfg.insert_sep,
                           max_source_len=cfg.max_source_len, counters=counters)
    valid = []
    if cfg.valid_path:
        valid = prepare_corpus(read_jsonl(cfg.valid_path), vocab,
                               insert_sep=cfg.insert_sep,
                               max_source_len=cfg.max_source_len,
                               counters=counters)
    return vocab, train, valid


def _assign_batch(cfg: TrainConfig, model, batch, rng, counters):
    """Pick each code's target for every example in the batch."""
    docs = [s.doc for s in batch]
    if cfg.fixed_assign:
        return [assign_mod.assign_sequential(s.targets, cfg.num_codes, counters)
                for s in batch]
    if cfg.random_assign:
        return [assign_mod.assign_random(s.targets, cfg.num_codes, rng, counters)
                for s in batch]
    with torch.no_grad():
        memory, ext, mask = model.encode_batch(docs)
        dists, tokens = model.free_run(memory, ext, mask, cfg.k_steps)
    out = []
    for i, sample in enumerate(batch):
        roll = RolloutDistributions(dists=dists[i], tokens=tokens[i])
        if cfg.single_set_loss:
            out.append(assign_mod.assign_single_set(sample.targets, roll,
                                                    cfg.num_codes, counters))
        else:
            out.append(assign_mod.assign_targets(sample.targets, roll,
                                                 cfg.num_codes, counters))
    return out


def evaluate_model(model, samples, vocab, cfg: TrainConfig,
                   max_docs: int | None = None, seed: int = 0) -> EvalReport:
    """Predict over a sample list and score against its gold phrases."""
    model.eval()
    docs = samples[: max_docs or len(samples)]
    outcomes = []
    seq_budget = (cfg.num_codes // 2) * (cfg.max_phrase_len + 1)
    for sample in docs:
        if cfg.one2seq_baseline:
            decoded = predict_document_seq(model, sample.doc, vocab, seq_budget)
        else:
            decoded = predict_document(model, sample.doc, vocab, cfg.max_phrase_len)
        pred_present, pred_absent = split_prediction_phrases(decoded.phrases, sample.doc)
        gold_present = [list(t.tokens) for t in sample.targets.present]
        gold_absent = [list(t.tokens) for t in sample.targets.absent]
        classes = _code_classes(decoded, sample.doc)
        outcomes.append(DocumentOutcome(
            pred_present=pred_present, pred_absent=pred_absent,
            gold_present=gold_present, gold_absent=gold_absent,
            raw_count=decoded.raw_count, dup_count=decoded.dup_count,
            code_classes=classes,
        ))
    num_codes = 0 if cfg.one2seq_baseline else cfg.num_codes
    return evaluate_outcomes(outcomes, num_codes=num_codes, seed=seed)


def _code_classes(decoded, doc) -> list[str]:
    from .corpus import find_stemmed
    from .stemming import stem_tokens

    source_stems = stem_tokens(list(doc.tokens))
    classes = []
    for tokens in decoded.per_code_tokens:
        if tokens is None:
            classes.append("null")
        elif find_stemmed(source_stems, stem_tokens(tokens)) is not None:
            classes.append("present")
        else:
            classes.append("absent")
    return classes


def train(cfg: TrainConfig) -> TrainResult:
    configure_threads()
    torch.manual_seed(cfg.seed)
    rng = random.Random(cfg.seed)
    counters: Counter = Counter()

    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    vocab, train_set, valid_set = _build_dataset(cfg, counters)
    vocab.save(out_dir / "vocab.txt")
    if not train_set:
        raise ValueError("no usable training samples")

    model_cfg = ModelConfig(
        vocab_size=len(vocab), layers=cfg.layers, heads=cfg.heads,
        model_dim=cfg.model_dim, feedforward_dim=cfg.feedforward_dim,
        embed_dim=cfg.embed_dim, num_codes=cfg.num_codes,
        max_phrase_len=cfg.max_phrase_len, dropout=cfg.dropout,
        max_source_len=cfg.max_source_len,
    )
    model = SetTransformer(model_cfg)
    if cfg.no_codes or cfg.one2seq_baseline:
        with torch.no_grad():
            model.code_emb.weight.zero_()
        model.code_emb.weight.requires_grad_(False)

    one2seq_targets = {}
    if cfg.one2seq_baseline:
        one2seq_targets = {id(s): build_one2seq_target(s.targets) for s in train_set}

    loss_cfg = LossConfig(
        lambda_pre=cfg.lambda_pre, lambda_abs=cfg.lambda_abs,
        mode="single" if cfg.single_set_loss else "separate",
        forcing="student" if cfg.student_forcing else "teacher",
    )
    optimizer = torch.optim.Adam(
        (p for p in model.parameters() if p.requires_grad),
        lr=cfg.learning_rate, betas=(cfg.beta1, cfg.beta2),
    )

    log_path = out_dir / "train_log.csv"
    log_file = open(log_path, "w", newline="", encoding="utf-8")
    log = csv.writer(log_file)
    log.writerow(["step", "total_loss", "present_loss", "absent_loss",
                  "null_ratio_present", "null_ratio_absent"])

    eval_pool = valid_set if valid_set else train_set
    best_metric, best_report = float("-inf"), None
    best_path = out_dir / "best.ckpt"
    final_path = out_dir / "final.ckpt"
    evals_since_best = 0

    step = 0
    order: list[int] = []
    stop = False
    while step < cfg.max_steps and not stop:
        if not order:
            order = list(range(len(train_set)))
            rng.shuffle(order)
        take, order = order[: cfg.batch_size], order[cfg.batch_size:]
        batch = [train_set[i] for i in take]
        docs = [s.doc for s in batch]

        model.train()
        if cfg.one2seq_baseline:
            sequences = [one2seq_targets[id(s)] for s in batch]
            total = one2seq_loss(model, docs, sequences)
            row = [step, float(total), float(total), 0.0, 0.0, 0.0]
        else:
            assigned = _assign_batch(cfg, model, batch, rng, counters)
            breakdown = set_loss(model, docs, assigned, loss_cfg)
            total = breakdown.total
            row = [step, float(total), float(breakdown.present_half),
                   float(breakdown.absent_half), breakdown.null_ratio_present,
                   breakdown.null_ratio_absent]

        if not torch.isfinite(total):
            dump = out_dir / "divergence.json"
            dump.write_text(json.dumps({
                "step": step,
                "loss": float(total),
                "param_norms": {n: float(p.detach().norm())
                                for n, p in model.named_parameters()},
            }, indent=2))
            log_file.close()
            raise TrainingDiverged(f"non-finite loss at step {step}; dump at {dump}")

        optimizer.zero_grad(set_to_none=True)
        total.backward()
        optimizer.step()
        log.writerow(row)
        step += 1

        if step % cfg.eval_every == 0 or step == cfg.max_steps:
            report = evaluate_model(model, eval_pool, vocab, cfg,
                                    max_docs=cfg.eval_docs, seed=cfg.seed)
            metric = report.present.f1_m + report.absent.f1_m
            if metric > best_metric:
                best_metric, best_report = metric, report
                evals_since_best = 0
                save_checkpoint(model, best_path, vocab.content_hash(),
                                extra={"step": step, "metric": metric})
            else:
                evals_since_best += 1
                if evals_since_best >= cfg.patience:
                    stop = True

    save_checkpoint(model, final_path, vocab.content_hash(),
                    extra={"step": step, "config": cfg.to_dict()})
    if not best_path.exists():
        save_checkpoint(model, best_path, vocab.content_hash(), extra={"step": step})
    log_file.close()
    return TrainResult(
        final_checkpoint=str(final_path),
        best_checkpoint=str(best_path),
        checkpoint_hash=_file_hash(final_path),
        best_metric=best_metric if best_metric > float("-inf") else 0.0,
        best_report=best_report,
        steps_run=step,
        counters=counters,
        log_path=str(log_path),
    )


def sweep(param: str, values, base_cfg: TrainConfig, out_csv: str | Path):
    """One full training run per value; rows of F1@M, prediction counts and
    duplication ratio land in the CSV."""
    if param not in ("lambda", "k"):
        raise ValueError("sweep parameter must be 'lambda' or 'k'")
    if not values:
        raise ValueError("sweep needs at least one value")
    rows = [["value", "present_f1_m", "absent_f1_m", "avg_predictions",
             "avg_present_predictions", "avg_absent_predictions", "dup_ratio"]]
    for value in values:
        overrides = dict(base_cfg.to_dict())
        if param == "lambda":
            overrides["lambda_pre"] = float(value)
            overrides["lambda_abs"] = float(value)
        else:
            overrides["k_steps"] = int(value)
        overrides["out_dir"] = str(Path(base_cfg.out_dir) / f"sweep_{param}_{value}")
        result = train(TrainConfig(**overrides))
        report = result.best_report
        rows.append([
            value, report.present.f1_m, report.absent.f1_m,
            report.avg_present_predictions + report.avg_absent_predictions,
            report.avg_present_predictions, report.avg_absent_predictions,
            report.duplication_ratio,
        ])
    with open(out_csv, "w", newline="", encoding="utf-8") as handle:
        csv.writer(handle).writerows(rows)
    return rows
