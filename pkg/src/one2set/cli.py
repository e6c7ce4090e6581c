"""Command-line entry points: train, predict, eval, inspect-assignment,
sweep and synth.  Run configuration lives in flat ``key = value`` files;
every path and seed is explicit.  ONE2SET_THREADS caps torch parallelism.
"""

from __future__ import annotations

import argparse
import csv
import sys
from collections import Counter
from pathlib import Path

import torch

from .assignment import (
    RolloutDistributions,
    assign_targets,
    dump_assignment_csv,
    matching_cost,
)
from .checkpoint import load_checkpoint
from .corpus import NULL_TOKEN, Vocabulary, decode_extended, prepare_corpus, read_jsonl
from .decoding import (
    predict_document,
    predict_document_seq,
    prediction_record,
    read_predictions_jsonl,
    write_predictions_jsonl,
)
from .evaluation import (
    DocumentOutcome,
    code_usage_csv_rows,
    evaluate_outcomes,
    format_report,
    report_csv_rows,
    split_gold_phrases,
)
from .synthetic import SyntheticSpec, generate_synthetic, write_jsonl
from .training import (
    TrainConfig,
    config_from_file,
    configure_threads,
    load_flat_config,
    sweep,
    train,
)


def _add_train(sub):
    p = sub.add_parser("train", help="train a model from a flat config file")
    p.add_argument("--config", required=True)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key")
    p.set_defaults(func=_cmd_train)


def _parse_overrides(pairs):
    from .training import _coerce

    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise SystemExit(f"--set expects KEY=VALUE, got {pair!r}")
        key, value = pair.split("=", 1)
        out[key.strip()] = _coerce(value.strip())
    return out


def _cmd_train(args):
    cfg = config_from_file(args.config, **_parse_overrides(args.set))
    result = train(cfg)
    print(f"steps run: {result.steps_run}")
    print(f"final checkpoint: {result.final_checkpoint}")
    print(f"best checkpoint:  {result.best_checkpoint}")
    print(f"checkpoint hash:  {result.checkpoint_hash}")
    if result.best_report is not None:
        print(format_report(result.best_report))


def _load_model_and_vocab(ckpt_path: str, vocab_path: str):
    vocab = Vocabulary.load(vocab_path)
    model, header = load_checkpoint(ckpt_path, expected_vocab_hash=vocab.content_hash())
    model.eval()
    return model, vocab, header


def _add_predict(sub):
    p = sub.add_parser("predict", help="generate keyphrase sets for a JSONL file")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--max-len", type=int, default=0,
                   help="per-phrase budget; 0 uses the model's configured cap")
    p.set_defaults(func=_cmd_predict)


def _cmd_predict(args):
    model, vocab, header = _load_model_and_vocab(args.ckpt, args.vocab)
    train_cfg = header.get("extra", {}).get("train_config", {})
    seq_mode = bool(train_cfg.get("one2seq_baseline"))
    max_len = args.max_len or model.cfg.max_phrase_len
    samples = prepare_corpus(read_jsonl(args.input), vocab,
                             insert_sep=bool(train_cfg.get("insert_sep")),
                             max_source_len=model.cfg.max_source_len)
    records = []
    for sample in samples:
        if seq_mode:
            budget = (model.cfg.num_codes // 2) * (model.cfg.max_phrase_len + 1)
            decoded = predict_document_seq(model, sample.doc, vocab, budget)
        else:
            decoded = predict_document(model, sample.doc, vocab, max_len)
        records.append(prediction_record(sample.sample_id, decoded, sample.doc))
    write_predictions_jsonl(args.output, records)
    print(f"wrote {len(records)} prediction records to {args.output}")


def _add_eval(sub):
    p = sub.add_parser("eval", help="score predictions against gold keyphrases")
    p.add_argument("--pred", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--csv", default="", help="optional CSV output path")
    p.add_argument("--code-csv", default="",
                   help="optional per-code usage CSV (needs code provenance)")
    p.add_argument("--max-source-len", type=int, default=0,
                   help="truncate gold sources like training did (0 = off)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_eval)


def _cmd_eval(args):
    from .corpus import dedup_key, preprocess

    golds = {}
    seen = set()
    for i, raw in enumerate(read_jsonl(args.gold)):
        try:
            pre = preprocess(raw)
        except ValueError:
            continue
        key = dedup_key(pre)
        if key in seen:
            continue
        seen.add(key)
        tokens = pre.source_tokens
        if args.max_source_len:
            tokens = tokens[: args.max_source_len]
        golds[str(i)] = split_gold_phrases(tokens, pre.keyphrase_tokens)

    outcomes = []
    for rec in read_predictions_jsonl(args.pred):
        gold = golds.get(str(rec["id"]))
        if gold is None:
            raise SystemExit(f"prediction id {rec['id']} not found in gold file")
        outcomes.append(DocumentOutcome(
            pred_present=[p.split() for p in rec["present_pred"]],
            pred_absent=[p.split() for p in rec["absent_pred"]],
            gold_present=gold[0],
            gold_absent=gold[1],
            raw_count=rec.get("raw_count", 0),
            dup_count=rec.get("dup_count", 0),
        ))
    report = evaluate_outcomes(outcomes, seed=args.seed)
    print(format_report(report))
    if args.csv:
        with open(args.csv, "w", newline="", encoding="utf-8") as handle:
            csv.writer(handle).writerows(report_csv_rows(report))
    if args.code_csv and report.code_usage:
        with open(args.code_csv, "w", newline="", encoding="utf-8") as handle:
            csv.writer(handle).writerows(code_usage_csv_rows(report))


def _add_inspect(sub):
    p = sub.add_parser("inspect-assignment",
                       help="dump rollout tokens, assigned targets and costs")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--limit", type=int, default=10)
    p.set_defaults(func=_cmd_inspect)


def _cmd_inspect(args):
    model, vocab, _ = _load_model_and_vocab(args.ckpt, args.vocab)
    samples = prepare_corpus(read_jsonl(args.input), vocab,
                             max_source_len=model.cfg.max_source_len)
    rows = []
    for sample in samples[: args.limit]:
        with torch.no_grad():
            memory, ext, mask = model.encode_batch([sample.doc])
            dists, tokens = model.free_run(memory, ext, mask, args.k)
        roll = RolloutDistributions(dists=dists[0], tokens=tokens[0])
        assigned = assign_targets(sample.targets, roll, model.cfg.num_codes)
        for code in range(model.cfg.num_codes):
            rolled = " ".join(decode_extended(tokens[0, code].tolist(), sample.doc, vocab))
            target = assigned.per_code[code]
            surface = NULL_TOKEN if target.is_null else " ".join(target.tokens)
            cost = matching_cost(target, roll.dists[code])
            rows.append([sample.sample_id, code, rolled, surface, cost])
    dump_assignment_csv(args.output, rows)
    print(f"wrote {len(rows)} assignment rows to {args.output}")


def _add_sweep(sub):
    p = sub.add_parser("sweep", help="train once per parameter value")
    p.add_argument("--config", required=True)
    p.add_argument("--param", required=True, choices=["lambda", "k"])
    p.add_argument("--values", required=True,
                   help="comma-separated values, e.g. 0,0.1,0.2,0.5,1.0")
    p.add_argument("--output", required=True)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.set_defaults(func=_cmd_sweep)


def _cmd_sweep(args):
    cfg = config_from_file(args.config, **_parse_overrides(args.set))
    raw_values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not raw_values:
        raise SystemExit("sweep needs at least one value")
    values = [float(v) if args.param == "lambda" else int(v) for v in raw_values]
    rows = sweep(args.param, values, cfg, args.output)
    for row in rows:
        print(",".join(str(c) for c in row))


def _add_synth(sub):
    p = sub.add_parser("synth", help="generate a synthetic JSONL corpus")
    p.add_argument("--spec", required=True, help="flat key = value spec file")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth)


def _cmd_synth(args):
    values = load_flat_config(args.spec)
    for key in ("doc_len_range", "phrases_range"):
        if key in values and isinstance(values[key], str):
            lo, hi = values[key].split(",")
            values[key] = (int(lo), int(hi))
    spec = SyntheticSpec(**values)
    samples = generate_synthetic(spec)
    write_jsonl(samples, args.out)
    print(f"wrote {len(samples)} documents to {args.out}")


def main(argv=None) -> int:
    configure_threads()
    parser = argparse.ArgumentParser(
        prog="one2set",
        description="Keyphrase set prediction: training, inference and evaluation",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for add in (_add_train, _add_predict, _add_eval, _add_inspect, _add_sweep, _add_synth):
        add(sub)
    args = parser.parse_args(argv)
    args.func(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
