"""Command-line interface.

Subcommands: synth, convert-validate, split, pretrain, stage1, stage2,
decode, evaluate, ablate, export-embeddings, refine, run.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .brain import BrainEncoder
from .dataset import SynthSpec, load_corpus, split_by_sentence, synthesize_corpus, write_corpus
from .errors import Eeg2TextError, IoError
from .lm import MiniLM, Vocabulary
from .metrics import LMEncoderProvider, OneHotProvider, evaluate
from .pipeline import (
    RunConfig,
    export_embeddings,
    make_plan,
    prepare_corpus,
    run_ablation,
    run_pipeline,
    unique_texts,
)
from .refine import RefinementConfig, refine_sentences
from .trainer import pretrain_lm, stage1_align, stage2_finetune


def _load_run_config(args, require_corpus=True) -> RunConfig:
    if args.config:
        config = RunConfig.from_json(Path(args.config).read_text(encoding="utf-8"))
    else:
        config = RunConfig(corpus_dir=args.corpus or "", out_dir=args.out or "run")
    if args.corpus:
        config.corpus_dir = args.corpus
    if args.out:
        config.out_dir = args.out
    if args.seed is not None:
        config.seed = args.seed
    if args.preset:
        config.preset = args.preset
    if require_corpus and not config.corpus_dir:
        raise IoError("no corpus directory given (use --corpus or a config file)")
    return config


def _check_corpus(path) -> Path:
    corpus = Path(path)
    if not (corpus / "manifest.json").exists():
        print(f"error: corpus not found at {corpus}", file=sys.stderr)
        sys.exit(2)
    return corpus


def cmd_synth(args) -> None:
    spec = SynthSpec(
        num_subjects=args.num_subjects,
        num_sentences=args.num_sentences,
        vocab_words=args.vocab_words,
        channels=args.channels,
        t_range=(args.t_min, args.t_max),
        seed=args.seed if args.seed is not None else 0,
        subject_gain_mode=args.subject_gains,
    )
    manifest, records = synthesize_corpus(spec)
    out = write_corpus(manifest, records, args.out)
    print(f"wrote {len(records)} records ({spec.num_sentences} sentences, "
          f"{spec.num_subjects} subjects, C={spec.channels}) to {out}")


def cmd_convert_validate(args) -> None:
    corpus = _check_corpus(args.corpus)
    manifest, records = load_corpus(corpus)
    words = sum(r.num_words for r in records)
    print(f"corpus {manifest.name!r}: {len(records)} records, {len(manifest.subjects)} subjects, "
          f"{manifest.num_channels} channels, {words} word segments — OK")


def cmd_split(args) -> None:
    corpus = _check_corpus(args.corpus)
    _, records = load_corpus(corpus)
    split = split_by_sentence(records, seed=args.seed if args.seed is not None else 0)
    counts = split.counts(records)
    out = Path(args.out or "split.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(split.to_json(), encoding="utf-8")
    print(f"records per split: train={counts['train']} val={counts['val']} test={counts['test']} -> {out}")


def cmd_run(args) -> None:
    config = _load_run_config(args)
    _check_corpus(config.corpus_dir)
    result = run_pipeline(config)
    print(result.metrics.to_table("model"))
    print(f"artifacts in {result.out_dir}")


def cmd_ablate(args) -> None:
    config = _load_run_config(args)
    _check_corpus(config.corpus_dir)
    results = run_ablation(config)
    print((Path(config.out_dir) / "ablation_report.txt").read_text(encoding="utf-8"))
    print(f"artifacts in {config.out_dir}")


def _bundle_and_models(config):
    from .pipeline import build_models

    bundle = prepare_corpus(config)
    brain_cfg, lm_cfg, decode_max_len = build_models(config, bundle)
    return bundle, brain_cfg, lm_cfg, decode_max_len


def cmd_pretrain(args) -> None:
    config = _load_run_config(args)
    _check_corpus(config.corpus_dir)
    bundle, _, lm_cfg, _ = _bundle_and_models(config)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lm = MiniLM(lm_cfg, seed=config.seed)
    texts = unique_texts(bundle.train)
    plan = make_plan(config, "pretrain", str(out))
    if args.epochs is not None:
        plan.epochs = args.epochs
    _, log, _ = pretrain_lm(texts, lm, bundle.vocab, plan)
    lm.save(out / "lm_pretrain.e2tp")
    bundle.vocab.save(out / "vocab.txt")
    log.write(out / "pretrain.jsonl", out / "pretrain_summary.json")
    print(f"pretrained LM ({len(log.steps)} steps) -> {out / 'lm_pretrain.e2tp'}")


def cmd_stage1(args) -> None:
    config = _load_run_config(args)
    _check_corpus(config.corpus_dir)
    bundle, brain_cfg, _, _ = _bundle_and_models(config)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lm = MiniLM.load(args.lm)
    brain = BrainEncoder(brain_cfg, bundle.manifest.subjects, seed=config.seed)
    plan = make_plan(config, "stage1", str(out))
    if args.epochs is not None:
        plan.epochs = args.epochs
    _, log, _ = stage1_align(bundle.train, bundle.val, brain, lm, bundle.vocab, plan)
    brain.save(out / "brain_stage1.e2tp")
    log.write(out / "stage1.jsonl", out / "stage1_summary.json")
    print(f"stage-1 alignment done ({len(log.steps)} steps) -> {out / 'brain_stage1.e2tp'}")


def cmd_stage2(args) -> None:
    config = _load_run_config(args)
    _check_corpus(config.corpus_dir)
    bundle, _, _, _ = _bundle_and_models(config)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lm = MiniLM.load(args.lm)
    brain = BrainEncoder.load(args.brain)
    plan = make_plan(config, "stage2", str(out))
    if args.epochs is not None:
        plan.epochs = args.epochs
    _, log, best = stage2_finetune(bundle.train, bundle.val, brain, lm, bundle.vocab, plan)
    if best is not None:
        from .trainer import restore_params

        restore_params(lm.params, best)
    lm.save(out / "lm_stage2.e2tp")
    log.write(out / "stage2.jsonl", out / "stage2_summary.json")
    print(f"stage-2 fine-tuning done ({len(log.steps)} steps) -> {out / 'lm_stage2.e2tp'}")


def cmd_decode(args) -> None:
    config = _load_run_config(args)
    _check_corpus(config.corpus_dir)
    bundle, _, _, decode_max_len = _bundle_and_models(config)
    lm = MiniLM.load(args.lm)
    brain = BrainEncoder.load(args.brain)
    records = {"train": bundle.train, "val": bundle.val, "test": bundle.test}[args.split]
    out = Path(args.out or "decoded.jsonl")
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as f:
        for record in records:
            res = lm.greedy_decode(brain.encode(record).Z, decode_max_len, bundle.vocab)
            f.write(json.dumps({
                "sentence_id": record.sentence_id,
                "subject": record.subject,
                "task": record.task,
                "reference": record.text,
                "prediction": res.text,
            }, ensure_ascii=False) + "\n")
    print(f"decoded {len(records)} records -> {out}")


def _read_decoded(path) -> list:
    rows = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            rows.append(json.loads(line))
    return rows


def cmd_evaluate(args) -> None:
    rows = _read_decoded(args.decoded)
    candidates = [r["prediction"] for r in rows]
    references = [r["reference"] for r in rows]
    subjects = [r.get("subject", "?") for r in rows]
    if args.lm and args.vocab:
        provider = LMEncoderProvider(MiniLM.load(args.lm), Vocabulary.load(args.vocab))
    else:
        provider = OneHotProvider(candidates + references)
    report = evaluate(candidates, references, provider, subjects)
    out = Path(args.out or "metrics.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report.to_json(), encoding="utf-8")
    print(report.to_table("decoded"))
    print(f"report -> {out}")


def cmd_export_embeddings(args) -> None:
    config = _load_run_config(args)
    _check_corpus(config.corpus_dir)
    bundle, _, _, _ = _bundle_and_models(config)
    brain = BrainEncoder.load(args.brain)
    records = {"train": bundle.train, "val": bundle.val, "test": bundle.test, "all": bundle.records}[args.split]
    out = export_embeddings(brain, records, args.out or "embeddings.csv")
    print(f"exported {len(records)} rows -> {out}")


def cmd_refine(args) -> None:
    rows = _read_decoded(args.decoded)
    cfg = RefinementConfig(enabled=True, endpoint_url=args.endpoint, api_key_env=args.api_key_env,
                           model_name=args.model)
    refined = refine_sentences([r["prediction"] for r in rows], cfg)
    for row, text in zip(rows, refined):
        row["refined"] = text
    out = Path(args.out or "refined.jsonl")
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row, ensure_ascii=False) + "\n")
    print(f"refined {len(rows)} sentences -> {out}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eeg2text", description=__doc__)
    parser.add_argument("--config", help="JSON run configuration", default="")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--preset", choices=["desk", "paper"], default="")
    parser.add_argument("--out", default="")
    parser.add_argument("--corpus", default="")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--num-subjects", type=int, default=2, dest="num_subjects")
    p.add_argument("--num-sentences", type=int, default=20, dest="num_sentences")
    p.add_argument("--vocab-words", type=int, default=24, dest="vocab_words")
    p.add_argument("--channels", type=int, default=8)
    p.add_argument("--t-min", type=int, default=8, dest="t_min")
    p.add_argument("--t-max", type=int, default=16, dest="t_max")
    p.add_argument("--subject-gains", action="store_true", dest="subject_gains")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("convert-validate", help="load and validate a corpus directory")
    p.set_defaults(fn=cmd_convert_validate)

    p = sub.add_parser("split", help="compute the sentence-level split")
    p.set_defaults(fn=cmd_split)

    p = sub.add_parser("pretrain", help="pretrain the mini LM on train texts")
    p.add_argument("--epochs", type=int, default=None)
    p.set_defaults(fn=cmd_pretrain)

    p = sub.add_parser("stage1", help="align the brain encoder to LM embeddings")
    p.add_argument("--lm", required=True, help="pretrained LM checkpoint")
    p.add_argument("--epochs", type=int, default=None)
    p.set_defaults(fn=cmd_stage1)

    p = sub.add_parser("stage2", help="fine-tune the LM on latent brain sequences")
    p.add_argument("--lm", required=True)
    p.add_argument("--brain", required=True)
    p.add_argument("--epochs", type=int, default=None)
    p.set_defaults(fn=cmd_stage2)

    p = sub.add_parser("decode", help="greedy-decode a split")
    p.add_argument("--lm", required=True)
    p.add_argument("--brain", required=True)
    p.add_argument("--split", choices=["train", "val", "test"], default="test")
    p.set_defaults(fn=cmd_decode)

    p = sub.add_parser("evaluate", help="score a decoded.jsonl file")
    p.add_argument("--decoded", required=True)
    p.add_argument("--lm", default="")
    p.add_argument("--vocab", default="")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("ablate", help="run the ablation matrix")
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("export-embeddings", help="export mean-pooled latent vectors to CSV")
    p.add_argument("--brain", required=True)
    p.add_argument("--split", choices=["train", "val", "test", "all"], default="all")
    p.set_defaults(fn=cmd_export_embeddings)

    p = sub.add_parser("refine", help="refine decoded sentences through a chat-completions API")
    p.add_argument("--decoded", required=True)
    p.add_argument("--endpoint", required=True)
    p.add_argument("--api-key-env", default="OPENAI_API_KEY", dest="api_key_env")
    p.add_argument("--model", default="gpt-4")
    p.set_defaults(fn=cmd_refine)

    p = sub.add_parser("run", help="full pipeline: pretrain, stage1, stage2, decode, evaluate")
    p.set_defaults(fn=cmd_run)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        args.fn(args)
    except Eeg2TextError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
