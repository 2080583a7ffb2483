"""End-to-end orchestration: full runs, the ablation matrix, embedding export.

A run is pretrain -> stage 1 -> stage 2 -> greedy decode of the test
split -> metrics, with every artifact written under one output directory.
All stages are deterministic functions of (corpus, config, seed).
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .brain import BrainEncoder, desk_brain_config, paper_brain_config
from .dataset import load_corpus, normalize_channels, split_by_sentence
from .errors import ConfigError, IoError
from .lm import UNK, MiniLM, Vocabulary, desk_lm_config, paper_lm_config
from .metrics import LMEncoderProvider, MetricsReport, evaluate
from .refine import RefinementConfig, refine_sentences
from .trainer import TrainPlan, pretrain_lm, restore_params, stage1_align, stage2_finetune

log = logging.getLogger(__name__)

ABLATION_FLAGS = ("no_subject_layer", "no_alignment", "no_bte", "no_lm_finetune", "oracle_words")


@dataclass
class AblationFlags:
    no_subject_layer: bool = False
    no_alignment: bool = False
    no_bte: bool = False
    no_lm_finetune: bool = False
    oracle_words: bool = False

    def __post_init__(self):
        if self.oracle_words and (self.no_subject_layer or self.no_alignment or self.no_bte):
            raise ConfigError("oracle_words cannot be combined with brain-module ablation flags")

    def active(self) -> list:
        return [name for name in ABLATION_FLAGS if getattr(self, name)]


@dataclass
class RunConfig:
    corpus_dir: str
    out_dir: str
    preset: str = "desk"
    seed: int = 0
    normalize: bool = True
    split_ratios: tuple = (0.8, 0.1, 0.1)
    pretrain_epochs: int = -1  # -1 -> preset default
    stage1_epochs: int = -1
    stage2_epochs: int = -1
    lr_min: float = -1.0
    lr_max: float = -1.0
    decode_max_len: int = -1
    ablation: AblationFlags = field(default_factory=AblationFlags)
    refinement: RefinementConfig = field(default_factory=RefinementConfig)

    def __post_init__(self):
        if self.preset not in ("desk", "paper"):
            raise ConfigError(f"unknown preset {self.preset!r}")

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        doc = json.loads(text)
        ablation = AblationFlags(**doc.pop("ablation", {}))
        refinement = RefinementConfig(**doc.pop("refinement", {}))
        if "split_ratios" in doc:
            doc["split_ratios"] = tuple(doc["split_ratios"])
        return cls(ablation=ablation, refinement=refinement, **doc)

    def to_json(self) -> str:
        doc = asdict(self)
        doc["split_ratios"] = list(self.split_ratios)
        return json.dumps(doc, indent=2, sort_keys=True)


_PRESETS = {
    "desk": {
        "pretrain": dict(lr_min=0.02, lr_max=0.35, batch_size=8, epochs=6),
        "stage1": dict(lr_min=0.02, lr_max=0.35, batch_size=1, epochs=3),
        "stage2": dict(lr_min=0.02, lr_max=0.35, batch_size=8, epochs=6),
        "decode_margin": 4,
    },
    "paper": {
        "pretrain": dict(lr_min=5e-7, lr_max=5e-5, batch_size=8, epochs=25),
        "stage1": dict(lr_min=5e-7, lr_max=5e-5, batch_size=1, epochs=25),
        "stage2": dict(lr_min=5e-7, lr_max=5e-5, batch_size=8, epochs=25),
        "decode_margin": 8,
    },
}


@dataclass
class CorpusBundle:
    manifest: object
    records: list
    split: object
    train: list
    val: list
    test: list
    vocab: Vocabulary
    max_words: int
    max_targets: int


def unique_texts(records: list) -> list:
    """Unique sentence texts in first-appearance order."""
    texts = []
    seen = set()
    for r in records:
        if r.text not in seen:
            seen.add(r.text)
            texts.append(r.text)
    return texts


def prepare_corpus(config: RunConfig) -> CorpusBundle:
    corpus_dir = Path(config.corpus_dir)
    if not (corpus_dir / "manifest.json").exists():
        raise IoError(f"corpus not found at {corpus_dir}")
    manifest, records = load_corpus(corpus_dir)
    split = split_by_sentence(records, config.split_ratios, config.seed)
    train = split.select(records, "train")
    if config.normalize:
        records, _ = normalize_channels(records, train)
        train = split.select(records, "train")
    val = split.select(records, "val")
    test = split.select(records, "test")
    vocab = Vocabulary.build(unique_texts(train))
    max_words = max(r.num_words for r in records)
    max_targets = max(len(vocab.tokenize(r.text)) + 1 for r in records)
    return CorpusBundle(manifest, records, split, train, val, test, vocab, max_words, max_targets)


def build_models(config: RunConfig, bundle: CorpusBundle) -> tuple:
    channels = bundle.manifest.num_channels
    margin = _PRESETS[config.preset]["decode_margin"]
    decode_max_len = config.decode_max_len if config.decode_max_len > 0 else bundle.max_targets + margin
    positions = max(bundle.max_words, bundle.max_targets, decode_max_len) + 2
    if config.preset == "paper":
        brain_cfg = paper_brain_config(in_channels=channels, max_positions=positions)
        lm_cfg = paper_lm_config(len(bundle.vocab), max_positions=positions)
    else:
        brain_cfg = desk_brain_config(in_channels=channels, max_positions=positions)
        lm_cfg = desk_lm_config(len(bundle.vocab), max_positions=positions)
    return brain_cfg, lm_cfg, decode_max_len


def make_plan(config: RunConfig, stage: str, checkpoint_dir: str = "") -> TrainPlan:
    base = dict(_PRESETS[config.preset][stage])
    epochs_override = {"pretrain": config.pretrain_epochs, "stage1": config.stage1_epochs, "stage2": config.stage2_epochs}[stage]
    if epochs_override >= 0:
        base["epochs"] = epochs_override
    if config.lr_min >= 0:
        base["lr_min"] = config.lr_min
    if config.lr_max >= 0:
        base["lr_max"] = config.lr_max
    return TrainPlan(stage=stage, seed=config.seed, checkpoint_dir=checkpoint_dir, **base)


def oracle_input_fn(lm: MiniLM, vocab: Vocabulary):
    """Encoder inputs for the fixation-words oracle: embeddings of the words themselves."""

    def fn(record):
        ids = [vocab.index.get(w, UNK) for w, _ in record.words]
        return lm.embed_tokens(np.asarray(ids, dtype=np.int64))

    return fn


@dataclass
class RunResult:
    out_dir: Path
    metrics: MetricsReport
    metrics_refined: MetricsReport = None
    decoded: list = field(default_factory=list)  # dicts per test record
    timings: dict = field(default_factory=dict)


def execute_run(bundle: CorpusBundle, config: RunConfig, out_dir, flags: AblationFlags = None,
                pretrained_lm: dict = None) -> RunResult:
    """One full run under `flags`; reuses a pretrained LM snapshot if given."""
    flags = flags if flags is not None else config.ablation
    out_dir = Path(out_dir)
    ckpt_dir = out_dir / "checkpoints"
    logs_dir = out_dir / "logs"
    for d in (out_dir, ckpt_dir, logs_dir):
        d.mkdir(parents=True, exist_ok=True)
    timings = {}

    (out_dir / "run_config.json").write_text(config.to_json(), encoding="utf-8")
    bundle.vocab.save(out_dir / "vocab.txt")
    (out_dir / "split.json").write_text(bundle.split.to_json(), encoding="utf-8")

    brain_cfg, lm_cfg, decode_max_len = build_models(config, bundle)
    lm = MiniLM(lm_cfg, seed=config.seed)
    brain = BrainEncoder(brain_cfg, bundle.manifest.subjects, seed=config.seed)
    encode_kwargs = dict(use_subject_layer=not flags.no_subject_layer, use_bte=not flags.no_bte)

    # pretraining (identical across ablation variants, so a snapshot may be reused)
    t0 = time.time()
    if pretrained_lm is not None:
        restore_params(lm.params, pretrained_lm)
    else:
        plan = make_plan(config, "pretrain", str(ckpt_dir))
        _, log_pre, _ = pretrain_lm(unique_texts(bundle.train), lm, bundle.vocab, plan)
        log_pre.write(logs_dir / "pretrain.jsonl", logs_dir / "pretrain_summary.json")
    lm.save(ckpt_dir / "lm_pretrain.e2tp")
    timings["pretrain_s"] = time.time() - t0

    # stage 1: language alignment (skipped by the no_alignment ablation)
    t0 = time.time()
    brain.save(ckpt_dir / "brain_init.e2tp")
    if not flags.no_alignment:
        plan = make_plan(config, "stage1", str(ckpt_dir))
        _, log_s1, best_s1 = stage1_align(bundle.train, bundle.val, brain, lm, bundle.vocab, plan, **encode_kwargs)
        log_s1.write(logs_dir / "stage1.jsonl", logs_dir / "stage1_summary.json")
        if best_s1 is not None:
            restore_params(brain.params, best_s1)
    brain.save(ckpt_dir / "brain_stage1.e2tp")
    timings["stage1_s"] = time.time() - t0

    # stage 2: LM fine-tuning on frozen latent sequences
    t0 = time.time()
    input_fn = oracle_input_fn(lm, bundle.vocab) if flags.oracle_words else None
    plan = make_plan(config, "stage2", str(ckpt_dir))
    if flags.no_lm_finetune:
        plan = replace(plan, epochs=0, freeze=frozenset({"lm"}))
    _, log_s2, best_s2 = stage2_finetune(bundle.train, bundle.val, brain, lm, bundle.vocab, plan,
                                         encoder_input_fn=input_fn, **encode_kwargs)
    log_s2.write(logs_dir / "stage2.jsonl", logs_dir / "stage2_summary.json")
    if best_s2 is not None:
        restore_params(lm.params, best_s2)
    lm.save(ckpt_dir / "lm_stage2.e2tp")
    timings["stage2_s"] = time.time() - t0

    # greedy decode of the unseen test split
    t0 = time.time()
    decode_input = oracle_input_fn(lm, bundle.vocab) if flags.oracle_words else (
        lambda record: brain.encode(record, **encode_kwargs).Z)
    decoded = []
    for record in bundle.test:
        result = lm.greedy_decode(decode_input(record), decode_max_len, bundle.vocab)
        decoded.append({
            "sentence_id": record.sentence_id,
            "subject": record.subject,
            "task": record.task,
            "reference": record.text,
            "prediction": result.text,
        })
    timings["decode_s"] = time.time() - t0

    candidates = [d["prediction"] for d in decoded]
    references = [d["reference"] for d in decoded]
    subjects = [d["subject"] for d in decoded]
    provider = LMEncoderProvider(lm, bundle.vocab)
    report = evaluate(candidates, references, provider, subjects)
    (out_dir / "metrics.json").write_text(report.to_json(), encoding="utf-8")
    (out_dir / "metrics.txt").write_text(report.to_table("model") + "\n", encoding="utf-8")

    refined_report = None
    if config.refinement.enabled:
        refined = refine_sentences(candidates, config.refinement)
        for d, r in zip(decoded, refined):
            d["refined"] = r
        refined_report = evaluate(refined, references, provider, subjects)
        (out_dir / "metrics_refined.json").write_text(refined_report.to_json(), encoding="utf-8")
        (out_dir / "metrics_refined.txt").write_text(refined_report.to_table("model+refine") + "\n", encoding="utf-8")

    with open(out_dir / "decoded.jsonl", "w", encoding="utf-8") as f:
        for d in decoded:
            f.write(json.dumps(d, ensure_ascii=False) + "\n")
    with open(out_dir / "decoded.txt", "w", encoding="utf-8") as f:
        for d in decoded:
            f.write(f"[{d['task']} {d['subject']} {d['sentence_id']}]\n")
            f.write(f"  ground truth: {d['reference']}\n")
            f.write(f"  prediction:   {d['prediction']}\n")
            if "refined" in d:
                f.write(f"  refined:      {d['refined']}\n")
    (out_dir / "run_summary.json").write_text(
        json.dumps({"timings": timings, "flags": flags.active(), "num_test": len(decoded)}, indent=2, sort_keys=True),
        encoding="utf-8",
    )
    return RunResult(out_dir, report, refined_report, decoded, timings)


def run_pipeline(config: RunConfig) -> RunResult:
    bundle = prepare_corpus(config)
    return execute_run(bundle, config, config.out_dir)


def run_ablation(config: RunConfig) -> dict:
    """Base run plus one run per ablation flag; writes a comparison report."""
    if config.ablation.active():
        raise ConfigError("run_ablation expects a clean base config; flags are applied per variant")
    bundle = prepare_corpus(config)
    out_root = Path(config.out_dir)
    results = {}
    base = execute_run(bundle, config, out_root / "base", AblationFlags())
    results["base"] = base
    loaded = MiniLM.load(base.out_dir / "checkpoints" / "lm_pretrain.e2tp")
    pretrained = {name: t.data.copy() for name, t in loaded.params.items()}
    for flag in ABLATION_FLAGS:
        flags = AblationFlags(**{flag: True})
        results[flag] = execute_run(bundle, config, out_root / flag, flags, pretrained_lm=pretrained)
    _write_ablation_report(out_root, results)
    return results


def _write_ablation_report(out_root: Path, results: dict) -> None:
    base = results["base"].metrics
    doc = {}
    for name, res in results.items():
        m = res.metrics
        doc[name] = {
            "bleu": {str(k): v for k, v in m.bleu.items()},
            "rouge1": m.rouge1,
            "bertscore": m.bertscore,
            "delta_bleu1": m.bleu[1] - base.bleu[1],
            "delta_rouge1_f": m.rouge1["f"] - base.rouge1["f"],
            "delta_bertscore_f": m.bertscore["f"] - base.bertscore["f"],
        }
    (out_root / "ablation_report.json").write_text(json.dumps(doc, indent=2, sort_keys=True), encoding="utf-8")
    lines = [results["base"].metrics.to_table("base")]
    for name in ABLATION_FLAGS:
        lines.append(results[name].metrics._row(name, results[name].metrics.bleu,
                                                results[name].metrics.rouge1, results[name].metrics.bertscore))
    (out_root / "ablation_report.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def export_embeddings(brain: BrainEncoder, records: list, path, use_subject_layer: bool = True,
                      use_bte: bool = True) -> Path:
    """One CSV row per record: subject, sentence id, mean-pooled latent vector."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    dim = brain.config.out_dim
    header = "subject,sentence_id," + ",".join(f"z{i:03d}" for i in range(dim))
    lines = [header]
    for record in records:
        z = brain.encode(record, use_subject_layer=use_subject_layer, use_bte=use_bte).Z.mean(axis=0)
        lines.append(f"{record.subject},{record.sentence_id}," + ",".join(format(v, ".9g") for v in z))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
