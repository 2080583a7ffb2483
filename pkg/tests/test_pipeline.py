import json

import numpy as np
import pytest

from eeg2text.brain import BrainEncoder, desk_brain_config
from eeg2text.dataset import SynthSpec, synthesize_corpus, write_corpus
from eeg2text.errors import ConfigError
from eeg2text.pipeline import (
    AblationFlags,
    RunConfig,
    execute_run,
    export_embeddings,
    prepare_corpus,
    run_pipeline,
)


@pytest.fixture(scope="module")
def small_corpus_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    spec = SynthSpec(num_subjects=2, num_sentences=12, vocab_words=14, channels=4,
                     t_range=(4, 8), sentence_len_range=(2, 4), seed=0)
    manifest, records = synthesize_corpus(spec)
    write_corpus(manifest, records, root)
    return root


def fast_config(corpus_dir, out_dir, **kw):
    return RunConfig(corpus_dir=str(corpus_dir), out_dir=str(out_dir), seed=0,
                     pretrain_epochs=2, stage1_epochs=1, stage2_epochs=2, **kw)


def test_run_pipeline_artifacts(small_corpus_dir, tmp_path):
    result = run_pipeline(fast_config(small_corpus_dir, tmp_path / "run"))
    out = result.out_dir
    for name in ("run_config.json", "vocab.txt", "split.json", "metrics.json", "metrics.txt",
                 "decoded.jsonl", "decoded.txt", "run_summary.json"):
        assert (out / name).exists(), name
    for ckpt in ("lm_pretrain.e2tp", "brain_init.e2tp", "brain_stage1.e2tp", "lm_stage2.e2tp"):
        assert (out / "checkpoints" / ckpt).exists(), ckpt
    for log in ("pretrain", "stage1", "stage2"):
        steps = [json.loads(l) for l in (out / "logs" / f"{log}.jsonl").read_text().splitlines()]
        assert steps and {"step", "epoch", "lr", "loss"} <= set(steps[0])
        assert (out / "logs" / f"{log}_summary.json").exists()
    rows = [json.loads(l) for l in (out / "decoded.jsonl").read_text().splitlines()]
    assert len(rows) == len(result.decoded) > 0
    assert all({"reference", "prediction", "subject"} <= set(r) for r in rows)


def test_ablation_base_equals_run_pipeline(small_corpus_dir, tmp_path):
    from eeg2text.pipeline import run_ablation

    config = fast_config(small_corpus_dir, tmp_path / "abl")
    run_ablation(config)
    plain = run_pipeline(fast_config(small_corpus_dir, tmp_path / "plain"))
    base_metrics = (tmp_path / "abl" / "base" / "metrics.json").read_bytes()
    assert base_metrics == (plain.out_dir / "metrics.json").read_bytes()


def test_run_pipeline_deterministic(small_corpus_dir, tmp_path):
    a = run_pipeline(fast_config(small_corpus_dir, tmp_path / "a"))
    b = run_pipeline(fast_config(small_corpus_dir, tmp_path / "b"))
    assert (a.out_dir / "metrics.json").read_bytes() == (b.out_dir / "metrics.json").read_bytes()
    assert (a.out_dir / "decoded.jsonl").read_bytes() == (b.out_dir / "decoded.jsonl").read_bytes()
    assert (a.out_dir / "checkpoints/lm_stage2.e2tp").read_bytes() == (b.out_dir / "checkpoints/lm_stage2.e2tp").read_bytes()


def test_subject_layer_noop_when_rs_ones(small_corpus_dir, tmp_path):
    # with stage 1 skipped, r_s stays at ones, so ablating the subject layer changes nothing
    bundle = prepare_corpus(fast_config(small_corpus_dir, tmp_path / "x"))
    cfg = fast_config(small_corpus_dir, tmp_path / "x")
    a = execute_run(bundle, cfg, tmp_path / "keep", AblationFlags(no_alignment=True))
    b = execute_run(bundle, cfg, tmp_path / "drop", AblationFlags(no_alignment=True, no_subject_layer=True))
    assert (a.out_dir / "metrics.json").read_bytes() == (b.out_dir / "metrics.json").read_bytes()


def test_oracle_flag_conflicts():
    with pytest.raises(ConfigError):
        AblationFlags(oracle_words=True, no_bte=True)


def test_run_ablation_requires_clean_base(small_corpus_dir, tmp_path):
    from eeg2text.pipeline import run_ablation

    config = fast_config(small_corpus_dir, tmp_path / "abl")
    config.ablation = AblationFlags(no_bte=True)
    with pytest.raises(ConfigError):
        run_ablation(config)


def test_variants_touch_only_their_mechanism(small_corpus_dir, tmp_path):
    # the ablated component's parameters stay at their initial values
    from eeg2text.tensorio import load_tensors

    bundle = prepare_corpus(fast_config(small_corpus_dir, tmp_path / "x"))
    cfg = fast_config(small_corpus_dir, tmp_path / "x")

    res = execute_run(bundle, cfg, tmp_path / "nosubj", AblationFlags(no_subject_layer=True))
    _, tensors = load_tensors(res.out_dir / "checkpoints" / "brain_stage1.e2tp")
    assert (tensors["subject.table"] == 1.0).all()

    res = execute_run(bundle, cfg, tmp_path / "nobte", AblationFlags(no_bte=True))
    _, init = load_tensors(res.out_dir / "checkpoints" / "brain_init.e2tp")
    _, after = load_tensors(res.out_dir / "checkpoints" / "brain_stage1.e2tp")
    for name in after:
        if name.startswith("bte."):
            assert np.array_equal(after[name], init[name]), name
        if name.startswith(("fc.", "conv.")):
            assert not np.array_equal(after[name], init[name]), name

    res = execute_run(bundle, cfg, tmp_path / "nolm", AblationFlags(no_lm_finetune=True))
    pre = (res.out_dir / "checkpoints" / "lm_pretrain.e2tp").read_bytes()
    post = (res.out_dir / "checkpoints" / "lm_stage2.e2tp").read_bytes()
    assert pre == post


def test_refinement_reports_both(small_corpus_dir, tmp_path, monkeypatch):
    import eeg2text.pipeline as pl

    monkeypatch.setattr(pl, "refine_sentences", lambda decoded, cfg: [d.upper() for d in decoded])
    config = fast_config(small_corpus_dir, tmp_path / "ref")
    config.refinement.enabled = True
    config.refinement.endpoint_url = "http://unused"
    result = run_pipeline(config)
    assert (result.out_dir / "metrics.json").exists()
    assert (result.out_dir / "metrics_refined.json").exists()
    rows = [json.loads(l) for l in (result.out_dir / "decoded.jsonl").read_text().splitlines()]
    assert all(r["refined"] == r["prediction"].upper() for r in rows)
    # references untouched
    base = json.loads((result.out_dir / "metrics.json").read_text())
    assert base["num_pairs"] == len(rows)


def test_export_embeddings(small_corpus_dir, tmp_path):
    config = fast_config(small_corpus_dir, tmp_path / "e")
    bundle = prepare_corpus(config)
    brain = BrainEncoder(desk_brain_config(in_channels=4, max_positions=16), bundle.manifest.subjects, seed=0)
    path = export_embeddings(brain, bundle.records, tmp_path / "emb.csv")
    lines = path.read_text().splitlines()
    assert len(lines) == len(bundle.records) + 1
    header = lines[0].split(",")
    assert header[:2] == ["subject", "sentence_id"]
    assert len(header) == 2 + brain.config.out_dim
    again = export_embeddings(brain, bundle.records, tmp_path / "emb2.csv")
    assert again.read_bytes() == path.read_bytes()


def test_run_config_json_roundtrip(small_corpus_dir, tmp_path):
    config = fast_config(small_corpus_dir, tmp_path / "r")
    config.ablation = AblationFlags(no_bte=True)
    doc = config.to_json()
    again = RunConfig.from_json(doc)
    assert again.to_json() == doc
    assert again.ablation.no_bte


def test_missing_corpus_raises(tmp_path):
    from eeg2text.errors import IoError

    with pytest.raises(IoError, match="not found"):
        prepare_corpus(RunConfig(corpus_dir=str(tmp_path / "nope"), out_dir=str(tmp_path / "o")))
