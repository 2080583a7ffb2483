import json

import pytest

from eeg2text.cli import main


def run_cli(args):
    return main(args)


def test_synth_validate_split_run(tmp_path, capsys):
    corpus = tmp_path / "corpus"
    assert run_cli(["--out", str(corpus), "synth", "--num-subjects", "2", "--num-sentences", "10",
                    "--channels", "4", "--t-min", "3", "--t-max", "6"]) == 0
    assert (corpus / "manifest.json").exists()

    assert run_cli(["--corpus", str(corpus), "convert-validate"]) == 0
    out = capsys.readouterr().out
    assert "OK" in out

    split_file = tmp_path / "split.json"
    assert run_cli(["--corpus", str(corpus), "--out", str(split_file), "split"]) == 0
    doc = json.loads(split_file.read_text())
    assert len(doc["sentences"]) == 10


def test_missing_corpus_exit_code_2(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        run_cli(["--corpus", str(tmp_path / "absent"), "convert-validate"])
    assert exc.value.code == 2
    err = capsys.readouterr().err
    assert "absent" in err


def test_full_run_and_evaluate(tmp_path, capsys):
    corpus = tmp_path / "corpus"
    run_cli(["--out", str(corpus), "synth", "--num-subjects", "1", "--num-sentences", "10",
             "--channels", "4", "--t-min", "3", "--t-max", "5"])
    cfg = {
        "corpus_dir": str(corpus),
        "out_dir": str(tmp_path / "run"),
        "pretrain_epochs": 1,
        "stage1_epochs": 1,
        "stage2_epochs": 1,
    }
    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(json.dumps(cfg))
    assert run_cli(["--config", str(cfg_path), "run"]) == 0
    out_dir = tmp_path / "run"
    assert (out_dir / "metrics.json").exists()

    assert run_cli(["--out", str(tmp_path / "m.json"), "evaluate",
                    "--decoded", str(out_dir / "decoded.jsonl")]) == 0
    assert (tmp_path / "m.json").exists()


def test_export_embeddings_cli(tmp_path):
    corpus = tmp_path / "corpus"
    run_cli(["--out", str(corpus), "synth", "--num-subjects", "1", "--num-sentences", "8",
             "--channels", "4", "--t-min", "3", "--t-max", "5"])
    cfg = {"corpus_dir": str(corpus), "out_dir": str(tmp_path / "run"),
           "pretrain_epochs": 0, "stage1_epochs": 0, "stage2_epochs": 0}
    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(json.dumps(cfg))
    assert run_cli(["--config", str(cfg_path), "run"]) == 0
    brain_ckpt = tmp_path / "run" / "checkpoints" / "brain_stage1.e2tp"
    assert run_cli(["--corpus", str(corpus), "--out", str(tmp_path / "emb.csv"),
                    "export-embeddings", "--brain", str(brain_ckpt), "--split", "all"]) == 0
    lines = (tmp_path / "emb.csv").read_text().splitlines()
    assert len(lines) == 9
