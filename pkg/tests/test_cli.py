import json
import subprocess
import sys

import pytest
import yaml

from rnnt_toolkit.cli import main

SMALL_MODEL = {"encoder": {"depth": 2, "width": 8}, "decoder": {"depth": 2, "width": 8}, "joint_dim": 8}


def write_config(path, kind, steps=3, **extra):
    data = {"seed": 0, "model": SMALL_MODEL, "optimizer": {"learning_rate": 0.05, "batch_size": 4, "steps": steps}}
    if kind == "ctc":
        data["ctc"] = {"taps": [{"depth": 1, "family": "phoneme"}, {"depth": 2, "family": "grapheme"}]}
    data.update(extra)
    path.write_text(yaml.safe_dump(data), encoding="utf-8")
    return str(path)


@pytest.fixture
def task(tmp_path):
    out = tmp_path / "task"
    args = ["--run-dir", str(tmp_path / "gen"), "gen-task", "--out", str(out), "--mode", "text", "--num-utts", "20"]
    assert main(args + ["--sound-classes", "4", "--lm-sentences", "10", "--seed", "3", "--csv"]) == 0
    return out


def test_gen_task_writes_every_file_and_a_manifest(task, tmp_path):
    names = {p.name for p in task.iterdir()}
    for split in ("train", "dev", "test"):
        assert {f"{split}.feats", f"{split}.tsv", f"{split}.csv"} <= names
    assert {"task.yaml", "vocab.txt", "lm_corpus.txt", "counts.tsv"} <= names
    manifest = json.loads((tmp_path / "gen" / "manifest.json").read_text())
    entry = manifest["gen-task"]
    assert entry["seed"] == 3 and entry["task"]["sound_classes"] == 4
    assert str(task / "train.feats") in entry["outputs"]


def train_all(task, run_dir, cfg_dir):
    cfg_dir.mkdir(exist_ok=True)
    base = ["--run-dir", str(run_dir), "train", "--task", str(task)]
    assert main(base + ["--stage", "ctc", "--config", write_config(cfg_dir / "ctc.yaml", "ctc")]) == 0
    assert main(base + ["--stage", "lm", "--config", write_config(cfg_dir / "lm.yaml", "lm")]) == 0
    transfer = {"encoder": str(run_dir / "ctc.ckpt"), "decoder": str(run_dir / "lm.ckpt")}
    rnnt = write_config(cfg_dir / "rnnt.yaml", "rnnt", transfer=transfer)
    assert main(base + ["--stage", "rnnt", "--config", rnnt]) == 0


def test_three_stage_training_and_evaluation(task, tmp_path, capsys):
    run = tmp_path / "run"
    train_all(task, run, tmp_path / "cfg")
    assert "transferred" in capsys.readouterr().out
    assert json.loads((run / "transfer.json").read_text())["encoder/lstm1/kernel"] == "transferred"
    assert main(["--run-dir", str(run), "eval", "--checkpoint", str(run / "rnnt.ckpt"), "--task", str(task), "--greedy"]) == 0
    assert "WER" in capsys.readouterr().out
    report = json.loads((run / "eval-dev.json").read_text())
    assert {"wer", "substitutions", "insertions", "deletions", "utterances"} <= set(report)
    manifest = json.loads((run / "manifest.json").read_text())
    assert {"ctc", "lm", "rnnt", "eval-dev"} <= set(manifest)


def test_cli_training_is_deterministic(task, tmp_path):
    train_all(task, tmp_path / "a", tmp_path / "cfg")
    train_all(task, tmp_path / "b", tmp_path / "cfg")
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()


def test_stage_conflict_is_rejected(task, tmp_path):
    cfg = write_config(tmp_path / "c.yaml", "rnnt", **{"stage": "lm"})
    with pytest.raises(SystemExit):
        main(["--run-dir", str(tmp_path), "train", "--stage", "rnnt", "--config", cfg, "--task", str(task)])


@pytest.fixture
def trained(task, tmp_path):
    run = tmp_path / "trained"
    cfg = write_config(tmp_path / "rnnt.yaml", "rnnt", steps=2)
    assert main(["--run-dir", str(run), "train", "--stage", "rnnt", "--config", cfg, "--task", str(task)]) == 0
    return run / "rnnt.ckpt"


@pytest.mark.parametrize("suffix", [".feats", ".csv"])
def test_decode_writes_nbest_tsv(task, trained, tmp_path, suffix):
    out = tmp_path / "hyps.tsv"
    args = ["--run-dir", str(tmp_path), "decode", "--checkpoint", str(trained), "--vocab", str(task / "vocab.txt")]
    assert main(args + ["--features", str(task / f"dev{suffix}"), "--nbest", "2", "--beam", "3", "--out", str(out)]) == 0
    rows = [ln.split("\t") for ln in out.read_text().splitlines()]
    uids = [ln.split("\t")[0] for ln in (task / "dev.tsv").read_text().splitlines()]
    assert sorted(set(r[0] for r in rows)) == sorted(uids)
    assert all(len(r) == 3 and float(r[1]) <= 0.0 for r in rows)


def test_decode_stream_prints_one_partial_per_frame(task, trained, tmp_path, capsys):
    args = ["--run-dir", str(tmp_path), "decode", "--checkpoint", str(trained), "--features", str(task / "test.feats"), "--stream"]
    assert main(args) == 0
    rows = [ln.split("\t") for ln in capsys.readouterr().out.splitlines()]
    first = [r for r in rows if r[0] == rows[0][0]]
    assert [int(r[1]) for r in first] == list(range(len(first)))


def test_decode_rejects_a_mismatched_vocab(task, trained, tmp_path):
    other = tmp_path / "other.vocab"
    assert main(["--run-dir", str(tmp_path), "wordpiece", "train", "--counts", str(task / "counts.tsv"), "--size", "14", "--out", str(other), "--graphemes", "abcdefghij"]) == 0
    args = ["--run-dir", str(tmp_path), "decode", "--checkpoint", str(trained), "--vocab", str(other), "--features", str(task / "dev.feats")]
    with pytest.raises(SystemExit):
        main(args)


def test_wordpiece_train_and_segment(task, tmp_path, capsys, monkeypatch):
    vocab = tmp_path / "wp.vocab"
    assert main(["--run-dir", str(tmp_path), "wordpiece", "train", "--counts", str(task / "counts.tsv"), "--size", "16", "--out", str(vocab), "--graphemes", "abcdefghij"]) == 0
    capsys.readouterr()
    sentence = (task / "train.tsv").read_text().splitlines()[0].split("\t")[1]
    monkeypatch.setattr(sys, "stdin", __import__("io").StringIO(sentence + "\n"))
    assert main(["--run-dir", str(tmp_path), "wordpiece", "segment", "--vocab", str(vocab)]) == 0
    pieces = capsys.readouterr().out.split()
    assert all(p.startswith("<") and p.endswith(">") for p in pieces)
    assert "".join(" " if p == "<space>" else p[1:-1] for p in pieces) == sentence


def test_lm_train_and_perplexity(task, tmp_path, capsys):
    ckpt = tmp_path / "lm.ckpt"
    cfg = write_config(tmp_path / "lm.yaml", "lm", steps=5)
    args = ["--run-dir", str(tmp_path), "lm", "train", "--corpus", str(task / "lm_corpus.txt"), "--vocab", str(task / "vocab.txt")]
    assert main(args + ["--config", cfg, "--out", str(ckpt)]) == 0
    assert main(["--run-dir", str(tmp_path), "lm", "ppl", "--checkpoint", str(ckpt), "--corpus", str(task / "lm_corpus.txt")]) == 0
    ppl = float(capsys.readouterr().out.split()[-1])
    assert ppl > 1.0
    assert json.loads((tmp_path / "manifest.json").read_text())["lm-ppl"]["perplexity"] == pytest.approx(ppl, rel=1e-4)


def test_module_entry_point_runs_in_a_subprocess(tmp_path):
    out = subprocess.run(
        [sys.executable, "-m", "rnnt_toolkit", "--run-dir", str(tmp_path), "gen-task", "--out", str(tmp_path / "t"), "--num-utts", "10"],
        capture_output=True,
        text=True,
        check=True,
    )
    assert "8/1/1" in out.stdout


def test_run_dir_defaults_to_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("RNNT_RUN_DIR", str(tmp_path / "env"))
    assert main(["gen-task", "--out", str(tmp_path / "t"), "--num-utts", "10"]) == 0
    assert (tmp_path / "env" / "manifest.json").exists()
