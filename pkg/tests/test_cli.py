import csv
import json
import os
import shutil

import pytest

from kgae.checkpoint import checkpoint_digest
from kgae.cli import SWEEP_HEADER, main

TINY_FLAGS = ["--d", "8", "--heads", "2", "--n-kg", "6", "--n-bank", "4", "--decoder-layers", "1",
              "--conv-channels", "2,2,4", "--batch-size", "8", "--stage1-steps", "3", "--stage2-steps", "3",
              "--align-steps", "2", "--finetune-epochs", "1"]


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    assert main(["gen-synthetic", "--seed", "1", "--n-images", "20", "--n-reports", "20", "--n-pairs", "6",
                 "--n-test", "5", "--out-dir", str(data)]) == 0
    assert main(["build-kg", "--corpus", str(data / "reports.jsonl"), "--lexicon", str(data / "lexicon.txt"),
                 "--n-kg", "6", "--d", "8", "--out", str(root / "graph.json")]) == 0
    return root


def _train(root, out):
    data = root / "data"
    return main(["train-unsup", "--images", str(data / "images.jsonl"), "--reports", str(data / "reports.jsonl"),
                 "--graph", str(root / "graph.json"), "--out", str(out)] + TINY_FLAGS)


def test_unknown_flag_exit_2(capsys):
    assert main(["evaluate", "--generated", "g", "--corpus", "c", "--lexicon", "l", "--bogus", "1"]) == 2
    assert "--bogus" in capsys.readouterr().err


def test_unknown_subcommand_exit_2(capsys):
    assert main(["train-everything"]) == 2
    assert "train-everything" in capsys.readouterr().err


def test_bad_config_value_names_flag(workdir, capsys):
    code = main(
        ["train-unsup", "--images", "x", "--reports", "y", "--graph", "z", "--out", "o", "--heads", "3"])
    assert code == 2 and "--heads" in capsys.readouterr().err


def test_missing_input_exit_1(tmp_path, capsys):
    assert main(["build-kg", "--corpus", str(tmp_path / "none.jsonl"), "--lexicon", "x", "--out",
                 str(tmp_path / "g.json")]) == 1


def test_evaluate_identity(workdir, tmp_path):
    data = workdir / "data"
    gen = tmp_path / "gen.jsonl"
    with open(data / "test.jsonl") as src, open(gen, "w") as dst:
        for line in src:
            rec = json.loads(line)
            dst.write(json.dumps({"id": rec["id"], "generated_text": rec["report"]}) + "\n")
    out = tmp_path / "metrics.json"
    assert main(["evaluate", "--generated", str(gen), "--corpus", str(data / "test.jsonl"),
                 "--lexicon", str(data / "lexicon.json"), "--out", str(out)]) == 0
    m = json.loads(out.read_text())
    assert m["bleu"][3] == 1.0 and m["ce_f1"] == 1.0 and m["rouge_l"] == 1.0


def test_train_generate_and_rerun_manifest(workdir, tmp_path):
    ck = tmp_path / "ck"
    assert _train(workdir, ck) == 0
    man = json.loads((ck / "run.json").read_text())
    assert man["config"]["d"] == 8 and man["config_source"]["d"] == "flag"
    assert man["config_source"]["lr"] == "default"
    first = checkpoint_digest(ck)
    assert man["outputs"]["checkpoint"] == first
    shutil.move(str(ck), str(tmp_path / "first"))
    assert main(man["command"]) == 0
    assert checkpoint_digest(ck) == first

    gen = tmp_path / "gen.jsonl"
    data = workdir / "data"
    assert main(["generate", "--ckpt", str(ck), "--images", str(data / "test.jsonl"), "--max-len", "10",
                 "--out", str(gen)]) == 0
    recs = [json.loads(l) for l in gen.read_text().splitlines()]
    assert len(recs) == 5 and set(recs[0]) == {"id", "generated_text", "token_ids"}
    one = tmp_path / "one.jsonl"
    assert main(["generate", "--ckpt", str(ck), "--images", str(data / "test.jsonl"), "--max-len", "10",
                 "--image-id", recs[2]["id"], "--out", str(one)]) == 0
    assert json.loads(one.read_text()) == recs[2]
    assert main(["generate", "--ckpt", str(ck), "--images", str(data / "test.jsonl"),
                 "--image-id", "nope", "--out", str(one)]) == 2

    metrics = tmp_path / "m.json"
    argv = ["evaluate", "--generated", str(gen), "--corpus", str(data / "test.jsonl"),
            "--lexicon", str(data / "lexicon.json"), "--out", str(metrics)]
    assert main(argv) == 0
    before = metrics.read_bytes()
    assert main(argv) == 0 and metrics.read_bytes() == before

    tuned = tmp_path / "tuned"
    assert main(["finetune", "--pairs", str(data / "pairs.jsonl"), "--ratio", "0.5", "--base", str(ck),
                 "--out", str(tuned)]) == 0
    assert json.loads((tuned / "run.json").read_text())["config"]["ratio"] == 0.5
    assert main(["finetune", "--pairs", str(data / "pairs.jsonl"), "--ratio", "0", "--base", str(ck),
                 "--out", str(tuned)]) == 2


def test_config_file_and_unknown_key(workdir, tmp_path, capsys):
    cfg = tmp_path / "c.toml"
    cfg.write_text("lr = 0.002\nwarp_speed = 9\n")
    data = workdir / "data"
    argv = ["train-unsup", "--images", str(data / "images.jsonl"), "--reports", str(data / "reports.jsonl"),
            "--graph", str(workdir / "graph.json"), "--out", str(tmp_path / "ck"), "--config", str(cfg)]
    assert main(argv + TINY_FLAGS) == 2
    assert "warp_speed" in capsys.readouterr().err
    cfg.write_text("lr = 0.002\n")
    assert main(argv + TINY_FLAGS) == 0
    man = json.loads((tmp_path / "ck" / "run.json").read_text())
    assert man["config"]["lr"] == 0.002 and man["config_source"]["lr"] == "file"


def test_sweep_ratio_csv(workdir, tmp_path):
    out = tmp_path / "sweep.csv"
    assert main(["sweep-ratio", "--data-dir", str(workdir / "data"), "--seeds", "0", "--ratios", "0.2,0.6,1.0",
                 "--out", str(out)] + TINY_FLAGS) == 0
    rows = list(csv.DictReader(open(out)))
    assert list(rows[0]) == SWEEP_HEADER
    assert [float(r["ratio"]) for r in rows] == [0.2, 0.6, 1.0]
    assert all(0 <= float(r["bleu4"]) <= 1 and 0 <= float(r["ce_f1"]) <= 1 for r in rows)


def test_ablate_bank_sizes(workdir, tmp_path):
    out = tmp_path / "abl.json"
    assert main(["ablate", "--data-dir", str(workdir / "data"), "--seeds", "0", "--bank-size", "2",
                 "--bank-size", "8", "--no-bank", "--out", str(out)] + TINY_FLAGS) == 0
    rep = json.loads(out.read_text())
    assert set(rep["variants"]) == {"full", "bank-size=2", "bank-size=8", "no-bank"}
    assert "delta_bleu4" in rep["variants"]["no-bank"]
    man = json.loads((tmp_path / "abl.json.run.json").read_text())
    assert os.path.join(str(workdir / "data"), "images.jsonl") in man["inputs"]
    assert main(["ablate", "--data-dir", str(workdir / "data"), "--out", str(out)]) == 2
