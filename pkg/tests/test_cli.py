import json
import re
from pathlib import Path

import numpy as np
import pytest

from bytelab.budget import flops_per_step
from bytelab.cli import main
from bytelab.model import ModelConfig

from oracles import TINY_FLOPS, TINY_FORWARD

ROOT = Path(__file__).resolve().parents[1]
TINY_CFG = ROOT / "configs" / "tiny.cfg"


@pytest.fixture
def corpus_file(tmp_path):
    words = [b"alpha", b"beta", b"gamma", b"delta", b"with", b"the", b"and", b"model", b"bytes"]
    rng = np.random.default_rng(0)
    text = b" ".join(words[i] for i in rng.integers(0, len(words), 3000)) + b"\n"
    p = tmp_path / "corpus.txt"
    p.write_bytes(text)
    return p


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_flops_tiny_breakdown(capsys):
    code, out, _ = run(capsys, "--config", TINY_CFG, "flops")
    assert code == 0
    rows = dict((r.split(",")[0], r.split(",")[2]) for r in out.strip().splitlines() if r.count(",") == 2)
    for term, value in TINY_FLOPS.items():
        assert int(rows[term]) == value
    assert str(TINY_FORWARD) in out.replace(",", "")


def test_print_config_and_overrides(capsys):
    code, out, _ = run(capsys, "--config", TINY_CFG, "--set", "trainer.batch_size=7", "--print-config")
    assert code == 0 and "batch_size = 7" in out and "run_id = tiny" in out


@pytest.mark.parametrize("argv", [["--set", "nonsense"], ["--config", "/nope.cfg", "flops"],
                                  ["--set", "bogus.x=1", "flops"], ["no-such-command"],
                                  ["--set", "objective.kind=gan", "flops"]])
def test_usage_errors_exit_1(capsys, argv):
    assert run(capsys, *argv)[0] == 1


def test_missing_checkpoint_exits_2(capsys, tmp_path):
    assert run(capsys, "eval-bpb", "--checkpoint", tmp_path / "none")[0] == 2


def test_missing_corpus_exits_2(capsys, tmp_path):
    code, _, err = run(capsys, "--set", f"run.out_dir={tmp_path}", "--set", "corpus.path=/no/such/file", "pack")
    assert code == 2 and "missing" in err


def test_fit_scaling_recovers_planted_laws(capsys, tmp_path):
    code, out, _ = run(capsys, "fit-scaling", "--output-dir", tmp_path)
    assert code == 0
    planted = json.loads((ROOT / "src" / "bytelab" / "data" / "synthetic_scaling_planted.json").read_text())
    for key, law in planted.items():
        obj, rep = key.split("/")
        m = re.search(rf"powerlaw {obj} {rep}: s=(\S+) b=(\S+)", out)
        assert abs(float(m.group(1)) - law["s"]) < 1e-9 and abs(float(m.group(2)) - law["b"]) < 1e-9
    assert (tmp_path / "scaling_curves.csv").exists()


def test_plan_budget(capsys):
    code, out, _ = run(capsys, "--config", TINY_CFG, "plan-budget", "--flops", 16896 * 10 + 5)
    assert code == 0
    plan = json.loads(out)
    assert plan["steps"] == 10 and plan["slack"] == 5
    assert run(capsys, "--config", TINY_CFG, "plan-budget", "--flops", 100)[0] == 1


def test_pipeline_and_zero_head(capsys, tmp_path, corpus_file):
    base = ["--set", f"run.out_dir={tmp_path}", "--set", f"corpus.path={corpus_file}",
            "--set", "trainer.seq_len_bytes=32", "--set", "trainer.batch_size=4",
            "--set", "trainer.total_steps=6", "--set", "trainer.eval_interval=3",
            "--set", "trainer.eval_sequences=4", "--set", "model.d_model=16", "--set", "model.n_layers=1",
            "--set", "model.n_heads=2", "--set", "model.d_head=8", "--set", "model.d_ff=32"]
    assert run(capsys, *base, "pack")[0] == 0
    d = tmp_path / "default"
    assert json.loads((d / "manifest.json").read_text())
    assert run(capsys, *base, "train", "--quiet")[0] == 0
    assert (d / "metrics.csv").exists() and (d / "config.frozen.ini").exists()
    assert not (d / ".lock").exists()
    code, out, _ = run(capsys, *base, "eval-bpb", "--checkpoint", d / "checkpoint", "--zero-head")
    assert code == 0 and json.loads(out)["bpb"] == 8.0
    code, out, _ = run(capsys, *base, "sample", "--checkpoint", d / "checkpoint", "--prompt", "the", "--length", 16)
    assert code == 0 and out.startswith("the")
    (d / ".lock").write_text("1")
    assert run(capsys, *base, "train", "--quiet")[0] == 1


def test_budgeted_train_writes_plan(capsys, tmp_path, corpus_file):
    per = flops_per_step(ModelConfig(vocab_size=256, d_model=4, n_layers=1, n_heads=1, d_head=4, d_ff=8,
                                     max_seq_len=8), 8, 1)
    base = ["--config", TINY_CFG, "--set", f"run.out_dir={tmp_path}", "--set", f"corpus.path={corpus_file}",
            "--set", "model.vocab_size=0", "--set", "trainer.eval_interval=0"]
    assert run(capsys, *base, "pack")[0] == 0
    assert run(capsys, *base, "--set", f"budget.flops={per - 1}", "train", "--quiet")[0] == 1
    assert run(capsys, *base, "--set", f"budget.flops={4 * per + 1}", "train", "--quiet")[0] == 0
    d = tmp_path / "tiny"
    plan = json.loads((d / "budget.json").read_text())
    assert plan["steps"] == 4 and plan["slack"] == 1
    assert len((d / "metrics.csv").read_text().strip().splitlines()) == 1 + 4


def test_corrupt_and_regularity(capsys, tmp_path, corpus_file):
    out_file = tmp_path / "perm.bin"
    code, out, _ = run(capsys, "corrupt", "--input", corpus_file, "--output", out_file,
                       "--strategy", "global", "--L", 256)
    assert code == 0
    raw = corpus_file.read_bytes()
    assert sorted(out_file.read_bytes()) == sorted(raw) and out_file.read_bytes() != raw
    assert out.splitlines()[0] == "strategy,k,seed,compressor,c_orig,c_perm,loss_pct,points_drop,size_increase_pct"
    code, out, _ = run(capsys, "regularity", "--input", corpus_file, "--L", 512, "--seeds", 2,
                       "--strategies", "global,intra_block:8")
    assert code == 0 and len(out.strip().splitlines()) == 5
