import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from textdefence import attacks, cli, metrics
from textdefence.experiment import prepare
from textdefence.model import TextClassifier

BASE = """
[dataset]
kind = "synth"
n = {n}
noise = {noise}
seed = 5

[synonyms]
k = {k}

[defence]
{defence}

[train]
epochs = {epochs}
lrs = {lrs}

[run]
seeds = {seeds}
"""


def config(tmp_path, name="run.toml", n=300, noise=0.0, k=6, defence='kind = "baseline"', lrs="[0.01]",
           seeds="[0]", extra="", epochs=2):
    path = tmp_path / name
    body = BASE.format(n=n, noise=noise, k=k, defence=defence, lrs=lrs, seeds=seeds, epochs=epochs)
    path.write_text(body + extra)
    return str(path)


def run(*args):
    return cli.main([str(a) for a in args])


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# train ---------------------------------------------------------------------

def test_train_writes_checkpoint_and_stats(tmp_path):
    cfg = config(tmp_path, n=1000, epochs=4)
    assert run("train", "--config", cfg, "--out", tmp_path / "out") == 0
    d = tmp_path / "out" / "seed-0"
    assert (d / "checkpoint.json").is_file()
    stats = read_rows(d / "train_stats.csv")
    assert list(stats[0]) == ["lr", "epoch", "train_loss", "val_acc", "wall_ms"]
    assert [int(r["epoch"]) for r in stats] == [1, 2, 3, 4]
    assert json.loads((d / "train_meta.json").read_text())["val_acc"] >= 0.95


def test_train_is_byte_deterministic(tmp_path):
    cfg = config(tmp_path, defence='kind = "ttsopp"')
    for out in ("a", "b"):
        assert run("train", "--config", cfg, "--out", tmp_path / out) == 0
    for name in ("checkpoint.json", "train_meta.json"):
        assert (tmp_path / "a/seed-0" / name).read_bytes() == (tmp_path / "b/seed-0" / name).read_bytes()


def test_seed_override_and_seed_list(tmp_path):
    cfg = config(tmp_path, seeds="[1, 2]")
    assert run("train", "--config", cfg, "--out", tmp_path / "o", "--seed", 3) == 0
    assert [p.name for p in sorted((tmp_path / "o").iterdir())] == ["seed-3"]


def test_swept_smoothing_records_its_table(tmp_path):
    cfg = config(tmp_path, defence='kind = "sls"\neps = "sweep"')
    assert run("train", "--config", cfg, "--out", tmp_path / "o") == 0
    meta = json.loads((tmp_path / "o/seed-0/train_meta.json").read_text())
    assert [v for v, _ in meta["sweep"]] == [0.1, 0.2, 0.3, 0.4, 0.5]
    assert meta["defence"]["eps"] in (0.1, 0.2, 0.3, 0.4, 0.5)


@pytest.mark.parametrize("body", [
    '[dataset]\nkind = "files"\npath = "nowhere"\n',
    '[dataset]\nkind = "files"\n',
    '[defence]\nkind = "dropout"\n',
    '[run]\nseeds = []\n',
    '[[attacks]]\nname = "deepwordbug"\n',
    '[train]\nepochs = 0\n',
    'not toml = = 1\n',
])
def test_config_errors_exit_2(tmp_path, body, capsys):
    path = tmp_path / "bad.toml"
    path.write_text(body)
    assert run("train", "--config", path, "--out", tmp_path / "o") == 2
    assert "error:" in capsys.readouterr().err


def test_missing_config_file_exits_2(tmp_path):
    assert run("train", "--config", tmp_path / "missing.toml") == 2


@pytest.mark.filterwarnings("ignore:overflow encountered:RuntimeWarning")
def test_divergence_exits_3(tmp_path, capsys):
    cfg = config(tmp_path, lrs="[1e300]")
    assert run("train", "--config", cfg, "--out", tmp_path / "o") == 3
    assert "numerical failure" in capsys.readouterr().err


def test_files_dataset_relative_to_config(tmp_path):
    from textdefence import data
    splits = data.synth_dataset(1, n=200, noise=0.0)
    ddir = tmp_path / "ds"
    ddir.mkdir()
    data.write_examples(ddir / "train.tsv", splits.train, "tsv")
    data.write_examples(ddir / "validation.tsv", splits.validation, "tsv")
    data.write_examples(ddir / "test.tsv", splits.test, "tsv")
    path = tmp_path / "files.toml"
    path.write_text('[dataset]\nkind = "files"\npath = "ds"\nname = "toy"\n[train]\nepochs = 1\nlrs = [0.01]\n'
                    '[synonyms]\nk = 4\n')
    assert run("train", "--config", path, "--out", tmp_path / "o") == 0
    assert run("attack", "--config", path, "--out", tmp_path / "o") == 0
    rows = metrics.read_csv(tmp_path / "o/seed-0/eval.csv")
    assert {r.dataset for r in rows} == {"toy"}


# attack --------------------------------------------------------------------

@pytest.fixture(scope="module")
def attacked(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("attacked")
    cfg = config(tmp, noise=0.05, defence='kind = "ttso"\nT = 10.0')
    assert run("train", "--config", cfg, "--out", tmp / "out") == 0
    assert run("attack", "--config", cfg, "--out", tmp / "out") == 0
    return tmp, cfg


def test_attack_outputs(attacked):
    tmp, _ = attacked
    d = tmp / "out/seed-0"
    rows = metrics.read_csv(d / "eval.csv")
    assert [r.attack for r in rows] == ["TextFooler", "TextBugger", "apdr"]
    assert all(r.defence == "TTSO" for r in rows)
    for r in rows[:2]:
        assert abs(r.pdr - r.asr) <= 1e-9
    n_test = len(attacks.read_transcript(d / "transcript_textfooler.jsonl"))
    assert n_test == 60


def test_transcripts_replay(attacked):
    tmp, cfg = attacked
    loaded = cli.load_config(cfg)
    prep = prepare(loaded["dataset"], loaded["synonyms"], 0)
    model = TextClassifier.load(tmp / "out/seed-0/checkpoint.json")
    victim = attacks.Victim(model, prep.vocab)
    for name in ("textfooler", "textbugger"):
        rows = attacks.read_transcript(tmp / f"out/seed-0/transcript_{name}.jsonl")
        probs = victim.probabilities([r["perturbed_words"] for r in rows])
        assert list(np.argmax(probs, axis=1)) == [r["final_pred"] for r in rows]
        for r in rows:
            assert r["success"] == (r["final_pred"] != r["label"] and not r["skipped"])
            if r["skipped"]:
                assert r["queries"] == 1


def test_attack_is_byte_deterministic(attacked):
    tmp, cfg = attacked
    assert run("attack", "--config", cfg, "--out", tmp / "again") != 0  # no checkpoint there yet
    ckpt = tmp / "out/seed-0/checkpoint.json"
    assert run("attack", "--config", cfg, "--out", tmp / "again", "--checkpoint", ckpt) == 0
    for name in ("eval.csv", "transcript_textfooler.jsonl", "transcript_textbugger.jsonl"):
        assert (tmp / "out/seed-0" / name).read_bytes() == (tmp / "again/seed-0" / name).read_bytes()


def test_null_attacker_changes_nothing(tmp_path):
    extra = '[[attacks]]\nname = "textfooler"\n[[attacks]]\nname = "textbugger"\nmax_perturb_fraction = 0.0\n'
    cfg = config(tmp_path, noise=0.1, k=0, extra=extra)
    assert run("train", "--config", cfg, "--out", tmp_path / "o") == 0
    assert run("attack", "--config", cfg, "--out", tmp_path / "o") == 0
    for r in metrics.read_csv(tmp_path / "o/seed-0/eval.csv")[:2]:
        assert r.aua == r.acc and r.asr == 0.0 and r.avgq is None


def test_vocabulary_mismatch_is_refused(attacked, tmp_path, capsys):
    tmp, _ = attacked
    other = config(tmp_path, n=400)
    ckpt = tmp / "out/seed-0/checkpoint.json"
    assert run("attack", "--config", other, "--out", tmp_path / "o", "--checkpoint", ckpt) == 2
    assert "vocabulary hash" in capsys.readouterr().err


def test_subsampling_needs_the_flag(attacked, tmp_path):
    tmp, _ = attacked
    cfg = config(tmp_path, noise=0.05, defence='kind = "ttso"\nT = 10.0', extra="")
    text = open(cfg).read().replace("seeds = [0]", "seeds = [0]\nsubsample = 10")
    open(cfg, "w").write(text)
    ckpt = tmp / "out/seed-0/checkpoint.json"
    assert run("attack", "--config", cfg, "--out", tmp_path / "o", "--checkpoint", ckpt) == 2
    assert run("attack", "--config", cfg, "--out", tmp_path / "o", "--checkpoint", ckpt,
               "--allow-subsample") == 0
    assert len(attacks.read_transcript(tmp_path / "o/seed-0/transcript_textfooler.jsonl")) == 10


# sweep-temp ----------------------------------------------------------------

def test_sweep_with_unit_temperature_matches_a_plain_run(tmp_path):
    cfg = config(tmp_path, noise=0.05)
    assert run("sweep-temp", "--config", cfg, "--out", tmp_path / "s", "--grid", "1") == 0
    rows = read_rows(tmp_path / "s/sweep_temperature.csv")
    assert list(rows[0]) == ["T", "seed", "acc", "aua_tf", "aua_tb", "apdr"]
    assert len(rows) == 1

    plain = config(tmp_path, name="plain.toml", noise=0.05, defence='kind = "ttso"\nT = 1.0')
    assert run("train", "--config", plain, "--out", tmp_path / "p") == 0
    assert run("attack", "--config", plain, "--out", tmp_path / "p") == 0
    ev = {r.attack: r for r in metrics.read_csv(tmp_path / "p/seed-0/eval.csv")}
    assert float(rows[0]["acc"]) == ev["TextFooler"].acc
    assert float(rows[0]["aua_tf"]) == ev["TextFooler"].aua
    assert float(rows[0]["aua_tb"]) == ev["TextBugger"].aua
    assert float(rows[0]["apdr"]) == ev["apdr"].pdr
    med = read_rows(tmp_path / "s/sweep_temperature_median.csv")
    assert med[0]["seed"] == "median" and med[0]["apdr"] == rows[0]["apdr"]


def test_sweep_rejects_bad_grids(tmp_path):
    cfg = config(tmp_path)
    assert run("sweep-temp", "--config", cfg, "--out", tmp_path / "s", "--grid", "0,5") == 2


# runtime-bench -------------------------------------------------------------

def test_runtime_bench_table(tmp_path, capsys):
    cfg = config(tmp_path, n=200)
    assert run("runtime-bench", "--config", cfg, "--out", tmp_path / "r", "--defences", "baseline,ttso,pgd") == 0
    rows = read_rows(tmp_path / "r/runtime.csv")
    assert [r["defence"] for r in rows] == ["Baseline", "TTSO", "PGD"]
    assert float(rows[0]["multiplier"]) == 1.0
    out = capsys.readouterr().out
    assert "| Baseline | 1 |" in out and "| PGD | x" in out
    assert run("runtime-bench", "--config", cfg, "--out", tmp_path / "r", "--defences", "ttso") == 2


# report --------------------------------------------------------------------

def _eval(ds, defence, attack, acc, aua, asr, avgq):
    return metrics.EvalRecord(ds, "m", defence, attack, acc, aua, asr, avgq, asr)


def test_single_record_report(tmp_path):
    d = tmp_path / "r/seed-0"
    d.mkdir(parents=True)
    metrics.write_csv(d / "eval.csv", metrics.with_summaries([_eval("synth", "Baseline", "TextFooler",
                                                                    90.0, 10.0, 88.9, 50.0)]))
    text = cli.cmd_report(tmp_path / "r")
    table = [line for line in text.splitlines() if line.startswith("| m ")]
    assert len(table) == 1


def test_report_bolds_the_best_cells_and_is_reproducible(tmp_path, capsys):
    rows = metrics.with_summaries([
        _eval("synth", "Baseline", "TextFooler", 92.0, 2.0, 97.8, 40.0),
        _eval("synth", "TTSO", "TextFooler", 93.0, 12.0, 87.1, 90.0),
        _eval("synth", "SLS", "TextFooler", 91.0, 5.0, 94.5, 60.0),
    ])
    for i, seed in enumerate(("seed-0", "seed-1")):
        (tmp_path / seed).mkdir()
        metrics.write_csv(tmp_path / seed / "eval.csv", rows)
    assert run("report", tmp_path) == 0
    first = (tmp_path / "report.md").read_bytes()
    assert run("report", tmp_path) == 0
    assert (tmp_path / "report.md").read_bytes() == first
    text = first.decode()
    header = next(line for line in text.splitlines() if line.startswith("| Model"))
    cols = [c.strip() for c in header.strip("|").split("|")]
    ttso = next(line for line in text.splitlines() if "| TTSO |" in line)
    base = next(line for line in text.splitlines() if "| Baseline |" in line)
    cells = dict(zip(cols, [c.strip() for c in ttso.strip("|").split("|")]))
    assert cells["TextFooler Aua"] == "**12.00**"
    assert cells["TextFooler Asr"] == "**87.10**"
    assert cells["Acc"] == "**93.00**"
    base_cells = dict(zip(cols, [c.strip() for c in base.strip("|").split("|")]))
    assert base_cells["TextFooler Aua"] == "2.00"


def test_report_without_results_exits_2(tmp_path):
    assert run("report", tmp_path) == 2


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "textdefence", "report", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 2 and "eval.csv" in proc.stderr
