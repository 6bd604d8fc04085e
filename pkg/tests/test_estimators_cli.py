import json
import subprocess
import sys

import pytest
from sklearn.base import clone

from rulebench.cli import main
from rulebench.datagen import DatasetSpec, build_splits, read_dataset
from rulebench.estimators import TransformerClassifier, TransformerSeq2Seq
from rulebench.tasks import TaskClass, TaskKind

TINY = dict(d_model=16, n_heads=2, d_ff=32, epochs=2, warmup_steps=5, batch_size=16)
CFG = """
[model]
d_model = 16
n_heads = 2
d_ff = 32
[train]
epochs = 1
[data]
pool_size = 100
test_size = 40
[grid]
tasks = detect
settings = flip-mix0
seeds = 0
baselines = vocab_heuristic, component_comparator
[pretrain]
size = 30
epochs = 1
"""


def test_get_params_and_clone():
    est = TransformerClassifier(d_model=32, learning_rate=1e-3)
    params = est.get_params()
    assert params["d_model"] == 32 and params["learning_rate"] == 1e-3
    other = clone(est)
    assert other.get_params() == params and other is not est
    est.set_params(epochs=3)
    assert est.epochs == 3


@pytest.fixture(scope="module")
def palindrome():
    return build_splits(DatasetSpec(TaskKind.PALINDROME_DETECTION, pool_size=160, test_size=40, seed=2))


def test_classifier_fit_predict(palindrome):
    train = palindrome["train"]
    est = TransformerClassifier(**TINY).fit(train, train)
    assert len(est.history_) == 2
    pred = est.predict(palindrome["test"])
    assert len(pred) == 40
    assert all(p in (TaskClass.C1, TaskClass.C2, None) for p in pred)
    assert 0.0 <= est.score(palindrome["test"], palindrome["test"]) <= 1.0
    again = TransformerClassifier(**TINY).fit(train, train)
    assert list(again.predict(palindrome["test"])) == list(pred)


def test_seq2seq_fit_predict():
    X = [("copy:", "a", "b"), ("reverse:", "a", "b"), ("copy:", "c", "d", "e"), ("reverse:", "c", "d")] * 5
    y = [("a", "b"), ("b", "a"), ("c", "d", "e"), ("d", "c")] * 5
    est = TransformerSeq2Seq(**TINY, max_out_len=4).fit(X, y, eval_set=(X[:4], y[:4]))
    out = est.predict(X[:4])
    assert len(out) == 4 and all(len(o) <= 4 for o in out)
    with pytest.raises(ValueError):
        est.fit(X, y[:-1])
    with pytest.raises(Exception):
        TransformerSeq2Seq().predict(X)


def test_cli_round_trip(tmp_path, capsys):
    cfg = tmp_path / "tiny.cfg"
    cfg.write_text(CFG)
    data = tmp_path / "data"
    assert main(["gen", "--config", str(cfg), "--task", "detect", "--setting", "flip-mix0", "--out", str(data)]) == 0
    test = read_dataset(data / "test.tsv")
    assert len(test) == 40 and test.class_counts() == {"C1": 20, "C2": 20}

    run = tmp_path / "run"
    assert main(["train", "--config", str(cfg), "--task", "detect", "--out", str(run)]) == 0
    metrics = json.loads((run / "metrics.json").read_text())
    assert set(metrics["metrics"]) == {"train", "eval", "test"}
    assert (run / "history.tsv").read_text().count("\n") == 2

    capsys.readouterr()
    assert main(["eval", "--checkpoint", str(run / "best.npz"), str(data / "test.tsv")]) == 0
    assert "accuracy" in capsys.readouterr().out

    assert main(["pretrain", "--config", str(cfg), "--out", str(tmp_path / "pt")]) == 0
    assert main(["train", "--config", str(cfg), "--task", "detect", "--out", str(tmp_path / "run2"),
                 "--init", str(tmp_path / "pt" / "pretrained.npz")]) == 0

    capsys.readouterr()
    assert main(["baseline", "--config", str(cfg), "--kind", "vocab_heuristic", "--task", "detect",
                 "--setting", "flip-mix0"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["test"]["accuracy"] == {"C1": 0.0, "C2": 0.0}
    assert main(["baseline", "--kind", "majority_class", "--task", "copy"]) == 2


def test_cli_grid_and_report(tmp_path, capsys):
    cfg = tmp_path / "tiny.cfg"
    cfg.write_text(CFG)
    store = tmp_path / "store"
    assert main(["grid", "--config", str(cfg), "--out", str(store)]) == 0
    assert "executed 3" in capsys.readouterr().out
    assert main(["grid", "--config", str(cfg), "--out", str(store)]) == 0
    assert "executed 0, skipped 3" in capsys.readouterr().out
    for fmt in ("tsv", "markdown", "structured"):
        assert main(["report", "--out", str(store), "--format", fmt, "--reference"]) == 0
    assert "external" in capsys.readouterr().out

    rec_path = next((store / "cells").glob("tinyformer*/result.json"))
    rec = json.loads(rec_path.read_text())
    rec["status"] = "failed"
    rec_path.write_text(json.dumps(rec))
    assert main(["report", "--out", str(store)]) == 1
    assert rec["cell_id"] in capsys.readouterr().err


def test_cli_errors(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("model.depth = 3\n")
    assert main(["grid", "--config", str(bad), "--out", str(tmp_path / "s")]) == 2
    assert "unknown key 'model.depth'" in capsys.readouterr().err
    assert main(["gen", "--task", "sorting", "--out", str(tmp_path / "d")]) == 2
    with pytest.raises(SystemExit):
        main(["report"])


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "rulebench", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for cmd in ("gen", "pretrain", "train", "eval", "baseline", "grid", "report"):
        assert cmd in out.stdout
