import csv

import pytest

from spl_nmt import config as C
from spl_nmt.cli import main

TINY = ["--task.corpus_size", "200", "--eval_size", "12", "--total_steps", "4", "--eval_every", "2",
        "--model.d_model", "16", "--model.d_ffn", "32", "--probe_size", "9"]


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_train_writes_run_files(tmp_path, capsys):
    assert main(["train", "--out", str(tmp_path), "--save-params", "--diagnostics", *TINY]) == 0
    for name in ("metrics.csv", "run_config.txt", "summary.txt", "timing.csv", "checkpoint.npz",
                 "confidence.csv"):
        assert (tmp_path / name).exists(), name
    table = rows(tmp_path / "metrics.csv")
    assert table[0] == ["step", "train_loss", "token_acc", "bleu", "wall_ms",
                        "slc_short", "slc_med", "slc_long"]
    assert [r[0] for r in table[1:]] == ["0", "2", "4"]
    assert "forward_passes_per_step = 6" in capsys.readouterr().out


def test_flags_override_config_file(tmp_path):
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text("# tiny\nconfidence.k = 1.0\nmethod = vanilla\nseed = 4\n")
    out = tmp_path / "run"
    assert main(["train", "--config", str(cfg_file), "--out", str(out), "--confidence.k", "-2",
                 *TINY]) == 0
    saved = C.load(out / "run_config.txt")
    assert saved.confidence.k == -2.0
    assert saved.method == "vanilla" and saved.seed == 4


@pytest.mark.parametrize("argv", [
    ["train", "--out", "x", "--no_such_key", "1"],
    ["train", "--out", "x", "--confidence.M", "one"],
    ["train", "--out", "x", "--confidence.M", "1"],
    ["train", "--out", "x", "--model.d_model", "30"],
    ["train", "--out", "x", "--method", "magic"],
    ["train", "--out", "x", "--config", "/nonexistent/run.cfg"],
    ["train"],
    ["dance"],
])
def test_configuration_errors_exit_1(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == 1


@pytest.mark.parametrize("method", ["spl", "vanilla"])
def test_numeric_failure_exits_2_with_dump(tmp_path, method):
    argv = ["train", "--out", str(tmp_path), "--method", method, *TINY,
            "--optimizer.learning_rate_peak", "1e300", "--optimizer.warmup_steps", "1"]
    with pytest.warns(RuntimeWarning):
        assert main(argv) == 2
    assert (tmp_path / "nan_dump.npz").exists()


def test_eval_uses_saved_run_config(tmp_path, capsys):
    assert main(["train", "--out", str(tmp_path), "--save-params", "--method", "vanilla", *TINY]) == 0
    capsys.readouterr()
    assert main(["eval", "--checkpoint", str(tmp_path / "checkpoint.npz")]) == 0
    out = capsys.readouterr().out
    assert out.startswith("token_acc = ") and "bleu = " in out


def test_k_sweep_table_shape(tmp_path):
    assert main(["k-sweep", "--out", str(tmp_path), "--ks=-1,0,1", "--seeds", "0", *TINY]) == 0
    table = rows(tmp_path / "k_sweep.csv")
    assert table[0] == ["k", "step", "token_acc"]
    assert len(table) - 1 == 3 * 3


def test_bucket_sweep_table_shape(tmp_path):
    assert main(["bucket-sweep", "--out", str(tmp_path), "--counts", "2,4", *TINY]) == 0
    table = rows(tmp_path / "bucket_sweep.csv")
    assert len(table) - 1 == 2 * 2
    assert {r[0] for r in table[1:]} == {"vanilla", "spl"}


def test_tercile_track_writes_three_series(tmp_path):
    assert main(["tercile-track", "--out", str(tmp_path), *TINY]) == 0
    table = rows(tmp_path / "tercile_ratios.csv")
    assert table[0] == ["step", "short", "medium", "long"]
    assert len(table) == 4


def test_converge_writes_one_row_per_seed(tmp_path):
    assert main(["converge", "--out", str(tmp_path), "--seeds", "0,1", *TINY]) == 0
    assert len(rows(tmp_path / "convergence.csv")) == 3
