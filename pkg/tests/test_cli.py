import subprocess
import sys

import numpy as np
import pytest

from pideeponet.cli import main, read_grid_csv

TINY = """\
N = 3
m = 10
P = 6
Q = 6
iterations = 20
q = 4
hidden = 8, 8
activation = tanh
log_every = 10
n_test = 2
nx = 39
nt = 20
eval_grid = 6
"""


@pytest.fixture
def work(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    (tmp_path / "tiny.cfg").write_text(TINY)
    return tmp_path


def run(*argv):
    return main(["--quiet", "--config", "tiny.cfg", *argv])


def test_full_flow(work):
    assert run("gen-data") == 0
    assert run("train") == 0
    assert run("eval") == 0
    rows = (work / "report.csv").read_text().splitlines()
    assert rows[0] == "function,rel_l2,max_err,status" and len(rows) == 5
    assert (work / "metrics.csv").read_text().splitlines()[0] == "iteration,physics_loss,operator_loss,total_loss,seconds"
    assert len((work / "metrics.csv").read_text().splitlines()) == 4


def test_datasets_are_byte_identical(work):
    assert run("gen-data", "--out", "a.bin") == 0
    assert run("gen-data", "--out", "b.bin") == 0
    assert (work / "a.bin").read_bytes() == (work / "b.bin").read_bytes()
    assert main(["--quiet", "--config", "tiny.cfg", "--seed", "5", "gen-data", "--out", "c.bin"]) == 0
    assert (work / "c.bin").read_bytes() != (work / "a.bin").read_bytes()


def test_flags_after_subcommand(work):
    assert main(["gen-data", "--quiet", "--config", "tiny.cfg", "--seed", "5", "--out", "c.bin"]) == 0
    assert run("--seed", "5", "gen-data", "--out", "d.bin") == 0
    assert (work / "c.bin").read_bytes() == (work / "d.bin").read_bytes()


def test_unknown_config_key_exit_2(work, capsys):
    (work / "bad.cfg").write_text("lenght_scale = 0.3\n")
    assert main(["--config", "bad.cfg", "gen-data"]) == 2
    assert "lenght_scale" in capsys.readouterr().err


def test_usage_errors_exit_2(work):
    assert main([]) == 2
    assert main(["frobnicate"]) == 2
    assert main(["--help"]) == 0


def test_missing_files_exit_3(work):
    assert run("train") == 3
    assert main(["--config", "nope.cfg", "gen-data"]) == 3
    assert run("eval") == 3


def test_corrupt_checkpoint_exit_3(work, capsys):
    (work / "model.ckpt").write_bytes(b"PIDONCKP\x01\x00")
    assert run("eval") == 3
    assert "byte offset" in capsys.readouterr().err


def test_eval_with_zero_tests_writes_header_only(work):
    assert run("gen-data") == 0 and run("train") == 0
    assert run("eval", "--n-test", "0") == 0
    assert (work / "report.csv").read_text().splitlines() == ["function,rel_l2,max_err,status"]


def test_oracle_self_test(work):
    assert run("eval", "--oracle-self-test", "--out", "self.csv") == 0
    rows = [r.split(",") for r in (work / "self.csv").read_text().splitlines()[1:3]]
    assert all(float(r[1]) == 0.0 for r in rows)


def test_eval_fails_when_every_fdm_solve_fails(work):
    (work / "t.cfg").write_text(TINY + "newton_max_iters = 1\n")
    assert main(["--quiet", "--config", "t.cfg", "eval", "--oracle-self-test"]) == 5


def test_mismatched_checkpoint_exit_2(work):
    assert run("gen-data") == 0 and run("train") == 0
    (work / "m.cfg").write_text(TINY.replace("m = 10", "m = 12"))
    assert main(["--quiet", "--config", "m.cfg", "eval"]) == 2


def test_export_fields(work):
    assert run("gen-data") == 0 and run("train") == 0
    assert run("export-fields", "--index", "1", "--out", "f") == 0
    taus, xs, g = read_grid_csv(work / "f_g.csv")
    _, _, nn = read_grid_csv(work / "f_nn.csv")
    _, _, ref = read_grid_csv(work / "f_fdm.csv")
    assert g.shape == nn.shape == ref.shape == (6, 6)
    np.testing.assert_allclose(taus, np.linspace(0, 1, 6))
    np.testing.assert_allclose(xs, np.linspace(-1, 1, 6))
    assert np.all(g == g[0]) and not ref[0].any()
    assert run("export-fields", "--index", "3") == 2


def test_solve_fdm_command(work):
    assert run("solve-fdm", "--out", "s.csv") == 0
    taus, xs, v = read_grid_csv(work / "s.csv")
    assert v.shape == (21, 41) and not v[:, 0].any() and not v[0].any()


def test_console_script_module_entry(work):
    out = subprocess.run([sys.executable, "-m", "pideeponet.cli", "--quiet", "--config", "tiny.cfg", "gen-data"])
    assert out.returncode == 0 and (work / "dataset.bin").exists()


def test_default_dataset_has_default_counts(tmp_path, monkeypatch):
    from pideeponet.serialization import load_dataset

    monkeypatch.chdir(tmp_path)
    assert main(["--quiet", "gen-data"]) == 0
    ds = load_dataset(tmp_path / "dataset.bin")
    assert (len(ds), ds.m, ds.P, ds.Q) == (500, 100, 100, 100)


def test_zero_iteration_training_writes_initial_model(work):
    from pideeponet.config import load_config
    from pideeponet.deeponet import init_model
    from pideeponet.serialization import load_checkpoint

    (work / "z.cfg").write_text(TINY.replace("iterations = 20", "iterations = 0"))
    assert main(["--quiet", "--config", "z.cfg", "gen-data"]) == 0
    assert main(["--quiet", "--config", "z.cfg", "train"]) == 0
    model, hist, _ = load_checkpoint(work / "model.ckpt")
    tc = load_config(work / "z.cfg").train
    fresh = init_model(tc.m, q=tc.q, hidden=tc.hidden, activation=tc.activation, seed=tc.seed, output_scale=tc.output_scale)
    assert all(np.array_equal(a, b) for a, b in zip(model.branch.arrays(), fresh.branch.arrays()))
    assert hist.iteration == [0]


def test_export_fields_zero_model_and_zero_source(work):
    from pideeponet.deeponet import init_model
    from pideeponet.gp import SourceFunction
    from pideeponet.pipeline import Dataset
    from pideeponet.serialization import load_dataset, save_checkpoint, save_dataset

    assert run("gen-data") == 0
    ds = load_dataset(work / "dataset.bin")
    zero = tuple(SourceFunction(np.zeros(10), ds.grid) for _ in ds.sources)
    save_dataset(Dataset(zero, ds.collocation, ds.grid, ds.domain, ds.seed), work / "zero.bin")
    m = init_model(10, q=4, hidden=(8, 8))
    save_checkpoint(m.with_params(m.branch.map(np.zeros_like), m.trunk.map(np.zeros_like), 0.0), None, work / "zero.ckpt")
    assert run("export-fields", "--dataset", "zero.bin", "--checkpoint", "zero.ckpt", "--out", "z") == 0
    heads = [(work / f"z_{k}.csv").read_text().splitlines()[0] for k in ("g", "nn", "fdm")]
    assert heads[0] == heads[1] == heads[2]
    for k in ("g", "nn", "fdm"):
        assert not read_grid_csv(work / f"z_{k}.csv")[2].any()


def test_training_abort_exit_4_keeps_last_state(work, monkeypatch):
    import pideeponet.cli as cli
    from pideeponet.errors import PoisonedGradientError
    from pideeponet.pipeline import MetricHistory, TrainingAborted
    from pideeponet.serialization import load_checkpoint

    def boom(model, dataset, cfg, alpha, on_log=None):
        hist = MetricHistory()
        hist.append(0, 1.0, 0.5, 0.0)
        raise TrainingAborted(PoisonedGradientError("nan", function_index=2), 7, model, hist)

    assert run("gen-data") == 0
    monkeypatch.setattr(cli, "train", boom)
    assert run("train") == 4
    _, hist, meta = load_checkpoint(work / "model.ckpt")
    assert meta["aborted_at"] == 7 and hist.total_loss == [1.5]
    assert len((work / "metrics.csv").read_text().splitlines()) == 2
