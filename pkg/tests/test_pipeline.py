import numpy as np
import pytest

from pideeponet.config import RunConfig, load_config, parse_config_text
from pideeponet.deeponet import Domain, init_model
from pideeponet.errors import CheckpointParseError, CheckpointVersionError, ConfigurationError
from pideeponet.fdm import FdmConfig
from pideeponet.gp import GpConfig, SensorGrid, SourceFunction
from pideeponet.physics import DiffusionFunction, StencilConfig, total_loss
from pideeponet.pipeline import (
    MetricHistory,
    TrainConfig,
    evaluate,
    fdm_predictor,
    generate_dataset,
    sample_collocation,
    sample_test_functions,
    train,
)
from pideeponet.serialization import (
    checkpoint_bytes,
    dataset_bytes,
    load_checkpoint,
    parse_checkpoint,
    parse_dataset,
    save_checkpoint,
)

SIGNED = DiffusionFunction("power", 2.0)
TINY = TrainConfig(N=4, m=10, P=8, Q=6, iterations=300, seed=1, activation="tanh", q=8, hidden=(16, 16),
                   output_scale=1 / 8, log_every=50)
SMALL_FDM = FdmConfig(49, 50)


@pytest.fixture(scope="module")
def tiny_dataset():
    return generate_dataset(TINY)


@pytest.fixture(scope="module")
def tiny_run(tiny_dataset):
    model = init_model(TINY.m, q=TINY.q, hidden=TINY.hidden, activation=TINY.activation, seed=TINY.seed,
                       output_scale=TINY.output_scale)
    return model, *train(model, tiny_dataset, TINY, SIGNED)


def test_collocation_counts_and_placement():
    st = StencilConfig(0.01, 0.01)
    c = sample_collocation(0, 0, P=7, Q=50, domain=Domain(), st=st)
    assert c.interior.shape == (50, 2) and c.boundary.shape == (7, 2)
    assert np.all(c.interior[:, 0] >= 0.01) and np.all(c.interior[:, 0] <= 0.99)
    assert np.all(np.abs(c.interior[:, 1]) <= 0.99)
    # ceil(7/2) initial points, then ceil(3/2) left and 1 right
    assert np.all(c.boundary[:4, 0] == 0.0)
    assert np.all(c.boundary[4:6, 1] == -1.0) and c.boundary[6, 1] == 1.0


def test_dataset_shapes_and_determinism(tiny_dataset):
    ds = tiny_dataset
    assert len(ds) == 4 and ds.m == 10 and ds.P == 8 and ds.Q == 6
    assert dataset_bytes(generate_dataset(TINY)) == dataset_bytes(ds)
    other = generate_dataset(TrainConfig(**{**TINY.__dict__, "seed": 2}))
    assert dataset_bytes(other) != dataset_bytes(ds)


def test_dataset_prefix_stability():
    # counter-based streams: function i does not depend on N
    small = generate_dataset(TrainConfig(N=2, m=10, P=4, Q=4))
    big = generate_dataset(TrainConfig(N=5, m=10, P=4, Q=4))
    assert small.sources[1] == big.sources[1]
    assert np.array_equal(small.collocation[1].interior, big.collocation[1].interior)


def test_batch_targets_are_source_values(tiny_dataset):
    b = tiny_dataset.batch([2])
    x = tiny_dataset.collocation[2].interior[:, 1]
    np.testing.assert_array_equal(b.targets[0], tiny_dataset.sources[2](x))


def test_test_functions_disjoint_from_training(tiny_dataset):
    tests = sample_test_functions(3, TINY.seed, TINY.m)
    assert len(tests) == 3
    assert all(t != s for t in tests for s in tiny_dataset.sources)
    assert sample_test_functions(0, 0, 10) == []


def test_training_reduces_loss(tiny_run):
    _, _, hist = tiny_run
    assert hist.iteration == [0, 50, 100, 150, 200, 250, 300]
    assert hist.total_loss[-1] < 0.5 * hist.total_loss[0]


def test_history_row_zero_is_initial_loss(tiny_run, tiny_dataset):
    model0, _, hist = tiny_run
    st = TINY.stencil(tiny_dataset.domain)
    assert hist.total_loss[0] == pytest.approx(total_loss(model0, tiny_dataset.batch(), SIGNED, st), rel=1e-12)


def test_last_row_is_final_model_loss(tiny_run, tiny_dataset):
    _, model, hist = tiny_run
    st = TINY.stencil(tiny_dataset.domain)
    assert hist.total_loss[-1] == pytest.approx(total_loss(model, tiny_dataset.batch(), SIGNED, st), rel=1e-12)


def test_training_is_deterministic(tiny_run, tiny_dataset):
    cfg = TrainConfig(**{**TINY.__dict__, "iterations": 50})
    model0 = tiny_run[0]
    _, h1 = train(model0, tiny_dataset, cfg, SIGNED)
    _, h2 = train(model0, tiny_dataset, cfg, SIGNED)
    assert h1.total_loss == h2.total_loss and h1.total_loss[1] == tiny_run[2].total_loss[1]


def test_minibatch_training_runs(tiny_dataset, tiny_run):
    cfg = TrainConfig(**{**TINY.__dict__, "iterations": 20, "functions_per_batch": 2, "log_every": 10})
    _, hist = train(tiny_run[0], tiny_dataset, cfg, SIGNED)
    assert len(hist) == 3


def test_zero_iterations_logs_once(tiny_dataset, tiny_run):
    model, hist = train(tiny_run[0], tiny_dataset, TrainConfig(**{**TINY.__dict__, "iterations": 0}), SIGNED)
    assert hist.iteration == [0] and model is tiny_run[0]


def test_mismatched_model_rejected(tiny_dataset):
    with pytest.raises(ConfigurationError):
        train(init_model(11, q=4, hidden=(4,)), tiny_dataset, TINY, SIGNED)


def test_metric_history_csv_round_trip(tmp_path, tiny_run):
    hist = tiny_run[2]
    hist.to_csv(tmp_path / "m.csv")
    back = MetricHistory.from_csv(tmp_path / "m.csv")
    assert back.total_loss == hist.total_loss and back.iteration == hist.iteration
    with pytest.raises(ValueError):
        hist.append(0, 1.0, 1.0, 0.0)


def test_oracle_self_test_is_exact():
    tests = sample_test_functions(2, 0, 20)
    rep = evaluate(fdm_predictor(Domain(), SMALL_FDM, SIGNED), tests, Domain(), SMALL_FDM, SIGNED, grid_n=11)
    assert rep.rel_l2 == [0.0, 0.0] and rep.max_err == [0.0, 0.0]


def test_zero_predictor_has_unit_error():
    tests = sample_test_functions(2, 0, 20)
    rep = evaluate(lambda g, t, x: np.zeros((t.size, x.size)), tests, Domain(), SMALL_FDM, SIGNED, grid_n=11)
    np.testing.assert_allclose(rep.rel_l2, 1.0)


def test_zero_source_zero_model_error_is_zero():
    g = SourceFunction(np.zeros(10), SensorGrid.uniform(10))
    rep = evaluate(lambda g, t, x: np.zeros((t.size, x.size)), [g], Domain(), SMALL_FDM, SIGNED, grid_n=5)
    assert rep.rel_l2 == [0.0]


def test_report_csv(tmp_path):
    tests = sample_test_functions(2, 0, 20)
    rep = evaluate(lambda g, t, x: np.zeros((t.size, x.size)), tests, Domain(), SMALL_FDM, SIGNED, grid_n=5)
    rep.failed.append((9, "diverged"))
    rep.to_csv(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "function,rel_l2,max_err,status"
    assert lines[3].startswith("9,,,fdm_failed") and lines[4].startswith("mean,")


def test_fdm_failure_is_excluded_not_fatal():
    tests = sample_test_functions(2, 0, 20)
    # one Newton iteration per step cannot converge
    rep = evaluate(lambda g, t, x: np.zeros((t.size, x.size)), tests, Domain(), FdmConfig(49, 10, newton_max_iters=1), SIGNED, grid_n=5)
    assert rep.rel_l2 == [] and [i for i, _ in rep.failed] == [0, 1]


def test_checkpoint_round_trip(tmp_path, tiny_run):
    _, model, hist = tiny_run
    save_checkpoint(model, hist, tmp_path / "c.ckpt", {"note": "x"})
    back, h2, meta = load_checkpoint(tmp_path / "c.ckpt")
    assert meta == {"note": "x"} and h2.total_loss == hist.total_loss
    assert all(np.array_equal(a, b) for a, b in zip(back.branch.arrays(), model.branch.arrays()))
    assert all(np.array_equal(a, b) for a, b in zip(back.trunk.arrays(), model.trunk.arrays()))
    assert back.output_bias == model.output_bias and back.output_scale == model.output_scale
    assert checkpoint_bytes(back, h2, meta) == checkpoint_bytes(model, hist, meta)


def test_truncated_checkpoint_reports_offset(tiny_run):
    data = checkpoint_bytes(tiny_run[1], tiny_run[2])
    for cut in (0, 5, 40, len(data) // 2, len(data) - 1):
        with pytest.raises(CheckpointParseError, match="byte offset"):
            parse_checkpoint(data[:cut])
    with pytest.raises(CheckpointParseError):
        parse_checkpoint(data + b"x")


def test_checkpoint_version_and_magic(tiny_run):
    data = bytearray(checkpoint_bytes(tiny_run[1]))
    data[8] = 99
    with pytest.raises(CheckpointVersionError):
        parse_checkpoint(bytes(data))
    with pytest.raises(CheckpointParseError):
        parse_checkpoint(b"NOTACKPT" + bytes(data[8:]))


def test_checkpoint_mismatch_rejected(tmp_path, tiny_run):
    save_checkpoint(tiny_run[1], tiny_run[2], tmp_path / "c.ckpt")
    with pytest.raises(ConfigurationError):
        load_checkpoint(tmp_path / "c.ckpt", expect_m=11)
    with pytest.raises(ConfigurationError):
        load_checkpoint(tmp_path / "c.ckpt", expect_domain=Domain(2.0, 1.0))


def test_dataset_round_trip(tiny_dataset):
    data = dataset_bytes(tiny_dataset)
    back = parse_dataset(data)
    assert dataset_bytes(back) == data
    assert back.sources == tiny_dataset.sources
    with pytest.raises(CheckpointParseError):
        parse_dataset(data[:-3])


def test_config_defaults_and_overrides():
    cfg = load_config(None)
    assert (cfg.N, cfg.m, cfg.P, cfg.Q, cfg.iterations, cfg.learning_rate) == (500, 100, 100, 100, 10000, 1e-3)
    assert cfg.activation == "relu" and cfg.c == 1 / 64 and cfg.gp == GpConfig()
    cfg = parse_config_text("N = 7  # comment\nhidden = 8, 8\ndiffusion = quadratic\noutput_scale = auto\n")
    assert cfg.N == 7 and cfg.hidden == (8, 8) and cfg.alpha.kind == "quadratic" and cfg.c == 1 / 64


@pytest.mark.parametrize(
    "text,match",
    [
        ("lenght_scale = 0.3", "unknown key 'lenght_scale'"),
        ("N = 3\nN = 4", "duplicate"),
        ("N = three", "bad value"),
        ("just words", "key = value"),
        ("activation = sigmoid", "sigmoid"),
        ("diffusion = cubic", "cubic"),
        ("length_scale = 0", "length_scale"),
    ],
)
def test_config_errors(text, match):
    with pytest.raises(ConfigurationError, match=match):
        parse_config_text(text)


def test_run_config_as_dict_round_trips():
    cfg = RunConfig(N=3, hidden=(5,))
    d = cfg.as_dict()
    assert d["hidden"] == [5] and RunConfig(**{**d, "hidden": tuple(d["hidden"])}) == cfg
