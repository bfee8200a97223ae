"""Command-line entry point.

Exit codes: 0 success, 2 configuration/usage, 3 I/O, 4 training failure,
5 evaluation failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace

import numpy as np

from .config import RunConfig, load_config
from .deeponet import init_model, operator_eval_grid
from .errors import CheckpointParseError, CheckpointVersionError, ConfigurationError, NonConvergenceError
from .fdm import solve_fdm
from .pipeline import (
    TrainingAborted,
    evaluate,
    fdm_on_grid,
    fdm_predictor,
    generate_dataset,
    sample_test_functions,
    train,
)
from .serialization import load_checkpoint, load_dataset, save_checkpoint, save_dataset

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_TRAIN = 4
EXIT_EVAL = 5

log = logging.getLogger("pideeponet")


class _Fail(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _err(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


def _config(args) -> RunConfig:
    try:
        cfg = load_config(args.config)
    except OSError as exc:
        raise _Fail(EXIT_IO, f"cannot read config: {exc}") from None
    except ConfigurationError as exc:
        raise _Fail(EXIT_CONFIG, str(exc)) from None
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed).validate()
    return cfg


def _load_dataset(path):
    try:
        return load_dataset(path)
    except OSError as exc:
        raise _Fail(EXIT_IO, f"cannot read dataset: {exc}") from None
    except (CheckpointParseError, CheckpointVersionError) as exc:
        raise _Fail(EXIT_IO, f"malformed dataset {path}: {exc}") from None


def _load_checkpoint(path, **kw):
    try:
        return load_checkpoint(path, **kw)
    except OSError as exc:
        raise _Fail(EXIT_IO, f"cannot read checkpoint: {exc}") from None
    except (CheckpointParseError, CheckpointVersionError) as exc:
        raise _Fail(EXIT_IO, f"malformed checkpoint {path}: {exc}") from None
    except ConfigurationError as exc:
        raise _Fail(EXIT_CONFIG, str(exc)) from None


def _write(fn, path, what: str) -> None:
    try:
        fn(path)
    except OSError as exc:
        raise _Fail(EXIT_IO, f"cannot write {what}: {exc}") from None


def _say(args, *parts) -> None:
    if not args.quiet:
        print(*parts, flush=True)


def write_grid_csv(path, taus, xs, values) -> None:
    """Row header tau, column header x."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tau\\x", *[repr(float(x)) for x in xs]])
        for t, row in zip(taus, values):
            w.writerow([repr(float(t)), *[repr(float(v)) for v in row]])


def read_grid_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    xs = np.array([float(v) for v in rows[0][1:]])
    taus = np.array([float(r[0]) for r in rows[1:]])
    values = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    return taus, xs, values


def _metadata(cfg: RunConfig, **extra) -> dict:
    meta = {"config": cfg.as_dict()}
    meta.update(extra)
    return meta


def cmd_gen_data(args) -> int:
    cfg = _config(args)
    out = args.out or cfg.dataset_path
    ds = generate_dataset(cfg.train, cfg.gp, cfg.domain)
    _write(lambda p: save_dataset(ds, p), out, "dataset")
    _say(args, f"wrote {out}: N={len(ds)} m={ds.m} P={ds.P} Q={ds.Q} seed={ds.seed}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    ds = _load_dataset(args.dataset or cfg.dataset_path)
    tc = cfg.train
    if ds.m != tc.m or ds.domain != cfg.domain:
        raise _Fail(EXIT_CONFIG, f"dataset (m={ds.m}, {ds.domain}) does not match config (m={tc.m}, {cfg.domain})")
    ckpt = args.out or cfg.checkpoint_path
    metrics = args.metrics or cfg.metrics_path
    model = init_model(ds.m, ds.domain, tc.q, tc.hidden, tc.activation, tc.seed, tc.output_scale)

    def progress(it, physics, operator):
        _say(args, f"iter {it:6d}  total {physics + operator:.6e}  physics {physics:.6e}  operator {operator:.6e}")

    meta = _metadata(cfg, dataset_seed=ds.seed)
    try:
        model, history = train(model, ds, tc, cfg.alpha, on_log=progress)
    except TrainingAborted as exc:
        aborted = exc
    else:
        aborted = None
    if aborted is not None:
        # keep the last good weights and the history up to the failure
        _err(str(aborted))
        meta["aborted_at"] = aborted.iteration
        _write(lambda p: save_checkpoint(aborted.model, aborted.history, p, meta), ckpt, "checkpoint")
        _write(aborted.history.to_csv, metrics, "metrics")
        return EXIT_TRAIN
    meta["iterations_completed"] = tc.iterations
    _write(lambda p: save_checkpoint(model, history, p, meta), ckpt, "checkpoint")
    _write(history.to_csv, metrics, "metrics")
    _say(args, f"wrote {ckpt} and {metrics} ({len(history)} metric rows)")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _config(args)
    n_test = cfg.n_test if args.n_test is None else args.n_test
    report_path = args.out or cfg.report_path
    tests = sample_test_functions(n_test, cfg.seed, cfg.m, cfg.gp, cfg.domain)
    if args.oracle_self_test:
        predictor = fdm_predictor(cfg.domain, cfg.fdm, cfg.alpha)
    else:
        model, _, _ = _load_checkpoint(args.checkpoint or cfg.checkpoint_path, expect_domain=cfg.domain, expect_m=cfg.m)
        predictor = model
    report = evaluate(predictor, tests, cfg.domain, cfg.fdm, cfg.alpha, cfg.eval_grid)
    _write(report.to_csv, report_path, "report")
    if n_test and not report.rel_l2:
        _err("every FDM solve failed")
        return EXIT_EVAL
    if report.rel_l2:
        _say(args, f"relative L2 error over {len(report.rel_l2)} functions: mean {report.mean_rel_l2:.4g}  median {report.median_rel_l2:.4g}")
    if report.failed:
        _say(args, f"{len(report.failed)} function(s) excluded: FDM failed")
    _say(args, f"wrote {report_path}")
    return EXIT_OK


def cmd_export_fields(args) -> int:
    cfg = _config(args)
    ds = _load_dataset(args.dataset or cfg.dataset_path)
    if not 0 <= args.index < len(ds):
        raise _Fail(EXIT_CONFIG, f"function index {args.index} out of range [0, {len(ds)})")
    model, _, _ = _load_checkpoint(args.checkpoint or cfg.checkpoint_path, expect_domain=ds.domain, expect_m=ds.m)
    g = ds.sources[args.index]
    n = cfg.eval_grid
    taus = np.linspace(0.0, ds.domain.T, n)
    xs = np.linspace(-ds.domain.L, ds.domain.L, n)
    prefix = args.out or cfg.fields_prefix
    g_row = g(xs)
    try:
        ref = fdm_on_grid(solve_fdm(g, ds.domain, cfg.fdm, cfg.alpha), taus, xs)
    except NonConvergenceError as exc:
        raise _Fail(EXIT_EVAL, f"FDM failed: {exc}") from None
    outputs = {
        "g": np.tile(g_row, (n, 1)),
        "nn": operator_eval_grid(model, g, taus, xs),
        "fdm": ref,
    }
    for name, values in outputs.items():
        path = f"{prefix}_{name}.csv"
        _write(lambda p, v=values: write_grid_csv(p, taus, xs, v), path, name)
        _say(args, f"wrote {path}")
    return EXIT_OK


def cmd_solve_fdm(args) -> int:
    cfg = _config(args)
    if args.dataset:
        ds = _load_dataset(args.dataset)
        if not 0 <= args.index < len(ds):
            raise _Fail(EXIT_CONFIG, f"function index {args.index} out of range [0, {len(ds)})")
        g, domain = ds.sources[args.index], ds.domain
    else:
        g = sample_test_functions(args.index + 1, cfg.seed, cfg.m, cfg.gp, cfg.domain)[args.index]
        domain = cfg.domain
    try:
        sol = solve_fdm(g, domain, cfg.fdm, cfg.alpha)
    except NonConvergenceError as exc:
        raise _Fail(EXIT_EVAL, f"FDM failed: {exc}") from None
    out = args.out or "fdm.csv"
    _write(lambda p: write_grid_csv(p, sol.taus, sol.xs, sol.values), out, "FDM field")
    _say(args, f"wrote {out} ({sol.values.shape[0]} x {sol.values.shape[1]})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    def global_flags(parser, default):
        # subcommands repeat the flags with suppressed defaults so either position works
        parser.add_argument("--config", default=default, help="key = value run configuration")
        parser.add_argument("--seed", type=int, default=default, help="override the configured seed")
        parser.add_argument("--quiet", action="store_true", default=False if default is None else default,
                            help="suppress progress output")

    common = argparse.ArgumentParser(add_help=False)
    global_flags(common, argparse.SUPPRESS)

    p = argparse.ArgumentParser(prog="pideeponet", description="Physics-informed DeepONet for a nonlinear parabolic equation.")
    global_flags(p, None)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-data", parents=[common], help="sample the training dataset")
    s.add_argument("--out", help="dataset file (default: dataset_path)")
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("train", parents=[common], help="train and write a checkpoint")
    s.add_argument("--dataset")
    s.add_argument("--out", help="checkpoint file (default: checkpoint_path)")
    s.add_argument("--metrics", help="metrics CSV (default: metrics_path)")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", parents=[common], help="compare against the FDM oracle on held-out sources")
    s.add_argument("--checkpoint")
    s.add_argument("--n-test", type=int)
    s.add_argument("--out", help="report CSV (default: report_path)")
    s.add_argument("--oracle-self-test", action="store_true", help="evaluate the FDM solver against itself")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("export-fields", parents=[common], help="write g, NN and FDM grids as CSV")
    s.add_argument("--checkpoint")
    s.add_argument("--dataset")
    s.add_argument("--index", type=int, default=0)
    s.add_argument("--out", help="output prefix (default: fields_prefix)")
    s.set_defaults(func=cmd_export_fields)

    s = sub.add_parser("solve-fdm", parents=[common], help="run the reference solver")
    s.add_argument("--dataset", help="take the source from this dataset (else a held-out GP draw)")
    s.add_argument("--index", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_solve_fdm)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    try:
        return args.func(args)
    except _Fail as exc:
        _err(str(exc))
        return exc.code
    except ConfigurationError as exc:
        _err(str(exc))
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
