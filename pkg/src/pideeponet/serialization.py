"""Binary containers for checkpoints and datasets.

All integers and floats are little-endian.  Checkpoint layout::

    b"PIDONCKP" u32 version
    model:    f64 T, f64 L, u32 m, u32 q, f64 c, f64 b0, u8 rescale, u8 activation
              branch block, trunk block
    block:    u32 n_layers, u32 sizes[n_layers + 1],
              per layer f64 W[out*in] (row-major), f64 b[out]
    metadata: u32 length, UTF-8 JSON
    history:  u32 rows, per row u64 iteration, f64 physics, operator, total, seconds
    b"END!"

Dataset layout::

    b"PIDODATA" u32 version
    u32 N, u32 m, u32 P, u32 Q, u64 seed, f64 T, f64 L
    f64 sensor_positions[m]
    per function: f64 sensor_values[m], f64 interior[Q*2], f64 boundary[P*2]
    b"END!"
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .deeponet import DeepOnetModel, Domain
from .errors import CheckpointParseError, CheckpointVersionError, ConfigurationError
from .gp import SensorGrid, SourceFunction
from .nnet import Activation, MlpParams
from .physics import CollocationSet

CHECKPOINT_MAGIC = b"PIDONCKP"
DATASET_MAGIC = b"PIDODATA"
TRAILER = b"END!"
CHECKPOINT_VERSION = 1
DATASET_VERSION = 1

_ACTIVATIONS = [Activation.RELU, Activation.TANH]


class _Writer:
    def __init__(self):
        self.parts: list[bytes] = []

    def raw(self, b: bytes):
        self.parts.append(b)

    def pack(self, fmt: str, *vals):
        self.parts.append(struct.pack("<" + fmt, *vals))

    def array(self, a):
        self.parts.append(np.ascontiguousarray(a, dtype="<f8").tobytes())

    def bytes(self) -> bytes:
        return b"".join(self.parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise CheckpointParseError(f"truncated while reading {what}", self.pos)
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        fmt = "<" + fmt
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def array(self, n: int, what: str) -> np.ndarray:
        return np.frombuffer(self.take(8 * n, what), dtype="<f8").astype(np.float64)

    def expect(self, magic: bytes, what: str):
        at = self.pos
        if self.take(len(magic), what) != magic:
            raise CheckpointParseError(f"bad {what}", at)


def _write_block(w: _Writer, params: MlpParams):
    sizes = params.layer_sizes
    w.pack("I", len(sizes) - 1)
    w.pack(f"{len(sizes)}I", *sizes)
    for W, b in zip(params.weights, params.biases):
        w.array(W)
        w.array(b)


def _read_block(r: _Reader, activation: Activation, name: str) -> MlpParams:
    (n_layers,) = r.unpack("I", f"{name} layer count")
    if not 1 <= n_layers <= 1024:
        raise CheckpointParseError(f"implausible {name} layer count {n_layers}", r.pos - 4)
    sizes = r.unpack(f"{n_layers + 1}I", f"{name} layer sizes")
    weights, biases = [], []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        weights.append(r.array(fan_out * fan_in, f"{name} W{i + 1}").reshape(fan_out, fan_in))
        biases.append(r.array(fan_out, f"{name} b{i + 1}"))
    return MlpParams(tuple(weights), tuple(biases), activation)


def checkpoint_bytes(model: DeepOnetModel, history=None, metadata: dict | None = None) -> bytes:
    w = _Writer()
    w.raw(CHECKPOINT_MAGIC)
    w.pack("I", CHECKPOINT_VERSION)
    d = model.domain
    w.pack("ddIIdd", d.T, d.L, model.m, model.embedding_dim, model.output_scale, model.output_bias)
    w.pack("BB", int(model.rescale_inputs), _ACTIVATIONS.index(model.branch.activation))
    _write_block(w, model.branch)
    _write_block(w, model.trunk)
    meta = json.dumps(metadata or {}, sort_keys=True).encode("utf-8")
    w.pack("I", len(meta))
    w.raw(meta)
    rows = list(history.rows()) if history is not None else []
    w.pack("I", len(rows))
    for it, p, o, t, s in rows:
        w.pack("Qdddd", it, p, o, t, s)
    w.raw(TRAILER)
    return w.bytes()


def save_checkpoint(model: DeepOnetModel, history, path, metadata: dict | None = None) -> None:
    _atomic_write(path, checkpoint_bytes(model, history, metadata))


def parse_checkpoint(data: bytes):
    from .pipeline import MetricHistory

    r = _Reader(data)
    r.expect(CHECKPOINT_MAGIC, "checkpoint magic")
    (version,) = r.unpack("I", "format version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(f"checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    T, L, m, q, c, b0 = r.unpack("ddIIdd", "model header")
    rescale, act = r.unpack("BB", "model flags")
    if act >= len(_ACTIVATIONS):
        raise CheckpointParseError(f"unknown activation code {act}", r.pos - 1)
    activation = _ACTIVATIONS[act]
    branch = _read_block(r, activation, "branch")
    trunk = _read_block(r, activation, "trunk")
    (n_meta,) = r.unpack("I", "metadata length")
    at = r.pos
    try:
        metadata = json.loads(r.take(n_meta, "metadata").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise CheckpointParseError("malformed metadata", at) from None
    (n_rows,) = r.unpack("I", "history length")
    history = MetricHistory()
    for _ in range(n_rows):
        it, p, o, _t, s = r.unpack("Qdddd", "history row")
        history.append(it, p, o, s)
    r.expect(TRAILER, "trailer")
    if r.pos != len(data):
        raise CheckpointParseError("trailing bytes after checkpoint", r.pos)
    try:
        model = DeepOnetModel(branch, trunk, Domain(T, L), c, b0, bool(rescale))
    except (ConfigurationError, ValueError) as exc:
        raise CheckpointParseError(f"inconsistent model: {exc}", 0) from None
    if model.m != m or model.embedding_dim != q:
        raise CheckpointParseError("header m/q disagree with parameter blocks", 0)
    return model, history, metadata


def load_checkpoint(path, expect_domain: Domain | None = None, expect_m: int | None = None):
    """Returns ``(model, history, metadata)``; rejects a domain or sensor
    count that does not match the caller's dataset."""
    model, history, metadata = parse_checkpoint(Path(path).read_bytes())
    if expect_domain is not None and model.domain != expect_domain:
        raise ConfigurationError(f"checkpoint domain {model.domain} does not match {expect_domain}")
    if expect_m is not None and model.m != expect_m:
        raise ConfigurationError(f"checkpoint has m={model.m} sensors, dataset has {expect_m}")
    return model, history, metadata


def dataset_bytes(dataset) -> bytes:
    w = _Writer()
    w.raw(DATASET_MAGIC)
    w.pack("I", DATASET_VERSION)
    w.pack("IIIIQdd", len(dataset), dataset.m, dataset.P, dataset.Q, dataset.seed, dataset.domain.T, dataset.domain.L)
    w.array(dataset.grid.positions)
    for g, c in zip(dataset.sources, dataset.collocation):
        w.array(g.sensor_values)
        w.array(c.interior)
        w.array(c.boundary)
    w.raw(TRAILER)
    return w.bytes()


def save_dataset(dataset, path) -> None:
    _atomic_write(path, dataset_bytes(dataset))


def parse_dataset(data: bytes):
    from .pipeline import Dataset

    r = _Reader(data)
    r.expect(DATASET_MAGIC, "dataset magic")
    (version,) = r.unpack("I", "format version")
    if version != DATASET_VERSION:
        raise CheckpointVersionError(f"dataset version {version}, expected {DATASET_VERSION}")
    N, m, P, Q, seed, T, L = r.unpack("IIIIQdd", "dataset header")
    grid = SensorGrid(r.array(m, "sensor positions"))
    sources, colloc = [], []
    for i in range(N):
        sources.append(SourceFunction(r.array(m, f"function {i} sensor values"), grid))
        interior = r.array(2 * Q, f"function {i} interior points").reshape(Q, 2)
        boundary = r.array(2 * P, f"function {i} boundary points").reshape(P, 2)
        colloc.append(CollocationSet(interior, boundary))
    r.expect(TRAILER, "trailer")
    if r.pos != len(data):
        raise CheckpointParseError("trailing bytes after dataset", r.pos)
    return Dataset(tuple(sources), tuple(colloc), grid, Domain(T, L), seed)


def load_dataset(path):
    return parse_dataset(Path(path).read_bytes())


def _atomic_write(path, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)
