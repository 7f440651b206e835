"""Model builder: declarative layer specs, parameter counting, inference,
and a checksummed binary container for trained weights.

The built-in architectures stack recurrent layers that return full sequences;
the timesteps are then flattened and fed through fully connected layers down
to a single ReLU output neuron. Input windows are 5 timesteps of 21 features.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import kernel as K
from . import layers as L
from .kernel import ParamStore, Tensor

INPUT_TIMESTEPS = 5
INPUT_FEATURES = 21

_MAGIC = b"HRCM"
_FORMAT_VERSION = 1

RECURRENT_KINDS = ("rnn", "lstm", "gru", "bilstm")


class ModelFileError(ValueError):
    """Raised for unreadable, corrupt, or mismatched model files."""


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    width: int | None = None
    return_sequences: bool = True
    rate: float = 0.5
    axis: int = -1
    mode: str = "reweight"  # attention only: reweight | context

    def __post_init__(self):
        known = ("rnn", "lstm", "gru", "bilstm", "attention", "dense",
                 "td_dense", "flatten", "dropout", "batchnorm", "relu")
        if self.kind not in known:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.width is not None and self.width <= 0:
            raise ValueError(f"layer width must be positive, got {self.width}")
        if not 0.0 <= self.rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {self.rate}")


@dataclass(frozen=True)
class ModelSpec:
    name: str
    layers: tuple
    input_shape: tuple = (INPUT_TIMESTEPS, INPUT_FEATURES)

    def widths(self):
        """Widths of the parameterized layers, in order."""
        return [s.width for s in self.layers if s.width is not None]


def _dense_relu(width: int):
    return [LayerSpec("dense", width), LayerSpec("relu")]


def builtin_spec(name: str) -> ModelSpec:
    """Architecture table for the built-in model names.

    A through E are LSTM stacks that differ in cell counts and in whether
    dropout or batch normalization regularizes the two slots around the FC
    block. gru and bilstm swap the recurrent core; at_lstm adds additive
    attention between a bidirectional and a unidirectional layer. nn is the
    flat three-layer baseline, linear the flattened affine baseline.
    """
    drop = LayerSpec("dropout", rate=0.5)
    flat = LayerSpec("flatten")
    bn = LayerSpec("batchnorm")
    specs = {
        "A": [LayerSpec("lstm", 128), LayerSpec("lstm", 128), drop, flat,
              *_dense_relu(1024), drop, *_dense_relu(1)],
        "B": [LayerSpec("lstm", 32), LayerSpec("lstm", 16), LayerSpec("lstm", 8),
              drop, flat,
              *_dense_relu(512), drop, *_dense_relu(64), *_dense_relu(1)],
        "C": [LayerSpec("lstm", 32), LayerSpec("lstm", 32), bn, flat,
              *_dense_relu(512), bn, *_dense_relu(64), *_dense_relu(1)],
        "D": [LayerSpec("lstm", 64), LayerSpec("lstm", 64),
              drop, LayerSpec("td_dense", 10), flat,
              *_dense_relu(512), drop, *_dense_relu(64), *_dense_relu(1)],
        "E": [LayerSpec("lstm", 32), LayerSpec("lstm", 32), drop, flat,
              *_dense_relu(512), drop, *_dense_relu(64), *_dense_relu(1)],
        "gru": [LayerSpec("gru", 64), LayerSpec("gru", 64), flat,
                *_dense_relu(512), *_dense_relu(64), *_dense_relu(1)],
        "bilstm": [LayerSpec("bilstm", 64), LayerSpec("bilstm", 64), flat,
                   *_dense_relu(512), *_dense_relu(64), *_dense_relu(1)],
        "at_lstm": [LayerSpec("bilstm", 64),
                    LayerSpec("attention", mode="reweight"),
                    LayerSpec("lstm", 64, return_sequences=False),
                    *_dense_relu(512), *_dense_relu(64), *_dense_relu(1)],
        "nn": [flat, *_dense_relu(1024), *_dense_relu(512), *_dense_relu(128),
               *_dense_relu(1)],
        "linear": [flat, LayerSpec("dense", 1)],
    }
    if name not in specs:
        raise ValueError(f"unknown model name {name!r} "
                         f"(expected one of {', '.join(sorted(specs))})")
    return ModelSpec(name=name, layers=tuple(specs[name]))


MODEL_NAMES = ("A", "B", "C", "D", "E", "gru", "bilstm", "at_lstm", "nn", "linear")


class Model:
    """A built architecture: layer objects plus their parameter store."""

    def __init__(self, spec: ModelSpec, store: ParamStore, layers: list):
        self.spec = spec
        self.store = store
        self.layers = layers
        self.training = False
        self.extra = {}  # run metadata carried in the container header

    def forward(self, x: np.ndarray, training: bool | None = None, rng=None):
        """Run the network on one window (T, n) or a batch (B, T, n).

        Returns the output Tensor, shape (1,) or (B, 1).
        """
        training = self.training if training is None else training
        x = np.asarray(x, dtype=np.float64)
        batched = x.ndim == 3
        if not batched:
            x = x[None, :, :]
        t_steps, n_feat = self.spec.input_shape
        if x.shape[1] != t_steps or x.shape[2] != n_feat:
            raise ValueError(f"expected input windows of shape {self.spec.input_shape}, "
                             f"got {x.shape[1:]}")
        out = [Tensor(x[:, t, :]) for t in range(t_steps)]
        for layer in self.layers:
            out = layer.forward(out, training=training, rng=rng)
        return out if batched else K.reshape(out, (1,))


def build_model(spec: ModelSpec, seed: int = 0) -> Model:
    """Instantiate a spec with seeded fan-based uniform weights, zero biases."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    store = ParamStore()
    layers = []
    t_steps, width = spec.input_shape
    is_sequence = True

    for idx, ls in enumerate(spec.layers):
        prefix = f"{idx:02d}.{ls.kind}"
        if ls.kind in RECURRENT_KINDS:
            if not is_sequence:
                raise ValueError(f"{ls.kind} layer needs a sequence input")
            cls = {"rnn": L.Rnn, "lstm": L.Lstm, "gru": L.Gru, "bilstm": L.BiLstm}[ls.kind]
            layer = cls(store, prefix, rng, in_width=width, width=ls.width,
                        return_sequences=ls.return_sequences)
            width = layer.width  # bilstm doubles it
            is_sequence = ls.return_sequences
        elif ls.kind == "attention":
            if not is_sequence:
                raise ValueError("attention layer needs a sequence input")
            layer = L.AdditiveAttention(store, prefix, rng, in_width=width, mode=ls.mode)
            is_sequence = ls.mode == "reweight"
        elif ls.kind == "td_dense":
            if not is_sequence:
                raise ValueError("td_dense layer needs a sequence input")
            layer = L.TimeDistributedDense(store, prefix, rng, in_width=width,
                                           width=ls.width)
            width = ls.width
        elif ls.kind == "dense":
            if is_sequence:
                raise ValueError("dense layer needs a flat input")
            layer = L.Dense(store, prefix, rng, in_width=width, width=ls.width,
                            activation="linear")
            width = ls.width
        elif ls.kind == "flatten":
            if is_sequence:
                width = t_steps * width
            layer = L.Flatten()
            is_sequence = False
        elif ls.kind == "relu":
            layer = L.Relu()
        elif ls.kind == "dropout":
            layer = L.Dropout(ls.rate)
        elif ls.kind == "batchnorm":
            layer = L.BatchNorm(store, prefix, channels=width)
        else:  # unreachable: LayerSpec validates kinds
            raise ValueError(f"unknown layer kind {ls.kind!r}")
        layers.append(layer)

    return Model(spec, store, layers)


def count_params(model: Model) -> int:
    """Total scalar parameters, batch-norm running statistics included."""
    return model.store.count()


def predict(model: Model, x: np.ndarray):
    """Inference on normalized windows; float for one window, 1-D array for a batch."""
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("input contains non-finite values")
    if np.abs(x).max(initial=0.0) > 100.0:
        raise ValueError("input magnitudes look un-normalized (|x| > 100)")
    out = model.forward(x, training=False)
    return out.data[:, 0].copy() if x.ndim == 3 else float(out.data[0])


# ---------------------------------------------------------------------------
# linear baseline

@dataclass
class LinearModel:
    """Affine predictor over the flattened 105-feature window."""

    weights: np.ndarray
    intercept: float

    def predict(self, x: np.ndarray):
        x = np.asarray(x, dtype=np.float64)
        flat = x.reshape(-1, self.weights.size) if x.ndim > 1 else x.reshape(1, -1)
        out = flat @ self.weights + self.intercept
        return float(out[0]) if x.ndim <= 2 and out.size == 1 else out


def fit_linear(x: np.ndarray, y: np.ndarray, ridge: float = 1e-8) -> LinearModel:
    """Least squares over flattened windows via normal equations.

    The default tiny ridge term keeps the system solvable when features are
    collinear or samples are scarce; pass ridge=0 for the bare normal
    equations (raises on a singular system).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    flat = x.reshape(x.shape[0], -1)
    if flat.shape[0] != y.size:
        raise ValueError("sample count mismatch between inputs and targets")
    a = np.hstack([flat, np.ones((flat.shape[0], 1))])
    gram = a.T @ a
    if ridge:
        gram = gram + ridge * np.eye(gram.shape[0])
    theta = np.linalg.solve(gram, a.T @ y)
    return LinearModel(weights=theta[:-1].copy(), intercept=float(theta[-1]))


# ---------------------------------------------------------------------------
# serialization

def dumps(model: Model) -> bytes:
    """Serialize to the checksummed binary container.

    Layout: magic, u32 format version, u64 header length, JSON header (spec,
    parameter manifest, extra metadata), float64 little-endian payload in
    manifest order, trailing sha256 of everything before it.
    """
    header = {
        "name": model.spec.name,
        "input_shape": list(model.spec.input_shape),
        "layers": [asdict(ls) for ls in model.spec.layers],
        "params": [
            {"name": name, "shape": list(tensor.shape), "trainable": trainable}
            for name, tensor, trainable in model.store.items()
        ],
        "extra": model.extra,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = b"".join(
        np.ascontiguousarray(tensor.data, dtype="<f8").tobytes()
        for tensor in model.store.tensors()
    )
    body = (_MAGIC + struct.pack("<I", _FORMAT_VERSION)
            + struct.pack("<Q", len(header_bytes)) + header_bytes + payload)
    return body + hashlib.sha256(body).digest()


def loads(raw: bytes, source: str = "model data") -> Model:
    """Rebuild a model from container bytes; verifies checksum, magic, version."""
    if len(raw) < len(_MAGIC) + 4 + 8 + 32:
        raise ModelFileError(f"{source}: too short to be a model container")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ModelFileError(f"{source}: checksum mismatch (corrupt or truncated)")
    if body[:4] != _MAGIC:
        raise ModelFileError(f"{source}: not a model container")
    version = struct.unpack("<I", body[4:8])[0]
    if version != _FORMAT_VERSION:
        raise ModelFileError(f"{source}: format version {version} not supported "
                             f"(expected {_FORMAT_VERSION})")
    header_len = struct.unpack("<Q", body[8:16])[0]
    header = json.loads(body[16:16 + header_len].decode("utf-8"))
    payload = body[16 + header_len:]

    spec = ModelSpec(
        name=header["name"],
        layers=tuple(LayerSpec(**d) for d in header["layers"]),
        input_shape=tuple(header["input_shape"]),
    )
    model = build_model(spec, seed=0)
    model.extra = header.get("extra", {})

    manifest = header["params"]
    names = [name for name, _, _ in model.store.items()]
    if names != [entry["name"] for entry in manifest]:
        raise ModelFileError(f"{source}: parameter manifest does not match the spec")
    expected = sum(int(np.prod(entry["shape"])) for entry in manifest) * 8
    if len(payload) != expected:
        raise ModelFileError(f"{source}: payload length {len(payload)} != {expected}")

    offset = 0
    for entry in manifest:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) * 8
        block = np.frombuffer(payload[offset:offset + size], dtype="<f8")
        model.store[entry["name"]].data = block.reshape(shape).astype(np.float64)
        offset += size
    return model


def save(model: Model, path) -> None:
    """Write the model container to a file."""
    Path(path).write_bytes(dumps(model))


def load(path) -> Model:
    """Read a model container from a file."""
    return loads(Path(path).read_bytes(), source=str(path))
