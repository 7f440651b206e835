"""Training loop: MSE loss, bias-corrected Adam, seeded shuffling, checkpoints.

A run is fully determined by (seed, data, config). The seed feeds two
independent streams, one for the per-epoch shuffle and one for dropout masks,
so changing the batch size never perturbs initialization.
"""

from __future__ import annotations

import hashlib
import json
import struct
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import kernel as K
from . import models as M
from .kernel import Tensor


class TrainingDiverged(RuntimeError):
    """Raised when the loss stops being finite mid-run."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1000
    learning_rate: float = 1e-3
    batch_size: int = 32
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    checkpoint_every: int = 0  # epochs between checkpoints, 0 disables
    clip_norm: float | None = None  # global-norm gradient clip, None disables

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning rate must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must sit in [0, 1)")


@dataclass
class AdamState:
    t: int
    m: dict
    v: dict

    @classmethod
    def init(cls, store: K.ParamStore) -> "AdamState":
        m = {name: np.zeros_like(t.data) for name, t in store.named(trainable_only=True)}
        v = {name: np.zeros_like(t.data) for name, t in store.named(trainable_only=True)}
        return cls(t=0, m=m, v=v)


@dataclass
class TrainHistory:
    seed: int
    config: dict
    epochs: list = field(default_factory=list)  # (epoch, mse, elapsed_seconds)

    def record(self, epoch: int, mse_value: float, elapsed: float) -> None:
        self.epochs.append((epoch, mse_value, elapsed))

    def final_mse(self) -> float:
        return self.epochs[-1][1]

    def to_csv(self, path) -> None:
        lines = ["epoch,mse,elapsed_seconds"]
        lines += [f"{e},{m:.10g},{t:.3f}" for e, m, t in self.epochs]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def mse(preds, targets) -> float:
    """Mean squared error over plain arrays."""
    preds = np.asarray(preds, dtype=np.float64).reshape(-1)
    targets = np.asarray(targets, dtype=np.float64).reshape(-1)
    if preds.size == 0:
        raise ValueError("mse over an empty set")
    if preds.shape != targets.shape:
        raise ValueError(f"length mismatch: {preds.shape} vs {targets.shape}")
    return float(np.mean((preds - targets) ** 2))


def adam_step(store: K.ParamStore, state: AdamState, config: TrainConfig) -> None:
    """One bias-corrected Adam update from the gradients held on the store.

    m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2
    theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)
    """
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    bias1 = 1.0 - b1 ** state.t
    bias2 = 1.0 - b2 ** state.t
    for name, tensor in store.named(trainable_only=True):
        g = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / bias1
        v_hat = v / bias2
        tensor.data -= config.learning_rate * m_hat / (np.sqrt(v_hat) + config.eps)


def clip_gradients(store: K.ParamStore, max_norm: float) -> None:
    total = 0.0
    grads = []
    for _, tensor in store.named(trainable_only=True):
        if tensor.grad is not None:
            grads.append(tensor.grad)
            total += float((tensor.grad ** 2).sum())
    norm = np.sqrt(total)
    if norm > max_norm and norm > 0:
        scale = max_norm / norm
        for g in grads:
            g *= scale


def train(model: M.Model, x: np.ndarray, y: np.ndarray, config: TrainConfig,
          checkpoint_dir=None) -> TrainHistory:
    """Fit the model to (x, y) windows; returns the per-epoch loss history.

    x: (N, 5, 21) normalized inputs; y: (N,) raw home run targets. The model
    is left in inference mode afterwards. Non-finite loss aborts the run.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    n = x.shape[0]
    if n == 0:
        raise ValueError("training set is empty")
    if x.shape[0] != y.shape[0]:
        raise ValueError("sample count mismatch between inputs and targets")

    shuffle_seq, dropout_seq = np.random.SeedSequence(config.seed).spawn(2)
    shuffle_rng = np.random.default_rng(shuffle_seq)
    dropout_rng = np.random.default_rng(dropout_seq)

    state = AdamState.init(model.store)
    history = TrainHistory(seed=config.seed, config=asdict(config))
    model.training = True
    start = time.monotonic()

    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(n)
        sq_err_total = 0.0
        for lo in range(0, n, config.batch_size):
            idx = order[lo:lo + config.batch_size]
            xb, yb = x[idx], y[idx].reshape(-1, 1)
            model.store.zero_grads()
            out = model.forward(xb, training=True, rng=dropout_rng)
            loss = K.mean((out - Tensor(yb)) ** 2.0)
            batch_mse = loss.item()
            if not np.isfinite(batch_mse):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch} (seed {config.seed}); "
                    f"consider a lower learning rate or clip_norm")
            K.backward(loss)
            if config.clip_norm is not None:
                clip_gradients(model.store, config.clip_norm)
            adam_step(model.store, state, config)
            sq_err_total += batch_mse * len(idx)
        history.record(epoch, sq_err_total / n, time.monotonic() - start)
        if checkpoint_dir and config.checkpoint_every \
                and epoch % config.checkpoint_every == 0:
            path = Path(checkpoint_dir) / f"epoch{epoch:05d}.ckpt"
            save_checkpoint(model, state, path)

    model.training = False
    return history


# ---------------------------------------------------------------------------
# checkpoints: a model container followed by the optimizer moments

_CKPT_MAGIC = b"HRCK"
_CKPT_VERSION = 1


def save_checkpoint(model: M.Model, state: AdamState, path) -> None:
    model_blob = M.dumps(model)
    names = sorted(state.m)
    header = {
        "t": state.t,
        "params": [{"name": n, "shape": list(state.m[n].shape)} for n in names],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = b"".join(
        np.ascontiguousarray(arr, dtype="<f8").tobytes()
        for n in names for arr in (state.m[n], state.v[n])
    )
    body = (_CKPT_MAGIC + struct.pack("<I", _CKPT_VERSION)
            + struct.pack("<Q", len(model_blob)) + model_blob
            + struct.pack("<Q", len(header_bytes)) + header_bytes + payload)
    Path(path).write_bytes(body + hashlib.sha256(body).digest())


def load_checkpoint(path):
    """Returns (model, AdamState) for resuming or inspection."""
    raw = Path(path).read_bytes()
    if len(raw) < 4 + 4 + 8 + 32:
        raise M.ModelFileError(f"{path}: file too short to be a checkpoint")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise M.ModelFileError(f"{path}: checksum mismatch (corrupt or truncated file)")
    if body[:4] != _CKPT_MAGIC:
        raise M.ModelFileError(f"{path}: not a checkpoint file")
    version = struct.unpack("<I", body[4:8])[0]
    if version != _CKPT_VERSION:
        raise M.ModelFileError(f"{path}: checkpoint version {version} not supported")
    model_len = struct.unpack("<Q", body[8:16])[0]
    model = M.loads(body[16:16 + model_len])
    rest = body[16 + model_len:]
    header_len = struct.unpack("<Q", rest[:8])[0]
    header = json.loads(rest[8:8 + header_len].decode("utf-8"))
    payload = rest[8 + header_len:]

    state = AdamState(t=header["t"], m={}, v={})
    offset = 0
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) * 8
        for target in (state.m, state.v):
            block = np.frombuffer(payload[offset:offset + size], dtype="<f8")
            target[entry["name"]] = block.reshape(shape).astype(np.float64)
            offset += size
    return model, state
