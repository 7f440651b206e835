"""Differentiable layers: recurrent cells, attention, dense, dropout, batchnorm.

All layers operate on float64 Tensors from the kernel module. A sequence is a
list of per-timestep Tensors, each shaped (batch, width) or (width,) for a
single sample; both forms work because every op broadcasts the same way.
Weights are stored input-by-output so batched rows multiply on the left
(y = x @ W + b).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernel as K
from .kernel import ParamStore, Tensor

Sequence = list  # list[Tensor], one entry per timestep, oldest first


# ---------------------------------------------------------------------------
# initialization

def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    """Fan-based uniform draw on [-limit, limit], limit = sqrt(6/(fan_in+fan_out))."""
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def _weight(store: ParamStore, name: str, rng, fan_in: int, fan_out: int) -> Tensor:
    return store.add(name, Tensor(glorot_uniform(rng, fan_in, fan_out)))


def _bias(store: ParamStore, name: str, width: int) -> Tensor:
    return store.add(name, Tensor(np.zeros(width)))


def _zeros_like_hidden(x_t: Tensor, width: int) -> Tensor:
    """Initial recurrent state: zeros, batched to match the input timestep."""
    if x_t.data.ndim == 1:
        return Tensor(np.zeros(width))
    return Tensor(np.zeros((x_t.data.shape[0], width)))


# ---------------------------------------------------------------------------
# recurrent parameter bundles and step functions

@dataclass
class RnnParams:
    w_x: Tensor  # (n, m)
    w_h: Tensor  # (m, m)
    b: Tensor    # (m,)


def rnn_step(x_t: Tensor, h_prev: Tensor, params: RnnParams) -> Tensor:
    """h_t = tanh(W_h h_prev + W_x x_t + b)."""
    return K.tanh(x_t @ params.w_x + h_prev @ params.w_h + params.b)


@dataclass
class LstmParams:
    w_xf: Tensor
    w_xi: Tensor
    w_xo: Tensor
    w_xc: Tensor
    w_hf: Tensor
    w_hi: Tensor
    w_ho: Tensor
    w_hc: Tensor
    b_f: Tensor
    b_i: Tensor
    b_o: Tensor
    b_c: Tensor


@dataclass
class LstmState:
    h: Tensor  # hidden output h_t
    c: Tensor  # cell memory C_t


def lstm_step(x_t: Tensor, state_prev: LstmState, params: LstmParams) -> LstmState:
    """One LSTM step: sigmoid forget/input/output gates, tanh candidate.

    f = sigm(W_f [h, x] + b_f)      i = sigm(W_i [h, x] + b_i)
    o = sigm(W_o [h, x] + b_o)      C~ = tanh(W_c [h, x] + b_c)
    C_t = f * C_prev + i * C~       h_t = o * tanh(C_t)
    """
    h, c = state_prev.h, state_prev.c
    f = K.sigmoid(x_t @ params.w_xf + h @ params.w_hf + params.b_f)
    i = K.sigmoid(x_t @ params.w_xi + h @ params.w_hi + params.b_i)
    o = K.sigmoid(x_t @ params.w_xo + h @ params.w_ho + params.b_o)
    c_tilde = K.tanh(x_t @ params.w_xc + h @ params.w_hc + params.b_c)
    c_t = f * c + i * c_tilde
    h_t = o * K.tanh(c_t)
    return LstmState(h=h_t, c=c_t)


@dataclass
class GruParams:
    w_xz: Tensor
    w_xr: Tensor
    w_xh: Tensor
    w_hz: Tensor
    w_hr: Tensor
    w_hh: Tensor
    b_z: Tensor
    b_r: Tensor
    b_h: Tensor


def gru_step(x_t: Tensor, h_prev: Tensor, params: GruParams) -> Tensor:
    """One GRU step. The reset gate scales h_prev before the recurrent matmul.

    z = sigm(W_z x + U_z h + b_z)   r = sigm(W_r x + U_r h + b_r)
    h~ = tanh(W_h x + U_h (r * h) + b_h)
    h_t = (1 - z) * h + z * h~
    """
    z = K.sigmoid(x_t @ params.w_xz + h_prev @ params.w_hz + params.b_z)
    r = K.sigmoid(x_t @ params.w_xr + h_prev @ params.w_hr + params.b_r)
    h_tilde = K.tanh(x_t @ params.w_xh + (r * h_prev) @ params.w_hh + params.b_h)
    return (1.0 - z) * h_prev + z * h_tilde


# ---------------------------------------------------------------------------
# layer classes

class Rnn:
    """Vanilla recurrent layer, tanh activation."""

    def __init__(self, store: ParamStore, prefix: str, rng, in_width: int,
                 width: int, return_sequences: bool = True):
        self.width = width
        self.return_sequences = return_sequences
        self.params = RnnParams(
            w_x=_weight(store, f"{prefix}.w_x", rng, in_width, width),
            w_h=_weight(store, f"{prefix}.w_h", rng, width, width),
            b=_bias(store, f"{prefix}.b", width),
        )

    def initial_state(self, x_t: Tensor) -> Tensor:
        return _zeros_like_hidden(x_t, self.width)

    def step(self, x_t: Tensor, state: Tensor) -> Tensor:
        return rnn_step(x_t, state, self.params)

    @staticmethod
    def output(state: Tensor) -> Tensor:
        return state

    def forward(self, x_seq: Sequence, training: bool = False, rng=None):
        return run_sequence(self, x_seq, "all" if self.return_sequences else "last")


class Lstm:
    """LSTM layer with forget/input/output gates and a tanh candidate."""

    def __init__(self, store: ParamStore, prefix: str, rng, in_width: int,
                 width: int, return_sequences: bool = True):
        self.width = width
        self.return_sequences = return_sequences
        n, m = in_width, width
        self.params = LstmParams(
            w_xf=_weight(store, f"{prefix}.w_xf", rng, n, m),
            w_xi=_weight(store, f"{prefix}.w_xi", rng, n, m),
            w_xo=_weight(store, f"{prefix}.w_xo", rng, n, m),
            w_xc=_weight(store, f"{prefix}.w_xc", rng, n, m),
            w_hf=_weight(store, f"{prefix}.w_hf", rng, m, m),
            w_hi=_weight(store, f"{prefix}.w_hi", rng, m, m),
            w_ho=_weight(store, f"{prefix}.w_ho", rng, m, m),
            w_hc=_weight(store, f"{prefix}.w_hc", rng, m, m),
            b_f=_bias(store, f"{prefix}.b_f", m),
            b_i=_bias(store, f"{prefix}.b_i", m),
            b_o=_bias(store, f"{prefix}.b_o", m),
            b_c=_bias(store, f"{prefix}.b_c", m),
        )

    def initial_state(self, x_t: Tensor) -> LstmState:
        return LstmState(h=_zeros_like_hidden(x_t, self.width),
                         c=_zeros_like_hidden(x_t, self.width))

    def step(self, x_t: Tensor, state: LstmState) -> LstmState:
        return lstm_step(x_t, state, self.params)

    @staticmethod
    def output(state: LstmState) -> Tensor:
        return state.h

    def forward(self, x_seq: Sequence, training: bool = False, rng=None):
        return run_sequence(self, x_seq, "all" if self.return_sequences else "last")


class Gru:
    """GRU layer with update and reset gates."""

    def __init__(self, store: ParamStore, prefix: str, rng, in_width: int,
                 width: int, return_sequences: bool = True):
        self.width = width
        self.return_sequences = return_sequences
        n, m = in_width, width
        self.params = GruParams(
            w_xz=_weight(store, f"{prefix}.w_xz", rng, n, m),
            w_xr=_weight(store, f"{prefix}.w_xr", rng, n, m),
            w_xh=_weight(store, f"{prefix}.w_xh", rng, n, m),
            w_hz=_weight(store, f"{prefix}.w_hz", rng, m, m),
            w_hr=_weight(store, f"{prefix}.w_hr", rng, m, m),
            w_hh=_weight(store, f"{prefix}.w_hh", rng, m, m),
            b_z=_bias(store, f"{prefix}.b_z", m),
            b_r=_bias(store, f"{prefix}.b_r", m),
            b_h=_bias(store, f"{prefix}.b_h", m),
        )

    def initial_state(self, x_t: Tensor) -> Tensor:
        return _zeros_like_hidden(x_t, self.width)

    def step(self, x_t: Tensor, state: Tensor) -> Tensor:
        return gru_step(x_t, state, self.params)

    @staticmethod
    def output(state: Tensor) -> Tensor:
        return state

    def forward(self, x_seq: Sequence, training: bool = False, rng=None):
        return run_sequence(self, x_seq, "all" if self.return_sequences else "last")


def run_sequence(layer, x_seq: Sequence, mode: str = "all"):
    """Run a recurrent layer left-to-right from a zero state.

    mode "all" returns the list of hidden outputs per timestep; mode "last"
    returns only the final hidden output.
    """
    if not x_seq:
        raise ValueError("run_sequence: empty sequence")
    if mode not in ("all", "last"):
        raise ValueError(f"run_sequence: unknown mode {mode!r}")
    state = layer.initial_state(x_seq[0])
    outputs = []
    for x_t in x_seq:
        state = layer.step(x_t, state)
        outputs.append(layer.output(state))
    return outputs if mode == "all" else outputs[-1]


class BiLstm:
    """Bidirectional LSTM: per-timestep concat of forward and backward passes.

    Output width is 2 * width, forward half first.
    """

    def __init__(self, store: ParamStore, prefix: str, rng, in_width: int,
                 width: int, return_sequences: bool = True):
        self.width = 2 * width
        self.return_sequences = return_sequences
        self.fwd = Lstm(store, f"{prefix}.fwd", rng, in_width, width)
        self.bwd = Lstm(store, f"{prefix}.bwd", rng, in_width, width)

    def forward(self, x_seq: Sequence, training: bool = False, rng=None):
        out = bilstm(x_seq, self.fwd, self.bwd)
        return out if self.return_sequences else out[-1]


def bilstm(x_seq: Sequence, fwd_layer: Lstm, bwd_layer: Lstm) -> Sequence:
    """Forward pass over x_1..x_T concatenated with backward pass over x_T..x_1."""
    fwd_out = run_sequence(fwd_layer, x_seq, "all")
    bwd_out = run_sequence(bwd_layer, list(reversed(x_seq)), "all")[::-1]
    return [K.concat([f, b], axis=-1) for f, b in zip(fwd_out, bwd_out)]


# ---------------------------------------------------------------------------
# attention

@dataclass
class AttentionParams:
    w: Tensor  # (m, a)
    b: Tensor  # (a,)
    v: Tensor  # (a,)


def attention_weights(h_seq: Sequence, params: AttentionParams) -> Tensor:
    """Additive scores e_t = v . tanh(W h_t + b), softmaxed over timesteps."""
    scores = []
    for h_t in h_seq:
        e_t = K.tanh(h_t @ params.w + params.b) @ params.v
        shape = (-1, 1) if h_t.data.ndim == 2 else (1,)
        scores.append(K.reshape(e_t, shape))
    return K.softmax(K.concat(scores, axis=-1), axis=-1)


def _alpha_slice(alphas: Tensor, t: int) -> Tensor:
    if alphas.data.ndim == 2:
        return alphas[:, t:t + 1]
    return alphas[t:t + 1]


def attention(h_seq: Sequence, params: AttentionParams) -> Tensor:
    """Attention context: the alpha-weighted sum of hidden states."""
    alphas = attention_weights(h_seq, params)
    terms = [_alpha_slice(alphas, t) * h_t for t, h_t in enumerate(h_seq)]
    out = terms[0]
    for term in terms[1:]:
        out = out + term
    return out


class AdditiveAttention:
    """Additive attention over a hidden sequence.

    mode "context" collapses the sequence to the weighted sum; mode
    "reweight" keeps the sequence, scaling each timestep by its weight.
    """

    def __init__(self, store: ParamStore, prefix: str, rng, in_width: int,
                 mode: str = "context"):
        if mode not in ("context", "reweight"):
            raise ValueError(f"attention: unknown mode {mode!r}")
        self.mode = mode
        self.width = in_width
        self.params = AttentionParams(
            w=_weight(store, f"{prefix}.w", rng, in_width, in_width),
            b=_bias(store, f"{prefix}.b", in_width),
            v=store.add(f"{prefix}.v",
                        Tensor(glorot_uniform(rng, in_width, 1)[:, 0])),
        )

    def forward(self, h_seq: Sequence, training: bool = False, rng=None):
        if self.mode == "context":
            return attention(h_seq, self.params)
        alphas = attention_weights(h_seq, self.params)
        return [_alpha_slice(alphas, t) * h_t for t, h_t in enumerate(h_seq)]


# ---------------------------------------------------------------------------
# dense, time-distributed dense, flatten

class Dense:
    """Fully connected layer y = act(x W + b), activation relu or linear."""

    def __init__(self, store: ParamStore, prefix: str, rng, in_width: int,
                 width: int, activation: str = "linear"):
        if activation not in ("linear", "relu"):
            raise ValueError(f"dense: unknown activation {activation!r}")
        self.width = width
        self.activation = activation
        self.w = _weight(store, f"{prefix}.w", rng, in_width, width)
        self.b = _bias(store, f"{prefix}.b", width)

    def forward(self, x: Tensor, training: bool = False, rng=None) -> Tensor:
        y = x @ self.w + self.b
        return K.relu(y) if self.activation == "relu" else y


class TimeDistributedDense:
    """One shared linear projection applied independently at every timestep."""

    def __init__(self, store: ParamStore, prefix: str, rng, in_width: int,
                 width: int):
        self.width = width
        self.w = _weight(store, f"{prefix}.w", rng, in_width, width)
        self.b = _bias(store, f"{prefix}.b", width)

    def forward(self, x_seq: Sequence, training: bool = False, rng=None) -> Sequence:
        return [x_t @ self.w + self.b for x_t in x_seq]


class Flatten:
    """Concatenate a sequence along the feature axis, oldest timestep first."""

    def forward(self, x_seq, training: bool = False, rng=None) -> Tensor:
        if isinstance(x_seq, Tensor):
            return x_seq
        return K.concat(x_seq, axis=-1)


class Relu:
    """Standalone elementwise ReLU."""

    def forward(self, x, training: bool = False, rng=None):
        if isinstance(x, Tensor):
            return K.relu(x)
        return [K.relu(x_t) for x_t in x]


# ---------------------------------------------------------------------------
# dropout and batch normalization

class Dropout:
    """Inverted dropout: zero with probability rate while training, scale
    survivors by 1/(1-rate); identity at inference."""

    def __init__(self, rate: float):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate

    def _mask(self, shape, rng) -> Tensor:
        keep = rng.random(shape) >= self.rate
        return Tensor(keep.astype(np.float64) / (1.0 - self.rate))

    def forward(self, x, training: bool = False, rng=None):
        if not training or self.rate == 0.0:
            return x
        if rng is None:
            raise ValueError("dropout in training mode needs an rng")
        if isinstance(x, Tensor):
            return x * self._mask(x.shape, rng)
        return [x_t * self._mask(x_t.shape, rng) for x_t in x]


def dropout(x, rate: float, training: bool, rng=None):
    return Dropout(rate).forward(x, training=training, rng=rng)


class BatchNorm:
    """Per-channel standardization over the batch, channel axis last.

    Training uses batch statistics and updates running statistics with
    momentum 0.99; inference normalizes with the running statistics. For a
    sequence input the statistics pool every timestep of every sample, so a
    width-m sequence contributes batch*T rows per channel. gamma and beta are
    trainable; the running mean and variance are stored but not trained.
    """

    EPS = 1e-5

    def __init__(self, store: ParamStore, prefix: str, channels: int,
                 momentum: float = 0.99):
        self.channels = channels
        self.momentum = momentum
        self.gamma = store.add(f"{prefix}.gamma", Tensor(np.ones(channels)))
        self.beta = store.add(f"{prefix}.beta", Tensor(np.zeros(channels)))
        self.running_mean = store.add(f"{prefix}.running_mean",
                                      Tensor(np.zeros(channels)), trainable=False)
        self.running_var = store.add(f"{prefix}.running_var",
                                     Tensor(np.ones(channels)), trainable=False)

    def _normalize_train(self, x: Tensor) -> Tensor:
        rows = x.data.reshape(-1, self.channels)
        if rows.shape[0] < 2:
            raise ValueError("batchnorm needs at least 2 rows in training mode")
        flat = K.reshape(x, (-1, self.channels))
        mu = K.mean(flat, axis=0)
        var = K.mean((flat - mu) ** 2.0, axis=0)
        # running stats track the batch moments outside the tape
        m = self.momentum
        self.running_mean.data = m * self.running_mean.data + (1 - m) * mu.data
        self.running_var.data = m * self.running_var.data + (1 - m) * var.data
        x_hat = (flat - mu) * (var + self.EPS) ** -0.5
        return K.reshape(self.gamma * x_hat + self.beta, x.shape)

    def _normalize_infer(self, x: Tensor) -> Tensor:
        scale = self.gamma * (self.running_var + self.EPS) ** -0.5
        return (x - self.running_mean) * scale + self.beta

    def forward(self, x, training: bool = False, rng=None):
        if isinstance(x, Tensor):
            return self._normalize_train(x) if training else self._normalize_infer(x)
        if training:
            # pool the whole sequence into one (batch*T, channels) block
            rows = [K.reshape(x_t, (-1, self.channels)) for x_t in x]
            counts = [r.shape[0] for r in rows]
            normalized = self._normalize_train(K.concat(rows, axis=0))
            out, offset = [], 0
            for x_t, count in zip(x, counts):
                piece = normalized[offset:offset + count]
                out.append(K.reshape(piece, x_t.shape))
                offset += count
            return out
        return [self._normalize_infer(x_t) for x_t in x]
