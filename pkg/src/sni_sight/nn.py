"""Minimal float64 neural-network engine: dense layers, an LSTM cell,
inverted dropout, sigmoid cross-entropy, and Adam.

Everything is plain numpy with explicit forward caches and hand-written
backward passes; every backward is validated against central finite
differences in the test suite.  Speed is a non-goal, checkable gradients
are the point.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class NNError(Exception):
    pass


class ShapeMismatch(NNError):
    pass


class NonFiniteValue(NNError):
    pass


class BadRate(NNError):
    pass


def sigmoid(z):
    # stable in both tails
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _require_finite(name, *arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NonFiniteValue(f"non-finite values in {name}")


# ---------------------------------------------------------------------------
# Initialization

def uniform_init(rng, shape, fan_in) -> np.ndarray:
    k = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-k, k, size=shape)


@dataclass
class LstmParams:
    """Gate-stacked LSTM weights; the 4H rows are blocked as
    (input i, forget f, cell g, output o), in that order."""

    W: np.ndarray  # (4H, V) input-to-gates
    U: np.ndarray  # (4H, H) hidden-to-gates
    b: np.ndarray  # (4H,)

    @property
    def hidden(self) -> int:
        return self.U.shape[1]

    @property
    def input_dim(self) -> int:
        return self.W.shape[1]


def init_lstm(rng, input_dim: int, hidden: int, forget_bias: float = 1.0) -> LstmParams:
    W = uniform_init(rng, (4 * hidden, input_dim), input_dim)
    U = uniform_init(rng, (4 * hidden, hidden), hidden)
    b = np.zeros(4 * hidden)
    b[hidden : 2 * hidden] = forget_bias  # start remembering by default
    return LstmParams(W=W, U=U, b=b)


def init_dense(rng, fan_in: int, fan_out: int) -> tuple[np.ndarray, np.ndarray]:
    return uniform_init(rng, (fan_in, fan_out), fan_in), np.zeros(fan_out)


# ---------------------------------------------------------------------------
# LSTM

def lstm_forward(params: LstmParams, inputs, state=None):
    """Run the cell over a sequence; returns (hidden outputs (T, H), final
    (h, c), cache for the backward pass).

    ``inputs`` is either a dense (T, V) array or a 1-D integer array of
    vocabulary indices (each step a one-hot of that index).  States start at
    zero unless ``state`` resumes an earlier (h, c).
    """
    H = params.hidden
    indices = None
    if np.asarray(inputs).ndim == 1 and np.issubdtype(np.asarray(inputs).dtype, np.integer):
        indices = np.asarray(inputs)
        T = len(indices)
        ain = params.W.T[indices]  # (T, 4H) gather == one-hot matmul
    else:
        x = np.asarray(inputs, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != params.input_dim:
            raise ShapeMismatch(f"inputs {x.shape} vs W {params.W.shape}")
        T = x.shape[0]
        ain = x @ params.W.T

    if state is None:
        h_prev = np.zeros(H)
        c_prev = np.zeros(H)
    else:
        h_prev, c_prev = (np.asarray(s, dtype=np.float64) for s in state)

    i_g = np.empty((T, H)); f_g = np.empty((T, H))
    g_g = np.empty((T, H)); o_g = np.empty((T, H))
    c_all = np.empty((T, H)); tc_all = np.empty((T, H)); h_all = np.empty((T, H))
    h0, c0 = h_prev, c_prev
    for t in range(T):
        a = ain[t] + params.U @ h_prev + params.b
        i_g[t] = sigmoid(a[:H])
        f_g[t] = sigmoid(a[H : 2 * H])
        g_g[t] = np.tanh(a[2 * H : 3 * H])
        o_g[t] = sigmoid(a[3 * H :])
        c_all[t] = f_g[t] * c_prev + i_g[t] * g_g[t]
        tc_all[t] = np.tanh(c_all[t])
        h_all[t] = o_g[t] * tc_all[t]
        h_prev, c_prev = h_all[t], c_all[t]

    _require_finite("lstm_forward", h_all, c_all)
    cache = {
        "indices": indices, "x": None if indices is not None else x,
        "i": i_g, "f": f_g, "g": g_g, "o": o_g,
        "c": c_all, "tc": tc_all, "h": h_all, "h0": h0, "c0": c0,
    }
    return h_all, (h_all[T - 1].copy(), c_all[T - 1].copy()), cache


def lstm_backward(params: LstmParams, cache, d_hidden, d_state=None):
    """Exact reverse-mode gradients of lstm_forward.

    ``d_hidden`` is (T, H), the loss gradient at every step's hidden output
    (zeros where unused).  Returns ({"W","U","b"} gradients, input gradients
    (T, V) for dense input or per-step gate-input gradients scattered into
    the used columns for index input).
    """
    H = params.hidden
    i_g, f_g, g_g, o_g = cache["i"], cache["f"], cache["g"], cache["o"]
    c_all, tc_all, h_all = cache["c"], cache["tc"], cache["h"]
    T = h_all.shape[0]
    d_hidden = np.asarray(d_hidden, dtype=np.float64)
    if d_hidden.shape != (T, H):
        raise ShapeMismatch(f"d_hidden {d_hidden.shape}, expected {(T, H)}")

    dW = np.zeros_like(params.W)
    dU = np.zeros_like(params.U)
    db = np.zeros_like(params.b)
    dx = np.zeros((T, params.input_dim))

    dh_carry = np.zeros(H) if d_state is None else np.asarray(d_state[0], dtype=np.float64).copy()
    dc_carry = np.zeros(H) if d_state is None else np.asarray(d_state[1], dtype=np.float64).copy()
    for t in reversed(range(T)):
        c_prev = c_all[t - 1] if t > 0 else cache["c0"]
        h_prev = h_all[t - 1] if t > 0 else cache["h0"]
        dh = d_hidden[t] + dh_carry
        do = dh * tc_all[t]
        dc = dc_carry + dh * o_g[t] * (1.0 - tc_all[t] ** 2)
        di = dc * g_g[t]
        dg = dc * i_g[t]
        df = dc * c_prev
        dc_carry = dc * f_g[t]
        da = np.concatenate([
            di * i_g[t] * (1.0 - i_g[t]),
            df * f_g[t] * (1.0 - f_g[t]),
            dg * (1.0 - g_g[t] ** 2),
            do * o_g[t] * (1.0 - o_g[t]),
        ])
        db += da
        dU += np.outer(da, h_prev)
        if cache["indices"] is not None:
            dW[:, cache["indices"][t]] += da
        else:
            dW += np.outer(da, cache["x"][t])
        dh_carry = params.U.T @ da
        dx[t] = params.W.T @ da
    return {"W": dW, "U": dU, "b": db}, dx


def lstm_hidden_batch(params: LstmParams, indices: np.ndarray) -> np.ndarray:
    """Forward-only final hidden state for a batch of index windows (B, T).

    Vectorized over the batch; used for evaluation where no cache is needed.
    Agrees with lstm_forward run window by window.
    """
    idx = np.asarray(indices)
    if idx.ndim != 2:
        raise ShapeMismatch(f"expected (B, T) indices, got {idx.shape}")
    B, T = idx.shape
    H = params.hidden
    ain = params.W.T[idx]  # (B, T, 4H)
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    for t in range(T):
        a = ain[:, t, :] + h @ params.U.T + params.b
        i = sigmoid(a[:, :H])
        f = sigmoid(a[:, H : 2 * H])
        g = np.tanh(a[:, 2 * H : 3 * H])
        o = sigmoid(a[:, 3 * H :])
        c = f * c + i * g
        h = o * np.tanh(c)
    _require_finite("lstm_hidden_batch", h)
    return h


# ---------------------------------------------------------------------------
# Dense layer

def dense_forward(W: np.ndarray, b: np.ndarray, x: np.ndarray, activation: str = "identity"):
    """Affine map plus activation over a (B, fan_in) batch."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != W.shape[0]:
        raise ShapeMismatch(f"x {x.shape} vs W {W.shape}")
    if activation not in ("identity", "relu"):
        raise NNError(f"unknown activation {activation!r}")
    z = x @ W + b
    y = np.maximum(z, 0.0) if activation == "relu" else z
    _require_finite("dense_forward", y)
    return y, {"x": x, "z": z, "W": W, "activation": activation}


def dense_backward(cache, d_out):
    d_out = np.atleast_2d(np.asarray(d_out, dtype=np.float64))
    if d_out.shape != cache["z"].shape:
        raise ShapeMismatch(f"d_out {d_out.shape} vs z {cache['z'].shape}")
    dz = d_out * (cache["z"] > 0.0) if cache["activation"] == "relu" else d_out
    dW = cache["x"].T @ dz
    db = dz.sum(axis=0)
    dx = dz @ cache["W"].T
    return dW, db, dx


# ---------------------------------------------------------------------------
# Dropout and loss

def dropout(x, rate: float, rng, training: bool):
    """Inverted dropout: survivors are scaled by 1/(1-rate) during training
    so inference is the identity.  Returns (output, mask)."""
    if not 0.0 <= rate < 1.0:
        raise BadRate(f"dropout rate must be in [0, 1), got {rate}")
    x = np.asarray(x, dtype=np.float64)
    if not training or rate == 0.0:
        return x, np.ones_like(x)
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * mask, mask


def sigmoid_ce_loss(logits, targets):
    """Mean sigmoid cross-entropy over all label slots.

    Uses the overflow-safe form max(z,0) - z*y + log(1+exp(-|z|)).  Returns
    (scalar loss, gradient w.r.t. logits), the gradient already divided by
    the slot count.
    """
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if z.shape != y.shape:
        raise ShapeMismatch(f"logits {z.shape} vs targets {y.shape}")
    per_slot = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    loss = float(per_slot.mean())
    grad = (sigmoid(z) - y) / z.size
    _require_finite("sigmoid_ce_loss", grad)
    return loss, grad


# ---------------------------------------------------------------------------
# Adam

@dataclass
class AdamState:
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_init(params: dict, lr: float = 0.01) -> AdamState:
    state = AdamState(lr=lr)
    for name, p in params.items():
        state.m[name] = np.zeros_like(p)
        state.v[name] = np.zeros_like(p)
    return state


def adam_step(params: dict, grads: dict, state: AdamState) -> None:
    """One bias-corrected Adam update, in place."""
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeMismatch(f"{name}: grad {g.shape} vs param {p.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        _require_finite(name, p)


def clip_global_norm(grads: dict, max_norm: float) -> float:
    """Scale all gradients in place so their global L2 norm is at most
    ``max_norm``; returns the pre-clip norm."""
    total = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if max_norm > 0.0 and total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total
