"""Differentiable building blocks with explicit forward/backward passes.

Every sequence function takes time on axis 0 and accepts arbitrary batch
axes between time and features, so ``(T, D)`` and ``(T, B, D)`` both work.
All layers here are causal along time, which means end-padding a batch
never changes the outputs at valid positions.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from ..errors import ShapeError

INIT_SCALE = 0.05
FORGET_BIAS = 1.0


def uniform_init(rng: np.random.Generator, shape, scale: float = INIT_SCALE) -> np.ndarray:
    return rng.uniform(-scale, scale, size=shape)


def sigmoid(x):
    # tanh form avoids overflow warnings for large |x|
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def log_softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    m = np.max(logits, axis=axis, keepdims=True)
    shifted = logits - m
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def softmax_with_temperature(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Log-probabilities of ``softmax(logits / temperature)`` along the last axis."""
    if not temperature > 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    return log_softmax(np.asarray(logits, dtype=np.float64) / temperature)


# -- LSTM ---------------------------------------------------------------------


class LstmParams(NamedTuple):
    kernel: np.ndarray  # (input_dim + hidden, 4 * hidden), gates i, f, g, o
    bias: np.ndarray  # (4 * hidden,)

    @property
    def hidden(self) -> int:
        return self.bias.shape[0] // 4

    @property
    def input_dim(self) -> int:
        return self.kernel.shape[0] - self.hidden


def init_lstm(rng: np.random.Generator, input_dim: int, hidden: int) -> LstmParams:
    kernel = uniform_init(rng, (input_dim + hidden, 4 * hidden))
    bias = np.zeros(4 * hidden)
    bias[hidden : 2 * hidden] = FORGET_BIAS
    return LstmParams(kernel, bias)


def lstm_zero_state(hidden: int, batch_shape=()) -> tuple[np.ndarray, np.ndarray]:
    return np.zeros((*batch_shape, hidden)), np.zeros((*batch_shape, hidden))


def _check_lstm(params: LstmParams, x: np.ndarray):
    if params.kernel.shape[1] != 4 * params.hidden or params.kernel.shape[0] <= params.hidden:
        raise ShapeError(f"bad LSTM kernel shape {params.kernel.shape} for bias {params.bias.shape}")
    if x.shape[-1] != params.input_dim:
        raise ShapeError(f"LSTM expects input dim {params.input_dim}, got {x.shape[-1]}")


def _cell(params, x, h, c):
    H = params.hidden
    xh = np.concatenate([x, h], axis=-1)
    z = xh @ params.kernel + params.bias
    i = sigmoid(z[..., :H])
    f = sigmoid(z[..., H : 2 * H])
    g = np.tanh(z[..., 2 * H : 3 * H])
    o = sigmoid(z[..., 3 * H :])
    c_new = f * c + i * g
    tc = np.tanh(c_new)
    return o * tc, c_new, (xh, i, f, g, o, c, tc)


def lstm_step(params: LstmParams, x: np.ndarray, state=None):
    """One LSTM time step; returns ``(output, (h, c))``."""
    x = np.asarray(x, dtype=np.float64)
    _check_lstm(params, x)
    if state is None:
        state = lstm_zero_state(params.hidden, x.shape[:-1])
    h, c = state
    if h.shape[-1] != params.hidden or c.shape != h.shape:
        raise ShapeError(f"LSTM state shape {h.shape}/{c.shape} does not match hidden size {params.hidden}")
    h, c, _ = _cell(params, x, h, c)
    return h, (h, c)


def lstm_forward(params: LstmParams, xs: np.ndarray, state=None):
    """Run an LSTM over ``xs`` (time first). Returns ``(outputs, final_state, cache)``."""
    xs = np.asarray(xs, dtype=np.float64)
    _check_lstm(params, xs)
    if state is None:
        state = lstm_zero_state(params.hidden, xs.shape[1:-1])
    h, c = state
    outputs = np.empty((*xs.shape[:-1], params.hidden))
    steps = []
    for t in range(xs.shape[0]):
        h, c, saved = _cell(params, xs[t], h, c)
        outputs[t] = h
        steps.append(saved)
    return outputs, (h, c), (params, steps, xs.shape[-1])


def lstm_backward(d_outputs: np.ndarray, cache, d_state=None):
    """Backprop through time. Returns ``(d_xs, LstmParams-shaped grads, d_initial_state)``."""
    params, steps, input_dim = cache
    H = params.hidden
    d_kernel = np.zeros_like(params.kernel)
    d_bias = np.zeros_like(params.bias)
    d_xs = np.empty((*d_outputs.shape[:-1], input_dim))
    if d_state is None:
        dh_next = np.zeros(d_outputs.shape[1:])
        dc_next = np.zeros(d_outputs.shape[1:])
    else:
        dh_next, dc_next = d_state
    for t in range(len(steps) - 1, -1, -1):
        xh, i, f, g, o, c_prev, tc = steps[t]
        dh = d_outputs[t] + dh_next
        do = dh * tc
        dc = dc_next + dh * o * (1.0 - tc * tc)
        dz = np.concatenate(
            [dc * g * i * (1.0 - i), dc * c_prev * f * (1.0 - f), dc * i * (1.0 - g * g), do * o * (1.0 - o)],
            axis=-1,
        )
        dc_next = dc * f
        d_kernel += xh.reshape(-1, xh.shape[-1]).T @ dz.reshape(-1, 4 * H)
        d_bias += dz.reshape(-1, 4 * H).sum(axis=0)
        dxh = dz @ params.kernel.T
        d_xs[t] = dxh[..., :input_dim]
        dh_next = dxh[..., input_dim:]
    return d_xs, LstmParams(d_kernel, d_bias), (dh_next, dc_next)


# -- time convolution ---------------------------------------------------------


def time_conv_reduce(xs: np.ndarray, factor: int, kernel: np.ndarray, bias: np.ndarray):
    """Map each window of ``factor`` consecutive frames to one frame.

    The last window is zero-padded; output length is ``ceil(T / factor)``.
    ``kernel`` has shape ``(factor * D, D_out)`` and acts on the window's
    frames concatenated in time order. Returns ``(outputs, cache)``.
    """
    if factor < 1:
        raise ValueError(f"factor must be >= 1, got {factor}")
    xs = np.asarray(xs, dtype=np.float64)
    T, D = xs.shape[0], xs.shape[-1]
    if kernel.shape[0] != factor * D:
        raise ShapeError(f"time-conv kernel expects {kernel.shape[0]} inputs, window gives {factor * D}")
    batch = xs.shape[1:-1]
    n_out = -(-T // factor)
    if n_out == 0:
        return np.zeros((0, *batch, kernel.shape[1])), (xs.shape, None, kernel, factor)
    padded = np.zeros((n_out * factor, *batch, D))
    padded[:T] = xs
    windows = np.moveaxis(padded.reshape(n_out, factor, *batch, D), 1, -2).reshape(n_out, *batch, factor * D)
    return windows @ kernel + bias, (xs.shape, windows, kernel, factor)


def time_conv_backward(d_out: np.ndarray, cache):
    in_shape, windows, kernel, factor = cache
    T, D = in_shape[0], in_shape[-1]
    batch = in_shape[1:-1]
    if windows is None:
        return np.zeros(in_shape), np.zeros_like(kernel), np.zeros(kernel.shape[1])
    n_out = windows.shape[0]
    d_kernel = windows.reshape(-1, windows.shape[-1]).T @ d_out.reshape(-1, kernel.shape[1])
    d_bias = d_out.reshape(-1, kernel.shape[1]).sum(axis=0)
    d_windows = (d_out @ kernel.T).reshape(n_out, *batch, factor, D)
    d_padded = np.moveaxis(d_windows, -2, 1).reshape(n_out * factor, *batch, D)
    return d_padded[:T], d_kernel, d_bias


# -- joint network --------------------------------------------------------------


class JointParams(NamedTuple):
    enc_proj: np.ndarray  # (enc_dim, joint_dim)
    dec_proj: np.ndarray  # (dec_dim, joint_dim)
    bias: np.ndarray  # (joint_dim,)
    out_kernel: np.ndarray  # (joint_dim, V + 1)
    out_bias: np.ndarray  # (V + 1,)


def init_joint(rng, enc_dim: int, dec_dim: int, joint_dim: int, num_outputs: int) -> JointParams:
    return JointParams(
        uniform_init(rng, (enc_dim, joint_dim)),
        uniform_init(rng, (dec_dim, joint_dim)),
        np.zeros(joint_dim),
        uniform_init(rng, (joint_dim, num_outputs)),
        np.zeros(num_outputs),
    )


def _check_joint(h_enc, h_dec, p: JointParams):
    if h_enc.shape[-1] != p.enc_proj.shape[0] or h_dec.shape[-1] != p.dec_proj.shape[0]:
        raise ShapeError(
            f"joint expects enc/dec dims {p.enc_proj.shape[0]}/{p.dec_proj.shape[0]}, "
            f"got {h_enc.shape[-1]}/{h_dec.shape[-1]}"
        )


def joint_forward(h_enc: np.ndarray, h_dec: np.ndarray, params: JointParams) -> np.ndarray:
    """Logits ``out(tanh(enc_proj h_enc + dec_proj h_dec + b))`` for one (t, u) pair."""
    h_enc = np.asarray(h_enc, dtype=np.float64)
    h_dec = np.asarray(h_dec, dtype=np.float64)
    _check_joint(h_enc, h_dec, params)
    hidden = np.tanh(h_enc @ params.enc_proj + h_dec @ params.dec_proj + params.bias)
    return hidden @ params.out_kernel + params.out_bias


def joint_grid_forward(h_enc: np.ndarray, h_dec: np.ndarray, params: JointParams):
    """Logits for every (t, u): ``h_enc`` is (T, E), ``h_dec`` is (U+1, D) -> (T, U+1, V+1)."""
    _check_joint(h_enc, h_dec, params)
    a = h_enc @ params.enc_proj
    b = h_dec @ params.dec_proj
    hidden = np.tanh(a[:, None, :] + b[None, :, :] + params.bias)
    logits = hidden @ params.out_kernel + params.out_bias
    return logits, (h_enc, h_dec, hidden, params)


def joint_grid_backward(d_logits: np.ndarray, cache):
    h_enc, h_dec, hidden, p = cache
    J = hidden.shape[-1]
    flat_hidden = hidden.reshape(-1, J)
    flat_d = d_logits.reshape(-1, d_logits.shape[-1])
    d_out_kernel = flat_hidden.T @ flat_d
    d_out_bias = flat_d.sum(axis=0)
    d_pre = (d_logits @ p.out_kernel.T) * (1.0 - hidden * hidden)
    d_a = d_pre.sum(axis=1)
    d_b = d_pre.sum(axis=0)
    grads = JointParams(h_enc.T @ d_a, h_dec.T @ d_b, d_a.sum(axis=0), d_out_kernel, d_out_bias)
    return d_a @ p.enc_proj.T, d_b @ p.dec_proj.T, grads


# -- dense softmax head -----------------------------------------------------------


def dense_forward(xs: np.ndarray, kernel: np.ndarray, bias: np.ndarray) -> np.ndarray:
    if xs.shape[-1] != kernel.shape[0]:
        raise ShapeError(f"dense layer expects input dim {kernel.shape[0]}, got {xs.shape[-1]}")
    return xs @ kernel + bias


def dense_backward(d_out: np.ndarray, xs: np.ndarray, kernel: np.ndarray):
    d_kernel = xs.reshape(-1, xs.shape[-1]).T @ d_out.reshape(-1, d_out.shape[-1])
    d_bias = d_out.reshape(-1, d_out.shape[-1]).sum(axis=0)
    return d_out @ kernel.T, d_kernel, d_bias
