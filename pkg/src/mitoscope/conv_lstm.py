"""Peephole convolutional LSTM: single step, sequence unrolling, and
backpropagation through time.

Gate recurrences (all convolutions same-padded, peepholes elementwise):

    i = sigmoid(W_xi * x + W_hi * h_prev + W_ci . c_prev + b_i)
    f = sigmoid(W_xf * x + W_hf * h_prev + W_cf . c_prev + b_f)
    c = f . c_prev + i . tanh(W_xc * x + W_hc * h_prev + b_c)
    o = sigmoid(W_xo * x + W_ho * h_prev + W_co . c + b_o)
    h = o . tanh(c)

Note the output gate peeks at the NEW cell state. Peephole weights are
per-element tensors over [S,H,W].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from .tensor_core import (
    conv2d_same,
    conv2d_same_backward,
    sigmoid,
    tanh_act,
)

__all__ = [
    "CellState",
    "ConvLstmParams",
    "StepTrace",
    "UnrollResult",
    "step",
    "unroll",
    "bptt",
    "init_params",
    "zero_state",
    "xavier_bound",
]


@dataclass
class CellState:
    h: np.ndarray  # [S,H,W], elementwise in (-1,1)
    c: np.ndarray  # [S,H,W]

    def copy(self) -> "CellState":
        return CellState(self.h.copy(), self.c.copy())


@dataclass
class ConvLstmParams:
    """All weights of one layer. Kernel fields are [S,C_in,k,k] (input) and
    [S,S,k,k] (state); peepholes are [S,H,W]; biases are [S]."""
    w_xi: np.ndarray
    w_xf: np.ndarray
    w_xc: np.ndarray
    w_xo: np.ndarray
    w_hi: np.ndarray
    w_hf: np.ndarray
    w_hc: np.ndarray
    w_ho: np.ndarray
    w_ci: np.ndarray
    w_cf: np.ndarray
    w_co: np.ndarray
    b_i: np.ndarray
    b_f: np.ndarray
    b_c: np.ndarray
    b_o: np.ndarray

    @property
    def state_channels(self) -> int:
        return self.w_xi.shape[0]

    @property
    def in_channels(self) -> int:
        return self.w_xi.shape[1]

    def named_arrays(self):
        for f in fields(self):
            yield f.name, getattr(self, f.name)

    def zeros_like(self) -> "ConvLstmParams":
        return ConvLstmParams(*(np.zeros_like(getattr(self, f.name)) for f in fields(self)))

    def copy(self) -> "ConvLstmParams":
        return ConvLstmParams(*(getattr(self, f.name).copy() for f in fields(self)))


@dataclass
class StepTrace:
    prev: CellState
    i: np.ndarray
    f: np.ndarray
    g: np.ndarray  # tanh candidate
    o: np.ndarray
    c: np.ndarray
    tanh_c: np.ndarray
    conv_x: object
    conv_h: object


@dataclass
class UnrollResult:
    states: list  # CellState per step, in forward time order
    final: CellState  # state after the last processed step
    traces: list  # StepTrace per step, in iteration order
    reverse: bool


def zero_state(state_channels: int, height: int, width: int) -> CellState:
    shape = (state_channels, height, width)
    return CellState(np.zeros(shape), np.zeros(shape))


def _stacked(params: ConvLstmParams):
    # gate order i, f, candidate, o; biases ride on the input convolution
    w_x = np.concatenate([params.w_xi, params.w_xf, params.w_xc, params.w_xo], axis=0)
    w_h = np.concatenate([params.w_hi, params.w_hf, params.w_hc, params.w_ho], axis=0)
    b = np.concatenate([params.b_i, params.b_f, params.b_c, params.b_o])
    return w_x, w_h, b


def step(params: ConvLstmParams, x: np.ndarray, prev: CellState) -> tuple[CellState, StepTrace]:
    """One recurrence step. Returns the new state and the trace backward needs."""
    s = params.state_channels
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[0] != params.in_channels:
        raise ValueError(
            f"step: input shape {x.shape} incompatible with kernel input channels "
            f"{params.in_channels}")
    if prev.h.shape != (s,) + x.shape[1:]:
        raise ValueError(
            f"step: previous state shape {prev.h.shape} != expected {(s,) + x.shape[1:]}")
    if params.w_ci.shape != prev.c.shape:
        raise ValueError(
            f"step: peephole shape {params.w_ci.shape} != state shape {prev.c.shape}")

    w_x, w_h, b = _stacked(params)
    z_x, conv_x = conv2d_same(x, w_x, b)
    z_h, conv_h = conv2d_same(prev.h, w_h, np.zeros(4 * s))
    z = z_x + z_h

    i = sigmoid(z[:s] + params.w_ci * prev.c)
    f = sigmoid(z[s:2 * s] + params.w_cf * prev.c)
    g = tanh_act(z[2 * s:3 * s])
    c = f * prev.c + i * g
    o = sigmoid(z[3 * s:] + params.w_co * c)
    tc = tanh_act(c)
    h = o * tc
    return CellState(h, c), StepTrace(prev, i, f, g, o, c, tc, conv_x, conv_h)


def _step_backward(params: ConvLstmParams, tr: StepTrace, d_h: np.ndarray,
                   d_c_in: np.ndarray, grads: ConvLstmParams):
    """Reverse one step. Accumulates parameter gradients into ``grads`` and
    returns (d_x, d_h_prev, d_c_prev).

    The output gate reads the new cell state, so its pre-activation gradient
    feeds back into d_c before the forget/input/candidate split.
    """
    s = params.state_channels
    i, f, g, o = tr.i, tr.f, tr.g, tr.o
    tc = tr.tanh_c

    d_o = d_h * tc
    d_zo = d_o * o * (1.0 - o)
    d_c = d_c_in + d_h * o * (1.0 - tc * tc) + d_zo * params.w_co
    grads.w_co += d_zo * tr.c

    d_i = d_c * g
    d_f = d_c * tr.prev.c
    d_g = d_c * i
    d_c_prev = d_c * f

    d_zi = d_i * i * (1.0 - i)
    d_zf = d_f * f * (1.0 - f)
    d_zg = d_g * (1.0 - g * g)
    grads.w_ci += d_zi * tr.prev.c
    grads.w_cf += d_zf * tr.prev.c
    d_c_prev += d_zi * params.w_ci + d_zf * params.w_cf

    d_z = np.concatenate([d_zi, d_zf, d_zg, d_zo], axis=0)
    d_x, d_wx, d_b = conv2d_same_backward(tr.conv_x, d_z)
    d_h_prev, d_wh, _ = conv2d_same_backward(tr.conv_h, d_z)

    grads.w_xi += d_wx[:s]
    grads.w_xf += d_wx[s:2 * s]
    grads.w_xc += d_wx[2 * s:3 * s]
    grads.w_xo += d_wx[3 * s:]
    grads.w_hi += d_wh[:s]
    grads.w_hf += d_wh[s:2 * s]
    grads.w_hc += d_wh[2 * s:3 * s]
    grads.w_ho += d_wh[3 * s:]
    grads.b_i += d_b[:s]
    grads.b_f += d_b[s:2 * s]
    grads.b_c += d_b[2 * s:3 * s]
    grads.b_o += d_b[3 * s:]
    return d_x, d_h_prev, d_c_prev


def unroll(params: ConvLstmParams, xs, init: CellState, reverse: bool = False) -> UnrollResult:
    """Iterate ``step`` over a frame sequence. With ``reverse`` the sequence
    is consumed from the last frame to the first; the returned per-step
    states are re-aligned to forward time order either way."""
    n = len(xs)
    if n == 0:
        raise ValueError("unroll: cannot unroll an empty sequence")
    order = range(n - 1, -1, -1) if reverse else range(n)
    state = init
    states: list = [None] * n
    traces = []
    for t in order:
        state, tr = step(params, xs[t], state)
        states[t] = state
        traces.append(tr)
    return UnrollResult(states, state, traces, reverse)


def bptt(params: ConvLstmParams, run: UnrollResult, d_hidden,
         d_c_final: np.ndarray | None = None):
    """Backpropagation through time over an unroll.

    ``d_hidden`` holds one upstream gradient per forward-time step (None
    entries mean zero); ``d_c_final`` is an optional extra gradient on the
    final cell state. Returns (param grads, d_inputs in forward order,
    gradient on the initial state).
    """
    n = len(run.traces)
    if len(d_hidden) != n:
        raise ValueError(f"bptt: upstream length {len(d_hidden)} != unroll length {n}")
    grads = params.zeros_like()
    shape = run.final.h.shape
    d_h_next = np.zeros(shape)
    d_c_next = np.zeros(shape) if d_c_final is None else np.asarray(d_c_final, dtype=np.float64)
    d_inputs: list = [None] * n
    for j in range(n - 1, -1, -1):
        t = n - 1 - j if run.reverse else j
        d_h = d_h_next if d_hidden[t] is None else d_hidden[t] + d_h_next
        d_x, d_h_next, d_c_next = _step_backward(params, run.traces[j], d_h, d_c_next, grads)
        d_inputs[t] = d_x
    return grads, d_inputs, CellState(d_h_next, d_c_next)


def xavier_bound(c_in: int, c_out: int, kh: int, kw: int) -> float:
    """Uniform initialization bound sqrt(6 / (fan_in + fan_out)) with
    fan = channels * kernel area."""
    return math.sqrt(6.0 / ((c_in + c_out) * kh * kw))


def init_params(in_channels: int, state_channels: int, height: int, width: int,
                kernel_size: int = 5, seed=0) -> ConvLstmParams:
    """Draw kernels uniform in the Xavier bound; peepholes and biases start
    at zero. ``seed`` may be an int or a numpy Generator; the draw order is
    fixed so results are deterministic."""
    rng = np.random.default_rng(seed)
    k = kernel_size
    bx = xavier_bound(in_channels, state_channels, k, k)
    bh = xavier_bound(state_channels, state_channels, k, k)

    def draw(bound, c_in):
        return rng.uniform(-bound, bound, size=(state_channels, c_in, k, k))

    w_x = [draw(bx, in_channels) for _ in range(4)]
    w_h = [draw(bh, state_channels) for _ in range(4)]
    peep = (state_channels, height, width)
    return ConvLstmParams(
        *w_x, *w_h,
        np.zeros(peep), np.zeros(peep), np.zeros(peep),
        np.zeros(state_channels), np.zeros(state_channels),
        np.zeros(state_channels), np.zeros(state_channels),
    )
