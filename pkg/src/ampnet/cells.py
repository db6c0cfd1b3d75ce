"""Learned building blocks: the convolutional LSTM and the action MLP.

Each layer of the network keeps a bank of convolutional LSTM units that
roll the layer representation forward in time, and one small MLP that maps
the current action vector to attention weights over that bank.  The MLP
head is a softmax, so the combined representation is always a convex
combination of the unit outputs.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import tensor as tz
from .errors import InvalidArgumentError
from .tensor import Tensor

GATES = ("i", "f", "o", "g")


@dataclass
class ConvLSTMParams:
    """Per-gate kernels and biases of one convolutional LSTM unit.

    Gates: ``i`` input, ``f`` forget, ``o`` output, ``g`` candidate.
    ``wx_*`` convolve the step input, ``wh_*`` convolve the previous hidden
    state; all kernels are square and share the hidden channel count.
    """

    wx_i: Tensor
    wh_i: Tensor
    b_i: Tensor
    wx_f: Tensor
    wh_f: Tensor
    b_f: Tensor
    wx_o: Tensor
    wh_o: Tensor
    b_o: Tensor
    wx_g: Tensor
    wh_g: Tensor
    b_g: Tensor

    @property
    def in_channels(self):
        return self.wx_i.shape[1]

    @property
    def hidden_channels(self):
        return self.wx_i.shape[0]

    def named(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class ConvLSTMState:
    """Hidden and cell state of one unit; zero at sequence start."""

    h: Tensor
    c: Tensor


@dataclass
class MLPParams:
    """Two-layer perceptron mapping an action vector to attention logits."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @property
    def action_dim(self):
        return self.w1.shape[1]

    @property
    def out_dim(self):
        return self.w2.shape[0]

    def named(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


def zero_state(hidden_channels, height, width):
    return ConvLSTMState(
        h=Tensor(np.zeros((hidden_channels, height, width))),
        c=Tensor(np.zeros((hidden_channels, height, width))),
    )


def convlstm_step(params, state, x, padding=1):
    """One convolutional LSTM recurrence step; returns the new state.

    i, f, o = sigmoid(conv(x) + conv(h) + b); g = tanh(conv(x) + conv(h) + b);
    c' = f*c + i*g; h' = o*tanh(c').  Pure: arguments are not mutated.
    """
    if x.ndim != 3:
        raise InvalidArgumentError(f"convlstm_step: expected (C,H,W) input, got shape {x.shape}")
    if x.shape[0] != params.in_channels:
        raise InvalidArgumentError(
            f"convlstm_step: input has {x.shape[0]} channels, params expect {params.in_channels}")
    if x.shape[1:] != state.h.shape[1:]:
        raise InvalidArgumentError(
            f"convlstm_step: input spatial dims {x.shape[1:]} do not match state {state.h.shape[1:]}")

    def gate(wx, wh, b):
        return tz.add(tz.conv2d(x, wx, b, padding), tz.conv2d(state.h, wh, None, padding))

    i = tz.sigmoid(gate(params.wx_i, params.wh_i, params.b_i))
    f = tz.sigmoid(gate(params.wx_f, params.wh_f, params.b_f))
    o = tz.sigmoid(gate(params.wx_o, params.wh_o, params.b_o))
    g = tz.tanh(gate(params.wx_g, params.wh_g, params.b_g))
    c = tz.add(tz.mul(f, state.c), tz.mul(i, g))
    h = tz.mul(o, tz.tanh(c))
    return ConvLSTMState(h=h, c=c)


@dataclass
class StackedConvLSTM:
    """Gate kernels fused along the output-channel axis (order i, f, o, g).

    Built once per rollout from :class:`ConvLSTMParams` so each step costs
    two convolutions instead of eight; gradients flow back to the per-gate
    tensors through the concatenation.
    """

    wx: Tensor
    wh: Tensor
    b: Tensor
    in_channels: int
    hidden_channels: int


def stack_convlstm(params):
    return StackedConvLSTM(
        wx=tz.concat0([params.wx_i, params.wx_f, params.wx_o, params.wx_g]),
        wh=tz.concat0([params.wh_i, params.wh_f, params.wh_o, params.wh_g]),
        b=tz.concat0([params.b_i, params.b_f, params.b_o, params.b_g]),
        in_channels=params.in_channels,
        hidden_channels=params.hidden_channels,
    )


def convlstm_step_stacked(stacked, state, x, padding=1):
    """Same recurrence as :func:`convlstm_step` via the fused gate kernels."""
    if x.shape[0] != stacked.in_channels:
        raise InvalidArgumentError(
            f"convlstm_step: input has {x.shape[0]} channels, params expect {stacked.in_channels}")
    if x.shape[1:] != state.h.shape[1:]:
        raise InvalidArgumentError(
            f"convlstm_step: input spatial dims {x.shape[1:]} do not match state {state.h.shape[1:]}")
    n = stacked.hidden_channels
    z = tz.add(tz.conv2d(x, stacked.wx, stacked.b, padding),
               tz.conv2d(state.h, stacked.wh, None, padding))
    i = tz.sigmoid(tz.slice0(z, 0, n))
    f = tz.sigmoid(tz.slice0(z, n, 2 * n))
    o = tz.sigmoid(tz.slice0(z, 2 * n, 3 * n))
    g = tz.tanh(tz.slice0(z, 3 * n, 4 * n))
    c = tz.add(tz.mul(f, state.c), tz.mul(i, g))
    h = tz.mul(o, tz.tanh(c))
    return ConvLSTMState(h=h, c=c)


def action_mlp(params, a):
    """Attention weights for an action vector: tanh hidden layer, softmax head.

    The output is nonnegative and sums to 1, so downstream mixing of the
    unit bank is a convex combination.
    """
    a = tz.as_tensor(a)
    if a.shape != (params.action_dim,):
        raise InvalidArgumentError(
            f"action_mlp: action shape {a.shape} does not match expected ({params.action_dim},)")
    hidden = tz.tanh(tz.affine(params.w1, a, params.b1))
    return tz.softmax(tz.affine(params.w2, hidden, params.b2))


def glorot(rng, shape, fan_in, fan_out):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def init_convlstm(rng, in_channels, hidden_channels, kernel_size=3):
    """Glorot-uniform kernels, zero biases except the forget gate at 1.0.

    The forget bias offset keeps early cell memory alive; draw order is
    fixed (gates i, f, o, g; input kernels before hidden kernels) so a seed
    pins the full initialization.
    """
    k = kernel_size
    tensors = {}
    for gate_name in GATES:
        fan_x = in_channels * k * k, hidden_channels * k * k
        fan_h = hidden_channels * k * k, hidden_channels * k * k
        tensors[f"wx_{gate_name}"] = Tensor(
            glorot(rng, (hidden_channels, in_channels, k, k), *fan_x), requires_grad=True)
        tensors[f"wh_{gate_name}"] = Tensor(
            glorot(rng, (hidden_channels, hidden_channels, k, k), *fan_h), requires_grad=True)
        bias = np.ones(hidden_channels) if gate_name == "f" else np.zeros(hidden_channels)
        tensors[f"b_{gate_name}"] = Tensor(bias, requires_grad=True)
    return ConvLSTMParams(**tensors)


def init_mlp(rng, action_dim, hidden, out_dim):
    return MLPParams(
        w1=Tensor(glorot(rng, (hidden, action_dim), action_dim, hidden), requires_grad=True),
        b1=Tensor(np.zeros(hidden), requires_grad=True),
        w2=Tensor(glorot(rng, (out_dim, hidden), hidden, out_dim), requires_grad=True),
        b2=Tensor(np.zeros(out_dim), requires_grad=True),
    )
