"""Dense tensors with reverse-mode automatic differentiation.

Everything numeric in this package flows through the primitives defined
here.  A :class:`Tensor` wraps a numpy array (rank at most 4) together with
an optional gradient and a backward closure; composing primitives records a
tape which :meth:`Tensor.backward` replays in reverse creation order.

Conventions:

* images are channels-first ``(C, H, W)``, convolution kernels are
  ``(C_out, C_in, kh, kw)``, everything row-major;
* ``conv2d`` uses cross-correlation semantics (no kernel flip), the
  universal deep-learning convention, so saved weights stay portable;
* the default element type is float32; wrap code in :func:`use_float64`
  to build a graph in float64 (used by gradient checking).

All primitives are pure: they never mutate their inputs, and identical
inputs produce bitwise-identical outputs within one build.
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager

import numpy as np

from .errors import InvalidArgumentError

_default_dtype = np.float32
_grad_enabled = True
_order_counter = itertools.count()


def default_dtype():
    """Element type used for newly created tensors."""
    return _default_dtype


@contextmanager
def use_float64():
    """Build tensors in float64 within the context (gradient-check mode)."""
    global _default_dtype
    saved = _default_dtype
    _default_dtype = np.float64
    try:
        yield
    finally:
        _default_dtype = saved


@contextmanager
def no_grad():
    """Disable tape recording within the context (inference fast path)."""
    global _grad_enabled
    saved = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = saved


class Tensor:
    """A dense real array plus autodiff bookkeeping.

    ``data`` is always a C-contiguous numpy array of the build's element
    type.  ``grad`` is filled in by :meth:`backward` (or stays ``None``).
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn", "_order")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        arr = np.ascontiguousarray(data, dtype=_default_dtype)
        if arr.ndim > 4:
            raise InvalidArgumentError(f"tensor rank {arr.ndim} exceeds the supported maximum of 4")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward_fn = _backward
        self._order = next(_order_counter)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        if self.data.size != 1:
            raise InvalidArgumentError(f"item() requires a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def backward(self, seed=None):
        """Accumulate gradients of ``self`` into every reachable tensor.

        ``seed`` defaults to 1 and is only optional for single-element
        tensors (the loss).  Reverse creation order is a valid topological
        order because parents are always created before their results.
        """
        if seed is None:
            if self.data.size != 1:
                raise InvalidArgumentError("backward() without a seed requires a single-element tensor")
            seed = np.ones_like(self.data)
        nodes = []
        seen = set()
        stack = [self]
        while stack:
            t = stack.pop()
            if id(t) in seen or not t.requires_grad:
                continue
            seen.add(id(t))
            nodes.append(t)
            stack.extend(t._parents)
        nodes.sort(key=lambda t: t._order, reverse=True)
        _accumulate(self, np.asarray(seed, dtype=self.data.dtype))
        for t in nodes:
            if t._backward_fn is not None and t.grad is not None:
                t._backward_fn(t.grad)


def _accumulate(t, g):
    # grads are rebound, never mutated in place, so sharing views is safe
    if not t.requires_grad:
        return
    t.grad = g if t.grad is None else t.grad + g


def _result(data, parents, backward):
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward())
    return Tensor(data)


def as_tensor(value):
    """Wrap ``value`` as a constant Tensor (no-op when already a Tensor)."""
    return value if isinstance(value, Tensor) else Tensor(value)


def _check_same_shape(a, b, op):
    if a.shape != b.shape:
        raise InvalidArgumentError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# pointwise algebra


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_same_shape(a, b, "add")

    def bk():
        def run(g):
            _accumulate(a, g)
            _accumulate(b, g)
        return run

    return _result(a.data + b.data, (a, b), bk)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_same_shape(a, b, "sub")

    def bk():
        def run(g):
            _accumulate(a, g)
            _accumulate(b, -g)
        return run

    return _result(a.data - b.data, (a, b), bk)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_same_shape(a, b, "mul")
    ad, bd = a.data, b.data

    def bk():
        def run(g):
            _accumulate(a, g * bd)
            _accumulate(b, g * ad)
        return run

    return _result(ad * bd, (a, b), bk)


def pointwise(a, b, op):
    """Dispatch ``add``/``sub``/``mul`` by name."""
    try:
        fn = {"add": add, "sub": sub, "mul": mul}[op]
    except KeyError:
        raise InvalidArgumentError(f"pointwise: unknown op {op!r}") from None
    return fn(a, b)


def scale(a, s):
    """Multiply by a plain (non-differentiable) scalar."""
    a = as_tensor(a)
    s = a.data.dtype.type(s)

    def bk():
        def run(g):
            _accumulate(a, g * s)
        return run

    return _result(a.data * s, (a,), bk)


def smul(a, s):
    """Multiply a tensor by a single-element tensor, differentiable in both."""
    a, s = as_tensor(a), as_tensor(s)
    if s.data.size != 1:
        raise InvalidArgumentError(f"smul: scale factor must be a single element, got shape {s.shape}")
    ad, sd = a.data, s.data

    def bk():
        def run(g):
            _accumulate(a, g * sd)
            _accumulate(s, np.asarray((g * ad).sum(), dtype=sd.dtype).reshape(sd.shape))
        return run

    return _result(ad * sd, (a, s), bk)


def pick(a, i):
    """Select element ``i`` of a rank-1 tensor as a 0-d tensor."""
    a = as_tensor(a)
    if a.ndim != 1:
        raise InvalidArgumentError(f"pick: expected rank-1 tensor, got shape {a.shape}")
    if not 0 <= i < a.size:
        raise InvalidArgumentError(f"pick: index {i} out of range for size {a.size}")

    def bk():
        def run(g):
            full = np.zeros_like(a.data)
            full[i] = np.asarray(g).reshape(())
            _accumulate(a, full)
        return run

    return _result(a.data[i], (a,), bk)


def mean(a):
    """Arithmetic mean of all elements, as a 0-d tensor."""
    a = as_tensor(a)
    n = a.data.dtype.type(a.size)

    def bk():
        def run(g):
            _accumulate(a, np.full_like(a.data, g / n))
        return run

    return _result(a.data.mean(), (a,), bk)


# ---------------------------------------------------------------------------
# activations


def relu(a):
    a = as_tensor(a)
    out = np.maximum(a.data, 0)
    mask = a.data > 0

    def bk():
        def run(g):
            _accumulate(a, g * mask)
        return run

    return _result(out, (a,), bk)


def sigmoid(a):
    a = as_tensor(a)
    # tanh form avoids overflow for large negative inputs
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))

    def bk():
        def run(g):
            _accumulate(a, g * out * (1.0 - out))
        return run

    return _result(out, (a,), bk)


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)

    def bk():
        def run(g):
            _accumulate(a, g * (1.0 - out * out))
        return run

    return _result(out, (a,), bk)


def softmax(a):
    """Softmax over a rank-1 tensor; output is nonnegative and sums to 1."""
    a = as_tensor(a)
    if a.ndim != 1:
        raise InvalidArgumentError(f"softmax: expected rank-1 tensor, got shape {a.shape}")
    shifted = a.data - a.data.max()
    e = np.exp(shifted)
    out = e / e.sum()

    def bk():
        def run(g):
            _accumulate(a, out * (g - np.dot(g, out)))
        return run

    return _result(out, (a,), bk)


# ---------------------------------------------------------------------------
# shape ops


def concat0(tensors):
    """Concatenate tensors of equal rank along axis 0."""
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise InvalidArgumentError("concat0: need at least one tensor")
    trailing = tensors[0].shape[1:]
    if any(t.shape[1:] != trailing for t in tensors):
        raise InvalidArgumentError(f"concat0: trailing dims differ: {[t.shape for t in tensors]}")
    sizes = [t.shape[0] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bk():
        def run(g):
            for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
                _accumulate(t, g[lo:hi])
        return run

    return _result(np.concatenate([t.data for t in tensors], axis=0), tuple(tensors), bk)


def slice0(a, start, stop):
    """Contiguous slice along axis 0."""
    a = as_tensor(a)
    if not 0 <= start < stop <= a.shape[0]:
        raise InvalidArgumentError(f"slice0: range [{start}, {stop}) invalid for axis size {a.shape[0]}")

    def bk():
        def run(g):
            full = np.zeros_like(a.data)
            full[start:stop] = g
            _accumulate(a, full)
        return run

    return _result(a.data[start:stop], (a,), bk)


def concat_channels(a, b):
    """Stack two ``(C, H, W)`` tensors along the channel axis."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 3 or b.ndim != 3:
        raise InvalidArgumentError(f"concat_channels: expected rank-3 tensors, got {a.shape} and {b.shape}")
    if a.shape[1:] != b.shape[1:]:
        raise InvalidArgumentError(f"concat_channels: spatial dims differ, {a.shape} vs {b.shape}")
    ca = a.shape[0]

    def bk():
        def run(g):
            _accumulate(a, g[:ca])
            _accumulate(b, g[ca:])
        return run

    return _result(np.concatenate([a.data, b.data], axis=0), (a, b), bk)


def crop_spatial(a, height, width):
    """Keep the top-left ``height x width`` window of a ``(C, H, W)`` tensor."""
    a = as_tensor(a)
    if a.ndim != 3:
        raise InvalidArgumentError(f"crop_spatial: expected rank-3 tensor, got shape {a.shape}")
    if height > a.shape[1] or width > a.shape[2]:
        raise InvalidArgumentError(f"crop_spatial: target {(height, width)} exceeds input {a.shape}")
    if (height, width) == a.shape[1:]:
        return a

    def bk():
        def run(g):
            full = np.zeros_like(a.data)
            full[:, :height, :width] = g
            _accumulate(a, full)
        return run

    return _result(a.data[:, :height, :width], (a,), bk)


def upsample2x(a):
    """Nearest-neighbor 2x spatial upsampling of a ``(C, H, W)`` tensor."""
    a = as_tensor(a)
    if a.ndim != 3:
        raise InvalidArgumentError(f"upsample2x: expected rank-3 tensor, got shape {a.shape}")
    out = np.repeat(np.repeat(a.data, 2, axis=1), 2, axis=2)
    c, h, w = a.shape

    def bk():
        def run(g):
            _accumulate(a, g.reshape(c, h, 2, w, 2).sum(axis=(2, 4)))
        return run

    return _result(out, (a,), bk)


# ---------------------------------------------------------------------------
# convolution / pooling


def _im2col(x, kh, kw, padding):
    """Window matrix: rows index (channel, ky, kx), columns index output cells."""
    ci, h, w = x.shape
    ho, wo = h + 2 * padding - kh + 1, w + 2 * padding - kw + 1
    if padding:
        xp = np.zeros((ci, h + 2 * padding, w + 2 * padding), dtype=x.dtype)
        xp[:, padding:padding + h, padding:padding + w] = x
    else:
        xp = x
    s0, s1, s2 = xp.strides
    win = np.lib.stride_tricks.as_strided(xp, (ci, kh, kw, ho, wo), (s0, s1, s2, s1, s2))
    return win.reshape(ci * kh * kw, ho * wo), ho, wo


def _col2im(gcol, ci, kh, kw, h, w, padding, ho, wo):
    """Scatter-add column gradients back onto the (unpadded) input."""
    gp = np.zeros((ci, h + 2 * padding, w + 2 * padding), dtype=gcol.dtype)
    gc = gcol.reshape(ci, kh, kw, ho, wo)
    for u in range(kh):
        for v in range(kw):
            gp[:, u:u + ho, v:v + wo] += gc[:, u, v]
    return gp[:, padding:padding + h, padding:padding + w]


def _conv_forward(x, k, bias, padding):
    co = k.shape[0]
    col, ho, wo = _im2col(x, k.shape[2], k.shape[3], padding)
    out = k.reshape(co, -1) @ col
    if bias is not None:
        out += bias[:, None]
    return out.reshape(co, ho, wo), col, ho, wo


def conv2d(x, kernels, bias=None, padding=1):
    """2-d cross-correlation over a ``(C_in, H, W)`` tensor.

    With the default 3x3 kernels and padding 1 the spatial extents are
    preserved.  Gradients flow to the input, the kernels, and the bias.
    """
    x, kernels = as_tensor(x), as_tensor(kernels)
    bias = as_tensor(bias) if bias is not None else None
    if x.ndim != 3 or kernels.ndim != 4:
        raise InvalidArgumentError(f"conv2d: expected (C,H,W) input and (Co,Ci,kh,kw) kernels, got {x.shape} and {kernels.shape}")
    co, ci, kh, kw = kernels.shape
    if kh != kw:
        raise InvalidArgumentError(f"conv2d: only square kernels are supported, got {kh}x{kw}")
    if ci != x.shape[0]:
        raise InvalidArgumentError(f"conv2d: input has {x.shape[0]} channels but kernels expect {ci}")
    if bias is not None and bias.shape != (co,):
        raise InvalidArgumentError(f"conv2d: bias shape {bias.shape} does not match {co} output channels")
    if padding < 0 or padding > min(kh, kw) - 1:
        raise InvalidArgumentError(f"conv2d: padding {padding} unsupported for kernel {kh}x{kw}")
    if x.shape[1] + 2 * padding < kh or x.shape[2] + 2 * padding < kw:
        raise InvalidArgumentError(f"conv2d: input {x.shape} too small for kernel {kh}x{kw} with padding {padding}")
    out, col, ho, wo = _conv_forward(x.data, kernels.data, None if bias is None else bias.data, padding)
    kd = kernels.data
    _, h, w = x.shape

    def bk():
        def run(g):
            gm = g.reshape(co, ho * wo)
            if kernels.requires_grad:
                _accumulate(kernels, (gm @ col.T).reshape(co, ci, kh, kw))
            if x.requires_grad:
                gcol = kd.reshape(co, -1).T @ gm
                _accumulate(x, _col2im(gcol, ci, kh, kw, h, w, padding, ho, wo))
            if bias is not None:
                _accumulate(bias, gm.sum(axis=1))
        return run

    parents = (x, kernels) if bias is None else (x, kernels, bias)
    return _result(out, parents, bk)


def maxpool2x2(a):
    """2x2 max pooling with ceil semantics for odd extents.

    Odd trailing rows/columns contribute the max of their partial block.
    Returns the pooled tensor and the flat argmax index (0..3) of each
    block, which the backward pass uses to route gradients.
    """
    a = as_tensor(a)
    if a.ndim != 3:
        raise InvalidArgumentError(f"maxpool2x2: expected rank-3 tensor, got shape {a.shape}")
    c, h, w = a.shape
    oh, ow = (h + 1) // 2, (w + 1) // 2
    padded = a.data
    if h % 2 or w % 2:
        padded = np.pad(padded, ((0, 0), (0, h % 2), (0, w % 2)), constant_values=-np.inf)
    blocks = padded.reshape(c, oh, 2, ow, 2).transpose(0, 1, 3, 2, 4).reshape(c, oh, ow, 4)
    idx = blocks.argmax(axis=3)
    out = np.take_along_axis(blocks, idx[..., None], axis=3)[..., 0]

    def bk():
        def run(g):
            gb = np.zeros((c, oh, ow, 4), dtype=g.dtype)
            np.put_along_axis(gb, idx[..., None], g[..., None], axis=3)
            gp = gb.reshape(c, oh, ow, 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, oh * 2, ow * 2)
            _accumulate(a, gp[:, :h, :w])
        return run

    return _result(out, (a,), bk), idx


def upsample2x_conv(x, kernels, bias=None, padding=1):
    """Nearest-neighbor 2x upsampling followed by ``conv2d``.

    This composition realizes the top-down reconstruction step: it doubles
    the spatial extents deterministically and avoids the checkerboard
    artifacts a stride-2 transposed convolution can produce.
    """
    return conv2d(upsample2x(x), kernels, bias, padding)


# ---------------------------------------------------------------------------
# dense (vector) ops


def affine(w, x, b):
    """``w @ x + b`` for a rank-2 weight, rank-1 input, rank-1 bias."""
    w, x, b = as_tensor(w), as_tensor(x), as_tensor(b)
    if w.ndim != 2 or x.ndim != 1 or b.ndim != 1:
        raise InvalidArgumentError(f"affine: expected ranks (2,1,1), got shapes {w.shape}, {x.shape}, {b.shape}")
    if w.shape[1] != x.shape[0] or w.shape[0] != b.shape[0]:
        raise InvalidArgumentError(f"affine: incompatible shapes {w.shape}, {x.shape}, {b.shape}")
    wd, xd = w.data, x.data

    def bk():
        def run(g):
            _accumulate(w, np.outer(g, xd))
            _accumulate(x, wd.T @ g)
            _accumulate(b, g)
        return run

    return _result(wd @ xd + b.data, (w, x, b), bk)
