"""Objective, optimizer loop, gradient checking, and checkpoint files.

The objective sums the mean error activation of every layer over all
timesteps after the first (the first frame is unpredictable from a zero
state), weighting layer 0 by 1.0 and higher layers by 0.1 by default.
One training iteration is one full-sequence rollout followed by one
adaptive-moment (Adam) update; gradients flow through the whole sequence.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import tensor as tz
from .data import Sequence, check_dims
from .errors import FormatError, InvalidArgumentError, TrainingDivergedError
from .network import NetworkConfig, init_parameters, parameter_shapes, parameters_from_named, rollout


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    max_iterations: int = 100_000
    error_threshold: float = None  # stop once loss drops below; None = run to max
    lambda_layer0: float = 1.0
    lambda_upper: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0
    log_every: int = 0  # 0 disables progress lines

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise InvalidArgumentError("learning_rate must be positive")
        if self.max_iterations < 1:
            raise InvalidArgumentError("max_iterations must be >= 1")
        if self.lambda_layer0 <= 0 or self.lambda_upper < 0:
            raise InvalidArgumentError("layer weights must satisfy lambda0 > 0, others >= 0")


def compute_loss(errors, lambda_layer0=1.0, lambda_upper=0.1):
    """Weighted mean error activation, excluding timestep 0.

    ``errors`` is the per-timestep list of per-layer error tensors from a
    rollout.  Requires at least two timesteps.
    """
    if len(errors) < 2:
        raise InvalidArgumentError("compute_loss: need at least 2 timesteps")
    loss = None
    for step_errors in errors[1:]:
        for l, e in enumerate(step_errors):
            lam = lambda_layer0 if l == 0 else lambda_upper
            term = tz.scale(tz.mean(e), lam)
            loss = term if loss is None else tz.add(loss, term)
    return loss


class Adam:
    """Adaptive moment estimation over a named parameter dict."""

    def __init__(self, params, learning_rate=0.001, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.params = params
        self.lr = learning_rate
        self.beta1, self.beta2, self.eps = beta1, beta2, epsilon
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            m = self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            v = self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * (g * g)
            p.data = p.data - self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def train(dataset, train_config, net_config, params=None, callback=None):
    """Optimize on a dataset; returns ``(Checkpoint, per-iteration losses)``.

    Sequences are cycled in seeded-shuffled epochs, one sequence per
    update.  Deterministic given (dataset, configs, seed).  ``callback``
    receives ``(iteration, loss)`` after each update when provided.
    """
    check_dims(net_config, dataset)
    if not dataset.sequences:
        raise InvalidArgumentError("train: dataset has no sequences")
    rng = np.random.default_rng(train_config.seed)
    if params is None:
        params = init_parameters(net_config, rng)
    named = params.named()
    opt = Adam(named, train_config.learning_rate, train_config.beta1,
               train_config.beta2, train_config.epsilon)
    losses = []
    order = []
    n = len(dataset.sequences)
    for it in range(1, train_config.max_iterations + 1):
        if not order:
            order = list(rng.permutation(n))
        seq = dataset.sequences[order.pop(0)]
        result = rollout(params, seq)
        loss = compute_loss(result.errors, train_config.lambda_layer0, train_config.lambda_upper)
        value = loss.item()
        if not np.isfinite(value):
            layer = _first_bad_layer(result)
            raise TrainingDivergedError(f"non-finite loss at iteration {it} (layer {layer})")
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(value)
        if train_config.log_every and it % train_config.log_every == 0:
            print(f"iteration {it}  loss {value:.6f}")
        if callback is not None:
            callback(it, value)
        if train_config.error_threshold is not None and value < train_config.error_threshold:
            break
    return Checkpoint.from_parameters(params), losses


def _first_bad_layer(result):
    for step_errors in result.errors:
        for l, e in enumerate(step_errors):
            if not np.isfinite(e.data).all():
                return l
    return "unknown"


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckReport:
    per_tensor: dict
    max_rel_err: float
    worst: str
    passed: bool
    eps: float
    tol: float
    elements: int

    def format(self):
        lines = [f"{name}  max_rel_err={err:.3e}" for name, err in sorted(self.per_tensor.items())]
        status = "PASS" if self.passed else "FAIL"
        lines.append(f"{status}: max {self.max_rel_err:.3e} at {self.worst} "
                     f"({self.elements} elements, eps={self.eps:g}, tol={self.tol:g})")
        return "\n".join(lines)


def gradient_check(net_config, eps=1e-5, tol=1e-4, seed=0, timesteps=3, _corrupt=None):
    """Compare analytic gradients against central finite differences.

    Runs in float64 on a random instance (parameters, frames, actions all
    seeded).  Every element of every parameter tensor is perturbed.
    ``_corrupt`` names a tensor whose analytic gradient is deliberately
    offset - a negative-control hook for tests.
    """
    with tz.use_float64():
        rng = np.random.default_rng(seed)
        params = init_parameters(net_config, rng)
        named = params.named()
        # jitter every tensor (biases included): the zero-bias init point is a
        # genuine kink (states and pre-activations exactly zero at t=0), so the
        # check must run at a generic point
        for p in named.values():
            p.data = p.data + rng.normal(scale=0.05, size=p.data.shape)
        frames = rng.uniform(0.0, 1.0, size=(timesteps, net_config.channels,
                                             net_config.height, net_config.width))
        actions = rng.uniform(0.0, 1.0, size=(timesteps, net_config.action_dim))
        seq = Sequence(frames=frames, actions=actions)
        result = rollout(params, seq)
        loss = compute_loss(result.errors)
        loss.backward()
        analytic = {k: (p.grad if p.grad is not None else np.zeros_like(p.data))
                    for k, p in named.items()}
        if _corrupt is not None:
            if _corrupt not in analytic:
                raise InvalidArgumentError(f"gradient_check: no parameter named {_corrupt!r}")
            analytic[_corrupt] = analytic[_corrupt] + 1.0

        def loss_value():
            with tz.no_grad():
                r = rollout(params, seq)
                return compute_loss(r.errors).item()

        per_tensor = {}
        total = 0
        for name, p in named.items():
            flat = p.data.reshape(-1)
            a_flat = analytic[name].reshape(-1)
            worst = 0.0
            for i in range(flat.size):
                saved = flat[i]
                flat[i] = saved + eps
                f_plus = loss_value()
                flat[i] = saved - eps
                f_minus = loss_value()
                flat[i] = saved
                numeric = (f_plus - f_minus) / (2.0 * eps)
                denom = max(abs(a_flat[i]), abs(numeric), 1e-5)
                worst = max(worst, abs(a_flat[i] - numeric) / denom)
            per_tensor[name] = worst
            total += flat.size
        worst_name = max(per_tensor, key=per_tensor.get)
        max_err = per_tensor[worst_name]
        return GradCheckReport(per_tensor=per_tensor, max_rel_err=max_err, worst=worst_name,
                               passed=max_err < tol, eps=eps, tol=tol, elements=total)


# ---------------------------------------------------------------------------
# checkpoint format

MAGIC = b"AFAC"
VERSION = 1


@dataclass
class Checkpoint:
    """Architecture config plus every parameter tensor as float32 arrays."""

    config: NetworkConfig
    tensors: dict

    @classmethod
    def from_parameters(cls, params):
        tensors = {name: np.ascontiguousarray(t.data, dtype=np.float32)
                   for name, t in params.named().items()}
        return cls(config=params.config, tensors=tensors)

    def to_parameters(self):
        return parameters_from_named(self.config, self.tensors)


def save_checkpoint(path, checkpoint):
    """Write the bit-exact binary format (magic AFAC, little-endian)."""
    blob = checkpoint.config.to_text().encode("utf-8")
    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", VERSION)
    out += struct.pack("<I", len(blob))
    out += blob
    out += struct.pack("<I", len(checkpoint.tensors))
    for name, arr in checkpoint.tensors.items():
        encoded = name.encode("utf-8")
        out += struct.pack("<H", len(encoded))
        out += encoded
        out += struct.pack("<B", arr.ndim)
        for dim in arr.shape:
            out += struct.pack("<I", dim)
        out += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    with open(path, "wb") as f:
        f.write(bytes(out))


class _Reader:
    """Cursor over bytes; every failure reports the offending offset."""

    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated file while reading {what}", offset=self.pos)
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u8(self, what):
        return struct.unpack("<B", self.take(1, what))[0]

    def u16(self, what):
        return struct.unpack("<H", self.take(2, what))[0]

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]


def load_checkpoint(path):
    """Read and validate a checkpoint; raises FormatError on any defect."""
    with open(path, "rb") as f:
        data = f.read()
    r = _Reader(data)
    if r.take(4, "magic") != MAGIC:
        raise FormatError(f"bad magic, expected {MAGIC!r}", offset=0)
    version = r.u32("version")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    blob_len = r.u32("config length")
    blob_at = r.pos
    blob = r.take(blob_len, "config blob")
    try:
        config = NetworkConfig.from_text(blob.decode("utf-8"))
    except (UnicodeDecodeError, InvalidArgumentError, ValueError) as exc:
        raise FormatError(f"invalid embedded config: {exc}", offset=blob_at) from exc
    count = r.u32("tensor count")
    tensors = {}
    for _ in range(count):
        name_at = r.pos
        name_len = r.u16("name length")
        name = r.take(name_len, "tensor name").decode("utf-8", errors="replace")
        if name in tensors:
            raise FormatError(f"duplicate tensor name {name!r}", offset=name_at)
        rank = r.u8("rank")
        if rank > 4:
            raise FormatError(f"tensor {name!r} has rank {rank} > 4", offset=r.pos - 1)
        shape = tuple(r.u32(f"dim {i} of {name!r}") for i in range(rank))
        n_elem = 1
        for dim in shape:
            n_elem *= dim
        raw = r.take(4 * n_elem, f"data of {name!r}")
        tensors[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)
    if r.pos != len(data):
        raise FormatError("trailing bytes after last tensor", offset=r.pos)
    expected = parameter_shapes(config)
    if set(tensors) != set(expected):
        missing = sorted(set(expected) - set(tensors))
        extra = sorted(set(tensors) - set(expected))
        raise FormatError(f"tensor set does not match embedded config (missing {missing}, extra {extra})",
                          offset=len(data))
    for name, arr in tensors.items():
        if tuple(arr.shape) != expected[name]:
            raise FormatError(f"tensor {name!r} shape {tuple(arr.shape)} != expected {expected[name]}",
                              offset=len(data))
    return Checkpoint(config=config, tensors=tensors)
