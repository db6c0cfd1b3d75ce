"""Layer stack and per-timestep execution.

Each layer owns four pieces: a bank of convolutional LSTM units whose
outputs are mixed by action-driven attention weights (the layer
representation R), a prediction convolution turning R into the layer's
estimate of its target, a rectified split of the resulting error into
positive and negative populations, and (above layer 0) a discriminative
convolution that pools the layer below's error into this layer's target.

A timestep runs top-down first - every layer refreshes R from last step's
errors plus the upsampled representation above - then bottom-up, where the
new frame enters at layer 0 and errors propagate upward.  The layer-0
prediction is therefore computed before the frame is absorbed: it depends
only on frames 0..t-1 and actions 0..t (one-step-ahead contract).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import cells, tensor as tz
from .cells import ConvLSTMParams, ConvLSTMState, MLPParams
from .errors import InvalidArgumentError
from .tensor import Tensor


@dataclass(frozen=True)
class NetworkConfig:
    """Architecture hyperparameters.

    ``gu_per_layer``, ``r_channels`` and ``du_channels`` may be given as a
    single int / empty tuple to request the defaults: 2 units everywhere,
    R channels 8*2^l, and target channels 8*2^(l-1) for layers above 0.
    Layer 0's target channel count is the image channel count.
    """

    num_layers: int = 2
    height: int = 8
    width: int = 12
    channels: int = 1
    action_dim: int = 2
    gu_per_layer: tuple = 2
    r_channels: tuple = ()
    du_channels: tuple = ()
    mlp_hidden: int = 4
    kernel_size: int = 3
    padding: int = 1

    def __post_init__(self):
        L = self.num_layers
        if L < 1:
            raise InvalidArgumentError("num_layers must be >= 1")
        if min(self.height, self.width, self.channels, self.action_dim) < 1:
            raise InvalidArgumentError("image dims and action_dim must be >= 1")
        if self.mlp_hidden < 1:
            raise InvalidArgumentError("mlp_hidden must be >= 1")
        if self.kernel_size % 2 != 1 or self.kernel_size < 1:
            raise InvalidArgumentError("kernel_size must be a positive odd number")
        if not 0 <= self.padding <= self.kernel_size - 1:
            raise InvalidArgumentError("padding must lie in [0, kernel_size-1]")
        gu = self.gu_per_layer
        gu = tuple([int(gu)] * L) if np.isscalar(gu) else tuple(int(d) for d in gu)
        rc = tuple(int(c) for c in self.r_channels) or tuple(8 * 2 ** l for l in range(L))
        dc = tuple(int(c) for c in self.du_channels) or tuple(8 * 2 ** l for l in range(L - 1))
        if len(gu) != L or len(rc) != L or len(dc) != L - 1:
            raise InvalidArgumentError(
                f"per-layer lists must have lengths {L}, {L}, {L - 1}; "
                f"got {len(gu)}, {len(rc)}, {len(dc)}")
        if min(gu) < 1 or min(rc) < 1 or min(dc, default=1) < 1:
            raise InvalidArgumentError("per-layer unit and channel counts must be >= 1")
        object.__setattr__(self, "gu_per_layer", gu)
        object.__setattr__(self, "r_channels", rc)
        object.__setattr__(self, "du_channels", dc)

    def layer_dims(self, l):
        """Spatial extents of layer ``l`` (ceil halving per pooling stage)."""
        h, w = self.height, self.width
        for _ in range(l):
            h, w = (h + 1) // 2, (w + 1) // 2
        return h, w

    def target_channels(self, l):
        return self.channels if l == 0 else self.du_channels[l - 1]

    def error_channels(self, l):
        return 2 * self.target_channels(l)

    def gu_input_channels(self, l):
        top = self.num_layers - 1
        extra = 0 if l == top else self.r_channels[l]
        return self.error_channels(l) + extra

    def to_text(self):
        """key=value serialization embedded in checkpoints."""
        csv = lambda xs: ",".join(str(x) for x in xs)
        pairs = [
            ("num_layers", self.num_layers),
            ("height", self.height),
            ("width", self.width),
            ("channels", self.channels),
            ("action_dim", self.action_dim),
            ("gu_per_layer", csv(self.gu_per_layer)),
            ("r_channels", csv(self.r_channels)),
            ("du_channels", csv(self.du_channels) or "-"),
            ("mlp_hidden", self.mlp_hidden),
            ("kernel_size", self.kernel_size),
            ("padding", self.padding),
        ]
        return "\n".join(f"{k}={v}" for k, v in pairs)

    @classmethod
    def from_text(cls, text):
        ints = {"num_layers", "height", "width", "channels", "action_dim",
                "mlp_hidden", "kernel_size", "padding"}
        lists = {"gu_per_layer", "r_channels", "du_channels"}
        kwargs = {}
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            if "=" not in line:
                raise InvalidArgumentError(f"bad config line: {line!r}")
            k, v = line.split("=", 1)
            if k in ints:
                kwargs[k] = int(v)
            elif k in lists:
                kwargs[k] = () if v == "-" else tuple(int(x) for x in v.split(","))
            else:
                raise InvalidArgumentError(f"unknown config key: {k!r}")
        return cls(**kwargs)


@dataclass
class LayerParams:
    """Learnable tensors of one layer."""

    units: list          # ConvLSTMParams per generative unit
    mm: MLPParams        # action -> attention weights over the bank
    pred_k: Tensor       # R -> predicted target
    pred_b: Tensor
    du_k: Tensor = None  # error below -> this layer's target (absent at layer 0)
    du_b: Tensor = None
    topdown_k: Tensor = None  # upsampled R above -> unit input (absent at top)
    topdown_b: Tensor = None


@dataclass
class Parameters:
    """All learnable tensors, ordered deterministically by ``named()``."""

    config: NetworkConfig
    layers: list

    def named(self):
        out = {}
        for l, lp in enumerate(self.layers):
            prefix = f"layer{l}"
            if lp.du_k is not None:
                out[f"{prefix}.du.kernels"] = lp.du_k
                out[f"{prefix}.du.bias"] = lp.du_b
            out[f"{prefix}.pred.kernels"] = lp.pred_k
            out[f"{prefix}.pred.bias"] = lp.pred_b
            if lp.topdown_k is not None:
                out[f"{prefix}.topdown.kernels"] = lp.topdown_k
                out[f"{prefix}.topdown.bias"] = lp.topdown_b
            for d, unit in enumerate(lp.units):
                for name, t in unit.named().items():
                    out[f"{prefix}.gu{d}.{name}"] = t
            for name, t in lp.mm.named().items():
                out[f"{prefix}.mm.{name}"] = t
        return out


def parameter_shapes(config):
    """Expected shape of every named parameter (checkpoint validation)."""
    shapes = {}
    k = config.kernel_size
    L = config.num_layers
    for l in range(L):
        prefix = f"layer{l}"
        c_t = config.target_channels(l)
        c_r = config.r_channels[l]
        c_in = config.gu_input_channels(l)
        if l > 0:
            shapes[f"{prefix}.du.kernels"] = (c_t, config.error_channels(l - 1), k, k)
            shapes[f"{prefix}.du.bias"] = (c_t,)
        shapes[f"{prefix}.pred.kernels"] = (c_t, c_r, k, k)
        shapes[f"{prefix}.pred.bias"] = (c_t,)
        if l < L - 1:
            shapes[f"{prefix}.topdown.kernels"] = (c_r, config.r_channels[l + 1], k, k)
            shapes[f"{prefix}.topdown.bias"] = (c_r,)
        for d in range(config.gu_per_layer[l]):
            for g in cells.GATES:
                shapes[f"{prefix}.gu{d}.wx_{g}"] = (c_r, c_in, k, k)
                shapes[f"{prefix}.gu{d}.wh_{g}"] = (c_r, c_r, k, k)
                shapes[f"{prefix}.gu{d}.b_{g}"] = (c_r,)
        shapes[f"{prefix}.mm.w1"] = (config.mlp_hidden, config.action_dim)
        shapes[f"{prefix}.mm.b1"] = (config.mlp_hidden,)
        shapes[f"{prefix}.mm.w2"] = (config.gu_per_layer[l], config.mlp_hidden)
        shapes[f"{prefix}.mm.b2"] = (config.gu_per_layer[l],)
    return shapes


def _conv_init(rng, c_out, c_in, k):
    fan = c_in * k * k, c_out * k * k
    kernels = Tensor(cells.glorot(rng, (c_out, c_in, k, k), *fan), requires_grad=True)
    bias = Tensor(np.zeros(c_out), requires_grad=True)
    return kernels, bias


def init_parameters(config, rng):
    """Fresh Glorot-initialized parameters; draw order is fixed by layer."""
    k = config.kernel_size
    L = config.num_layers
    layers = []
    for l in range(L):
        du_k = du_b = td_k = td_b = None
        if l > 0:
            du_k, du_b = _conv_init(rng, config.target_channels(l), config.error_channels(l - 1), k)
        pred_k, pred_b = _conv_init(rng, config.target_channels(l), config.r_channels[l], k)
        if l < L - 1:
            td_k, td_b = _conv_init(rng, config.r_channels[l], config.r_channels[l + 1], k)
        units = [cells.init_convlstm(rng, config.gu_input_channels(l), config.r_channels[l], k)
                 for _ in range(config.gu_per_layer[l])]
        mm = cells.init_mlp(rng, config.action_dim, config.mlp_hidden, config.gu_per_layer[l])
        layers.append(LayerParams(units=units, mm=mm, pred_k=pred_k, pred_b=pred_b,
                                  du_k=du_k, du_b=du_b, topdown_k=td_k, topdown_b=td_b))
    return Parameters(config=config, layers=layers)


def parameters_from_named(config, named):
    """Rebuild the structured container from a flat name->array mapping."""
    shapes = parameter_shapes(config)
    missing = sorted(set(shapes) - set(named))
    extra = sorted(set(named) - set(shapes))
    if missing or extra:
        raise InvalidArgumentError(f"parameter names do not match config (missing {missing}, extra {extra})")
    tens = {}
    for name, arr in named.items():
        if tuple(arr.shape) != shapes[name]:
            raise InvalidArgumentError(
                f"parameter {name} has shape {tuple(arr.shape)}, expected {shapes[name]}")
        tens[name] = Tensor(arr, requires_grad=True)
    L = config.num_layers
    layers = []
    for l in range(L):
        p = f"layer{l}"
        units = [ConvLSTMParams(**{n: tens[f"{p}.gu{d}.{n}"] for n in
                                   (f"{kind}_{g}" for g in cells.GATES for kind in ("wx", "wh", "b"))})
                 for d in range(config.gu_per_layer[l])]
        mm = MLPParams(w1=tens[f"{p}.mm.w1"], b1=tens[f"{p}.mm.b1"],
                       w2=tens[f"{p}.mm.w2"], b2=tens[f"{p}.mm.b2"])
        layers.append(LayerParams(
            units=units, mm=mm,
            pred_k=tens[f"{p}.pred.kernels"], pred_b=tens[f"{p}.pred.bias"],
            du_k=tens.get(f"{p}.du.kernels"), du_b=tens.get(f"{p}.du.bias"),
            topdown_k=tens.get(f"{p}.topdown.kernels"), topdown_b=tens.get(f"{p}.topdown.bias")))
    return Parameters(config=config, layers=layers)


@dataclass
class LayerState:
    """Mutable per-layer runtime state; one rollout per instance."""

    units: list       # ConvLSTMState per generative unit
    r: Tensor         # attention-combined representation
    x_hat: Tensor     # prediction of the layer target
    err: Tensor       # rectified split error, 2x target channels
    target: Tensor
    attention: np.ndarray = None  # last attention weights (for inspection)


def init_state(config):
    """Zero-filled states for every layer, shapes fixed by the config."""
    states = []
    for l in range(config.num_layers):
        h, w = config.layer_dims(l)
        c_r, c_t = config.r_channels[l], config.target_channels(l)
        states.append(LayerState(
            units=[cells.zero_state(c_r, h, w) for _ in range(config.gu_per_layer[l])],
            r=Tensor(np.zeros((c_r, h, w))),
            x_hat=Tensor(np.zeros((c_t, h, w))),
            err=Tensor(np.zeros((2 * c_t, h, w))),
            target=Tensor(np.zeros((c_t, h, w))),
        ))
    return states


def _resolve_attention(lp, a, mm_override, bank_size):
    if mm_override is None:
        return cells.action_mlp(lp.mm, a)
    if isinstance(mm_override, str):
        if mm_override != "uniform":
            raise InvalidArgumentError(f"unknown attention override {mm_override!r}")
        return Tensor(np.full(bank_size, 1.0 / bank_size))
    w = np.asarray(mm_override, dtype=float)
    if w.shape != (bank_size,):
        raise InvalidArgumentError(f"attention override shape {w.shape} does not match bank size {bank_size}")
    return Tensor(w)


def stack_units(params):
    """Fused gate kernels per unit, built once and reused across timesteps."""
    return [[cells.stack_convlstm(u) for u in lp.units] for lp in params.layers]


def topdown_pass(params, states, a, mm_override=None, stacks=None):
    """Generative sweep, top layer first.

    Each unit advances on last step's error (concatenated with the
    upsampled representation from above, except at the top), then the
    action MLP's weights combine the bank into the new R.  Every layer is
    action-modulated, including the top.
    """
    config = params.config
    a = tz.as_tensor(a)
    if a.shape != (config.action_dim,):
        raise InvalidArgumentError(f"action shape {a.shape} does not match action_dim {config.action_dim}")
    if stacks is None:
        stacks = stack_units(params)
    top = config.num_layers - 1
    for l in range(top, -1, -1):
        lp, st = params.layers[l], states[l]
        if l == top:
            gu_in = st.err
        else:
            h, w = config.layer_dims(l)
            td = tz.upsample2x_conv(states[l + 1].r, lp.topdown_k, lp.topdown_b, config.padding)
            gu_in = tz.concat_channels(st.err, tz.crop_spatial(td, h, w))
        st.units = [cells.convlstm_step_stacked(su, us, gu_in, config.padding)
                    for su, us in zip(stacks[l], st.units)]
        weights = _resolve_attention(lp, a, mm_override, len(lp.units))
        r = tz.smul(st.units[0].h, tz.pick(weights, 0))
        for d in range(1, len(st.units)):
            r = tz.add(r, tz.smul(st.units[d].h, tz.pick(weights, d)))
        st.r = r
        st.attention = weights.data
    return states


def bottomup_pass(params, states, frame):
    """Discriminative sweep: predict, compare, pool errors upward."""
    config = params.config
    frame = tz.as_tensor(frame)
    expected = (config.channels, config.height, config.width)
    if frame.shape != expected:
        raise InvalidArgumentError(f"frame shape {frame.shape} does not match config {expected}")
    x = frame
    for l in range(config.num_layers):
        lp, st = params.layers[l], states[l]
        st.target = x
        st.x_hat = tz.relu(tz.conv2d(st.r, lp.pred_k, lp.pred_b, config.padding))
        st.err = tz.concat_channels(tz.relu(tz.sub(st.target, st.x_hat)),
                                    tz.relu(tz.sub(st.x_hat, st.target)))
        if l + 1 < config.num_layers:
            nxt = params.layers[l + 1]
            pooled, _ = tz.maxpool2x2(tz.relu(tz.conv2d(st.err, nxt.du_k, nxt.du_b, config.padding)))
            x = pooled
    return states


def network_step(params, states, frame, a, mm_override=None, stacks=None):
    """One timestep: top-down then bottom-up.  Returns the layer-0 prediction,
    which was formed before ``frame`` was absorbed."""
    topdown_pass(params, states, a, mm_override, stacks)
    bottomup_pass(params, states, frame)
    return states[0].x_hat


@dataclass
class RolloutResult:
    predictions: list          # layer-0 prediction per timestep
    errors: list               # per timestep: list of per-layer error tensors
    error_means: np.ndarray    # (T, L) mean error activation
    states: list = field(repr=False, default=None)


def rollout(params, sequence, mm_override=None):
    """Run a full sequence from a fresh zero state."""
    frames, actions = sequence.frames, sequence.actions
    if len(frames) < 1:
        raise InvalidArgumentError("rollout: empty sequence")
    config = params.config
    states = init_state(config)
    stacks = stack_units(params)
    predictions, errors = [], []
    error_means = np.zeros((len(frames), config.num_layers))
    for t in range(len(frames)):
        pred = network_step(params, states, frames[t], actions[t], mm_override, stacks)
        predictions.append(pred)
        step_errors = [states[l].err for l in range(config.num_layers)]
        errors.append(step_errors)
        error_means[t] = [e.data.mean() for e in step_errors]
    return RolloutResult(predictions=predictions, errors=errors,
                         error_means=error_means, states=states)
