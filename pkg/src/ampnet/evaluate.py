"""Quantitative evaluation and activation export.

Turns the qualitative behaviors of the model into scalar metrics: one-step
prediction MSE against a copy-last-frame baseline, argmax displacement
accuracy for single-pixel worlds, an action-swap probe that measures how
strongly the action vector steers the prediction, and dumps of the
generative-unit bank (per-unit activations, attention weights, combined
representation) as portable PGM images plus a plain-text weight table.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import tensor as tz
from .data import check_dims
from .errors import InvalidArgumentError
from .network import init_state, network_step, rollout

RIGHT = (1.0, 0.0)
DOWN = (0.0, 1.0)


def _as_params(model):
    return model.to_parameters() if hasattr(model, "to_parameters") else model


@dataclass
class EvalReport:
    model_mse: float
    baseline_mse: float
    argmax_accuracy: float
    per_sequence_mse: list
    per_sequence_baseline: list
    layer_error_means: np.ndarray  # (L, T), mean error activation over sequences
    swap_accuracy: float = None

    def format(self):
        lines = [
            f"model_mse={self.model_mse:.8f}",
            f"baseline_mse={self.baseline_mse:.8f}",
            f"argmax_accuracy={self.argmax_accuracy:.4f}",
        ]
        if self.swap_accuracy is not None:
            lines.append(f"swap_accuracy={self.swap_accuracy:.4f}")
        return "\n".join(lines)


def eval_mse(model, dataset, argmax_t_min=2):
    """One-step prediction error over every sequence, t >= 1.

    The baseline repeats the previous frame.  Argmax accuracy (predicted
    vs. true brightest cell, t >= 2) is meaningful for single-object
    worlds and reported unconditionally.
    """
    params = _as_params(model)
    check_dims(params.config, dataset)
    if not dataset.sequences:
        raise InvalidArgumentError("eval_mse: dataset has no sequences")
    L = params.config.num_layers
    t_max = max(len(s) for s in dataset.sequences)
    err_sum = np.zeros((L, t_max))
    err_count = np.zeros(t_max)
    per_model, per_base = [], []
    model_se, base_se = [], []
    hits = total = 0
    with tz.no_grad():
        for seq in dataset.sequences:
            result = rollout(params, seq)
            preds = [p.data for p in result.predictions]
            frames = seq.frames
            seq_model = [float(((preds[t] - frames[t]) ** 2).mean()) for t in range(1, len(seq))]
            seq_base = [float(((frames[t - 1] - frames[t]) ** 2).mean()) for t in range(1, len(seq))]
            per_model.append(float(np.mean(seq_model)))
            per_base.append(float(np.mean(seq_base)))
            model_se.extend(seq_model)
            base_se.extend(seq_base)
            err_sum[:, :len(seq)] += result.error_means.T
            err_count[:len(seq)] += 1
            for t in range(argmax_t_min, len(seq)):
                hits += int(np.argmax(preds[t]) == np.argmax(frames[t]))
                total += 1
    layer_means = err_sum / np.maximum(err_count, 1)
    return EvalReport(
        model_mse=float(np.mean(model_se)),
        baseline_mse=float(np.mean(base_se)),
        argmax_accuracy=hits / total if total else float("nan"),
        per_sequence_mse=per_model,
        per_sequence_baseline=per_base,
        layer_error_means=layer_means,
    )


@dataclass
class SwapProbeResult:
    accuracy: float
    accuracy_right: float
    accuracy_down: float
    differ_fraction: float  # probes where the two branch predictions differ at all
    probes: int


def _unique_argmax(frame):
    flat = frame.reshape(-1)
    top = flat.max()
    if top <= 0 or np.count_nonzero(flat == top) != 1:
        raise InvalidArgumentError("action_swap_probe needs frames with a unique brightest pixel")
    return np.unravel_index(int(flat.argmax()), frame.shape)


def action_swap_probe(model, dataset, probe_t=None, mm_override=None):
    """Replay each sequence's visual history under both canonical actions.

    Every timestep t >= 1 of each replay is a probe state (``probe_t``
    restricts to a single step).  A branch counts as correct when the
    predicted brightest cell sits one step to the right (respectively one
    step down, both with wrap-around) of the object position at t-1.
    """
    params = _as_params(model)
    check_dims(params.config, dataset)
    if params.config.action_dim != 2:
        raise InvalidArgumentError("action_swap_probe requires a 2-d action space")
    h, w = params.config.height, params.config.width
    ok_right = ok_down = differ = n = 0
    with tz.no_grad():
        for seq in dataset.sequences:
            if probe_t is None:
                probe_steps = range(1, len(seq))
            else:
                if not 1 <= probe_t < len(seq):
                    raise InvalidArgumentError(f"probe_t {probe_t} outside [1, {len(seq) - 1}]")
                probe_steps = (probe_t,)
            positions = [_unique_argmax(seq.frames[t]) for t in range(len(seq))]
            branches = {}
            for name, action in (("right", RIGHT), ("down", DOWN)):
                states = init_state(params.config)
                act = np.asarray(action, dtype=np.float32)
                branches[name] = [network_step(params, states, seq.frames[t], act, mm_override).data
                                  for t in range(len(seq))]
            for t in probe_steps:
                _, r, c = positions[t - 1]
                right_pred, down_pred = branches["right"][t], branches["down"][t]
                pr = np.unravel_index(int(right_pred.argmax()), right_pred.shape)
                pd = np.unravel_index(int(down_pred.argmax()), down_pred.shape)
                ok_right += int(pr[1:] == (r, (c + 1) % w))
                ok_down += int(pd[1:] == ((r + 1) % h, c))
                differ += int(not np.array_equal(right_pred, down_pred))
                n += 1
    return SwapProbeResult(
        accuracy=(ok_right + ok_down) / (2 * n),
        accuracy_right=ok_right / n,
        accuracy_down=ok_down / n,
        differ_fraction=differ / n,
        probes=n,
    )


@dataclass
class GuDump:
    """Per-timestep unit activations, attention weights, combined R."""

    unit_h: list        # [t][d] -> (C, H, W) array
    attention: np.ndarray  # (T, D)
    combined: list      # [t] -> (C, H, W) array


def dump_gu(model, sequence, layer, out_dir=None):
    """Record the generative-unit bank of one layer over a sequence.

    When ``out_dir`` is given, writes one PGM per unit/channel/timestep,
    the combined representation alongside, and a tab-separated attention
    table (one row per timestep).
    """
    params = _as_params(model)
    config = params.config
    if not 0 <= layer < config.num_layers:
        raise InvalidArgumentError(f"layer {layer} out of range for {config.num_layers}-layer network")
    states = init_state(config)
    unit_h, combined, weights = [], [], []
    with tz.no_grad():
        for t in range(len(sequence)):
            network_step(params, states, sequence.frames[t], sequence.actions[t])
            st = states[layer]
            unit_h.append([u.h.data.copy() for u in st.units])
            combined.append(st.r.data.copy())
            weights.append(st.attention.copy())
    dump = GuDump(unit_h=unit_h, attention=np.stack(weights), combined=combined)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        for t in range(len(sequence)):
            for d, h in enumerate(dump.unit_h[t]):
                for ch in range(h.shape[0]):
                    export_pgm(h[ch], os.path.join(out_dir, f"t{t:02d}_unit{d}_ch{ch:02d}.pgm"))
            for ch in range(dump.combined[t].shape[0]):
                export_pgm(dump.combined[t][ch], os.path.join(out_dir, f"t{t:02d}_combined_ch{ch:02d}.pgm"))
        table = [f"{t}\t" + "\t".join(f"{v:.8f}" for v in dump.attention[t])
                 for t in range(len(sequence))]
        with open(os.path.join(out_dir, "attention.tsv"), "w") as f:
            f.write("\n".join(table) + "\n")
    return dump


def export_pgm(array, path):
    """ASCII PGM (P2, maxval 255); values are clamped to [0,1] then scaled."""
    arr = np.asarray(array)
    if arr.ndim != 2:
        raise InvalidArgumentError(f"export_pgm: expected a 2-d array, got shape {arr.shape}")
    pixels = np.rint(np.clip(arr, 0.0, 1.0) * 255.0).astype(int)
    h, w = pixels.shape
    lines = [f"P2", f"{w} {h}", "255"]
    lines.extend(" ".join(str(v) for v in row) for row in pixels)
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def read_pgm(path):
    """Parse an ASCII PGM written by :func:`export_pgm` back to uint8."""
    with open(path) as f:
        tokens = f.read().split()
    if not tokens or tokens[0] != "P2":
        raise InvalidArgumentError(f"{path}: not an ASCII PGM")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255:
        raise InvalidArgumentError(f"{path}: unsupported maxval {maxval}")
    values = np.asarray([int(t) for t in tokens[4:]], dtype=np.int64)
    if values.size != w * h or values.min() < 0 or values.max() > 255:
        raise InvalidArgumentError(f"{path}: malformed pixel data")
    return values.reshape(h, w).astype(np.uint8)
