"""Command-line entry point.

Subcommands: gen-minworld, gen-linetracer, train, predict, eval,
gradcheck, dump-gu.  Every option may also come from a ``--config`` file
of ``key=value`` lines (flags win).  The effective configuration is echoed
to stdout before the run.  Exit codes: 0 success, 1 validation/usage
error, 2 I/O or file-format error.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import data as dt, evaluate as ev, training as tr
from .errors import FormatError, InvalidArgumentError, TrainingDivergedError
from .network import NetworkConfig


def _channels(text):
    return () if not text else tuple(int(x) for x in text.split(","))


def _default_seed():
    return int(os.environ.get("AFA_SEED", "0"))


def _net_config(args, dataset):
    return NetworkConfig(
        num_layers=args.layers,
        height=dataset.height, width=dataset.width,
        channels=dataset.channels, action_dim=dataset.action_dim,
        gu_per_layer=args.gu,
        r_channels=_channels(args.r_channels),
        du_channels=_channels(args.du_channels),
        mlp_hidden=args.mlp_hidden,
    )


def run_gen_minworld(args):
    dataset = dt.gen_minworld(height=args.height, width=args.width, steps=args.steps,
                              directions=tuple(args.directions.split(",")))
    dt.write_dataset(args.out, dataset)
    print(f"wrote {len(dataset)} sequences to {args.out}")
    return 0


def run_gen_linetracer(args):
    track = dt.TrackSpec(half_length=args.half_length, half_width=args.half_width,
                         corner_radius=args.corner_radius, line_width=args.line_width)
    dataset = dt.sim_linetracer(track=track, steps=args.steps, seed=args.seed,
                                noise=args.noise, seq_len=args.seq_len)
    dt.write_dataset(args.out, dataset)
    print(f"wrote {len(dataset)} sequences ({args.steps} steps) to {args.out}")
    return 0


def run_train(args):
    dataset = dt.read_dataset(args.data)
    net = _net_config(args, dataset)
    cfg = tr.TrainConfig(learning_rate=args.lr, max_iterations=args.iters,
                         error_threshold=args.threshold,
                         lambda_layer0=args.lambda0, lambda_upper=args.lambda_upper,
                         seed=args.seed, log_every=args.log_every)
    checkpoint, losses = tr.train(dataset, cfg, net)
    tr.save_checkpoint(args.out, checkpoint)
    if args.loss_log:
        with open(args.loss_log, "w") as f:
            f.write("\n".join(f"{i + 1}\t{v:.8f}" for i, v in enumerate(losses)) + "\n")
    print(f"trained {len(losses)} iterations, final loss {losses[-1]:.6f}, saved {args.out}")
    return 0


def run_predict(args):
    checkpoint = tr.load_checkpoint(args.model)
    dataset = dt.read_dataset(args.data)
    params = checkpoint.to_parameters()
    dt.check_dims(params.config, dataset)
    os.makedirs(args.out_dir, exist_ok=True)
    limit = len(dataset) if args.limit < 0 else min(args.limit, len(dataset))
    from . import tensor as tz
    from .network import rollout
    count = 0
    with tz.no_grad():
        for i in range(limit):
            result = rollout(params, dataset.sequences[i])
            for t, pred in enumerate(result.predictions):
                frame = pred.data
                if frame.shape[0] == 1:
                    ev.export_pgm(frame[0], os.path.join(args.out_dir, f"seq{i:03d}_t{t:02d}.pgm"))
                else:
                    for c in range(frame.shape[0]):
                        ev.export_pgm(frame[c], os.path.join(args.out_dir, f"seq{i:03d}_t{t:02d}_ch{c}.pgm"))
                count += 1
    print(f"wrote {count} predicted frames to {args.out_dir}")
    return 0


def run_eval(args):
    checkpoint = tr.load_checkpoint(args.model)
    dataset = dt.read_dataset(args.data)
    report = ev.eval_mse(checkpoint, dataset)
    if args.swap:
        probe_t = None if args.probe_t < 0 else args.probe_t
        probe = ev.action_swap_probe(checkpoint, dataset, probe_t=probe_t)
        report.swap_accuracy = probe.accuracy
    print(report.format())
    if args.report:
        with open(args.report, "w") as f:
            f.write("sequence\tmodel_mse\tbaseline_mse\n")
            for i, (m, b) in enumerate(zip(report.per_sequence_mse, report.per_sequence_baseline)):
                f.write(f"{i}\t{m:.8f}\t{b:.8f}\n")
    return 0


def run_gradcheck(args):
    net = NetworkConfig(
        num_layers=args.layers, height=args.height, width=args.width,
        channels=args.channels, action_dim=args.action_dim,
        gu_per_layer=args.gu,
        r_channels=_channels(args.r_channels) or tuple(2 + l for l in range(args.layers)),
        du_channels=_channels(args.du_channels) or tuple([2] * (args.layers - 1)),
        mlp_hidden=args.mlp_hidden,
    )
    report = tr.gradient_check(net, eps=args.eps, tol=args.tol, seed=args.seed,
                               timesteps=args.steps)
    print(report.format())
    return 0 if report.passed else 1


def run_dump_gu(args):
    checkpoint = tr.load_checkpoint(args.model)
    dataset = dt.read_dataset(args.data)
    params = checkpoint.to_parameters()
    dt.check_dims(params.config, dataset)
    if not 0 <= args.seq < len(dataset):
        raise InvalidArgumentError(f"sequence index {args.seq} out of range (dataset has {len(dataset)})")
    dump = ev.dump_gu(params, dataset.sequences[args.seq], args.layer, out_dir=args.out_dir)
    print(f"dumped layer {args.layer}, {len(dump.combined)} timesteps, "
          f"{dump.attention.shape[1]} units to {args.out_dir}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="ampnet",
                                     description="Action-modulated predictive network")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key=value file; flags override its entries")
        p.add_argument("--seed", type=int, default=_default_seed(),
                       help="RNG seed (falls back to AFA_SEED, then 0)")

    p = sub.add_parser("gen-minworld", help="generate the moving-pixel dataset")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--height", type=int, default=8)
    p.add_argument("--width", type=int, default=12)
    p.add_argument("--steps", type=int, default=12)
    p.add_argument("--directions", default="right,down")
    p.set_defaults(func=run_gen_minworld)

    p = sub.add_parser("gen-linetracer", help="simulate the line-tracer dataset")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=5000)
    p.add_argument("--seq-len", type=int, default=20)
    p.add_argument("--noise", type=float, default=0.3, help="wheel-speed noise std (rad/s)")
    p.add_argument("--half-length", type=float, default=0.6)
    p.add_argument("--half-width", type=float, default=0.4)
    p.add_argument("--corner-radius", type=float, default=0.2)
    p.add_argument("--line-width", type=float, default=0.02)
    p.set_defaults(func=run_gen_linetracer)

    def net_flags(p):
        p.add_argument("--layers", type=int, default=2)
        p.add_argument("--gu", type=int, default=2, help="generative units per layer")
        p.add_argument("--r-channels", default="", help="csv, per layer (default 8,16,...)")
        p.add_argument("--du-channels", default="", help="csv, per layer above 0 (default 8,16,...)")
        p.add_argument("--mlp-hidden", type=int, default=4)

    p = sub.add_parser("train", help="train on a dataset file")
    common(p)
    net_flags(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--iters", type=int, default=100_000)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--threshold", type=float, default=None, help="early-stop loss threshold")
    p.add_argument("--lambda0", type=float, default=1.0)
    p.add_argument("--lambda-upper", type=float, default=0.1)
    p.add_argument("--log-every", type=int, default=0)
    p.add_argument("--loss-log", default="", help="write per-iteration losses here")
    p.set_defaults(func=run_train)

    p = sub.add_parser("predict", help="write one PGM per predicted frame")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--limit", type=int, default=-1, help="max sequences (-1 = all)")
    p.set_defaults(func=run_predict)

    p = sub.add_parser("eval", help="prediction MSE vs copy-last baseline")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--swap", type=int, default=0, choices=(0, 1),
                   help="also run the action-swap probe (single-pixel data only)")
    p.add_argument("--probe-t", type=int, default=-1, help="probe timestep (-1 = last)")
    p.add_argument("--report", default="", help="write per-sequence TSV here")
    p.set_defaults(func=run_eval)

    p = sub.add_parser("gradcheck", help="analytic vs finite-difference gradients")
    common(p)
    p.add_argument("--layers", type=int, default=1)
    p.add_argument("--height", type=int, default=4)
    p.add_argument("--width", type=int, default=4)
    p.add_argument("--channels", type=int, default=1)
    p.add_argument("--action-dim", type=int, default=2)
    p.add_argument("--gu", type=int, default=2)
    p.add_argument("--r-channels", default="", help="csv (default 2,3,... per layer)")
    p.add_argument("--du-channels", default="", help="csv (default 2 per upper layer)")
    p.add_argument("--mlp-hidden", type=int, default=3)
    p.add_argument("--steps", type=int, default=3, help="rollout timesteps")
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=run_gradcheck)

    p = sub.add_parser("dump-gu", help="export generative-unit activations")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--seq", type=int, default=0)
    p.add_argument("--layer", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=run_dump_gu)

    return parser


def _load_config_file(path):
    pairs = []
    with open(path) as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InvalidArgumentError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key == "config":
                raise InvalidArgumentError(f"{path}:{lineno}: nested config files are not supported")
            pairs.append((key, value))
    return pairs


def _echo(args):
    print("# effective configuration")
    for key in sorted(vars(args)):
        if key in ("func", "config"):
            continue
        print(f"{key}={getattr(args, key)}")


def cli_dispatch(argv):
    """Parse and run one invocation; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "config", None):
            injected = [argv[0]]
            for key, value in _load_config_file(args.config):
                injected.append(f"--{key.replace('_', '-')}")
                injected.append(value)
            injected.extend(argv[1:])
            args = parser.parse_args(injected)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    except InvalidArgumentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        _echo(args)
        return args.func(args)
    except (InvalidArgumentError, TrainingDivergedError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(cli_dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
