import sys
import time

import numpy as np

from ampnet import tensor as tz
from ampnet.data import gen_minworld
from ampnet.evaluate import action_swap_probe, eval_mse
from ampnet.network import NetworkConfig, init_parameters, rollout
from ampnet.training import Adam, Checkpoint, TrainConfig, compute_loss, save_checkpoint

name = sys.argv[1]
r_channels = tuple(int(x) for x in sys.argv[2].split(","))
du_channels = tuple(int(x) for x in sys.argv[3].split(","))
steps = int(sys.argv[4]) if len(sys.argv) > 4 else 12
iters = int(sys.argv[5]) if len(sys.argv) > 5 else 30000

ds = gen_minworld(steps=steps)
cfg = NetworkConfig(r_channels=r_channels, du_channels=du_channels)
tc = TrainConfig(seed=0)
rng = np.random.default_rng(tc.seed)
params = init_parameters(cfg, rng)
named = params.named()
opt = Adam(named, tc.learning_rate)
order = []
n = len(ds.sequences)
t0 = time.time()


def wrap_accuracy():
    hits = total = 0
    with tz.no_grad():
        for seq in ds.sequences:
            res = rollout(params, seq)
            for t in range(2, len(seq)):
                prev = np.unravel_index(int(seq.frames[t - 1].argmax()), seq.frames[t - 1].shape)[1:]
                cur = np.unravel_index(int(seq.frames[t].argmax()), seq.frames[t].shape)[1:]
                if not ((cur[1] < prev[1]) or (cur[0] < prev[0])):
                    continue
                total += 1
                hits += int(np.argmax(res.predictions[t].data) == np.argmax(seq.frames[t]))
    return hits, total


for it in range(1, iters + 1):
    if not order:
        order = list(rng.permutation(n))
    seq = ds.sequences[order.pop(0)]
    res = rollout(params, seq)
    loss = compute_loss(res.errors)
    opt.zero_grad()
    loss.backward()
    opt.step()
    if it % 2000 == 0:
        rep = eval_mse(params, ds)
        probe = action_swap_probe(params, ds)
        wh, wt = wrap_accuracy()
        print(f"iter {it:6d} t={time.time() - t0:7.0f}s loss {loss.item():.5f} "
              f"mse {rep.model_mse:.6f} argmax {rep.argmax_accuracy:.4f} "
              f"wraps {wh}/{wt} swap {probe.accuracy:.3f} (R {probe.accuracy_right:.3f}/D {probe.accuracy_down:.3f}) "
              f"differ {probe.differ_fraction:.3f}", flush=True)
        save_checkpoint(f".calib/{name}_latest.afac", Checkpoint.from_parameters(params))
