import time
import numpy as np
from ampnet.data import gen_minworld
from ampnet.network import NetworkConfig, init_parameters, rollout
from ampnet.training import TrainConfig, Adam, compute_loss
from ampnet.evaluate import eval_mse, action_swap_probe
from ampnet.training import Checkpoint

ds = gen_minworld()
cfg = NetworkConfig()
tc = TrainConfig(seed=0)
rng = np.random.default_rng(tc.seed)
params = init_parameters(cfg, rng)
named = params.named()
opt = Adam(named, tc.learning_rate, tc.beta1, tc.beta2, tc.epsilon)
order = []
n = len(ds.sequences)
t0 = time.time()
for it in range(1, 20001):
    if not order:
        order = list(rng.permutation(n))
    seq = ds.sequences[order.pop(0)]
    res = rollout(params, seq)
    loss = compute_loss(res.errors)
    opt.zero_grad(); loss.backward(); opt.step()
    if it % 1000 == 0:
        rep = eval_mse(params, ds)
        probe = action_swap_probe(params, ds)
        print(f"iter {it:6d}  t={time.time()-t0:7.1f}s  loss {loss.item():.5f}  "
              f"mse {rep.model_mse:.6f}  base {rep.baseline_mse:.6f}  "
              f"argmax {rep.argmax_accuracy:.3f}  swap {probe.accuracy:.3f} "
              f"(R {probe.accuracy_right:.3f}/D {probe.accuracy_down:.3f})", flush=True)
