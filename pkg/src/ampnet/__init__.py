"""Action-modulated hierarchical predictive-coding network.

A stack of recurrent layers predicts the next camera frame one step
ahead; the current motor action selects, through a small attention MLP,
how the bank of recurrent units in each layer is combined.  Ships with
two desk-scale experiments (a moving-pixel world and a simulated
line-tracer robot), full-sequence gradient training, and a CLI.
"""

from .cells import ConvLSTMParams, ConvLSTMState, MLPParams, action_mlp, convlstm_step
from .data import (Dataset, Sequence, TracerConfig, TrackSpec, gen_minworld,
                   read_dataset, sim_linetracer, write_dataset)
from .errors import (ConfigMismatchError, FormatError, InvalidArgumentError,
                     TrainingDivergedError)
from .evaluate import (EvalReport, GuDump, SwapProbeResult, action_swap_probe,
                       dump_gu, eval_mse, export_pgm, read_pgm)
from .network import (LayerState, NetworkConfig, Parameters, init_parameters,
                      init_state, network_step, rollout)
from .tensor import Tensor, no_grad, use_float64
from .training import (Adam, Checkpoint, TrainConfig, compute_loss, gradient_check,
                       load_checkpoint, save_checkpoint, train)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
