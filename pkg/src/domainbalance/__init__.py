"""Long-tailed domain balancing for embedding models.

Margin softmax training where the margin of each class is scaled by a
frequency indicator computed from prototype crowding, plus a gated residual
feature block whose gate is regressed toward that indicator. Includes a
synthetic long-tailed data generator, an evaluation harness with per-domain
verification metrics, analytic gradients throughout, and the `db` command
line tool.
"""

from . import cli, dfi, gradcheck, losses, metrics, model, rbm, synth, tensor
from .dfi import DfiConfig, DfiTable, build_table, inter_class_compactness
from .errors import DomainBalanceError
from .losses import LossConfig, LossOutput, cosface_forward, dbm_forward, rrm_loss
from .metrics import rank1_identification, tar_at_far, verification_accuracy
from .model import ModelConfig, OptimConfig, TrainState, fit, init_state, train_step
from .rbm import RbmParams, rbm_backward, rbm_forward
from .rng import Rng
from .synth import SynthConfig, SyntheticDataset, generate, make_verification_pairs

__version__ = "0.1.0"
