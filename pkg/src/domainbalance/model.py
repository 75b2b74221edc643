"""Embedding trainer: MLP backbone, optional gated residual block, margin loss.

Forward: inputs -> affine+ReLU stack -> affine -> feature x -> (residual block)
-> L2-normalize. The classification loss margin is scaled per class by the
frequency-indicator table, which is rebuilt from the live prototypes every
refresh_period iterations (default: once per epoch). Prototypes are stored
unnormalized; the loss normalizes in-graph.

The optimizer is SGD with momentum and coupled weight decay,

    v <- mu * v + g + wd * theta
    theta <- theta - lr * v

applied uniformly to every trainable array (batch-norm running statistics are
buffers, not parameters). With velocities starting at zero the first step
equals a plain SGD step.

Checkpoint format "DBCK": magic, u32 version, u64 header length, a JSON header
(resolved config, counters, rng state, array manifest), then the arrays in
manifest order; 2-D float64 arrays are embedded as DBMX matrix blocks, 1-D and
scalar arrays as raw little-endian blocks. Save/load round-trips are
byte-exact and resume training on the identical trajectory.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import dfi as dfi_mod
from . import losses as losses_mod
from . import rbm as rbm_mod
from . import tensor
from .errors import (
    ConfigError,
    DimMismatchError,
    EmptyDatasetError,
    FormatError,
    LengthMismatchError,
    VersionMismatchError,
)
from .rng import Rng

CHECKPOINT_MAGIC = b"DBCK"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class FeatureBatch:
    x: np.ndarray
    labels: np.ndarray | None = None
    normalized: bool = False


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    num_classes: int
    hidden_dims: tuple = (128, 128)
    feature_dim: int = 64
    use_rbm: bool = False
    rbm_hidden: int | None = None
    gate_fixed: float | None = None   # pin f(x) to a constant (no-gate ablation)
    use_gate_loss: bool = False
    force_unit_beta: bool = False     # test hook: margin family collapses to cosface
    loss: losses_mod.LossConfig = field(default_factory=losses_mod.LossConfig)
    dfi: dfi_mod.DfiConfig = field(default_factory=dfi_mod.DfiConfig)

    def validated(self) -> "ModelConfig":
        if self.input_dim < 1 or self.feature_dim < 1:
            raise ConfigError("input_dim and feature_dim must be >= 1")
        if any(h < 1 for h in self.hidden_dims):
            raise ConfigError("hidden layer widths must be >= 1")
        if self.num_classes < self.dfi.k_neighbors + 1:
            raise ConfigError(
                f"num_classes={self.num_classes} needs at least "
                f"k_neighbors+1={self.dfi.k_neighbors + 1} classes")
        if self.use_gate_loss and (not self.use_rbm or self.gate_fixed is not None):
            raise ConfigError("gate loss requires the block with a learned gate")
        self.loss.validated()
        self.dfi.validated()
        return self


@dataclass(frozen=True)
class OptimConfig:
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 0.0005
    lr_steps: tuple = (5, 8, 11)
    lr_gamma: float = 0.1
    epochs: int = 15
    batch_size: int = 32

    def validated(self) -> "OptimConfig":
        if self.lr < 0 or self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("bad optimizer settings")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must be in [0, 1)")
        return self


@dataclass
class TrainState:
    config: ModelConfig
    layers: list            # [(w, b), ...] backbone affines, last one linear
    prototypes: np.ndarray  # (C, feature_dim), unnormalized
    rbm: rbm_mod.RbmParams | None
    dfi_table: dfi_mod.DfiTable
    velocities: dict
    rng: Rng
    epoch: int = 0
    iteration: int = 0
    refresh_period: int | None = None


def param_arrays(state: TrainState) -> dict:
    """Name -> live array for every trainable tensor, in a fixed order."""
    out = {}
    for i, (w, b) in enumerate(state.layers):
        out[f"backbone.{i}.w"] = w
        out[f"backbone.{i}.b"] = b
    out["prototypes"] = state.prototypes
    if state.rbm is not None:
        p = state.rbm
        out["rbm.w1"] = p.w1
        out["rbm.b1"] = p.b1
        out["rbm.gamma"] = p.bn.gamma
        out["rbm.beta_shift"] = p.bn.beta_shift
        out["rbm.w2"] = p.w2
        out["rbm.b2"] = p.b2
        out["rbm.gate_w"] = p.gate_w
        out["rbm.gate_b"] = p.gate_b
    return out


def init_state(config: ModelConfig, seed: int) -> TrainState:
    config = config.validated()
    rng = Rng(seed)
    dims = [config.input_dim, *config.hidden_dims]
    layers = []
    for i in range(len(dims) - 1):
        w = rng.gaussian_matrix(dims[i], dims[i + 1]) * np.sqrt(2.0 / dims[i])
        layers.append((w, np.zeros(dims[i + 1])))
    w_out = rng.gaussian_matrix(dims[-1], config.feature_dim) * np.sqrt(1.0 / dims[-1])
    layers.append((w_out, np.zeros(config.feature_dim)))

    prototypes = rng.gaussian_matrix(config.num_classes, config.feature_dim)
    prototypes *= 1.0 / np.sqrt(config.feature_dim)

    rbm_params = None
    if config.use_rbm:
        rbm_params = rbm_mod.init_rbm_params(rng, config.feature_dim, config.rbm_hidden)

    table = dfi_mod.build_table(tensor.l2_normalize_rows(prototypes), config.dfi, 0)

    state = TrainState(config=config, layers=layers, prototypes=prototypes,
                       rbm=rbm_params, dfi_table=table, velocities={}, rng=rng,
                       refresh_period=config.dfi.refresh_period)
    state.velocities = {k: np.zeros_like(v) for k, v in param_arrays(state).items()}
    return state


def _backbone_forward(state: TrainState, inputs):
    """Affine+ReLU stack, final affine, then row normalization onto the unit
    sphere. Pinning the trunk norm gives the additive residual block a fixed
    reference scale (otherwise branch and trunk inflate each other: the loss
    only sees directions, so radial growth is gradient-invisible and runs
    away). Returns (unit-norm feature, activations); activations[i] feeds
    layer i, the last two entries are the raw final affine and the feature."""
    h = tensor.as_matrix(inputs)
    if h.shape[1] != state.config.input_dim:
        raise DimMismatchError(f"inputs {h.shape} vs input_dim {state.config.input_dim}")
    acts = [h]
    n_hidden = len(state.layers) - 1
    for i, (w, b) in enumerate(state.layers):
        z = h @ w + b
        h = np.maximum(z, 0.0) if i < n_hidden else z
        acts.append(h)
    feat = tensor.l2_normalize_rows(h)
    acts.append(feat)
    return feat, acts


def _backbone_backward(state: TrainState, acts, grad_x, grads: dict) -> None:
    # chain through the output normalization: only tangential motion counts
    feat = acts[-1]
    norms = tensor.row_norms(acts[-2])
    radial = np.sum(grad_x * feat, axis=1, keepdims=True)
    dh = (grad_x - radial * feat) / norms[:, None]
    n_hidden = len(state.layers) - 1
    for i in range(len(state.layers) - 1, -1, -1):
        w, _ = state.layers[i]
        dz = dh if i == n_hidden else dh * (acts[i + 1] > 0.0)
        grads[f"backbone.{i}.w"] = acts[i].T @ dz
        grads[f"backbone.{i}.b"] = dz.sum(axis=0)
        if i > 0:
            dh = dz @ w.T


def forward_embed(state: TrainState, inputs, mode: str = rbm_mod.MODE_EVAL):
    """Embedding pass. Returns (FeatureBatch of unit-norm rows, gate or None)."""
    x, _ = _backbone_forward(state, inputs)
    gate = None
    if state.rbm is not None:
        x, gate, _ = rbm_mod.rbm_forward(
            x, state.rbm, mode,
            fixed_gate=state.config.gate_fixed,
            update_running=(mode == rbm_mod.MODE_TRAIN))
    xn = tensor.l2_normalize_rows(x)
    return FeatureBatch(x=xn, labels=None, normalized=True), gate


def _active_beta(state: TrainState) -> np.ndarray:
    if state.config.force_unit_beta:
        return np.ones(state.config.num_classes)
    return state.dfi_table.beta


def train_step(state: TrainState, batch, optim: OptimConfig, lr: float):
    """One forward/backward/update on (inputs, labels). Returns (state, metrics)."""
    inputs, labels = batch
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if labels.shape[0] != np.asarray(inputs).shape[0]:
        raise LengthMismatchError("batch inputs and labels disagree")
    cfg = state.config

    x, acts = _backbone_forward(state, inputs)
    rbm_cache = None
    gate = None
    if cfg.use_rbm:
        x_re, gate, rbm_cache = rbm_mod.rbm_forward(
            x, state.rbm, rbm_mod.MODE_TRAIN, fixed_gate=cfg.gate_fixed)
    else:
        x_re = x

    beta = _active_beta(state)
    cls_out = losses_mod.loss_forward(x_re, labels, state.prototypes, beta, cfg.loss)

    rrm_value = None
    grad_gate = None
    total = cls_out.value
    if cfg.use_gate_loss:
        rrm_value, rrm_grad = losses_mod.rrm_loss(gate, beta[labels])
        combined = losses_mod.combined_loss(cls_out, rrm_value, rrm_grad,
                                            cfg.loss.lambda_)
        total = combined.value
        grad_gate = combined.grad_gate

    grads = {"prototypes": cls_out.grad_prototypes}
    if cfg.use_rbm:
        grad_x, rbm_grads = rbm_mod.rbm_backward(cls_out.grad_features, grad_gate,
                                                 rbm_cache)
        grads["rbm.w1"] = rbm_grads.w1
        grads["rbm.b1"] = rbm_grads.b1
        grads["rbm.gamma"] = rbm_grads.gamma
        grads["rbm.beta_shift"] = rbm_grads.beta_shift
        grads["rbm.w2"] = rbm_grads.w2
        grads["rbm.b2"] = rbm_grads.b2
        grads["rbm.gate_w"] = rbm_grads.gate_w
        grads["rbm.gate_b"] = rbm_grads.gate_b
    else:
        grad_x = cls_out.grad_features
    _backbone_backward(state, acts, grad_x, grads)

    mu, wd = optim.momentum, optim.weight_decay
    params = param_arrays(state)
    for name, theta in params.items():
        v = state.velocities[name]
        v *= mu
        v += grads[name] + wd * theta
        theta -= lr * v

    state.iteration += 1
    if state.refresh_period is not None:
        cfg_eff = dataclasses.replace(cfg.dfi, refresh_period=state.refresh_period)
        state.dfi_table = dfi_mod.refresh_if_due(
            state.dfi_table, tensor.l2_normalize_rows(state.prototypes),
            cfg_eff, state.iteration)

    metrics = {
        "loss_cls": cls_out.value,
        "loss_rrm": rrm_value,
        "loss_total": total,
        "batch_size": labels.shape[0],
    }
    return state, metrics


def lr_at_epoch(optim: OptimConfig, epoch: int) -> float:
    """Schedule for a 1-based epoch index: lr * gamma^(steps already passed)."""
    drops = sum(1 for s in optim.lr_steps if s < epoch)
    return optim.lr * optim.lr_gamma ** drops


def fit(state: TrainState, inputs, labels, optim: OptimConfig, callbacks=None):
    """Epoch loop with per-epoch reshuffling. Returns the history list."""
    optim = optim.validated()
    inputs = tensor.as_matrix(inputs)
    labels = np.asarray(labels, dtype=np.int64).ravel()
    n = inputs.shape[0]
    if n == 0:
        raise EmptyDatasetError("empty training set")
    if labels.shape[0] != n:
        raise LengthMismatchError("inputs and labels disagree")
    if optim.batch_size > n:
        raise ConfigError(f"batch_size {optim.batch_size} > dataset size {n}")

    bs = optim.batch_size
    starts = [s for s in range(0, n, bs) if n - s >= 2 or n - s >= bs]
    if state.refresh_period is None:
        state.refresh_period = len(starts)

    history = []
    for epoch in range(state.epoch + 1, state.epoch + optim.epochs + 1):
        lr = lr_at_epoch(optim, epoch)
        perm = state.rng.permutation(n)
        tot_cls = tot_rrm = tot_all = 0.0
        seen = 0
        saw_rrm = False
        for s in starts:
            idx = perm[s:s + bs]
            _, m = train_step(state, (inputs[idx], labels[idx]), optim, lr)
            k = m["batch_size"]
            seen += k
            tot_cls += m["loss_cls"] * k
            tot_all += m["loss_total"] * k
            if m["loss_rrm"] is not None:
                saw_rrm = True
                tot_rrm += m["loss_rrm"] * k
        row = {
            "epoch": epoch,
            "lr": lr,
            "loss_dbm": tot_cls / seen,
            "loss_rrm": (tot_rrm / seen) if saw_rrm else None,
            "loss_total": tot_all / seen,
        }
        history.append(row)
        state.epoch = epoch
        for cb in callbacks or ():
            cb(state, row)
    return history


def write_history(history, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("epoch,lr,loss_dbm,loss_rrm,loss_total\n")
        for row in history:
            rrm = "" if row["loss_rrm"] is None else repr(row["loss_rrm"])
            fh.write(f"{row['epoch']},{row['lr']!r},{row['loss_dbm']!r},"
                     f"{rrm},{row['loss_total']!r}\n")


# ---------------------------------------------------------------------------
# checkpoint serialization

def _config_to_dict(config: ModelConfig) -> dict:
    d = dataclasses.asdict(config)
    d["hidden_dims"] = list(config.hidden_dims)
    return d


def _config_from_dict(d: dict) -> ModelConfig:
    loss = losses_mod.LossConfig(**d["loss"])
    dfi_cfg = dfi_mod.DfiConfig(**d["dfi"])
    rest = {k: v for k, v in d.items() if k not in ("loss", "dfi")}
    rest["hidden_dims"] = tuple(rest["hidden_dims"])
    return ModelConfig(loss=loss, dfi=dfi_cfg, **rest)


def _ordered_arrays(state: TrainState) -> dict:
    arrays = dict(param_arrays(state))
    for name, v in state.velocities.items():
        arrays[f"vel.{name}"] = v
    if state.rbm is not None:
        arrays["rbm.running_mean"] = state.rbm.bn.running_mean
        arrays["rbm.running_var"] = state.rbm.bn.running_var
    arrays["dfi.ic"] = state.dfi_table.ic
    arrays["dfi.beta"] = state.dfi_table.beta
    arrays["dfi.neighbor_ids"] = state.dfi_table.neighbor_ids
    return arrays


def save_checkpoint(state: TrainState, path) -> None:
    arrays = _ordered_arrays(state)
    manifest = []
    for name, a in arrays.items():
        a = np.asarray(a)
        kind = "dbmx" if (a.dtype == np.float64 and a.ndim == 2) else str(a.dtype.str)
        manifest.append({"name": name, "kind": kind, "shape": list(a.shape)})
    header = {
        "config": _config_to_dict(state.config),
        "epoch": state.epoch,
        "iteration": state.iteration,
        "refresh_period": state.refresh_period,
        "dfi_built_at": state.dfi_table.built_at_iteration,
        "rng_state": list(state.rng.get_state()),
        "rng_seed": state.rng.seed,
        "arrays": manifest,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for entry in manifest:
            a = np.asarray(arrays[entry["name"]])
            if entry["kind"] == "dbmx":
                tensor.write_matrix_to(fh, a)
            else:
                fh.write(np.ascontiguousarray(a).astype(entry["kind"]).tobytes())


def load_checkpoint(path) -> TrainState:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if len(magic) < 4:
            raise OSError("truncated checkpoint")
        if magic != CHECKPOINT_MAGIC:
            raise FormatError(f"bad checkpoint magic {magic!r}")
        head = fh.read(12)
        if len(head) < 12:
            raise OSError("truncated checkpoint header")
        version, hlen = struct.unpack("<IQ", head)
        if version != CHECKPOINT_VERSION:
            raise VersionMismatchError(f"checkpoint version {version}")
        blob = fh.read(hlen)
        if len(blob) < hlen:
            raise OSError("truncated checkpoint header")
        try:
            header = json.loads(blob.decode("utf-8"))
        except ValueError as e:
            raise FormatError(f"bad checkpoint header: {e}") from e

        arrays = {}
        for entry in header["arrays"]:
            if entry["kind"] == "dbmx":
                a = tensor.read_matrix_from(fh)
            else:
                dt = np.dtype(entry["kind"])
                count = int(np.prod(entry["shape"])) if entry["shape"] else 1
                payload = fh.read(count * dt.itemsize)
                if len(payload) < count * dt.itemsize:
                    raise OSError("truncated checkpoint payload")
                a = np.frombuffer(payload, dtype=dt).reshape(entry["shape"]).copy()
            arrays[entry["name"]] = a

    config = _config_from_dict(header["config"])
    n_layers = len(config.hidden_dims) + 1
    layers = [(arrays[f"backbone.{i}.w"], arrays[f"backbone.{i}.b"])
              for i in range(n_layers)]

    rbm_params = None
    if config.use_rbm:
        bn = rbm_mod.BatchNormState(
            gamma=arrays["rbm.gamma"], beta_shift=arrays["rbm.beta_shift"],
            running_mean=arrays["rbm.running_mean"],
            running_var=arrays["rbm.running_var"])
        rbm_params = rbm_mod.RbmParams(
            w1=arrays["rbm.w1"], b1=arrays["rbm.b1"], bn=bn,
            w2=arrays["rbm.w2"], b2=arrays["rbm.b2"],
            gate_w=arrays["rbm.gate_w"],
            gate_b=arrays["rbm.gate_b"].reshape(()))

    for name in ("dfi.ic", "dfi.beta", "dfi.neighbor_ids"):
        arrays[name].flags.writeable = False
    table = dfi_mod.DfiTable(ic=arrays["dfi.ic"], beta=arrays["dfi.beta"],
                             neighbor_ids=arrays["dfi.neighbor_ids"],
                             built_at_iteration=header["dfi_built_at"])

    rng = Rng(header["rng_seed"])
    rng.set_state(header["rng_state"])

    state = TrainState(config=config, layers=layers,
                       prototypes=arrays["prototypes"], rbm=rbm_params,
                       dfi_table=table, velocities={}, rng=rng,
                       epoch=header["epoch"], iteration=header["iteration"],
                       refresh_period=header["refresh_period"])
    state.velocities = {name: arrays[f"vel.{name}"].reshape(np.shape(arr))
                        for name, arr in param_arrays(state).items()}
    return state
