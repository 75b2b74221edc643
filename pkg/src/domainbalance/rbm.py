"""Gated residual feature block: x_re = x + f(x) * R(x).

R(x) is a bottleneck FC -> batch norm -> ReLU -> FC back to feature width.
The soft gate f(x) = softplus(x . gate_w + gate_b) is nonnegative by
construction and is regressed toward the per-class frequency indicator by the
gate loss, so tail-domain features receive a larger residual correction than
head-domain ones. The second FC starts at zero, so an untrained block is the
identity map.

Backward is exact, including the batch-statistics terms of train-mode batch
norm (perturbing one input moves the batch mean/variance, and those paths are
part of the returned gradients).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor
from .errors import BatchTooSmallError, DimMismatchError, StaleCacheError
from .rng import Rng

MODE_TRAIN = "train"
MODE_EVAL = "eval"


@dataclass
class BatchNormState:
    gamma: np.ndarray
    beta_shift: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.9  # retention factor: running <- m*running + (1-m)*batch
    eps: float = 1e-5

    def copy(self) -> "BatchNormState":
        return BatchNormState(self.gamma.copy(), self.beta_shift.copy(),
                              self.running_mean.copy(), self.running_var.copy(),
                              self.momentum, self.eps)


@dataclass
class RbmParams:
    w1: np.ndarray        # (d, h)
    b1: np.ndarray        # (h,)
    bn: BatchNormState
    w2: np.ndarray        # (h, d)
    b2: np.ndarray        # (d,)
    gate_w: np.ndarray    # (d,)
    gate_b: np.ndarray    # () scalar, kept as 0-d array so updates are uniform

    @property
    def feature_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.w1.shape[1]

    def copy(self) -> "RbmParams":
        return RbmParams(self.w1.copy(), self.b1.copy(), self.bn.copy(),
                         self.w2.copy(), self.b2.copy(),
                         self.gate_w.copy(), self.gate_b.copy())


@dataclass
class RbmGrads:
    w1: np.ndarray
    b1: np.ndarray
    gamma: np.ndarray
    beta_shift: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    gate_w: np.ndarray
    gate_b: np.ndarray


@dataclass
class RbmCache:
    mode: str
    x: np.ndarray
    xhat: np.ndarray
    inv_std: np.ndarray
    relu_mask: np.ndarray
    r: np.ndarray
    residual: np.ndarray
    gate: np.ndarray
    gate_sigmoid: np.ndarray | None  # None when the gate was pinned
    params: RbmParams
    consumed: bool = field(default=False)


# Gate bias starts negative so the residual branch opens gradually: at
# softplus(-3) ~ 0.05 the branch barely perturbs the trunk while the second
# FC is still settling, and the gate regression pulls the gate up toward the
# per-class balancing targets. Starting the gate at softplus(0) ~ 0.69 lets
# branch and trunk inflate each other before the prototypes have organized.
GATE_BIAS_INIT = -3.0


def init_rbm_params(rng: Rng, feature_dim: int, hidden_dim: int | None = None) -> RbmParams:
    # Full-width branch by default: a d/4 bottleneck starves the correction at
    # this feature size (the branch then cannot beat the plain-margin baseline).
    h = feature_dim if hidden_dim is None else hidden_dim
    w1 = rng.gaussian_matrix(feature_dim, h) * np.sqrt(2.0 / feature_dim)
    bn = BatchNormState(gamma=np.ones(h), beta_shift=np.zeros(h),
                        running_mean=np.zeros(h), running_var=np.ones(h))
    return RbmParams(
        w1=w1, b1=np.zeros(h), bn=bn,
        w2=np.zeros((h, feature_dim)), b2=np.zeros(feature_dim),
        gate_w=np.zeros(feature_dim), gate_b=np.full((), GATE_BIAS_INIT),
    )


def _softplus(u):
    return np.logaddexp(0.0, u)


def _sigmoid(u):
    # evaluate on the side that keeps exp() bounded
    out = np.empty_like(u)
    pos = u >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-u[pos]))
    eu = np.exp(u[~pos])
    out[~pos] = eu / (1.0 + eu)
    return out


def _bn_forward(a, state: BatchNormState, mode: str, update_running: bool):
    if mode == MODE_TRAIN:
        mu = a.mean(axis=0)
        var = a.var(axis=0)  # population variance
        if update_running:
            m = state.momentum
            state.running_mean = m * state.running_mean + (1.0 - m) * mu
            state.running_var = m * state.running_var + (1.0 - m) * var
    elif mode == MODE_EVAL:
        mu = state.running_mean
        var = state.running_var
    else:
        raise ValueError(f"unknown mode {mode!r}")
    inv_std = 1.0 / np.sqrt(var + state.eps)
    xhat = (a - mu) * inv_std
    return state.gamma * xhat + state.beta_shift, xhat, inv_std


def batchnorm_forward(a, state: BatchNormState, mode: str,
                      update_running: bool = True) -> np.ndarray:
    a = tensor.as_matrix(a)
    if a.shape[1] != state.gamma.shape[0]:
        raise DimMismatchError(f"batchnorm input {a.shape} vs width {state.gamma.shape[0]}")
    if mode == MODE_TRAIN and a.shape[0] < 2:
        raise BatchTooSmallError("train-mode batch norm needs batch >= 2")
    out, _, _ = _bn_forward(a, state, mode, update_running)
    return out


def rbm_forward(x, params: RbmParams, mode: str, fixed_gate: float | None = None,
                update_running: bool = True):
    """Returns (x_re, gate, cache). fixed_gate pins f(x) to a constant."""
    x = tensor.as_matrix(x)
    if x.shape[1] != params.feature_dim:
        raise DimMismatchError(f"input {x.shape} vs feature_dim {params.feature_dim}")
    if mode == MODE_TRAIN and x.shape[0] < 2:
        raise BatchTooSmallError("train-mode residual block needs batch >= 2")
    if mode not in (MODE_TRAIN, MODE_EVAL):
        raise ValueError(f"unknown mode {mode!r}")

    a1 = x @ params.w1 + params.b1
    bn_out, xhat, inv_std = _bn_forward(a1, params.bn, mode, update_running)
    relu_mask = bn_out > 0.0
    r = bn_out * relu_mask
    residual = r @ params.w2 + params.b2

    if fixed_gate is None:
        u = x @ params.gate_w + params.gate_b
        gate = _softplus(u)
        gate_sigmoid = _sigmoid(u)
    else:
        gate = np.full(x.shape[0], float(fixed_gate))
        gate_sigmoid = None

    x_re = x + gate[:, None] * residual
    cache = RbmCache(mode=mode, x=x, xhat=xhat, inv_std=inv_std,
                     relu_mask=relu_mask, r=r, residual=residual,
                     gate=gate, gate_sigmoid=gate_sigmoid, params=params)
    return x_re, gate, cache


def rbm_backward(grad_x_re, grad_gate, cache: RbmCache):
    """Exact gradients for one forward pass.

    grad_x_re: (B, d) upstream gradient at the block output.
    grad_gate: (B,) extra gradient arriving directly at the gate (the weighted
        gate-regression term), or None.
    Returns (grad_x, RbmGrads). A cache can back a single backward call.
    """
    if cache.consumed:
        raise StaleCacheError("cache already consumed by a previous backward")
    cache.consumed = True

    p = cache.params
    grad_x_re = tensor.as_matrix(grad_x_re)
    if grad_x_re.shape != cache.x.shape:
        raise DimMismatchError(f"grad {grad_x_re.shape} vs input {cache.x.shape}")
    b = grad_x_re.shape[0]

    df = np.sum(grad_x_re * cache.residual, axis=1)
    if grad_gate is not None:
        df = df + np.asarray(grad_gate, dtype=np.float64).ravel()

    d_residual = cache.gate[:, None] * grad_x_re
    grad_w2 = cache.r.T @ d_residual
    grad_b2 = d_residual.sum(axis=0)
    dr = d_residual @ p.w2.T

    d_bn_out = dr * cache.relu_mask
    grad_gamma = np.sum(d_bn_out * cache.xhat, axis=0)
    grad_shift = d_bn_out.sum(axis=0)
    dxhat = d_bn_out * p.bn.gamma
    if cache.mode == MODE_TRAIN:
        da1 = cache.inv_std * (
            dxhat
            - dxhat.mean(axis=0)
            - cache.xhat * np.mean(dxhat * cache.xhat, axis=0)
        )
    else:
        da1 = dxhat * cache.inv_std

    grad_w1 = cache.x.T @ da1
    grad_b1 = da1.sum(axis=0)
    grad_x = grad_x_re + da1 @ p.w1.T

    if cache.gate_sigmoid is not None:
        du = df * cache.gate_sigmoid
        grad_gate_w = cache.x.T @ du
        grad_gate_b = np.asarray(du.sum())
        grad_x = grad_x + du[:, None] * p.gate_w[None, :]
    else:
        grad_gate_w = np.zeros_like(p.gate_w)
        grad_gate_b = np.zeros(())

    grads = RbmGrads(w1=grad_w1, b1=grad_b1, gamma=grad_gamma, beta_shift=grad_shift,
                     w2=grad_w2, b2=grad_b2, gate_w=grad_gate_w, gate_b=grad_gate_b)
    return grad_x, grads
