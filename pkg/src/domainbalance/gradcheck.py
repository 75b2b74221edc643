"""Central-difference verification of every analytic gradient.

Each component builds a small random instance, evaluates the hand-derived
gradients once, and compares them against (f(x+h) - f(x-h)) / 2h taken
coordinate by coordinate at h = 1e-6. The error metric is

    max|analytic - numeric| / max(max|analytic|, max|numeric|, 1e-8)

reported per component; everything below 1e-5 passes. `perturb` deliberately
corrupts one analytic gradient so the harness can prove it would catch a wrong
derivative.
"""

from __future__ import annotations

import numpy as np

from . import losses as losses_mod
from . import rbm as rbm_mod
from .losses import LossConfig
from .rng import Rng

TOLERANCE = 1e-5
_H = 1e-6

COMPONENTS = ("softmax", "cosface", "dbm", "rrm", "rbm")


def central_diff(f, x, h=_H):
    """Numeric gradient of scalar f at array x (any shape, including 0-d)."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat_g = grad.reshape(-1)
    for i in range(x.size):
        xp = x.copy().reshape(-1)
        xm = x.copy().reshape(-1)
        xp[i] += h
        xm[i] -= h
        fp = f(xp.reshape(x.shape))
        fm = f(xm.reshape(x.shape))
        flat_g[i] = (fp - fm) / (2.0 * h)
    return grad


def rel_error(analytic, numeric) -> float:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = max(float(np.max(np.abs(a))), float(np.max(np.abs(n))), 1e-8)
    return float(np.max(np.abs(a - n))) / scale


def rel_error_joint(pairs) -> float:
    """rel_error over all of a component's tensors as one flat gradient.

    Keeps structurally-zero tensors (e.g. a bias whose shift is absorbed by
    batch-norm centering) measured against the component's gradient scale
    instead of against finite-difference noise.
    """
    a = np.concatenate([np.asarray(p[0], dtype=np.float64).ravel() for p in pairs])
    n = np.concatenate([np.asarray(p[1], dtype=np.float64).ravel() for p in pairs])
    return rel_error(a, n)


def _loss_instance(rng: Rng, kind: str):
    b, c, d = 5, 8, 12
    x = rng.gaussian_matrix(b, d)
    w = rng.gaussian_matrix(c, d)
    labels = np.array([rng.randint_below(c) for _ in range(b)], dtype=np.int64)
    beta = 0.05 + rng.uniform_block(c) * 1.5
    cfg = LossConfig(kind=kind, scale_s=7.0, margin_m=0.3, lambda_=0.01)
    return x, w, labels, beta, cfg


def check_loss(kind: str, seed: int, perturb: bool = False) -> float:
    rng = Rng(seed)
    x, w, labels, beta, cfg = _loss_instance(rng, kind)
    out = losses_mod.loss_forward(x, labels, w, beta, cfg)
    grad_x = out.grad_features.copy()
    grad_w = out.grad_prototypes.copy()
    if perturb:
        grad_x[0, 0] += 1e-3

    num_x = central_diff(
        lambda xv: losses_mod.loss_forward(xv, labels, w, beta, cfg).value, x)
    num_w = central_diff(
        lambda wv: losses_mod.loss_forward(x, labels, wv, beta, cfg).value, w)
    return rel_error_joint([(grad_x, num_x), (grad_w, num_w)])


def check_rrm(seed: int, perturb: bool = False) -> float:
    rng = Rng(seed)
    f = rng.gaussian_block(7) * 0.5 + 0.8
    t = 0.05 + rng.uniform_block(7)
    _, grad = losses_mod.rrm_loss(f, t)
    grad = grad.copy()
    if perturb:
        grad[0] += 1e-3
    num = central_diff(lambda fv: losses_mod.rrm_loss(fv, t)[0], f)
    return rel_error(grad, num)


def _rbm_instance(rng: Rng):
    b, d, h = 6, 10, 3
    x = rng.gaussian_matrix(b, d)
    params = rbm_mod.init_rbm_params(rng, d, h)
    # random weights everywhere so every path carries signal
    params.w1 = rng.gaussian_matrix(d, h) * 0.7
    params.b1 = rng.gaussian_block(h) * 0.1
    params.bn.gamma = 1.0 + 0.2 * rng.gaussian_block(h)
    params.bn.beta_shift = 0.1 * rng.gaussian_block(h)
    params.w2 = rng.gaussian_matrix(h, d) * 0.7
    params.b2 = rng.gaussian_block(d) * 0.1
    params.gate_w = rng.gaussian_block(d) * 0.5
    params.gate_b = np.asarray(rng.uniform() - 0.5)
    u = rng.gaussian_matrix(b, d)  # fixed linear functional on the output
    t = 0.05 + rng.uniform_block(b)  # gate-regression targets
    lam = 0.7
    return x, params, u, t, lam


_RBM_FIELDS = ("w1", "b1", "gamma", "beta_shift", "w2", "b2", "gate_w", "gate_b")


def _rbm_get(params, name):
    if name in ("gamma", "beta_shift"):
        return getattr(params.bn, name)
    return getattr(params, name)


def _rbm_set(params, name, value):
    if name in ("gamma", "beta_shift"):
        setattr(params.bn, name, value)
    else:
        setattr(params, name, value)


def check_rbm(seed: int, perturb: bool = False) -> float:
    """Train-mode block through a fixed functional: sum(U * x_re) + lam * mse(f, t)."""
    rng = Rng(seed)
    x, params, u, t, lam = _rbm_instance(rng)
    b = x.shape[0]

    def value(xv, pv):
        x_re, gate, _ = rbm_mod.rbm_forward(xv, pv, rbm_mod.MODE_TRAIN,
                                            update_running=False)
        mse, _ = losses_mod.rrm_loss(gate, t)
        return float(np.sum(u * x_re)) + lam * mse

    x_re, gate, cache = rbm_mod.rbm_forward(x, params, rbm_mod.MODE_TRAIN,
                                            update_running=False)
    _, rrm_grad = losses_mod.rrm_loss(gate, t)
    grad_x, grads = rbm_mod.rbm_backward(u, lam * rrm_grad, cache)
    grad_x = grad_x.copy()
    if perturb:
        grad_x[0, 0] += 1e-3

    pairs = [(grad_x, central_diff(lambda xv: value(xv, params), x))]
    for name in _RBM_FIELDS:
        base = _rbm_get(params, name)

        def value_at(pval, _name=name):
            pc = params.copy()
            _rbm_set(pc, _name, np.asarray(pval))
            return value(x, pc)

        pairs.append((getattr(grads, name), central_diff(value_at, np.asarray(base))))
    return rel_error_joint(pairs)


def run_component(name: str, seed: int, perturb: bool = False) -> float:
    if name in ("softmax", "cosface", "dbm"):
        return check_loss(name, seed, perturb)
    if name == "rrm":
        return check_rrm(seed, perturb)
    if name == "rbm":
        return check_rbm(seed, perturb)
    raise ValueError(f"unknown component {name!r}")


def run_all(num_seeds: int = 20, base_seed: int = 0, perturb: str | None = None):
    """[(component, max rel err over seeds, passed)], overall pass flag."""
    rows = []
    all_ok = True
    for name in COMPONENTS:
        worst = 0.0
        for s in range(num_seeds):
            err = run_component(name, base_seed + s, perturb == name)
            worst = max(worst, err)
        ok = worst < TOLERANCE
        all_ok = all_ok and ok
        rows.append((name, worst, ok))
    return rows, all_ok
