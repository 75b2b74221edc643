"""Margin softmax family and the gate regression, with analytic gradients.

All three classification losses share one implementation and differ only in
the per-sample margin applied to the target logit:

    softmax   margin 0
    cosface   margin m
    balanced  margin beta[y] * m   (beta from the frequency-indicator table)

Per sample i with normalized feature x_i and normalized prototypes w_k:

    z_ik = s * cos(x_i, w_k),   z_iy -= s * margin_i
    loss_i = logsumexp(z_i) - z_iy

The batch value is the mean of per-sample losses. Inputs may arrive
unnormalized: both features and prototypes are L2-normalized in-graph and the
returned gradients are exact with respect to the raw inputs (the chain rule
through the normalization is applied here, so callers backpropagate the
returned arrays directly). beta is a constant: no gradient flows into the
table that produced it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor
from .errors import (
    DimMismatchError,
    EmptyInputError,
    LabelOutOfRangeError,
    LengthMismatchError,
    NegativeBetaError,
    ZeroRowError,
)

LOSS_KINDS = ("softmax", "cosface", "dbm")


@dataclass(frozen=True)
class LossConfig:
    kind: str = "dbm"
    scale_s: float = 30.0
    margin_m: float = 0.35
    lambda_: float = 0.01  # weight of the gate-regression term in the combined loss

    def validated(self) -> "LossConfig":
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.scale_s <= 0.0:
            raise ValueError(f"scale_s must be positive, got {self.scale_s}")
        if self.margin_m < 0.0:
            raise ValueError(f"margin_m must be >= 0, got {self.margin_m}")
        if self.lambda_ < 0.0:
            raise ValueError(f"lambda must be >= 0, got {self.lambda_}")
        return self


@dataclass(frozen=True)
class LossOutput:
    value: float
    per_sample: np.ndarray        # (B,)
    grad_features: np.ndarray     # (B, d), w.r.t. the raw (pre-normalization) features
    grad_prototypes: np.ndarray   # (C, d), w.r.t. the raw prototypes


@dataclass(frozen=True)
class CombinedLoss:
    value: float
    cls_value: float
    rrm_value: float
    grad_features: np.ndarray
    grad_prototypes: np.ndarray
    grad_gate: np.ndarray         # (B,), lambda-weighted gate-regression gradient


def _normalize_rows_with_norms(m: np.ndarray, what: str):
    norms = np.sqrt(np.sum(m * m, axis=1))
    if np.any(norms < 1e-300):
        raise ZeroRowError(f"{what} row {int(np.argmin(norms))} has zero norm")
    return m / norms[:, None], norms


def _chain_through_normalization(grad_n, normed, norms):
    # d/du of L(u/|u|): project out the radial component, then scale by 1/|u|
    radial = np.sum(grad_n * normed, axis=1, keepdims=True)
    return (grad_n - radial * normed) / norms[:, None]


def _margin_cross_entropy(features, labels, prototypes, margin_per_sample, scale_s):
    x = tensor.as_matrix(features)
    w = tensor.as_matrix(prototypes)
    if x.shape[0] == 0:
        raise EmptyInputError("empty feature batch")
    if x.shape[1] != w.shape[1]:
        raise DimMismatchError(f"features {x.shape} vs prototypes {w.shape}")
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if labels.shape[0] != x.shape[0]:
        raise LengthMismatchError(f"{labels.shape[0]} labels for {x.shape[0]} samples")
    b, c = x.shape[0], w.shape[0]
    if labels.min() < 0 or labels.max() >= c:
        raise LabelOutOfRangeError(f"labels outside [0, {c})")

    xn, xnorms = _normalize_rows_with_norms(x, "feature")
    wn, wnorms = _normalize_rows_with_norms(w, "prototype")
    cos = np.clip(xn @ wn.T, -1.0, 1.0)

    rows = np.arange(b)
    z = scale_s * cos
    z[rows, labels] -= scale_s * margin_per_sample

    zmax = z.max(axis=1, keepdims=True)
    lse = zmax + np.log(np.sum(np.exp(z - zmax), axis=1, keepdims=True))
    per_sample = lse.ravel() - z[rows, labels]
    value = float(np.mean(per_sample))

    p = np.exp(z - lse)
    g = p
    g[rows, labels] -= 1.0
    g *= scale_s / b  # d(mean loss)/d(cos)

    grad_xn = g @ wn
    grad_wn = g.T @ xn
    grad_x = _chain_through_normalization(grad_xn, xn, xnorms)
    grad_w = _chain_through_normalization(grad_wn, wn, wnorms)
    return LossOutput(value=value, per_sample=per_sample,
                      grad_features=grad_x, grad_prototypes=grad_w)


def dbm_forward(features, labels, prototypes, beta, cfg: LossConfig) -> LossOutput:
    """Margin scaled per class by beta (frequency indicator); beta is constant."""
    cfg = cfg.validated()
    w = tensor.as_matrix(prototypes)
    beta = np.asarray(beta, dtype=np.float64).ravel()
    if beta.shape[0] != w.shape[0]:
        raise LengthMismatchError(f"{beta.shape[0]} beta values for {w.shape[0]} classes")
    if np.any(beta < 0.0):
        raise NegativeBetaError(f"beta[{int(np.argmin(beta))}] < 0")
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if labels.size and (labels.min() < 0 or labels.max() >= w.shape[0]):
        raise LabelOutOfRangeError(f"labels outside [0, {w.shape[0]})")
    margin = beta[labels] * cfg.margin_m
    return _margin_cross_entropy(features, labels, w, margin, cfg.scale_s)


def cosface_forward(features, labels, prototypes, cfg: LossConfig) -> LossOutput:
    """Fixed additive cosine margin: exactly dbm_forward with beta identically 1."""
    w = tensor.as_matrix(prototypes)
    return dbm_forward(features, labels, w, np.ones(w.shape[0]), cfg)


def softmax_forward(features, labels, prototypes, cfg: LossConfig) -> LossOutput:
    """Normalized softmax: exactly dbm_forward with margin 0."""
    cfg = cfg.validated()
    w = tensor.as_matrix(prototypes)
    return dbm_forward(features, labels, w,
                       np.ones(w.shape[0]), LossConfig(kind="softmax",
                                                       scale_s=cfg.scale_s,
                                                       margin_m=0.0,
                                                       lambda_=cfg.lambda_))


def loss_forward(features, labels, prototypes, beta, cfg: LossConfig) -> LossOutput:
    cfg = cfg.validated()
    if cfg.kind == "softmax":
        return softmax_forward(features, labels, prototypes, cfg)
    if cfg.kind == "cosface":
        return cosface_forward(features, labels, prototypes, cfg)
    return dbm_forward(features, labels, prototypes, beta, cfg)


def rrm_loss(gate_out, beta_targets):
    """Mean squared error pulling the gate toward the frequency indicator.

    Returns (value, grad_gate) with grad_gate = 2 * (f - target) / B. Targets
    are constants (no gradient into the table).
    """
    f = np.asarray(gate_out, dtype=np.float64).ravel()
    t = np.asarray(beta_targets, dtype=np.float64).ravel()
    if f.size == 0:
        raise EmptyInputError("empty gate batch")
    if f.shape != t.shape:
        raise LengthMismatchError(f"gate {f.shape} vs targets {t.shape}")
    diff = f - t
    value = float(np.mean(diff * diff))
    grad = 2.0 * diff / f.size
    return value, grad


def combined_loss(cls_out: LossOutput, rrm_value: float, rrm_grad_gate,
                  lambda_: float) -> CombinedLoss:
    """Total objective: classification value plus lambda times gate regression."""
    rrm_grad_gate = np.asarray(rrm_grad_gate, dtype=np.float64).ravel()
    return CombinedLoss(
        value=cls_out.value + lambda_ * float(rrm_value),
        cls_value=cls_out.value,
        rrm_value=float(rrm_value),
        grad_features=cls_out.grad_features,
        grad_prototypes=cls_out.grad_prototypes,
        grad_gate=lambda_ * rrm_grad_gate,
    )
