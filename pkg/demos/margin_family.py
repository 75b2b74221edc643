"""The three classification losses and how they relate.

softmax, cosface and dbm share one forward shape: scale the cosine logits by
s, subtract a margin from the true-class logit, cross-entropy. They differ
only in the margin: 0, m, or beta_y * m. So cosface is dbm with all-ones
beta, and softmax is dbm with m = 0; both identities hold to the last bit.
"""
from __future__ import annotations

import numpy as np

from domainbalance import losses, tensor
from domainbalance.rng import Rng


def main():
    rng = Rng(7)
    b, c, d = 4, 6, 16
    x = rng.gaussian_matrix(b, d)
    w = rng.gaussian_matrix(c, d)
    labels = np.array([0, 2, 2, 5], dtype=np.int64)

    # a spread of per-class margin multipliers, like a trained table would give
    beta = np.array([0.3, 0.6, 1.0, 1.4, 1.8, 2.2])

    for kind in ("softmax", "cosface", "dbm"):
        cfg = losses.LossConfig(kind=kind, scale_s=30.0, margin_m=0.35)
        out = losses.loss_forward(x, labels, w, beta, cfg)
        per = " ".join(f"{v:.3f}" for v in out.per_sample)
        print(f"{kind:>8}: loss={out.value:.6f}  per-sample [{per}]")

    print("\nthe dbm margin seen by each sample is beta[label] * m:")
    for i, y in enumerate(labels):
        print(f"  sample {i}: label {y}, margin {beta[y] * 0.35:.4f}")

    # identity 1: unit beta turns dbm into cosface
    cfg_dbm = losses.LossConfig(kind="dbm", scale_s=30.0, margin_m=0.35)
    cfg_cos = losses.LossConfig(kind="cosface", scale_s=30.0, margin_m=0.35)
    a = losses.loss_forward(x, labels, w, np.ones(c), cfg_dbm)
    bb = losses.loss_forward(x, labels, w, beta, cfg_cos)
    print(f"\n|dbm(beta=1) - cosface| = {abs(a.value - bb.value):.2e}")

    # identity 2: zero margin turns dbm into the normalized softmax
    cfg_m0 = losses.LossConfig(kind="dbm", scale_s=30.0, margin_m=0.0)
    cfg_sm = losses.LossConfig(kind="softmax", scale_s=30.0, margin_m=0.35)
    a0 = losses.loss_forward(x, labels, w, beta, cfg_m0)
    s0 = losses.loss_forward(x, labels, w, beta, cfg_sm)
    print(f"|dbm(m=0) - softmax|    = {abs(a0.value - s0.value):.2e}")

    # gradients flow to raw (unnormalized) features and prototypes; the
    # normalization chain rule is part of the loss
    g = a.grad_features
    print(f"\ngrad_features shape {g.shape}, "
          f"mean |g| {np.mean(np.abs(g)):.4f}")

    # larger beta -> larger margin -> larger loss for that sample, all else
    # equal. show it by sweeping one class's beta.
    print("\nloss of sample 0 as beta[0] sweeps:")
    for bv in (0.25, 0.5, 1.0, 2.0):
        beta_v = beta.copy()
        beta_v[0] = bv
        out = losses.loss_forward(x, labels, w, beta_v, cfg_dbm)
        print(f"  beta[0]={bv:>4}: per-sample[0] = {out.per_sample[0]:.4f}")


if __name__ == "__main__":
    main()
