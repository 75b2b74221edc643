"""Train all six arms on one dataset and print the comparison table.

Arms: softmax, cosface, dbm (margin only), rbm_only (residual block with its
gate regression but plain margins), rbm_no_gate (residual block with the gate
pinned to 1), full (margin + gated residual). Defaults here are reduced for
speed; pass --full-scale to run the package defaults (about a minute).
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from domainbalance import cli, losses, metrics, model, synth


def arm_config(arm, ds, k_neighbors):
    kind, use_rbm, gate_fixed, use_gate_loss = cli.ARMS[arm]
    from domainbalance import dfi
    return model.ModelConfig(
        input_dim=ds.inputs.shape[1], num_classes=ds.num_classes,
        hidden_dims=(64, 64), feature_dim=ds.inputs.shape[1],
        use_rbm=use_rbm, gate_fixed=gate_fixed, use_gate_loss=use_gate_loss,
        loss=losses.LossConfig(kind=kind),
        dfi=dfi.DfiConfig(k_neighbors=k_neighbors)).validated()


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--full-scale", action="store_true",
                    help="package defaults instead of the reduced config")
    args = ap.parse_args()

    if args.full_scale:
        ds = synth.generate(synth.SynthConfig(seed=args.seed))
        optim = model.OptimConfig()
        k = 100
    else:
        ds = synth.generate(synth.SynthConfig(
            head_classes=24, input_dim=32, samples_per_class=24, seed=args.seed))
        optim = model.OptimConfig(epochs=8, lr_steps=(4, 6))
        k = 10
    pairs = synth.make_verification_pairs(ds, 60, 60, seed=args.seed)
    inputs, labels = ds.train_view()
    domains = list(range(ds.num_domains))

    print(f"{ds.num_classes} classes {ds.domain_class_counts}, "
          f"{inputs.shape[0]} training samples, {optim.epochs} epochs\n")
    print(f"{'arm':<12} {'overall':>8} "
          + " ".join(f"{'dom' + str(d):>8}" for d in domains)
          + f" {'mean':>8} {'seconds':>8}")

    mean_by_arm = {}
    for arm in cli.ABLATION_ORDER:
        if args.full_scale and arm == "full" and ds.num_classes <= k:
            raise SystemExit("neighbor count exceeds class count")
        mcfg = arm_config(arm, ds, k)
        state = model.init_state(mcfg, args.seed)
        t0 = time.perf_counter()
        model.fit(state, inputs, labels, optim)
        dt = time.perf_counter() - t0
        rep = metrics.per_domain_report(state, ds, pairs)
        mean_acc = float(np.mean([rep.per_domain_accuracy[d] for d in domains]))
        mean_by_arm[arm] = mean_acc
        cells = " ".join(f"{rep.per_domain_accuracy[d]:>8.4f}" for d in domains)
        print(f"{arm:<12} {rep.overall_accuracy:>8.4f} {cells} "
              f"{mean_acc:>8.4f} {dt:>8.1f}")

    base = mean_by_arm["cosface"]
    print("\nmean-accuracy delta vs cosface:")
    for arm in cli.ABLATION_ORDER:
        print(f"  {arm:<12} {mean_by_arm[arm] - base:+.4f}")


if __name__ == "__main__":
    main()
