"""Command line front end.

Subcommands: generate, train, eval, dfi-report, gradcheck, ablation. Every
command takes a JSON experiment config (--config; omitted fields fall back to
defaults), an optional --seed override, and an --out directory. Artifacts are
deterministic: two runs with the same config and seed are byte-identical, and
no artifact embeds a path or timestamp.

Exit codes: 0 success, 1 usage or config error, 2 I/O or file-format error,
3 numerical failure (a gradient check above tolerance).
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys

import numpy as np

from . import dfi as dfi_mod
from . import gradcheck as gradcheck_mod
from . import metrics as metrics_mod
from . import model as model_mod
from . import synth as synth_mod
from . import tensor
from .errors import (
    ConfigError,
    DomainBalanceError,
    FormatError,
    VersionMismatchError,
)
from .losses import LossConfig

DEFAULT_CONFIG = {
    "seed": 0,
    "arm": "full",
    "force_unit_beta": False,
    "synth": {
        "num_domains": 3,
        "head_classes": 60,
        "zipf_exponent": 1.0,
        "input_dim": 64,
        "samples_per_class": 48,
        "domain_spread": 0.3,
        "class_spread": 0.2,
        "max_domain_cosine": 0.5,
    },
    "model": {
        "hidden_dims": [128, 128],
        "feature_dim": 64,
        "rbm_hidden": None,
    },
    "optim": {
        "lr": 0.1,
        "momentum": 0.9,
        "weight_decay": 0.0005,
        "lr_steps": [5, 8, 11],
        "lr_gamma": 0.1,
        "epochs": 15,
        "batch_size": 32,
    },
    "loss": {
        "scale_s": 30.0,
        "margin_m": 0.35,
        "lambda": 0.01,
    },
    "dfi": {
        "k_neighbors": 100,
        "epsilon": 5.5,
        "scale_s": 30.0,
        "refresh_period": None,
    },
    "eval": {
        "per_domain_pos": 200,
        "per_domain_neg": 200,
        "far_levels": [0.01, 0.001],
    },
}

# arm -> (loss kind, residual block, pinned gate value, gate regression)
ARMS = {
    "softmax": ("softmax", False, None, False),
    "cosface": ("cosface", False, None, False),
    "dbm": ("dbm", False, None, False),
    "rbm_only": ("cosface", True, None, True),
    "rbm_no_gate": ("cosface", True, 1.0, False),
    "full": ("dbm", True, None, True),
}

ABLATION_ORDER = ("softmax", "cosface", "dbm", "rbm_only", "rbm_no_gate", "full")
ABLATION_BASELINE = "cosface"

SEP = "=" * 70


def _merge_checked(defaults, override, path=""):
    if not isinstance(override, dict):
        raise ConfigError(f"config section {path or '<root>'} must be an object")
    out = copy.deepcopy(defaults)
    for key, value in override.items():
        if key not in defaults:
            raise ConfigError(f"unknown config key {path + key!r}")
        if isinstance(defaults[key], dict):
            out[key] = _merge_checked(defaults[key], value, path + key + ".")
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path=None, seed=None, arm=None) -> dict:
    user = {}
    if path is not None:
        with open(path) as fh:
            try:
                user = json.load(fh)
            except ValueError as e:
                raise ConfigError(f"config is not valid JSON: {e}") from e
    cfg = _merge_checked(DEFAULT_CONFIG, user)
    if seed is not None:
        cfg["seed"] = int(seed)
    if arm is not None:
        cfg["arm"] = arm
    if cfg["arm"] not in ARMS:
        raise ConfigError(f"unknown arm {cfg['arm']!r} (choose from {sorted(ARMS)})")
    return cfg


def synth_config(cfg: dict) -> synth_mod.SynthConfig:
    return synth_mod.SynthConfig(seed=cfg["seed"], **cfg["synth"]).validated()


def model_config(cfg: dict, dataset: synth_mod.SyntheticDataset,
                 arm: str | None = None) -> model_mod.ModelConfig:
    arm = arm or cfg["arm"]
    kind, use_rbm, gate_fixed, use_gate_loss = ARMS[arm]
    loss = LossConfig(kind=kind, scale_s=cfg["loss"]["scale_s"],
                      margin_m=cfg["loss"]["margin_m"],
                      lambda_=cfg["loss"]["lambda"])
    dfi_cfg = dfi_mod.DfiConfig(**cfg["dfi"])
    return model_mod.ModelConfig(
        input_dim=dataset.inputs.shape[1],
        num_classes=dataset.num_classes,
        hidden_dims=tuple(cfg["model"]["hidden_dims"]),
        feature_dim=cfg["model"]["feature_dim"],
        use_rbm=use_rbm,
        rbm_hidden=cfg["model"]["rbm_hidden"],
        gate_fixed=gate_fixed,
        use_gate_loss=use_gate_loss,
        force_unit_beta=bool(cfg["force_unit_beta"]),
        loss=loss,
        dfi=dfi_cfg,
    ).validated()


def optim_config(cfg: dict) -> model_mod.OptimConfig:
    o = cfg["optim"]
    return model_mod.OptimConfig(
        lr=o["lr"], momentum=o["momentum"], weight_decay=o["weight_decay"],
        lr_steps=tuple(o["lr_steps"]), lr_gamma=o["lr_gamma"],
        epochs=o["epochs"], batch_size=o["batch_size"]).validated()


def write_resolved_config(cfg: dict, out_dir) -> None:
    path = os.path.join(out_dir, "resolved_config.json")
    with open(path, "w") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# subcommands

def cmd_generate(cfg: dict, out_dir: str) -> int:
    os.makedirs(out_dir, exist_ok=True)
    ds = synth_mod.generate(synth_config(cfg))
    data_path = os.path.join(out_dir, "dataset.dbds")
    synth_mod.write_dataset(ds, data_path)
    pairs = synth_mod.make_verification_pairs(
        ds, cfg["eval"]["per_domain_pos"], cfg["eval"]["per_domain_neg"], cfg["seed"])
    pairs_path = os.path.join(out_dir, "pairs.csv")
    synth_mod.write_pairs(pairs, pairs_path)
    write_resolved_config(cfg, out_dir)

    print(SEP)
    print(f"dataset: {ds.num_samples} samples, {ds.num_classes} classes, "
          f"{ds.num_domains} domains (seed {cfg['seed']})")
    print(f"classes per domain: {ds.domain_class_counts}")
    n_eval = int(np.sum(ds.split == 1))
    print(f"split: {ds.num_samples - n_eval} train / {n_eval} eval samples")
    print(f"pairs: {len(pairs)} total "
          f"({cfg['eval']['per_domain_pos']} pos + {cfg['eval']['per_domain_neg']} neg "
          f"per domain)")
    print(f"wrote {data_path}")
    print(f"wrote {pairs_path}")
    return 0


def _train_one(cfg: dict, dataset, arm: str, run_dir: str):
    os.makedirs(run_dir, exist_ok=True)
    mcfg = model_config(cfg, dataset, arm)
    ocfg = optim_config(cfg)
    state = model_mod.init_state(mcfg, cfg["seed"])
    inputs, labels = dataset.train_view()
    history = model_mod.fit(state, inputs, labels, ocfg)
    ckpt_path = os.path.join(run_dir, "checkpoint.dbck")
    model_mod.save_checkpoint(state, ckpt_path)
    model_mod.write_history(history, os.path.join(run_dir, "history.csv"))
    resolved = copy.deepcopy(cfg)
    resolved["arm"] = arm
    write_resolved_config(resolved, run_dir)
    return state, history, ckpt_path


def cmd_train(cfg: dict, out_dir: str, data_path: str | None) -> int:
    data_path = data_path or os.path.join(out_dir, "dataset.dbds")
    ds = synth_mod.read_dataset(data_path)
    arm = cfg["arm"]
    run_dir = os.path.join(out_dir, arm)
    _, history, ckpt_path = _train_one(cfg, ds, arm, run_dir)

    print(SEP)
    print(f"arm {arm}: trained {len(history)} epochs on {data_path}")
    print(f"{'epoch':>5} {'lr':>10} {'loss_dbm':>12} {'loss_rrm':>12} {'loss_total':>12}")
    for row in history:
        rrm = "-" if row["loss_rrm"] is None else f"{row['loss_rrm']:.6f}"
        print(f"{row['epoch']:>5} {row['lr']:>10.5f} {row['loss_dbm']:>12.6f} "
              f"{rrm:>12} {row['loss_total']:>12.6f}")
    print(f"wrote {ckpt_path}")
    return 0


def _echo_config(cfg: dict, arm: str) -> dict:
    echo = copy.deepcopy(cfg)
    echo["arm"] = arm
    return echo


def cmd_eval(cfg: dict, out_dir: str, checkpoint: str, data_path: str | None,
             pairs_path: str | None) -> int:
    data_path = data_path or os.path.join(out_dir, "dataset.dbds")
    pairs_path = pairs_path or os.path.join(out_dir, "pairs.csv")
    ds = synth_mod.read_dataset(data_path)
    pairs = synth_mod.read_pairs(pairs_path)
    state = model_mod.load_checkpoint(checkpoint)
    report = metrics_mod.per_domain_report(
        state, ds, pairs, tuple(cfg["eval"]["far_levels"]),
        config_echo=_echo_config(cfg, state.config.loss.kind))

    os.makedirs(out_dir, exist_ok=True)
    json_path = os.path.join(out_dir, "report.json")
    csv_path = os.path.join(out_dir, "per_domain.csv")
    metrics_mod.write_report(report, json_path, csv_path)

    print(SEP)
    print(f"verification accuracy (overall): {report.overall_accuracy:.4f} "
          f"at threshold {report.overall_threshold:.4f}")
    print(f"{'domain':>6} {'n_pos':>6} {'n_neg':>6} {'accuracy':>9} {'threshold':>10}")
    for d in sorted(report.per_domain_accuracy):
        pc = report.pair_counts[d]
        print(f"{d:>6} {pc['n_pos']:>6} {pc['n_neg']:>6} "
              f"{report.per_domain_accuracy[d]:>9.4f} "
              f"{report.per_domain_threshold[d]:>10.4f}")
    for level in sorted(report.tar_at_far, reverse=True):
        tar = report.tar_at_far[level]
        shown = "undefined (too few negatives)" if tar is None else f"{tar:.4f}"
        print(f"TAR @ FAR {level:g}: {shown}")
    print(f"rank-1 identification: {report.rank1:.4f}")
    print(f"wrote {json_path}")
    print(f"wrote {csv_path}")
    return 0


def cmd_dfi_report(cfg: dict, out_dir: str, checkpoint: str,
                   data_path: str | None, k_override: int | None) -> int:
    state = model_mod.load_checkpoint(checkpoint)
    dcfg = dfi_mod.DfiConfig(**cfg["dfi"])
    if k_override is not None:
        dcfg = dfi_mod.DfiConfig(k_neighbors=k_override, epsilon=dcfg.epsilon,
                                 scale_s=dcfg.scale_s,
                                 refresh_period=dcfg.refresh_period)
    prototypes = tensor.l2_normalize_rows(state.prototypes)
    table = dfi_mod.build_table(prototypes, dcfg, state.iteration)

    class_to_domain = None
    if data_path is not None:
        class_to_domain = synth_mod.read_dataset(data_path).evaluation_domain_table()

    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "dfi.csv")
    json_path = os.path.join(out_dir, "dfi_summary.json")
    summary = dfi_mod.write_report(table, csv_path, json_path, class_to_domain)

    print(SEP)
    print(f"frequency indicator over {summary['num_classes']} classes "
          f"(K={dcfg.k_neighbors}, s={dcfg.scale_s:g}, eps={dcfg.epsilon:g})")
    print(f"beta: min {summary['min']:.6f}  mean {summary['mean']:.6f}  "
          f"max {summary['max']:.6f}")
    if class_to_domain is not None:
        print(f"mean beta head domain {summary['head_domain']}: "
              f"{summary['mean_beta_head']:.6f}")
        print(f"mean beta tail domain {summary['tail_domain']}: "
              f"{summary['mean_beta_tail']:.6f}")
    print(f"wrote {csv_path}")
    print(f"wrote {json_path}")
    return 0


def cmd_gradcheck(num_seeds: int, base_seed: int, perturb: str | None) -> int:
    rows, all_ok = gradcheck_mod.run_all(num_seeds, base_seed, perturb)
    print(SEP)
    print(f"gradient checks: {num_seeds} seeds per component, "
          f"tolerance {gradcheck_mod.TOLERANCE:g}")
    for name, worst, ok in rows:
        print(f"{name:>8}: max rel err {worst:.3e}  {'PASS' if ok else 'FAIL'}")
    print(f"overall: {'PASS' if all_ok else 'FAIL'}")
    return 0 if all_ok else 3


def cmd_ablation(cfg: dict, out_dir: str) -> int:
    os.makedirs(out_dir, exist_ok=True)
    ds = synth_mod.generate(synth_config(cfg))
    data_path = os.path.join(out_dir, "dataset.dbds")
    synth_mod.write_dataset(ds, data_path)
    pairs = synth_mod.make_verification_pairs(
        ds, cfg["eval"]["per_domain_pos"], cfg["eval"]["per_domain_neg"], cfg["seed"])
    synth_mod.write_pairs(pairs, os.path.join(out_dir, "pairs.csv"))
    write_resolved_config(cfg, out_dir)

    domains = list(range(ds.num_domains))
    results = {}
    for arm in ABLATION_ORDER:
        run_dir = os.path.join(out_dir, arm)
        try:
            state, _, _ = _train_one(cfg, ds, arm, run_dir)
            report = metrics_mod.per_domain_report(
                state, ds, pairs, tuple(cfg["eval"]["far_levels"]),
                config_echo=_echo_config(cfg, arm))
            metrics_mod.write_report(report,
                                     os.path.join(run_dir, "report.json"),
                                     os.path.join(run_dir, "per_domain.csv"))
            results[arm] = report
        except DomainBalanceError as e:
            print(f"arm {arm} failed: {e}", file=sys.stderr)
            results[arm] = None

    def mean_domain_acc(report):
        return float(np.mean([report.per_domain_accuracy[d] for d in domains]))

    base = results.get(ABLATION_BASELINE)
    table_path = os.path.join(out_dir, "ablation.csv")
    with open(table_path, "w", newline="") as fh:
        cols = ["arm", "overall_accuracy"]
        cols += [f"domain_{d}_accuracy" for d in domains]
        cols += ["mean_domain_accuracy", "delta_vs_" + ABLATION_BASELINE]
        fh.write(",".join(cols) + "\n")
        for arm in ABLATION_ORDER:
            rep = results[arm]
            if rep is None:
                fh.write(",".join([arm] + ["FAILED"] * (len(cols) - 1)) + "\n")
                continue
            row = [arm, repr(rep.overall_accuracy)]
            row += [repr(rep.per_domain_accuracy[d]) for d in domains]
            row.append(repr(mean_domain_acc(rep)))
            if base is not None:
                row.append(repr(mean_domain_acc(rep) - mean_domain_acc(base)))
            else:
                row.append("")
            fh.write(",".join(row) + "\n")

    print(SEP)
    header = f"{'arm':<12} {'overall':>8} " + " ".join(f"{'dom' + str(d):>8}" for d in domains)
    print(header + f" {'mean':>8} {'delta':>8}")
    for arm in ABLATION_ORDER:
        rep = results[arm]
        if rep is None:
            print(f"{arm:<12} {'FAILED':>8}")
            continue
        cells = " ".join(f"{rep.per_domain_accuracy[d]:>8.4f}" for d in domains)
        delta = mean_domain_acc(rep) - mean_domain_acc(base) if base else float("nan")
        print(f"{arm:<12} {rep.overall_accuracy:>8.4f} {cells} "
              f"{mean_domain_acc(rep):>8.4f} {delta:>+8.4f}")
    print(f"wrote {table_path}")
    if any(r is None for r in results.values()):
        return 0 if any(r is not None for r in results.values()) else 1
    return 0


def run_k_sweep(cfg: dict, out_dir: str, k_values=None):
    """Train the full arm at several neighbor counts on one shared dataset.

    Returns [{k, ic, beta, accuracy}], with ic/beta taken from a fresh table
    over the trained prototypes at that k. Writes ksweep.csv.
    """
    os.makedirs(out_dir, exist_ok=True)
    ds = synth_mod.generate(synth_config(cfg))
    pairs = synth_mod.make_verification_pairs(
        ds, cfg["eval"]["per_domain_pos"], cfg["eval"]["per_domain_neg"], cfg["seed"])
    if k_values is None:
        k_values = [10, 100, ds.num_classes - 1]

    rows = []
    for k in k_values:
        run_cfg = copy.deepcopy(cfg)
        run_cfg["dfi"]["k_neighbors"] = int(k)
        run_dir = os.path.join(out_dir, f"k_{k}")
        state, _, _ = _train_one(run_cfg, ds, run_cfg["arm"], run_dir)
        table = dfi_mod.build_table(tensor.l2_normalize_rows(state.prototypes),
                                    dfi_mod.DfiConfig(**run_cfg["dfi"]),
                                    state.iteration)
        report = metrics_mod.per_domain_report(
            state, ds, pairs, tuple(cfg["eval"]["far_levels"]),
            config_echo=_echo_config(run_cfg, run_cfg["arm"]))
        rows.append({"k": int(k), "ic": np.asarray(table.ic),
                     "beta": np.asarray(table.beta),
                     "accuracy": report.overall_accuracy})

    table_path = os.path.join(out_dir, "ksweep.csv")
    with open(table_path, "w", newline="") as fh:
        fh.write("k,mean_ic,mean_beta,overall_accuracy\n")
        for row in rows:
            fh.write(f"{row['k']},{float(np.mean(row['ic']))!r},"
                     f"{float(np.mean(row['beta']))!r},{row['accuracy']!r}\n")

    print(SEP)
    print(f"{'K':>6} {'mean_ic':>12} {'mean_beta':>12} {'accuracy':>10}")
    for row in rows:
        print(f"{row['k']:>6} {float(np.mean(row['ic'])):>12.4f} "
              f"{float(np.mean(row['beta'])):>12.6f} {row['accuracy']:>10.4f}")
    print(f"wrote {table_path}")
    return rows


# ---------------------------------------------------------------------------
# argument parsing and dispatch

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="db",
        description="train and evaluate embeddings with long-tailed domain balancing")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="experiment config JSON")
        p.add_argument("--seed", type=int, default=None, help="seed override")
        p.add_argument("--out", default="runs", help="output directory")

    p = sub.add_parser("generate", help="synthesize a long-tailed dataset + pair list")
    common(p)

    p = sub.add_parser("train", help="train one arm on a generated dataset")
    common(p)
    p.add_argument("--data", default=None, help="dataset path (default <out>/dataset.dbds)")
    p.add_argument("--arm", default=None, choices=sorted(ARMS), help="arm override")

    p = sub.add_parser("eval", help="verification / identification report")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", default=None)
    p.add_argument("--pairs", default=None)

    p = sub.add_parser("dfi-report", help="per-class compactness and beta table")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", default=None, help="join against ground-truth domains")
    p.add_argument("--k", type=int, default=None, help="neighbor count override")

    p = sub.add_parser("gradcheck", help="verify analytic gradients against "
                                         "central differences")
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--perturb", default=None, choices=gradcheck_mod.COMPONENTS,
                   help="self-test hook: corrupt one analytic gradient")

    p = sub.add_parser("ablation", help="train and score all six arms")
    common(p)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "gradcheck":
            return cmd_gradcheck(args.seeds, args.seed, args.perturb)
        cfg = load_config(args.config, args.seed, getattr(args, "arm", None))
        if args.command == "generate":
            return cmd_generate(cfg, args.out)
        if args.command == "train":
            return cmd_train(cfg, args.out, args.data)
        if args.command == "eval":
            return cmd_eval(cfg, args.out, args.checkpoint, args.data, args.pairs)
        if args.command == "dfi-report":
            return cmd_dfi_report(cfg, args.out, args.checkpoint, args.data, args.k)
        if args.command == "ablation":
            return cmd_ablation(cfg, args.out)
        parser.error(f"unknown command {args.command!r}")
    except (FormatError, VersionMismatchError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (ConfigError, DomainBalanceError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
