"""Per-class compactness table and the inverse frequency weights built on it.

For every class prototype w_c the table stores its inter-class compactness

    IC(c) = log sum_{k in N_K(c)} exp(s * cos(w_k, w_c))

over the K nearest other prototypes (largest cosine, ties by ascending class
id), and the domain frequency indicator beta_c = epsilon / IC(c). Classes in
densely populated regions (head domains) have near neighbors, hence large IC
and small beta; classes in sparse regions (tail domains) get small IC and
large beta. beta feeds the margin loss and the gate regression targets as a
constant: nothing differentiates through this table. It is rebuilt from the
live prototypes every refresh_period training iterations and is read-only in
between.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from . import tensor
from .errors import KTooLargeError, NotNormalizedError

_UNIT_TOL = 1e-6


@dataclass(frozen=True)
class DfiConfig:
    k_neighbors: int = 100
    epsilon: float = 5.5
    scale_s: float = 30.0  # shares the loss scale by default; independent knob
    refresh_period: int | None = None  # None: the trainer substitutes one epoch

    def validated(self) -> "DfiConfig":
        if self.k_neighbors < 1:
            raise KTooLargeError(f"k_neighbors must be >= 1, got {self.k_neighbors}")
        if self.epsilon <= 0.0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.scale_s <= 0.0:
            raise ValueError(f"scale_s must be positive, got {self.scale_s}")
        if self.refresh_period is not None and self.refresh_period < 1:
            raise ValueError("refresh_period must be >= 1 when set")
        return self


@dataclass(frozen=True)
class DfiTable:
    ic: np.ndarray            # (C,) inter-class compactness
    beta: np.ndarray          # (C,) epsilon / ic
    neighbor_ids: np.ndarray  # (C, K) ids by descending cosine, ties ascending id
    built_at_iteration: int


def _require_unit_rows(prototypes: np.ndarray) -> None:
    norms = tensor.row_norms(prototypes)
    dev = np.abs(norms - 1.0)
    if np.any(dev > _UNIT_TOL):
        bad = int(np.argmax(dev))
        raise NotNormalizedError(f"prototype row {bad} has norm {norms[bad]!r}")


def nearest_neighbors(prototypes, class_id: int, k: int) -> np.ndarray:
    """Ids of the k classes whose prototypes have the largest cosine to class_id.

    The class itself is excluded. Exact ties are broken by ascending class id.
    """
    prototypes = tensor.as_matrix(prototypes)
    c = prototypes.shape[0]
    if not 0 <= class_id < c:
        raise IndexError(f"class_id {class_id} out of range for C={c}")
    if k < 1 or k > c - 1:
        raise KTooLargeError(f"k={k} with C={c} (need 1 <= k <= C-1)")
    _require_unit_rows(prototypes)
    cos = np.clip(prototypes @ prototypes[class_id], -1.0, 1.0)
    cos[class_id] = -2.0  # below any cosine: excludes self
    order = np.lexsort((np.arange(c), -cos))
    return order[:k].astype(np.int64)


def inter_class_compactness(prototypes, class_id: int, cfg: DfiConfig) -> float:
    cfg = cfg.validated()
    nbrs = nearest_neighbors(prototypes, class_id, cfg.k_neighbors)
    prototypes = tensor.as_matrix(prototypes)
    cos = np.clip(prototypes[nbrs] @ prototypes[class_id], -1.0, 1.0)
    return tensor.log_sum_exp(cfg.scale_s * cos)


def build_table(prototypes, cfg: DfiConfig, iteration: int = 0) -> DfiTable:
    """Table over all classes at once. Prototypes must be row-normalized."""
    cfg = cfg.validated()
    prototypes = tensor.as_matrix(prototypes)
    c, k = prototypes.shape[0], cfg.k_neighbors
    if k > c - 1:
        raise KTooLargeError(f"k={k} with C={c} (need k <= C-1)")
    _require_unit_rows(prototypes)

    cos = np.clip(prototypes @ prototypes.T, -1.0, 1.0)
    np.fill_diagonal(cos, -2.0)
    ids = np.broadcast_to(np.arange(c), (c, c))
    order = np.lexsort((ids, -cos), axis=1)
    neighbor_ids = order[:, :k].astype(np.int64)

    nbr_cos = np.take_along_axis(cos, neighbor_ids, axis=1)
    ic = np.array([tensor.log_sum_exp(cfg.scale_s * row) for row in nbr_cos])
    beta = cfg.epsilon / ic

    for a in (ic, beta, neighbor_ids):
        a.flags.writeable = False
    return DfiTable(ic=ic, beta=beta, neighbor_ids=neighbor_ids,
                    built_at_iteration=int(iteration))


def refresh_if_due(table: DfiTable, prototypes, cfg: DfiConfig, iteration: int) -> DfiTable:
    """Rebuild when refresh_period iterations have elapsed, else return as-is."""
    cfg = cfg.validated()
    if cfg.refresh_period is None:
        raise ValueError("refresh_if_due needs a concrete refresh_period")
    if iteration - table.built_at_iteration >= cfg.refresh_period:
        return build_table(prototypes, cfg, iteration)
    return table


def beta_summary(table: DfiTable) -> dict:
    beta = np.asarray(table.beta)
    deciles = np.quantile(beta, np.linspace(0.1, 0.9, 9))
    return {
        "num_classes": int(beta.size),
        "min": float(beta.min()),
        "max": float(beta.max()),
        "mean": float(beta.mean()),
        "deciles": [float(q) for q in deciles],
        "built_at_iteration": table.built_at_iteration,
    }


def write_report(table: DfiTable, csv_path, json_path, class_to_domain=None) -> dict:
    """Per-class CSV plus a JSON roll-up; optional join against domain ids.

    Returns the JSON summary dict (also written to json_path).
    """
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["class_id", "ic", "beta", "neighbor_ids"])
        for c in range(table.ic.shape[0]):
            nbrs = ";".join(str(int(i)) for i in table.neighbor_ids[c])
            w.writerow([c, repr(float(table.ic[c])), repr(float(table.beta[c])), nbrs])

    summary = beta_summary(table)
    if class_to_domain is not None:
        dom = np.asarray(class_to_domain, dtype=np.int64)
        counts = np.bincount(dom)
        per_domain = {}
        for d in range(counts.size):
            mask = dom == d
            per_domain[str(d)] = {
                "num_classes": int(mask.sum()),
                "mean_beta": float(np.mean(table.beta[mask])),
                "mean_ic": float(np.mean(table.ic[mask])),
            }
        head = int(np.argmax(counts))
        tail = int(np.argmin(counts))
        summary["per_domain"] = per_domain
        summary["head_domain"] = head
        summary["tail_domain"] = tail
        summary["mean_beta_head"] = per_domain[str(head)]["mean_beta"]
        summary["mean_beta_tail"] = per_domain[str(tail)]["mean_beta"]
        summary["tail_minus_head_beta"] = (
            summary["mean_beta_tail"] - summary["mean_beta_head"])

    with open(json_path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary
