"""Verification and identification metrics with exhaustive threshold sweeps.

verification_accuracy scans every decision boundary the data admits (midpoints
between consecutive distinct similarities, plus -inf and +inf) and reports the
best accuracy together with the lowest threshold achieving it, so the result
is exactly the brute-force optimum. A pair is predicted "same" when its
similarity is >= the threshold.

tar_at_far picks, per requested FAR level, the smallest threshold whose false
accept rate is <= the level, and reports the true accept rate there. A level
is undefined (None) when level * num_negatives < 1, i.e. when even one false
accept overshoots the level.
"""

from __future__ import annotations

import csv
import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np

from . import model as model_mod
from . import rbm as rbm_mod
from . import tensor
from .errors import EmptyGalleryError, EmptyInputError, LengthMismatchError


def verification_accuracy(similarities, same_flags):
    """Best threshold accuracy over all boundaries. Returns (accuracy, threshold)."""
    sims = np.asarray(similarities, dtype=np.float64).ravel()
    same = np.asarray(same_flags, dtype=bool).ravel()
    if sims.size == 0:
        raise EmptyInputError("no pairs")
    if sims.shape != same.shape:
        raise LengthMismatchError(f"{sims.size} sims vs {same.size} flags")

    order = np.argsort(sims, kind="stable")
    s_sorted = sims[order]
    same_sorted = same[order]
    n = sims.size
    n_pos = int(same.sum())

    # candidate boundaries sit between distinct values; i = count predicted "diff"
    distinct_after = np.nonzero(np.diff(s_sorted))[0] + 1
    cuts = np.concatenate(([0], distinct_after, [n]))
    thresholds = np.empty(cuts.size)
    thresholds[0] = -np.inf
    thresholds[-1] = np.inf
    mids = (s_sorted[distinct_after - 1] + s_sorted[distinct_after]) / 2.0
    thresholds[1:-1] = mids

    # at cut i (i pairs strictly below the threshold, predicted "diff"):
    # correct = negatives among the first i + positives among the rest
    cum_pos = np.concatenate(([0], np.cumsum(same_sorted)))
    correct = (cuts - cum_pos[cuts]) + (n_pos - cum_pos[cuts])
    acc = correct / n
    best = int(np.argmax(acc))  # argmax takes the first (lowest threshold) on ties
    return float(acc[best]), float(thresholds[best])


def tar_at_far(pos_sims, neg_sims, far_levels):
    """{level: TAR or None}. Threshold = smallest value with FAR <= level."""
    pos = np.asarray(pos_sims, dtype=np.float64).ravel()
    neg = np.asarray(neg_sims, dtype=np.float64).ravel()
    if pos.size == 0 or neg.size == 0:
        raise EmptyInputError("need both positive and negative similarities")
    out = {}
    neg_sorted = np.sort(np.unique(neg))
    for level in far_levels:
        level = float(level)
        if level * neg.size < 1.0:
            out[level] = None
            continue
        allowed = int(np.floor(level * neg.size))
        threshold = np.inf
        for t in neg_sorted:  # ascending: first hit is the smallest threshold
            if int(np.sum(neg >= t)) <= allowed:
                threshold = float(t)
                break
        out[level] = float(np.mean(pos >= threshold))
    return out


def rank1_identification(probe_features, probe_labels, gallery_features,
                         gallery_labels) -> float:
    """Fraction of probes whose nearest gallery row (cosine; ties -> lowest
    index) carries the same label."""
    gallery = tensor.as_matrix(gallery_features)
    if gallery.shape[0] == 0:
        raise EmptyGalleryError("empty gallery")
    probes = tensor.as_matrix(probe_features)
    if probes.shape[0] == 0:
        raise EmptyInputError("no probes")
    p_labels = np.asarray(probe_labels).ravel()
    g_labels = np.asarray(gallery_labels).ravel()
    if p_labels.shape[0] != probes.shape[0] or g_labels.shape[0] != gallery.shape[0]:
        raise LengthMismatchError("features and labels disagree")
    sims = tensor.cosine_matrix(probes, gallery)
    nearest = np.argmax(sims, axis=1)
    return float(np.mean(g_labels[nearest] == p_labels))


@dataclass
class MetricsReport:
    overall_accuracy: float
    overall_threshold: float
    per_domain_accuracy: dict
    per_domain_threshold: dict
    pair_counts: dict               # domain -> {"n_pos": .., "n_neg": ..}
    tar_at_far: dict                # far level -> TAR or None
    rank1: float
    config: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["per_domain_accuracy"] = {str(k): v for k, v in self.per_domain_accuracy.items()}
        d["per_domain_threshold"] = {str(k): v for k, v in self.per_domain_threshold.items()}
        d["pair_counts"] = {str(k): v for k, v in self.pair_counts.items()}
        d["tar_at_far"] = {repr(float(k)): v for k, v in self.tar_at_far.items()}
        return d


def report_from_features(features, dataset, pairs, far_levels=(1e-2, 1e-3),
                         config_echo=None) -> MetricsReport:
    """Metrics over precomputed unit-norm features for every dataset sample."""
    feats = tensor.as_matrix(features)
    sims = np.sum(feats[pairs.idx_a] * feats[pairs.idx_b], axis=1)
    sims = np.clip(sims, -1.0, 1.0)

    overall_acc, overall_thr = verification_accuracy(sims, pairs.same_class)
    per_acc, per_thr, counts = {}, {}, {}
    for d in range(dataset.num_domains):
        m = pairs.domain_id == d
        if not np.any(m):
            continue
        acc, thr = verification_accuracy(sims[m], pairs.same_class[m])
        per_acc[d] = acc
        per_thr[d] = thr
        counts[d] = {"n_pos": int(np.sum(pairs.same_class[m])),
                     "n_neg": int(np.sum(~pairs.same_class[m]))}

    tar = tar_at_far(sims[pairs.same_class], sims[~pairs.same_class], far_levels)

    eval_mask = dataset.split == 1
    train_mask = dataset.split == 0
    rank1 = rank1_identification(
        feats[eval_mask], dataset.class_labels[eval_mask],
        feats[train_mask], dataset.class_labels[train_mask])

    return MetricsReport(overall_accuracy=overall_acc, overall_threshold=overall_thr,
                         per_domain_accuracy=per_acc, per_domain_threshold=per_thr,
                         pair_counts=counts, tar_at_far=tar, rank1=rank1,
                         config=config_echo or {})


def per_domain_report(state, dataset, pairs, far_levels=(1e-2, 1e-3),
                      config_echo=None) -> MetricsReport:
    """Embed every sample in eval mode, then score verification per domain,
    pooled TAR@FAR, and rank-1 identification (eval probes vs train gallery)."""
    batch, _ = model_mod.forward_embed(state, dataset.inputs, rbm_mod.MODE_EVAL)
    return report_from_features(batch.x, dataset, pairs, far_levels, config_echo)


def write_report(report: MetricsReport, json_path, csv_path) -> None:
    with open(json_path, "w") as fh:
        json.dump(report.to_json_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["domain_id", "n_pos", "n_neg", "accuracy", "threshold"])
        for d in sorted(report.per_domain_accuracy):
            w.writerow([d, report.pair_counts[d]["n_pos"],
                        report.pair_counts[d]["n_neg"],
                        repr(report.per_domain_accuracy[d]),
                        repr(report.per_domain_threshold[d])])
