"""Threshold-sweep verification, TAR@FAR, and rank-1 identification."""
from __future__ import annotations

import numpy as np
import pytest

from domainbalance import metrics, synth
from domainbalance.errors import (
    EmptyGalleryError,
    EmptyInputError,
    LengthMismatchError,
)
from domainbalance.rng import Rng


def brute_force_accuracy(sims, same):
    """Try every sample value as a >= threshold, plus the two infinities."""
    sims = np.asarray(sims, dtype=np.float64)
    same = np.asarray(same, dtype=bool)
    best = 0.0
    for t in np.concatenate((sims, [-np.inf, np.inf])):
        pred = sims >= t
        best = max(best, float(np.mean(pred == same)))
    return best


def accuracy_at(sims, same, threshold):
    pred = np.asarray(sims) >= threshold
    return float(np.mean(pred == np.asarray(same, dtype=bool)))


def test_interleaved_oracle():
    sims = [0.6, 0.7, 0.8, 0.1]
    same = [True, False, True, False]
    acc, thr = metrics.verification_accuracy(sims, same)
    assert acc == 0.75
    assert thr == pytest.approx(0.35)  # lowest maximizing boundary


def test_separable_oracle():
    acc, thr = metrics.verification_accuracy([0.9, 0.8, 0.1, 0.2],
                                             [True, True, False, False])
    assert acc == 1.0
    assert thr == pytest.approx(0.5)


def test_all_equal_similarities():
    acc, thr = metrics.verification_accuracy([0.5, 0.5, 0.5],
                                             [True, False, True])
    assert acc == pytest.approx(2.0 / 3.0)
    assert thr == -np.inf


def test_matches_brute_force():
    rng = Rng(11)
    for trial in range(200):
        n = 2 + trial % 19
        sims = rng.uniform_block(n) * 2.0 - 1.0
        same = rng.uniform_block(n) < 0.5
        if trial % 7 == 0:
            # force duplicated values so boundary handling is exercised
            sims = np.round(sims * 4.0) / 4.0
        acc, thr = metrics.verification_accuracy(sims, same)
        assert acc == pytest.approx(brute_force_accuracy(sims, same), abs=1e-12)
        assert accuracy_at(sims, same, thr) == pytest.approx(acc, abs=1e-12)


def test_reported_threshold_is_lowest_maximizer():
    sims = [0.1, 0.4, 0.6, 0.9]
    same = [False, True, False, True]
    acc, thr = metrics.verification_accuracy(sims, same)
    assert acc == 0.75
    assert thr == pytest.approx(0.25)


def test_verification_error_paths():
    with pytest.raises(EmptyInputError):
        metrics.verification_accuracy([], [])
    with pytest.raises(LengthMismatchError):
        metrics.verification_accuracy([0.1, 0.2], [True])


def test_tar_at_far_oracle():
    pos = [0.9, 0.5, 0.45, 0.3]
    neg = [0.6, 0.4, 0.2, 0.1, 0.05, 0.0, -0.1, -0.2, -0.3, -0.4]
    out = metrics.tar_at_far(pos, neg, [0.1, 0.2, 1.0, 0.05])
    assert out[0.1] == pytest.approx(0.25)   # threshold 0.6, one accept allowed
    assert out[0.2] == pytest.approx(0.75)   # threshold 0.4
    assert out[1.0] == pytest.approx(1.0)    # threshold min(neg)
    assert out[0.05] is None                 # 0.05 * 10 < 1 false accept


def test_tar_at_far_duplicate_negatives():
    # both negatives share one value; FAR 0.5 admits one accept but any
    # threshold drawn from the data admits two, so nothing qualifies
    out = metrics.tar_at_far([0.9, 0.1], [0.5, 0.5], [0.5, 1.0])
    assert out[0.5] == 0.0
    # FAR 1.0 sets the threshold at the lowest negative, 0.5; the positive at
    # 0.1 still falls below it
    assert out[1.0] == 0.5


def test_tar_at_far_empty_inputs():
    with pytest.raises(EmptyInputError):
        metrics.tar_at_far([], [0.1], [0.5])
    with pytest.raises(EmptyInputError):
        metrics.tar_at_far([0.1], [], [0.5])


def unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.sqrt(v @ v)


def test_rank1_oracle():
    gallery = np.vstack([unit([1, 0, 0]), unit([0, 1, 0]), unit([0, 0, 1])])
    g_labels = [0, 1, 2]
    probes = np.vstack([unit([0.9, 0.1, 0]), unit([0.1, 0.9, 0]),
                        unit([0.9, 0, 0.1])])
    p_labels = [0, 1, 1]  # last probe lands on gallery label 0: a miss
    r1 = metrics.rank1_identification(probes, p_labels, gallery, g_labels)
    assert r1 == pytest.approx(2.0 / 3.0)


def test_rank1_tie_goes_to_lowest_gallery_index():
    probe = unit([1, 1, 0])[None, :]
    gallery = np.vstack([unit([0, 1, 0]), unit([1, 0, 0])])
    assert metrics.rank1_identification(probe, [7], gallery, [7, 3]) == 1.0
    assert metrics.rank1_identification(probe, [7], gallery[::-1].copy(),
                                        [3, 7]) == 0.0


def test_rank1_error_paths():
    g = unit([1, 0])[None, :]
    with pytest.raises(EmptyGalleryError):
        metrics.rank1_identification(g, [0], np.empty((0, 2)), [])
    with pytest.raises(EmptyInputError):
        metrics.rank1_identification(np.empty((0, 2)), [], g, [0])
    with pytest.raises(LengthMismatchError):
        metrics.rank1_identification(g, [0, 1], g, [0])


def test_report_from_features_shape():
    ds = synth.generate(synth.SynthConfig(
        num_domains=3, head_classes=12, input_dim=16, samples_per_class=8,
        seed=2))
    pairs = synth.make_verification_pairs(ds, 4, 10, seed=2)
    feats = ds.inputs  # raw inputs are already unit rows
    rep = metrics.report_from_features(feats, ds, pairs,
                                       far_levels=(0.5, 1e-4))
    assert set(rep.per_domain_accuracy) == {0, 1, 2}
    assert rep.pair_counts[0] == {"n_pos": 4, "n_neg": 10}
    assert 0.0 <= rep.overall_accuracy <= 1.0
    assert 0.0 <= rep.rank1 <= 1.0
    assert rep.tar_at_far[1e-4] is None  # only 30 negatives in the pool
    assert rep.tar_at_far[0.5] is not None
    jd = rep.to_json_dict()
    assert set(jd["per_domain_accuracy"]) == {"0", "1", "2"}
    assert "0.5" in jd["tar_at_far"]


def test_write_report_round_trip(tmp_path):
    ds = synth.generate(synth.SynthConfig(
        num_domains=3, head_classes=12, input_dim=16, samples_per_class=8,
        seed=2))
    pairs = synth.make_verification_pairs(ds, 4, 10, seed=2)
    rep = metrics.report_from_features(ds.inputs, ds, pairs)
    jpath, cpath = tmp_path / "report.json", tmp_path / "per_domain.csv"
    metrics.write_report(rep, jpath, cpath)
    import json
    loaded = json.loads(jpath.read_text())
    assert loaded["overall_accuracy"] == rep.overall_accuracy
    lines = cpath.read_text().strip().splitlines()
    assert lines[0] == "domain_id,n_pos,n_neg,accuracy,threshold"
    assert len(lines) == 1 + 3
    row0 = lines[1].split(",")
    assert float(row0[3]) == rep.per_domain_accuracy[0]
