"""Compactness table: worked examples, ordering structure, refresh contract."""
from __future__ import annotations

import math

import numpy as np
import pytest

from domainbalance import dfi, tensor
from domainbalance.dfi import DfiConfig, DfiTable
from domainbalance.errors import KTooLargeError, NotNormalizedError
from domainbalance.rng import Rng


def unit_rows(m):
    return tensor.l2_normalize_rows(np.asarray(m, dtype=np.float64))


def equicos_bundle(count: int, mutual_cos: float, dim: int, axis: int = 0):
    """count unit vectors with pairwise cosine exactly mutual_cos.

    v_i = sqrt(c)*u + sqrt(1-c)*e_i over orthonormal u, e_1..e_count.
    """
    assert dim >= count + 1
    vecs = np.zeros((count, dim))
    vecs[:, axis] = math.sqrt(mutual_cos)
    for i in range(count):
        vecs[i, axis + 1 + i] = math.sqrt(1.0 - mutual_cos)
    return vecs


def test_neighbor_order_and_tie_break():
    # classes 1 and 2 are duplicates: an exact tie, broken by ascending id
    protos = unit_rows([
        [1.0, 0.0, 0.0],
        [0.8, 0.6, 0.0],
        [0.8, 0.6, 0.0],
        [0.0, 0.0, 1.0],
    ])
    ids = dfi.nearest_neighbors(protos, 0, 3)
    assert ids.tolist() == [1, 2, 3]
    ids = dfi.nearest_neighbors(protos, 3, 3)
    assert ids.tolist()[1:] == [1, 2]  # tied pair stays id-ordered


def test_neighbors_exclude_self_and_validate_k():
    protos = unit_rows(Rng(0).gaussian_matrix(6, 4))
    for c in range(6):
        ids = dfi.nearest_neighbors(protos, c, 5)
        assert c not in ids.tolist()
    with pytest.raises(KTooLargeError):
        dfi.nearest_neighbors(protos, 0, 6)
    with pytest.raises(IndexError):
        dfi.nearest_neighbors(protos, 6, 2)


def test_not_normalized_rejected():
    with pytest.raises(NotNormalizedError):
        dfi.nearest_neighbors(np.array([[2.0, 0.0], [0.0, 1.0]]), 0, 1)


def test_compactness_two_neighbor_oracle():
    # neighbors at cos 0.8 and 0.6, s=30: logsumexp(24, 18)
    protos = np.zeros((3, 4))
    protos[0, 0] = 1.0
    protos[1] = [0.8, 0.6, 0.0, 0.0]
    protos[2] = [0.6, 0.0, 0.8, 0.0]
    cfg = DfiConfig(k_neighbors=2, epsilon=5.5, scale_s=30.0)
    ic = dfi.inter_class_compactness(unit_rows(protos), 0, cfg)
    assert abs(ic - 24.002475685137732) < 1e-9


def test_uniform_layout_constant_beta_and_division_oracle():
    # 101 classes, all pairwise cosines equal: every neighbor contributes the
    # same term, IC = s*cos + ln(K); at cos 1 and K=100 that is 30 + ln 100
    protos = np.ones((101, 1))
    cfg = DfiConfig(k_neighbors=100, epsilon=5.5, scale_s=30.0)
    table = dfi.build_table(unit_rows(protos), cfg)
    assert np.allclose(table.ic, 30.0 + math.log(100.0), atol=1e-12)
    assert abs(table.ic[0] - 34.605170185988094) < 1e-9
    assert np.allclose(table.beta, 0.15893578822007914, atol=1e-9)
    assert float(np.ptp(table.beta)) == 0.0


def test_beta_times_ic_equals_epsilon():
    protos = unit_rows(Rng(1).gaussian_matrix(40, 8))
    for eps in (0.5, 5.5, 11.0):
        cfg = DfiConfig(k_neighbors=10, epsilon=eps)
        table = dfi.build_table(protos, cfg)
        assert np.all(np.abs(table.beta * table.ic - eps) < 1e-12)


def test_two_cluster_layout_orders_beta():
    # tight cluster of 50 at mutual cos ~0.9, sparse cluster of 5 at ~0.1;
    # every sparse beta must exceed every tight beta at K=4
    dim = 57
    tight = equicos_bundle(50, 0.9, dim, axis=0)
    sparse = np.zeros((5, dim))
    sparse[:, 51] = math.sqrt(0.1)
    for i in range(5):
        sparse[i, 52 + i] = math.sqrt(0.9)
    protos = unit_rows(np.vstack([tight, sparse]))
    cfg = DfiConfig(k_neighbors=4, epsilon=5.5, scale_s=30.0)
    table = dfi.build_table(protos, cfg)
    tight_beta = table.beta[:50]
    sparse_beta = table.beta[50:]
    assert sparse_beta.min() > tight_beta.max()


def test_ic_strictly_increasing_in_k():
    # adding a neighbor adds a positive exponential to the sum; layouts are
    # kept inside a cosine band so the added term stays representable in
    # float64 (a neighbor many 1/s below the max underflows the running sum
    # and the mathematical strictness would tie out numerically)
    rng = Rng(7)
    for trial in range(100):
        center = rng.gaussian_matrix(1, 6)
        protos = unit_rows(center + 0.25 * rng.gaussian_matrix(12, 6))
        prev = None
        for k in range(1, 12):
            cfg = DfiConfig(k_neighbors=k)
            ic = dfi.inter_class_compactness(protos, trial % 12, cfg)
            if prev is not None:
                assert ic > prev
            prev = ic


def test_ic_nondecreasing_in_k_any_layout():
    rng = Rng(17)
    for trial in range(50):
        protos = unit_rows(rng.gaussian_matrix(12, 6))
        ics = [dfi.inter_class_compactness(protos, trial % 12, DfiConfig(k_neighbors=k))
               for k in range(1, 12)]
        assert all(b >= a for a, b in zip(ics, ics[1:]))


def test_table_permutation_equivariance():
    protos = unit_rows(Rng(3).gaussian_matrix(15, 5))
    cfg = DfiConfig(k_neighbors=6)
    base = dfi.build_table(protos, cfg)
    perm = Rng(4).permutation(15)
    permuted = dfi.build_table(protos[perm], cfg)
    assert np.allclose(permuted.beta, base.beta[perm], atol=1e-12)
    assert np.allclose(permuted.ic, base.ic[perm], atol=1e-12)


def test_build_table_records_iteration_and_k_guard():
    protos = unit_rows(Rng(5).gaussian_matrix(8, 4))
    table = dfi.build_table(protos, DfiConfig(k_neighbors=3), iteration=42)
    assert table.built_at_iteration == 42
    assert table.neighbor_ids.shape == (8, 3)
    with pytest.raises(KTooLargeError):
        dfi.build_table(protos, DfiConfig(k_neighbors=8))


def test_refresh_if_due_period_semantics():
    protos_a = unit_rows(Rng(6).gaussian_matrix(9, 4))
    protos_b = unit_rows(Rng(7).gaussian_matrix(9, 4))
    cfg = DfiConfig(k_neighbors=3, refresh_period=5)
    table = dfi.build_table(protos_a, cfg, iteration=0)
    # not due: the same table object comes back untouched
    same = dfi.refresh_if_due(table, protos_b, cfg, iteration=3)
    assert same is table
    due = dfi.refresh_if_due(table, protos_b, cfg, iteration=5)
    assert due is not table
    assert due.built_at_iteration == 5
    fresh = dfi.build_table(protos_b, cfg, iteration=5)
    assert np.array_equal(due.beta, fresh.beta)


def test_beta_summary_fields():
    protos = unit_rows(Rng(8).gaussian_matrix(10, 4))
    table = dfi.build_table(protos, DfiConfig(k_neighbors=4), iteration=3)
    summary = dfi.beta_summary(table)
    assert summary["num_classes"] == 10
    assert abs(summary["mean"] - float(table.beta.mean())) < 1e-15
    assert summary["min"] <= summary["mean"] <= summary["max"]
    assert summary["built_at_iteration"] == 3
    assert len(summary["deciles"]) == 9


def test_config_validation():
    with pytest.raises(KTooLargeError):
        DfiConfig(k_neighbors=0).validated()
    with pytest.raises(ValueError):
        DfiConfig(epsilon=0.0).validated()
    with pytest.raises(ValueError):
        DfiConfig(scale_s=-1.0).validated()
    with pytest.raises(ValueError):
        DfiConfig(refresh_period=0).validated()
