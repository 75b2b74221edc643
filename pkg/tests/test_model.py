"""Training loop, optimizer wiring, checkpoint persistence."""
from __future__ import annotations

import csv

import numpy as np
import pytest

from domainbalance import losses, model, tensor
from domainbalance.dfi import DfiConfig
from domainbalance.errors import (
    ConfigError,
    DimMismatchError,
    EmptyDatasetError,
    FormatError,
    VersionMismatchError,
    ZeroRowError,
)
from domainbalance.model import ModelConfig, OptimConfig
from domainbalance.rng import Rng

C, D = 12, 8


def micro_config(**overrides):
    base = dict(
        input_dim=D,
        num_classes=C,
        hidden_dims=(16,),
        feature_dim=D,
        dfi=DfiConfig(k_neighbors=5),
    )
    base.update(overrides)
    return ModelConfig(**base)


def micro_data(seed=0, per_class=6):
    # separable blobs on the sphere
    rng = Rng(seed)
    protos = tensor.l2_normalize_rows(rng.gaussian_matrix(C, D))
    rows, labels = [], []
    for c in range(C):
        rows.append(protos[c] + 0.15 * rng.gaussian_matrix(per_class, D))
        labels.extend([c] * per_class)
    return tensor.l2_normalize_rows(np.vstack(rows)), np.array(labels)


def micro_optim(**overrides):
    base = dict(epochs=3, batch_size=16, lr=0.1)
    base.update(overrides)
    return OptimConfig(**base)


def test_lr_schedule_trace():
    optim = OptimConfig()
    trace = [model.lr_at_epoch(optim, e) for e in range(1, 16)]
    want = [0.1] * 5 + [0.01] * 3 + [0.001] * 3 + [0.0001] * 4
    assert trace == pytest.approx(want, rel=1e-12)
    # drops land after epochs 5, 8, 11
    changes = [e for e in range(2, 16)
               if model.lr_at_epoch(optim, e) != model.lr_at_epoch(optim, e - 1)]
    assert changes == [6, 9, 12]


def test_forward_embed_unit_rows():
    state = model.init_state(micro_config(), seed=1)
    feats, gate = model.forward_embed(state, micro_data()[0][:10])
    assert feats.normalized
    assert gate is None
    assert np.allclose(tensor.row_norms(feats.x), 1.0, atol=1e-12)


def test_forward_embed_zero_weights_raise():
    state = model.init_state(micro_config(), seed=1)
    for w, b in state.layers:
        w[:] = 0.0
        b[:] = 0.0
    with pytest.raises(ZeroRowError):
        model.forward_embed(state, micro_data()[0][:4])


def test_forward_embed_checks_width():
    state = model.init_state(micro_config(), seed=1)
    with pytest.raises(DimMismatchError):
        model.forward_embed(state, np.zeros((3, D + 1)))


def test_first_step_is_plain_sgd():
    # zero velocity makes step 1 exactly lr * (grad + wd * theta); the
    # prototype gradient is reproducible from the loss alone
    state = model.init_state(micro_config(), seed=2)
    inputs, labels = micro_data(2)
    batch = (inputs[:16], labels[:16])
    optim = micro_optim()

    x, _ = model._backbone_forward(state, batch[0])
    cls = losses.loss_forward(x, batch[1], state.prototypes,
                              state.dfi_table.beta, state.config.loss)
    p0 = state.prototypes.copy()
    expect = p0 - optim.lr * (cls.grad_prototypes + optim.weight_decay * p0)

    model.train_step(state, batch, optim, optim.lr)
    assert np.allclose(state.prototypes, expect, atol=1e-15)


def test_momentum_accumulates():
    # second step with the same batch must move farther than a fresh first
    # step at the same gradient scale
    state = model.init_state(micro_config(), seed=3)
    inputs, labels = micro_data(3)
    batch = (inputs[:16], labels[:16])
    optim = micro_optim()
    model.train_step(state, batch, optim, 0.1)
    p1 = state.prototypes.copy()
    model.train_step(state, batch, optim, 0.1)
    v = state.velocities["prototypes"]
    assert np.any(v != 0.0)
    assert not np.allclose(state.prototypes, p1)


def test_fit_learns_micro_dataset():
    state = model.init_state(micro_config(loss=losses.LossConfig(kind="cosface")),
                             seed=4)
    inputs, labels = micro_data(4)
    history = model.fit(state, inputs, labels, micro_optim(epochs=8))
    assert len(history) == 8
    assert history[-1]["loss_total"] < history[0]["loss_total"] * 0.5


def test_fit_respects_leftover_rule():
    # a tail batch of one sample is dropped (train-mode batch floor)
    state = model.init_state(micro_config(), seed=5)
    inputs, labels = micro_data(5)
    model.fit(state, inputs[:33], labels[:33], micro_optim(epochs=1, batch_size=16))
    # 33 = 16 + 16 + 1: two steps, 32 samples
    assert state.iteration == 2


def test_fit_validates_inputs():
    state = model.init_state(micro_config(), seed=6)
    inputs, labels = micro_data(6)
    with pytest.raises(EmptyDatasetError):
        model.fit(state, inputs[:0], labels[:0], micro_optim())
    with pytest.raises(ConfigError):
        model.fit(state, inputs[:8], labels[:8], micro_optim(batch_size=64))


def test_history_rows_and_rrm_column(tmp_path):
    cfg = micro_config(use_rbm=True, use_gate_loss=True,
                       loss=losses.LossConfig(kind="dbm"))
    state = model.init_state(cfg, seed=7)
    inputs, labels = micro_data(7)
    history = model.fit(state, inputs, labels, micro_optim(epochs=2))
    assert all(row["loss_rrm"] is not None for row in history)
    path = tmp_path / "history.csv"
    model.write_history(history, path)
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["epoch", "lr", "loss_dbm", "loss_rrm", "loss_total"]
    assert rows[0]["loss_rrm"] != ""

    plain = model.init_state(micro_config(), seed=7)
    h2 = model.fit(plain, inputs, labels, micro_optim(epochs=1))
    p2 = tmp_path / "plain.csv"
    model.write_history(h2, p2)
    with open(p2, newline="") as fh:
        r2 = list(csv.DictReader(fh))
    assert r2[0]["loss_rrm"] == ""


def test_force_unit_beta_hook():
    state = model.init_state(micro_config(force_unit_beta=True), seed=8)
    assert np.all(model._active_beta(state) == 1.0)


def test_dfi_table_refreshes_during_fit():
    state = model.init_state(micro_config(), seed=9)
    inputs, labels = micro_data(9)
    before = state.dfi_table.beta.copy()
    model.fit(state, inputs, labels, micro_optim(epochs=2))
    assert state.dfi_table.built_at_iteration > 0
    assert not np.array_equal(state.dfi_table.beta, before)


def test_config_validation():
    with pytest.raises(ConfigError):
        micro_config(num_classes=5).validated()  # needs k_neighbors + 1
    with pytest.raises(ConfigError):
        micro_config(use_gate_loss=True).validated()  # gate loss without block
    with pytest.raises(ConfigError):
        micro_config(hidden_dims=(0,)).validated()
    with pytest.raises(ConfigError):
        OptimConfig(momentum=1.0).validated()


def test_checkpoint_round_trip_bit_exact(tmp_path):
    cfg = micro_config(use_rbm=True, use_gate_loss=True)
    state = model.init_state(cfg, seed=10)
    inputs, labels = micro_data(10)
    model.fit(state, inputs, labels, micro_optim(epochs=2))
    path = tmp_path / "model.dbck"
    model.save_checkpoint(state, path)
    back = model.load_checkpoint(path)

    assert back.config == state.config
    assert back.epoch == state.epoch
    assert back.iteration == state.iteration
    assert back.rng.get_state() == state.rng.get_state()
    for name, arr in model.param_arrays(state).items():
        assert np.array_equal(model.param_arrays(back)[name], arr), name
        assert np.array_equal(back.velocities[name], state.velocities[name]), name
    assert np.array_equal(back.dfi_table.beta, state.dfi_table.beta)
    assert np.array_equal(back.rbm.bn.running_mean, state.rbm.bn.running_mean)


def test_resume_matches_uninterrupted_run(tmp_path):
    # 2 + 2 epochs through a checkpoint equals 4 straight epochs, bit for bit
    cfg = micro_config(use_rbm=True, use_gate_loss=True)
    inputs, labels = micro_data(11)

    straight = model.init_state(cfg, seed=11)
    h_straight = model.fit(straight, inputs, labels, micro_optim(epochs=4))

    part = model.init_state(cfg, seed=11)
    h_a = model.fit(part, inputs, labels, micro_optim(epochs=2))
    path = tmp_path / "mid.dbck"
    model.save_checkpoint(part, path)
    resumed = model.load_checkpoint(path)
    h_b = model.fit(resumed, inputs, labels, micro_optim(epochs=2))

    for name, arr in model.param_arrays(straight).items():
        assert np.array_equal(model.param_arrays(resumed)[name], arr), name
    assert h_a + h_b == h_straight


def test_checkpoint_format_errors(tmp_path):
    state = model.init_state(micro_config(), seed=12)
    path = tmp_path / "ok.dbck"
    model.save_checkpoint(state, path)
    raw = path.read_bytes()

    bad_magic = tmp_path / "magic.dbck"
    bad_magic.write_bytes(b"NOPE" + raw[4:])
    with pytest.raises(FormatError):
        model.load_checkpoint(bad_magic)

    bad_version = tmp_path / "version.dbck"
    bad_version.write_bytes(raw[:4] + bytes([raw[4] ^ 0x7F]) + raw[5:])
    with pytest.raises(VersionMismatchError):
        model.load_checkpoint(bad_version)

    trunc = tmp_path / "trunc.dbck"
    trunc.write_bytes(raw[: len(raw) - 16])
    with pytest.raises(OSError):
        model.load_checkpoint(trunc)


def test_param_arrays_cover_all_blocks():
    plain = model.init_state(micro_config(), seed=13)
    names = set(model.param_arrays(plain))
    assert "prototypes" in names
    assert {"backbone.0.w", "backbone.0.b", "backbone.1.w", "backbone.1.b"} <= names

    gated = model.init_state(micro_config(use_rbm=True), seed=13)
    rbm_names = set(model.param_arrays(gated)) - names
    assert {"rbm.w1", "rbm.b1", "rbm.gamma", "rbm.beta_shift",
            "rbm.w2", "rbm.b2", "rbm.gate_w", "rbm.gate_b"} == rbm_names
