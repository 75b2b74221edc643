"""End-to-end command line flows on a miniature experiment config."""
from __future__ import annotations

import csv
import json
import subprocess
import sys

import pytest

from domainbalance import cli

# 14 classes over 3 domains, 12 samples each; every subcommand finishes in
# well under a second at this size
TINY = {
    "synth": {
        "head_classes": 8,
        "input_dim": 16,
        "samples_per_class": 12,
        "domain_spread": 0.4,
        "class_spread": 0.2,
    },
    "model": {"hidden_dims": [32], "feature_dim": 16},
    "optim": {"epochs": 2, "batch_size": 16, "lr_steps": [1]},
    "dfi": {"k_neighbors": 5},
    "eval": {"per_domain_pos": 4, "per_domain_neg": 8},
}


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(TINY))
    return str(path)


def run(argv):
    return cli.main(argv)


def test_generate_writes_artifacts(tiny_config, tmp_path, capsys):
    out = tmp_path / "run"
    assert run(["generate", "--config", tiny_config, "--out", str(out)]) == 0
    assert (out / "dataset.dbds").exists()
    assert (out / "pairs.csv").exists()
    resolved = json.loads((out / "resolved_config.json").read_text())
    assert resolved["synth"]["head_classes"] == 8
    assert resolved["optim"]["lr"] == 0.1  # defaults merged in
    text = capsys.readouterr().out
    assert "14 classes" in text and "3 domains" in text


def test_full_pipeline(tiny_config, tmp_path):
    out = tmp_path / "run"
    assert run(["generate", "--config", tiny_config, "--out", str(out)]) == 0
    assert run(["train", "--config", tiny_config, "--out", str(out),
                "--arm", "full"]) == 0

    ckpt = out / "full" / "checkpoint.dbck"
    assert ckpt.exists()
    with open(out / "full" / "history.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2
    assert set(rows[0]) == {"epoch", "lr", "loss_dbm", "loss_rrm", "loss_total"}
    assert rows[0]["loss_rrm"] != ""  # gated arm logs the regression term
    assert float(rows[1]["lr"]) == pytest.approx(0.01)  # single step at epoch 1

    assert run(["eval", "--config", tiny_config, "--out", str(out),
                "--checkpoint", str(ckpt)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert set(report["per_domain_accuracy"]) == {"0", "1", "2"}
    assert 0.0 <= report["overall_accuracy"] <= 1.0
    assert report["rank1"] >= 0.0
    with open(out / "per_domain.csv", newline="") as fh:
        table = list(csv.DictReader(fh))
    assert [r["domain_id"] for r in table] == ["0", "1", "2"]
    assert all(r["n_pos"] == "4" and r["n_neg"] == "8" for r in table)

    assert run(["dfi-report", "--config", tiny_config, "--out", str(out),
                "--checkpoint", str(ckpt),
                "--data", str(out / "dataset.dbds")]) == 0
    summary = json.loads((out / "dfi_summary.json").read_text())
    assert summary["num_classes"] == 14
    assert summary["head_domain"] == 0 and summary["tail_domain"] == 2
    assert summary["min"] > 0.0
    with open(out / "dfi.csv", newline="") as fh:
        dfi_rows = list(csv.DictReader(fh))
    assert len(dfi_rows) == 14


def test_dfi_report_k_override(tiny_config, tmp_path):
    out = tmp_path / "run"
    run(["generate", "--config", tiny_config, "--out", str(out)])
    run(["train", "--config", tiny_config, "--out", str(out), "--arm", "cosface"])
    ckpt = str(out / "cosface" / "checkpoint.dbck")
    assert run(["dfi-report", "--config", tiny_config, "--out", str(out),
                "--checkpoint", ckpt, "--k", "13"]) == 0
    # without --data the summary skips the domain join
    summary = json.loads((out / "dfi_summary.json").read_text())
    assert "head_domain" not in summary


def test_artifacts_are_deterministic(tiny_config, tmp_path):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        run(["generate", "--config", tiny_config, "--out", str(out)])
        run(["train", "--config", tiny_config, "--out", str(out),
             "--arm", "cosface"])
        outs.append(out)
    a, b = outs
    assert (a / "dataset.dbds").read_bytes() == (b / "dataset.dbds").read_bytes()
    assert (a / "pairs.csv").read_bytes() == (b / "pairs.csv").read_bytes()
    assert ((a / "cosface" / "checkpoint.dbck").read_bytes()
            == (b / "cosface" / "checkpoint.dbck").read_bytes())
    assert ((a / "cosface" / "history.csv").read_bytes()
            == (b / "cosface" / "history.csv").read_bytes())


def test_seed_override_changes_artifacts(tiny_config, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    run(["generate", "--config", tiny_config, "--out", str(a)])
    run(["generate", "--config", tiny_config, "--seed", "1", "--out", str(b)])
    assert (a / "dataset.dbds").read_bytes() != (b / "dataset.dbds").read_bytes()


def test_ablation_table(tiny_config, tmp_path, capsys):
    out = tmp_path / "run"
    assert run(["ablation", "--config", tiny_config, "--out", str(out)]) == 0
    with open(out / "ablation.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["arm"] for r in rows] == list(cli.ABLATION_ORDER)
    for row in rows:
        acc = float(row["overall_accuracy"])
        assert 0.0 <= acc <= 1.0
    baseline = next(r for r in rows if r["arm"] == cli.ABLATION_BASELINE)
    assert float(baseline["delta_vs_cosface"]) == 0.0
    for arm in cli.ABLATION_ORDER:
        assert (out / arm / "checkpoint.dbck").exists()
        assert (out / arm / "report.json").exists()
    assert "wrote" in capsys.readouterr().out


def test_gradcheck_exit_codes(capsys):
    assert run(["gradcheck", "--seeds", "1"]) == 0
    text = capsys.readouterr().out
    assert "overall: PASS" in text
    assert run(["gradcheck", "--seeds", "1", "--perturb", "dbm"]) == 3
    text = capsys.readouterr().out
    assert "overall: FAIL" in text and "dbm" in text


def test_argparse_rejections():
    with pytest.raises(SystemExit) as e:
        run([])
    assert e.value.code == 2
    with pytest.raises(SystemExit) as e:
        run(["train", "--no-such-flag"])
    assert e.value.code == 2
    with pytest.raises(SystemExit) as e:
        run(["train", "--arm", "bogus"])
    assert e.value.code == 2


def test_config_errors_exit_1(tmp_path, capsys):
    bad_json = tmp_path / "bad.json"
    bad_json.write_text("{not json")
    assert run(["generate", "--config", str(bad_json),
                "--out", str(tmp_path / "x")]) == 1
    assert "error:" in capsys.readouterr().err

    unknown_key = tmp_path / "unknown.json"
    unknown_key.write_text(json.dumps({"synth": {"n_domains": 4}}))
    assert run(["generate", "--config", str(unknown_key),
                "--out", str(tmp_path / "y")]) == 1

    bad_arm = tmp_path / "arm.json"
    bad_arm.write_text(json.dumps({"arm": "mystery"}))
    assert run(["train", "--config", str(bad_arm),
                "--out", str(tmp_path / "z")]) == 1


def test_missing_files_exit_2(tiny_config, tmp_path, capsys):
    assert run(["train", "--config", tiny_config,
                "--out", str(tmp_path / "empty")]) == 2
    assert run(["eval", "--config", tiny_config, "--out", str(tmp_path / "e"),
                "--checkpoint", str(tmp_path / "missing.dbck")]) == 2
    assert "error:" in capsys.readouterr().err


def test_k_too_large_exit_1(tiny_config, tmp_path):
    out = tmp_path / "run"
    run(["generate", "--config", tiny_config, "--out", str(out)])
    run(["train", "--config", tiny_config, "--out", str(out), "--arm", "cosface"])
    ckpt = str(out / "cosface" / "checkpoint.dbck")
    assert run(["dfi-report", "--config", tiny_config, "--out", str(out),
                "--checkpoint", ckpt, "--k", "50"]) == 1


def test_console_script_installed():
    proc = subprocess.run([sys.executable, "-c",
                           "from domainbalance.cli import main; "
                           "raise SystemExit(main(['gradcheck', '--seeds', '1']))"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "overall: PASS" in proc.stdout
