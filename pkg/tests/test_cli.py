"""End-to-end command line flows and exit codes."""

import csv
import os
import subprocess
import sys

import numpy as np
import pytest

from mose.cli import main

MICRO_CFG = """\
n_total = 12
n_th = 6
batch = 2
steps = 8
beta_min = 0.02
beta_max = 0.22
lr_v = 1e-4
d_channels = 4
d_blocks = 2
v_channels = 8
v_mlp_width = 8
emb_dim = 4
"""


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    """Corpus plus two trained micro models (regression-only and metric)."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "corpus"
    rc = main(["synth", "--out", str(data), "--seed", "3",
               "--n-train", "4", "--n-test", "4", "--length", "256",
               "--train-snrs", "0,10", "--test-snrs", "5,15"])
    assert rc == 0
    manifest = data / "manifest.tsv"
    assert manifest.exists()

    cfg_e = root / "elbo.cfg"
    cfg_e.write_text(MICRO_CFG + "elbo_only = true\n")
    cfg_m = root / "metric.cfg"
    cfg_m.write_text(MICRO_CFG + "alpha = 1.0\n")

    run_e = root / "run_elbo"
    run_m = root / "run_metric"
    assert main(["train", "--config", str(cfg_e), "--data", str(manifest),
                 "--out", str(run_e), "--dump-schedule"]) == 0
    assert main(["train", "--config", str(cfg_m), "--data", str(manifest),
                 "--out", str(run_m)]) == 0
    return {"root": root, "manifest": manifest,
            "ckpt_e": run_e / "checkpoint", "ckpt_m": run_m / "checkpoint",
            "run_e": run_e}


def test_synth_writes_manifest_and_run_manifest(work):
    lines = work["manifest"].read_text().splitlines()
    assert lines[0] == "id\tclean\tnoisy\tsnr_db\tsplit"
    assert len(lines) == 1 + 8
    run_manifest = work["manifest"].parent / "run_manifest.txt"
    assert "command = synth" in run_manifest.read_text()


def test_train_outputs(work):
    run = work["run_e"]
    assert (run / "telemetry.csv").exists()
    assert (run / "schedule.tsv").exists()
    assert (run / "checkpoint" / "manifest.txt").exists()
    text = (run / "run_manifest.txt").read_text()
    assert "command = train" in text and "config_hash = " in text
    assert "elbo_only = true" in text


def test_refuses_nonempty_out_then_force(work, capsys):
    data = str(work["manifest"])
    cfg = work["root"] / "elbo.cfg"
    rc = main(["train", "--config", str(cfg), "--data", data,
               "--out", str(work["run_e"])])
    assert rc == 2
    assert "--force" in capsys.readouterr().err


def test_enhance_from_corpus_and_wav(work, tmp_path):
    out = tmp_path / "enh"
    rc = main(["enhance", "--ckpt", str(work["ckpt_e"]),
               "--data", str(work["manifest"]), "--out", str(out)])
    assert rc == 0
    wavs = sorted(p for p in os.listdir(out) if p.endswith("_enhanced.wav"))
    assert len(wavs) == 8

    first_row = work["manifest"].read_text().splitlines()[1]
    noisy_path = os.path.join(os.path.dirname(str(work["manifest"])),
                              first_row.split("\t")[2])
    out2 = tmp_path / "enh_one"
    rc = main(["enhance", str(noisy_path), "--ckpt", str(work["ckpt_e"]),
               "--out", str(out2)])
    assert rc == 0
    assert len(os.listdir(out2)) == 2  # one wav + run manifest


def test_enhance_without_inputs_is_data_error(work, tmp_path):
    rc = main(["enhance", "--ckpt", str(work["ckpt_e"]),
               "--out", str(tmp_path / "x")])
    assert rc == 3


def test_eval_comparison_table(work, tmp_path, capsys):
    out = tmp_path / "ev"
    rc = main(["eval", "--ckpt", str(work["ckpt_e"]),
               "--ckpt", str(work["ckpt_m"]),
               "--data", str(work["manifest"]), "--out", str(out),
               "--metric", "si_snr,seg_snr", "--threads", "1"])
    assert rc == 0
    with open(out / "comparison.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["system", "si_snr", "seg_snr"]
    systems = [r[0] for r in rows[1:]]
    assert systems[0] == "unprocessed"
    assert set(systems[1:]) == {"alpha=0", "alpha=1"}
    assert (out / "eval_alpha=0.csv").exists()
    printed = capsys.readouterr().out
    assert "si_snr" in printed and "unprocessed" in printed


def test_eval_fast_ladder(work, tmp_path):
    out = tmp_path / "ev_fast"
    rc = main(["eval", "--ckpt", str(work["ckpt_e"]),
               "--data", str(work["manifest"]), "--out", str(out),
               "--fast-steps", "4", "--threads", "1"])
    assert rc == 0
    assert (out / "comparison.csv").exists()


def test_eval_bad_fast_schedule_is_config_error(work, tmp_path):
    rc = main(["eval", "--ckpt", str(work["ckpt_e"]),
               "--data", str(work["manifest"]),
               "--out", str(tmp_path / "y"), "--fast-schedule", "0.1,zebra"])
    assert rc == 2


def test_mismatch_command(work, tmp_path, capsys):
    out = tmp_path / "mm"
    rc = main(["mismatch", "--ckpt-elbo", str(work["ckpt_e"]),
               "--ckpt-metric", str(work["ckpt_m"]),
               "--data", str(work["manifest"]), "--out", str(out),
               "--split", "test"])
    assert rc == 0
    assert (out / "mismatch.csv").exists()
    printed = capsys.readouterr().out
    assert "corr(" in printed


def test_train_resume_flow(work, tmp_path):
    # interrupting is covered in the trainer tests; here the CLI surface:
    # --resume continues a finished checkpoint directory without --force
    cfg = work["root"] / "elbo.cfg"
    out = tmp_path / "resumed"
    rc = main(["train", "--config", str(cfg),
               "--data", str(work["manifest"]), "--out", str(out)])
    assert rc == 0
    rc = main(["train", "--config", str(cfg),
               "--data", str(work["manifest"]), "--out", str(out),
               "--resume", str(out / "checkpoint")])
    assert rc == 0


def test_exit_code_2_on_bad_config(work, tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("not_a_key = 5\n")
    rc = main(["train", "--config", str(bad), "--data", str(work["manifest"]),
               "--out", str(tmp_path / "o")])
    assert rc == 2


def test_exit_code_3_on_missing_data(work, tmp_path):
    rc = main(["train", "--config", str(work["root"] / "elbo.cfg"),
               "--data", str(tmp_path / "nowhere.tsv"),
               "--out", str(tmp_path / "o")])
    assert rc == 3
    rc = main(["enhance", "--ckpt", str(tmp_path / "not_a_ckpt"),
               "--data", str(work["manifest"]),
               "--out", str(tmp_path / "o2")])
    assert rc == 3


def test_exit_code_4_on_divergence(work, tmp_path):
    cfg = tmp_path / "explode.cfg"
    cfg.write_text(MICRO_CFG.replace("n_total = 12", "n_total = 80")
                   .replace("n_th = 6", "n_th = 25")
                   + "elbo_only = true\nlr_d_joint = 1e3\n")
    rc = main(["train", "--config", str(cfg), "--data", str(work["manifest"]),
               "--out", str(tmp_path / "o")])
    assert rc == 4


def test_exit_code_5_on_failed_selfcheck(monkeypatch, capsys):
    import mose.selfcheck as sc
    monkeypatch.setattr(sc, "run_selfcheck",
                        lambda quick=False: [("doom", False, "synthetic")])
    rc = main(["selfcheck", "--quick"])
    assert rc == 5
    assert "[FAIL] doom" in capsys.readouterr().out


def test_selfcheck_quick_passes(capsys):
    rc = main(["selfcheck", "--quick"])
    assert rc == 0
    out = capsys.readouterr().out
    assert "[PASS]" in out and "[FAIL]" not in out


def test_version_and_module_entry():
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    proc = subprocess.run([sys.executable, "-m", "mose", "--version"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert proc.stdout.strip()
