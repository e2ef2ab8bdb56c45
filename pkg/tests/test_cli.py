"""End-to-end CLI tests: subcommands, exit codes, config precedence."""

import json
from pathlib import Path

import numpy as np
import pytest
from scipy.io import wavfile

from sca_aec.audio_io import read_wav, write_wav
from sca_aec.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, main
from sca_aec.synth import noise_like

OVERRIDES = {"rt60_s": 0.15, "delay_ms": (0.0, 120.0)}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Corpus -> dataset -> checkpoint, all through the CLI."""
    root = tmp_path_factory.mktemp("cli")
    corpus = root / "corpus"
    assert main(["make-testdata", "--out", str(corpus), "--count", "2",
                 "--seconds", "1.0", "--seed", "3"]) == EXIT_OK

    dataset = root / "dataset"
    cfg = root / "augment.json"
    cfg.write_text(json.dumps({"overrides": OVERRIDES}))
    assert main(["augment", "--manifest", str(corpus / "manifest.jsonl"),
                 "--out", str(dataset), "--count", "2", "--seed", "5",
                 "--threads", "1", "--config", str(cfg)]) == EXIT_OK

    run = root / "run"
    assert main(["train", "--data", str(dataset), "--out", str(run),
                 "--mode", "DT", "--epochs", "1", "--batch-size", "2",
                 "--seed", "0", "--d", "16", "--heads", "2",
                 "--lookahead", "0"]) == EXIT_OK
    return {"root": root, "corpus": corpus, "dataset": dataset,
            "ckpt": run / "last.ckpt", "run": run}


def test_make_testdata_writes_resolved_config(workspace):
    corpus = workspace["corpus"]
    assert (corpus / "manifest.jsonl").exists()
    resolved = json.loads((corpus / "resolved_config.json").read_text())
    assert resolved["count"] == 2 and resolved["seed"] == 3


def test_augment_outputs(workspace):
    ds = workspace["dataset"]
    assert (ds / "manifest.jsonl").exists()
    assert (ds / "summary.csv").exists()
    resolved = json.loads((ds / "resolved_config.json").read_text())
    assert resolved["command"] == "augment"
    assert resolved["overrides"]["rt60_s"] == 0.15


def test_train_outputs(workspace):
    run = workspace["run"]
    assert (run / "last.ckpt").exists()
    assert (run / "best.ckpt").exists()
    assert (run / "loss_curve.csv").exists()
    resolved = json.loads((run / "resolved_config.json").read_text())
    assert resolved["model"]["d"] == 16
    assert resolved["train"]["epochs"] == 1


def test_config_file_then_flags_precedence(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"count": 3, "seconds": 0.5}))
    out_file_only = tmp_path / "a"
    assert main(["make-testdata", "--out", str(out_file_only),
                 "--config", str(cfg), "--seed", "1"]) == EXIT_OK
    rows = (out_file_only / "manifest.jsonl").read_text().splitlines()
    assert len(rows) == 3  # file beats the built-in default of 8

    out_flag_wins = tmp_path / "b"
    assert main(["make-testdata", "--out", str(out_flag_wins),
                 "--config", str(cfg), "--count", "1", "--seed", "1"]) == EXIT_OK
    rows = (out_flag_wins / "manifest.jsonl").read_text().splitlines()
    assert len(rows) == 1  # flag beats the file


def test_unknown_config_key_is_usage_error(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"clips": 3}))
    assert main(["make-testdata", "--out", str(tmp_path / "x"),
                 "--config", str(cfg)]) == EXIT_USAGE


def test_missing_config_file_is_usage_error(tmp_path):
    assert main(["make-testdata", "--out", str(tmp_path / "x"),
                 "--config", str(tmp_path / "nope.json")]) == EXIT_USAGE


def test_usage_errors_exit_1():
    assert main(["no-such-command"]) == EXIT_USAGE
    assert main(["augment"]) == EXIT_USAGE  # missing required flags


def test_help_exits_zero():
    assert main(["--help"]) == EXIT_OK


def test_missing_manifest_is_data_error(tmp_path):
    assert main(["augment", "--manifest", str(tmp_path / "none.jsonl"),
                 "--out", str(tmp_path / "out"), "--count", "1"]) == EXIT_DATA


def test_empty_manifest_is_data_error(tmp_path):
    manifest = tmp_path / "manifest.jsonl"
    manifest.write_text("")
    assert main(["augment", "--manifest", str(manifest),
                 "--out", str(tmp_path / "out"), "--count", "1"]) == EXIT_DATA


def test_infer_offline_preserves_length(workspace, tmp_path):
    ds = workspace["dataset"]
    row = [json.loads(l) for l in
           (ds / "manifest.jsonl").read_text().splitlines()
           if json.loads(l)["mode"] == "FEST"][0]
    out = tmp_path / "enh.wav"
    assert main(["infer", "--model", str(workspace["ckpt"]),
                 "--mic", str(ds / row["mic_wav"]),
                 "--far", str(ds / row["far_wav"]),
                 "--out", str(out), "--offline"]) == EXIT_OK
    mic = read_wav(ds / row["mic_wav"]).samples
    enh = read_wav(out).samples
    assert enh.shape == mic.shape
    assert (tmp_path / "enh.wav.config.json").exists()


def test_infer_zero_mask_outputs_silence(workspace, tmp_path):
    ds = workspace["dataset"]
    row = json.loads((ds / "manifest.jsonl").read_text().splitlines()[0])
    out = tmp_path / "silent.wav"
    assert main(["infer", "--model", str(workspace["ckpt"]),
                 "--mic", str(ds / row["mic_wav"]),
                 "--far", str(ds / row["far_wav"]),
                 "--out", str(out), "--zero-mask"]) == EXIT_OK
    assert not read_wav(out).samples.any()


def test_infer_streaming_runs_and_pads_short_far(workspace, tmp_path):
    ds = workspace["dataset"]
    row = json.loads((ds / "manifest.jsonl").read_text().splitlines()[0])
    far = read_wav(ds / row["far_wav"]).samples
    short_far = tmp_path / "short_far.wav"
    write_wav(short_far, far[:len(far) // 2])
    out = tmp_path / "enh.wav"
    assert main(["infer", "--model", str(workspace["ckpt"]),
                 "--mic", str(ds / row["mic_wav"]), "--far", str(short_far),
                 "--out", str(out), "--streaming", "--chunk", "480"]) == EXIT_OK
    mic = read_wav(ds / row["mic_wav"]).samples
    assert read_wav(out).samples.shape == mic.shape


def test_infer_rejects_wrong_sample_rate(workspace, tmp_path):
    bad = tmp_path / "bad.wav"
    wavfile.write(bad, 16000, np.zeros(16000, dtype=np.float32))
    ds = workspace["dataset"]
    row = json.loads((ds / "manifest.jsonl").read_text().splitlines()[0])
    assert main(["infer", "--model", str(workspace["ckpt"]),
                 "--mic", str(bad), "--far", str(ds / row["far_wav"]),
                 "--out", str(tmp_path / "x.wav")]) == EXIT_DATA


def test_align_reports_injected_delay(tmp_path, capsys):
    rng = np.random.default_rng(0)
    far = noise_like(rng, 1.0)
    mic = np.zeros_like(far)
    mic[960:] = far[:-960]
    write_wav(tmp_path / "far.wav", far)
    write_wav(tmp_path / "mic.wav", mic)
    assert main(["align", "--mic", str(tmp_path / "mic.wav"),
                 "--far", str(tmp_path / "far.wav"),
                 "--max-delay", "2400", "--streaming",
                 "--out", str(tmp_path / "report.json")]) == EXIT_OK
    report = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert report["global"]["delay_samples"] == 960
    assert "streaming" in report
    assert json.loads((tmp_path / "report.json").read_text())["global"][
        "delay_samples"] == 960


@pytest.mark.filterwarnings("ignore:delay bucket")
def test_eval_and_sweep_pipeline(workspace, tmp_path, capsys):
    out = tmp_path / "eval"
    assert main(["eval", "--model", str(workspace["ckpt"]),
                 "--data", str(workspace["dataset"]),
                 "--out", str(out), "--mode", "FEST"]) == EXIT_OK
    eval_rows = [json.loads(l) for l in
                 (out / "eval.jsonl").read_text().splitlines()]
    assert len(eval_rows) == 2
    assert all(r["mode"] == "FEST" and r["erle_db"] is not None
               for r in eval_rows)
    assert (out / "erle_by_delay.csv").exists()

    capsys.readouterr()
    table_out = tmp_path / "sweep.csv"
    assert main(["sweep-delay", "--eval", str(out / "eval.jsonl"),
                 "--edges", "0,100,200,600",
                 "--out", str(table_out)]) == EXIT_OK
    printed = capsys.readouterr().out
    assert "mean ERLE" in printed
    assert table_out.exists()


def test_sweep_without_erle_rows_is_data_error(tmp_path):
    src = tmp_path / "eval.jsonl"
    src.write_text(json.dumps({"mode": "DT", "erle_db": None,
                               "true_delay_ms": 10.0}) + "\n")
    assert main(["sweep-delay", "--eval", str(src)]) == EXIT_DATA
