"""Checkpoint format tests: byte stability, strict restore, corruption."""

import struct

import numpy as np
import pytest

from sca_aec.checkpoint import (FORMAT_VERSION, MAGIC, load_checkpoint,
                                load_model, model_blobs, optim_blobs_from,
                                restore_model, save_checkpoint, save_model)
from sca_aec.dsp import StftConfig
from sca_aec.errors import DataError
from sca_aec.network import ModelConfig, ScaCrnModel


def toy_model(seed=0):
    cfg = ModelConfig(d=16, n_heads=2, lookahead=0, lstm_hidden=16,
                      stft=StftConfig())
    return ScaCrnModel(cfg, seed=seed)


def test_save_load_round_trip_bit_exact(tmp_path):
    path = tmp_path / "x.ckpt"
    rng = np.random.default_rng(0)
    blobs = {"a.w": rng.standard_normal((3, 4)),
             "b": rng.standard_normal(7).astype(np.float32),
             "empty": np.zeros((0, 2))}
    config = {"d": 16, "note": "round trip"}
    extra = {"epoch": 3}
    save_checkpoint(path, config, blobs, extra)
    config2, blobs2, extra2 = load_checkpoint(path)
    assert config2 == config and extra2 == extra
    assert set(blobs2) == set(blobs)
    for name in blobs:
        assert blobs2[name].dtype == blobs[name].dtype
        assert np.array_equal(blobs2[name], blobs[name])


def test_identical_state_serializes_identically(tmp_path):
    blobs = {"w": np.arange(6.0).reshape(2, 3)}
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(p1, {"k": 1}, blobs, {"e": 2})
    save_checkpoint(p2, {"k": 1}, {"w": blobs["w"].copy()}, {"e": 2})
    assert p1.read_bytes() == p2.read_bytes()


def test_magic_and_version_in_header(tmp_path):
    path = tmp_path / "x.ckpt"
    save_checkpoint(path, {}, {"w": np.zeros(1)})
    raw = path.read_bytes()
    assert raw.startswith(MAGIC)
    header_len, = struct.unpack("<I", raw[8:12])
    header = raw[12:12 + header_len].decode("utf-8")
    assert f'"format_version":{FORMAT_VERSION}' in header


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "x.ckpt"
    save_checkpoint(path, {}, {"w": np.zeros(1)})
    raw = bytearray(path.read_bytes())
    raw[0] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(DataError, match="magic"):
        load_checkpoint(path)


def test_truncated_file_rejected(tmp_path):
    path = tmp_path / "x.ckpt"
    save_checkpoint(path, {}, {"w": np.zeros(100)})
    raw = path.read_bytes()
    path.write_bytes(raw[:len(raw) - 10])
    with pytest.raises(DataError, match="truncated"):
        load_checkpoint(path)


def test_trailing_bytes_rejected(tmp_path):
    path = tmp_path / "x.ckpt"
    save_checkpoint(path, {}, {"w": np.zeros(2)})
    path.write_bytes(path.read_bytes() + b"\x00")
    with pytest.raises(DataError, match="trailing"):
        load_checkpoint(path)


def test_unsupported_dtype_rejected(tmp_path):
    with pytest.raises(DataError, match="dtype"):
        save_checkpoint(tmp_path / "x.ckpt", {}, {"w": np.zeros(2, dtype=np.int32)})


def test_unknown_format_version_rejected(tmp_path):
    import json
    path = tmp_path / "x.ckpt"
    header = json.dumps({"format_version": 99, "config": {}, "extra": {}},
                        sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        f.write(struct.pack("<I", 0))
    with pytest.raises(DataError, match="version"):
        load_checkpoint(path)


def test_model_round_trip_restores_forward_behaviour(tmp_path):
    model = toy_model(seed=1)
    path = tmp_path / "m.ckpt"
    save_model(path, model, extra={"epoch": 0})
    model2, blobs, extra = load_model(path)
    assert extra == {"epoch": 0}
    assert model2.config.to_dict() == model.config.to_dict()
    for (n1, p1), (n2, p2) in zip(model.named_parameters(),
                                  model2.named_parameters()):
        assert n1 == n2
        assert np.array_equal(p1.data, p2.data)
    for (n1, b1), (n2, b2) in zip(model.named_buffers(),
                                  model2.named_buffers()):
        assert n1 == n2
        assert np.array_equal(b1, b2)


def test_restore_rejects_missing_and_unexpected_names(tmp_path):
    model = toy_model()
    blobs = model_blobs(model)
    first = next(iter(blobs))
    broken = {k: v for k, v in blobs.items() if k != first}
    with pytest.raises(DataError, match="missing"):
        restore_model(model, broken)
    extra_blob = dict(blobs)
    extra_blob["bogus.w"] = np.zeros(3)
    with pytest.raises(DataError, match="unexpected"):
        restore_model(model, extra_blob)


def test_restore_rejects_shape_mismatch():
    model = toy_model()
    blobs = {k: v.copy() for k, v in model_blobs(model).items()}
    name = next(iter(blobs))
    blobs[name] = np.zeros(np.asarray(blobs[name]).size + 1)
    with pytest.raises(DataError, match="shape"):
        restore_model(model, blobs)


def test_optimizer_blobs_ride_under_prefix(tmp_path):
    model = toy_model()
    path = tmp_path / "m.ckpt"
    optim = {"t": np.array([3.0]), "m.out_proj.w": np.zeros(2)}
    save_model(path, model, optim_blobs=optim)
    _, blobs, _ = load_checkpoint(path)
    assert "optim.t" in blobs and "optim.m.out_proj.w" in blobs
    back = optim_blobs_from(blobs)
    assert np.array_equal(back["t"], optim["t"])
    # restore ignores the optimizer namespace entirely
    restore_model(model, blobs)


def test_float32_blobs_preserved(tmp_path):
    path = tmp_path / "x.ckpt"
    arr = np.array([1.5, -2.25], dtype=np.float32)
    save_checkpoint(path, {}, {"f32": arr})
    _, blobs, _ = load_checkpoint(path)
    assert blobs["f32"].dtype == np.float32
    assert np.array_equal(blobs["f32"], arr)
