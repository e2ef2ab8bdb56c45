"""Single-file binary checkpoints: versioned JSON header + named array blobs.

Layout (all integers little-endian, documented in docs/checkpoint_format.md):

    magic "SCAAECV1" | u32 header_len | header JSON (utf-8)
    u32 blob_count
    per blob: u16 name_len | name utf-8 | u8 dtype_code | u8 ndim
              | ndim * u64 dims | raw C-order little-endian data

The header JSON carries {"format_version", "config", "extra"} with sorted
keys and no whitespace, so identical state serializes to identical bytes.
"""

import json
import struct

import numpy as np

from .errors import DataError

MAGIC = b"SCAAECV1"
FORMAT_VERSION = 1

_CODE_TO_DTYPE = {0: np.dtype("<f8"), 1: np.dtype("<f4")}
_DTYPE_TO_CODE = {np.dtype(np.float64): 0, np.dtype(np.float32): 1}

OPTIM_PREFIX = "optim."


def save_checkpoint(path, config, blobs, extra=None):
    """Write config plus name->array blobs; insertion order is preserved."""
    header = json.dumps(
        {"format_version": FORMAT_VERSION, "config": config, "extra": extra or {}},
        sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        f.write(struct.pack("<I", len(blobs)))
        for name, arr in blobs.items():
            arr = np.asarray(arr)
            if arr.dtype not in _DTYPE_TO_CODE:
                raise DataError(f"blob {name!r} has unsupported dtype {arr.dtype}")
            encoded = name.encode("utf-8")
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<BB", _DTYPE_TO_CODE[arr.dtype], arr.ndim))
            for dim in arr.shape:
                f.write(struct.pack("<Q", dim))
            f.write(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes(order="C"))


def _read_exact(f, n, what):
    buf = f.read(n)
    if len(buf) != n:
        raise DataError(f"truncated checkpoint while reading {what}")
    return buf


def load_checkpoint(path):
    """Read a checkpoint back as (config, blobs, extra); bit-exact arrays."""
    with open(path, "rb") as f:
        if _read_exact(f, len(MAGIC), "magic") != MAGIC:
            raise DataError("not a checkpoint file (bad magic)")
        header_len, = struct.unpack("<I", _read_exact(f, 4, "header length"))
        header = json.loads(_read_exact(f, header_len, "header").decode("utf-8"))
        if header.get("format_version") != FORMAT_VERSION:
            raise DataError(
                f"unsupported checkpoint format version {header.get('format_version')}")
        count, = struct.unpack("<I", _read_exact(f, 4, "blob count"))
        blobs = {}
        for _ in range(count):
            name_len, = struct.unpack("<H", _read_exact(f, 2, "name length"))
            name = _read_exact(f, name_len, "blob name").decode("utf-8")
            code, ndim = struct.unpack("<BB", _read_exact(f, 2, "blob header"))
            if code not in _CODE_TO_DTYPE:
                raise DataError(f"blob {name!r} has unknown dtype code {code}")
            dtype = _CODE_TO_DTYPE[code]
            shape = tuple(
                struct.unpack("<Q", _read_exact(f, 8, "blob dims"))[0]
                for _ in range(ndim))
            n_bytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
            data = np.frombuffer(_read_exact(f, n_bytes, f"blob {name!r}"), dtype=dtype)
            blobs[name] = data.reshape(shape).astype(dtype.newbyteorder("="))
        if f.read(1):
            raise DataError("trailing bytes after final blob")
    return header["config"], blobs, header["extra"]


def model_blobs(model):
    """Parameters then buffers, in the model's declared order."""
    blobs = {}
    for name, p in model.named_parameters():
        blobs[name] = p.data
    for name, buf in model.named_buffers():
        blobs[name] = buf
    return blobs


def save_model(path, model, extra=None, optim_blobs=None):
    blobs = model_blobs(model)
    if optim_blobs:
        for name, arr in optim_blobs.items():
            blobs[OPTIM_PREFIX + name] = arr
    save_checkpoint(path, model.config.to_dict(), blobs, extra)


def restore_model(model, blobs):
    """Copy blob values into the model in place; names and shapes must match.

    Blobs under the ``optim.`` prefix are the optimizer's business and are
    ignored here; anything else unmatched is an error in either direction.
    """
    expected = model_blobs(model)
    model_names = set(expected)
    file_names = {n for n in blobs if not n.startswith(OPTIM_PREFIX)}
    missing = sorted(model_names - file_names)
    extra_names = sorted(file_names - model_names)
    if missing or extra_names:
        raise DataError(
            f"checkpoint/model mismatch: missing {missing}, unexpected {extra_names}")
    params = dict(model.named_parameters())
    buffers = dict(model.named_buffers())
    for name in expected:
        src = blobs[name]
        dst = params[name].data if name in params else buffers[name]
        if src.shape != dst.shape:
            raise DataError(
                f"blob {name!r} shape {src.shape} does not match model {dst.shape}")
        dst[...] = src


def optim_blobs_from(blobs):
    return {n[len(OPTIM_PREFIX):]: a for n, a in blobs.items()
            if n.startswith(OPTIM_PREFIX)}


def load_model(path):
    """Rebuild a model from a checkpoint; returns (model, blobs, extra)."""
    from .network import ModelConfig, ScaCrnModel
    config, blobs, extra = load_checkpoint(path)
    model = ScaCrnModel(ModelConfig.from_dict(config))
    restore_model(model, blobs)
    return model, blobs, extra
