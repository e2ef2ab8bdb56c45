"""Command line front end: one binary, subcommands for each pipeline stage.

Options resolve in three layers: built-in defaults, then a JSON config file
(--config), then explicit flags; later layers win.  Every run that produces
artifacts writes the fully resolved options next to them, so an output
directory is self-describing.

Exit codes: 0 success, 1 usage or configuration, 2 bad or missing data,
3 numerical failure.
"""

import argparse
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from .audio_io import read_wav, write_wav
from .augment import augment_dataset, load_clip_triple, load_manifest, make_corpus
from .checkpoint import load_model
from .dsp import SAMPLE_RATE
from .errors import ConfigError, DataError, NumericalError
from .gcc import GccConfig, StreamingGcc, global_gcc_delay
from .loss import aec_loss
from .metrics import (DEFAULT_SWEEP_EDGES_MS, MetricReport, delay_sweep, erle,
                      write_csv, write_jsonl)
from .network import ModelConfig, ScaCrnModel, param_count
from .streaming import enhance_offline, enhance_streaming
from .tensor import Tensor
from .train import TrainConfig, train_model

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as ConfigError (exit code 1)."""

    def error(self, message):
        raise ConfigError(message)


def _load_config_file(path):
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(p, encoding="utf-8") as f:
            cfg = json.load(f)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}")
    if not isinstance(cfg, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return cfg


def _merge(defaults, file_cfg, flags):
    """defaults <- config file <- flags; unknown file keys are an error."""
    out = dict(defaults)
    for key, val in file_cfg.items():
        if key not in defaults:
            raise ConfigError(f"unknown config key {key!r} "
                              f"(expected one of {sorted(defaults)})")
        out[key] = val
    for key, val in flags.items():
        if val is not None:
            out[key] = val
    return out


def _write_resolved(where, resolved):
    where = Path(where)
    path = where / "resolved_config.json" if where.is_dir() \
        else where.parent / (where.name + ".config.json")
    with open(path, "w", encoding="utf-8") as f:
        json.dump(resolved, f, sort_keys=True, indent=1)
        f.write("\n")


def _parse_lookahead(text):
    if text is None:
        return None
    if str(text).lower() in ("none", "inf", "unlimited"):
        return "unlimited"
    return int(text)


def _model_config(file_cfg, args):
    base = ModelConfig().to_dict()
    merged = _merge(base, file_cfg, {
        "d": args.d,
        "n_heads": getattr(args, "heads", None),
        "attention": getattr(args, "attention", None),
    })
    look = _parse_lookahead(getattr(args, "lookahead", None))
    if look is not None:
        merged["lookahead"] = None if look == "unlimited" else look
    return ModelConfig.from_dict(merged), merged


# -- subcommands -------------------------------------------------------------

def cmd_make_testdata(args):
    cfg = _merge({"count": 8, "seconds": 4.0, "seed": 0},
                 _load_config_file(args.config),
                 {"count": args.count, "seconds": args.seconds,
                  "seed": args.seed})
    out = Path(args.out)
    rows = make_corpus(out, cfg["count"], cfg["seconds"], cfg["seed"])
    _write_resolved(out, {"command": "make-testdata", **cfg})
    print(f"wrote {len(rows)} source conversations under {out}")
    return EXIT_OK


def cmd_augment(args):
    cfg = _merge({"count": 8, "seed": 0, "threads": None, "overrides": None},
                 _load_config_file(args.config),
                 {"count": args.count, "seed": args.seed,
                  "threads": args.threads})
    out = Path(args.out)
    rows, errors = augment_dataset(args.manifest, out, cfg["count"],
                                   cfg["seed"], threads=cfg["threads"],
                                   overrides=cfg["overrides"])
    _write_resolved(out, {"command": "augment", "manifest": str(args.manifest),
                          **cfg})
    print(f"rendered {len(rows)} clips ({len(rows) // 3} conversations) "
          f"under {out}")
    if errors:
        print(f"warning: {len(errors)} conversations failed; "
              f"see {out / 'errors.jsonl'}", file=sys.stderr)
        if not rows:
            raise DataError("every conversation failed to render")
    return EXIT_OK


def cmd_train(args):
    file_cfg = _load_config_file(args.config)
    model_cfg, model_dict = _model_config(file_cfg.get("model", {}), args)
    train_defaults = TrainConfig().to_dict()
    train_dict = _merge(train_defaults, file_cfg.get("train", {}),
                        {"epochs": args.epochs, "batch_size": args.batch_size,
                         "lr": args.lr, "seed": args.seed})
    unknown = set(file_cfg) - {"model", "train"}
    if unknown:
        raise ConfigError(f"unknown config sections {sorted(unknown)}")

    train_cfg = TrainConfig(
        epochs=int(train_dict["epochs"]),
        batch_size=int(train_dict["batch_size"]), lr=float(train_dict["lr"]),
        betas=tuple(train_dict["betas"]), eps=float(train_dict["eps"]),
        clip_norm=train_dict["clip_norm"], seed=int(train_dict["seed"]))

    rows = load_manifest(args.data, mode=args.mode)
    val_rows = load_manifest(args.val_data, mode=args.mode) \
        if args.val_data else None

    if args.resume:
        model, _, _ = load_model(args.resume)
        resume = args.resume
    else:
        model = ScaCrnModel(model_cfg, seed=train_cfg.seed)
        resume = None

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_resolved(out, {
        "command": "train", "model": model_dict, "train": train_dict,
        "data": str(args.data),
        "val_data": str(args.val_data) if args.val_data else None,
        "mode": args.mode, "resume": str(resume) if resume else None,
    })
    print(f"training {param_count(model)} parameters "
          f"({model.config.attention} attention) on {len(rows)} clips")
    curve = train_model(model, args.data, rows, out, cfg=train_cfg,
                        val_rows=val_rows, resume=resume, log=print)
    print(f"done; best checkpoint at {out / 'best.ckpt'}")
    return EXIT_OK if curve else EXIT_DATA


def _run_model(model, mic, far, streaming, chunk, zero_mask):
    if streaming:
        return enhance_streaming(model, mic, far, chunk=chunk,
                                 zero_mask=zero_mask)
    return enhance_offline(model, mic, far, zero_mask=zero_mask)


def cmd_infer(args):
    model, _, _ = load_model(args.model)
    look = _parse_lookahead(args.lookahead)
    if look is not None:
        model.config.lookahead = None if look == "unlimited" else look
    mic = read_wav(args.mic).samples
    far = read_wav(args.far).samples
    if far.shape[0] < mic.shape[0]:
        print(f"warning: far-end is {mic.shape[0] - far.shape[0]} samples "
              "short; zero padding", file=sys.stderr)
        far = np.concatenate([far, np.zeros(mic.shape[0] - far.shape[0])])
    elif far.shape[0] > mic.shape[0]:
        far = far[:mic.shape[0]]

    out = _run_model(model, mic, far, args.streaming, args.chunk,
                     args.zero_mask)
    if out.shape[0] < mic.shape[0]:          # tail the analysis grid dropped
        out = np.concatenate([out, np.zeros(mic.shape[0] - out.shape[0])])
    write_wav(args.out, out)
    _write_resolved(Path(args.out), {
        "command": "infer", "model": str(args.model),
        "mode": "streaming" if args.streaming else "offline",
        "chunk": args.chunk if args.streaming else None,
        "lookahead": model.config.to_dict()["lookahead"],
        "zero_mask": bool(args.zero_mask),
    })
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_align(args):
    mic = read_wav(args.mic).samples
    far = read_wav(args.far).samples
    n = min(mic.shape[0], far.shape[0])
    cfg = GccConfig(block_len=args.block, max_delay=args.max_delay)
    report = {}

    est = global_gcc_delay(mic[:n], far[:n], cfg)
    report["global"] = {"delay_samples": est.delay_samples,
                        "delay_ms": est.delay_ms,
                        "confidence": est.confidence}
    if args.streaming:
        state = StreamingGcc(cfg)
        for k in range(0, n, cfg.block_len):
            est = state.push(mic[k:k + cfg.block_len], far[k:k + cfg.block_len])
        report["streaming"] = {"delay_samples": est.delay_samples,
                               "delay_ms": est.delay_ms,
                               "confidence": est.confidence,
                               "blocks": state.blocks_seen}
    line = json.dumps(report, sort_keys=True)
    print(line)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(line + "\n")
    return EXIT_OK


def cmd_eval(args):
    model, _, _ = load_model(args.model)
    rows = load_manifest(args.data, mode=args.mode)
    if not rows:
        raise DataError(f"no clips with mode {args.mode!r} under {args.data}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    reports = []
    for row in rows:
        try:
            clip_id = f"{row['index']:05d}_{row['mode']}"
            mode = row["mode"]
            delay_ms = float(row["true_delay_ms"])
            non_causal = bool(row["non_causal"])
        except KeyError as exc:
            warnings.warn(f"manifest row lacks {exc}; skipped")
            continue
        far, mic, target = load_clip_triple(args.data, row)
        enh = _run_model(model, mic, far, args.streaming, args.chunk, False)
        m = enh.shape[0]
        _, terms = aec_loss(Tensor(enh), target[:m], stft_cfg=model.config.stft)
        erle_db = erle(mic[:m], enh) if mode == "FEST" else None
        reports.append(MetricReport(clip_id, mode, delay_ms, erle_db,
                                    non_causal, terms))

    write_jsonl(out / "eval.jsonl", [r.to_row() for r in reports])
    fest = [(r.true_delay_ms, r.erle_db) for r in reports
            if r.erle_db is not None]
    if fest:
        table = delay_sweep(fest)
        write_csv(out / "erle_by_delay.csv", table)
        mean = sum(e for _, e in fest) / len(fest)
        print(f"FEST mean ERLE {mean:.2f} dB over {len(fest)} clips")
    _write_resolved(out, {
        "command": "eval", "model": str(args.model), "data": str(args.data),
        "mode": args.mode,
        "inference": "streaming" if args.streaming else "offline",
        "chunk": args.chunk if args.streaming else None,
    })
    print(f"wrote {out / 'eval.jsonl'}")
    return EXIT_OK


def cmd_sweep_delay(args):
    edges = ([float(e) for e in args.edges.split(",")] if args.edges
             else list(DEFAULT_SWEEP_EDGES_MS))
    entries = []
    with open(args.eval, encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            row = json.loads(line)
            if row.get("erle_db") is not None:
                entries.append((row["true_delay_ms"], row["erle_db"]))
    if not entries:
        raise DataError(f"{args.eval} holds no rows with an ERLE value")
    table = delay_sweep(entries, edges)
    for row in table:
        print(f"[{row['delay_lo_ms']:6.1f}, {row['delay_hi_ms']:6.1f}) ms  "
              f"n={row['count']:4d}  mean ERLE {row['mean_erle_db']:7.2f} dB")
    if args.out:
        write_csv(args.out, table)
        print(f"wrote {args.out}")
    return EXIT_OK


# -- parser ------------------------------------------------------------------

def build_parser():
    parser = _Parser(prog="sca-aec",
                     description="Streaming cross-attention echo cancellation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-testdata", help="synthesize a source corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int)
    p.add_argument("--seconds", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--config")
    p.set_defaults(func=cmd_make_testdata)

    p = sub.add_parser("augment", help="render scenarios from a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--config")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("train", help="fit a model on a rendered dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--val-data")
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=("FEST", "NEST", "DT"))
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--lookahead")
    p.add_argument("--attention", choices=("sca", "none"))
    p.add_argument("--resume")
    p.add_argument("--config")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="enhance one clip with a checkpoint")
    p.add_argument("--model", required=True)
    p.add_argument("--mic", required=True)
    p.add_argument("--far", required=True)
    p.add_argument("--out", required=True)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--streaming", action="store_true")
    group.add_argument("--offline", dest="streaming", action="store_false")
    p.set_defaults(streaming=False)
    p.add_argument("--chunk", type=int, default=480)
    p.add_argument("--lookahead")
    p.add_argument("--zero-mask", action="store_true",
                   help="debug: output with the mask forced to zero")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("align", help="estimate far-end delay")
    p.add_argument("--mic", required=True)
    p.add_argument("--far", required=True)
    p.add_argument("--streaming", action="store_true")
    p.add_argument("--block", type=int, default=4096)
    p.add_argument("--max-delay", type=int, default=28800)
    p.add_argument("--out")
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("eval", help="score a checkpoint on a rendered dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=("FEST", "NEST", "DT"))
    group = p.add_mutually_exclusive_group()
    group.add_argument("--streaming", action="store_true")
    group.add_argument("--offline", dest="streaming", action="store_false")
    p.set_defaults(streaming=False)
    p.add_argument("--chunk", type=int, default=480)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep-delay", help="bucket eval ERLE by true delay")
    p.add_argument("--eval", required=True, help="eval.jsonl from `eval`")
    p.add_argument("--edges", help="comma separated bucket edges in ms")
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep_delay)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except ConfigError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:       # --help
        return int(exc.code or 0)
    try:
        return args.func(args) or EXIT_OK
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
