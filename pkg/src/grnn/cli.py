"""Command-line entry point: ``grnn {train,infer,eval,bench,analyze-features}``.

Results go to stdout or files, progress to stderr.  Failures print one line
``grnn: error: <code>: <message>`` and exit with the code's status.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import archive
from .cell import GrnnConfig, GrnnWeights, init_weights, sequence_forward, with_identity_ghosts
from .config import load_config
from .data import load_dataset, load_sequence_dir, parse_motion, save_frames, synth_clips
from .errors import (ConfigError, DataError, DimensionError, GrnnError, MalformedArchiveError,
                     NonFiniteError)
from .metrics import count_params_flops, feature_similarity, score_dataset
from .train import train_loop

log = logging.getLogger("grnn")

EXIT_CODES = {
    "error": 1, "usage": 2, "missing-file": 3, MalformedArchiveError.code: 4,
    ConfigError.code: 5, DataError.code: 6, DimensionError.code: 7, NonFiniteError.code: 8,
}
EVAL_HEADER = ("sequence", "frames", "psnr", "ssim")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _thread_limit():
    n = int(os.environ.get("GRNN_THREADS", "0") or 0)
    if n <= 0:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def _fmt_psnr(v):
    return "∞" if math.isinf(v) else f"{v:.2f}"


def _load_weights(path):
    named = archive.load(path)
    try:
        cfg = GrnnConfig.from_named(named)
        weights = GrnnWeights.from_named(named, cfg)
        weights.check(cfg)
    except (ValueError, KeyError) as exc:
        raise MalformedArchiveError(f"{path}: not a GRNN weight set ({exc})") from None
    return weights, cfg


# -- subcommands -------------------------------------------------------------

def cmd_train(args):
    run = load_config(args.config)
    cfg, tcfg, dcfg = run.model, run.train, run.data
    data_dir = args.data or (None if args.synth else dcfg.data_dir or None)
    if data_dir:
        clips = list(load_dataset(data_dir).values())
    else:
        clips = synth_clips(dcfg.synth_clips, dcfg.synth_frames, dcfg.synth_size, dcfg.synth_kind,
                            parse_motion(dcfg.synth_motion), dcfg.synth_seed, cfg.scale)
    val = None
    if dcfg.val_dir:
        val = load_dataset(dcfg.val_dir)
    elif dcfg.val_clips:
        val = {f"val{i:03d}": c for i, c in enumerate(
            synth_clips(dcfg.val_clips, dcfg.synth_frames, dcfg.synth_size, dcfg.synth_kind,
                        parse_motion(dcfg.synth_motion), dcfg.val_seed, cfg.scale))}

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    ckpt_dir = Path(args.checkpoint_dir) if args.checkpoint_dir else out.with_name(out.name + ".ckpt")
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    log_path = Path(args.log) if args.log else out.with_name(out.name + ".log.jsonl")

    with open(log_path, "w") as lf:
        def on_record(rec):
            lf.write(json.dumps(rec) + "\n")

        def on_epoch(epoch, w):
            archive.save(ckpt_dir / f"epoch_{epoch + 1:04d}.grnn", w.named())

        result = train_loop(init_weights(cfg, run.init_seed), cfg, clips, tcfg, val=val,
                            steps=args.steps, on_epoch=on_epoch, on_record=on_record)
    archive.save(out, result.weights.named())
    last = result.log[-1] if result.log else None
    print(f"wrote {out} ({len(result.log)} steps"
          + (f", final loss {last['loss']:.5f})" if last else ")"))


def _input_sequences(path):
    path = Path(path)
    if not path.is_dir():
        raise FileNotFoundError(f"no such input directory: {path}")
    if any(p.suffix.lower() == ".png" for p in path.iterdir()):
        return {None: load_sequence_dir(path, role="LR")}
    return load_dataset(path, role="LR")


def cmd_infer(args):
    weights, cfg = _load_weights(args.weights)
    if cfg.scale != args.scale:
        raise ConfigError(f"--scale {args.scale} does not match the archive's scale {cfg.scale}")
    for name, seq in _input_sequences(args.input).items():
        sr = sequence_forward(seq, weights, cfg)
        dest = Path(args.output) if name is None else Path(args.output) / name
        save_frames(sr, dest)
        print(f"{dest}: {len(sr)} frames {sr.shape[3]}x{sr.shape[2]}")


def cmd_eval(args):
    pred = load_dataset(args.pred)
    gt = load_dataset(args.gt)
    if len(pred) == 1 and len(gt) == 1:
        (ps,), ((gn, gs),) = pred.values(), gt.items()
        pairs = {gn: (ps.frames, gs.frames)}
    else:
        missing = sorted(set(gt) - set(pred))
        if missing:
            raise DataError(f"no predictions for sequences: {', '.join(missing)}")
        pairs = {n: (pred[n].frames, gt[n].frames) for n in gt}
    for n, (p, g) in pairs.items():
        if len(p) != len(g):
            raise DataError(f"{n}: {len(p)} predicted frames vs {len(g)} reference frames")
    report = score_dataset(pairs, args.skip_first, args.crop_border)

    width = max([len("Average")] + [len(n) for n in pairs])
    print(f"{'sequence':<{width}}  PSNR/SSIM")
    counts = {n: max(len(g) - args.skip_first, 0) for n, (_, g) in pairs.items()}
    for n, (p, s) in report.rows.items():
        print(f"{n:<{width}}  {_fmt_psnr(p)}/{s:.4f}")
    print(f"{'Average':<{width}}  {_fmt_psnr(report.mean_psnr)}/{report.mean_ssim:.4f}")

    csv_path = Path(args.csv) if args.csv else Path(args.pred) / "metrics.csv"
    with open(csv_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(EVAL_HEADER)
        for n, (p, s) in report.rows.items():
            w.writerow([n, counts[n], f"{p:.6f}", f"{s:.6f}"])
        w.writerow(["average", sum(counts.values()), f"{report.mean_psnr:.6f}",
                    f"{report.mean_ssim:.6f}"])
    log.info("wrote %s", csv_path)


def _parse_hw(text):
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise UsageError(f"--hw expects HxW, got {text!r}") from None
    if h < 1 or w < 1:
        raise UsageError(f"--hw dimensions must be positive, got {text!r}")
    return h, w


def cmd_bench(args):
    cfg = load_config(args.config).model
    h, w = _parse_hw(args.hw)
    rep = count_params_flops(cfg, h, w)
    print(f"{'layer':<18}{'kind':<7}{'params':>12}{'MACs':>16}{'plain params':>14}{'plain MACs':>16}")
    for l in rep.layers:
        print(f"{l.name:<18}{l.kind:<7}{l.params:>12}{l.macs:>16}{l.plain_params:>14}"
              f"{l.plain_macs:>16}")
    print(f"{'total':<25}{rep.params:>12}{rep.macs:>16}{rep.plain_params:>14}{rep.plain_macs:>16}")
    print(f"param ratio {rep.param_ratio:.3f}")
    print(f"MAC ratio {rep.mac_ratio:.3f}")


def cmd_analyze(args):
    weights, cfg = _load_weights(args.weights)
    if args.identity_ghosts:
        weights = with_identity_ghosts(weights, cfg)
    seq = load_sequence_dir(args.input, role="LR")
    k = len(seq) - 1 if args.frame is None else args.frame
    if not 0 <= k < len(seq):
        raise DataError(f"--frame {k} out of range for {len(seq)} frames")
    taps = []
    sequence_forward(seq.frames[:k + 1], weights, cfg, taps=taps)
    if args.layer not in taps[k]:
        raise UsageError(f"unknown layer {args.layer!r}; choose from {', '.join(taps[k])}")
    summary = feature_similarity(taps[k][args.layer], args.threshold, args.top_k)
    c = summary.matrix.shape[0]
    print(f"layer {args.layer} frame {k}: {c} channels")
    print(f"pairs with |cos| > {args.threshold}: {summary.pairs_above} "
          f"({summary.fraction_above:.4f} of {c * (c - 1) // 2})")
    if summary.zero_variance:
        print(f"zero-variance channels: {summary.zero_variance}")
    for i, j, v in summary.top_pairs:
        print(f"  {i:4d} {j:4d}  {v:+.6f}")
    csv_path = Path(args.csv) if args.csv else Path(f"similarity_{args.layer}.csv")
    np.savetxt(csv_path, summary.matrix, delimiter=",", fmt="%.8f")
    log.info("wrote %s", csv_path)


# -- wiring ------------------------------------------------------------------

def build_parser():
    p = _Parser(prog="grnn", description="Ghost-feature recurrent video super-resolution.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config", required=True)
    src = t.add_mutually_exclusive_group()
    src.add_argument("--data", help="HR dataset root (<root>/<sequence>/<frame>.png)")
    src.add_argument("--synth", action="store_true", help="train on synthetic clips")
    t.add_argument("--out", required=True, help="final weight archive")
    t.add_argument("--checkpoint-dir", help="per-epoch archives (default <out>.ckpt/)")
    t.add_argument("--log", help="line-delimited JSON log (default <out>.log.jsonl)")
    t.add_argument("--steps", type=int, help="stop after this many steps")
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("infer", help="super-resolve LR frame directories")
    i.add_argument("--weights", required=True)
    i.add_argument("--input", required=True)
    i.add_argument("--output", required=True)
    i.add_argument("--scale", type=int, choices=(2, 4), required=True)
    i.set_defaults(func=cmd_infer)

    e = sub.add_parser("eval", help="PSNR/SSIM table for predicted vs reference frames")
    e.add_argument("--pred", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--skip-first", type=int, default=0)
    e.add_argument("--crop-border", type=int, default=0)
    e.add_argument("--csv", help="CSV output (default <pred>/metrics.csv)")
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", help="parameter and MAC report")
    b.add_argument("--config", required=True)
    b.add_argument("--hw", required=True, help="LR frame size HxW")
    b.set_defaults(func=cmd_bench)

    a = sub.add_parser("analyze-features", help="channel similarity of one layer's features")
    a.add_argument("--weights", required=True)
    a.add_argument("--input", required=True)
    a.add_argument("--layer", required=True, help="fusion, trunk.<i>, trunk or hidden")
    a.add_argument("--frame", type=int, help="time step to analyze (default last)")
    a.add_argument("--threshold", type=float, default=0.9)
    a.add_argument("--top-k", type=int, default=10)
    a.add_argument("--identity-ghosts", action="store_true",
                   help="replace fusion cheap operations with exact copies")
    a.add_argument("--csv", help="similarity matrix CSV (default similarity_<layer>.csv)")
    a.set_defaults(func=cmd_analyze)
    return p


def _fail(code, message):
    message = " ".join(str(message).split())
    print(f"grnn: error: {code}: {message}", file=sys.stderr)
    return EXIT_CODES.get(code, 1)


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail("usage", exc)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(asctime)s %(name)s %(message)s")
    started = time.perf_counter()
    try:
        with _thread_limit():
            args.func(args)
    except UsageError as exc:
        return _fail("usage", exc)
    except FileNotFoundError as exc:
        return _fail("missing-file", exc)
    except GrnnError as exc:
        # data subclasses keep their own code but share the data exit status
        family = exc.code if exc.code in EXIT_CODES else (
            DataError.code if isinstance(exc, DataError) else "error")
        _fail(exc.code, exc)
        return EXIT_CODES[family]
    except (ValueError, OSError) as exc:
        return _fail("error", exc)
    log.debug("done in %.2fs", time.perf_counter() - started)
    return 0


if __name__ == "__main__":
    sys.exit(main())
