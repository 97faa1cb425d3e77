"""Command-line front end.

    olc encode --input cloud.ply --output cloud.olc --depth 10 --steps 6
    olc decode --input cloud.olc --output rec.ply
    olc eval --ref cloud.ply --test rec.ply
    olc rd-sweep --input cloud.ply --depth 8 --steps 0..8
    olc rc-calibrate --input a.ply b.ply --depths 10..11 --output anchors.csv
    olc rc-encode --input c.ply --target-bpp 6.5 --anchors anchors.csv --output c.olc
    olc train --head leafpredict --input a.ply b.ply --depth 7 --output lp.olcw

Results go to stdout as CSV, diagnostics to stderr.  Exit codes: 0 ok,
1 runtime error, 2 usage error, 3 corrupt or mismatched input data.

Settings resolve as command-line flag, then environment (``OLC_JOBS``,
``OLC_MODEL_DIR``), then the JSON file given by ``--config``, then the
built-in default.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from olc.errors import ChecksumMismatchError, CorruptionError, FormatError, OlcError

log = logging.getLogger("olc")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, EXIT_CORRUPT = 0, 1, 2, 3

DEFAULTS = {"jobs": 1, "model_dir": "", "models": [], "checkerboard": True}
ENV = {"jobs": ("OLC_JOBS", int), "model_dir": ("OLC_MODEL_DIR", str)}


class UsageError(Exception):
    pass


def _steps(text: str) -> int:
    try:
        s = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid step count {text!r}")
    if not 0 <= s <= 8:
        raise argparse.ArgumentTypeError(f"steps must lie in [0, 8], got {s}")
    return s


def _int_list(text: str) -> list[int]:
    """``"0..8"``, ``"2,4,6"`` or a single integer."""
    try:
        if ".." in text:
            lo, hi = text.split("..")
            out = list(range(int(lo), int(hi) + 1))
        else:
            out = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected N..M or a comma list, got {text!r}")
    if not out:
        raise argparse.ArgumentTypeError(f"empty list {text!r}")
    return out


def _step_list(text: str) -> list[int]:
    vals = _int_list(text)
    for v in vals:
        _steps(str(v))
    return vals


def _positive(kind):
    def parse(text):
        v = kind(text)
        if not v > 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return v

    return parse


def resolve_settings(args: argparse.Namespace, environ=None) -> dict:
    """Merge flags > env > config file > defaults."""
    environ = os.environ if environ is None else environ
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        try:
            data = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as e:
            raise UsageError(f"config file {args.config}: {e}")
        unknown = set(data) - set(DEFAULTS)
        if unknown:
            raise UsageError(f"config file {args.config}: unknown keys {sorted(unknown)}")
        cfg.update(data)
    for key, (name, kind) in ENV.items():
        if name in environ and environ[name] != "":
            try:
                cfg[key] = kind(environ[name])
            except ValueError:
                raise UsageError(f"{name}={environ[name]!r} is not a valid {kind.__name__}")
    for key in DEFAULTS:
        val = getattr(args, key, None)
        if val is not None and val != []:
            cfg[key] = val
    if int(cfg["jobs"]) < 1:
        raise UsageError("jobs must be >= 1")
    cfg["jobs"] = int(cfg["jobs"])
    return cfg


def _model_path(name: str, model_dir: str) -> Path:
    p = Path(name)
    if not p.exists() and model_dir and not p.is_absolute():
        alt = Path(model_dir) / p
        if alt.exists():
            return alt
    return p


def load_models(paths, model_dir: str = ""):
    """Assign checkpoints to coding roles by their trained heads.

    A checkpoint without any trained head fills every role not taken by
    another checkpoint.
    """
    from olc.codec import ModelSet
    from olc.context import load_checkpoint

    ms = ModelSet()
    fallback = None
    for name in paths or []:
        model = load_checkpoint(_model_path(name, model_dir))
        heads = model.config.trained_heads
        if not heads:
            fallback = model
        for head in heads:
            if getattr(ms, head) is not None:
                log.warning("role %s given twice; using %s", head, name)
            setattr(ms, head, model)
    if fallback is not None:
        for role in ("nonleaf", "leafbit", "leafpredict"):
            if getattr(ms, role) is None:
                setattr(ms, role, fallback)
    return ms


def _run_pool(fn, jobs_list, jobs: int):
    if jobs > 1 and len(jobs_list) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, jobs_list))
    return [fn(j) for j in jobs_list]


def _writer():
    return csv.writer(sys.stdout, lineterminator="\n")


def _fmt(x) -> str:
    if isinstance(x, float):
        if np.isinf(x):
            return "inf" if x > 0 else "-inf"
        return repr(x)
    return str(x)


def _outputs(inputs: list[str], output: str, suffix: str) -> list[Path]:
    if len(inputs) == 1 and not Path(output).is_dir():
        return [Path(output)]
    out = Path(output)
    if not out.is_dir():
        raise UsageError(f"--output must be an existing directory when several inputs are given")
    return [out / (Path(i).stem + suffix) for i in inputs]


# -- encode / decode ---------------------------------------------------------


def _encode_job(job):
    from olc.codec import EncodeConfig, encode
    from olc.pc_io import load_ply

    src, dst, kw, model_paths, model_dir = job
    pc = load_ply(src)
    bs = encode(pc, EncodeConfig(models=load_models(model_paths, model_dir), **kw))
    data = bs.to_bytes()
    Path(dst).write_bytes(data)
    return str(src), str(dst), bs.bpp, bs.num_bits, bs.source_count


def cmd_encode(args, cfg) -> int:
    outs = _outputs(args.input, args.output, ".olc")
    kw = dict(depth=args.depth, qs=args.qs, steps=args.steps, checkerboard=cfg["checkerboard"], normalize=args.normalize)
    jobs = [(i, o, kw, cfg["models"], cfg["model_dir"]) for i, o in zip(args.input, outs)]
    rows = _run_pool(_encode_job, jobs, cfg["jobs"])
    w = _writer()
    w.writerow(["input", "output", "bpp", "bits", "points"])
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return EXIT_OK


def _decode_job(job):
    from olc.codec import decode
    from olc.pc_io import write_ply

    src, dst, binary, model_paths, model_dir = job
    pc = decode(Path(src).read_bytes(), load_models(model_paths, model_dir))
    write_ply(dst, pc, binary=binary)
    return str(src), str(dst), len(pc)


def cmd_decode(args, cfg) -> int:
    outs = _outputs(args.input, args.output, ".ply")
    jobs = [(i, o, args.binary, cfg["models"], cfg["model_dir"]) for i, o in zip(args.input, outs)]
    rows = _run_pool(_decode_job, jobs, cfg["jobs"])
    w = _writer()
    w.writerow(["input", "output", "points"])
    for r in rows:
        w.writerow(r)
    return EXIT_OK


# -- evaluation --------------------------------------------------------------


def cmd_eval(args, cfg) -> int:
    from olc.metrics import chamfer, d1_psnr, d2_psnr
    from olc.pc_io import load_ply

    ref, test = load_ply(args.ref), load_ply(args.test)
    peak = args.peak if args.peak is not None else ref.extent
    if not peak > 0:
        raise UsageError("reference cloud has zero extent; pass --peak")
    d2 = d2_psnr(ref, test, peak, k=args.k) if len(ref) > args.k else float("nan")
    w = _writer()
    w.writerow(["ref", "test", "peak", "d1_psnr", "d2_psnr", "chamfer"])
    w.writerow([args.ref, args.test, _fmt(float(peak)), _fmt(d1_psnr(ref, test, peak)), _fmt(d2), _fmt(chamfer(ref, test))])
    return EXIT_OK


GNUPLOT = """set datafile separator ','
set key autotitle columnhead
set xlabel 'bpp'
set ylabel 'D1 PSNR (dB)'
plot '{csv}' using 2:3 with linespoints
"""


def cmd_rd_sweep(args, cfg) -> int:
    from olc.leaf_codec import rd_sweep
    from olc.metrics import RdPoint, write_rd_csv
    from olc.pc_io import compute_qs, load_ply, normalize, quantize

    pc = load_ply(args.input)
    if args.normalize:
        pc, _ = normalize(pc)
    if args.qs is not None:
        qs = args.qs
    else:
        if not pc.extent > 0:
            raise UsageError("cloud has zero extent; pass --qs")
        qs = compute_qs(pc.extent, args.depth)
    qc = quantize(pc, qs, pc.bbox_min)
    rows = rd_sweep(qc, load_models(cfg["models"], cfg["model_dir"]), args.steps, cfg["checkerboard"])
    pts = [RdPoint(r["bpp"], r["d1_psnr"], r["d2_psnr"], r["chamfer"], f"s={r['s']}") for r in rows]
    if args.csv:
        write_rd_csv(args.csv, pts)
        if args.plot:
            Path(args.plot).write_text(GNUPLOT.format(csv=args.csv))
    elif args.plot:
        raise UsageError("--plot needs --csv")
    write_rd_csv(sys.stdout, pts)
    return EXIT_OK


# -- rate control ------------------------------------------------------------


def cmd_rc_calibrate(args, cfg) -> int:
    from olc.pc_io import load_ply
    from olc.rate_control import calibrate

    clouds = [load_ply(p) for p in args.input]
    models = load_models(cfg["models"], cfg["model_dir"])
    name = args.dataset_name or ",".join(Path(p).name for p in args.input)
    table = calibrate(clouds, models, args.depths, cfg["checkerboard"], cfg["jobs"], name)
    table.to_csv(args.output)
    sys.stdout.write(table.to_csv())
    return EXIT_OK


def cmd_rc_encode(args, cfg) -> int:
    from olc.pc_io import load_ply
    from olc.rate_control import RateAnchorTable, rc_encode

    table = RateAnchorTable.from_csv(Path(args.anchors))
    models = load_models(cfg["models"], cfg["model_dir"])
    expected = table.provenance.get("model_checksum")
    if expected is not None and int(expected, 16) != models.checksum():
        log.warning("anchor table was calibrated with models %s, now using %#018x", expected, models.checksum())
    res = rc_encode(load_ply(args.input), args.target_bpp, table, models, cfg["checkerboard"])
    if args.output:
        Path(args.output).write_bytes(res.bitstream.to_bytes())
    w = _writer()
    w.writerow(["target_bpp", "achieved_bpp", "bit_error", "qs"])
    w.writerow([_fmt(res.target_bpp), _fmt(res.achieved_bpp), _fmt(res.bit_error), _fmt(res.qs)])
    return EXIT_OK


# -- training ----------------------------------------------------------------


def cmd_train(args, cfg) -> int:
    import torch

    from olc.context import ContextModel, ModelConfig, load_checkpoint, save_checkpoint, train
    from olc.octree import build_octree
    from olc.pc_io import compute_qs, load_ply, normalize, quantize

    torch.manual_seed(args.seed)
    trees = []
    for p in args.input:
        pc = load_ply(p)
        if args.normalize:
            pc, _ = normalize(pc)
        qs = args.qs if args.qs is not None else compute_qs(pc.extent, args.depth)
        trees.append(build_octree(quantize(pc, qs, pc.bbox_min)))
    if args.init:
        model = load_checkpoint(_model_path(args.init, cfg["model_dir"]))
    else:
        mc = ModelConfig(d=args.width, layers=args.layers, heads=args.attn_heads, window=args.window)
        model = ContextModel(mc, seed=args.seed)
    history: list[float] = []
    train(model, trees, args.head, lr=args.lr, epochs=args.epochs, batch_size=args.batch_size, seed=args.seed, history=history)
    digest = save_checkpoint(model, args.output)
    log.info("wrote %s checksum=%#018x", args.output, digest)
    w = _writer()
    w.writerow(["epoch", "loss"])
    for i, loss in enumerate(history):
        w.writerow([i, repr(loss)])
    return EXIT_OK


# -- parser ------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser, models: bool = True) -> None:
    p.add_argument("--config", help="JSON settings file (keys: jobs, model_dir, models, checkerboard)")
    p.add_argument("--jobs", type=_positive(int), default=None, help="worker processes (env OLC_JOBS)")
    p.add_argument("-v", "--verbose", action="count", default=0)
    if models:
        p.add_argument("--model", dest="models", action="append", default=[], help="checkpoint; repeat for per-role models")
        p.add_argument("--model-dir", default=None, help="search path for --model (env OLC_MODEL_DIR)")
        p.add_argument("--checkerboard", action=argparse.BooleanOptionalAction, default=None, help="two-pass sibling coding (default on)")


def _add_grid(p: argparse.ArgumentParser, required: bool = True) -> None:
    g = p.add_mutually_exclusive_group(required=required)
    g.add_argument("--depth", type=_positive(int), help="octree depth; qs = extent / (2^depth - 1)")
    g.add_argument("--qs", type=_positive(float), help="quantization step")
    p.add_argument("--normalize", action="store_true", help="map the cloud into [-1, 1]^3 first")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="olc", description="Octree point cloud geometry codec with leaf-lossy coding and rate control.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encode", help="PLY -> bitstream")
    _add_common(p)
    p.add_argument("--input", nargs="+", required=True)
    p.add_argument("--output", required=True, help="file, or directory for several inputs")
    _add_grid(p, required=False)
    p.add_argument("--steps", type=_steps, default=8, help="leaf bits coded losslessly, 0..8")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="bitstream -> PLY")
    _add_common(p)
    p.add_argument("--input", nargs="+", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--binary", action="store_true", help="write binary little-endian PLY")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("eval", help="D1/D2 PSNR and chamfer distance between two clouds")
    _add_common(p, models=False)
    p.add_argument("--ref", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--peak", type=_positive(float), default=None, help="PSNR peak (default: largest axis extent of ref)")
    p.add_argument("--k", type=_positive(int), default=8, help="neighbours for normal estimation")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("rd-sweep", help="rate/distortion over leaf step counts")
    _add_common(p)
    p.add_argument("--input", required=True)
    _add_grid(p)
    p.add_argument("--steps", type=_step_list, default=list(range(9)), help="e.g. 0..8 or 0,2,4")
    p.add_argument("--csv", help="also write the CSV here")
    p.add_argument("--plot", help="write a gnuplot script reading --csv")
    p.set_defaults(func=cmd_rd_sweep)

    p = sub.add_parser("rc-calibrate", help="build a rate anchor table")
    _add_common(p)
    p.add_argument("--input", nargs="+", required=True)
    p.add_argument("--depths", type=_int_list, default=[10, 11], help="contiguous, e.g. 10..12")
    p.add_argument("--output", required=True)
    p.add_argument("--dataset-name", default="")
    p.set_defaults(func=cmd_rc_calibrate)

    p = sub.add_parser("rc-encode", help="encode at a target bpp")
    _add_common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--target-bpp", type=_positive(float), required=True)
    p.add_argument("--anchors", required=True)
    p.add_argument("--output")
    p.set_defaults(func=cmd_rc_encode)

    p = sub.add_parser("train", help="train one head and write a checkpoint")
    _add_common(p, models=False)
    p.add_argument("--model-dir", default=None)
    p.add_argument("--head", choices=["nonleaf", "leafbit", "leafpredict"], required=True)
    p.add_argument("--input", nargs="+", required=True)
    _add_grid(p)
    p.add_argument("--output", required=True)
    p.add_argument("--init", help="continue from this checkpoint")
    p.add_argument("--epochs", type=_positive(int), default=10)
    p.add_argument("--lr", type=_positive(float), default=2e-4)
    p.add_argument("--batch-size", type=_positive(int), default=8)
    p.add_argument("--width", type=_positive(int), default=128)
    p.add_argument("--layers", type=_positive(int), default=4)
    p.add_argument("--attn-heads", type=_positive(int), default=4)
    p.add_argument("--window", type=_positive(int), default=1024)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else EXIT_OK
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = resolve_settings(args)
        return args.func(args, cfg)
    except UsageError as e:
        print(f"olc {args.command}: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (CorruptionError, FormatError, ChecksumMismatchError) as e:
        print(f"olc {args.command}: corrupt input: {e}", file=sys.stderr)
        return EXIT_CORRUPT
    except (OlcError, OSError, ValueError) as e:
        print(f"olc {args.command}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
