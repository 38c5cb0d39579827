"""Command-line entry point: ``lesrcnn <subcommand> [flags]``.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.
A ``--config`` JSON file may supply any flag of the subcommand (keys are
flag names, dashes or underscores); explicit flags override it.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import imageio as io_
from . import metrics
from . import model as M
from . import train as T

log = logging.getLogger("lesrcnn")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(Exception):
    pass


def parse_scales(text: str) -> tuple[int, ...]:
    try:
        vals = [int(t) for t in str(text).split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid scale list {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty scale list")
    bad = [v for v in vals if v not in M.SUPPORTED_SCALES]
    if bad:
        raise argparse.ArgumentTypeError(f"unsupported scale(s) {bad}; choose from {list(M.SUPPORTED_SCALES)}")
    return tuple(sorted(set(vals)))


def parse_scale(text: str) -> int:
    vals = parse_scales(text)
    if len(vals) != 1:
        raise argparse.ArgumentTypeError(f"expected a single scale, got {text!r}")
    return vals[0]


def parse_sizes(text: str) -> tuple[int, ...]:
    try:
        vals = tuple(int(t) for t in str(text).split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid size list {text!r}") from None
    if not vals or min(vals) < 1:
        raise argparse.ArgumentTypeError(f"sizes must be positive integers, got {text!r}")
    return vals


def _common(p: argparse.ArgumentParser, model_flags: bool = True) -> None:
    p.add_argument("--config", metavar="PATH", default=None, help="JSON file of flag values")
    p.add_argument("--seed", type=int, default=0, help="seed for every random draw")
    p.add_argument("--threads", type=int, default=1, help="BLAS worker threads")
    if model_flags:
        p.add_argument("--variant", choices=M.VARIANTS, default="lesrcnn", help="network architecture")
        p.add_argument("--convention", choices=M.CONVENTIONS, default="standard",
                       help="sub-pixel channel convention")
        p.add_argument("--channels", type=int, default=64, help="trunk width")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="lesrcnn", description="Lightweight CNN super-resolution toolkit",
                                     formatter_class=fmt)
    parser.add_argument("-v", "--verbose", action="store_true", default=False, help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("prepare", help="crop HR images and synthesize LR PNGs", formatter_class=fmt)
    _common(p, model_flags=False)
    p.add_argument("--hr-dir", required=False, default=None, help="directory of HR PNG images")
    p.add_argument("--scales", type=parse_scales, default=(2, 3, 4), help="comma-separated scales")
    p.add_argument("--name", default=None, help="dataset name (default: directory name)")
    p.add_argument("--out", default="data", help="output directory")

    p = sub.add_parser("train", help="train a model on a prepared dataset", formatter_class=fmt)
    _common(p)
    p.add_argument("--manifest", default=None, help="manifest.json written by prepare")
    p.add_argument("--scales", type=parse_scales, default=(2,), help="training scales")
    p.add_argument("--steps", type=int, default=5000, help="total optimizer steps")
    p.add_argument("--batch-size", type=int, default=16, help="patches per step")
    p.add_argument("--patch", type=int, default=64, help="HR patch side")
    p.add_argument("--lr", type=float, default=1e-4, help="initial learning rate")
    p.add_argument("--halve-every", type=int, default=2000, help="steps between learning-rate halvings")
    p.add_argument("--beta1", type=float, default=0.9, help="Adam first-moment decay")
    p.add_argument("--beta2", type=float, default=0.999, help="Adam second-moment decay")
    p.add_argument("--epsilon", type=float, default=1e-8, help="Adam denominator epsilon")
    p.add_argument("--checkpoint-every", type=int, default=1000, help="steps between checkpoints (0 = off)")
    p.add_argument("--no-augment", action="store_true", default=False, help="disable flips and rotations")
    p.add_argument("--progress-every", type=int, default=100, help="steps between progress lines")
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.add_argument("--out", default="run", help="output directory")

    p = sub.add_parser("eval", help="Y-channel PSNR/SSIM against HR images", formatter_class=fmt)
    _common(p, model_flags=False)
    p.add_argument("--checkpoint", default=None, help="model checkpoint")
    p.add_argument("--bicubic-only", action="store_true", default=False, help="evaluate the bicubic baseline only")
    p.add_argument("--manifest", default=None, help="manifest.json of the test set")
    p.add_argument("--scale", type=parse_scale, default=2, help="upscaling factor")
    p.add_argument("--float-y", action="store_true", default=False, help="skip 8-bit rounding of luma")
    p.add_argument("--out", default="eval.csv", help="CSV report path")

    p = sub.add_parser("infer", help="super-resolve one PNG", formatter_class=fmt)
    _common(p, model_flags=False)
    p.add_argument("--checkpoint", default=None, help="model checkpoint")
    p.add_argument("--input", default=None, help="LR PNG")
    p.add_argument("--scale", type=parse_scale, default=2, help="upscaling factor")
    p.add_argument("--out", default="sr.png", help="output PNG")

    p = sub.add_parser("count", help="parameter and FLOP counts", formatter_class=fmt)
    _common(p)
    p.add_argument("--scale", type=parse_scale, default=4, help="upscaling factor")
    p.add_argument("--input-size", type=int, default=64, help="LR input side for FLOP counting")
    p.add_argument("--out", default=None, help="CSV report path")

    p = sub.add_parser("time", help="median inference wall time", formatter_class=fmt)
    _common(p)
    p.add_argument("--scale", type=parse_scale, default=4, help="upscaling factor")
    p.add_argument("--checkpoint", default=None, help="time this checkpoint instead of a fresh model")
    p.add_argument("--sizes", type=parse_sizes, default=(256, 512, 1024), help="SR output sides")
    p.add_argument("--repeats", type=int, default=3, help="timed runs per size")
    p.add_argument("--out", default=None, help="CSV report path")

    p = sub.add_parser("gradcheck", help="finite-difference gradient check", formatter_class=fmt)
    _common(p)
    p.add_argument("--scale", type=parse_scale, default=2, help="upscaling factor")
    p.add_argument("--input-size", type=int, default=8, help="LR input side")
    p.add_argument("--entries", type=int, default=6, help="entries probed per parameter")
    p.add_argument("--tolerance", type=float, default=1e-4, help="maximum relative error")
    p.add_argument("--out", default=None, help="CSV report path")
    return parser


def _subparser(parser: argparse.ArgumentParser, command: str) -> argparse.ArgumentParser:
    for action in parser._subparsers._group_actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[command]
    raise KeyError(command)


def parse_args(argv) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        sub = _subparser(parser, args.command)
        try:
            with open(args.config) as f:
                values = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            parser.error(f"--config {args.config}: {e}")
        if not isinstance(values, dict):
            parser.error(f"--config {args.config}: expected a JSON object")
        known = {a.dest: a for a in sub._actions}
        defaults = {}
        for key, value in values.items():
            dest = key.lstrip("-").replace("-", "_")
            if dest not in known or dest in ("config", "help"):
                parser.error(f"--config {args.config}: unknown field {key!r} for {args.command}")
            action = known[dest]
            if action.type is not None and isinstance(value, (str, int, float)) and not isinstance(value, bool):
                try:
                    value = action.type(str(value))
                except (argparse.ArgumentTypeError, ValueError) as e:
                    parser.error(f"--config {args.config}: field {key!r}: {e}")
            if action.choices is not None and value not in action.choices:
                parser.error(f"--config {args.config}: field {key!r}: {value!r} not in {list(action.choices)}")
            defaults[dest] = value
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return args


def _require(args, *names):
    for n in names:
        if getattr(args, n) in (None, ""):
            raise UsageError(f"--{n.replace('_', '-')} is required for {args.command}")


# --------------------------------------------------------------------------
# subcommands

def cmd_prepare(args) -> int:
    _require(args, "hr_dir")
    m = io_.prepare_dataset(args.hr_dir, args.scales, args.out, name=args.name)
    print(f"prepared {len(m.items)} image(s) from {args.hr_dir} at scales {list(m.scales)}")
    print(f"manifest: {Path(args.out) / 'manifest.json'}")
    return EXIT_OK


def _train_config(args) -> T.TrainConfig:
    try:
        return T.TrainConfig(
            batch_size=args.batch_size, lr0=args.lr, beta1=args.beta1, beta2=args.beta2, epsilon=args.epsilon,
            total_steps=args.steps, halve_every=args.halve_every, patch=args.patch, scales=args.scales,
            seed=args.seed, checkpoint_every=args.checkpoint_every, augment=not args.no_augment,
        )
    except ValueError as e:
        raise UsageError(f"invalid training config: {e}") from None


def _build(args, scales) -> M.ModelGraph:
    variant = M.normalize_variant(args.variant)
    if variant == "lesrcnn-s":
        scales = M.SUPPORTED_SCALES
    if args.channels < 1:
        raise UsageError(f"--channels must be positive, got {args.channels}")
    try:
        return M.build_model(variant, scales, channels=args.channels, convention=args.convention, seed=args.seed)
    except ValueError as e:
        raise UsageError(str(e)) from None


def cmd_train(args) -> int:
    _require(args, "manifest")
    cfg = _train_config(args)
    os.makedirs(args.out, exist_ok=True)
    if args.resume:
        g, state, start = T.load_training_state(args.resume)
        print(f"resuming {g.variant} from {args.resume} at step {start}")
    else:
        g = _build(args, args.scales)
        state, start = None, 0
    if M.normalize_variant(args.variant) == "lesrcnn-s" and not args.resume:
        cfg.scales = M.SUPPORTED_SCALES
        cfg.validate()
    dataset = T.load_training_set(io_.load_manifest(args.manifest))
    print(f"training {g.variant} x{'/'.join(map(str, g.scales))} ({g.params.size():,} parameters) "
          f"for {cfg.total_steps} steps on {len(dataset)} image(s)")
    res = T.train(g, dataset, cfg, state=state, start_step=start, out_dir=args.out,
                  log_path=os.path.join(args.out, "loss.csv"), progress_every=args.progress_every)
    if res.losses:
        print(f"final loss {res.losses[-1]:.6g} at step {res.step}")
    print(f"checkpoint: {os.path.join(args.out, 'final.lesr')}")
    return EXIT_OK


def evaluate(g: M.ModelGraph | None, manifest: io_.DatasetManifest, scale: int,
             quantized: bool = True) -> metrics.EvalReport:
    report = metrics.EvalReport(scale)
    for it in sorted(manifest.items, key=lambda i: i.stem):
        hr = io_.load_png(manifest.path(it.hr))
        hr = io_.modcrop(hr, scale)
        lr = io_.load_png(manifest.path(it.lr[scale])) if scale in it.lr else io_.downscale(hr, scale)
        if lr.shape[0] * scale != hr.shape[0] or lr.shape[1] * scale != hr.shape[1]:
            raise io_.DataError(f"{it.stem}: LR {lr.shape[:2]} x{scale} does not match HR {hr.shape[:2]}")
        bic = io_.upscale(lr, scale)
        bp, bs = metrics.eval_y_channel(bic, hr, scale, quantized)
        if g is None:
            sp, ss = bp, bs
        else:
            sr = io_.from_tensor(M.model_forward(g, io_.to_tensor(lr, g.dtype), scale))
            sp, ss = metrics.eval_y_channel(sr, hr, scale, quantized)
        report.images.append(metrics.ImageScore(it.stem, sp, ss, bp, bs))
    return report


def _load_model(path, scale=None) -> M.ModelGraph:
    if not path:
        raise UsageError("--checkpoint is required")
    if not os.path.exists(path):
        raise io_.DataError(f"{path}: checkpoint not found")
    g = M.load_checkpoint(path)
    if scale is not None and scale not in g.scales:
        raise UsageError(f"checkpoint {path} has scales {list(g.scales)}, not x{scale}")
    return g


def cmd_eval(args) -> int:
    _require(args, "manifest")
    g = None if args.bicubic_only else _load_model(args.checkpoint, args.scale)
    report = evaluate(g, io_.load_manifest(args.manifest), args.scale, quantized=not args.float_y)
    if not report.images:
        raise io_.DataError(f"{args.manifest}: no images")
    print(report.table())
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(report.to_csv())
    return EXIT_OK


def cmd_infer(args) -> int:
    _require(args, "input")
    g = _load_model(args.checkpoint, args.scale)
    if not os.path.exists(args.input):
        raise io_.DataError(f"{args.input}: file not found")
    lr = io_.load_png(args.input)
    sr = io_.from_tensor(M.model_forward(g, io_.to_tensor(lr, g.dtype), args.scale))
    io_.save_png(sr, args.out)
    print(f"wrote {args.out} ({sr.shape[1]}x{sr.shape[0]})")
    return EXIT_OK


def cmd_count(args) -> int:
    g = _build(args, (args.scale,))
    if args.input_size < 1:
        raise UsageError("--input-size must be positive")
    report = metrics.count_flops(g, args.input_size, args.input_size, args.scale)
    total = metrics.count_params(g).total_params
    print(report.table())
    if total != report.total_params:
        print(f"all heads: {total:,} parameters")
    if args.out:
        Path(args.out).write_text(report.to_csv())
    return EXIT_OK


def cmd_time(args) -> int:
    g = _load_model(args.checkpoint, args.scale) if args.checkpoint else _build(args, (args.scale,))
    if args.repeats < 1:
        raise UsageError("--repeats must be >= 1")
    rows = metrics.time_inference(g, args.sizes, args.repeats, args.scale, seed=args.seed)
    label = f"{g.variant}-x{args.scale}"
    print(f"{'SR size':>10}{'LR size':>10}{'median s':>12}")
    for r in rows:
        print(f"{r.size:>10}{r.lr_size:>10}{r.median_s:>12.4f}")
    macs = [metrics.count_flops(g, r.lr_size, r.lr_size, args.scale).total_macs for r in rows]
    print("MACs: " + ", ".join(f"{m:,}" for m in macs))
    if args.out:
        Path(args.out).write_text(metrics.timing_csv(rows, label))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    g = _build(args, (args.scale,))
    x = np.random.default_rng(args.seed).random((1, 3, args.input_size, args.input_size))
    report = T.gradcheck(g, x, args.scale, tolerance=args.tolerance, entries=args.entries, seed=args.seed)
    print(report.table())
    print(f"max relative error {report.worst:.3e}")
    if args.out:
        lines = ["parameter,entries,max_rel_error"]
        lines += [f"{n},{report.checked[n]},{e:.6e}" for n, e in report.max_rel_error.items()]
        Path(args.out).write_text("\n".join(lines) + "\n")
    return EXIT_OK if report.passed else EXIT_NUMERIC


COMMANDS = {
    "prepare": cmd_prepare,
    "train": cmd_train,
    "eval": cmd_eval,
    "infer": cmd_infer,
    "count": cmd_count,
    "time": cmd_time,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    args = parse_args(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with threadpool_limits(limits=max(1, args.threads)):
            return COMMANDS[args.command](args)
    except UsageError as e:
        print(f"lesrcnn {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (io_.DataError, M.CheckpointError, FileNotFoundError) as e:
        print(f"lesrcnn {args.command}: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (T.NonFiniteLossError, FloatingPointError) as e:
        print(f"lesrcnn {args.command}: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
