"""Command-line entry point: verification suites, cost reports, toy training, inference, CKA.

Exit status is 0 on success, 1 when an input or a verification check is
invalid, and 2 on a usage error.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path
from typing import Sequence

import numpy as np

from . import checks
from .analysis import CkaError, cka_matrix, collect_block_activations, count_flops, count_params
from .attention import ConfigError
from .config import RGT_S, TOY, ModelConfig, load_config
from .data import smooth_image, synthetic_pairs
from .imaging import ImagePlane, PnmError, read_pnm, write_pnm
from .model import init_weights, rgt_forward
from .tensor import NumericError, Tensor
from .train import overfit
from .weights import WeightFormatError, WeightStore, read_weights, save_weights


class ValidationError(Exception):
    """Bad input or a failed check; reported on stderr with exit status 1."""


# ------------------------------------------------------------- helpers


def _config(args, default: ModelConfig) -> ModelConfig:
    if args.config is None:
        return default
    path = Path(args.config)
    if not path.is_file():
        raise ValidationError(f"config file not found: {path}")
    try:
        return load_config(path)
    except (ConfigError, TypeError) as e:
        raise ValidationError(f"invalid config {path}: {e}") from e


def _weights(args, cfg: ModelConfig) -> WeightStore:
    if args.weights is None:
        return init_weights(cfg, args.seed)
    path = Path(args.weights)
    if not path.is_file():
        raise ValidationError(f"weights file not found: {path}")
    try:
        store = read_weights(path)
    except WeightFormatError as e:
        raise ValidationError(f"corrupt weights file {path}: {e}") from e
    expected = init_weights(cfg, 0)
    missing = sorted(set(expected) - set(store))
    extra = sorted(set(store) - set(expected))
    wrong = sorted(k for k in expected if k in store and store[k].shape != expected[k].shape)
    if missing or extra or wrong:
        detail = "; ".join(
            f"{label}: {', '.join(keys[:3])}{' ...' if len(keys) > 3 else ''}"
            for label, keys in (("missing", missing), ("unexpected", extra), ("wrong shape", wrong))
            if keys
        )
        raise ValidationError(f"weights {path} do not match the config ({detail})")
    return store


def _image(path_arg: str) -> ImagePlane:
    path = Path(path_arg)
    if not path.is_file():
        raise ValidationError(f"input image not found: {path}")
    try:
        img = read_pnm(path.read_bytes())
    except PnmError as e:
        raise ValidationError(f"malformed PPM {path}: {e}") from e
    if img.space != "RGB":
        raise ValidationError(f"{path} is grayscale; an RGB (P6) image is required")
    return img


def _emit(text: str, out: str | None, file_text: str | None = None) -> None:
    sys.stdout.write(text)
    if out:
        Path(out).write_text(text if file_text is None else file_text)


def _run_suite(results, out) -> int:
    text, ok = checks.summarize(results)
    _emit(text, out)
    if not ok:
        raise ValidationError("verification failed")
    return 0


# ------------------------------------------------------------ commands


def cmd_gradcheck(args) -> int:
    results = checks.op_gradchecks(args.seed) + [checks.model_gradcheck(seed=args.seed)]
    return _run_suite(results, args.out)


def cmd_shapes(args) -> int:
    return _run_suite(checks.shape_suite(args.seed), args.out)


def _cost_view(args, cfg: ModelConfig) -> ModelConfig:
    return cfg.inference_view(args.test_h) if args.test_h else cfg


def cmd_params(args) -> int:
    cfg = _config(args, RGT_S)
    if args.height or args.width:
        rep = count_flops(_cost_view(args, cfg), args.height or args.width, args.width or args.height)
        _emit(rep.rollup(args.depth).to_table(), args.out, rep.to_csv())
    else:
        rep = count_params(cfg)
        _emit(rep.rollup(args.depth).to_table(show_flops=False), args.out, rep.to_csv())
    return 0


def cmd_flops(args) -> int:
    cfg = _cost_view(args, _config(args, RGT_S))
    rep = count_flops(cfg, args.height, args.width or args.height)
    _emit(rep.rollup(args.depth).to_table(), args.out, rep.to_csv())
    return 0


def cmd_train_toy(args) -> int:
    cfg = _config(args, TOY)
    if args.steps < 1 or args.pairs < 1 or args.lr <= 0:
        raise ValidationError("--steps and --pairs must be positive and --lr > 0")
    pairs = synthetic_pairs(args.pairs, lr_size=args.lr_size, scale=cfg.scale, seed=args.seed)
    weights = _weights(args, cfg)

    def show(step: int, loss: float) -> None:
        print(f"step {step + 1:5d}  loss {loss:.6f}", flush=True)

    losses, weights = overfit(cfg, weights, pairs, args.steps, args.lr, target=args.target, on_step=show)
    print(f"final loss {losses[-1]:.6f} after {len(losses)} steps")
    if args.out:
        save_weights(weights, args.out)
        print(f"wrote weights to {args.out}")
    return 0


def cmd_infer(args) -> int:
    cfg = _config(args, RGT_S)
    img = _image(args.input)
    weights = _weights(args, cfg)
    sr = rgt_forward(Tensor(img.to_range(1.0).data), weights, cfg).data
    out = ImagePlane(np.clip(sr, 0.0, 1.0), "RGB", 1.0)
    Path(args.output).write_bytes(write_pnm(out))
    print(f"wrote {args.output} ({out.width}x{out.height}, x{cfg.scale})")
    return 0


def cmd_cka(args) -> int:
    cfg = _config(args, TOY)
    if args.input:
        lr = _image(args.input).to_range(1.0).data
    else:
        lr = smooth_image(args.size, np.random.default_rng(args.seed))
    acts = collect_block_activations(cfg, _weights(args, cfg), lr)
    try:
        mat = cka_matrix(acts)
    except CkaError as e:
        raise ValidationError(str(e)) from e
    header = "block," + ",".join(str(i + 1) for i in range(len(acts)))
    rows = [f"{i + 1}," + ",".join(f"{v:.6f}" for v in row) for i, row in enumerate(mat)]
    _emit("\n".join([header] + rows) + "\n", args.out)
    return 0


def cmd_bench(args) -> int:
    cfg = _config(args, TOY)
    weights = _weights(args, cfg)
    x = np.random.default_rng(args.seed).uniform(0, 1, (args.height, args.width or args.height, 3))
    times = []
    for _ in range(args.repeat):
        t0 = time.perf_counter()
        rgt_forward(x, weights, cfg)
        times.append(time.perf_counter() - t0)
    print(f"forward {x.shape[0]}x{x.shape[1]} x{cfg.scale}: best {min(times):.3f} s, "
          f"mean {sum(times) / len(times):.3f} s over {args.repeat} runs (informational)")
    return 0


# -------------------------------------------------------------- parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rgt", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser, metavar="COMMAND")

    def flag_config(sp, default: str):
        sp.add_argument("--config", metavar="PATH", help=f"JSON model config (default: built-in {default})")

    def flag_weights(sp):
        sp.add_argument("--weights", metavar="PATH", help="RGTW weights file (default: seeded initialization)")

    def flag_seed(sp):
        sp.add_argument("--seed", type=int, default=0, metavar="N", help="random seed (default: 0)")

    def flag_out(sp, what: str):
        sp.add_argument("--out", metavar="PATH", help=what)

    def flag_depth(sp):
        sp.add_argument("--depth", type=int, default=2, metavar="N",
                        help="merge table rows to the first N path components; 0 lists every layer (default: 2)")

    def flag_test_h(sp):
        sp.add_argument("--test-h", type=int, default=16, metavar="N",
                        help="representative size used for cost at test geometry; 0 keeps the config value (default: 16)")

    sp = sub.add_parser("gradcheck", help="gradient check of every tensor op and the tiny model")
    flag_seed(sp)
    flag_out(sp, "also write the report to PATH")
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("shapes", help="shape contracts and structural invariants")
    flag_seed(sp)
    flag_out(sp, "also write the report to PATH")
    sp.set_defaults(func=cmd_shapes)

    sp = sub.add_parser("params", help="parameter count table")
    flag_config(sp, "RGT-S")
    sp.add_argument("--height", type=int, default=0, metavar="H", help="also count FLOPs for an H x W input")
    sp.add_argument("--width", type=int, default=0, metavar="W", help="input width (default: height)")
    flag_test_h(sp)
    flag_depth(sp)
    flag_out(sp, "write the per-layer CSV to PATH")
    sp.set_defaults(func=cmd_params)

    sp = sub.add_parser("flops", help="FLOP count table (multiply-accumulates)")
    flag_config(sp, "RGT-S")
    sp.add_argument("--height", type=int, default=128, metavar="H", help="input height (default: 128)")
    sp.add_argument("--width", type=int, default=0, metavar="W", help="input width (default: height)")
    flag_test_h(sp)
    flag_depth(sp)
    flag_out(sp, "write the per-layer CSV to PATH")
    sp.set_defaults(func=cmd_flops)

    sp = sub.add_parser("train-toy", help="overfit a small model on synthetic pairs")
    flag_config(sp, "toy")
    flag_weights(sp)
    flag_seed(sp)
    sp.add_argument("--steps", type=int, default=2000, metavar="N", help="maximum steps (default: 2000)")
    sp.add_argument("--lr", type=float, default=1e-3, metavar="F", help="Adam learning rate (default: 1e-3)")
    sp.add_argument("--pairs", type=int, default=5, metavar="N", help="number of synthetic pairs (default: 5)")
    sp.add_argument("--lr-size", type=int, default=16, metavar="N", help="low-resolution patch size (default: 16)")
    sp.add_argument("--target", type=float, default=None, metavar="F", help="stop once the loss is below F")
    flag_out(sp, "save the trained weights to PATH")
    sp.set_defaults(func=cmd_train_toy)

    sp = sub.add_parser("infer", help="super-resolve one PPM image")
    flag_config(sp, "RGT-S")
    flag_weights(sp)
    flag_seed(sp)
    sp.add_argument("--input", required=True, metavar="PPM", help="input P6 image")
    sp.add_argument("--output", required=True, metavar="PPM", help="output P6 image")
    sp.set_defaults(func=cmd_infer)

    sp = sub.add_parser("cka", help="CKA similarity between all block outputs, as CSV")
    flag_config(sp, "toy")
    flag_weights(sp)
    flag_seed(sp)
    sp.add_argument("--input", metavar="PPM", help="input P6 image (default: seeded synthetic image)")
    sp.add_argument("--size", type=int, default=24, metavar="N", help="synthetic image size (default: 24)")
    flag_out(sp, "also write the CSV to PATH")
    sp.set_defaults(func=cmd_cka)

    sp = sub.add_parser("bench", help="informational forward-pass timing")
    flag_config(sp, "toy")
    flag_weights(sp)
    flag_seed(sp)
    sp.add_argument("--height", type=int, default=32, metavar="H", help="input height (default: 32)")
    sp.add_argument("--width", type=int, default=0, metavar="W", help="input width (default: height)")
    sp.add_argument("--repeat", type=int, default=3, metavar="N", help="timed runs (default: 3)")
    sp.set_defaults(func=cmd_bench)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
    except (ConfigError, ValueError, NumericError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
