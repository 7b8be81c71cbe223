"""``sepgconv`` command line: equivariance checks, costs, redundancy analysis, training.

Exit codes: 0 success, 1 a check or run failed, 2 usage error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import kernels
from .analysis import histogram_csv, ratios_csv, redundancy_report
from .checks import LAYER_TYPES, TOLERANCE, equivariance_deviations
from .data import DataFormatError, load_directory, synth_split, write_directory
from .groups import group
from .models import FAMILIES, ArchitectureConfig, build
from .tensorio import TensorFormatError
from .training import (TrainConfig, TrainingDivergedError, load_checkpoint, rows_to_csv,
                       sweep_data_fraction, sweep_width, train)

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _arch_list(text: str) -> list[tuple[str, int]]:
    out = []
    for item in text.split(","):
        family, sep, width = item.partition(":")
        if not sep or not width.isdigit():
            raise argparse.ArgumentTypeError(f"expected FAMILY:WIDTH items, got {item!r}")
        out.append((family, int(width)))
    return out


def _add_training_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", default="synth", help="data directory (IDX or amat) or 'synth'")
    p.add_argument("--n-train", type=int, default=2000, help="training samples when --data synth")
    p.add_argument("--n-test", type=int, default=2000, help="test samples when --data synth")
    p.add_argument("--data-seed", type=int, default=0, help="seed of the synthesized split")
    p.add_argument("--fraction", type=float, default=1.0)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--optimizer", choices=("adam", "sgd-momentum"), default="adam")
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--milestones", type=_int_list, default=None,
                   help="comma-separated epochs at which lr drops by --gamma (default 60%%,80%% of --epochs)")
    p.add_argument("--gamma", type=float, default=0.1)
    p.add_argument("--dtype", choices=("f32", "f64"), default="f32")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sepgconv", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("check-equivariance", help="verify layer equivariance numerically")
    p.add_argument("--group", choices=("p4", "p4m", "all"), default="all")
    p.add_argument("--layer", choices=LAYER_TYPES + ("all",), default="all")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dtype", choices=("f32", "f64"), default="f64")
    p.add_argument("--tolerance", type=float, default=None)

    p = sub.add_parser("cost", help="per-layer parameter and MAC table")
    p.add_argument("--arch", required=True, help=f"one of {', '.join(FAMILIES)}")
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--group", choices=("auto", "none", "p4", "p4m"), default="auto")
    p.add_argument("--input", type=int, default=28, help="input side length")
    p.add_argument("--exact-input", action="store_true",
                   help="count pointwise stages at each layer's true input resolution")
    p.add_argument("--format", choices=("text", "csv"), default="text")

    p = sub.add_parser("analyze", help="PC1 redundancy ratios of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--centered", action="store_true")
    p.add_argument("--bins", type=int, default=20)
    p.add_argument("--out", default=None, help="directory for ratios.csv / histogram.csv (default: checkpoint)")

    p = sub.add_parser("train", help="train one model and write a checkpoint")
    p.add_argument("--arch", required=True)
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--group", choices=("auto", "none", "p4", "p4m"), default="auto")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--checkpoint", default=None, help="checkpoint directory to write")
    p.add_argument("--report", default=None, help="write the RunReport as JSON here")
    _add_training_flags(p)

    p = sub.add_parser("sweep", help="data-fraction or width sweep as CSV")
    p.add_argument("--mode", choices=("data", "width"), required=True)
    p.add_argument("--archs", type=_arch_list, default=None,
                   help="data mode: FAMILY:WIDTH,... (e.g. Z2CNN:20,gcP4CNN:30)")
    p.add_argument("--fractions", type=_float_list, default=[0.25, 0.5, 1.0])
    p.add_argument("--arch", default=None, help="width mode: model family")
    p.add_argument("--widths", type=_int_list, default=None, help="width mode: comma-separated widths")
    p.add_argument("--group", choices=("auto", "none", "p4", "p4m"), default="auto")
    p.add_argument("--seeds", type=_int_list, default=[0])
    p.add_argument("--out", default=None, help="CSV path (default: stdout)")
    _add_training_flags(p)

    p = sub.add_parser("synth-data", help="write a synthesized rotated-digit set")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, required=True, help="training samples")
    p.add_argument("--n-test", type=int, default=None, help="test samples (default: --n)")
    p.add_argument("--seed", type=int, default=0)
    return parser


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_check_equivariance(args) -> int:
    groups = ("p4", "p4m") if args.group == "all" else (args.group,)
    layers = LAYER_TYPES if args.layer == "all" else (args.layer,)
    tol = TOLERANCE[args.dtype] if args.tolerance is None else args.tolerance
    worst = 0.0
    print("group,layer,element,max_deviation")
    for g in groups:
        spec = group(g)
        for layer in layers:
            dev = equivariance_deviations(g, layer, seed=args.seed, dtype=args.dtype)
            for e in spec.elements():
                print(f"{g},{layer},{spec.label(e)},{dev[e]:.3e}")
            worst = max(worst, float(dev.max()))
    ok = worst < tol
    print(f"max deviation {worst:.3e} {'<' if ok else '>='} tolerance {tol:.0e}: {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_FAIL


def _arch(args, width=None, family=None) -> ArchitectureConfig:
    return ArchitectureConfig(family or args.arch, width or args.width, group=args.group,
                              input_size=getattr(args, "input", 28), dtype=getattr(args, "dtype", "f32"))


def cmd_cost(args) -> int:
    net = build(_arch(args))
    report = net.cost_report(exact_input=args.exact_input)
    print(report.to_csv() if args.format == "csv" else report.to_text(), end="\n" if args.format == "text" else "")
    return EXIT_OK


def cmd_analyze(args) -> int:
    net, manifest = load_checkpoint(args.checkpoint)
    banks = net.group_filter_banks()
    if not banks:
        raise UsageError(f"{net.arch.family} has no group axis to analyse")
    reports = [redundancy_report(name, F, centered=args.centered, n_bins=args.bins) for name, F in banks]
    out = Path(args.out or args.checkpoint)
    out.mkdir(parents=True, exist_ok=True)
    (out / "ratios.csv").write_text(ratios_csv(reports))
    (out / "histogram.csv").write_text(histogram_csv(reports))
    print("layer,mean_pc1_ratio,min,max,degenerate")
    for r in reports:
        print(f"{r.layer},{r.mean_ratio:.6f},{r.ratios.min():.6f},{r.ratios.max():.6f},{r.n_degenerate}")
    print(histogram_csv(reports), end="")
    return EXIT_OK


def _train_cfg(args, seed: int) -> TrainConfig:
    milestones = args.milestones
    if milestones is None:
        milestones = sorted({int(round(0.6 * args.epochs)), int(round(0.8 * args.epochs))} - {0})
    return TrainConfig(seed=seed, epochs=args.epochs, batch_size=args.batch_size, optimizer=args.optimizer,
                       lr=args.lr, milestones=tuple(milestones), gamma=args.gamma, fraction=args.fraction,
                       dtype=args.dtype)


def _load_data(args):
    if args.data == "synth":
        return synth_split(args.n_train, args.n_test, seed=args.data_seed)
    return load_directory(args.data)


def cmd_train(args) -> int:
    cfg = _train_cfg(args, args.seed)
    arch = ArchitectureConfig(args.arch, args.width, group=args.group, seed=args.seed, dtype=args.dtype)
    train_data, test_data = _load_data(args)
    report = train(build(arch), train_data, test_data, cfg, checkpoint_dir=args.checkpoint)
    print("epoch,lr,train_loss,train_accuracy,test_loss,test_error")
    for e in report.epochs:
        print(f"{e.epoch},{e.lr:g},{e.train_loss:.6f},{e.train_accuracy:.4f},{e.test_loss:.6f},{e.test_error:.2f}")
    print(report.summary())
    if args.report:
        Path(args.report).write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _train_cfg(args, args.seeds[0])
    if args.mode == "data":
        if not args.archs:
            raise UsageError("sweep --mode data needs --archs FAMILY:WIDTH,...")
        archs = [ArchitectureConfig(f, w, group=args.group, dtype=args.dtype) for f, w in args.archs]
        train_data, test_data = _load_data(args)
        rows = sweep_data_fraction(archs, args.fractions, cfg, train_data, test_data, args.seeds)
    else:
        if not args.arch or not args.widths:
            raise UsageError("sweep --mode width needs --arch FAMILY and --widths W1,W2,...")
        ArchitectureConfig(args.arch, args.widths[0], group=args.group)  # validate before loading data
        train_data, test_data = _load_data(args)
        rows = sweep_width(args.arch, args.widths, cfg, train_data, test_data, args.seeds, args.group)
    text = rows_to_csv(rows)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_synth_data(args) -> int:
    train_data, test_data = synth_split(args.n, args.n_test or args.n, seed=args.seed)
    write_directory(args.out, train_data, test_data)
    print(f"wrote {len(train_data)} training and {len(test_data)} test images to {args.out} "
          f"({train_data.provenance})")
    return EXIT_OK


COMMANDS = {
    "check-equivariance": cmd_check_equivariance,
    "cost": cmd_cost,
    "analyze": cmd_analyze,
    "train": cmd_train,
    "sweep": cmd_sweep,
    "synth-data": cmd_synth_data,
}


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse prints usage itself
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        kernels.configure_threads()
        return COMMANDS[args.command](args)
    except (OSError, DataFormatError, TensorFormatError) as exc:
        print(f"sepgconv: error: {exc}", file=sys.stderr)
        return EXIT_IO
    except TrainingDivergedError as exc:
        print(f"sepgconv: error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (UsageError, ValueError, KeyError) as exc:
        print(f"sepgconv: error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
