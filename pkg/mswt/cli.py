"""Command-line interface: ``mswt <subcommand> ...``.

Exit codes: 0 success, 2 usage or configuration error, 3 data or file error,
4 numerical or differentiation failure (including a failed ablation gain check).
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from typing import TYPE_CHECKING, Any

from .checkpoint import load_checkpoint
from .config import RunConfig, load_config
from .emd import DEFAULT_BINS, emd_report
from .errors import ConfigError, DataError, FormatError, GraphError, NumericalError, ShapeError
from .export import dump_subbands, export_attention
from .gradcheck import SUITES, run_suite
from .model import ABLATION_MODES
from .ppm import read_ppm
from .synth import CorpusSpec, load_corpus, make_corpus
from .train import ABLATION_ORDER, evaluate_checkpoint, run_ablation, train

if TYPE_CHECKING:
    from collections.abc import Sequence

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4

# RunConfig fields settable by flag
_RUN_FLAGS = ("corpus", "mode", "iters", "batch", "lr", "step_size", "seed", "out", "eval_every")


def _run_config(args: argparse.Namespace) -> RunConfig:
    overrides: dict[str, Any] = {
        flag: getattr(args, flag) for flag in _RUN_FLAGS if getattr(args, flag, None) is not None
    }
    if args.no_hflip:
        overrides["hflip"] = False
    if args.config:
        return load_config(RunConfig, args.config, overrides)
    base = RunConfig.desk() if args.desk else RunConfig()
    return dataclasses.replace(base, **overrides)


def _add_run_flags(parser: argparse.ArgumentParser, *, with_mode: bool = True) -> None:
    parser.add_argument("--config", help="flat 'key = value' run configuration; flags override it")
    parser.add_argument("--desk", action="store_true", help="short preset: 3000 iterations, step size 1000")
    parser.add_argument("--corpus", help="corpus directory")
    if with_mode:
        parser.add_argument("--mode", choices=ABLATION_MODES)
    parser.add_argument("--iters", type=int)
    parser.add_argument("--batch", type=int)
    parser.add_argument("--lr", type=float)
    parser.add_argument("--step-size", dest="step_size", type=int)
    parser.add_argument("--eval-every", dest="eval_every", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--no-hflip", dest="no_hflip", action="store_true", help="disable horizontal flips")


def _gen_corpus(args: argparse.Namespace) -> int:
    spec = CorpusSpec(
        seed=args.seed,
        train=args.train,
        val=args.val,
        test=args.test,
        image_size=args.size,
        strength=args.strength,
    )
    make_corpus(spec, args.out)
    return EXIT_OK


def _train(args: argparse.Namespace) -> int:
    result = train(_run_config(args))
    logger.info("checkpoint %s, metrics %s", result.checkpoint, result.metrics_log)
    return EXIT_OK


def _eval(args: argparse.Namespace) -> int:
    result = evaluate_checkpoint(args.checkpoint, args.corpus, args.split)
    print(f"frame  acc={result.frame.acc:.4f} auc={result.frame.auc:.4f} n={result.frame.n_frames}")
    if args.video_level:
        print(f"video  acc={result.video.acc:.4f} auc={result.video.auc:.4f} n={result.video.n_videos}")
    return EXIT_OK


def _emd_analyze(args: argparse.Namespace) -> int:
    real, fake = load_corpus(args.corpus).load_pairs(args.split, args.pairs)
    report = emd_report(real, fake, depth=args.levels, bins=args.bins)
    report.write_csv(args.out)
    for row, band, value in report.rows():
        print(f"{row:8s} {band:5s} {value:.4f}")
    if not report.high_exceeds_low():
        logger.warning("high-band EMD does not exceed LL at every level")
    return EXIT_OK


def _dwt_dump(args: argparse.Namespace) -> int:
    dump_subbands(read_ppm(args.image), args.out, depth=args.levels)
    return EXIT_OK


def _gradcheck(args: argparse.Namespace) -> int:
    reports = run_suite(args.module, max_checks=args.max_checks or None)
    failed = [report.name for report in reports if not report.passed]
    for report in reports:
        print(f"{report.name:20s} {'ok' if report.passed else 'FAIL':4s} worst_rel={report.worst_rel:.2e}")
    if failed:
        logger.error("gradient check failed for %s", ", ".join(failed))
        return EXIT_NUMERICAL
    return EXIT_OK


def _export_attention(args: argparse.Namespace) -> int:
    export_attention(load_checkpoint(args.checkpoint), read_ppm(args.image), args.out)
    return EXIT_OK


def _ablate(args: argparse.Namespace) -> int:
    report = run_ablation(_run_config(args), seeds=tuple(args.seeds), modes=tuple(args.modes), strict=False)
    for mode, value in report.means.items():
        print(f"{mode:14s} mean_auc={value:.4f}")
    for low, high, gap in report.gaps():
        print(f"{low} -> {high}: {gap:+.4f}")
    report.check_full_gain()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mswt", description="Multi-scale wavelet forgery detector toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser("gen-corpus", help="generate the synthetic real/fake corpus")
    gen.add_argument("--seed", type=int, default=7)
    gen.add_argument("--out", required=True)
    gen.add_argument("--train", type=int, default=2000)
    gen.add_argument("--val", type=int, default=200)
    gen.add_argument("--test", type=int, default=500)
    gen.add_argument("--size", type=int, default=64)
    gen.add_argument("--strength", type=float, default=1.5)
    gen.set_defaults(handler=_gen_corpus)

    run = commands.add_parser("train", help="train a model on a corpus")
    _add_run_flags(run)
    run.set_defaults(handler=_train)

    evaluation = commands.add_parser("eval", help="evaluate a checkpoint on a corpus split")
    evaluation.add_argument("--checkpoint", required=True)
    evaluation.add_argument("--corpus", required=True)
    evaluation.add_argument("--split", default="test")
    evaluation.add_argument("--video-level", dest="video_level", action="store_true")
    evaluation.set_defaults(handler=_eval)

    emd = commands.add_parser("emd-analyze", help="sub-band EMD between paired real and fake frames")
    emd.add_argument("--corpus", required=True)
    emd.add_argument("--split", default="test")
    emd.add_argument("--levels", type=int, default=3)
    emd.add_argument("--bins", type=int, default=DEFAULT_BINS)
    emd.add_argument("--pairs", type=int, default=None, help="limit on the number of pairs")
    emd.add_argument("--out", required=True, help="CSV report path")
    emd.set_defaults(handler=_emd_analyze)

    dump = commands.add_parser("dwt-dump", help="write the Haar sub-bands of a PPM image as PNGs")
    dump.add_argument("--image", required=True)
    dump.add_argument("--levels", type=int, default=3)
    dump.add_argument("--out", required=True)
    dump.set_defaults(handler=_dwt_dump)

    check = commands.add_parser("gradcheck", help="finite-difference gradient checks")
    check.add_argument("--module", choices=(*SUITES, "all"), default="all")
    check.add_argument("--max-checks", dest="max_checks", type=int, default=20, help="entries per input; 0 for all")
    check.set_defaults(handler=_gradcheck)

    attention = commands.add_parser("export-attention", help="write a checkpoint's attention maps for one image")
    attention.add_argument("--checkpoint", required=True)
    attention.add_argument("--image", required=True)
    attention.add_argument("--out", required=True)
    attention.set_defaults(handler=_export_attention)

    ablate = commands.add_parser("ablate", help="train and compare ablation modes over several seeds")
    _add_run_flags(ablate, with_mode=False)
    ablate.add_argument("--seeds", type=int, nargs="+", default=[7, 8, 9])
    ablate.add_argument("--modes", nargs="+", choices=ABLATION_MODES, default=list(ABLATION_ORDER))
    ablate.set_defaults(handler=_ablate)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.handler(args)
    except ConfigError as err:
        logger.error("configuration error: %s", err)
        return EXIT_USAGE
    except (DataError, FormatError, ShapeError, OSError) as err:
        logger.error("data error: %s", err)
        return EXIT_DATA
    except (NumericalError, GraphError) as err:
        logger.error("numerical failure: %s", err)
        return EXIT_NUMERICAL


__all__ = ["EXIT_DATA", "EXIT_NUMERICAL", "EXIT_OK", "EXIT_USAGE", "build_parser", "main"]


if __name__ == "__main__":
    sys.exit(main())
