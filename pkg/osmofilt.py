"""Command line front end for linear image osmosis filtering.

Examples:
    python osmofilt.py filter --input f.pgm --reference v.pgm --scheme aos --tau 1000 --T 1e5 --out u.pgm
    python osmofilt.py filter --input f.png --mask shadow.png --scheme amos --tau 1000 --T 1e5 --out u.png
    python osmofilt.py mosaic --input m.pgm --layout frames.json --scheme aos --tau 1000 --T 1e5 --out m_bal.pgm
    python osmofilt.py calibrate --input raw.pfm --uref 3120 --rref 0.95 --out r.pfm
    python osmofilt.py bench --image mandrill.png --schemes pr,aos,mos,amos,implicit --out table.csv

Exit codes: 0 success, 1 usage or configuration error, 2 I/O error,
3 numerical failure.
"""

import argparse
import logging
import os
import sys
from typing import Callable, List, Optional, Sequence

import numpy as np

from benchmark import run_benchmark, smoothed_reference, write_table
from config import (
    DEFAULT_BENCH_SIGMA,
    DEFAULT_BENCH_T,
    DEFAULT_BENCH_TAUS,
    RuntimeSettings,
    load_runtime_settings,
)
from core import OsmosisError, PositiveImage, ShapeMismatchError
from discretize import drift_from_reference
from image_io import (
    FileFormatError,
    format_for,
    load_channels,
    load_layout,
    read_array,
    read_header,
    save_channels,
    save_image,
    save_trace,
)
from integrators import DiagnosticsTrace, NonFiniteStateError, Scheme, SchemeConfig, evolve
from pipeline import balance_mosaic, calibrate_reflectance, edge_mask_from_region, remove_shadow
from solvers import ZeroPivotError, configure_threads

logger = logging.getLogger("osmofilt")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_NUMERICAL = 3

LOG_FORMAT = "%(asctime)s [%(levelname)s] %(name)s: %(message)s"
SCHEME_CHOICES = [s.value for s in Scheme]


class _Parser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors exit with code 1."""

    def error(self, message: str) -> None:
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _setup_logging(settings: RuntimeSettings) -> None:
    handlers: List[logging.Handler] = [logging.StreamHandler()]
    if settings.log_file:
        handlers.append(logging.FileHandler(settings.log_file, encoding="utf-8"))
    logging.basicConfig(level=settings.log_level, format=LOG_FORMAT, handlers=handlers)


def _float_list(text: str) -> List[float]:
    try:
        values = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def _scheme_list(text: str) -> List[Scheme]:
    try:
        return [Scheme.parse(x) for x in text.split(",") if x.strip()]
    except OsmosisError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


# --- Helpers shared by the commands ---


def _scheme_config(args: argparse.Namespace) -> SchemeConfig:
    return SchemeConfig(
        scheme=Scheme.parse(args.scheme),
        tau=args.tau,
        T=args.T,
        stop_tol=args.stop_tol,
        parallel_branches=args.parallel_branches,
    )


def _trace_paths(path: str, count: int) -> List[str]:
    if count == 1:
        return [path]
    stem, ext = os.path.splitext(path)
    return [f"{stem}_c{k}{ext or '.csv'}" for k in range(count)]


def _write_outputs(outputs: Sequence[np.ndarray], traces: Sequence[DiagnosticsTrace], args: argparse.Namespace) -> None:
    info = read_header(args.input)
    save_channels(outputs, args.out, format_for(args.out, info.maxval))
    logger.info("Wrote %s.", args.out)
    if args.diag:
        for trace, path in zip(traces, _trace_paths(args.diag, len(traces))):
            save_trace(trace, path)
            logger.info("Wrote diagnostics %s (%d rows).", path, len(trace))


def _reference_channels(path: str, channels: Sequence[PositiveImage], h: float) -> List[PositiveImage]:
    refs = load_channels(path, h=h)
    if len(refs) == 1 and len(channels) > 1:
        refs = refs * len(channels)
    if len(refs) != len(channels):
        raise ShapeMismatchError(
            "Reference channel count differs from the input", expected=(len(channels),), actual=(len(refs),)
        )
    for ref, f in zip(refs, channels):
        if ref.shape != f.shape:
            raise ShapeMismatchError("Reference size differs from the input", expected=f.shape, actual=ref.shape)
    return refs


# --- Commands ---


def cmd_filter(args: argparse.Namespace) -> int:
    """Evolve the input towards the drift of a reference image or of itself with a shadow mask."""
    channels = load_channels(args.input, h=args.grid_spacing)
    cfg = _scheme_config(args)
    outputs, traces = [], []

    if args.reference:
        for f, v in zip(channels, _reference_channels(args.reference, channels, args.grid_spacing)):
            u, trace = evolve(f, drift_from_reference(v), cfg)
            outputs.append(u)
            traces.append(trace)
    else:
        region = read_array(args.mask)
        if region.ndim == 3:
            region = region.max(axis=2)
        if region.shape != channels[0].shape:
            raise ShapeMismatchError("Mask size differs from the input", expected=channels[0].shape, actual=region.shape)
        boundary = edge_mask_from_region(region > 0)
        for f in channels:
            u, trace = remove_shadow(f, boundary, cfg)
            outputs.append(u)
            traces.append(trace)

    _write_outputs(outputs, traces, args)
    return EXIT_OK


def cmd_mosaic(args: argparse.Namespace) -> int:
    """Balance the light of a mosaic described by a layout file."""
    channels = load_channels(args.input, h=args.grid_spacing)
    layout = load_layout(args.layout)
    cfg = _scheme_config(args)
    outputs, traces = [], []
    for f in channels:
        u, trace = balance_mosaic(f, layout, cfg)
        outputs.append(u)
        traces.append(trace)
    _write_outputs(outputs, traces, args)
    return EXIT_OK


def cmd_calibrate(args: argparse.Namespace) -> int:
    """Convert raw radiometric data into reflectance."""
    raw = read_array(args.input)
    reflectance = calibrate_reflectance(raw, args.uref, args.rref)
    if format_for(args.out) != "pfm":
        logger.warning("Reflectance lies in [0, 1]; integer output %s will be rounded. Prefer .pfm.", args.out)
    save_image(reflectance, args.out)
    logger.info("Wrote %s.", args.out)
    return EXIT_OK


def cmd_bench(args: argparse.Namespace) -> int:
    """Compare schemes by elapsed time and energy error at a common final time."""
    channels = load_channels(args.image)
    if len(channels) == 1:
        f = channels[0]
    else:
        logger.info("Averaging %d channels of %s into one grey image.", len(channels), args.image)
        f = PositiveImage(np.mean([c.data for c in channels], axis=0), eps_min=min(c.eps_min for c in channels))

    if args.reference:
        v = _reference_channels(args.reference, [f], 1.0)[0]
    else:
        logger.info("Using a Gaussian-smoothed copy of the image (sigma=%g) as reference.", args.sigma)
        v = smoothed_reference(f, args.sigma)

    records = run_benchmark(f, v, args.schemes, args.taus, args.T)
    write_table(records, args.out)
    logger.info("Wrote %d bench row(s) to %s.", len(records), args.out)
    return EXIT_OK


# --- Argument parsing ---


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--threads", type=int, default=None, help="cap on line-solve threads (env OSMOFILT_THREADS)")

    evolution = _Parser(add_help=False)
    evolution.add_argument("--input", required=True, help="input image (PGM, PNG or PFM)")
    evolution.add_argument("--scheme", required=True, choices=SCHEME_CHOICES + ["implicit-full"])
    evolution.add_argument("--tau", type=float, required=True, help="time step")
    evolution.add_argument("--T", type=float, required=True, help="final time")
    evolution.add_argument("--stop-tol", type=float, default=None, help="stop once the relative change drops below this")
    evolution.add_argument("--out", required=True, help="output image")
    evolution.add_argument("--diag", default=None, help="diagnostics CSV")
    evolution.add_argument("--grid-spacing", type=float, default=1.0, help="grid spacing h")
    evolution.add_argument(
        "--parallel-branches", action="store_true", help="run the two AOS/AMOS branches concurrently"
    )

    parser = _Parser(prog="osmofilt", description="Linear image osmosis filtering.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_filter = sub.add_parser("filter", parents=[common, evolution], help="osmosis filter with a reference or a shadow mask")
    source = p_filter.add_mutually_exclusive_group(required=True)
    source.add_argument("--reference", help="reference image whose drift drives the evolution")
    source.add_argument("--mask", help="region mask image (0 keep, non-zero region); its perimeter drift is zeroed")
    p_filter.set_defaults(handler=cmd_filter)

    p_mosaic = sub.add_parser("mosaic", parents=[common, evolution], help="light balance of a mosaic")
    p_mosaic.add_argument("--layout", required=True, help="frame layout JSON")
    p_mosaic.set_defaults(handler=cmd_mosaic)

    p_cal = sub.add_parser("calibrate", parents=[common], help="reflectance calibration with an in-scene target")
    p_cal.add_argument("--input", required=True)
    p_cal.add_argument("--uref", type=float, required=True, help="raw response of the calibration target")
    p_cal.add_argument("--rref", type=float, required=True, help="reflectance of the calibration target")
    p_cal.add_argument("--out", required=True)
    p_cal.set_defaults(handler=cmd_calibrate)

    p_bench = sub.add_parser("bench", parents=[common], help="elapsed time versus energy error")
    p_bench.add_argument("--image", required=True)
    p_bench.add_argument("--schemes", type=_scheme_list, default=_scheme_list("pr,aos,mos,amos,implicit"))
    p_bench.add_argument("--taus", type=_float_list, default=list(DEFAULT_BENCH_TAUS))
    p_bench.add_argument("--T", type=float, default=DEFAULT_BENCH_T)
    p_bench.add_argument("--out", required=True, help="CSV table")
    p_bench.add_argument("--reference", default=None, help="reference image (default: smoothed copy of --image)")
    p_bench.add_argument("--sigma", type=float, default=DEFAULT_BENCH_SIGMA, help="smoothing of the default reference")
    p_bench.set_defaults(handler=cmd_bench)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE

    settings = load_runtime_settings(args.threads)
    _setup_logging(settings)
    configure_threads(settings.threads)

    handler: Callable[[argparse.Namespace], int] = args.handler
    try:
        return handler(args)
    except (NonFiniteStateError, ZeroPivotError) as e:
        logger.error("Numerical failure: %s", e)
        return EXIT_NUMERICAL
    except (FileFormatError, OSError) as e:
        logger.error("I/O error: %s", e)
        return EXIT_IO
    except (OsmosisError, ValueError) as e:
        logger.error("%s", e)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
