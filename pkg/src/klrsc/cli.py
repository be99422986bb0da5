"""``klrsc`` command-line tool.

Standard output carries data only (tables, CSV); logs and summaries go to
standard error.  Exit codes: 0 success, 1 I/O, 2 configuration, 3 pipeline.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import bench
from .config import MODES, ConfigError, SrConfig, apply_overrides, load_config
from .imgcore import read_image, write_image
from .pipeline import upscale_color
from .pyramid import build_dictionary, build_pyramids

log = logging.getLogger("klrsc")

EXIT_IO, EXIT_CONFIG, EXIT_PIPELINE = 1, 2, 3


class CliFailure(Exception):
    def __init__(self, msg: str, code: int):
        super().__init__(msg)
        self.code = code


def resolve_config(args) -> SrConfig:
    path = args.config or os.environ.get("KLRSC_CONFIG")
    cfg = SrConfig()
    if path:
        try:
            cfg = load_config(path)
        except OSError as exc:
            raise CliFailure(f"cannot read config {path}: {exc.strerror or exc}", EXIT_IO) from None
        except ConfigError as exc:
            raise ConfigError(f"{path}: {exc.detail}", exc.key, exc.line) from None
    cfg = apply_overrides(cfg, args.set or [])
    if args.threads is not None:
        cfg = cfg.replace(threads=args.threads)
    return cfg


def _read(path: str) -> np.ndarray:
    p = Path(path)
    if not p.is_file():
        raise CliFailure(f"input not found: {p}", EXIT_IO)
    try:
        return read_image(p)
    except OSError as exc:
        raise CliFailure(f"cannot read image {p}: {exc}", EXIT_IO) from None


def report_path(output: Path) -> Path:
    return output.with_name(output.stem + ".report.jsonl")


def cmd_upscale(args) -> int:
    cfg = resolve_config(args)
    raster = _read(args.input)
    out, report = upscale_color(raster, cfg)
    dest = Path(args.output)
    try:
        write_image(dest, out)
        report_path(dest).write_text(report.to_jsonl())
    except OSError as exc:
        raise CliFailure(f"cannot write {dest}: {exc}", EXIT_IO) from None
    h, w = report.output_shape
    print(f"{args.input} -> {dest} ({w}x{h}, mode {cfg.mode}, {report.seconds:.1f}s)", file=sys.stderr)
    for flag in report.flags:
        print(f"warning: {flag}", file=sys.stderr)
    return 0


def _parse_modes(text: str | None) -> list[str]:
    if not text:
        return list(MODES)
    modes = [m.strip() for m in text.split(",") if m.strip()]
    bad = [m for m in modes if m not in MODES]
    if bad:
        raise ConfigError(f"unknown mode(s) {', '.join(bad)}; choose from {', '.join(MODES)}", "modes")
    return modes


def cmd_bench(args) -> int:
    cfg = resolve_config(args)
    modes = _parse_modes(args.modes)
    image_dir = Path(args.dir) if args.dir else bench.DESK_DIR
    if not image_dir.is_dir() or not bench.list_images(image_dir):
        raise CliFailure(f"no images found in {image_dir}", EXIT_IO)
    report = bench.run_benchmark(image_dir, cfg, modes, workers=max(args.workers, 1))
    if args.csv:
        try:
            Path(args.csv).write_text(report.to_csv())
        except OSError as exc:
            raise CliFailure(f"cannot write {args.csv}: {exc}", EXIT_IO) from None
    print(report.table())
    for name, msg in report.failures:
        print(f"error: {name}: {msg}", file=sys.stderr)
    return EXIT_PIPELINE if report.failures else 0


def _luma(path: str) -> np.ndarray:
    from .imgcore import rgb_to_luma_chroma

    return rgb_to_luma_chroma(_read(path))[0]


def _print_hist(values: np.ndarray, bins: int, upper: float | None = None) -> None:
    counts, edges = bench.histogram(values, bins, upper)
    print("lo,hi,count")
    for lo, hi, c in zip(edges[:-1], edges[1:], counts):
        print(f"{lo:.4f},{hi:.4f},{c}")


def cmd_scn(args) -> int:
    cfg = resolve_config(args)
    img = _luma(args.input)
    modes = [m for m in _parse_modes(args.modes or "SC,LRSC,KLRSC") if m != "KLRSC+AR"]
    res = bench.scn_study(img, cfg, modes, max_pairs=args.pairs)
    print("mode,pairs,median,mean")
    for m, v in res.items():
        print(f"{m},{v.size},{np.median(v):.6f},{np.mean(v):.6f}")
    if args.bins:
        upper = max(float(v.max()) for v in res.values() if v.size)
        for m, v in res.items():
            print(f"# {m}")
            _print_hist(v, args.bins, upper)
    return 0


def cmd_nucnorm(args) -> int:
    cfg = resolve_config(args)
    vals = bench.nuclear_norm_study(_luma(args.input), cfg, max_samples=args.samples)
    bound = cfg.k_nonlocal + 1
    print(f"# matrices={vals.size} max={vals.max():.6f} median={np.median(vals):.6f} "
          f"share_below_{bound - 1}={np.mean(vals < bound - 1):.4f}")
    _print_hist(vals, args.bins, float(bound))
    return 0


def cmd_dict_dump(args) -> int:
    cfg = resolve_config(args)
    img = _luma(args.input)
    d = build_dictionary(build_pyramids(img, cfg), cfg)
    try:
        d.save(args.output)
    except OSError as exc:
        raise CliFailure(f"cannot write {args.output}: {exc}", EXIT_IO) from None
    print(f"atoms={d.K} feature_dim={d.L.shape[0]} patch_dim={d.H.shape[0]}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", help="config file (key = value lines); falls back to $KLRSC_CONFIG")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
    common.add_argument("--threads", type=int, default=None, help="worker threads for patch coding (0 = serial)")
    common.add_argument("--seed", type=int, default=None, help="reserved; the pipeline is deterministic")
    common.add_argument("-v", "--verbose", action="count", default=0)

    ap = argparse.ArgumentParser(prog="klrsc", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("upscale", parents=[common], help="super-resolve one image")
    p.add_argument("-i", "--input", required=True)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_upscale)

    p = sub.add_parser("bench", parents=[common], help="degrade, restore and score a directory")
    p.add_argument("-d", "--dir", help="image directory (default: bundled desk set)")
    p.add_argument("--modes", help=f"comma-separated subset of {','.join(MODES)}")
    p.add_argument("--csv", help="write per-image results here")
    p.add_argument("--workers", type=int, default=1, help="images processed in parallel")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("scn", parents=[common], help="sparse coding noise per coding mode")
    p.add_argument("-i", "--input", required=True)
    p.add_argument("--modes")
    p.add_argument("--pairs", type=int, default=2500)
    p.add_argument("--bins", type=int, default=0, help="also print histograms with this many bins")
    p.set_defaults(func=cmd_scn)

    p = sub.add_parser("nucnorm", parents=[common], help="nuclear norms of mapped nonlocal matrices")
    p.add_argument("-i", "--input", required=True)
    p.add_argument("--samples", type=int, default=None)
    p.add_argument("--bins", type=int, default=21)
    p.set_defaults(func=cmd_nucnorm)

    p = sub.add_parser("dict-dump", parents=[common], help="build and save the self-example dictionary")
    p.add_argument("-i", "--input", required=True)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_dict_dump)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - mapped to the pipeline exit code
        log.debug("pipeline failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_PIPELINE


if __name__ == "__main__":
    sys.exit(main())
