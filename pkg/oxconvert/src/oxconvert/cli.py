"""Command line: ``oxconvert convert`` and ``oxconvert validate``."""

import argparse
import logging
import sys

from . import __version__
from .convert import CYCLES_PER_CHARACTERIZATION, convert_archive
from .errors import ConverterError
from .validate import validate_conversion


def _cmd_convert(args) -> int:
    summary = convert_archive(args.in_path, args.out,
                              args.cycles_per_char)
    for cell in summary.cells:
        print(f"{cell.cell_id}: {cell.characterizations} characterizations, "
              f"{cell.rows} rows -> {cell.filename}")
    print(f"wrote {len(summary.cells)} cells, {summary.total_rows} rows "
          f"to {summary.out_dir}")
    return 0


def _cmd_validate(args) -> int:
    report = validate_conversion(args.in_path, args.out)
    for line in report.lines():
        print(line)
    return 0 if report.ok else 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="oxconvert",
        description="Convert the cell-struct .mat archive to diagnostic "
                    "charge CSVs")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="write the CSV dataset")
    p.add_argument("--in", dest="in_path", required=True,
                   help=".mat archive path")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--cycles-per-char", dest="cycles_per_char", type=int,
                   default=CYCLES_PER_CHARACTERIZATION,
                   help="operating cycles between characterizations")
    p.set_defaults(func=_cmd_convert)

    p = sub.add_parser("validate", help="compare a written dataset "
                                        "against its source archive")
    p.add_argument("--in", dest="in_path", required=True,
                   help=".mat archive path")
    p.add_argument("--out", required=True, help="dataset directory")
    p.set_defaults(func=_cmd_validate)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConverterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
