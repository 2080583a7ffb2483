"""Command line: zuco-convert --version 1.0 --task NR --in <dir|files> --out <dir>."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .convert import ConvertError, ZucoSource, convert


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="zuco-convert", description=__doc__)
    parser.add_argument("--version", required=True, choices=["1.0", "2.0"], dest="dataset_version")
    parser.add_argument("--task", required=True, choices=["NR", "TSR"])
    parser.add_argument("--in", required=True, nargs="+", dest="inputs",
                        help="directory of .mat files or explicit file paths")
    parser.add_argument("--out", required=True)
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        inputs = [Path(p) for p in args.inputs]
        if len(inputs) == 1 and inputs[0].is_dir():
            source = ZucoSource.from_dir(inputs[0], args.dataset_version, args.task)
        else:
            source = ZucoSource(version=args.dataset_version, task=args.task, files=inputs)
        out = convert(source, args.out)
    except ConvertError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    print(f"corpus written to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
