"""qval-plot command line: one figure kind per invocation."""

from __future__ import annotations

import argparse
import sys

from .figures import KINDS, FigureSpec, SchemaError, render


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="qval-plot",
        description="Render qval CSV/JSON reports into figures.")
    p.add_argument("kind", choices=KINDS)
    p.add_argument("--in", dest="inputs", nargs="+", required=True,
                   help="input report file(s)")
    p.add_argument("--out", required=True, help="output image (.png or .svg)")
    p.add_argument("--ref-q", type=int, default=None,
                   help="cover degree for reference slope / threshold markers")
    p.add_argument("--size", default="6.4x4.8", help="figure size WxH in inches")
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return 0 if e.code == 0 else 2
    try:
        w, h = (float(v) for v in args.size.split("x"))
        spec = FigureSpec(args.kind, tuple(args.inputs), args.out,
                          ref_q=args.ref_q, size=(w, h))
        render(spec)
        return 0
    except SchemaError as e:
        print(f"schema error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - CLI boundary
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
