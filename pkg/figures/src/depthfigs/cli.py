"""Command line front end: ``figures <kind> --in results.csv --out fig.png``."""

import argparse
import sys

from .io import SchemaError
from .plots import PlotJob, render


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="figures",
        description="Render figures from experiment CSVs (read-only).",
    )
    sub = parser.add_subparsers(dest="kind", required=True)
    helps = {
        "sweep": "per-trial depth sweep with a median overlay",
        "histogram": "distribution of one ratio quantity",
        "heatmap": "(Hurst, beta) regime map",
        "paths": "example cumulative weight trajectories",
    }
    for kind, text in helps.items():
        p = sub.add_parser(kind, help=text)
        p.add_argument("--in", dest="src", required=True, metavar="CSV")
        p.add_argument("--out", dest="out", required=True, metavar="IMAGE")
        p.add_argument("--dpi", type=int, default=150)
        if kind == "sweep":
            p.add_argument("--quantity", default="output_ratio")
            p.add_argument("--linear-y", action="store_true",
                           help="keep the value axis linear")
        elif kind == "histogram":
            p.add_argument("--quantity", default="output_norm_ratio")
            p.add_argument("--bins", type=int, default=60)
        elif kind == "heatmap":
            p.add_argument("--which", choices=("output", "gradient"),
                           default="output")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    options = {"dpi": args.dpi}
    if args.kind in ("sweep", "histogram"):
        options["quantity"] = args.quantity
    if args.kind == "sweep":
        options["logy"] = not args.linear_y
    elif args.kind == "histogram":
        options["bins"] = args.bins
    elif args.kind == "heatmap":
        options["which"] = args.which

    try:
        info = render(PlotJob(src=args.src, kind=args.kind, out=args.out,
                              options=options))
    except SchemaError as exc:
        print(f"figures: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"figures: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {info['out']}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
