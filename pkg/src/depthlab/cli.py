"""Command-line front end: one subcommand per experiment kind.

Precedence for every setting: built-in kind defaults, then the JSON
config file given with ``--config``, then explicit flags.  Depth grids
accept a comma list or ``start:stop``, which expands to 10 log-spaced
integers.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .harness import (
    KINDS,
    INIT_KINDS,
    ConfigError,
    ExperimentConfig,
    config_for,
    run,
)

_FIELDS = {f for f in ExperimentConfig.__dataclass_fields__}


def parse_depths(text: str) -> list:
    """'10:1000' -> 10 log-spaced ints; '8,16,32' -> that list."""
    text = text.strip()
    if ":" in text:
        lo, hi = (int(p) for p in text.split(":", 1))
        if lo < 1 or hi < lo:
            raise argparse.ArgumentTypeError("depths: need 1 <= start <= stop")
        grid = np.unique(np.round(np.geomspace(lo, hi, 10)).astype(int))
        return [int(v) for v in grid]
    return [int(p) for p in text.split(",") if p.strip()]


def parse_float_grid(text: str) -> list:
    """'0.2,0.5,1' -> that list; 'a:b' -> 10 evenly spaced values."""
    text = text.strip()
    if ":" in text:
        lo, hi = (float(p) for p in text.split(":", 1))
        return [round(float(v), 9) for v in np.linspace(lo, hi, 10)]
    return [float(p) for p in text.split(",") if p.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="depthlab",
        description="Deep residual networks at initialization: depth "
                    "scalings, stability ratios, and continuum limits.",
    )
    sub = parser.add_subparsers(dest="kind", required=True)
    for kind in KINDS:
        p = sub.add_parser(kind, help=f"run the {kind} experiment")
        p.add_argument("--config", type=Path, default=None,
                       help="JSON file of config fields (flags win)")
        p.add_argument("--arch", choices=("res1", "res2", "res3"))
        p.add_argument("--d", type=int)
        p.add_argument("--depths", type=parse_depths,
                       help="comma list or start:stop (10 log-spaced)")
        p.add_argument("--beta", type=float)
        p.add_argument("--betas", type=parse_float_grid,
                       help="comma list or start:stop (10 evenly spaced)")
        p.add_argument("--hurst", type=float)
        p.add_argument("--hursts", type=parse_float_grid,
                       help="comma list or start:stop (10 evenly spaced)")
        p.add_argument("--init", choices=INIT_KINDS)
        p.add_argument("--trials", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int)
        p.add_argument("--out", dest="out_dir", metavar="DIR")
        p.add_argument("--delta", type=float)
    return parser


def _merge_config(args: argparse.Namespace) -> ExperimentConfig:
    overrides = {}
    if args.config is not None:
        try:
            doc = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"config: cannot read {args.config}: {e}") from e
        if not isinstance(doc, dict):
            raise ConfigError("config: top level must be a JSON object")
        doc.pop("kind", None)
        unknown = set(doc) - _FIELDS
        if unknown:
            raise ConfigError(f"config: unknown fields {sorted(unknown)}")
        overrides.update(doc)
    for name in ("arch", "d", "depths", "beta", "betas", "hurst", "hursts",
                 "init", "trials", "seed", "workers", "out_dir", "delta"):
        val = getattr(args, name, None)
        if val is not None:
            overrides[name] = val
    return config_for(args.kind, **overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _merge_config(args)
        status, csv_path, manifest_path = run(cfg)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    print(f"wrote {csv_path} and {manifest_path}")
    if cfg.kind == "validate":
        failed = _print_validate_summary(csv_path)
        if failed:
            return 3
    return status


def _print_validate_summary(csv_path) -> int:
    """Echo one PASS/FAIL line per check; returns the failure count."""
    failed = 0
    with open(csv_path) as fh:
        header = fh.readline().rstrip("\n").split(",")
        idx = {name: i for i, name in enumerate(header)}
        for line in fh:
            cells = line.rstrip("\n").split(",")
            name = cells[idx["statistic"]]
            ok = cells[idx["passed"]] == "1"
            note = cells[idx["note"]]
            status = "PASS" if ok else ("SKIP" if note.startswith("vacuous")
                                        else "FAIL")
            failed += status == "FAIL"
            suffix = f"  ({note})" if note else ""
            print(f"  {status}  {name}{suffix}")
    return failed


if __name__ == "__main__":
    sys.exit(main())
