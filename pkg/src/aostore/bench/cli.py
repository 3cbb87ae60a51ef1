"""``bench`` command line.

    bench run --mode offload --backends 1 --seeds 0..19 --out out/
    bench run --mode cascade --backends 4 --block-size 128 --seeds 0..2
    bench run --mode baseline --backends 0 --seeds 0,1,2

For offload runs, ``AOS_METADATA=host:port`` points the harness at an
already running deployment instead of launching one.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .experiments import MODES, ExperimentSpec, run
from .report import emit_report

METADATA_ENV = "AOS_METADATA"


def parse_seeds(text: str) -> list[int]:
    """``0..19`` (inclusive), ``1,4,9``, or a mix such as ``0..3,7``."""
    seeds: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if ".." in part:
            lo, hi = part.split("..", 1)
            a, b = int(lo), int(hi)
            if b < a:
                raise argparse.ArgumentTypeError(f"empty seed range {part!r}")
            seeds.extend(range(a, b + 1))
        else:
            seeds.append(int(part))
    if not seeds:
        raise argparse.ArgumentTypeError("no seeds given")
    return sorted(set(seeds))


def parse_throttle(text: str) -> tuple[int, float]:
    try:
        ident, factor = text.split(":", 1)
        pair = int(ident), float(factor)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected backend_id:factor, got {text!r}") from None
    if pair[1] < 1.0:
        raise argparse.ArgumentTypeError("throttle factor must be >= 1")
    return pair


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bench", description="Active object store benchmarks")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one experiment and write its report")
    r.add_argument("--mode", choices=MODES, required=True)
    r.add_argument("--backends", type=int, default=None,
                   help="backend processes (cascade: largest count of the doubling sequence)")
    r.add_argument("--seeds", type=parse_seeds, default=list(range(20)))
    r.add_argument("--block-size", type=int, default=128, help="small-regime points per block")
    r.add_argument("--throttle", type=parse_throttle, action="append", default=[],
                   metavar="ID:FACTOR")
    r.add_argument("--latency-ms", type=float, default=0.0)
    r.add_argument("--labels", default=None, help="comma-separated backend labels")
    r.add_argument("--out", default="bench-out")
    r.add_argument("--series-length", type=int, default=2000)
    r.add_argument("--dataset-seed", type=int, default=0)
    r.add_argument("--csv", dest="csv_path", default=None, help="timestamp,cpu,mem series")
    r.add_argument("--epochs", type=int, default=100)
    r.add_argument("--server-backend", type=int, default=1)
    r.add_argument("--points-per-backend", type=int, default=1024)
    r.add_argument("--regimes", default="small,large")
    return ap


def spec_from_args(args: argparse.Namespace) -> ExperimentSpec:
    backends = args.backends
    if backends is None:
        backends = 0 if args.mode == "baseline" else 1
    return ExperimentSpec(
        mode=args.mode, backends=backends,
        labels=args.labels.split(",") if args.labels else None,
        throttle=dict(args.throttle), latency_ms=args.latency_ms, seeds=args.seeds,
        out=args.out, series_length=args.series_length, dataset_seed=args.dataset_seed,
        csv_path=args.csv_path, epochs=args.epochs, server_backend=args.server_backend,
        points_per_backend=args.points_per_backend, block_size=args.block_size,
        regimes=tuple(x for x in args.regimes.split(",") if x),
        metadata=os.environ.get(METADATA_ENV) if args.mode == "offload" else None,
    )


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec = spec_from_args(args)
    except ValueError as exc:
        print(f"bench: {exc}", file=sys.stderr)
        return 2
    result = run(spec)
    files = emit_report(result, spec.out)
    summary = {"partial": result.partial, **{k: str(v) for k, v in files.items()}}
    if "doubling_ratios" in result.extra:
        summary["doubling_ratios"] = result.extra["doubling_ratios"]
    print(json.dumps(summary))
    return 1 if result.partial else 0


if __name__ == "__main__":
    sys.exit(main())
