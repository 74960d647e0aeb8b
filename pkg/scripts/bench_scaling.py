"""Time and peak-allocation ladders for the token and channel mixers.

Prints one CSV row per size plus the doubling ratios.
Usage: python3 scripts/bench_scaling.py [--sizes 4096:65536] [--engine parallel]
"""

import argparse
import sys

from ssmixer.bench import bench_scaling, parse_sizes, ratios


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--sizes", default="4096:65536")
    ap.add_argument("--engine", default="parallel")
    ap.add_argument("--components", default="token,channel")
    args = ap.parse_args()
    print("component,size,seconds,peak_bytes")
    summary = []
    for comp in args.components.split(","):
        rows = bench_scaling(comp, parse_sizes(args.sizes), engine=args.engine)
        for r in rows:
            print(f"{comp},{r.size},{r.seconds:.6f},{r.peak_bytes}", flush=True)
        summary.append((comp, ratios(rows), ratios(rows, "peak_bytes")))
    for comp, t, m in summary:
        print(f"# {comp} time ratios {[round(v, 2) for v in t]} memory ratios {[round(v, 2) for v in m]}",
              file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
