"""``ssmixer`` command line: verify, gen-data, train, eval, bench, params."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from .errors import ConfigError, ValidationError


def _write_csv(rows: list[dict], out: str | None) -> None:
    if not rows:
        return
    fh = open(out, "w", newline="") if out else sys.stdout
    try:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    finally:
        if out:
            fh.close()


def cmd_verify(args) -> int:
    from .verify import format_report, run_verify

    results = run_verify(args.suite)
    report = format_report(results)
    if args.out:
        Path(args.out).write_text(report + "\n")
    print(report)
    return 0 if all(r.passed for r in results) else 1


def cmd_gen_data(args) -> int:
    from .data import save_dataset

    kw = {"ts": dict(M=args.vars, T=args.length), "img": dict(classes=args.classes, n=args.n)}[args.kind]
    for path in save_dataset(Path(args.out), args.kind, args.seed, **kw):
        print(path)
    return 0


def cmd_train(args) -> int:
    from .train import ExperimentConfig, train

    cfg = ExperimentConfig.load(args.config)
    if args.out:
        cfg.out_dir = args.out
    rec = train(cfg)
    print(f"wrote {rec.out_dir}; final {json.dumps(rec.final)}", file=sys.stderr)
    _write_csv(rec.rows, None)
    return 0


def cmd_eval(args) -> int:
    from .train import evaluate

    _write_csv([evaluate(args.ckpt, args.data)], args.out)
    return 0


def cmd_bench(args) -> int:
    from .bench import bench_scaling, parse_sizes

    rows = bench_scaling(args.component, parse_sizes(args.sizes), reps=args.reps, engine=args.engine)
    _write_csv([{"component": args.component, "size": r.size, "seconds": r.seconds,
                 "peak_bytes": r.peak_bytes} for r in rows], args.out)
    return 0


def cmd_params(args) -> int:
    from .params import param_count

    cfg = json.loads(Path(args.config).read_text())
    model_cfg = cfg.get("model", cfg) if isinstance(cfg.get("model"), dict) else cfg
    total, parts = param_count(model_cfg)
    rows = [{"module": k, "params": v} for k, v in parts.items()] + [{"module": "total", "params": total}]
    _write_csv(rows, args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ssmixer")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("verify", help="run the named invariant suite")
    s.add_argument("--suite", default="all", choices=["all", "scan", "grad", "reduce", "count"])
    s.add_argument("--out")
    s.set_defaults(fn=cmd_verify)

    s = sub.add_parser("gen-data", help="write a synthetic dataset as CSV")
    s.add_argument("--kind", required=True, choices=["ts", "img"])
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--vars", type=int, default=7)
    s.add_argument("--length", type=int, default=2000)
    s.add_argument("--classes", type=int, default=3)
    s.add_argument("--n", type=int, default=900)
    s.set_defaults(fn=cmd_gen_data)

    s = sub.add_parser("train", help="train from an experiment config")
    s.add_argument("--config", required=True)
    s.add_argument("--out")
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("eval", help="score a checkpoint on its validation split")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data")
    s.add_argument("--out")
    s.set_defaults(fn=cmd_eval)

    s = sub.add_parser("bench", help="time a mixer over a size ladder")
    s.add_argument("--component", required=True, choices=["token", "channel", "block"])
    s.add_argument("--sizes", default="4096:65536")
    s.add_argument("--reps", type=int, default=5)
    s.add_argument("--engine", default="parallel", choices=["sequential", "parallel", "fused"])
    s.add_argument("--out")
    s.set_defaults(fn=cmd_bench)

    s = sub.add_parser("params", help="count learnable scalars of a model config")
    s.add_argument("--config", required=True)
    s.add_argument("--out")
    s.set_defaults(fn=cmd_params)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, ValidationError, FileNotFoundError) as exc:
        print(f"ssmixer: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
