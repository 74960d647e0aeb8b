"""Desk TSM2 forecasting run on the synthetic coupled series.

Stops once validation MSE drops to 0.8x the persistence baseline.
Usage: python3 scripts/train_tsm2.py [--out runs/tsm2] [--seed 0]
"""

import argparse
import sys

from ssmixer.train import desk_tsm2, train


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="runs/tsm2")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rec = train(desk_tsm2(args.out, args.seed))
    for row in rec.rows:
        print(f"epoch {row['epoch']:3d}  train {row['train_loss']:.4f}  "
              f"val {row['val_mse']:.4f}  ratio {row['ratio']:.3f}")
    print(f"target reached at epoch {rec.reached_at}" if rec.reached_at else "target not reached")
    return 0 if rec.reached_at else 1


if __name__ == "__main__":
    sys.exit(main())
