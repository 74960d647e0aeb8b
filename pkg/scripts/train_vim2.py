"""Desk ViM2 classification run on the 3-class toy shapes.

Stops once validation accuracy reaches 0.9.
Usage: python3 scripts/train_vim2.py [--out runs/vim2] [--seed 0]
"""

import argparse
import sys

from ssmixer.train import desk_vim2, train


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="runs/vim2")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rec = train(desk_vim2(args.out, args.seed))
    for row in rec.rows:
        print(f"epoch {row['epoch']:3d}  train {row['train_loss']:.4f}  "
              f"val_loss {row['val_loss']:.4f}  acc {row['val_acc']:.3f}")
    print(f"target reached at epoch {rec.reached_at}" if rec.reached_at else "target not reached")
    return 0 if rec.reached_at else 1


if __name__ == "__main__":
    sys.exit(main())
