"""Per-module learnable-scalar counts for a model config.

Usage: python3 scripts/param_audit.py [CONFIG]   (default: configs/vim2_tiny.json)
"""

import argparse
import json
import sys
from pathlib import Path

from ssmixer.params import param_count

DEFAULT = Path(__file__).parent / "configs" / "vim2_tiny.json"


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("config", nargs="?", type=Path, default=DEFAULT)
    cfg = json.loads(ap.parse_args().config.read_text())
    total, parts = param_count(cfg.get("model", cfg))
    width = max(len(k) for k in parts)
    for k, v in parts.items():
        print(f"{k:<{width}}  {v:>12,d}")
    print(f"{'total':<{width}}  {total:>12,d}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
