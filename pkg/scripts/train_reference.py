"""Train the reference model used by the acceptance suite.

    python scripts/train_reference.py [--config configs/reference.yaml] [--out artifacts/reference]
"""

import argparse
import json
import sys
from pathlib import Path

from rdvla.harness.config import load_config
from rdvla.harness.experiments import run_training

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default=str(ROOT / "configs" / "reference.yaml"))
    ap.add_argument("--out", default=str(ROOT / "artifacts" / "reference"))
    args = ap.parse_args()
    cfg = load_config(args.config)
    _, _, summary = run_training(cfg, args.out, run_id="reference", log=lambda m: print(m, flush=True))
    print(json.dumps(summary, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
