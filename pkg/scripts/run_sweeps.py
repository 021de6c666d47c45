"""Regenerate the fixed-depth table, the adaptive-strategy table and the exit histograms.

    python scripts/run_sweeps.py [--checkpoint artifacts/reference/final.ckpt] [--out artifacts/sweeps]

Thin wrapper over the CLI so every table comes from the same code path.
"""

import argparse
import os
import sys
from pathlib import Path

from rdvla.harness.cli import main as cli

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--checkpoint", default=str(ROOT / "artifacts" / "reference" / "final.ckpt"))
    ap.add_argument("--out", default=str(ROOT / "artifacts" / "sweeps"))
    ap.add_argument("--episodes", default="100")
    args = ap.parse_args()
    ck = ["--checkpoint", args.checkpoint]
    steps = [
        ["sweep-depth", *ck, "--depths", "1,2,4,8,16,32", "--episodes", args.episodes, "--out", os.path.join(args.out, "depth")],
        ["calibrate-delta", *ck, "--target", "5.0", "--out", os.path.join(args.out, "calibration")],
        ["sweep-adaptive", *ck, "--strategy", "fixed,pure_kl,binary,linear_decay",
         "--delta", "1e-5,1e-4,3e-4,1e-3,3e-3,1e-2", "--episodes", args.episodes, "--out", os.path.join(args.out, "adaptive")],
    ]
    for argv in steps:
        print("$ rdvla", " ".join(argv), flush=True)
        code = cli(argv)
        if code:
            return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
