"""Manufactured-solution convergence study on the unit square.

    python scripts/run_mms.py --levels 4,8,16,32,64 --out results/mms
"""
import argparse
import logging
from pathlib import Path

from eqlyte.verify import run_convergence_study

logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s: %(message)s")

if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--levels", default="4,8,16,32")
    ap.add_argument("--out", default="results/mms")
    args = ap.parse_args()
    levels = [int(s) for s in args.levels.split(",")]
    table = run_convergence_study(levels)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table.write_csv(out / "convergence.csv")
    (out / "convergence.txt").write_text(table.to_text() + "\n")
    print(table.to_text())
    for k, rep in zip(levels, table.reports):
        print(f"h=1/{k}: {rep.iterations} Newton iterations, |r| = {rep.residual_norm:.2e}")
