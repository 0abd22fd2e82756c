"""All scenario studies with default resolutions; fields go to ``--out``.

    python scripts/run_studies.py --out results --skip-3d
"""
import argparse
import logging
import time
from pathlib import Path

import numpy as np

from eqlyte import studies

log = logging.getLogger("run_studies")
logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s: %(message)s")


def compressible(out, dims):
    for dim in dims:
        t0 = time.perf_counter()
        res = studies.run_compressible(dim, out=out / "compressible")
        sec = res.section.values
        log.info("%dD: %d its in %.1fs, y_C %.3f -> %.3f along the section, n max %.3f",
                 dim, res.report.iterations, time.perf_counter() - t0,
                 sec["y_C"][0], sec["y_C"][-1], res.state.n.max())


def khat(out):
    rows = studies.run_khat_sweep(out=out / "khat")
    prev = None
    for r in rows:
        ratio = "" if prev is None else f"  ratio {prev / r['max_dev']:.2f}"
        print(f"Khat={r['Khat']:<7g} max|n-1|={r['max_dev']:.4e}  p in [{r['p_min']:.3f}, {r['p_max']:.3f}]{ratio}")
        prev = r["max_dev"]


def annulus(out):
    for r_in in (1.0, 1.8):
        res = studies.run_annulus(r_in, 2.0, out=out / "annulus")
        worst = max(v.max() for v in res.extra["ring_std"].values())
        print(f"r_in={r_in}: A={res.extra['asymmetry']:.4f}  ring std/mean {worst:.1e}")


def temperature(out):
    for res in studies.run_temperature_sweep(out=out / "temperature"):
        st = res.state
        print(f"tau={res.extra['tau']:<4g} max y_C={st.y[0].max():.4f}  "
              f"sup|n-1|={np.abs(st.n - 1).max():.4f}")


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="results")
    ap.add_argument("--skip-3d", action="store_true", help="the 3D run takes about a minute")
    args = ap.parse_args()
    out = Path(args.out)
    compressible(out, (1, 2) if args.skip_3d else (1, 2, 3))
    khat(out)
    annulus(out)
    temperature(out)
