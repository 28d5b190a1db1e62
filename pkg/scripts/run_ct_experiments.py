"""Run the sparse-view and low-dose CT experiments and print the epoch-150
gap and PSNR of each algorithm (mean and std over seeds).

    python3 scripts/run_ct_experiments.py [--threads N] [--out-root results]
"""

import argparse
import logging
import time
from pathlib import Path

import numpy as np

from tos_spdhg.config import load_config
from tos_spdhg.experiment import run_experiment

ROOT = Path(__file__).resolve().parents[1]


def main():
    parser = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--out-root", default=str(ROOT / "results"))
    parser.add_argument("--configs", nargs="+", default=["sparse_view", "low_dose"])
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(levelname)s: %(message)s")

    for name in args.configs:
        cfg = load_config(ROOT / "configs" / f"{name}.ini")
        out = Path(args.out_root) / name
        t0 = time.perf_counter()
        records = run_experiment(cfg, out, threads=args.threads)
        print(f"{name}: {time.perf_counter() - t0:.1f} s -> {out}")
        for algo in cfg.solver.algorithms:
            last = [r.rows[-1] for r in records if r.algorithm == algo]
            gap = np.array([row.get("gap", np.nan) for row in last])
            quality = np.array([row.get("psnr", np.nan) for row in last])
            print(f"  {algo:10s} epoch {last[0]['epoch']:g}: gap {gap.mean():.4g} "
                  f"+- {gap.std():.2g}, PSNR {quality.mean():.2f} dB")


if __name__ == "__main__":
    main()
