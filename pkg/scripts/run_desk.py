#!/usr/bin/env python3
"""Desk-scale RMSE-vs-power sweep with bounds, written to results/desk.

Same as ``risloc run configs/desk.toml`` but prints a compact table and the
wall time so a laptop run can be sanity checked at a glance.
"""

import argparse
import time
from dataclasses import replace

from risloc.config import load_config
from risloc.experiment import run_experiment
from risloc.reports import emit_reports


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/desk.toml")
    ap.add_argument("--trials", type=int, default=None, help="override n_trials")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", default="results/desk")
    args = ap.parse_args()

    cfg = load_config(args.config)
    if args.trials:
        cfg = replace(cfg, n_trials=args.trials)
    t0 = time.perf_counter()
    res = run_experiment(cfg, workers=args.workers)
    emit_reports(res, args.out)
    print(f"{'P[dBm]':>7} {'|s|':>6} {'rmse_jlmc':>11} {'peb_aware':>11} "
          f"{'rmse_unaw':>11} {'peb_unaw':>11} {'failed':>6}")
    for r in sorted(res.rows, key=lambda r: (r.s_norm, r.p_dbm)):
        print(f"{r.p_dbm:7.1f} {r.s_norm:6.3f} {r.rmse_jlmc:11.3e} {r.peb_aware:11.3e} "
              f"{r.rmse_unaware:11.3e} {r.peb_unaware:11.3e} {r.n_failed:6d}")
    print(f"wall time {time.perf_counter() - t0:.0f} s, outputs in {args.out}")


if __name__ == "__main__":
    main()
