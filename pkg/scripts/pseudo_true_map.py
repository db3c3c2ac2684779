#!/usr/bin/env python3
"""Pseudo-true positions and bias norm as the MC strength grows.

For each ||s|| the MC-unaware model is fitted to the noiseless coupled channel
and the resulting position is printed next to the true one. The last column
is bias/||s||, which settles to a constant while the first-order coupling
model holds.
"""

import argparse

import numpy as np

from risloc.bounds import pseudo_true
from risloc.channel import CascadedModel, McModel
from risloc.config import load_config
from risloc.experiment import build_scenario


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/desk.toml")
    ap.add_argument("--norms", type=float, nargs="+",
                    default=[0.0025, 0.005, 0.01, 0.02, 0.05, 0.1])
    args = ap.parse_args()

    cfg = load_config(args.config)
    sc, sup = build_scenario(cfg)
    model = CascadedModel(sc, sup)
    print("true UE", np.array2string(sc.ue_position, precision=4))
    print(f"{'|s|':>7} {'x':>9} {'y':>9} {'z':>9} {'bias[m]':>10} {'bias/|s|':>9}  flags")
    for q in args.norms:
        pt = pseudo_true(sc, McModel(sup, q * cfg.mc_direction_array), cfg.search, model=model)
        x, y, z = pt.position
        print(f"{q:7.4f} {x:9.4f} {y:9.4f} {z:9.4f} {pt.bias_norm:10.4e} "
              f"{pt.bias_norm / q if q else 0.0:9.3f}  {','.join(pt.flags)}")


if __name__ == "__main__":
    main()
