"""Pick the readout learning rate for the Volterra experiment.

Runs readout learning on a random (untrained) reservoir for a log-spaced
range of learning rates and reports the held-out MSE in the last
accumulation window. The winner is what the exp1 presets carry.

    python3 demos/eta_sweep.py --preset exp1-volterra-desk --n-tasks 20
"""

import argparse
import json

from spiking_l2l.baselines import random_reservoir_eval
from spiking_l2l.config import resolve_config


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--preset", default="exp1-volterra-desk")
    ap.add_argument("--n-tasks", type=int, default=20)
    ap.add_argument("--seed", type=int, default=777)
    ap.add_argument("--etas", default="1e-6,3e-6,1e-5,3e-5,1e-4,3e-4,1e-3")
    ap.add_argument("overrides", nargs="*")
    args = ap.parse_args()

    rows = []
    for eta in [float(e) for e in args.etas.split(",")]:
        run = resolve_config(args.preset, overrides=[f"plasticity.eta={eta}", *args.overrides])
        fam = run.make_family()
        try:
            out = random_reservoir_eval(run, fam, args.n_tasks, seed=args.seed)
            last = out["curve_mean"][-1]
        except FloatingPointError:
            last = float("inf")
        rows.append({"eta": eta, "final_window_mse": last})
        print(json.dumps(rows[-1]), flush=True)
    best = min(rows, key=lambda r: r["final_window_mse"])
    print("best eta", best["eta"])


if __name__ == "__main__":
    main()
