"""Constrained vs. baseline CTRNN on the common-source surrogate.

Trains both modes on the same data and seeds, then prints open-loop
(validation) and closed-loop (randomized RC loads) MSE side by side.

    python3 scripts/amplifier_table.py --epochs 250 --runs 100 --out results/amplifier
"""

import argparse
import dataclasses
import json
import logging
from pathlib import Path

from iss_node.experiments import AmplifierExperiment, run_amplifier
from iss_node.training import write_metrics


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=50, help="trajectories")
    ap.add_argument("--epochs", type=int, default=250)
    ap.add_argument("--runs", type=int, default=100, help="closed-loop runs per model")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--modes", nargs="+", default=["proposed", "proposed_omega_identity", "baseline"])
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out", type=Path)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    base = AmplifierExperiment()
    exp = dataclasses.replace(base, n_traj=args.n, cosim_runs=args.runs, modes=tuple(args.modes), jobs=args.jobs,
                              train=dataclasses.replace(base.train, epochs=args.epochs, seed=args.seed))
    out = run_amplifier(exp)

    print(f"{'mode':<26}{'open-loop':>12}{'closed-loop':>13}{'rho':>7}  certified")
    for mode, r in out["modes"].items():
        print(f"{mode:<26}{r['valid_mse']:>12.3e}{r['closed_loop_mse']:>13.3e}{r['rho']:>7.2f}  {r['certified']}")
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        table = {}
        for mode, r in out["modes"].items():
            r["params"].save(args.out / f"{mode}.json")
            write_metrics(r["metrics"], args.out / f"{mode}_metrics.csv")
            table[mode] = {k: v for k, v in r.items() if k not in ("params", "metrics")}
        (args.out / "table.json").write_text(json.dumps(table, indent=1))


if __name__ == "__main__":
    main()
