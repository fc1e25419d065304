"""Fresh inverter-chain model plus learned aging perturbations.

Prints the held-out aged-set MSE of the frozen fresh model and of the
aged model, and the fraction of random stress profiles whose realized
parameters pass the stability certificate.

    python3 scripts/aging_experiment.py --out results/aging
"""

import argparse
import dataclasses
import json
import logging
from pathlib import Path

from iss_node.aging import save_aging_model
from iss_node.experiments import AgingExperiment, run_aging


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--fresh-epochs", type=int, default=200)
    ap.add_argument("--aging-epochs", type=int, default=40)
    ap.add_argument("--profiles", type=int, default=500)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out", type=Path)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    base = AgingExperiment()
    exp = dataclasses.replace(
        base, profiles_checked=args.profiles, jobs=args.jobs,
        fresh_train=dataclasses.replace(base.fresh_train, epochs=args.fresh_epochs),
        aging_train=dataclasses.replace(base.aging_train, epochs=args.aging_epochs))
    out = run_aging(exp)
    print(f"fresh model on aged test set : {out['fresh_test_mse']:.3e}")
    print(f"aged model on aged test set  : {out['aged_test_mse']:.3e}  (ratio {out['ratio']:.2f})")
    print(f"certified profiles           : {out['certified_profiles']}/{out['profiles_checked']}")
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        save_aging_model(args.out / "aged_model.json", out["fresh"], out["net"])
        summary = {k: v for k, v in out.items() if k not in ("fresh", "net")}
        (args.out / "summary.json").write_text(json.dumps(summary, indent=1))


if __name__ == "__main__":
    main()
