"""Command-line entry point: ``iss-node <subcommand> ...``.

Every subcommand that writes artifacts takes ``--out DIR`` and echoes its
effective configuration into ``DIR/effective_config.json``. Runtime failures
print a JSON error object on stderr and exit with status 1; usage errors
exit with status 2.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load as load_config, with_overrides

log = logging.getLogger("iss_node")

VERBOSITY = {"quiet": logging.WARNING, "normal": logging.INFO, "debug": logging.DEBUG}


class CliError(RuntimeError):
    pass


def _seed(args, default: int = 0) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get("ISS_NODE_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise CliError(f"ISS_NODE_SEED must be an integer, got {env!r}") from None
    return default


def _config(args) -> RunConfig:
    return load_config(args.config) if getattr(args, "config", None) else RunConfig()


def _outdir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo(out: Path, cfg: RunConfig | None, args, **extra) -> None:
    doc = {
        "version": __version__,
        "command": args.command,
        "argv": {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k != "func"},
        **extra,
    }
    if cfg is not None:
        doc["config"] = cfg.to_dict()
    (out / "effective_config.json").write_text(json.dumps(doc, indent=1, sort_keys=True))


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=1, default=_json_default))


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _load_model(path):
    from .model import CtrnnParams

    doc = json.loads(Path(path).read_text())
    params = CtrnnParams.from_dict(doc)
    return params, doc


# --- subcommands ----------------------------------------------------------------


def cmd_generate_data(args) -> dict:
    from .aging import build_aging_dataset
    from .data import Dataset, build_dataset, make_oracle

    cfg = with_overrides(_config(args), "dataset", oracle=args.oracle, n=args.n, horizon=args.horizon,
                         seed=_seed(args, _config(args).dataset.seed))
    d = cfg.dataset
    oracle = make_oracle(d.oracle, **cfg.oracle)
    solver = dataclasses.replace(cfg.solver, h_max=min(cfg.solver.h_max, d.horizon / 400))
    out = _outdir(args.out)
    t0 = time.perf_counter()
    if args.aging:
        if not args.norm_from:
            raise CliError("--aging needs --norm-from (the fresh dataset whose normalization is reused)")
        norm = Dataset.load(args.norm_from).norm
        ds = build_aging_dataset(oracle, d.n, d.seed, norm, d.horizon, solver, d.valid_fraction, args.jobs)
        ds.save(out / "dataset.json")
        n_items = len(ds.base.items)
    else:
        ds = build_dataset(oracle, d.n, d.seed, d.horizon, solver, d.valid_fraction, args.jobs, d.amplitude)
        ds.save(out / "dataset.json")
        n_items = len(ds.items)
    _echo(out, cfg, args)
    return {"dataset": str(out / "dataset.json"), "trajectories": n_items, "seconds": time.perf_counter() - t0}


def cmd_train(args) -> dict:
    from .aging import AGING_FROZEN, fresh_aging_params
    from .data import Dataset
    from .training import fit, init_from_config, save_checkpoint

    base = _config(args)
    cfg = with_overrides(base, "train", mode=args.mode, seed=_seed(args, base.train.seed), epochs=args.epochs)
    if args.aging_form:
        tc = cfg.train
        cfg = with_overrides(cfg, "train", hidden=tc.state_dim, frozen=tuple(sorted(set(tc.frozen) | set(AGING_FROZEN))))
    ds = Dataset.load(args.dataset)
    out = _outdir(args.out)
    tc = cfg.train
    params = None
    if args.aging_form:
        m, p = ds.items[0].u.dim, ds.items[0].y.dim
        params = fresh_aging_params(init_from_config(tc, m, p))
    res = fit(ds, tc, params)
    extra = {"normalization": ds.norm.to_dict(), "time_scale": ds.time_scale, "oracle": ds.oracle,
             "train_config": tc.to_dict(), "best_epoch": res.best_epoch, "best_valid_mse": res.best_valid_mse}
    res.best.save(out / "model.json", extra)
    save_checkpoint(out / "checkpoint.json", res.state.params, res.state, extra)
    res.write_metrics(out / "metrics.csv")
    _echo(out, cfg, args)
    return {"model": str(out / "model.json"), "best_epoch": res.best_epoch, "best_valid_mse": res.best_valid_mse,
            "excluded": res.excluded_total}


def cmd_check_stability(args) -> dict:
    from .equilibrium import dc_uniqueness_probe
    from .stability import certify, dissipation_probe, iss_probe

    params, _ = _load_model(args.model)
    rep = certify(params).to_dict()
    if args.probes:
        rng = np.random.default_rng(_seed(args))
        rep["dissipation_passed"] = dissipation_probe(params, rng.normal(size=params.n)).passed
        rep["iss_passed"] = iss_probe(params, seed=_seed(args)).passed
        rep["dc_unique"] = dc_uniqueness_probe(params, np.zeros(params.m), seed=_seed(args)).passed
    if args.out:
        out = _outdir(args.out)
        _write_json(out / "stability.json", rep)
        _echo(out, None, args)
    return rep


def cmd_eval(args) -> dict:
    from .data import Dataset
    from .training import evaluate_openloop, prepare_items

    params, doc = _load_model(args.model)
    grid_steps = args.grid_steps or doc.get("train_config", {}).get("grid_steps", 200)
    ds = Dataset.load(args.dataset)
    rep = evaluate_openloop(params, prepare_items(ds, ds.split(args.split), grid_steps))
    summary = {"split": args.split, "grid_steps": grid_steps, **rep.to_dict()}
    if args.out:
        out = _outdir(args.out)
        _write_json(out / "eval.json", summary)
        _echo(out, None, args)
    return {k: summary[k] for k in ("split", "mse", "per_channel", "used", "excluded")}


def cmd_cosim(args) -> dict:
    from .cosim import test_mse
    from .data import Normalization, make_oracle, oracle_from_dict

    params, doc = _load_model(args.model)
    cfg = with_overrides(_config(args), "cosim", runs=args.runs, seed=_seed(args, _config(args).cosim.seed),
                         horizon=args.horizon)
    norm = Normalization.from_dict(doc["normalization"]) if "normalization" in doc else \
        Normalization.identity(params.m, params.p)
    if args.oracle:
        oracle = make_oracle(args.oracle, **cfg.oracle)
    elif "oracle" in doc:
        oracle = oracle_from_dict(doc["oracle"])
    else:
        raise CliError("model file names no oracle; pass --oracle")
    c = cfg.cosim
    solver = dataclasses.replace(cfg.solver, h_max=min(cfg.solver.h_max, c.horizon / 400))
    rep = test_mse(params, norm, oracle, c.runs, c.seed, c.horizon, solver, args.jobs)
    out = _outdir(args.report)
    with open(out / "runs.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run", "ok", "mse"])
        for r in rep.per_run:
            w.writerow([r["run"], int(r["ok"]), repr(r["mse"])])
    summary = {"mean_mse": rep.mean_mse, "runs": rep.runs, "failures": rep.failures}
    _write_json(out / "summary.json", summary)
    _echo(out, cfg, args)
    return summary


def cmd_export(args) -> dict:
    from .data import Normalization
    from .exporter import write_veriloga

    params, doc = _load_model(args.model)
    norm = Normalization.from_dict(doc["normalization"]) if "normalization" in doc else None
    out = _outdir(args.out)
    path = out / f"{args.name}.va"
    write_veriloga(path, params, args.name, norm, doc.get("time_scale", 1.0) if args.physical_time else 1.0)
    _echo(out, None, args)
    return {"veriloga": str(path)}


def cmd_age_train(args) -> dict:
    from .aging import AgingDataset, fit_aging, save_aging_model

    base = _config(args)
    cfg = with_overrides(base, "train", seed=_seed(args, base.train.seed), epochs=args.epochs)
    fresh, doc = _load_model(args.model)
    ds = AgingDataset.load(args.dataset)
    out = _outdir(args.out)
    res = fit_aging(fresh, ds, cfg.train)
    save_aging_model(out / "aged_model.json", fresh, res.best,
                     {"normalization": ds.base.norm.to_dict(), "train_config": cfg.train.to_dict()})
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "valid_mse"])
        for r in res.metrics:
            w.writerow([r["epoch"], repr(r["train_loss"]), repr(r["valid_mse"])])
    _echo(out, cfg, args)
    return {"aged_model": str(out / "aged_model.json"), "final_valid_mse": res.metrics[-1]["valid_mse"]}


def cmd_age_eval(args) -> dict:
    from .aging import AgingDataset, aged_params, evaluate_aging, load_aging_model, prepare_pairs, random_profile
    from .stability import certify

    fresh, net = load_aging_model(args.model)
    ds = AgingDataset.load(args.dataset)
    pairs = prepare_pairs(ds, args.split, args.grid_steps)
    rng = np.random.default_rng(_seed(args))
    cert_ok = sum(certify(aged_params(fresh, net, random_profile(rng))[1]).satisfied for _ in range(args.profiles))
    summary = {"split": args.split, "fresh_mse": evaluate_aging(fresh, None, pairs),
               "aged_mse": evaluate_aging(fresh, net, pairs), "certified_profiles": cert_ok,
               "profiles_checked": args.profiles}
    summary["ratio"] = summary["aged_mse"] / summary["fresh_mse"]
    if args.out:
        out = _outdir(args.out)
        _write_json(out / "age_eval.json", summary)
        _echo(out, None, args)
    return summary


def cmd_verify(args) -> dict:
    from .checks import run_all

    results = run_all(quick=args.quick)
    for r in results:
        print(r.line())
    passed = all(r.passed for r in results)
    print(f"{'ALL PASS' if passed else 'FAILURES'}: {sum(r.passed for r in results)}/{len(results)}")
    if args.out:
        out = _outdir(args.out)
        _write_json(out / "verify.json", [dataclasses.asdict(r) for r in results])
        _echo(out, None, args)
    if not passed:
        raise CliError("verification failed")
    return {"passed": passed}


# --- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="iss-node", description=__doc__.splitlines()[0])
    ap.add_argument("--verbosity", choices=sorted(VERBOSITY), default="normal")
    ap.add_argument("--jobs", type=int, default=os.cpu_count() or 1, help="worker processes")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True, metavar="subcommand")

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(func=func)
        return p

    p = add("generate-data", cmd_generate_data, "simulate an oracle into a dataset")
    p.add_argument("--oracle")
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--horizon", type=float)
    p.add_argument("--config")
    p.add_argument("--aging", action="store_true", help="draw a stress profile per trajectory")
    p.add_argument("--norm-from", help="fresh dataset supplying the normalization (aging)")
    p.add_argument("--out", required=True)

    p = add("train", cmd_train, "fit a model to a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--mode", choices=("proposed", "proposed_omega_identity", "baseline"))
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--aging-form", action="store_true", help="W = I, nu = 0, hidden = state dim")
    p.add_argument("--out", required=True)

    p = add("check-stability", cmd_check_stability, "certificate (and optional probes) for a model")
    p.add_argument("--model", required=True)
    p.add_argument("--probes", action="store_true")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")

    p = add("eval", cmd_eval, "open-loop MSE on a dataset split")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", choices=("train", "valid", "all"), default="valid")
    p.add_argument("--grid-steps", type=int)
    p.add_argument("--out")

    p = add("cosim", cmd_cosim, "closed-loop MSE against the oracle with random loads")
    p.add_argument("--model", required=True)
    p.add_argument("--oracle")
    p.add_argument("--runs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--horizon", type=float)
    p.add_argument("--config")
    p.add_argument("--report", required=True)

    p = add("export-veriloga", cmd_export, "write a Verilog-A module")
    p.add_argument("--model", required=True)
    p.add_argument("--name", default="ctrnn")
    p.add_argument("--physical-time", action="store_true", help="use the dataset time scale for TSCALE")
    p.add_argument("--out", required=True)

    p = add("age-train", cmd_age_train, "fit the aging perturbation network")
    p.add_argument("--model", required=True, help="fresh model (aging form)")
    p.add_argument("--dataset", required=True, help="aging dataset")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--out", required=True)

    p = add("age-eval", cmd_age_eval, "fresh vs aged model on an aging dataset")
    p.add_argument("--model", required=True, help="aged model")
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", choices=("train", "valid", "all"), default="valid")
    p.add_argument("--grid-steps", type=int, default=200)
    p.add_argument("--profiles", type=int, default=500)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")

    p = add("verify", cmd_verify, "run the invariant suite and print a pass/fail table")
    p.add_argument("--quick", action="store_true", help="reduced sizes")
    p.add_argument("--out")
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=VERBOSITY[args.verbosity], format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)
    try:
        result = args.func(args)
    except (CliError, ConfigError, ValueError, RuntimeError, OSError, KeyError) as exc:
        err = {"error": type(exc).__name__, "message": str(exc), "command": args.command}
        print(json.dumps(err), file=sys.stderr)
        return 1
    if result is not None and args.command != "verify":
        print(json.dumps(result, default=_json_default))
    return 0


if __name__ == "__main__":
    sys.exit(main())
