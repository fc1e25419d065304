"""Desk-scale experiments shared by the acceptance suite and ``scripts/``.

``run_amplifier`` trains the constrained and baseline models on the
common-source surrogate and scores both open-loop and in closed loop.
``run_aging`` fits a fresh inverter-chain model, then the GRU perturbation
net on aged trajectories, and compares the two on a held-out aged set.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .aging import (
    AGING_FROZEN, aged_params, build_aging_dataset, evaluate_aging, fit_aging, fresh_aging_params, prepare_pairs,
    random_profile,
)
from .cosim import test_mse
from .data import build_dataset, make_oracle
from .stability import certify
from .training import TrainConfig, fit, init_from_config

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AmplifierExperiment:
    n_traj: int = 50
    data_seed: int = 0
    cosim_runs: int = 100
    cosim_seed: int = 1
    modes: tuple[str, ...] = ("proposed", "baseline")
    train: TrainConfig = field(default_factory=lambda: TrainConfig(
        lr=1e-2, lr_final=1e-2 / 30, epochs=250, batch_size=8, state_dim=4, hidden=16, tau_init=0.1))
    jobs: int = 1


@dataclass(frozen=True)
class AgingExperiment:
    n_fresh: int = 40
    n_aged: int = 40
    n_test: int = 20
    profiles_checked: int = 500
    fresh_train: TrainConfig = field(default_factory=lambda: TrainConfig(
        lr=1e-2, lr_final=3e-4, epochs=200, batch_size=8, state_dim=12, hidden=12, tau_init=0.03,
        frozen=AGING_FROZEN))
    aging_train: TrainConfig = field(default_factory=lambda: TrainConfig(lr=1e-2, epochs=40, batch_size=8))
    jobs: int = 1


def run_amplifier(exp: AmplifierExperiment = AmplifierExperiment(), callback=None) -> dict:
    t0 = time.perf_counter()
    ds = build_dataset("common_source_surrogate", exp.n_traj, exp.data_seed, jobs=exp.jobs)
    oracle = make_oracle("common_source_surrogate")
    out = {"config": asdict(exp), "data_seconds": time.perf_counter() - t0, "modes": {}}
    for mode in exp.modes:
        cfg = TrainConfig(**{**asdict(exp.train), "mode": mode})
        t1 = time.perf_counter()
        res = fit(ds, cfg, callback=callback)
        rep = test_mse(res.best, ds.norm, oracle, runs=exp.cosim_runs, seed=exp.cosim_seed, jobs=exp.jobs)
        cert = certify(res.best)
        out["modes"][mode] = {
            "valid_mse": res.best_valid_mse, "closed_loop_mse": rep.mean_mse, "failures": rep.failures,
            "best_epoch": res.best_epoch, "certified": cert.satisfied, "rho": cert.rho,
            "lds_margin": cert.lds_margin, "all_epochs_certified": all(r["certified"] for r in res.metrics),
            "seconds": time.perf_counter() - t1, "params": res.best, "metrics": res.metrics,
        }
        log.info("%s: valid %.3e closed-loop %.3e", mode, res.best_valid_mse, rep.mean_mse)
    out["seconds"] = time.perf_counter() - t0
    return out


def run_aging(exp: AgingExperiment = AgingExperiment(), callback=None) -> dict:
    t0 = time.perf_counter()
    oracle = make_oracle("inverter_chain_surrogate")
    fresh_ds = build_dataset(oracle, exp.n_fresh, seed=0, jobs=exp.jobs)
    cfg = exp.fresh_train
    p0 = fresh_aging_params(init_from_config(cfg, 2, 2))
    fresh_fit = fit(fresh_ds, cfg, params=p0)
    fresh = fresh_fit.best
    aged_ds = build_aging_dataset(oracle, exp.n_aged, seed=7, norm=fresh_ds.norm, jobs=exp.jobs)
    test_ds = build_aging_dataset(oracle, exp.n_test, seed=8, norm=fresh_ds.norm, valid_fraction=0.0,
                                  jobs=exp.jobs)
    res = fit_aging(fresh, aged_ds, exp.aging_train, callback=callback)
    test = prepare_pairs(test_ds, "all", exp.aging_train.grid_steps)
    fresh_mse = evaluate_aging(fresh, None, test)
    aged_mse = evaluate_aging(fresh, res.best, test)
    rng = np.random.default_rng(2024)
    certified = sum(certify(aged_params(fresh, res.best, random_profile(rng))[1]).satisfied
                    for _ in range(exp.profiles_checked))
    return {
        "fresh_valid_mse": fresh_fit.best_valid_mse, "fresh_test_mse": fresh_mse, "aged_test_mse": aged_mse,
        "ratio": aged_mse / fresh_mse, "certified_profiles": certified, "profiles_checked": exp.profiles_checked,
        "fresh": fresh, "net": res.best, "aging_metrics": res.metrics, "seconds": time.perf_counter() - t0,
    }


__all__ = ["AmplifierExperiment", "AgingExperiment", "run_amplifier", "run_aging"]
