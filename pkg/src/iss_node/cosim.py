"""Learned models in closed loop with randomised loads."""

from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .circuits import (  # noqa: F401
    Circuit, ConfigurationError, IdealLoad, Interconnection, RcLoad,
    simulate_closed_loop, trajectory_mse,
)
from .data import Normalization, normalize
from .model import CtrnnParams, realize
from .solver import SolverConfig, SolverError, Trajectory
from .numerics import NumericsError

log = logging.getLogger(__name__)


class ModelCircuit(Circuit):
    """A learned CTRNN operating in physical units: inputs are normalised on
    the way in and outputs de-normalised on the way out."""

    def __init__(self, params: CtrnnParams, norm: Normalization):
        self.params = params
        self.norm = norm
        self.r = realize(params)
        self.n_state = params.n
        self.ports = params.m
        if params.m != params.p:
            raise ConfigurationError("port model needs as many outputs as inputs")
        # normalize / denormalize folded into affine maps (constant channels
        # get zero slope, matching the conventions in ``data``)
        self._su = np.array([r.scale for r in norm.u])
        self._u_off = np.array([0.0 if r.constant else -1.0 - r.lo * r.scale for r in norm.u])
        self._y_half = np.array([0.0 if r.constant else 0.5 * (r.hi - r.lo) for r in norm.y])
        self._y_off = self._y_half + np.array([r.lo for r in norm.y])

    def _un(self, v):
        return np.asarray(v) * self._su + self._u_off

    def f(self, x, v):
        return self.r.f(x, self._un(v))

    def out(self, x, v):
        return self.r.output(x) * self._y_half + self._y_off

    def jac(self, x, v, eps=None):
        un = self._un(v)
        fx = self.r.jac_x(x, un)
        fv = self.r.jac_u(x, un) * self._su[None, :]
        ox = self._y_half[:, None] * self.params.H
        return fx, fv, ox, np.zeros((self.ports, self.ports))


def interconnect(model: CtrnnParams, load, source: Trajectory, norm: Normalization | None = None) -> Interconnection:
    norm = norm or Normalization.identity(model.m, model.p)
    return Interconnection(ModelCircuit(model, norm), load, source)


@dataclass
class CosimReport:
    mean_mse: float
    per_run: list
    failures: int
    runs: int

    def to_dict(self) -> dict:
        return asdict(self)


def _one_run(args):
    model, norm, oracle, seed, run, horizon, cfg = args
    rng = np.random.default_rng([seed, run])
    load = oracle.random_load(rng)
    source = oracle.random_source(rng, horizon)
    rec = {"run": run, "load": load.to_dict()}
    try:
        _, y_true = simulate_closed_loop(oracle, load, source, horizon, cfg)
        _, y_model = simulate_closed_loop(ModelCircuit(model, norm), load, source, horizon, cfg)
        ytn = Trajectory(y_true.times, normalize(y_true.values, norm.y))
        ymn = Trajectory(y_model.times, normalize(y_model.values, norm.y))
        per_ch = trajectory_mse(ytn, ymn, horizon)
        rec.update(mse=float(per_ch.mean()), per_channel=per_ch.tolist(), ok=True)
    except (SolverError, NumericsError, FloatingPointError, OverflowError) as exc:
        rec.update(mse=float("nan"), per_channel=[], ok=False, error=str(exc))
    return rec


def test_mse(model: CtrnnParams, norm: Normalization, oracle, runs: int = 100, seed: int = 0,
             horizon: float = 1.0, solver_cfg: SolverConfig | None = None,
             jobs: int = 1) -> CosimReport:
    """Closed-loop error of a model against the oracle it imitates.

    Each run draws a fresh load and source from the oracle's distributions,
    simulates the oracle and the model against identical copies of them, and
    scores the normalised output error. Failed runs are counted and left out
    of the mean.
    """
    cfg = solver_cfg or SolverConfig(rtol=1e-7, atol=1e-9, h_max=horizon / 400)
    tasks = [(model, norm, oracle, seed, k, horizon, cfg) for k in range(runs)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, os.cpu_count() or 1)) as ex:
            per_run = list(ex.map(_one_run, tasks))
    else:
        per_run = [_one_run(t) for t in tasks]
    good = [r["mse"] for r in per_run if r["ok"]]
    failures = runs - len(good)
    if failures:
        log.warning("%d of %d co-simulation runs failed and were excluded", failures, runs)
    mean = float(np.mean(good)) if good else float("nan")
    return CosimReport(mean, per_run, failures, runs)


test_mse.__test__ = False  # not a pytest test despite the name
