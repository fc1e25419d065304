"""Aging-aware models: a frozen fresh CTRNN plus GRU-encoded perturbations.

A stress profile (one period of a stress waveform and an operating time)
is encoded by a single-layer GRU; linear heads on the final hidden state give
``dA``, ``dB`` and ``dmu``. The aged model uses ``A_theta = A0 + dA`` and goes
through the same rescaling as the fresh one, so every profile yields a
certified model.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import (
    CircuitOracle, Dataset, DatasetItem, Normalization, gen_pwl, make_oracle,
    parallel_map, simulate_oracle, split_indices,
)
from .model import CtrnnParams
from .solver import SolverConfig, Trajectory
from .training import Prepared, TrainConfig, adam_update, evaluate_openloop, loss_and_grad, prepare

log = logging.getLogger(__name__)

AGING_SCHEMA = "iss-node-aging-v1"
GRU_HIDDEN = 20
STRESS_SAMPLES = 64
T_OP_RANGE = (1e-3, 10.0)  # years


@dataclass
class StressProfile:
    u_stress: Trajectory  # one period on [0, T_stress]
    t_op: float  # years

    def samples(self, count: int = STRESS_SAMPLES) -> np.ndarray:
        """``count`` uniform samples of one period (right end excluded)."""
        T = self.u_stress.t1
        return self.u_stress(np.arange(count) * T / count)[:, 0]

    def duty(self, threshold: float = 0.0, count: int = 4096) -> float:
        """Fraction of the period with ``u_stress > threshold``."""
        return float(np.mean(self.samples(count) > threshold))

    def features(self, count: int = STRESS_SAMPLES) -> np.ndarray:
        """GRU input sequence: each stress sample paired with log10(T_op)."""
        s = self.samples(count)
        return np.column_stack([s, np.full(count, math.log10(self.t_op))])

    def to_dict(self) -> dict:
        return {"t": self.u_stress.times.tolist(), "u": self.u_stress.values[:, 0].tolist(), "t_op": self.t_op}

    @classmethod
    def from_dict(cls, d: dict) -> "StressProfile":
        return cls(Trajectory(d["t"], d["u"]), float(d["t_op"]))


def random_profile(rng, T_stress: float = 1.0, segments: int = 6, t_op_range=T_OP_RANGE) -> StressProfile:
    """Periodic PWL stress waveform in [-1, 1] and a log-uniform operating time."""
    src = gen_pwl(rng, T_stress, segments)
    levels = src.levels.copy()
    levels[-1] = levels[0]
    lo, hi = np.log10(t_op_range[0]), np.log10(t_op_range[1])
    return StressProfile(Trajectory(src.times, levels), float(10.0 ** rng.uniform(lo, hi)))


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class GruPerturbNet:
    """Single-layer GRU with linear read-out heads for (dA, dB, dmu)."""

    Wz: np.ndarray
    Uz: np.ndarray
    bz: np.ndarray
    Wr: np.ndarray
    Ur: np.ndarray
    br: np.ndarray
    Wh: np.ndarray
    Uh: np.ndarray
    bh: np.ndarray
    HA: np.ndarray
    cA: np.ndarray
    HB: np.ndarray
    cB: np.ndarray
    Hmu: np.ndarray
    cmu: np.ndarray
    shape_A: tuple[int, int]
    shape_B: tuple[int, int]

    WEIGHTS = ("Wz", "Uz", "bz", "Wr", "Ur", "br", "Wh", "Uh", "bh", "HA", "cA", "HB", "cB", "Hmu", "cmu")

    @classmethod
    def init(cls, hidden_l: int, n: int, m: int, seed: int = 0, gru_hidden: int = GRU_HIDDEN,
             n_in: int = 2) -> "GruPerturbNet":
        rng = np.random.default_rng(seed)
        a = 1.0 / math.sqrt(gru_hidden)
        U = lambda *s: rng.uniform(-a, a, size=s)  # noqa: E731
        Z = np.zeros
        H = gru_hidden
        return cls(U(H, n_in), U(H, H), U(H), U(H, n_in), U(H, H), U(H), U(H, n_in), U(H, H), U(H),
                   Z((hidden_l * n, H)), Z(hidden_l * n), Z((hidden_l * m, H)), Z(hidden_l * m),
                   Z((hidden_l, H)), Z(hidden_l), (hidden_l, n), (hidden_l, m))

    @property
    def gru_hidden(self) -> int:
        return self.bz.size

    def weights(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in self.WEIGHTS}

    def with_weights(self, **w) -> "GruPerturbNet":
        return replace(self, **w)

    def to_dict(self) -> dict:
        d = {k: np.asarray(v).tolist() for k, v in self.weights().items()}
        d.update(shape_A=list(self.shape_A), shape_B=list(self.shape_B))
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GruPerturbNet":
        w = {k: np.array(d[k], dtype=float) for k in cls.WEIGHTS}
        return cls(**w, shape_A=tuple(d["shape_A"]), shape_B=tuple(d["shape_B"]))


@dataclass
class _GruCache:
    xs: np.ndarray
    hs: np.ndarray  # (T + 1, H), hs[0] = 0
    zs: np.ndarray
    rs: np.ndarray
    cs: np.ndarray


def _gru_run(net: GruPerturbNet, xs: np.ndarray) -> _GruCache:
    T, H = xs.shape[0], net.gru_hidden
    hs = np.zeros((T + 1, H))
    zs, rs, cs = np.zeros((T, H)), np.zeros((T, H)), np.zeros((T, H))
    for t in range(T):
        h = hs[t]
        z = _sigmoid(net.Wz @ xs[t] + net.Uz @ h + net.bz)
        r = _sigmoid(net.Wr @ xs[t] + net.Ur @ h + net.br)
        c = np.tanh(net.Wh @ xs[t] + net.Uh @ (r * h) + net.bh)
        hs[t + 1] = (1.0 - z) * h + z * c
        zs[t], rs[t], cs[t] = z, r, c
    return _GruCache(xs, hs, zs, rs, cs)


def _heads(net: GruPerturbNet, h):
    dA = (net.HA @ h + net.cA).reshape(net.shape_A)
    dB = (net.HB @ h + net.cB).reshape(net.shape_B)
    dmu = net.Hmu @ h + net.cmu
    return dA, dB, dmu


def gru_forward(net: GruPerturbNet, sequence, t_op: float | None = None):
    """(dA, dB, dmu) for a stress sequence. ``sequence`` is either the full
    (steps, 2) feature array or, with ``t_op`` given, the stress samples."""
    xs = np.asarray(sequence, dtype=float)
    if t_op is not None:
        xs = np.column_stack([xs.ravel(), np.full(xs.size, math.log10(t_op))])
    if xs.ndim != 2 or xs.shape[0] == 0:
        raise ValueError("stress sequence must be non-empty")
    cache = _gru_run(net, xs)
    return _heads(net, cache.hs[-1])


def gru_backward(net: GruPerturbNet, cache: _GruCache, gA, gB, gmu) -> dict[str, np.ndarray]:
    """Gradients of ``<gA, dA> + <gB, dB> + <gmu, dmu>`` wrt every net weight."""
    h_last = cache.hs[-1]
    gA, gB, gmu = np.ravel(gA), np.ravel(gB), np.ravel(gmu)
    g = {k: np.zeros_like(v) for k, v in net.weights().items()}
    g["HA"], g["cA"] = np.outer(gA, h_last), gA
    g["HB"], g["cB"] = np.outer(gB, h_last), gB
    g["Hmu"], g["cmu"] = np.outer(gmu, h_last), gmu
    gh = net.HA.T @ gA + net.HB.T @ gB + net.Hmu.T @ gmu
    for t in range(cache.xs.shape[0] - 1, -1, -1):
        h, x = cache.hs[t], cache.xs[t]
        z, r, c = cache.zs[t], cache.rs[t], cache.cs[t]
        gz = gh * (c - h) * z * (1.0 - z)
        gc = gh * z * (1.0 - c * c)
        grh = net.Uh.T @ gc
        gr = grh * h * r * (1.0 - r)
        g["Wz"] += np.outer(gz, x)
        g["Uz"] += np.outer(gz, h)
        g["bz"] += gz
        g["Wr"] += np.outer(gr, x)
        g["Ur"] += np.outer(gr, h)
        g["br"] += gr
        g["Wh"] += np.outer(gc, x)
        g["Uh"] += np.outer(gc, r * h)
        g["bh"] += gc
        gh = gh * (1.0 - z) + net.Uz.T @ gz + net.Ur.T @ gr + grh * r
    return g


@dataclass
class AgedParams:
    fresh: CtrnnParams
    dA: np.ndarray
    dB: np.ndarray
    dmu: np.ndarray

    def realized(self) -> CtrnnParams:
        f = self.fresh
        return f.with_arrays(A_theta=f.A_theta + self.dA, B=f.B + self.dB, mu=f.mu + self.dmu)


def aged_params(fresh: CtrnnParams, net: GruPerturbNet, profile: StressProfile) -> tuple[AgedParams, CtrnnParams]:
    """Perturbed parameters for ``profile``. ``rho`` is recomputed from the
    perturbed ``A_theta`` when the model is realized."""
    ap = AgedParams(fresh, *gru_forward(net, profile.features()))
    return ap, ap.realized()


def fresh_aging_params(params: CtrnnParams) -> CtrnnParams:
    """Impose ``W = I`` and ``nu = 0`` on a square model (state dim = hidden dim)."""
    if params.n != params.hidden:
        raise ValueError("the aging form needs as many hidden units as states")
    return params.with_arrays(W=np.eye(params.n), nu=np.zeros(params.n))


AGING_FROZEN = ("W", "nu")


# --- aging datasets -------------------------------------------------------------


@dataclass
class AgingDataset:
    base: Dataset
    profiles: list[StressProfile]

    def save(self, path) -> None:
        d = self.base.to_dict()
        d["schema"] = AGING_SCHEMA
        for item, prof in zip(d["trajectories"], self.profiles):
            item["profile"] = prof.to_dict()
        Path(path).write_text(json.dumps(d))

    @classmethod
    def load(cls, path) -> "AgingDataset":
        path = Path(path)
        if path.is_dir():
            path = path / "dataset.json"
        d = json.loads(path.read_text())
        if d.get("schema") != AGING_SCHEMA:
            raise ValueError(f"not an aging dataset: schema {d.get('schema')!r}")
        base = Dataset.from_dict(d)
        return cls(base, [StressProfile.from_dict(t["profile"]) for t in d["trajectories"]])

    def split(self, name: str):
        items = self.base.split(name)
        by_index = {it.index: p for it, p in zip(self.base.items, self.profiles)}
        return [(it, by_index[it.index]) for it in items]


def _aging_item(args):
    oracle, index, seed, T, cfg = args
    rng = np.random.default_rng([seed, index])
    profile = random_profile(rng)
    aged = oracle.aged(profile)
    load = oracle.random_load(rng)
    source = oracle.random_source(rng, T)
    u, y = simulate_oracle(aged, load, source, T, cfg)
    src = {"type": "pwl", "times": source.times.tolist(), "levels": source.values.tolist()}
    return DatasetItem(index, [seed, index], u, y, load.to_dict(), src, profile.to_dict()), profile


def build_aging_dataset(oracle: CircuitOracle | str, n: int, seed: int, norm: Normalization,
                        horizon: float = 1.0, solver_cfg: SolverConfig | None = None,
                        valid_fraction: float = 0.2, jobs: int = 1) -> AgingDataset:
    """Trajectories of the oracle aged by random stress profiles. ``norm`` is
    the fresh model's normalization, reused so the fresh model applies as is."""
    if isinstance(oracle, str):
        oracle = make_oracle(oracle)
    cfg = solver_cfg or SolverConfig(rtol=1e-7, atol=1e-9, h_init=1e-4, h_max=horizon / 400)
    out = parallel_map(_aging_item, [(oracle, i, seed, horizon, cfg) for i in range(n)], jobs)
    items, profiles = [o[0] for o in out], [o[1] for o in out]
    train, valid = split_indices(n, seed, valid_fraction)
    base = Dataset(oracle.to_dict(), horizon, oracle.time_scale, seed, items, train, valid, norm, AGING_SCHEMA)
    return AgingDataset(base, profiles)


# --- training -------------------------------------------------------------------


@dataclass
class AgingFitResult:
    net: GruPerturbNet
    best: GruPerturbNet
    metrics: list[dict] = field(default_factory=list)


def prepare_pairs(ds: AgingDataset, split: str, grid_steps: int):
    out = []
    for item, prof in ds.split(split):
        u, y = ds.base.normalized(item)
        out.append((prepare(u, y, grid_steps, ds.base.horizon, item.index), prof))
    return out


def aging_loss_and_grad(fresh: CtrnnParams, net: GruPerturbNet, pt: Prepared, profile: StressProfile,
                        K: int, rng, want_grad: bool = True, sample_times=None):
    xs = profile.features()
    cache = _gru_run(net, xs)
    ap = AgedParams(fresh, *_heads(net, cache.hs[-1]))
    res = loss_and_grad(ap.realized(), [pt], K, rng, want_grad=want_grad, sample_times=sample_times)
    if not want_grad or res.grads is None:
        return res.loss, None
    return res.loss, gru_backward(net, cache, res.grads["A_theta"], res.grads["B"], res.grads["mu"])


def evaluate_aging(fresh: CtrnnParams, net: GruPerturbNet | None, pairs) -> float:
    """Mean open-loop MSE over (prepared, profile) pairs; ``net=None`` scores
    the frozen fresh model."""
    vals = []
    for pt, prof in pairs:
        p = fresh if net is None else aged_params(fresh, net, prof)[1]
        vals.append(evaluate_openloop(p, [pt]).mse)
    return float(np.nanmean(vals))


def fit_aging(fresh: CtrnnParams, ds: AgingDataset, cfg: TrainConfig, net: GruPerturbNet | None = None,
              callback=None) -> AgingFitResult:
    """Train only the GRU and head weights; ``fresh`` is never modified."""
    net = net or GruPerturbNet.init(fresh.hidden, fresh.n, fresh.m, seed=cfg.seed)
    train = prepare_pairs(ds, "train", cfg.grid_steps)
    valid = prepare_pairs(ds, "valid", cfg.grid_steps) or train
    w = net.weights()
    m = {k: np.zeros_like(v) for k, v in w.items()}
    v = {k: np.zeros_like(v) for k, v in w.items()}
    rng = np.random.default_rng([cfg.seed, 0xA6])
    order_rng = np.random.default_rng([cfg.seed, 0x5C])
    best, best_mse = net, evaluate_aging(fresh, net, valid)
    metrics = [{"epoch": 0, "train_loss": float("nan"), "valid_mse": best_mse}]
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        perm = order_rng.permutation(len(train))
        losses = []
        for start in range(0, len(train), cfg.batch_size):
            idx = sorted(perm[start:start + cfg.batch_size])
            acc, used = None, 0
            for i in idx:
                pt, prof = train[i]
                loss, g = aging_loss_and_grad(fresh, net, pt, prof, cfg.K, rng)
                if g is None or not all(np.all(np.isfinite(x)) for x in g.values()):
                    continue
                losses.append(loss)
                used += 1
                acc = g if acc is None else {k: acc[k] + g[k] for k in acc}
            if not used:
                continue
            step += 1
            new = {}
            for k, theta in net.weights().items():
                new[k], m[k], v[k] = adam_update(theta, acc[k] / used, m[k], v[k], step,
                                                 cfg.lr, cfg.beta1, cfg.beta2, cfg.eps_adam)
            net = net.with_weights(**new)
        vm = evaluate_aging(fresh, net, valid)
        row = {"epoch": epoch, "train_loss": float(np.mean(losses)) if losses else float("nan"), "valid_mse": vm}
        metrics.append(row)
        if math.isfinite(vm) and vm < best_mse:
            best, best_mse = net, vm
        if callback is not None:
            callback(row)
        log.info("aging epoch %d loss %.3e valid %.3e", epoch, row["train_loss"], vm)
    return AgingFitResult(net, best, metrics)


def save_aging_model(path, fresh: CtrnnParams, net: GruPerturbNet, extra: dict | None = None) -> None:
    doc = {"schema": AGING_SCHEMA, "fresh": fresh.to_dict(), "net": net.to_dict(), **(extra or {})}
    Path(path).write_text(json.dumps(doc))


def load_aging_model(path) -> tuple[CtrnnParams, GruPerturbNet]:
    d = json.loads(Path(path).read_text())
    return CtrnnParams.from_dict(d["fresh"]), GruPerturbNet.from_dict(d["net"])


__all__ = [
    "StressProfile", "random_profile", "GruPerturbNet", "gru_forward", "gru_backward", "AgedParams",
    "aged_params", "fresh_aging_params", "AGING_FROZEN", "AgingDataset", "build_aging_dataset",
    "aging_loss_and_grad", "evaluate_aging", "fit_aging", "prepare_pairs", "save_aging_model",
    "load_aging_model",
]
