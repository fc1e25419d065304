"""Synthetic circuit oracles, stimulus generators and training datasets.

The oracles are small ODEs standing in for transistor-level netlists. Each is
input-to-state stable by construction and exposes the port convention used
for learning: port voltages in, port currents out. Time is already on the
rescaled axis (horizons of order one second); ``time_scale`` records how many
physical seconds one model second represents.
"""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .circuits import Circuit, IdealLoad, RcLoad, load_from_dict, simulate_closed_loop
from .solver import SolverConfig, Trajectory

log = logging.getLogger(__name__)

DATASET_SCHEMA = "iss-node-dataset-v1"


@dataclass(frozen=True)
class NormRecord:
    """Affine map of one channel onto [-1, 1]."""

    lo: float
    hi: float

    @property
    def constant(self) -> bool:
        return not self.hi > self.lo

    @property
    def scale(self) -> float:
        return 0.0 if self.constant else 2.0 / (self.hi - self.lo)


def normalize(values, records) -> np.ndarray:
    """``2 (v - lo) / (hi - lo) - 1`` per channel; constant channels map to 0."""
    values = np.asarray(values, dtype=float)
    lo = np.array([r.lo for r in records])
    hi = np.array([r.hi for r in records])
    const = hi <= lo
    span = np.where(const, 1.0, hi - lo)
    out = 2.0 * (values - lo) / span - 1.0
    return np.where(const, 0.0, out)


def denormalize(values, records) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    lo = np.array([r.lo for r in records])
    hi = np.array([r.hi for r in records])
    return np.where(hi <= lo, lo, (values + 1.0) * 0.5 * (hi - lo) + lo)


def fit_records(values) -> tuple[NormRecord, ...]:
    values = np.asarray(values, dtype=float)
    return tuple(NormRecord(float(lo), float(hi)) for lo, hi in zip(values.min(axis=0), values.max(axis=0)))


@dataclass(frozen=True)
class Normalization:
    u: tuple[NormRecord, ...]
    y: tuple[NormRecord, ...]

    def to_dict(self) -> dict:
        return {"u": [[r.lo, r.hi] for r in self.u], "y": [[r.lo, r.hi] for r in self.y]}

    @classmethod
    def from_dict(cls, d: dict) -> "Normalization":
        return cls(tuple(NormRecord(*r) for r in d["u"]), tuple(NormRecord(*r) for r in d["y"]))

    @classmethod
    def identity(cls, m: int, p: int) -> "Normalization":
        return cls((NormRecord(-1.0, 1.0),) * m, (NormRecord(-1.0, 1.0),) * p)


# --- stimulus -----------------------------------------------------------------


@dataclass
class PwlSource:
    times: np.ndarray
    levels: np.ndarray  # (breakpoints, channels)
    v_lo: float = -1.0
    v_hi: float = 1.0

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.levels = np.asarray(self.levels, dtype=float).reshape(self.times.size, -1)
        if self.times[0] != 0.0 or np.any(np.diff(self.times) <= 0):
            raise ValueError("breakpoints must start at 0 and increase strictly")

    @property
    def segments(self) -> int:
        return self.times.size - 1

    def trajectory(self) -> Trajectory:
        return Trajectory(self.times, self.levels)

    def to_dict(self) -> dict:
        return {"type": "pwl", "times": self.times.tolist(), "levels": self.levels.tolist(),
                "v_lo": self.v_lo, "v_hi": self.v_hi}


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def gen_pwl(seed, T: float = 1.0, segments: int = 8, v_range=(-1.0, 1.0), channels: int = 1) -> PwlSource:
    """Random piecewise-linear source on [0, T]: sorted uniform interior
    breakpoints and uniform levels in ``v_range``."""
    if segments < 1:
        raise ValueError("segments must be >= 1")
    rng = _rng(seed)
    inner = np.sort(rng.uniform(0.0, T, size=segments - 1))
    times = np.concatenate([[0.0], inner, [T]])
    if np.any(np.diff(times) <= 0):  # measure-zero tie
        times = np.linspace(0.0, T, segments + 1)
    lo, hi = v_range
    levels = rng.uniform(lo, hi, size=(segments + 1, channels))
    return PwlSource(times, levels, lo, hi)


@dataclass
class PrbsSource:
    register_bits: int
    taps: tuple[int, ...]
    bit_period: float
    rise_time: float
    low: float = -1.0
    high: float = 1.0

    def __post_init__(self):
        if not self.taps or max(self.taps) > self.register_bits or min(self.taps) < 1:
            raise ValueError("taps must be 1-based register positions")
        if not 0 < self.rise_time < self.bit_period:
            raise ValueError("rise_time must be positive and shorter than bit_period")


def lfsr_bits(register_bits: int, taps, state: int, count: int) -> np.ndarray:
    """Fibonacci LFSR output; ``state`` is the non-zero initial register."""
    if state == 0 or state >= 2**register_bits:
        raise ValueError("LFSR state must be non-zero and fit the register")
    reg = [(state >> i) & 1 for i in range(register_bits)]
    out = np.empty(count, dtype=int)
    for k in range(count):
        out[k] = reg[-1]
        fb = 0
        for tap in taps:
            fb ^= reg[tap - 1]
        reg = [fb] + reg[:-1]
    return out


def gen_prbs(seed: int, bits: int = 7, taps=(7, 6), periods: int = 1, bit_period: float = 0.05,
             rise_time: float = 0.005, low: float = -1.0, high: float = 1.0) -> Trajectory:
    """Trapezoidal waveform of an LFSR bit stream; ``seed`` is the initial
    register state."""
    src = PrbsSource(bits, tuple(taps), bit_period, rise_time, low, high)
    nbits = periods * (2**bits - 1)
    seq = lfsr_bits(bits, src.taps, seed, nbits)
    lv = np.where(seq == 1, high, low)
    times, vals = [0.0], [lv[0]]
    for k in range(1, nbits):
        t = k * bit_period
        if lv[k] != lv[k - 1]:
            times += [t, t + rise_time]
            vals += [lv[k - 1], lv[k]]
    times.append(nbits * bit_period)
    vals.append(lv[-1])
    times, idx = np.unique(np.array(times), return_index=True)
    return Trajectory(times, np.array(vals)[idx])


# --- oracles ------------------------------------------------------------------


class CircuitOracle(Circuit):
    kind: str
    time_scale: float = 1e-9

    def labels(self):
        return tuple(f"v{k}" for k in range(self.ports)), tuple(f"i{k}" for k in range(self.ports))

    def to_dict(self) -> dict:
        return {"kind": self.kind, **asdict(self)}

    def aged(self, profile) -> "CircuitOracle":
        return self


@dataclass
class CommonSourceSurrogate(CircuitOracle):
    """One-transistor amplifier stand-in with a lagged tanh transconductance
    ``x0`` and an output-node memory ``x1``; both port currents are affine in
    the state."""

    g: float = 1.0
    k: float = 2.0
    tau_a: float = 0.05
    tau_b: float = 0.1
    c_in: float = 0.2
    c_miller: float = -0.1
    gm: float = 1.0
    g_out: float = 0.5
    r_src: tuple = (0.2, 1.0)
    r_in: tuple = (1.0, 5.0)
    r_out: tuple = (0.5, 2.0)
    c_range: tuple = (0.02, 0.1)
    segments: int = 8
    v_range: tuple = (-1.0, 1.0)
    kind: str = field(default="common_source_surrogate", init=False)
    n_state: int = field(default=2, init=False)
    ports: int = field(default=2, init=False)

    def f(self, x, v):
        return np.array([(-x[0] + self.g * np.tanh(self.k * v[0])) / self.tau_a,
                         (-x[1] + v[1]) / self.tau_b])

    def out(self, x, v):
        return np.array([self.c_in * x[0] + self.c_miller * x[1], self.gm * x[0] + self.g_out * x[1]])

    def random_load(self, rng) -> RcLoad:
        u = lambda r: float(rng.uniform(*r))  # noqa: E731
        return RcLoad(r=(u(self.r_in), u(self.r_out)), c=(u(self.c_range), u(self.c_range)),
                      r_src=(u(self.r_src),), driven=(0,))

    def random_source(self, rng, T) -> Trajectory:
        return gen_pwl(rng, T, self.segments, self.v_range).trajectory()


@dataclass
class InverterChainSurrogate(CircuitOracle):
    """Nine cascaded saturating stages driven from port 0, each a first-order
    lag of ``tanh(alpha (v_prev - v_th))``; port 1 is driven by the last
    stage. ``tau_scale`` slows every stage (aging)."""

    stages: int = 9
    alpha: float = 1.0
    v_th: float = 0.0
    tau: float = 0.01
    g_in: float = 0.5
    g_out: float = 1.0
    tau_scale: float = 1.0
    kappa: float = 0.3
    t0_years: float = 1e-3
    r_src: tuple = (0.05, 0.2)
    r_in: tuple = (2.0, 5.0)
    r_out: tuple = (1.0, 2.0)
    c_range: tuple = (0.005, 0.03)
    segments: int = 8
    v_range: tuple = (-1.0, 1.0)
    kind: str = field(default="inverter_chain_surrogate", init=False)
    ports: int = field(default=2, init=False)

    @property
    def n_state(self) -> int:
        return self.stages

    def f(self, x, v):
        prev = np.concatenate([[v[0]], x[:-1]])
        return (np.tanh(self.alpha * (prev - self.v_th)) - x) / (self.tau * self.tau_scale)

    def out(self, x, v):
        return np.array([self.g_in * x[0], -self.g_out * x[-1]])

    def aging_factor(self, duty: float, t_op_years: float) -> float:
        return 1.0 + self.kappa * duty * np.log10(1.0 + t_op_years / self.t0_years)

    def aged(self, profile) -> "InverterChainSurrogate":
        return replace(self, tau_scale=self.aging_factor(profile.duty(self.v_th), profile.t_op))

    def random_load(self, rng) -> RcLoad:
        u = lambda r: float(rng.uniform(*r))  # noqa: E731
        return RcLoad(r=(u(self.r_in), u(self.r_out)), c=(u(self.c_range), u(self.c_range)),
                      r_src=(u(self.r_src),), driven=(0,))

    def random_source(self, rng, T) -> Trajectory:
        return gen_pwl(rng, T, self.segments, self.v_range).trajectory()

    def to_dict(self) -> dict:
        d = super().to_dict()
        d["n_state"] = self.stages
        return d


@dataclass
class Linear2Port(CircuitOracle):
    """Two independent RC sections; port ``k`` current is ``g_k`` times the
    capacitor voltage, so responses have closed forms."""

    r: tuple = (1.0, 2.0)
    c: tuple = (0.1, 0.1)
    g: tuple = (1.0, 0.5)
    r_src: tuple = (0.5, 2.0)
    r_load: tuple = (1.0, 5.0)
    c_range: tuple = (0.05, 0.2)
    segments: int = 6
    v_range: tuple = (-1.0, 1.0)
    kind: str = field(default="linear_2port", init=False)
    n_state: int = field(default=2, init=False)
    ports: int = field(default=2, init=False)

    @property
    def tau(self) -> np.ndarray:
        return np.asarray(self.r) * np.asarray(self.c)

    def f(self, x, v):
        return (np.asarray(v) - x) / self.tau

    def out(self, x, v):
        return np.asarray(self.g) * x

    def jac(self, x, v, eps=None):
        t = self.tau
        return np.diag(-1.0 / t), np.diag(1.0 / t), np.diag(self.g), np.zeros((2, 2))

    def random_load(self, rng) -> RcLoad:
        u = lambda r: float(rng.uniform(*r))  # noqa: E731
        return RcLoad(r=(u(self.r_load), u(self.r_load)), c=(u(self.c_range), u(self.c_range)),
                      r_src=(u(self.r_src), u(self.r_src)), driven=(0, 1))

    def random_source(self, rng, T) -> Trajectory:
        return gen_pwl(rng, T, self.segments, self.v_range, channels=2).trajectory()


ORACLES = {
    "common_source_surrogate": CommonSourceSurrogate,
    "inverter_chain_surrogate": InverterChainSurrogate,
    "linear_2port": Linear2Port,
}


def make_oracle(kind: str, **overrides) -> CircuitOracle:
    try:
        cls = ORACLES[kind]
    except KeyError:
        raise ValueError(f"unknown oracle {kind!r}; choose from {sorted(ORACLES)}") from None
    return cls(**overrides)


def oracle_from_dict(d: dict) -> CircuitOracle:
    d = dict(d)
    kind = d.pop("kind")
    cls = ORACLES[kind]
    init = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()
            if k in cls.__dataclass_fields__ and cls.__dataclass_fields__[k].init}
    return cls(**init)


def default_solver_config(T: float) -> SolverConfig:
    return SolverConfig(rtol=1e-7, atol=1e-9, h_init=1e-4, h_max=T / 400)


def simulate_oracle(oracle: CircuitOracle, load, source: Trajectory, T: float,
                    solver_cfg: SolverConfig | None = None):
    """Port voltages ``u`` and port currents ``y`` of the oracle in closed loop
    with ``load`` driven by ``source``, started at the operating point."""
    cfg = solver_cfg or default_solver_config(T)
    v, i = simulate_closed_loop(oracle, load, source, T, cfg)
    vl, il = oracle.labels()
    return Trajectory(v.times, v.values, vl), Trajectory(i.times, i.values, il)


# --- datasets -----------------------------------------------------------------


@dataclass
class DatasetItem:
    index: int
    seed: list
    u: Trajectory
    y: Trajectory
    load: dict
    source: dict
    profile: dict | None = None

    def to_dict(self) -> dict:
        d = {
            "index": self.index, "seed": self.seed, "load": self.load, "source": self.source,
            "t": self.u.times.tolist(), "u": self.u.values.tolist(), "y": self.y.values.tolist(),
            "u_labels": list(self.u.labels), "y_labels": list(self.y.labels),
        }
        if self.profile is not None:
            d["profile"] = self.profile
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetItem":
        u = Trajectory(d["t"], d["u"], tuple(d["u_labels"]))
        y = Trajectory(d["t"], d["y"], tuple(d["y_labels"]))
        return cls(d["index"], d["seed"], u, y, d["load"], d["source"], d.get("profile"))


@dataclass
class Dataset:
    oracle: dict
    horizon: float
    time_scale: float
    seed: int
    items: list[DatasetItem]
    train: list[int]
    valid: list[int]
    norm: Normalization
    schema: str = DATASET_SCHEMA

    def split(self, name: str) -> list[DatasetItem]:
        if name == "all":
            return list(self.items)
        idx = {"train": self.train, "valid": self.valid}[name]
        by_index = {it.index: it for it in self.items}
        return [by_index[i] for i in idx]

    def normalized(self, item: DatasetItem) -> tuple[Trajectory, Trajectory]:
        return (Trajectory(item.u.times, normalize(item.u.values, self.norm.u), item.u.labels),
                Trajectory(item.y.times, normalize(item.y.values, self.norm.y), item.y.labels))

    def to_dict(self) -> dict:
        return {
            "schema": self.schema, "oracle": self.oracle, "horizon": self.horizon,
            "time_scale": self.time_scale, "seed": self.seed,
            "split": {"train": self.train, "valid": self.valid},
            "normalization": self.norm.to_dict(),
            "trajectories": [it.to_dict() for it in self.items],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Dataset":
        return cls(d["oracle"], d["horizon"], d["time_scale"], d["seed"],
                   [DatasetItem.from_dict(t) for t in d["trajectories"]],
                   list(d["split"]["train"]), list(d["split"]["valid"]),
                   Normalization.from_dict(d["normalization"]), d["schema"])

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "Dataset":
        path = Path(path)
        if path.is_dir():
            path = path / "dataset.json"
        return cls.from_dict(json.loads(path.read_text()))


def split_indices(n: int, seed: int, valid_fraction: float = 0.2) -> tuple[list[int], list[int]]:
    perm = np.random.default_rng([seed, 0xD5]).permutation(n)
    n_valid = int(round(valid_fraction * n)) if n > 1 else 0
    return sorted(perm[n_valid:].tolist()), sorted(perm[:n_valid].tolist())


def fit_normalization(items: list[DatasetItem]) -> Normalization:
    return Normalization(fit_records(np.vstack([it.u.values for it in items])),
                         fit_records(np.vstack([it.y.values for it in items])))


def _simulate_item(args):
    oracle, index, seed, T, cfg, amplitude = args
    rng = np.random.default_rng([seed, index])
    load = oracle.random_load(rng)
    source = oracle.random_source(rng, T)
    if amplitude != 1.0:
        source = Trajectory(source.times, amplitude * source.values)
    u, y = simulate_oracle(oracle, load, source, T, cfg)
    src = {"type": "pwl", "times": source.times.tolist(), "levels": source.values.tolist()}
    return DatasetItem(index, [seed, index], u, y, load.to_dict(), src)


def parallel_map(fn, tasks, jobs: int = 1) -> list:
    """Ordered map, in worker processes when ``jobs > 1``; results do not
    depend on scheduling because every task carries its own seed."""
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, os.cpu_count() or 1)) as ex:
            return list(ex.map(fn, tasks))
    return [fn(t) for t in tasks]


def build_dataset(oracle: CircuitOracle | str, n: int, seed: int = 0, horizon: float = 1.0,
                  solver_cfg: SolverConfig | None = None, valid_fraction: float = 0.2,
                  jobs: int = 1, amplitude: float = 1.0) -> Dataset:
    """Simulate ``n`` oracle/load/source draws and package them with a
    seed-controlled train/valid split and train-split normalization."""
    if n < 1:
        raise ValueError("need at least one trajectory")
    if isinstance(oracle, str):
        oracle = make_oracle(oracle)
    cfg = solver_cfg or default_solver_config(horizon)
    items = parallel_map(_simulate_item, [(oracle, i, seed, horizon, cfg, amplitude) for i in range(n)], jobs)
    train, valid = split_indices(n, seed, valid_fraction)
    norm = fit_normalization([items[i] for i in train])
    return Dataset(oracle.to_dict(), horizon, oracle.time_scale, seed, items, train, valid, norm)


__all__ = [
    "NormRecord", "Normalization", "normalize", "denormalize", "fit_records",
    "PwlSource", "PrbsSource", "gen_pwl", "gen_prbs", "lfsr_bits",
    "CircuitOracle", "CommonSourceSurrogate", "InverterChainSurrogate", "Linear2Port",
    "make_oracle", "oracle_from_dict", "simulate_oracle",
    "RcLoad", "IdealLoad", "load_from_dict",
    "DatasetItem", "Dataset", "build_dataset", "split_indices", "fit_normalization", "parallel_map",
]
