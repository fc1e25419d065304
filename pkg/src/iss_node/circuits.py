"""Closed-loop interconnection of a circuit block with a load.

The block sees the load's port voltages ``v`` and returns port currents ``i``;
the load integrates those currents and may be driven by an external source
``u_ext``. Loads are linear:

    dxl/dt = Ax xl + Ai i + Au u_ext,     v = Cx xl + Du u_ext

with no path from ``i`` to ``v``, so the joint system is a plain ODE.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .numerics import NumericsError, solve_linear
from .solver import SolverConfig, SolverError, Trajectory, integrate, interp

class ConfigurationError(ValueError):
    pass


class Circuit:
    """Block with port voltages in and port currents out."""

    n_state: int
    ports: int

    def f(self, x, v):
        raise NotImplementedError

    def out(self, x, v):
        raise NotImplementedError

    def jac(self, x, v, eps: float = 1e-7):
        """(df/dx, df/dv, dout/dx, dout/dv) by central differences."""
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        fx = np.zeros((self.n_state, x.size))
        ox = np.zeros((self.ports, x.size))
        fv = np.zeros((self.n_state, v.size))
        ov = np.zeros((self.ports, v.size))
        for j in range(x.size):
            e = np.zeros_like(x)
            e[j] = eps
            fx[:, j] = (self.f(x + e, v) - self.f(x - e, v)) / (2 * eps)
            ox[:, j] = (self.out(x + e, v) - self.out(x - e, v)) / (2 * eps)
        for j in range(v.size):
            e = np.zeros_like(v)
            e[j] = eps
            fv[:, j] = (self.f(x, v + e) - self.f(x, v - e)) / (2 * eps)
            ov[:, j] = (self.out(x, v + e) - self.out(x, v - e)) / (2 * eps)
        return fx, fv, ox, ov


@dataclass
class RcLoad:
    """One parallel RC to ground per port; ports listed in ``driven`` are also
    fed from the external source through ``r_src``. ``coupling`` scales the
    block's current into the load (0 decouples it)."""

    r: tuple[float, ...]
    c: tuple[float, ...]
    r_src: tuple[float, ...] = ()
    driven: tuple[int, ...] = ()
    coupling: float = 1.0
    topology: str = "parallel_rc_to_ground"

    def __post_init__(self):
        self.r, self.c = tuple(map(float, self.r)), tuple(map(float, self.c))
        self.r_src, self.driven = tuple(map(float, self.r_src)), tuple(map(int, self.driven))
        if len(self.r) != len(self.c) or len(self.r_src) != len(self.driven):
            raise ConfigurationError("inconsistent load description")
        if min(self.r + self.c + self.r_src, default=1.0) <= 0:
            raise ConfigurationError("load resistances and capacitances must be positive")

    @property
    def ports(self) -> int:
        return len(self.r)

    @property
    def n_state(self) -> int:
        return self.ports

    @property
    def n_ext(self) -> int:
        return len(self.driven)

    def matrices(self):
        c = np.array(self.c)
        g = 1.0 / np.array(self.r)
        Au = np.zeros((self.ports, self.n_ext))
        for k, (j, rs) in enumerate(zip(self.driven, self.r_src)):
            g[j] += 1.0 / rs
            Au[j, k] = 1.0 / (rs * c[j])
        Ax = np.diag(-g / c)
        Ai = -self.coupling * np.diag(1.0 / c)
        return Ax, Ai, Au, np.eye(self.ports), np.zeros((self.ports, self.n_ext))

    def to_dict(self) -> dict:
        return {"type": "rc", **asdict(self)}


@dataclass
class IdealLoad:
    """Ports held directly at the source voltages (no load state)."""

    ports: int
    n_state: int = field(default=0, init=False)

    @property
    def n_ext(self) -> int:
        return self.ports

    def matrices(self):
        P = self.ports
        return np.zeros((0, 0)), np.zeros((0, P)), np.zeros((0, P)), np.zeros((P, 0)), np.eye(P)

    def to_dict(self) -> dict:
        return {"type": "ideal", "ports": self.ports}


def load_from_dict(d: dict):
    d = dict(d)
    kind = d.pop("type")
    if kind == "rc":
        return RcLoad(**d)
    if kind == "ideal":
        return IdealLoad(d["ports"])
    raise ConfigurationError(f"unknown load type {kind!r}")


class Interconnection:
    """Joint ODE of block state ``x`` and load state ``xl``."""

    def __init__(self, circuit: Circuit, load, source: Trajectory):
        if circuit.ports != load.ports:
            raise ConfigurationError(f"block has {circuit.ports} ports, load has {load.ports}")
        if source.dim != load.n_ext:
            raise ConfigurationError(f"source has {source.dim} channels, load expects {load.n_ext}")
        if getattr(load, "feedthrough", None) is not None and np.any(load.feedthrough):
            raise ConfigurationError("load voltage depends directly on block current (algebraic loop)")
        self.circuit, self.load, self.source = circuit, load, source
        self.Ax, self.Ai, self.Au, self.Cx, self.Du = load.matrices()
        self.nx, self.nl = circuit.n_state, load.n_state

    @property
    def dim(self) -> int:
        return self.nx + self.nl

    def split(self, X):
        return X[: self.nx], X[self.nx:]

    def ports(self, X, uext):
        x, xl = self.split(X)
        v = self.Cx @ xl + self.Du @ uext
        return v, self.circuit.out(x, v)

    def residual(self, X, uext):
        x, xl = self.split(X)
        v = self.Cx @ xl + self.Du @ uext
        i = self.circuit.out(x, v)
        return np.concatenate([self.circuit.f(x, v), self.Ax @ xl + self.Ai @ i + self.Au @ uext])

    def rhs(self, t, X):
        return self.residual(X, interp(self.source, t))

    def jacobian(self, X, uext):
        x, xl = self.split(X)
        v = self.Cx @ xl + self.Du @ uext
        fx, fv, ox, ov = self.circuit.jac(x, v)
        top = np.hstack([fx, fv @ self.Cx])
        bottom = np.hstack([self.Ai @ ox, self.Ax + self.Ai @ ov @ self.Cx])
        return np.vstack([top, bottom])

    def dc(self, uext, guess=None, tol: float = 1e-9, max_iter: int = 100) -> np.ndarray:
        """Joint operating point by damped Newton on the stacked residual, with
        a settling integration as fallback."""
        uext = np.asarray(uext, dtype=float)
        X = np.zeros(self.dim) if guess is None else np.array(guess, dtype=float)
        X, res = _newton(lambda z: self.residual(z, uext), lambda z: self.jacobian(z, uext), X, tol, max_iter)
        if res <= tol:
            return X
        cfg = SolverConfig(rtol=1e-9, atol=1e-12)
        traj = integrate(lambda t, z: self.residual(z, uext), X, (0.0, 100.0), cfg)
        X, res = _newton(lambda z: self.residual(z, uext), lambda z: self.jacobian(z, uext),
                         traj.values[-1], tol, max_iter)
        if res <= tol:
            return X
        raise SolverError(f"joint DC solve failed (residual {res:.3e})")

    def simulate(self, T: float, cfg: SolverConfig):
        X0 = self.dc(self.source.values[0])
        traj = integrate(self.rhs, X0, (0.0, T), cfg, tstops=self.source.times)
        uext = interp(self.source, traj.times)
        vs, cs = zip(*(self.ports(X, ue) for X, ue in zip(traj.values, uext)))
        return Trajectory(traj.times, np.array(vs)), Trajectory(traj.times, np.array(cs)), traj


def _newton(F, J, X, tol, max_iter):
    fx = F(X)
    res = float(np.max(np.abs(fx)))
    for _ in range(max_iter):
        if res <= tol:
            break
        try:
            dx = solve_linear(J(X), -fx)
        except NumericsError:
            break
        step = 1.0
        for _ in range(21):
            Xt = X + step * dx
            ft = F(Xt)
            rt = float(np.max(np.abs(ft)))
            if rt < res:
                break
            step *= 0.5
        else:
            break
        X, fx, res = Xt, ft, rt
    return X, res


def simulate_closed_loop(circuit: Circuit, load, source: Trajectory, T: float,
                         cfg: SolverConfig | None = None):
    """Port voltages and block currents of the interconnection over [0, T],
    started from the joint operating point."""
    cfg = cfg or SolverConfig(rtol=1e-7, atol=1e-9, h_max=T / 400)
    v, i, _ = Interconnection(circuit, load, source).simulate(T, cfg)
    return v, i


def pwl_sq_error(a: Trajectory, b: Trajectory, T: float) -> np.ndarray:
    """Per-channel integral over [0, T] of ``(a - b)^2`` for piecewise-linear
    signals, exact: on the merged breakpoints the difference is linear, and
    a linear d integrates as ``h (d0^2 + d0 d1 + d1^2) / 3``."""
    ts = np.union1d(np.union1d(a.times, b.times), [0.0, T])
    ts = ts[(ts >= 0.0) & (ts <= T)]
    d = interp(a, ts) - interp(b, ts)
    h = np.diff(ts)[:, None]
    return np.sum(h * (d[:-1] ** 2 + d[:-1] * d[1:] + d[1:] ** 2), axis=0) / 3.0


def trajectory_mse(a: Trajectory, b: Trajectory, T: float) -> np.ndarray:
    """Per-channel time-averaged squared difference on [0, T]."""
    return pwl_sq_error(a, b, T) / T
