"""Bogacki-Shampine 3(2) integration.

Two modes share one tableau:

* ``adaptive``: embedded error control with the FSAL stage reused, optional
  stop times that the step sequence must land on (input breakpoints).
* ``fixed_grid``: uniform steps whose stage states are recorded so that a
  loss on the grid states can be pulled back exactly (``backprop_fixed_grid``).
"""

from __future__ import annotations

import bisect
import csv
import io
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

# Butcher tableau
C2, C3 = 0.5, 0.75
A21, A32 = 0.5, 0.75
B1, B2, B3 = 2.0 / 9.0, 1.0 / 3.0, 4.0 / 9.0
# third-order minus embedded second-order weights (last entry multiplies the FSAL stage)
E1, E2, E3, E4 = B1 - 7.0 / 24.0, B2 - 0.25, B3 - 1.0 / 3.0, -0.125
STAGE_OFFSETS = (0.0, C2, C3)


class SolverError(RuntimeError):
    pass


class StiffnessError(SolverError):
    pass


class StepBudgetError(SolverError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    rtol: float = 1e-6
    atol: float = 1e-8
    h_init: float = 1e-3
    h_min: float = 1e-12
    h_max: float = np.inf
    max_steps: int = 200_000
    mode: str = "adaptive"
    grid_steps: int = 200

    def __post_init__(self):
        if not (0 < self.h_min <= self.h_init <= self.h_max):
            raise ValueError("need 0 < h_min <= h_init <= h_max")
        if self.rtol <= 0 or self.atol <= 0:
            raise ValueError("tolerances must be positive")
        if self.mode not in ("adaptive", "fixed_grid"):
            raise ValueError(f"unknown solver mode {self.mode!r}")
        if self.grid_steps < 1:
            raise ValueError("grid_steps must be >= 1")


@dataclass
class Trajectory:
    """Sampled multichannel signal, linear between samples and held constant
    outside the sampled range."""

    times: np.ndarray
    values: np.ndarray
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        self.values = values
        if self.times.ndim != 1 or self.times.size == 0:
            raise ValueError("trajectory needs at least one sample")
        if self.values.shape[0] != self.times.size:
            raise ValueError("times and values disagree in length")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("trajectory times must be strictly increasing")
        if not self.labels:
            self.labels = tuple(f"ch{i}" for i in range(self.dim))
        self.labels = tuple(self.labels)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def t0(self) -> float:
        return float(self.times[0])

    @property
    def t1(self) -> float:
        return float(self.times[-1])

    def __call__(self, t):
        return interp(self, t)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", *self.labels])
        for t, row in zip(self.times, self.values):
            w.writerow([repr(float(t)), *(repr(float(v)) for v in row)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "Trajectory":
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], [r for r in rows[1:] if r]
        data = np.array([[float(v) for v in r] for r in body])
        return cls(data[:, 0], data[:, 1:], tuple(header[1:]))


def interp(traj: Trajectory, t):
    """Piecewise-linear value(s) at time(s) ``t``: shape (d,) for a scalar
    ``t``, (len(t), d) for an array."""
    if traj.times.size == 0:
        raise ValueError("empty trajectory")
    scalar = np.ndim(t) == 0
    times = traj.times
    if scalar and times.size > 1:
        t = float(t)
        if t <= times[0]:
            return traj.values[0].copy()
        if t >= times[-1]:
            return traj.values[-1].copy()
        k = bisect.bisect_right(times, t) - 1
        w = (t - times[k]) / (times[k + 1] - times[k])
        return (1.0 - w) * traj.values[k] + w * traj.values[k + 1]
    tt = np.atleast_1d(np.asarray(t, dtype=float))
    if times.size == 1:
        out = np.repeat(traj.values, tt.size, axis=0)
    else:
        tc = np.clip(tt, times[0], times[-1])
        k = np.clip(np.searchsorted(times, tc, side="right") - 1, 0, times.size - 2)
        w = ((tc - times[k]) / (times[k + 1] - times[k]))[:, None]
        out = (1.0 - w) * traj.values[k] + w * traj.values[k + 1]
        exact = tc == times[k]
        out[exact] = traj.values[k[exact]]
        last = tc == times[-1]
        out[last] = traj.values[-1]
    return out[0] if scalar else out


def _error_ratio(err, x, x_new, atol, rtol) -> float:
    scale = atol + rtol * np.maximum(np.abs(x), np.abs(x_new))
    return float(np.max(np.abs(err) / scale)) if err.size else 0.0


def integrate(
    f: Callable,
    x0,
    t_span: tuple[float, float],
    cfg: SolverConfig = SolverConfig(),
    u: Trajectory | None = None,
    tstops: Sequence[float] = (),
):
    """Integrate ``dx/dt = f(t, x)`` (or ``f(t, x, u(t))`` when an input
    trajectory is given) over ``t_span``.

    Returns the state trajectory at accepted steps; in ``fixed_grid`` mode the
    second return value is the recorded step sequence.
    """
    t0, t1 = float(t_span[0]), float(t_span[1])
    if not t1 > t0:
        raise ValueError("t_span must have positive length")
    x0 = np.asarray(x0, dtype=float)
    if not np.all(np.isfinite(x0)):
        raise ValueError("initial state is not finite")
    if u is not None:
        rhs = lambda t, x: f(t, x, interp(u, t))  # noqa: E731
        tstops = tuple(tstops) + tuple(u.times)
    else:
        rhs = f
    if cfg.mode == "fixed_grid":
        u_stages = None
        if u is not None:
            grid = np.linspace(t0, t1, cfg.grid_steps + 1)
            u_stages = stage_inputs(u, grid)
            rec = fixed_grid_forward(lambda t, x, uu: f(t, x, uu), x0, grid, u_stages)
        else:
            grid = np.linspace(t0, t1, cfg.grid_steps + 1)
            rec = fixed_grid_forward(lambda t, x, uu: f(t, x), x0, grid, None)
        return Trajectory(grid, rec.states.reshape(grid.size, -1)), rec
    return _integrate_adaptive(rhs, x0, t0, t1, cfg, tstops)


def _integrate_adaptive(rhs, x0, t0, t1, cfg: SolverConfig, tstops):
    stops = np.unique(np.asarray([s for s in tstops if t0 < s < t1] + [t1], dtype=float))
    ts, xs = [t0], [x0.copy()]
    t, x = t0, x0.copy()
    k1 = np.asarray(rhs(t, x), dtype=float)
    h = min(cfg.h_init, cfg.h_max, t1 - t0)
    si = 0
    steps = 0
    while t < t1:
        if steps >= cfg.max_steps:
            raise StepBudgetError(f"exceeded {cfg.max_steps} steps at t={t:.6g}")
        while stops[si] <= t:
            si += 1
        target = stops[si]
        landing = t + h >= target - 1e-12 * max(1.0, abs(target))
        step = target - t if landing else h
        k2 = rhs(t + C2 * step, x + step * A21 * k1)
        k3 = rhs(t + C3 * step, x + step * A32 * k2)
        x_new = x + step * (B1 * k1 + B2 * k2 + B3 * k3)
        t_new = target if landing else t + step
        k4 = np.asarray(rhs(t_new, x_new), dtype=float)
        err = step * (E1 * k1 + E2 * k2 + E3 * k3 + E4 * k4)
        en = _error_ratio(err, x, x_new, cfg.atol, cfg.rtol)
        if not np.isfinite(en):
            en = np.inf
        steps += 1
        if en <= 1.0:
            t, x, k1 = t_new, x_new, k4
            ts.append(t)
            xs.append(x.copy())
        elif step <= cfg.h_min:
            raise StiffnessError(f"step size underflow at t={t:.6g}")
        factor = 5.0 if en == 0.0 else min(5.0, max(0.2, 0.9 * en ** (-1.0 / 3.0)))
        if en > 1.0:
            factor = min(factor, 0.9)
        h = min(max(step * factor, cfg.h_min), cfg.h_max)
    return Trajectory(np.array(ts), np.array(xs).reshape(len(ts), -1))


@dataclass
class StepRecord:
    """Fixed-grid step sequence: grid times, node states (steps+1, ..., n),
    interior stage states and the inputs used at each stage."""

    grid: np.ndarray
    states: np.ndarray
    stage2: np.ndarray
    stage3: np.ndarray
    inputs: np.ndarray | None = field(default=None, repr=False)

    @property
    def steps(self) -> int:
        return self.grid.size - 1


def stage_inputs(u: Trajectory, grid: np.ndarray) -> np.ndarray:
    """Inputs at the three stage times of every grid step: (steps, 3, m)."""
    h = np.diff(grid)
    times = grid[:-1, None] + h[:, None] * np.asarray(STAGE_OFFSETS)[None, :]
    return interp(u, times.ravel()).reshape(h.size, 3, -1)


def fixed_grid_forward(f, x0, grid, u_stages=None) -> StepRecord:
    """Uniform BS3 steps of ``f(t, x, u)``; ``u_stages[k, i]`` is the input at
    stage ``i`` of step ``k`` (leading batch axes after the stage axis are
    allowed)."""
    grid = np.asarray(grid, dtype=float)
    x = np.asarray(x0, dtype=float)
    K = grid.size - 1
    states = np.empty((K + 1,) + x.shape)
    st2 = np.empty((K,) + x.shape)
    st3 = np.empty((K,) + x.shape)
    states[0] = x
    for k in range(K):
        t, h = grid[k], grid[k + 1] - grid[k]
        us = (None, None, None) if u_stages is None else u_stages[k]
        k1 = f(t, x, us[0])
        X2 = x + h * A21 * k1
        k2 = f(t + C2 * h, X2, us[1])
        X3 = x + h * A32 * k2
        k3 = f(t + C3 * h, X3, us[2])
        x = x + h * (B1 * k1 + B2 * k2 + B3 * k3)
        states[k + 1], st2[k], st3[k] = x, X2, X3
    return StepRecord(grid, states, st2, st3, u_stages)


def backprop_fixed_grid(rec: StepRecord, vjp, g_states) -> np.ndarray:
    """Reverse pass through a recorded fixed-grid solve.

    ``g_states`` holds dL/dx at each grid node; ``vjp(t, x, u, g)`` returns the
    cotangent of ``x`` for the stage evaluation ``f(t, x, u)`` and is expected to
    accumulate parameter gradients itself. Returns dL/dx0.
    """
    g = np.array(g_states[-1], dtype=float)
    for k in range(rec.steps - 1, -1, -1):
        t, h = rec.grid[k], rec.grid[k + 1] - rec.grid[k]
        us = (None, None, None) if rec.inputs is None else rec.inputs[k]
        gX3 = vjp(t + C3 * h, rec.stage3[k], us[2], h * B3 * g)
        gX2 = vjp(t + C2 * h, rec.stage2[k], us[1], h * B2 * g + h * A32 * gX3)
        gX1 = vjp(t, rec.states[k], us[0], h * B1 * g + h * A21 * gX2)
        g = g + gX3 + gX2 + gX1 + g_states[k]
    return g


def fixed_step_solve(f, x0, t_span, h: float) -> np.ndarray:
    """Final state after uniform steps of size ``h`` (must divide the span)."""
    t0, t1 = t_span
    steps = int(round((t1 - t0) / h))
    grid = np.linspace(t0, t1, steps + 1)
    rec = fixed_grid_forward(lambda t, x, u: f(t, x), np.asarray(x0, dtype=float), grid)
    return rec.states[-1]


def convergence_order(f, x0, exact: Callable, h_list, t_span=(0.0, 1.0)):
    """Least-squares slope of log(error) against log(h) for the fixed-step
    solver, or ``None`` when every error is at round-off level."""
    errs = []
    for h in h_list:
        xT = fixed_step_solve(f, x0, t_span, h)
        errs.append(float(np.max(np.abs(xT - exact(t_span[1])))))
    errs = np.array(errs)
    if np.all(errs < 1e-13):
        return None
    slope, _ = np.polyfit(np.log(np.asarray(h_list, dtype=float)), np.log(errs), 1)
    return float(slope)
