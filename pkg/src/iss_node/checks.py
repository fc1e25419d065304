"""Invariant checks shared by ``iss-node verify`` and the acceptance tests.

Each check returns a ``CheckResult``; sizes default to the full acceptance
settings and can be reduced for quick runs.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .equilibrium import dc_sensitivity, dc_uniqueness_probe, solve_dc
from .model import CtrnnParams
from .solver import SolverConfig, Trajectory, convergence_order, integrate
from .stability import CERT_TOL, certify, dissipation_probe, iss_probe
from .training import grad, mc_loss, min_kink_distance, prepare


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    threshold: str
    detail: str = ""
    seconds: float = 0.0

    def line(self) -> str:
        return (f"{'PASS' if self.passed else 'FAIL'}  {self.name:<24} value={self.value:.3e}  "
                f"need {self.threshold}  ({self.seconds:.1f}s){'  ' + self.detail if self.detail else ''}")


def random_params(rng, n: int, l: int, m: int = 1, p: int = 1, constrained: bool = True,
                  kind: str = "relu") -> CtrnnParams:
    """Random parameters over several orders of magnitude of weight scale,
    so both active (rho > 0) and inactive rescaling are exercised."""
    s = 10.0 ** rng.uniform(-1, 1)
    return CtrnnParams(
        log_tau=rng.uniform(-1.0, 1.0), W=s * rng.normal(size=(n, l)) / math.sqrt(l),
        A_theta=s * rng.normal(size=(l, n)) / math.sqrt(n), B=rng.normal(size=(l, m)),
        mu=rng.normal(size=l), nu=0.5 * rng.normal(size=n), H=rng.normal(size=(p, n)),
        b=rng.normal(size=p), log_omega=0.5 * rng.normal(size=l), constrained=constrained, kind=kind,
    )


def _timed(fn):
    def wrapper(*args, **kw):
        t0 = time.perf_counter()
        res = fn(*args, **kw)
        res.seconds = time.perf_counter() - t0
        return res

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


@_timed
def check_certificate(draws: int = 1000, seed: int = 0,
                      dims=((2, 3), (6, 14), (20, 30))) -> CheckResult:
    """Every constrained draw meets the margin bound."""
    rng = np.random.default_rng(seed)
    worst, active, failed = -np.inf, 0, 0
    for k in range(draws):
        n, l = dims[k % len(dims)]
        rep = certify(random_params(rng, n, l))
        worst = max(worst, rep.lds_margin - rep.theorem2_bound)
        active += rep.rho > 0
        failed += not rep.satisfied
    return CheckResult("certificate", failed == 0, worst, f"margin - bound <= {CERT_TOL:g}",
                       f"{draws} draws, {active} with rho > 0")


@_timed
def check_scalar_tightness() -> CheckResult:
    """1-D case with rho > 0: the margin equals the bound."""
    p = CtrnnParams(log_tau=0.0, W=[[1.0]], A_theta=[[2.0]], B=[[0.0]], mu=[0.0], nu=[0.0],
                    H=[[1.0]], b=[0.0], log_omega=[0.0], delta=1e-3)
    rep = certify(p)
    gap = abs(rep.lds_margin - rep.theorem2_bound)
    return CheckResult("scalar_tightness", gap <= 1e-9 and rep.rho > 0, gap, "<= 1e-9",
                       f"margin {rep.lds_margin:.6e}, rho {rep.rho:.6f}")


@_timed
def check_solver() -> CheckResult:
    """Observed fixed-step order on x' = -x and adaptive accuracy of e^-1."""
    hs = [0.1, 0.05, 0.025, 0.0125]
    order = convergence_order(lambda t, x: -x, np.array([1.0]), lambda t: np.exp(-t), hs)
    tr = integrate(lambda t, x: -x, np.array([1.0]), (0.0, 1.0), SolverConfig(rtol=1e-8, atol=1e-8))
    err = abs(tr.values[-1, 0] - math.exp(-1.0))
    ok = order is not None and 2.7 <= order <= 3.3 and err <= 1e-6
    return CheckResult("solver_order", ok, order or float("nan"), "order in [2.7, 3.3], e^-1 err <= 1e-6",
                       f"e^-1 error {err:.2e}")


def gradient_instance(rng, grid_steps: int = 20, K: int = 8):
    """A small random model with one random PWL input/target pair."""
    p = random_params(rng, 2, 3)
    ts = np.concatenate([[0.0], np.sort(rng.uniform(0, 1, 3)), [1.0]])
    u = Trajectory(ts, rng.uniform(-1, 1, size=(5, 1)))
    y = Trajectory(ts, rng.uniform(-1, 1, size=(5, 1)))
    return p, [prepare(u, y, grid_steps)]


def fd_gradient_error(params: CtrnnParams, batch, K: int = 8, seed: int = 1, eps: float = 1e-6) -> float:
    """max |analytic - central FD| / max |FD| over every learnable entry."""
    g = grad(params, batch, K, np.random.default_rng(seed))
    an, fd = [], []
    for name, arr in params.arrays().items():
        a = np.atleast_1d(np.array(arr, dtype=float))
        for idx in np.ndindex(a.shape):
            vals = []
            for sgn in (1.0, -1.0):
                b = a.copy()
                b[idx] += sgn * eps
                val = float(b[0]) if name == "log_tau" else b
                vals.append(mc_loss(params.with_arrays(**{name: val}), batch, K, np.random.default_rng(seed)))
            fd.append((vals[0] - vals[1]) / (2 * eps))
            an.append(np.atleast_1d(g[name])[idx])
    an, fd = np.array(an), np.array(fd)
    return float(np.max(np.abs(an - fd)) / max(np.max(np.abs(fd)), 1e-12))


@_timed
def check_gradients(instances: int = 20, seed: int = 0, tol: float = 1e-4, kink: float = 1e-4) -> CheckResult:
    """Training gradient against central differences on small random models."""
    rng = np.random.default_rng(seed)
    errs, skipped = [], 0
    while len(errs) < instances:
        p, batch = gradient_instance(rng)
        if min_kink_distance(p, batch) < kink:
            skipped += 1
            continue
        errs.append(fd_gradient_error(p, batch))
    worst = max(errs)
    return CheckResult("gradients", worst <= tol, worst, f"<= {tol:g} relative",
                       f"{instances} instances, {skipped} kink draws skipped")


def _dc_fd_error(params: CtrnnParams, u0, name: str, eps: float = 1e-6) -> float:
    x0 = solve_dc(params, u0).x0
    J = dc_sensitivity(params, u0, x0).jacobian(name)
    a = np.atleast_1d(np.array(params.arrays()[name], dtype=float))
    fd = np.zeros_like(J)
    for idx in np.ndindex(a.shape):
        cols = []
        for sgn in (1.0, -1.0):
            b = a.copy()
            b[idx] += sgn * eps
            val = float(b[0]) if name == "log_tau" else b
            cols.append(solve_dc(params.with_arrays(**{name: val}), u0, guess=x0).x0)
        fd[(slice(None),) + (idx if name != "log_tau" else ())] = (cols[0] - cols[1]) / (2 * eps)
    return float(np.max(np.abs(J - fd)) / max(np.max(np.abs(fd)), 1e-12))


@_timed
def check_equilibrium(models: int = 100, seed: int = 0, tol: float = 1e-4) -> CheckResult:
    """Multi-start DC uniqueness and implicit-diff sensitivity against FD."""
    rng = np.random.default_rng(seed)
    bad, worst = 0, 0.0
    for _ in range(models):
        p = random_params(rng, 3, 6, m=2)
        u0 = rng.uniform(-1, 1, size=2)
        rep = dc_uniqueness_probe(p, u0, starts=10, seed=int(rng.integers(1 << 31)))
        bad += not rep.passed
        for name in ("A_theta", "mu", "log_tau"):
            worst = max(worst, _dc_fd_error(p, u0, name))
    return CheckResult("equilibrium", bad == 0 and worst <= tol, worst, f"unique and FD <= {tol:g}",
                       f"{models} models, {bad} non-unique")


@_timed
def check_dissipation(models: int = 50, seed: int = 0) -> CheckResult:
    """Unforced V non-increasing and bounded-input trajectories bounded."""
    rng = np.random.default_rng(seed)
    bad_v, bad_iss, worst = 0, 0, 0.0
    for k in range(models):
        p = random_params(rng, 3, 5, kind="relu" if k % 2 == 0 else "tanh")
        if not certify(p).satisfied:
            bad_v += 1
            continue
        rep = dissipation_probe(p, rng.normal(size=3) * 2.0)
        bad_v += not rep.passed
        worst = max(worst, rep.max_violation)
        bad_iss += not iss_probe(p, trials=3, seed=k).passed
    return CheckResult("dissipation_iss", bad_v == 0 and bad_iss == 0, worst, "V increase <= 1e-9, bounded",
                       f"{models} models, {bad_v} V failures, {bad_iss} ISS failures")


def run_all(quick: bool = False) -> list[CheckResult]:
    if quick:
        return [check_certificate(150), check_scalar_tightness(), check_solver(), check_gradients(3),
                check_equilibrium(10), check_dissipation(5)]
    return [check_certificate(), check_scalar_tightness(), check_solver(), check_gradients(),
            check_equilibrium(), check_dissipation()]


__all__ = [
    "CheckResult", "random_params", "gradient_instance", "fd_gradient_error", "run_all",
    "check_certificate", "check_scalar_tightness", "check_solver", "check_gradients",
    "check_equilibrium", "check_dissipation",
]
