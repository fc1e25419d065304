"""DC operating point of a CTRNN and its parameter sensitivity."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import CtrnnParams, Realized, realize, realized_to_learnable
from .numerics import NumericsError, solve_linear
from .solver import SolverConfig, SolverError, integrate

DC_TOL = 1e-9


class NoConvergenceError(RuntimeError):
    def __init__(self, message: str, best: np.ndarray, residual: float):
        super().__init__(f"{message} (best residual {residual:.3e})")
        self.best = best
        self.residual = residual


@dataclass
class DcResult:
    x0: np.ndarray
    residual_norm: float
    iterations: int
    method: str  # "newton" | "integrate_fallback"


def _newton(r: Realized, u0, x, tol, max_iter):
    fx = r.f(x, u0)
    res = float(np.max(np.abs(fx)))
    it = 0
    while res > tol and it < max_iter:
        it += 1
        try:
            dx = solve_linear(r.jac_x(x, u0), -fx)
        except NumericsError:
            break
        step = 1.0
        for _ in range(21):
            x_try = x + step * dx
            f_try = r.f(x_try, u0)
            res_try = float(np.max(np.abs(f_try)))
            if res_try < res:
                break
            step *= 0.5
        else:
            break
        x, fx, res = x_try, f_try, res_try
    if 0.0 < res <= tol:
        # one polishing step: gradients through x0 need it well below tol
        try:
            x_try = x + solve_linear(r.jac_x(x, u0), -fx)
            res_try = float(np.max(np.abs(r.f(x_try, u0))))
            if res_try < res:
                x, res = x_try, res_try
        except NumericsError:
            pass
    return x, res, it


def solve_dc(
    params: CtrnnParams | Realized,
    u0,
    guess=None,
    tol: float = DC_TOL,
    max_iter: int = 100,
) -> DcResult:
    """Solve ``f(x0, u0) = 0`` by damped Newton iteration.

    When Newton stalls on a constrained model the unforced-toward-equilibrium
    dynamics are integrated for 50 time constants (they converge globally for
    constant input) and Newton is restarted from the end point.
    """
    r = params if isinstance(params, Realized) else realize(params)
    u0 = np.asarray(u0, dtype=float)
    x = np.zeros(r.params.n) if guess is None else np.array(guess, dtype=float)
    x, res, it = _newton(r, u0, x, tol, max_iter)
    if res <= tol:
        return DcResult(x, res, it, "newton")
    best, best_res = x, res
    if r.params.constrained:
        cfg = SolverConfig(rtol=1e-10, atol=1e-12, h_init=1e-3 * r.tau, max_steps=500_000)
        try:
            traj = integrate(lambda t, xx: r.f(xx, u0), x, (0.0, 50.0 * r.tau), cfg)
            x2, res2, it2 = _newton(r, u0, traj.values[-1], tol, max_iter)
            if res2 <= tol:
                return DcResult(x2, res2, it + it2, "integrate_fallback")
            if res2 < best_res:
                best, best_res = x2, res2
        except SolverError:
            pass
    raise NoConvergenceError("DC solve did not converge", best, best_res)


@dataclass
class UniquenessReport:
    passed: bool
    spread: float
    solutions: np.ndarray
    failures: int


def dc_uniqueness_probe(params: CtrnnParams, u0, starts: int = 10, seed: int = 0,
                        scale: float = 10.0, agree_tol: float = 1e-6) -> UniquenessReport:
    """Solve from ``starts`` random guesses (uniform in [-scale, scale]) and
    check that every solve lands on the same point."""
    rng = np.random.default_rng(seed)
    r = realize(params)
    sols, failures = [], 0
    for _ in range(starts):
        guess = rng.uniform(-scale, scale, size=params.n)
        try:
            sols.append(solve_dc(r, u0, guess).x0)
        except NoConvergenceError:
            failures += 1
    sols = np.array(sols).reshape(len(sols), params.n)
    spread = float(np.max(np.abs(sols - sols[0]))) if len(sols) else np.inf
    return UniquenessReport(failures == 0 and spread <= agree_tol, spread, sols, failures)


def dc_pullback(r: Realized, u0, x0, g, grads: dict) -> None:
    """Accumulate ``g . dx0/dtheta`` (realized quantities) into ``grads``.

    By the implicit function theorem ``dx0/dtheta = -J^{-1} df/dtheta`` with
    ``J = df/dx`` at the equilibrium, so the pullback is the VJP of ``f`` with
    cotangent ``-J^{-T} g``.
    """
    lam = solve_linear(r.jac_x(x0, u0).T, np.asarray(g, dtype=float))
    r.vjp(np.asarray(x0, dtype=float)[None, :], np.asarray(u0, dtype=float)[None, :], -lam[None, :], grads)


class DcSensitivity:
    """Gradient operator of the equilibrium with respect to the learnables."""

    def __init__(self, params: CtrnnParams, u0, x0):
        self.r = realize(params)
        self.u0 = np.asarray(u0, dtype=float)
        self.x0 = np.asarray(x0, dtype=float)
        # fail early on a singular Jacobian
        solve_linear(self.r.jac_x(self.x0, self.u0), np.zeros(params.n))

    def pullback(self, g) -> dict[str, np.ndarray]:
        grads: dict = {}
        dc_pullback(self.r, self.u0, self.x0, g, grads)
        return realized_to_learnable(self.r, grads)

    def jacobian(self, name: str) -> np.ndarray:
        """Full ``dx0/d(name)`` as an (n, *shape) array."""
        rows = [np.asarray(self.pullback(e)[name]) for e in np.eye(self.r.params.n)]
        return np.array(rows)


def dc_sensitivity(params: CtrnnParams, u0, x0) -> DcSensitivity:
    return DcSensitivity(params, u0, x0)
