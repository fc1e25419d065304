"""Numerical certificates and probes for the stability construction."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .equilibrium import solve_dc
from .model import CtrnnParams, realize, sigma, sigma_integral
from .numerics import InvalidInputError, sym_lambda_max, sym_lambda_min
from .solver import SolverConfig, Trajectory, integrate, interp

CERT_TOL = 1e-8
RANK_TOL = 1e-8
P_GRID = (1e-2, 1e-1, 1.0, 1e1, 1e2)


def lds_matrix(A, W, tau: float, omega) -> np.ndarray:
    omega = np.asarray(omega, dtype=float)
    M = A @ W - np.eye(A.shape[0]) / tau
    return omega[:, None] * M + M.T * omega[None, :]


def lds_margin(A, W, tau: float, omega) -> float:
    """Largest eigenvalue of Omega(AW - I/tau) + (W^T A^T - I/tau)Omega;
    negative means the diagonal-stability condition holds."""
    return sym_lambda_max(lds_matrix(np.asarray(A, float), np.asarray(W, float), tau, omega))


@dataclass
class StabilityReport:
    lds_margin: float
    rho: float
    theorem2_bound: float
    satisfied: bool
    rank_A_full: bool
    constrained: bool
    lambda_min_AtA: float

    def to_dict(self) -> dict:
        return asdict(self)


def certify(params: CtrnnParams) -> StabilityReport:
    """Check the diagonal-stability margin against the guaranteed bound
    ``-2 delta / (tau (rho + 1)) * min(omega)``.

    For unconstrained parameters no rescaling is applied, so the bound is
    evaluated with ``rho = 0``.
    """
    r = realize(params)
    omega = params.omega.values
    margin = lds_margin(r.A, params.W, r.tau, omega)
    bound = -2.0 * params.delta / (r.tau * (r.rho + 1.0)) * float(np.min(omega))
    lam_min = sym_lambda_min(r.A.T @ r.A)
    rank_ok = lam_min > RANK_TOL
    return StabilityReport(
        lds_margin=margin, rho=r.rho, theorem2_bound=bound,
        satisfied=bool(margin <= bound + CERT_TOL and rank_ok),
        rank_A_full=bool(rank_ok), constrained=params.constrained, lambda_min_AtA=lam_min,
    )


def lyapunov_V(x, A, omega, P, kind: str = "relu", offset=None) -> float:
    """Quadratic-plus-integral Lyapunov candidate

        V(x) = x^T P x + 2 sum_i omega_i int_0^{A_i x} s_i(r) dr

    where ``s_i(r) = sigma(r + offset_i) - sigma(offset_i)``; ``offset`` is the
    hidden pre-activation at the equilibrium (zero by default), which shifts
    the equilibrium to the origin without changing the sector condition.
    """
    x = np.asarray(x, dtype=float)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    P = np.atleast_2d(np.asarray(P, dtype=float))
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    if sym_lambda_min(P) <= 0.0:
        raise InvalidInputError("P must be positive definite")
    z0 = np.zeros(A.shape[0]) if offset is None else np.asarray(offset, dtype=float)
    s = A @ x
    integral = sigma_integral(z0 + s, kind) - sigma_integral(z0, kind) - sigma(z0, kind) * s
    return float(x @ P @ x + 2.0 * np.sum(omega * integral))


@dataclass
class DissipationReport:
    passed: bool
    p: float | None
    times: np.ndarray
    V: np.ndarray
    max_violation: float


def dissipation_probe(params: CtrnnParams, x0, horizon: float = 10.0,
                      solver_cfg: SolverConfig | None = None, samples: int = 201,
                      slack: float = 1e-9) -> DissipationReport:
    """Simulate the unforced model from ``x0`` (a deviation from the unforced
    equilibrium) and check that V is non-increasing at the sample times.

    P is taken as p*I with p scanned over ``P_GRID``; the first p that gives a
    non-increasing sampled V is reported.
    """
    cfg = solver_cfg or SolverConfig(rtol=1e-10, atol=1e-13, h_init=1e-4)
    r = realize(params)
    zero_u = np.zeros(params.m)
    try:
        x_eq = solve_dc(r, zero_u).x0
    except RuntimeError:
        x_eq = np.zeros(params.n)
    z_eq = r.A @ x_eq + params.mu
    e0 = np.asarray(x0, dtype=float)
    traj = integrate(lambda t, e: r.f(e + x_eq, zero_u), e0, (0.0, horizon), cfg)
    ts = np.linspace(0.0, horizon, samples)
    es = interp(traj, ts)
    if not np.all(np.isfinite(es)):
        return DissipationReport(False, None, ts, np.full(samples, np.inf), np.inf)
    omega = params.omega.values
    best = None
    for p in P_GRID:
        P = p * np.eye(params.n)
        V = np.array([lyapunov_V(e, r.A, omega, P, params.kind, z_eq) for e in es])
        viol = float(np.max(np.diff(V), initial=0.0))
        if viol <= slack:
            return DissipationReport(True, p, ts, V, max(viol, 0.0))
        if best is None or viol < best[2]:
            best = (p, V, viol)
    return DissipationReport(False, best[0], ts, best[1], best[2])


@dataclass
class IssReport:
    passed: bool
    max_state_norm: float
    equilibrium_norm: float
    per_trial: list


def _random_bounded_input(rng, m, bound, horizon, segments=8) -> Trajectory:
    t = np.concatenate([[0.0], np.sort(rng.uniform(0.0, horizon, segments - 1)), [horizon]])
    t = np.unique(t)
    return Trajectory(t, rng.uniform(-bound, bound, size=(t.size, m)))


def iss_probe(params: CtrnnParams, input_bound: float = 1.0, trials: int = 10,
              horizon: float = 10.0, seed: int = 0, cap: float = 1e6,
              solver_cfg: SolverConfig | None = None) -> IssReport:
    """Drive the model from its equilibrium with random piecewise-linear
    inputs bounded by ``input_bound`` and record the largest state norm.

    Passing only says no divergence was seen; it is evidence, not proof.
    """
    cfg = solver_cfg or SolverConfig(rtol=1e-6, atol=1e-9)
    rng = np.random.default_rng(seed)
    r = realize(params)
    x_eq = solve_dc(r, np.zeros(params.m)).x0
    worst, per = 0.0, []
    for _ in range(trials):
        u = _random_bounded_input(rng, params.m, input_bound, horizon)
        x0 = solve_dc(r, u.values[0]).x0
        try:
            traj = integrate(lambda t, x, uu: r.f(x, uu), x0, (0.0, horizon), cfg, u=u)
            peak = float(np.max(np.abs(traj.values)))
        except RuntimeError:
            peak = np.inf
        if not np.isfinite(peak):
            peak = np.inf
        per.append(peak)
        worst = max(worst, peak)
    return IssReport(bool(worst <= cap), worst, float(np.max(np.abs(x_eq))), per)
