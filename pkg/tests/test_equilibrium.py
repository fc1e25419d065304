import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from iss_node.checks import random_params
from iss_node.equilibrium import NoConvergenceError, dc_sensitivity, dc_uniqueness_probe, solve_dc
from iss_node.model import CtrnnParams, dynamics


def test_linear_region_closed_form():
    # all pre-activations positive: x = tau (W (A x + B u + mu) + nu) solved linearly
    p = CtrnnParams(log_tau=0.0, W=[[0.5]], A_theta=[[0.2]], B=[[1.0]], mu=[5.0], nu=[0.0],
                    H=[[1.0]], b=[0.0], log_omega=[0.0])
    x = solve_dc(p, [1.0]).x0
    assert x[0] == pytest.approx(0.5 * 6.0 / (1 - 0.1), rel=1e-12)


@settings(max_examples=20)
@given(st.integers(0, 100_000))
def test_residual_small(seed):
    rng = np.random.default_rng(seed)
    p = random_params(rng, 3, 6, m=2)
    u0 = rng.uniform(-1, 1, 2)
    res = solve_dc(p, u0)
    assert np.max(np.abs(dynamics(p, res.x0, u0))) <= 1e-9


def test_uniqueness_probe_constrained(rng):
    for _ in range(5):
        rep = dc_uniqueness_probe(random_params(rng, 3, 6), np.zeros(1))
        assert rep.passed and rep.failures == 0


def test_bistable_unconstrained_detected():
    # x' = -x + 2 tanh(2x) has three equilibria; multi-start disagrees
    p = CtrnnParams(log_tau=0.0, W=[[2.0]], A_theta=[[2.0]], B=[[0.0]], mu=[0.0], nu=[0.0],
                    H=[[1.0]], b=[0.0], log_omega=[0.0], constrained=False, kind="tanh")
    rep = dc_uniqueness_probe(p, [0.0], starts=10, seed=3)
    assert not rep.passed


def test_no_convergence_error():
    # x' = -x + relu(x) + 1 has no root for x > 0 and none below either
    p = CtrnnParams(log_tau=0.0, W=[[1.0]], A_theta=[[1.0]], B=[[0.0]], mu=[0.0], nu=[1.0],
                    H=[[1.0]], b=[0.0], log_omega=[0.0], constrained=False)
    with pytest.raises(NoConvergenceError):
        solve_dc(p, [0.0])


@pytest.mark.parametrize("name", ["A_theta", "W", "B", "mu", "nu", "log_tau", "log_omega"])
def test_sensitivity_matches_fd(name):
    rng = np.random.default_rng(7)
    p = random_params(rng, 3, 5, kind="tanh")
    u0 = np.array([0.3])
    x0 = solve_dc(p, u0).x0
    J = dc_sensitivity(p, u0, x0).jacobian(name)
    a = np.atleast_1d(np.array(p.arrays()[name], dtype=float))
    for idx in np.ndindex(a.shape):
        xs = []
        for s in (1, -1):
            b = a.copy()
            b[idx] += s * 1e-6
            xs.append(solve_dc(p.with_arrays(**{name: float(b[0]) if name == "log_tau" else b}), u0, x0).x0)
        fd = (xs[0] - xs[1]) / 2e-6
        col = J[(slice(None),) + (idx if name != "log_tau" else ())]
        assert np.allclose(col, fd, atol=1e-6)
