import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from iss_node.checks import random_params
from iss_node.model import CtrnnParams, realize
from iss_node.numerics import InvalidInputError
from iss_node.stability import certify, dissipation_probe, iss_probe, lds_margin, lyapunov_V


def scalar(a_theta, constrained=True):
    return CtrnnParams(log_tau=0.0, W=[[1.0]], A_theta=[[a_theta]], B=[[0.0]], mu=[0.0], nu=[0.0],
                       H=[[1.0]], b=[0.0], log_omega=[0.0], constrained=constrained)


def test_scalar_tight():
    rep = certify(scalar(2.0))
    assert rep.rho == pytest.approx(1.001, abs=1e-15)
    assert rep.lds_margin == pytest.approx(-9.995002498750624e-4, abs=1e-15)
    assert abs(rep.lds_margin - rep.theorem2_bound) <= 1e-9
    assert rep.satisfied


def test_margin_by_hand():
    # Omega = I: eigenvalues of 2 (AW - I) are -1 and -1.6
    A = np.array([[0.5, 0.0], [0.0, 0.2]])
    assert lds_margin(A, np.eye(2), 1.0, np.ones(2)) == pytest.approx(-1.0)


def test_unconstrained_unstable_fails():
    rep = certify(scalar(3.0, constrained=False))
    assert rep.lds_margin > 0 and not rep.satisfied


def test_rank_deficient_flagged():
    p = CtrnnParams(log_tau=0.0, W=np.eye(2), A_theta=[[1.0, 0.0], [0.0, 0.0]], B=np.zeros((2, 1)),
                    mu=np.zeros(2), nu=np.zeros(2), H=np.zeros((1, 2)), b=np.zeros(1), log_omega=np.zeros(2))
    rep = certify(p)
    assert not rep.rank_A_full and not rep.satisfied


@settings(max_examples=40)
@given(st.integers(0, 100_000), st.sampled_from([(2, 3), (4, 7), (6, 14)]))
def test_certificate_property(seed, dims):
    rep = certify(random_params(np.random.default_rng(seed), *dims))
    assert rep.lds_margin <= rep.theorem2_bound + 1e-8


def test_lyapunov_zero_at_origin_and_positive():
    A = np.array([[1.0, -0.5], [0.3, 0.2], [0.0, 1.0]])
    om = np.array([1.0, 2.0, 0.5])
    assert lyapunov_V(np.zeros(2), A, om, np.eye(2)) == 0.0
    assert lyapunov_V(np.array([0.3, -1.0]), A, om, np.eye(2), "tanh") > 0.0


def test_lyapunov_needs_pd():
    with pytest.raises(InvalidInputError):
        lyapunov_V(np.ones(1), np.ones((1, 1)), np.ones(1), -np.eye(1))


def test_lyapunov_scalar_by_hand():
    # x^2 + 2 * 1 * (A x)^2 / 2 for relu with A x > 0
    assert lyapunov_V(np.array([2.0]), np.array([[1.5]]), np.ones(1), np.eye(1)) == pytest.approx(4.0 + 9.0)


@pytest.mark.parametrize("seed", range(4))
def test_dissipation_on_certified(seed):
    rng = np.random.default_rng(seed)
    p = random_params(rng, 3, 5, kind="tanh" if seed % 2 else "relu")
    rep = dissipation_probe(p, rng.normal(size=3), horizon=5.0, samples=101)
    assert rep.passed and rep.max_violation <= 1e-9


def test_iss_probe_bounded(small_params):
    rep = iss_probe(small_params, trials=3, horizon=5.0)
    assert rep.passed and np.isfinite(rep.max_state_norm)


def test_report_dict(small_params):
    d = certify(small_params).to_dict()
    assert set(d) >= {"lds_margin", "rho", "theorem2_bound", "satisfied"}
