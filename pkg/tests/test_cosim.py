import numpy as np
import pytest

from iss_node.circuits import ConfigurationError, IdealLoad, RcLoad, simulate_closed_loop, trajectory_mse
from iss_node.cosim import ModelCircuit, interconnect, test_mse as closed_loop_mse
from iss_node.data import CommonSourceSurrogate, Linear2Port, NormRecord, Normalization, gen_pwl, simulate_oracle
from iss_node.model import CtrnnParams
from iss_node.solver import SolverConfig, Trajectory

TIGHT = SolverConfig(rtol=1e-9, atol=1e-12, h_max=0.0025)


def exact_linear_model(o: Linear2Port, bias: float = 100.0) -> CtrnnParams:
    """A ReLU CTRNN that reproduces ``o`` exactly: the large bias keeps every
    unit in its linear region and ``nu`` cancels it."""
    taus = o.tau
    tau = float(taus.min())
    mu = np.full(2, bias)
    return CtrnnParams(log_tau=np.log(tau), W=np.eye(2), A_theta=np.diag(1 / tau - 1 / taus),
                       B=np.diag(1 / taus), mu=mu, nu=-mu, H=np.diag(o.g), b=np.zeros(2),
                       log_omega=np.zeros(2), constrained=False)


def test_model_circuit_normalization_affine():
    p = exact_linear_model(Linear2Port())
    norm = Normalization((NormRecord(-2.0, 2.0), NormRecord(0.0, 1.0)), (NormRecord(-1.0, 3.0), NormRecord(5.0, 5.0)))
    mc = ModelCircuit(p, norm)
    v = np.array([1.0, 0.25])
    assert np.allclose(mc._un(v), [0.5, -0.5])
    y = mc.out(np.array([0.5, 0.2]), v)
    assert np.allclose(y, [1.0 + 2.0 * 0.5, 5.0])


def test_self_comparison_is_zero():
    o = Linear2Port()
    rep = closed_loop_mse(exact_linear_model(o), Normalization.identity(2, 2), o, runs=3, seed=2, solver_cfg=TIGHT)
    assert rep.failures == 0 and rep.mean_mse < 1e-12


def test_offset_model():
    o = Linear2Port()
    p = exact_linear_model(o)
    src = o.random_source(np.random.default_rng(3), 1.0)
    # ideal ports: the offset cannot feed back, so the error is exactly c^2
    _, i_true = simulate_closed_loop(o, IdealLoad(2), src, 1.0, TIGHT)
    _, i_model = simulate_closed_loop(ModelCircuit(p.with_arrays(b=np.array([0.1, 0.0])),
                                                   Normalization.identity(2, 2)), IdealLoad(2), src, 1.0, TIGHT)
    assert np.allclose(trajectory_mse(i_true, i_model, 1.0), [0.01, 0.0], atol=1e-12)
    # through an RC load the offset current shifts the port voltage as well
    rep = closed_loop_mse(p.with_arrays(b=np.array([0.1, 0.0])), Normalization.identity(2, 2), o,
                          runs=2, seed=0, solver_cfg=TIGHT)
    assert rep.mean_mse > 1e-4


def test_zero_coupling_matches_open_loop():
    o = CommonSourceSurrogate()
    rng = np.random.default_rng(1)
    src = o.random_source(rng, 1.0)
    load = RcLoad(r=(2.0, 1.0), c=(0.05, 0.05), r_src=(0.5,), driven=(0,), coupling=0.0)
    v, i = simulate_closed_loop(o, load, src, 1.0, TIGHT)
    _, y_open = simulate_oracle(o, IdealLoad(2), v, 1.0, TIGHT)
    assert np.max(trajectory_mse(i, y_open, 1.0)) < 1e-10


def test_closed_loop_bounded_and_ordered():
    o = Linear2Port()
    rep_a = closed_loop_mse(exact_linear_model(o).with_arrays(b=np.array([0.05, -0.05])),
                            Normalization.identity(2, 2), o, runs=4, seed=5)
    rep_b = closed_loop_mse(exact_linear_model(o).with_arrays(b=np.array([0.05, -0.05])),
                            Normalization.identity(2, 2), o, runs=4, seed=5)
    assert rep_a.per_run == rep_b.per_run
    assert np.mean([r["mse"] for r in rep_a.per_run[::-1]]) == pytest.approx(rep_a.mean_mse, rel=1e-14)


def test_port_mismatch():
    o = Linear2Port()
    with pytest.raises(ConfigurationError):
        interconnect(exact_linear_model(o), RcLoad(r=(1.0,), c=(1.0,)), gen_pwl(0, 1.0, 2).trajectory())
    with pytest.raises(ConfigurationError):
        interconnect(exact_linear_model(o), IdealLoad(2), gen_pwl(0, 1.0, 2).trajectory())


def test_algebraic_loop_rejected():
    class ResistiveLoad(RcLoad):
        feedthrough = np.ones((1, 1))

    load = ResistiveLoad(r=(1.0, 1.0), c=(1.0, 1.0))
    with pytest.raises(ConfigurationError):
        interconnect(exact_linear_model(Linear2Port()), load, Trajectory([0.0, 1.0], np.zeros((2, 0))))


def test_unequal_ports_rejected():
    p = CtrnnParams(log_tau=0.0, W=np.eye(1), A_theta=np.eye(1), B=np.ones((1, 2)), mu=[0.0], nu=[0.0],
                    H=np.ones((1, 1)), b=[0.0], log_omega=[0.0])
    with pytest.raises(ConfigurationError):
        ModelCircuit(p, Normalization.identity(2, 1))
