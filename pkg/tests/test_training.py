import numpy as np
import pytest
from dataclasses import replace

from iss_node.circuits import IdealLoad
from iss_node.data import Linear2Port, build_dataset, simulate_oracle
from iss_node.solver import Trajectory
from iss_node.stability import certify, lds_margin
from iss_node.training import (
    TrainConfig, TrainState, adam_step, evaluate_openloop, fit, grad, init_params, loss_and_grad, mc_loss,
    predict, prepare,
)


def _pair(rng, m=1, p=1, knots=5):
    ts = np.concatenate([[0.0], np.sort(rng.uniform(0, 1, knots - 2)), [1.0]])
    return Trajectory(ts, rng.uniform(-1, 1, (knots, m))), Trajectory(ts, rng.uniform(-1, 1, (knots, p)))


@pytest.fixture
def model_and_pair():
    rng = np.random.default_rng(4)
    params = init_params(2, 4, 1, 2, seed=1)
    u, y = _pair(rng, p=2)
    return params, prepare(u, y, 40)


def _self_target(params, pt, offset=None):
    yhat = predict(params, pt)
    vals = yhat.values if offset is None else yhat.values + offset
    return prepare(pt.u, Trajectory(yhat.times, vals), len(pt.grid) - 1)


def test_init_modes():
    p = init_params(3, 6, 1, 1, "proposed", seed=2)
    assert certify(p).satisfied
    assert np.all(np.abs(p.W) <= 1 / np.sqrt(6))
    b = init_params(3, 6, 1, 1, "baseline", seed=2, tau=5.0)
    assert not b.constrained and lds_margin(b.A_theta, b.W, b.tau, np.ones(6)) < 0
    assert init_params(3, 6, 1, 1, seed=2).to_dict() == init_params(3, 6, 1, 1, seed=2).to_dict()
    with pytest.raises(ValueError):
        init_params(4, 3, 1, 1)


def test_config_validation():
    for bad in ({"lr": 0.0}, {"K": 0}, {"delta": -1.0}, {"mode": "other"}, {"frozen": ("zeta",)}):
        with pytest.raises(ValueError):
            TrainConfig(**bad)
    assert "log_omega" in TrainConfig(mode="baseline").frozen_set()
    assert "log_omega" not in TrainConfig().frozen_set()


def test_zero_residual(model_and_pair):
    params, pt = model_and_pair
    tgt = _self_target(params, pt)
    res = loss_and_grad(params, [tgt], 16, np.random.default_rng(0))
    assert res.loss < 1e-24
    for g in res.grads.values():
        assert np.max(np.abs(g)) < 1e-10


def test_offset_gives_c_squared(model_and_pair):
    params, pt = model_and_pair
    tgt = _self_target(params, pt, offset=np.array([0.3, 0.0]))
    for seed in range(3):
        assert mc_loss(params, [tgt], 7, np.random.default_rng(seed)) == pytest.approx(0.09, rel=1e-10)
    assert evaluate_openloop(params, [tgt]).per_channel[0] == pytest.approx(0.09, rel=1e-10)
    assert evaluate_openloop(params, [tgt]).mse == pytest.approx(0.045, rel=1e-10)


def test_bias_gradient_is_twice_mean_residual(model_and_pair):
    params, pt = model_and_pair
    S = np.linspace(0.05, 0.95, 9)
    g = grad(params, [pt], 9, None, sample_times=S)
    yhat = np.array([np.interp(S, predict(params, pt).times, predict(params, pt).values[:, c]) for c in range(2)])
    ytrue = np.array([np.interp(S, pt.y.times, pt.y.values[:, c]) for c in range(2)])
    assert np.allclose(g["b"], 2 * (yhat - ytrue).mean(axis=1), atol=1e-12)


def test_gradient_matches_fd(model_and_pair):
    params, pt = model_and_pair
    rng_seed = 3
    g = grad(params, [pt], 8, np.random.default_rng(rng_seed))
    eps = 1e-6
    for name in ("A_theta", "W", "mu", "log_omega"):
        a = params.arrays()[name]
        idx = (0,) * a.ndim
        hi, lo = a.copy(), a.copy()
        hi[idx] += eps
        lo[idx] -= eps
        fd = (mc_loss(params.with_arrays(**{name: hi}), [pt], 8, np.random.default_rng(rng_seed))
              - mc_loss(params.with_arrays(**{name: lo}), [pt], 8, np.random.default_rng(rng_seed))) / (2 * eps)
        assert g[name][idx] == pytest.approx(fd, rel=1e-4, abs=1e-9)


def test_eval_matches_dense_mc():
    rng = np.random.default_rng(11)
    params = init_params(2, 4, 1, 1, seed=5)
    u, y = _pair(rng, knots=7)
    pt = prepare(u, y, 50)
    dense = (np.arange(400_000) + 0.5) / 400_000
    mc = mc_loss(params, [pt], dense.size, None, sample_times=dense)
    assert evaluate_openloop(params, [pt]).mse == pytest.approx(mc, abs=1e-6)


def test_adam_first_step_and_zero_grad():
    params = init_params(1, 1, 1, 1, seed=0)
    cfg = TrainConfig(lr=0.01)
    st = TrainState.fresh(params)
    zero = {k: np.zeros_like(v) for k, v in params.arrays().items()}
    assert adam_step(st, zero, cfg).params.to_dict() == params.to_dict()
    one = dict(zero, b=np.ones(1))
    after = adam_step(st, one, cfg).params
    assert after.b[0] == pytest.approx(params.b[0] - 0.01, rel=1e-6)


def test_adam_rejects_nonfinite():
    params = init_params(1, 1, 1, 1, seed=0)
    st = TrainState.fresh(params)
    bad = {k: np.zeros_like(v) for k, v in params.arrays().items()}
    bad["W"] = np.full_like(bad["W"], np.nan)
    out = adam_step(st, bad, TrainConfig())
    assert out.params.to_dict() == params.to_dict() and out.rejected == 1 and out.step == 0


@pytest.fixture(scope="module")
def small_ds():
    return build_dataset("linear_2port", 5, seed=1)


def test_fit_deterministic_and_certified(small_ds):
    cfg = TrainConfig(epochs=3, lr=1e-2, batch_size=2, K=8, grid_steps=40, state_dim=2, hidden=4, seed=3)
    a, b = fit(small_ds, cfg), fit(small_ds, cfg)
    assert [r["train_loss"] for r in a.metrics] == [r["train_loss"] for r in b.metrics]
    assert a.best.to_dict() == b.best.to_dict()
    assert all(r["certified"] for r in a.metrics)
    assert a.metrics[0]["epoch"] == 0 and len(a.metrics) == 4
    assert a.best_valid_mse == min(r["valid_mse"] for r in a.metrics)


def test_overfit_single_trajectory():
    o = Linear2Port()
    src = Trajectory([0.0, 0.25, 0.5, 0.75, 1.0], [[0, 0], [0.8, -0.5], [-0.3, 0.6], [0.5, 0.2], [0.0, -0.4]])
    u, y = simulate_oracle(o, IdealLoad(2), src, 1.0)
    pt = prepare(u, y, 50)
    cfg = TrainConfig(lr=1e-2)
    st = TrainState.fresh(init_params(2, 4, 2, 2, seed=0, tau=0.2), seed=0)
    lr_sched = lambda k: 1e-3 + 0.5 * (1e-2 - 1e-3) * (1 + np.cos(np.pi * k / 2000))  # noqa: E731
    for k in range(2000):
        res = loss_and_grad(st.params, [pt], 32, st.rng, frozen=("log_omega",))
        st = adam_step(st, res.grads, cfg, lr_sched(k))
    assert evaluate_openloop(st.params, [pt]).mse * 2 < 1e-4
