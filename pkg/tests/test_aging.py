import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from iss_node.aging import (
    AgedParams, AgingDataset, GruPerturbNet, StressProfile, _gru_run, aged_params, aging_loss_and_grad,
    build_aging_dataset, fit_aging, fresh_aging_params, gru_backward, gru_forward, load_aging_model,
    prepare_pairs, random_profile, save_aging_model,
)
from iss_node.data import Normalization
from iss_node.solver import Trajectory
from iss_node.stability import certify
from iss_node.training import TrainConfig, init_params, predict, prepare


@pytest.fixture
def fresh():
    return fresh_aging_params(init_params(3, 3, 2, 2, seed=4, tau=0.05))


def _random_net(fresh, seed=0, scale=0.5):
    net = GruPerturbNet.init(fresh.hidden, fresh.n, fresh.m, seed=seed)
    rng = np.random.default_rng(seed + 100)
    return net.with_weights(**{k: scale * rng.normal(size=net.weights()[k].shape)
                               for k in ("HA", "cA", "HB", "cB", "Hmu", "cmu")})


def test_profile_features_and_duty():
    p = StressProfile(Trajectory([0.0, 0.5, 0.5 + 1e-9, 1.0], [1.0, 1.0, -1.0, -1.0]), 0.1)
    f = p.features()
    assert f.shape == (64, 2) and np.all(f[:, 1] == -1.0)
    assert p.duty() == pytest.approx(0.5, abs=1e-3)
    assert StressProfile.from_dict(p.to_dict()).t_op == 0.1


def test_random_profile_periodic():
    p = random_profile(np.random.default_rng(1))
    assert p.u_stress.values[0, 0] == p.u_stress.values[-1, 0]
    assert 1e-3 <= p.t_op <= 10.0


def test_zero_heads_give_zero_perturbation(fresh):
    net = GruPerturbNet.init(3, 3, 2, seed=0)
    dA, dB, dmu = gru_forward(net, random_profile(np.random.default_rng(0)).features())
    assert not dA.any() and not dB.any() and not dmu.any()


def test_zero_perturbation_is_bitwise_fresh(fresh):
    ap = AgedParams(fresh, np.zeros((3, 3)), np.zeros((3, 2)), np.zeros(3))
    rng = np.random.default_rng(2)
    u = Trajectory([0.0, 0.4, 1.0], rng.uniform(-1, 1, (3, 2)))
    pt = prepare(u, u, 50)
    assert np.array_equal(predict(ap.realized(), pt).values, predict(fresh, pt).values)


@settings(max_examples=50)
@given(st.integers(0, 10_000))
def test_certificate_over_profiles(seed):
    fresh = fresh_aging_params(init_params(3, 3, 2, 2, seed=seed % 7, tau=0.05))
    net = _random_net(fresh, seed % 5, scale=3.0)
    _, p = aged_params(fresh, net, random_profile(np.random.default_rng(seed)))
    assert certify(p).satisfied


def test_gru_inputs_validated(fresh):
    with pytest.raises(ValueError):
        gru_forward(GruPerturbNet.init(3, 3, 2), np.zeros((0, 2)))
    with pytest.raises(ValueError):
        fresh_aging_params(init_params(2, 3, 1, 1))


def test_gru_backward_matches_fd(fresh):
    net = _random_net(fresh, 3)
    xs = random_profile(np.random.default_rng(5)).features()[:12]
    rng = np.random.default_rng(6)
    gA, gB, gmu = rng.normal(size=(3, 3)), rng.normal(size=(3, 2)), rng.normal(size=3)

    def scalar(n):
        dA, dB, dmu = gru_forward(n, xs)
        return np.sum(gA * dA) + np.sum(gB * dB) + gmu @ dmu

    g = gru_backward(net, _gru_run(net, xs), gA, gB, gmu)
    eps = 1e-6
    for name in ("Wz", "Ur", "bh", "Uh", "HA"):
        w = net.weights()[name]
        idx = tuple(rng.integers(0, s) for s in w.shape)
        hi, lo = w.copy(), w.copy()
        hi[idx] += eps
        lo[idx] -= eps
        fd = (scalar(net.with_weights(**{name: hi})) - scalar(net.with_weights(**{name: lo}))) / (2 * eps)
        assert g[name][idx] == pytest.approx(fd, rel=1e-6, abs=1e-9)


def test_aging_loss_gradient_matches_fd(fresh):
    net = _random_net(fresh, 1, scale=0.1)
    prof = random_profile(np.random.default_rng(8))
    rng = np.random.default_rng(9)
    u = Trajectory([0.0, 0.5, 1.0], rng.uniform(-1, 1, (3, 2)))
    y = Trajectory([0.0, 0.5, 1.0], rng.uniform(-1, 1, (3, 2)))
    pt = prepare(u, y, 30)
    S = np.linspace(0.01, 0.99, 11)
    _, g = aging_loss_and_grad(fresh, net, pt, prof, 11, None, sample_times=S)
    eps = 1e-6
    for name in ("Wh", "cmu", "HB"):
        w = net.weights()[name]
        idx = (0,) * w.ndim
        vals = []
        for s in (eps, -eps):
            v = w.copy()
            v[idx] += s
            vals.append(aging_loss_and_grad(fresh, net.with_weights(**{name: v}), pt, prof, 11, None,
                                            want_grad=False, sample_times=S)[0])
        assert g[name][idx] == pytest.approx((vals[0] - vals[1]) / (2 * eps), rel=1e-5, abs=1e-10)


@pytest.fixture(scope="module")
def tiny_aging():
    return build_aging_dataset("inverter_chain_surrogate", 4, seed=2, norm=Normalization.identity(2, 2))


def test_fit_aging_leaves_fresh_untouched(tiny_aging, tmp_path):
    fresh = fresh_aging_params(init_params(3, 3, 2, 2, seed=0, tau=0.05))
    before = fresh.to_dict()
    cfg = TrainConfig(epochs=2, lr=1e-2, K=8, grid_steps=30)
    res = fit_aging(fresh, tiny_aging, cfg)
    assert fresh.to_dict() == before
    assert len(res.metrics) == 3 and res.metrics[0]["epoch"] == 0
    save_aging_model(tmp_path / "m.json", fresh, res.best)
    f2, n2 = load_aging_model(tmp_path / "m.json")
    assert f2.to_dict() == before and n2.to_dict() == res.best.to_dict()


def test_aging_dataset_roundtrip(tiny_aging, tmp_path):
    tiny_aging.save(tmp_path / "a.json")
    back = AgingDataset.load(tmp_path / "a.json")
    assert [p.t_op for p in back.profiles] == [p.t_op for p in tiny_aging.profiles]
    assert len(prepare_pairs(back, "train", 10)) == len(tiny_aging.base.train)
