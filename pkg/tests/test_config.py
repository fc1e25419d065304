import pytest

from iss_node.config import ConfigError, RunConfig, from_dict, load, with_overrides


def test_defaults_roundtrip():
    cfg = RunConfig()
    back = from_dict(cfg.to_dict())
    assert back.to_dict() == cfg.to_dict()


def test_toml_load(tmp_path):
    p = tmp_path / "run.toml"
    p.write_text('[dataset]\noracle = "linear_2port"\nn = 7\n\n[train]\nepochs = 3\nfrozen = ["nu"]\n'
                 '\n[oracle]\nr = [1.0, 3.0]\n')
    cfg = load(p)
    assert cfg.dataset.n == 7 and cfg.train.epochs == 3 and cfg.train.frozen == ("nu",)
    assert cfg.oracle == {"r": [1.0, 3.0]}
    assert cfg.train.lr == RunConfig().train.lr


@pytest.mark.parametrize("doc", [
    {"train": {"learning_rate": 0.1}},
    {"extras": {}},
    {"dataset": {"oracle": "ctle"}},
    {"train": {"K": 0}},
    {"oracle": {"not_a_constant": 1.0}},
    {"dataset": {"horizon": -1.0}},
])
def test_rejects_bad_config(doc):
    with pytest.raises(ConfigError):
        from_dict(doc)


def test_malformed_toml(tmp_path):
    p = tmp_path / "bad.toml"
    p.write_text("[train\nepochs = ")
    with pytest.raises(ConfigError):
        load(p)


def test_overrides_skip_none():
    cfg = with_overrides(RunConfig(), "train", epochs=5, seed=None)
    assert cfg.train.epochs == 5 and cfg.train.seed == RunConfig().train.seed
    assert with_overrides(cfg, "train", seed=None) is cfg
