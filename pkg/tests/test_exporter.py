import json
import logging
from pathlib import Path

import numpy as np

from iss_node.data import Normalization
from iss_node.exporter import emit_veriloga, fmt, parse_baked_A, write_veriloga
from iss_node.model import CtrnnParams, effective_A
from iss_node.training import init_params

GOLDEN = Path(__file__).parent / "golden"


def toy():
    d = json.loads((GOLDEN / "toy_model.json").read_text())
    return CtrnnParams.from_dict(d), Normalization.from_dict(d["normalization"])


def test_header_line():
    p = init_params(1, 1, 1, 1, seed=0)
    text = emit_veriloga(p, "tiny")
    assert "module tiny(p0);" in text.splitlines()


def test_separate_pins_when_ports_differ():
    text = emit_veriloga(init_params(2, 3, 1, 2, seed=0), "two_out")
    assert "module two_out(" in text and "endmodule" in text


def test_golden_bytes(tmp_path):
    p, norm = toy()
    out = tmp_path / "toy.va"
    write_veriloga(out, p, "toy_ctrnn", norm, 1e-9)
    assert out.read_bytes() == (GOLDEN / "toy_ctrnn.va").read_bytes()


def test_deterministic():
    p, norm = toy()
    assert emit_veriloga(p, "x", norm) == emit_veriloga(p, "x", norm)


def test_baked_matrix_is_effective_A():
    p, norm = toy()
    text = emit_veriloga(p, "toy_ctrnn", norm)
    assert np.array_equal(parse_baked_A(text, p.n, p.hidden), effective_A(p))
    assert not np.array_equal(effective_A(p), p.A_theta)  # the rescaling is active


def test_fmt_roundtrips():
    rng = np.random.default_rng(0)
    for x in rng.normal(size=100) * 10.0 ** rng.integers(-20, 20, 100):
        assert float(fmt(x)) == x


def test_uncertified_export_warns(caplog):
    p = init_params(2, 2, 1, 1, "baseline", seed=0).with_arrays(A_theta=20 * np.eye(2), W=np.eye(2))
    with caplog.at_level(logging.WARNING):
        emit_veriloga(p, "unstable")
    assert any("certif" in r.getMessage() for r in caplog.records)
