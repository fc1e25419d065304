"""The ten acceptance criteria at their stated sizes and tolerances.

Each test prints one PASS/FAIL line (also collected into the terminal
summary) before asserting.
"""

import time
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from iss_node import checks
from iss_node.cli import main
from iss_node.experiments import run_aging, run_amplifier
from test_exporter import GOLDEN, toy

from iss_node.exporter import emit_veriloga, parse_baked_A
from iss_node.model import effective_A


def report(number: int, passed: bool, summary: str) -> None:
    line = f"acceptance {number:>2}: {'PASS' if passed else 'FAIL'}  {summary}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert passed, line


def from_check(number: int, res, budget: float) -> None:
    ok = res.passed and res.seconds < budget
    report(number, ok, f"{res.name} value={res.value:.3e} need {res.threshold}; "
                       f"{res.seconds:.1f}s of {budget:g}s; {res.detail}")


def test_1_certificate():
    from_check(1, checks.check_certificate(1000), 30.0)


def test_2_scalar_tightness():
    from_check(2, checks.check_scalar_tightness(), 1.0)


def test_3_solver_order():
    from_check(3, checks.check_solver(), 5.0)


def test_4_gradients():
    from_check(4, checks.check_gradients(20, tol=1e-4, kink=1e-4), 120.0)


def test_5_equilibrium():
    from_check(5, checks.check_equilibrium(100, tol=1e-4), 60.0)


def test_6_dissipation():
    from_check(6, checks.check_dissipation(50), 120.0)


@pytest.mark.slow
def test_7_amplifier_analogue():
    out = run_amplifier()
    prop, base = out["modes"]["proposed"], out["modes"]["baseline"]
    conds = {
        "open<=5e-3": prop["valid_mse"] <= 5e-3,
        "closed<=5e-2": prop["closed_loop_mse"] <= 5e-2,
        "closed>=open": prop["closed_loop_mse"] >= prop["valid_mse"],
        "proposed<=baseline": prop["closed_loop_mse"] <= base["closed_loop_mse"],
        "no failed runs": prop["failures"] == 0,
        "runtime<15min": out["seconds"] < 900,
    }
    report(7, all(conds.values()),
           f"open {prop['valid_mse']:.3e}, closed {prop['closed_loop_mse']:.3e}, "
           f"baseline closed {base['closed_loop_mse']:.3e} (rho {prop['rho']:.2f}); {out['seconds']:.0f}s; "
           + ", ".join(k for k, v in conds.items() if not v))


@pytest.mark.slow
def test_8_aging():
    out = run_aging()
    conds = {
        "aged<=0.5*fresh": out["aged_test_mse"] <= 0.5 * out["fresh_test_mse"],
        "500 profiles certified": out["certified_profiles"] == out["profiles_checked"] == 500,
        "runtime<15min": out["seconds"] < 900,
    }
    report(8, all(conds.values()),
           f"aged {out['aged_test_mse']:.3e} vs fresh {out['fresh_test_mse']:.3e} (ratio {out['ratio']:.2f}), "
           f"{out['certified_profiles']}/{out['profiles_checked']} certified; {out['seconds']:.0f}s; "
           + ", ".join(k for k, v in conds.items() if not v))


def test_9_export(tmp_path):
    t0 = time.perf_counter()
    p, norm = toy()
    text = emit_veriloga(p, "toy_ctrnn", norm, 1e-9)
    same = text.encode() == (GOLDEN / "toy_ctrnn.va").read_bytes()
    baked = np.array_equal(parse_baked_A(text, p.n, p.hidden), effective_A(p))
    dt = time.perf_counter() - t0
    report(9, same and baked and dt < 1.0, f"golden bytes {'equal' if same else 'differ'}, "
                                           f"baked A {'exact' if baked else 'differs'}; {dt:.3f}s")


def test_10_reproducible_metrics(tmp_path):
    cfg = tmp_path / "run.toml"
    cfg.write_text("[train]\nepochs = 3\ngrid_steps = 50\nK = 16\nbatch_size = 4\nstate_dim = 2\nhidden = 6\n")
    q = ["--jobs", "1", "--verbosity", "quiet"]
    assert main(q + ["generate-data", "--oracle", "common_source_surrogate", "--n", "8", "--seed", "4",
                     "--out", str(tmp_path / "data")]) == 0
    for run in ("a", "b"):
        assert main(q + ["train", "--dataset", str(tmp_path / "data"), "--config", str(cfg), "--seed", "5",
                         "--out", str(tmp_path / run)]) == 0
    a, b = ((tmp_path / r / "metrics.csv").read_bytes() for r in ("a", "b"))
    report(10, a == b and len(a.splitlines()) == 5,
           f"metrics.csv {'identical' if a == b else 'differ'} ({len(a)} bytes)")
