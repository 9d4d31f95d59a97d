import math
import os
from pathlib import Path

import pytest

import rcbf

CONFIGS = Path(os.environ.get("RCBF_CONFIG_DIR", Path(__file__).resolve().parents[2] / "configs"))


def test_risk_ordering_on_two_outcomes():
    values, pmf = [1.0, 3.0], [0.5, 0.5]
    e = rcbf.risk(values, pmf, "E")
    c = rcbf.risk(values, pmf, "CVaR", 0.5)
    v = rcbf.risk(values, pmf, "EVaR", 0.5)
    assert e == pytest.approx(2.0)
    assert c == pytest.approx(1.0)
    # two equiprobable outcomes with beta <= 1/2: EVaR is the minimum
    assert v == pytest.approx(1.0, abs=1e-6)
    assert rcbf.risk(values) == pytest.approx(2.0)


def test_cvar_forms_agree():
    values, pmf = [0.3, -1.2, 2.0, 0.7], [0.1, 0.2, 0.3, 0.4]
    for beta in (0.05, 0.25, 0.6, 1.0):
        assert rcbf.risk(values, pmf, "CVaR", beta) == pytest.approx(
            rcbf.cvar_rockafellar(values, pmf, beta), abs=1e-9
        )


def test_reach_time_bound():
    assert round(rcbf.reach_time_bound(16.2, 0.9, -2.0), 1) == 1.1
    assert rcbf.reach_time_bound(0.1, 0.05, -0.2) == pytest.approx(0.3667, abs=5e-4)
    with pytest.raises(rcbf.PreconditionError):
        rcbf.reach_time_bound(4.0, 0.9, 0.5)


def test_bad_beta_raises():
    with pytest.raises(rcbf.ParameterError):
        rcbf.risk([1.0, 2.0], [0.5, 0.5], "CVaR", 1.5)


def test_experiment_solve_and_run():
    ex = rcbf.Experiment(str(CONFIGS / "example1_safety_cvar01.json"))
    assert ex.risk == "CVaR_0.1"
    sol = ex.solve([-1.0, 1.0], [-5.0])
    assert sol["status"] in ("optimal", "locally_optimal")
    assert sol["certify"] >= -1e-6
    a = ex.run(seed=3, jobs=1)
    b = ex.run(seed=3, jobs=4)
    assert a["failures"] == b["failures"]
    assert a["min_h"] == b["min_h"]
    assert a["runs"] == 200
    assert 0.0 <= a["failure_ratio"] <= 1.0


def test_experiment_verify():
    ex = rcbf.Experiment(str(CONFIGS / "example1_safety_cvar01.json"))
    ex.set_risk("CVaR", 0.5)
    cert = ex.verify(horizon=3)
    assert cert["verdict"] == "pass"
    assert len(cert["nested"]) == 4
    assert all(n >= b - 1e-6 for n, b in zip(cert["nested"], cert["bound"]))
    with pytest.raises(rcbf.BudgetError):
        ex.verify(horizon=25)


def test_schema_error(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"schema": 1, "system": {"name": "example1"}, "surprise": 1}')
    with pytest.raises(rcbf.SchemaError, match="surprise"):
        rcbf.Experiment(str(bad))
    assert not math.isnan(rcbf.reach_time_bound(4.0, 0.9, -2.0))
