from __future__ import annotations

import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fbhjb.core import (ControlSet, GateConstants, MonotonicityConfig, SpaceTimeGrid,
                        check_monotonicity_sampled, check_standing_assumptions, chunked_map,
                        probe_lipschitz, require_gate)
from fbhjb.errors import AssumptionGateError, ConfigError, InvalidConstants
from fbhjb.problems import REGISTRY, load_problem, problem_from_dict, registry_problem


def scalar(b="0", sigma="1", g="0", phi="x1", **kw):
    doc = {"n": 1, "d": 1, "k": 1, "T": kw.pop("T", 1.0), "b": [b], "sigma": [[sigma]],
           "g": g, "phi": phi}
    doc.update(kw)
    return problem_from_dict(doc)


# ------------------------------------------------------------ assumptions


def test_zero_coupling_is_trivially_small():
    rep = check_standing_assumptions(scalar(L1=3.0, L2=0.0, L3=0.0))
    assert rep.c1 == 0 and rep.Lambda == 0 and rep.Lambda_bar == 0
    assert rep.smallness_ok


def test_l3_zero_always_ok():
    for lw in (0.0, 1.0, 1e6):
        assert check_standing_assumptions(scalar(L2=0.1, L3=0.0), L_W=lw).l3_ok


def test_hand_evaluated_report():
    spec = scalar(b="0.2*y", sigma="1 + 0.2*z1", L1=1.0, L2=0.2, L3=0.2)
    rep = check_standing_assumptions(spec, GateConstants(C2=1.0, C4=1.0), L_W=1.0)
    # independent arithmetic: 8 * C2 * (1 + T^2) * c1^2 with C2 = 1, T = 1, c1 = 0.2
    lam = 8 * 1 * (1 + 1) * 0.2 ** 2
    assert rep.c1 == pytest.approx(0.2)
    assert rep.Lambda == pytest.approx(lam) == pytest.approx(0.64)
    assert rep.L_bar == pytest.approx(max(1.0, 1 / (1 - lam ** 0.5))) == pytest.approx(5.0)
    assert rep.Lambda_bar == pytest.approx(0.64)
    assert rep.smallness_ok
    assert rep.l3_terms[0] == pytest.approx(0.2)
    assert rep.l3_terms[1] == pytest.approx(8 * 0.2 ** 4) == pytest.approx(0.0128)
    assert rep.l3_ok


def test_lambda_at_least_one_gives_infinite_bar():
    rep = check_standing_assumptions(scalar(b="y", L2=1.0))
    assert rep.Lambda >= 1 and rep.L_bar == float("inf") and not rep.smallness_ok
    json.dumps(rep.to_dict())


def test_invalid_constants():
    spec = scalar(L2=0.1)
    with pytest.raises(InvalidConstants):
        check_standing_assumptions(spec, GateConstants(C2=lambda L: 2.0 - L))
    with pytest.raises(InvalidConstants):
        check_standing_assumptions(spec, GateConstants(C2=0.0))
    with pytest.raises(InvalidConstants):
        check_standing_assumptions(spec, L_W=-1.0)


def test_report_is_pure():
    spec = registry_problem("weak_burgers")
    assert check_standing_assumptions(spec) == check_standing_assumptions(spec)


@settings(max_examples=100)
@given(st.floats(0, 0.5), st.floats(0, 0.5), st.floats(0.1, 2.0), st.floats(0.5, 5.0))
def test_lambda_bar_monotone_in_c1(a, da, T, L1):
    lo = check_standing_assumptions(scalar(T=T, L1=L1, L2=a, L3=0.0))
    hi = check_standing_assumptions(scalar(T=T, L1=L1, L2=a + da, L3=0.0))
    assert hi.Lambda_bar >= lo.Lambda_bar
    assert lo.Lambda <= lo.Lambda_bar or lo.Lambda_bar == float("inf")


def test_gate_refuses_without_override():
    spec = scalar(b="3*y", L2=3.0)
    with pytest.raises(AssumptionGateError, match="smallness"):
        require_gate(spec, who="test")
    require_gate(spec, override=True)
    require_gate(spec.replace(override_gate=True))


# ----------------------------------------------------------- monotonicity


def test_monotone_identity_terminal():
    spec = scalar(sigma="0", phi="x1")
    res = check_monotonicity_sampled(spec, MonotonicityConfig(G=[1.0], mu1=1.0), probes=200)
    assert res["ok"]


def test_monotone_sign_flip_fails_by_2dx2():
    spec = scalar(sigma="0", phi="-x1")
    res = check_monotonicity_sampled(spec, MonotonicityConfig(G=[1.0], mu1=1.0), probes=1, seed=5)
    assert not res["ok"]
    # replay the single probe pair: the violation is exactly 2 |x - x'|^2
    pts = np.random.default_rng(5).uniform(-2.0, 2.0, size=(1, 7))
    assert res["worst_violation"] == pytest.approx(2 * (pts[0, 0] - pts[0, 1]) ** 2, rel=1e-12)


def test_monotone_increasing_driver_fails():
    spec = scalar(sigma="0", g="y", phi="x1", L1=1.0)
    res = check_monotonicity_sampled(spec, MonotonicityConfig(G=[1.0], beta2=1.0), probes=200)
    assert not res["ok"]


def test_monotonicity_config_validation():
    with pytest.raises(ValueError):
        MonotonicityConfig(G=[0.0], beta1=1.0)
    with pytest.raises(ValueError):
        MonotonicityConfig(G=[1.0])
    assert MonotonicityConfig(G=[1.0, 1.0], beta1=1.0, mu1=1.0).validate_for(2)


# ------------------------------------------------------------------ types


def test_grid_invariants():
    g = SpaceTimeGrid.from_spacing(1.0, 0.1, -1, 1, 0.25)
    assert g.N == 10 and g.dt == pytest.approx(0.1)
    assert np.all(np.diff(g.t_nodes) > 0) and g.t_nodes[-1] == 1.0
    assert g.counts == (9,) or list(g.counts) == [9]
    np.testing.assert_allclose(np.diff(g.axes[0]), 0.25)


def test_control_set():
    cs = ControlSet.uniform(-1, 1, 3)
    np.testing.assert_allclose(cs.points[:, 0], [-1, 0, 1])
    assert cs.fineness == pytest.approx(1.0)
    assert cs.superset_of(ControlSet(np.array([[0.0]])))
    with pytest.raises(ValueError):
        ControlSet(np.zeros((0, 1)))
    with pytest.raises(ValueError):
        ControlSet(np.array([[np.nan]]))


def test_registry_and_loading(tmp_path):
    assert {"heat", "burgers", "drift_control"} <= set(REGISTRY)
    heat = registry_problem("heat")
    x = np.array([[0.5], [-2.0]])
    np.testing.assert_allclose(heat.phi(x), [0.25, 4.0])
    path = tmp_path / "p.json"
    path.write_text(json.dumps({"registry": "drift_control", "T": 0.5}))
    spec = load_problem(path)
    assert spec.T == 0.5 and len(spec.control_set) == 3 and spec.depends.controlled
    with pytest.raises(ConfigError):
        problem_from_dict({"registry": "nope"})
    with pytest.raises(ConfigError):
        problem_from_dict({"n": 1, "d": 1, "T": 1, "b": ["x2"], "sigma": [["1"]], "g": "0",
                           "phi": "0"})


def test_lipschitz_probe_refutes_understated_constant():
    ok = probe_lipschitz(registry_problem("weak_burgers"), probes=2048)
    assert ok.ok
    bad = scalar(b="5*sin(x1)", L1=1.0)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        rep = probe_lipschitz(bad, probes=2048)
    assert not rep.ok and rep.quotients["b_x"] > 1.0 and caught


def test_chunked_map_independent_of_threads():
    def fn(s):
        return sum(range(s.start, s.stop))

    assert chunked_map(fn, 100, 7, 1) == chunked_map(fn, 100, 7, 8)
