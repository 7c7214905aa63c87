from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fbhjb.algebra import algebra_residual, probe_algebra_regularity, solve_algebra
from fbhjb.errors import MaxIterations, NonContractive
from fbhjb.problems import problem_from_dict, registry_problem


def affine(a, c, L3=None):
    return problem_from_dict({
        "n": 1, "d": 1, "k": 1, "T": 1.0, "b": ["0"], "sigma": [[f"{a!r} + {c!r}*z1"]],
        "g": "0", "phi": "0", "L3": abs(c) if L3 is None else L3, "override_gate": True})


def solve(spec, p, z0=None, x=0.0, v=0.0, **kw):
    return solve_algebra(spec, 0.0, np.array([x]), v, np.array([p]), np.zeros(1),
                         None if z0 is None else np.array([z0]), **kw)


def test_zero_gradient_returns_start():
    s = solve(affine(1.0, 0.5), 0.0, z0=0.3)
    assert s.V[0] == 0.3 and s.iterations == 1


def test_affine_closed_form():
    s = solve(affine(1.0, 0.5), 0.4)
    assert s.V[0] == pytest.approx(0.4 * 1 / (1 - 0.4 * 0.5), abs=1e-12)
    assert s.V[0] == pytest.approx(0.5, abs=1e-12)
    assert s.residual <= 1e-12 and s.contraction_estimate < 1


def test_z_free_sigma_one_iteration():
    s = solve(registry_problem("heat"), 2.0)
    assert s.V[0] == 2.0 and s.iterations == 1


def test_noncontractive_guard():
    for q in (1.0, 1.5, 4.0):
        with pytest.raises(NonContractive) as info:
            solve(affine(1.0, 0.5), q / 0.5)
        assert info.value.q == pytest.approx(q)


def test_max_iterations():
    with pytest.raises(MaxIterations):
        solve(affine(1.0, 0.5), 1.9, max_iter=3)


def test_batch_shapes():
    spec = affine(1.0, 0.5)
    p = np.linspace(-1.5, 1.5, 7)[:, None]
    s = solve_algebra(spec, 0.0, np.zeros((7, 1)), np.zeros(7), p, np.zeros(1))
    np.testing.assert_allclose(s.V[:, 0], p[:, 0] / (1 - 0.5 * p[:, 0]), atol=1e-12)


@settings(max_examples=200)
@given(st.floats(-2, 2), st.floats(0.05, 2).flatmap(lambda m: st.sampled_from([m, -m])),
       st.floats(-0.8, 0.8))
def test_closed_form_property(a, c, pc):
    p = pc / c
    s = solve(affine(a, c), p)
    assert abs(s.V[0] - p * a / (1 - p * c)) <= 1e-12 * max(1.0, abs(p * a))


@settings(max_examples=100)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-0.8, 0.8))
def test_unique_fixed_point_from_any_start(z_a, z_b, pc):
    # the solver starts at z0; plain iteration of the same map from z_b must land on the same point
    spec = affine(1.0, 0.5)
    p = pc / 0.5
    s = solve(spec, p, z0=z_a)
    V = z_b
    for _ in range(400):
        V = z_a + p * (1.0 + 0.5 * V)
    assert abs(s.V[0] - V) <= 2e-12 * max(1.0, abs(V))


@settings(max_examples=100)
@given(st.floats(-3, 3), st.floats(-0.8, 0.8))
def test_residual_certificate(z0, pc):
    spec = affine(0.7, -0.5)
    p = pc / -0.5
    s = solve(spec, p, z0=z0)
    again = algebra_residual(spec, 0.0, np.array([0.0]), 0.0, np.array([p]), np.zeros(1),
                             np.array([z0]), s.V)
    assert abs(again - s.residual) <= 1e-15
    assert s.residual <= 1e-12 * max(1.0, abs(s.V[0]))


def test_continuity_in_state():
    spec = problem_from_dict({
        "n": 1, "d": 1, "k": 1, "T": 1.0, "b": ["0"], "sigma": [["1 + 0.3*sin(x1) + 0.2*y + 0.4*z1"]],
        "g": "0", "phi": "0", "L1": 1.0, "L2": 0.2, "L3": 0.4, "override_gate": True})
    base = solve(spec, 1.2, x=0.3, v=0.5).V[0]
    gaps = [abs(solve(spec, 1.2, x=0.3 + h, v=0.5 + h).V[0] - base) for h in (1e-1, 1e-2, 1e-3)]
    assert gaps[0] > gaps[1] > gaps[2] and gaps[2] < 1e-2


def test_regularity_probe_examples():
    flat = probe_algebra_regularity(registry_problem("heat"), [1.0], probes=500)
    assert flat["lipschitz_const"] == pytest.approx(1.0, abs=1e-12)
    aff = probe_algebra_regularity(affine(1.0, 0.5), [0.4], probes=500)
    assert aff["lipschitz_const"] == pytest.approx(1 / (1 - 0.4 * 0.5), rel=1e-9)
    zero = problem_from_dict({"n": 1, "d": 1, "k": 1, "T": 1.0, "b": ["0"], "sigma": [["0"]],
                              "g": "0", "phi": "0"})
    assert probe_algebra_regularity(zero, [0.7], probes=200)["growth_const"] == pytest.approx(0.0)
