from __future__ import annotations

import json

import numpy as np
import pytest

from fbhjb.errors import AssumptionGateError, MaxPicard, PicardDiverged
from fbhjb.fbsde import backward_semigroup, slab_ensemble, solve_fully_coupled
from fbhjb.paths import EnsembleConfig, generate_ensemble, uniform_times
from fbhjb.problems import problem_from_dict, registry_problem


def ens_for(spec, M=5000, steps=10, seed=0, t0=0.0):
    return generate_ensemble(uniform_times(t0, spec.T, steps), M, spec.d, seed)


def test_uncoupled_converges_after_one_extra_sweep():
    spec = registry_problem("heat")
    sol = solve_fully_coupled(spec, ens_for(spec), [0.3], np.zeros(1))
    assert sol.gap_history[-1] == 0.0 and len(sol.gap_history) == 2


def test_zero_coefficients_constant_terminal():
    spec = problem_from_dict({"n": 1, "d": 1, "k": 1, "T": 1.0, "b": ["0"], "sigma": [["0"]],
                              "g": "0", "phi": "1.75"})
    sol = solve_fully_coupled(spec, ens_for(spec, M=200), [0.4], np.zeros(1))
    assert sol.Y0[0] == 1.75
    assert np.all(sol.X == 0.4) and np.all(sol.Z == 0)


def test_terminal_assigned_exactly():
    spec = registry_problem("weak_burgers")
    sol = solve_fully_coupled(spec, ens_for(spec), [0.3], np.zeros(1))
    np.testing.assert_array_equal(sol.Y[-1], spec.phi(sol.X[-1]))
    assert sol.terminal_mismatch == 0.0


def test_gated_contraction_ratios():
    spec = registry_problem("weak_burgers")
    sol = solve_fully_coupled(spec, ens_for(spec, M=20_000, steps=20), [0.5], np.zeros(1))
    g = sol.gap_history
    assert len(g) >= 3
    assert all(b < a for a, b in zip(g[1:], g[2:]))
    json.dumps(sol.report())


def test_gate_refusal_and_divergence():
    strong = registry_problem("burgers", b=["3*y"], L2=3.0, override_gate=False)
    ens = ens_for(strong, M=2000, steps=20, seed=5)
    with pytest.raises(AssumptionGateError):
        solve_fully_coupled(strong, ens, [0.5], np.zeros(1))
    with pytest.raises(PicardDiverged) as info:
        solve_fully_coupled(strong, ens, [0.5], np.zeros(1), override_gate=True)
    assert len(info.value.gap_history) >= 4


def test_max_picard():
    spec = registry_problem("weak_burgers")
    with pytest.raises(MaxPicard):
        solve_fully_coupled(spec, ens_for(spec), [0.5], np.zeros(1), tol=1e-14, max_picard=2)


def test_batched_start_points_match_single_runs():
    spec = registry_problem("weak_burgers")
    ens = ens_for(spec, M=2000)
    both = solve_fully_coupled(spec, ens, [[0.0], [0.5]], np.zeros(1))
    one = solve_fully_coupled(spec, ens, [0.5], np.zeros(1))
    assert both.Y0[1] == pytest.approx(one.Y0[0], abs=1e-12)


# ------------------------------------------------------ backward semigroup


def test_semigroup_constant_terminal():
    spec = registry_problem("heat")
    val = backward_semigroup(spec, 0.2, [0.3], np.zeros(1), 0.3, lambda X: np.full(X.shape[:-1], 0.8),
                             cfg=EnsembleConfig(M=500))
    assert val == pytest.approx(0.8, abs=1e-12)


def test_semigroup_full_slab_equals_direct_solve():
    spec = registry_problem("weak_burgers")
    ens = ens_for(spec, M=3000, steps=5, t0=0.1)
    direct = solve_fully_coupled(spec, ens, [0.2], np.zeros(1))
    via = backward_semigroup(spec, 0.1, [0.2], np.zeros(1), spec.T - 0.1, spec.phi, ensemble=ens)
    assert via == direct.Y0[0]


def test_semigroup_nested_heat_closed_form():
    spec = registry_problem("heat")
    t, delta, x = 0.5, 0.25, 0.5
    cfg = EnsembleConfig(M=50_000, seed=2)
    steps = 5

    def psi(X):
        return X[..., 0] ** 2 + (spec.T - t - delta)

    ens = slab_ensemble(t, delta, steps, cfg, 1, salt=0)
    sol = solve_fully_coupled(spec, ens, [x], np.zeros(1), terminal=psi)
    val = backward_semigroup(spec, t, [x], np.zeros(1), delta, psi, ensemble=ens)
    exact = x ** 2 + (spec.T - t)
    assert abs(val - exact) <= 3 * sol.y0_stderr[0] + 2 * delta / steps


def test_semigroup_monotone_in_terminal_data():
    spec = registry_problem("weak_burgers")
    ens = ens_for(spec, M=5000, steps=5)
    lo = backward_semigroup(spec, 0.0, [0.1], np.zeros(1), spec.T, spec.phi, ensemble=ens)
    hi = backward_semigroup(spec, 0.0, [0.1], np.zeros(1), spec.T,
                            lambda X: spec.phi(X) + 0.2 * np.exp(-X[..., 0] ** 2), ensemble=ens)
    se = solve_fully_coupled(spec, ens, [0.1], np.zeros(1)).y0_stderr[0]
    assert hi >= lo - 3 * se
