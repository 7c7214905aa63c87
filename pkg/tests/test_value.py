from __future__ import annotations

import numpy as np
import pytest

from fbhjb.core import ControlSet, SpaceTimeGrid
from fbhjb.errors import InterpolationOutOfBounds
from fbhjb.paths import EnsembleConfig
from fbhjb.problems import registry_problem
from fbhjb.value import (ValueField, compute_value_dpp, discrete_lipschitz_ok, estimate_regularity,
                         field_from_function, interp_slice)


def grid(T=1.0, N=10, half=4.0, dx=0.1):
    return SpaceTimeGrid(T=T, N=N, lower=[-half], upper=[half], counts=[int(round(2 * half / dx)) + 1])


def exact_heat(g):
    return field_from_function(g, lambda t, x: x[..., 0] ** 2 + (g.T - t))


@pytest.fixture(scope="module")
def drift():
    spec = registry_problem("drift_control")
    g = grid(N=10, dx=0.1)
    return spec, g, compute_value_dpp(spec, g, cfg=EnsembleConfig(M=5000, seed=1))


def test_constant_terminal_gives_constant_field():
    spec = registry_problem("heat", phi="2.5")
    f = compute_value_dpp(spec, grid(N=10, dx=0.5), cfg=EnsembleConfig(M=500))
    np.testing.assert_allclose(f.values, 2.5, atol=1e-12)


def test_heat_value_at_origin():
    spec = registry_problem("heat")
    g = grid(N=10, dx=0.1)
    f = compute_value_dpp(spec, g, cfg=EnsembleConfig(M=20_000, seed=0))
    i0 = int(np.argmin(np.abs(g.axes[0])))
    assert abs(f.values[0, i0] - 1.0) <= 3 * f.meta["max_stderr"] + 2 * g.dt
    np.testing.assert_array_equal(f.values[-1], spec.phi(g.nodes))


def test_drift_argmin_pushes_toward_minimum(drift):
    _, g, f = drift
    x = g.axes[0]
    DW = np.gradient(f.values[0], g.dx[0])
    u = f.argmin[0, :, 0]
    sel = (np.abs(x) >= 0.3) & (np.abs(x) <= 3.0)
    assert np.all(u[sel] == -np.sign(DW[sel]))


def test_constant_shift_and_argmin_invariance(drift):
    spec, g, f = drift
    shifted = compute_value_dpp(registry_problem("drift_control", phi="x1^2 + 0.75"), g,
                                cfg=EnsembleConfig(M=5000, seed=1))
    np.testing.assert_allclose(shifted.values, f.values + 0.75, atol=1e-9)
    np.testing.assert_array_equal(shifted.argmin[:-1], f.argmin[:-1])


def test_control_restriction_monotone(drift):
    spec, g, f = drift
    fixed = compute_value_dpp(spec, g, control_set=ControlSet(np.array([[0.0]])),
                              cfg=EnsembleConfig(M=5000, seed=1))
    assert np.all(f.values <= fixed.values + 3 * max(f.meta["max_stderr"], fixed.meta["max_stderr"]))


def test_other_seed_agrees(drift):
    spec, g, f = drift
    other = compute_value_dpp(spec, g, cfg=EnsembleConfig(M=5000, seed=2))
    inner = np.abs(g.axes[0]) <= 2
    tol = 5 * (f.meta["max_stderr"] + other.meta["max_stderr"])
    assert np.max(np.abs(other.values[:, inner] - f.values[:, inner])) <= tol


def test_thread_count_does_not_change_result():
    spec = registry_problem("drift_control")
    g = grid(N=4, dx=0.25)
    a = compute_value_dpp(spec, g, cfg=EnsembleConfig(M=800, seed=3), threads=1)
    b = compute_value_dpp(spec, g, cfg=EnsembleConfig(M=800, seed=3), threads=6)
    assert np.array_equal(a.values, b.values) and np.array_equal(a.argmin, b.argmin, equal_nan=True)


def test_exit_guard():
    spec = registry_problem("heat")
    with pytest.raises(InterpolationOutOfBounds):
        compute_value_dpp(spec, grid(N=1, half=0.5, dx=0.25), cfg=EnsembleConfig(M=500))


def test_regularity_examples():
    g = grid(N=10, half=2.0, dx=0.05)
    const = field_from_function(g, lambda t, x: 0 * x[..., 0] + 3.0)
    assert estimate_regularity(const) == {"lip_x": 0.0, "holder_t": 0.0}
    reg = estimate_regularity(exact_heat(g))
    assert reg["lip_x"] == pytest.approx(4.0, abs=g.dx[0])
    assert reg["holder_t"] == pytest.approx(np.sqrt(g.dt), rel=1e-9)
    assert discrete_lipschitz_ok(exact_heat(g), L_W=4.0)


def test_interpolation_is_exact_on_linear_data_and_clamps():
    g = grid(N=1, half=1.0, dx=0.25)
    vals = 2 * g.axes[0] + 1
    x = np.array([[-0.9], [0.13], [0.5]])
    np.testing.assert_allclose(interp_slice(g, vals, x), 2 * x[:, 0] + 1, atol=1e-14)
    np.testing.assert_allclose(interp_slice(g, vals, np.array([[5.0], [-5.0]])), [3.0, -1.0])


def test_save_load_round_trip(tmp_path, drift):
    _, _, f = drift
    f.save(tmp_path / "w")
    back = ValueField.load(tmp_path / "w")
    assert np.array_equal(back.values, f.values) and np.array_equal(back.argmin, f.argmin, equal_nan=True)
    assert back.header()["schema"] == 1 and back.provenance == "dpp"
    back.save(tmp_path / "again")
    assert (tmp_path / "w.csv").read_bytes() == (tmp_path / "again.csv").read_bytes()
