from __future__ import annotations

import numpy as np
import pytest

from fbhjb.core import SpaceTimeGrid
from fbhjb.errors import ConfigError, GradientTooLarge, ResolutionError
from fbhjb.paths import EnsembleConfig
from fbhjb.problems import registry_problem
from fbhjb.value import field_from_function
from fbhjb.verify import (heat_exact_field, ito_residual, mollify, pr_um_pipeline,
                          uniqueness_check_frozen_sigma, uniqueness_check_full)


def field(fn, half=2.0, dx=0.01, T=1.0, dt=0.01):
    g = SpaceTimeGrid.from_spacing(T, dt, -half, half, dx)
    return field_from_function(g, lambda t, x: fn(t, x[..., 0]))


def at(x):
    return np.array([[x]])


# ------------------------------------------------------------- mollifier


def test_mollify_constant():
    m = mollify(field(lambda t, x: 0 * x + 1.7), 0.1)
    np.testing.assert_allclose(m.values, 1.7, atol=1e-12)
    np.testing.assert_allclose(m.grad_values, 0.0, atol=1e-10)
    np.testing.assert_allclose(m.dt_values, 0.0, atol=1e-10)
    np.testing.assert_allclose(m.hess_values, 0.0, atol=1e-8)


def test_mollify_linear_away_from_boundary():
    f = field(lambda t, x: 0.8 * x)
    m = mollify(f, 0.1)
    x = f.grid.axes[0]
    inner = np.abs(x) <= 2.0 - 0.1 - 1e-9
    np.testing.assert_allclose(m.values[:, inner], np.broadcast_to(0.8 * x[inner], m.values[:, inner].shape),
                               atol=1e-12)
    np.testing.assert_allclose(m.grad_values[:, inner, 0], 0.8, atol=1e-10)


def test_mollify_abs_at_origin():
    m = mollify(field(lambda t, x: np.abs(x)), 0.1)
    v = float(m.value(0.5, at(0.0))[0])
    assert 0 < v <= 0.1
    assert abs(float(m.gradient(0.5, at(0.0))[0, 0])) <= 1e-12


def test_mollify_resolution_guard():
    with pytest.raises(ResolutionError):
        mollify(field(lambda t, x: x, dx=0.05), 0.1)
    with pytest.raises(ResolutionError):
        mollify(field(lambda t, x: x, dx=0.01, dt=0.1), 0.1)


def test_mollifier_convergence_rate():
    f = field(lambda t, x: np.abs(x), half=2.0, dx=0.005, dt=0.05)
    x = f.grid.axes[0]
    inner = np.abs(x) <= 1.5
    errs = []
    for eps in (0.2, 0.1, 0.05):
        m = mollify(f, eps, 4 * f.grid.dt)
        errs.append(float(np.max(np.abs(m.values[:, inner] - f.values[:, inner]))))
        assert errs[-1] <= 1.0 * eps
    for a, b in zip(errs, errs[1:]):
        assert b / a == pytest.approx(0.5, abs=0.05)


# --------------------------------------------------------------- Ito check


def test_ito_exact_heat():
    spec = registry_problem("heat")
    r = ito_residual(spec, heat_exact_field(), 0.0, [0.3], np.zeros(1), EnsembleConfig(M=500))
    assert max(abs(r["Pi1_min"]), abs(r["Pi1_max"])) <= 1e-10
    assert r["terminal_gap"] <= 1e-12


def test_ito_driver_shift():
    spec = registry_problem("heat", g="0.1")
    r = ito_residual(spec, heat_exact_field(), 0.0, [0.3], np.zeros(1), EnsembleConfig(M=500))
    assert r["Pi1_min"] == pytest.approx(0.1, abs=1e-10)
    assert r["Pi1_max"] == pytest.approx(0.1, abs=1e-10)


def test_ito_detects_perturbation():
    spec = registry_problem("heat")
    r = ito_residual(spec, heat_exact_field(bump=0.1), 0.0, [0.3], np.zeros(1),
                     EnsembleConfig(M=2000))
    assert r["Pi1_min"] < -0.01


# ---------------------------------------------- slab-concatenated controls


def test_pr_um_exact_heat_and_impostor():
    spec = registry_problem("heat")
    W = field(lambda t, x: x ** 2 + (1.0 - t), half=4.0, dx=0.1, dt=0.05)
    cfg = EnsembleConfig(M=2000, seed=3)
    for m in (1, 2, 4):
        r = pr_um_pipeline(spec, W, 0.0, [0.2], m, cfg)
        dt = 1.0 / (max(1, -(-16 // m)) * m)
        assert r["rho_m"] <= 5 * (dt + 1 / np.sqrt(cfg.M))
        assert len(r["per_slab_gaps"]) == m + 1
        bad = pr_um_pipeline(spec, W.shifted(1.0), 0.0, [0.2], m, cfg)
        assert bad["initial_gap"] >= 0.9


# ------------------------------------------------------------- uniqueness


@pytest.fixture(scope="module")
def heat_candidate():
    spec = registry_problem("heat")
    cand = field(lambda t, x: x ** 2 + (1.0 - t), half=4.0, dx=0.1, dt=0.1)
    return spec, cand


def test_frozen_sigma_equal_and_shift(heat_candidate):
    spec, cand = heat_candidate
    cfg = EnsembleConfig(M=10_000, seed=5)
    ok = uniqueness_check_frozen_sigma(spec, cand, cfg)
    assert ok["verdict"] == "equal" and ok["freezing_is_identity"]
    # the clamped boundary biases the outer nodes, so read the shift off the central quarter
    bad = uniqueness_check_frozen_sigma(spec, cand.shifted(0.5), cfg, inner=0.25)
    assert bad["verdict"] == "inconsistent"
    assert bad["gaps"]["candidate_minus_W"]["max"] == pytest.approx(0.5, abs=0.05)
    assert bad["gaps"]["candidate_minus_W"]["min"] == pytest.approx(0.5, abs=0.05)


def test_full_with_zero_l3_matches_frozen(heat_candidate):
    spec, cand = heat_candidate
    cfg = EnsembleConfig(M=5000, seed=6)
    frozen = uniqueness_check_frozen_sigma(spec, cand, cfg)
    full = uniqueness_check_full(spec, cand, cfg, z_check_steps=5)
    assert full["gaps"]["W_minus_candidate"] == frozen["gaps"]["W_minus_candidate"]
    assert frozen["verdict"] == "equal" and full["verdict"] in ("consistent", "equal")


def test_frozen_sigma_refuses_z_dependence():
    spec = registry_problem("sigma_z")
    cand = field(lambda t, x: 0 * x, half=2.0, dx=0.1, dt=0.1, T=spec.T)
    with pytest.raises(ConfigError):
        uniqueness_check_frozen_sigma(spec, cand)


def test_full_gradient_gate():
    spec = registry_problem("sigma_z", L3=0.5)
    cand = field(lambda t, x: 3 * x, half=2.0, dx=0.05, dt=0.05, T=spec.T)
    with pytest.raises(GradientTooLarge):
        uniqueness_check_full(spec, cand, EnsembleConfig(M=200))
