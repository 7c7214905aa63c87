"""Fully coupled FBSDEs by Picard iteration and the backward semigroup.

Each Picard sweep runs the forward Euler scheme against the previous
``(Y, Z)`` iterate and then the regression backward scheme.  The same
Brownian ensemble is reused across sweeps, so the gap sequence measures the
contraction of the discrete fixed-point map free of sampling noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import ProblemSpec, require_gate
from .errors import MaxPicard, PicardDiverged
from .paths import (EnsembleConfig, PathEnsemble, PolynomialBasis, backward_regression,
                    forward_euler, generate_ensemble, uniform_times)

RISING_LIMIT = 3


@dataclass
class FBSDESolution:
    ensemble: PathEnsemble
    X: np.ndarray
    Y: np.ndarray
    Z: np.ndarray
    controls: list
    cond: np.ndarray
    y0_stderr: np.ndarray
    terminal_mismatch: float
    picard_iters: int = 0
    gap_history: list[float] = field(default_factory=list)

    @property
    def Y0(self) -> np.ndarray:
        """``Y`` at the initial time, one value per group."""
        return self.Y[0].mean(axis=-1)

    def report(self) -> dict:
        return {
            "Y0": [float(v) for v in self.Y0],
            "Y0_stderr": [float(v) for v in self.y0_stderr],
            "picard_iters": self.picard_iters,
            "gap_history": [float(g) for g in self.gap_history],
            "max_condition": float(np.max(self.cond)) if self.cond.size else 1.0,
            "terminal_mismatch": self.terminal_mismatch,
        }


def picard_gap(Y_new, Y_old, Z_new, Z_old, dt: float) -> float:
    """``max |dY| + max over paths of sum_i |dZ_i|^2 dt``."""
    dy = float(np.max(np.abs(Y_new - Y_old)))
    dz = float(np.max(np.sum(np.sum((Z_new - Z_old) ** 2, axis=-1), axis=0) * dt))
    return dy + dz


def solve_fully_coupled(spec: ProblemSpec, ensemble: PathEnsemble, x0, policy,
                        terminal: Callable[[np.ndarray], np.ndarray] | None = None,
                        tol: float = 1e-6, max_picard: int = 50,
                        basis: PolynomialBasis | None = None, ridge: float = 1e-10,
                        override_gate: bool | None = None) -> FBSDESolution:
    """Picard iteration for the fully coupled system started at ``x0``.

    ``x0`` may hold a batch of starting points ``(B, n)``; each is a
    separate group sharing the ensemble.  ``terminal`` maps ``X_T`` to the
    terminal values and defaults to ``phi``.

    Raises:
        AssumptionGateError: smallness condition fails and no override.
        PicardDiverged: three consecutive rising gaps or a non-finite gap.
        MaxPicard: ``tol`` not reached within ``max_picard`` sweeps.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    require_gate(spec, override=override_gate, who="fbsde")
    terminal = terminal or spec.phi
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    B, M, N, d = x0.shape[0], ensemble.M, ensemble.N, ensemble.d
    coupled = spec.depends.coupled

    y_feed = np.zeros((N + 1, B, M))
    z_feed = np.zeros((N, B, M, d))
    history: list[float] = []
    rising = 0
    for k in range(1, max_picard + 1):
        X, controls = forward_euler(spec, ensemble, x0, policy, y_feed, z_feed)
        term = terminal(X[N])
        res = backward_regression(spec, ensemble, X, term, controls, basis, ridge)
        gap = picard_gap(res.Y, y_feed, res.Z, z_feed, ensemble.dt)
        history.append(gap)
        if not coupled:
            # a second sweep reproduces the first exactly
            history.append(0.0)
            k += 1
        if not np.isfinite(gap):
            raise PicardDiverged(f"{spec.name}: non-finite Picard gap at iteration {k}",
                                 gap_history=history)
        if len(history) >= 2 and history[-1] > history[-2]:
            rising += 1
            if rising >= RISING_LIMIT:
                raise PicardDiverged(
                    f"{spec.name}: Picard gaps rose {RISING_LIMIT} times in a row "
                    f"(last {history[-1]:.3g})", gap_history=history)
        else:
            rising = 0
        if not coupled or gap <= tol:
            mismatch = float(np.max(np.abs(res.Y[N] - term)))
            return FBSDESolution(ensemble, X, res.Y, res.Z, controls, res.cond,
                                 res.y0_stderr, mismatch, k, history)
        y_feed, z_feed = res.Y, res.Z
    raise MaxPicard(f"{spec.name}: Picard gap {history[-1]:.3g} > tol={tol:g} after "
                    f"{max_picard} iterations", gap_history=history)


def slab_ensemble(t: float, delta: float, steps: int, cfg: EnsembleConfig, d: int,
                  salt: int = 0) -> PathEnsemble:
    """Ensemble on ``[t, t + delta]``; ``salt`` separates independent draws."""
    seed = int(cfg.seed) * 1_000_003 + int(salt)
    return generate_ensemble(uniform_times(t, t + delta, steps), cfg.M, d, seed)


def solve_with_config(spec: ProblemSpec, ensemble: PathEnsemble, x0, policy,
                      terminal=None, cfg: EnsembleConfig | None = None,
                      override_gate: bool | None = None) -> FBSDESolution:
    cfg = cfg or EnsembleConfig()
    return solve_fully_coupled(spec, ensemble, x0, policy, terminal, tol=cfg.picard_tol,
                               max_picard=cfg.picard_max,
                               basis=PolynomialBasis(cfg.basis_degree), ridge=cfg.ridge,
                               override_gate=override_gate)


def semigroup_on_nodes(spec: ProblemSpec, t: float, nodes: np.ndarray, u, delta: float,
                       psi: Callable[[np.ndarray], np.ndarray], ensemble: PathEnsemble,
                       cfg: EnsembleConfig | None = None,
                       override_gate: bool | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Backward semigroup from every node in ``nodes`` (``(B, n)``).

    Returns the values and their Monte Carlo standard errors.
    """
    if not delta > 0 or t + delta > spec.T + 1e-12:
        raise ValueError(f"need 0 < delta <= T - t (t={t}, delta={delta}, T={spec.T})")
    if abs(ensemble.t_nodes[0] - t) > 1e-12 or abs(ensemble.t_nodes[-1] - (t + delta)) > 1e-9:
        raise ValueError("ensemble does not span the slab [t, t + delta]")
    sol = solve_with_config(spec, ensemble, nodes, u, psi, cfg, override_gate)
    return sol.Y0, sol.y0_stderr


def backward_semigroup(spec: ProblemSpec, t: float, x, u, delta: float,
                       psi: Callable[[np.ndarray], np.ndarray],
                       ensemble: PathEnsemble | None = None,
                       cfg: EnsembleConfig | None = None, steps: int = 1,
                       override_gate: bool | None = None) -> float:
    """``Y_t`` of the slab system on ``[t, t + delta]`` with terminal map ``psi``."""
    cfg = cfg or EnsembleConfig()
    if ensemble is None:
        ensemble = slab_ensemble(t, delta, steps, cfg, spec.d)
    vals, _ = semigroup_on_nodes(spec, t, np.atleast_2d(np.asarray(x, float)), u, delta,
                                 psi, ensemble, cfg, override_gate)
    return float(vals[0])
