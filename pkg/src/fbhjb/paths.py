"""Brownian ensembles, Euler forward stepping and regression backward stepping.

Arrays carry a *group* axis so that many starting points can be solved at
once against the same Brownian increments (common random numbers):

* ``X``: ``(N + 1, B, M, n)``
* ``Y``: ``(N + 1, B, M)``
* ``Z``: ``(N, B, M, d)``
* ``dW``: ``(N, M, d)`` shared by all ``B`` groups

Conditional expectations are least-squares projections onto a polynomial
basis of the state, fitted separately for each group.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import ProblemSpec, SpaceTimeGrid
from .errors import CflViolation, MissingFeed, SingularRegression

COND_LIMIT = 1e12


@dataclass(frozen=True)
class EnsembleConfig:
    """Monte Carlo and regression settings shared by the probabilistic solvers."""

    M: int = 10_000
    seed: int = 0
    basis_degree: int = 2
    ridge: float = 1e-10
    picard_tol: float = 1e-6
    picard_max: int = 50
    substeps: int = 1
    algebra_tol: float = 1e-12
    algebra_max_iter: int = 200

    def with_(self, **changes) -> "EnsembleConfig":
        return EnsembleConfig(**{**self.__dict__, **changes})


@dataclass(frozen=True)
class PathEnsemble:
    t_nodes: np.ndarray
    dW: np.ndarray
    seed: int

    @property
    def M(self) -> int:
        return self.dW.shape[1]

    @property
    def N(self) -> int:
        return self.dW.shape[0]

    @property
    def d(self) -> int:
        return self.dW.shape[2]

    @property
    def dt(self) -> float:
        return float(self.t_nodes[1] - self.t_nodes[0])


def generate_ensemble(grid: SpaceTimeGrid | Sequence[float], M: int, d: int,
                      seed: int) -> PathEnsemble:
    """Draw ``N(0, dt I_d)`` increments; path ``i`` has its own substream.

    The substream of path ``i`` is seeded by ``(seed, i)``, so a path's
    increments do not depend on how many other paths are drawn.
    """
    if M < 2:
        raise ValueError("need at least two paths")
    t_nodes = grid.t_nodes if isinstance(grid, SpaceTimeGrid) else np.asarray(grid, float)
    steps = len(t_nodes) - 1
    dt = np.diff(t_nodes)
    if not np.allclose(dt, dt[0], rtol=1e-9, atol=0):
        raise ValueError("time nodes must be uniform")
    dW = np.empty((steps, M, d))
    for i in range(M):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), i]))
        dW[:, i, :] = rng.standard_normal((steps, d))
    dW *= np.sqrt(dt[0])
    return PathEnsemble(t_nodes=np.asarray(t_nodes, float), dW=dW, seed=int(seed))


def uniform_times(t0: float, t1: float, steps: int) -> np.ndarray:
    return t0 + (t1 - t0) * np.arange(steps + 1) / steps


# ------------------------------------------------------------------- policy

Policy = object  # (k,) array | (N, ..., k) array | callable(i, t, X_i) -> (..., k)


def control_at(policy, i: int, t: float, X_i: np.ndarray, k: int) -> np.ndarray:
    """Control values at step ``i``, broadcastable to ``X_i.shape[:-1] + (k,)``."""
    if callable(policy):
        u = np.asarray(policy(i, t, X_i), dtype=float)
    else:
        arr = np.asarray(policy, dtype=float)
        u = arr if arr.ndim == 1 else arr[i]
    return np.broadcast_to(u, X_i.shape[:-1] + (k,))


# ------------------------------------------------------------------ forward


def forward_euler(spec: ProblemSpec, ensemble: PathEnsemble, x0, policy,
                  y_feed: np.ndarray | None = None,
                  z_feed: np.ndarray | None = None) -> tuple[np.ndarray, list]:
    """Euler scheme for the forward equation with the given feeds.

    ``x0`` is ``(n,)`` or ``(B, n)``.  Returns ``X`` of shape
    ``(N + 1, B, M, n)`` and the list of per-step controls.
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    B, n = x0.shape
    N, M, d = ensemble.N, ensemble.M, ensemble.d
    deps = spec.depends
    needs_y = deps.b_y or deps.sigma_y
    needs_z = deps.b_z or deps.sigma_z
    if (needs_y and y_feed is None) or (needs_z and z_feed is None):
        raise MissingFeed(f"{spec.name}: forward coefficients depend on "
                          f"{'y' if needs_y else ''}{'z' if needs_z else ''} but no feed was given")
    zero_y = np.zeros((B, M))
    zero_z = np.zeros((B, M, d))
    X = np.empty((N + 1, B, M, n))
    X[0] = x0[:, None, :]
    controls = []
    dt = ensemble.dt
    for i in range(N):
        t = float(ensemble.t_nodes[i])
        u = control_at(policy, i, t, X[i], spec.k)
        controls.append(u)
        y = y_feed[i] if y_feed is not None else zero_y
        z = z_feed[i] if z_feed is not None else zero_z
        drift = spec.b(t, X[i], y, z, u)
        vol = spec.sigma(t, X[i], y, z, u)
        X[i + 1] = X[i] + drift * dt + (vol @ ensemble.dW[i][..., None])[..., 0]
    return X, controls


# --------------------------------------------------------------- regression


@dataclass(frozen=True)
class PolynomialBasis:
    """Per-coordinate powers up to ``degree`` plus pairwise products.

    Coordinates are standardised per group before powers are taken, and
    each feature column is standardised again afterwards.
    """

    degree: int = 2
    cross: bool = True

    def raw_features(self, s: np.ndarray) -> np.ndarray:
        n = s.shape[-1]
        cols = [s[..., j] ** p for p in range(1, self.degree + 1) for j in range(n)]
        if self.cross and self.degree >= 2:
            cols += [s[..., i] * s[..., j] for i in range(n) for j in range(i + 1, n)]
        return np.stack(cols, axis=-1)


def _standardise(a: np.ndarray, axis: int) -> tuple[np.ndarray, np.ndarray]:
    mean = a.mean(axis=axis, keepdims=True)
    centred = a - mean
    std = np.sqrt((centred ** 2).mean(axis=axis, keepdims=True))
    scale = np.maximum(np.abs(mean), 1.0)
    live = std > 1e-12 * scale
    return np.where(live, centred / np.where(live, std, 1.0), 0.0), live


@dataclass
class Regression:
    """Per-group least-squares projector built once per time step."""

    features: np.ndarray  # (B, M, F) without the constant column
    live: np.ndarray  # (B, F)
    factor: np.ndarray  # (B, F, F) regularised normal matrix
    cond: np.ndarray  # (B,)

    @classmethod
    def fit(cls, X_i: np.ndarray, basis: PolynomialBasis, ridge: float) -> "Regression":
        s, coord_live = _standardise(X_i, axis=1)
        if not np.any(coord_live):
            # every group sits at a single point: the projection is the mean
            B = X_i.shape[0]
            return cls(np.zeros(X_i.shape[:2] + (0,)), np.zeros((B, 0), bool),
                       np.zeros((B, 0, 0)), np.ones(B))
        feats, live = _standardise(basis.raw_features(s), axis=1)
        live = live[:, 0, :]
        M = X_i.shape[1]
        A = np.einsum("bmf,bmg->bfg", feats, feats) / M
        F = A.shape[-1]
        eye = np.eye(F)
        A = A + ridge * eye
        dead = ~live
        A = np.where(dead[:, :, None] | dead[:, None, :], 0.0, A) + dead[:, :, None] * eye
        cond = np.linalg.cond(A) if F else np.ones(X_i.shape[0])
        return cls(feats, live, A, cond)

    def project(self, target: np.ndarray) -> np.ndarray:
        """Fitted values of ``target`` (shape ``(B, M)`` or ``(B, M, d)``)."""
        vec = target.ndim == 2
        tgt = target[..., None] if vec else target
        mean = tgt.mean(axis=1, keepdims=True)
        if self.features.shape[-1] == 0:
            out = np.broadcast_to(mean, tgt.shape).copy()
        else:
            M = tgt.shape[1]
            rhs = np.einsum("bmf,bmd->bfd", self.features, tgt - mean) / M
            coef = np.linalg.solve(self.factor, rhs)
            out = mean + np.einsum("bmf,bfd->bmd", self.features, coef)
        return out[..., 0] if vec else out


@dataclass
class BackwardResult:
    Y: np.ndarray
    Z: np.ndarray
    cond: np.ndarray  # (N, B)
    y0_stderr: np.ndarray  # (B,)
    realized: np.ndarray  # (B, M) terminal value plus accumulated driver


def backward_regression(spec: ProblemSpec, ensemble: PathEnsemble, X: np.ndarray,
                        terminal: np.ndarray, controls: list,
                        basis: PolynomialBasis | None = None, ridge: float = 1e-10,
                        cond_limit: float = COND_LIMIT) -> BackwardResult:
    """Least-squares Monte Carlo for the backward equation.

    ``Z_i`` is the projection of ``(Y_{i+1} - E_i Y_{i+1}) dW_i / dt`` and ``Y_i`` the
    projection of ``Y_{i+1}`` plus ``g dt``, with the implicit ``Y_i``
    inside ``g`` resolved by one fixed-point sweep.

    Raises:
        CflViolation: ``dt * L1 >= 1``.
        SingularRegression: regularised normal matrix condition above ``cond_limit``.
    """
    basis = basis or PolynomialBasis()
    terminal = np.asarray(terminal, dtype=float)
    if not np.all(np.isfinite(terminal)):
        raise ValueError("terminal values must be finite")
    N, dt = ensemble.N, ensemble.dt
    if spec.depends.g_y and dt * spec.L1 >= 1.0:
        raise CflViolation(f"dt*L1 = {dt * spec.L1:.3g} >= 1 in the backward sweep",
                           bound=1.0 / spec.L1)
    _, B, M, _ = X.shape
    Y = np.empty((N + 1, B, M))
    Z = np.empty((N, B, M, ensemble.d))
    conds = np.empty((N, B))
    Y[N] = terminal
    realized = terminal.copy()
    for i in range(N - 1, -1, -1):
        t = float(ensemble.t_nodes[i])
        reg = Regression.fit(X[i], basis, ridge)
        conds[i] = reg.cond
        worst = float(np.max(reg.cond))
        if not worst <= cond_limit:
            b = int(np.argmax(reg.cond))
            raise SingularRegression(f"regression at step {i}, group {b}: condition {worst:.3g}")
        expect = reg.project(Y[i + 1])
        # subtracting the fitted mean is a control variate: unbiased, exact for constants
        Z[i] = reg.project((Y[i + 1] - expect)[..., None] * ensemble.dW[i][None, :, :] / dt)
        u = controls[i]
        drv = spec.g(t, X[i], expect, Z[i], u)
        if spec.depends.g_y:
            drv = spec.g(t, X[i], expect + drv * dt, Z[i], u)
        Y[i] = expect + drv * dt
        realized += drv * dt
    stderr = realized.std(axis=1, ddof=1) / np.sqrt(M)
    return BackwardResult(Y, Z, conds, stderr, realized)


def export_trajectories_csv(path: str | Path, t_nodes: np.ndarray, X: np.ndarray,
                            Y: np.ndarray, Z: np.ndarray, group: int = 0) -> None:
    """One row per (path, time): ``t, path_id, x..., y, z...``."""
    N = len(t_nodes) - 1
    n, d = X.shape[-1], Z.shape[-1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "path_id"] + [f"x{j + 1}" for j in range(n)] + ["y"]
                   + [f"z{j + 1}" for j in range(d)])
        for m in range(X.shape[2]):
            for i in range(N + 1):
                zrow = Z[i, group, m] if i < N else np.full(d, np.nan)
                w.writerow([repr(float(t_nodes[i])), m]
                           + [repr(float(v)) for v in X[i, group, m]]
                           + [repr(float(Y[i, group, m]))] + [repr(float(v)) for v in zrow])
