"""Explicit finite differences for the HJB equation with the nested algebra equation.

The Hamiltonian at ``(t, x, v, p, A, u)`` first solves ``V = p^T sigma(t,
x, v, V, u)`` and then evaluates ``1/2 tr[sigma sigma^T A] + p^T b + g``
with every coefficient taken at ``(t, x, v, V, u)``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .algebra import ALGEBRA_MAX_ITER, ALGEBRA_TOL, solve_algebra
from .core import ControlSet, ProblemSpec, SpaceTimeGrid, require_gate
from .errors import CflViolation, NonContractive, NumericalBlowup
from .value import ValueField

# --------------------------------------------------------------- stencils


def central_gradient(W: np.ndarray, dx) -> np.ndarray:
    """Central differences inside, one-sided at the boundary; shape ``W.shape + (n,)``."""
    return np.stack([np.gradient(W, h, axis=j) for j, h in enumerate(dx)], axis=-1)


def one_sided_gradients(W: np.ndarray, dx) -> tuple[np.ndarray, np.ndarray]:
    """Forward and backward differences; the missing side at an edge reuses the other."""
    fwd, bwd = [], []
    for j, h in enumerate(dx):
        d = np.diff(W, axis=j) / h
        first = np.take(d, [0], axis=j)
        last = np.take(d, [-1], axis=j)
        fwd.append(np.concatenate([d, last], axis=j))
        bwd.append(np.concatenate([first, d], axis=j))
    return np.stack(fwd, axis=-1), np.stack(bwd, axis=-1)


def hessian(W: np.ndarray, dx) -> np.ndarray:
    """Central second differences; boundary rows copy their inner neighbour."""
    n = len(dx)
    H = np.empty(W.shape + (n, n))
    for j, h in enumerate(dx):
        c = W.shape[j]
        if c < 3:
            H[..., j, j] = 0.0
            continue
        inner = (np.take(W, range(2, c), axis=j) - 2 * np.take(W, range(1, c - 1), axis=j)
                 + np.take(W, range(0, c - 2), axis=j)) / h ** 2
        H[..., j, j] = np.concatenate([np.take(inner, [0], axis=j), inner,
                                       np.take(inner, [-1], axis=j)], axis=j)
    for i in range(n):
        for j in range(i + 1, n):
            m = np.gradient(np.gradient(W, dx[j], axis=j), dx[i], axis=i)
            H[..., i, j] = H[..., j, i] = m
    return H


# ------------------------------------------------------------ Hamiltonian


def assemble_hamiltonian(spec: ProblemSpec, t: float, x, v, p, A, u,
                         tol: float = ALGEBRA_TOL, max_iter: int = ALGEBRA_MAX_ITER) -> np.ndarray:
    """``H(t, x, v, p, A, u)`` at a point or a batch of points.

    Shapes: ``x, p`` ``(..., n)``, ``v`` ``(...)``, ``A`` ``(..., n, n)``,
    ``u`` ``(k,)`` or ``(..., k)``.
    """
    x, p, A = (np.asarray(a, dtype=float) for a in (x, p, A))
    v, u = np.asarray(v, dtype=float), np.asarray(u, dtype=float)
    V = solve_algebra(spec, t, x, v, p, u, tol=tol, max_iter=max_iter).V
    sig = spec.sigma(t, x, v, V, u)
    a = np.einsum("...ik,...jk->...ij", sig, sig)
    diff = 0.5 * np.einsum("...ij,...ji->...", a, A)
    drift = np.einsum("...i,...i->...", p, spec.b(t, x, v, V, u))
    return diff + drift + spec.g(t, x, v, V, u)


def _diffusion_bound(spec: ProblemSpec, t: float, x, v, p, u) -> float:
    V = solve_algebra(spec, t, x, v, p, u).V
    sig = spec.sigma(t, x, v, V, u)
    a = np.einsum("...ik,...jk->...ij", sig, sig)
    return float(np.max(np.linalg.eigvalsh(a))) if a.size else 0.0


def _locate(exc: NonContractive, nodes: np.ndarray, t: float, who: str) -> NonContractive:
    idx = exc.index[0] if exc.index else 0
    return NonContractive(f"{who}: {exc} (node x={nodes[idx].tolist()}, t={t:.6g})",
                          index=exc.index, q=exc.q)


@dataclass
class _Slice:
    """Derivatives of one time slice flattened over nodes."""

    v: np.ndarray
    central: np.ndarray
    fwd: np.ndarray
    bwd: np.ndarray
    A: np.ndarray

    @classmethod
    def of(cls, W: np.ndarray, dx, one_sided: bool = True) -> "_Slice":
        n = len(dx)
        c = central_gradient(W, dx).reshape(-1, n)
        f, b = one_sided_gradients(W, dx) if one_sided else (None, None)
        return cls(W.reshape(-1), c,
                   None if f is None else f.reshape(-1, n),
                   None if b is None else b.reshape(-1, n),
                   hessian(W, dx).reshape(-1, n, n))


def _min_hamiltonian(spec: ProblemSpec, t: float, nodes: np.ndarray, sl: _Slice,
                     controls: ControlSet, upwind: bool, who: str,
                     tol: float = ALGEBRA_TOL, max_iter: int = ALGEBRA_MAX_ITER):
    best = np.full(nodes.shape[0], np.inf)
    arg = np.zeros(nodes.shape[0], dtype=np.intp)
    for c, u in enumerate(controls.points):
        try:
            if upwind:
                V = solve_algebra(spec, t, nodes, sl.v, sl.central, u, tol=tol,
                                  max_iter=max_iter).V
                b = spec.b(t, nodes, sl.v, V, u)
                p = np.where(b > 0, sl.fwd, sl.bwd)
            else:
                p = sl.central
            H = assemble_hamiltonian(spec, t, nodes, sl.v, p, sl.A, u, tol, max_iter)
        except NonContractive as exc:
            raise _locate(exc, nodes, t, who) from None
        better = H < best
        best = np.where(better, H, best)
        arg = np.where(better, c, arg)
    return best, arg


def cfl_bound(spec: ProblemSpec, grid: SpaceTimeGrid, t: float, W: np.ndarray,
              controls: ControlSet) -> float:
    """Largest admissible ``dt = min(dx)^2 / (max spectral bound of sigma sigma^T * n)``."""
    nodes = grid.nodes.reshape(-1, grid.n)
    p = central_gradient(W, grid.dx).reshape(-1, grid.n)
    try:
        lam = max(_diffusion_bound(spec, t, nodes, W.reshape(-1), p, u) for u in controls.points)
    except NonContractive as exc:
        raise _locate(exc, nodes, t, "hjb") from None
    if lam <= 0:
        return np.inf
    return min(grid.dx) ** 2 / (lam * grid.n)


def solve_hjb(spec: ProblemSpec, grid: SpaceTimeGrid, control_set: ControlSet | None = None,
              override_gate: bool | None = None, check_every: int = 1,
              algebra_tol: float = ALGEBRA_TOL,
              algebra_max_iter: int = ALGEBRA_MAX_ITER) -> ValueField:
    """Backward explicit scheme ``W_i = W_{i+1} + dt min_u H(t_{i+1}, ...)``.

    Drift terms are upwinded per control using the sign of ``b`` computed
    with the central-difference gradient as predictor; second derivatives
    are central.  The CFL bound is checked on the terminal data and again
    every ``check_every`` steps.

    Raises:
        CflViolation: ``dt`` exceeds the diffusion bound.
        NonContractive: the algebra equation fails at a node (named).
        NumericalBlowup: a non-finite value appears (first node named).
    """
    control_set = control_set or spec.control_set
    require_gate(spec, override=override_gate, who="hjb")
    if abs(grid.T - spec.T) > 1e-12 or grid.n != spec.n:
        raise ValueError("grid does not match the problem horizon or dimension")
    if min(grid.counts) < 3:
        raise ValueError("need at least three nodes per axis")
    nodes = grid.nodes.reshape(-1, grid.n)
    shape = tuple(grid.counts)
    values = np.empty((grid.N + 1,) + shape)
    argmin = np.full((grid.N + 1,) + shape + (spec.k,), np.nan)
    values[grid.N] = spec.phi(grid.nodes)
    dt = grid.dt
    t_nodes = grid.t_nodes
    for i in range(grid.N - 1, -1, -1):
        t = float(t_nodes[i + 1])
        W = values[i + 1]
        if (grid.N - 1 - i) % check_every == 0:
            bound = cfl_bound(spec, grid, t, W, control_set)
            if dt > bound * (1 + 1e-12):
                raise CflViolation(f"hjb: dt={dt:.4g} exceeds CFL bound {bound:.4g} at t={t:.6g}",
                                   bound=bound, module="hjb")
        sl = _Slice.of(W, grid.dx)
        H, arg = _min_hamiltonian(spec, t, nodes, sl, control_set, True, "hjb",
                                  algebra_tol, algebra_max_iter)
        new = W.reshape(-1) + dt * H
        if not np.all(np.isfinite(new)):
            bad = int(np.flatnonzero(~np.isfinite(new))[0])
            raise NumericalBlowup(f"hjb: non-finite value at t={t_nodes[i]:.6g}, "
                                  f"node x={nodes[bad].tolist()}")
        values[i] = new.reshape(shape)
        argmin[i] = control_set.points[arg].reshape(shape + (spec.k,))
    return ValueField(grid, values, "hjb", spec.hash, argmin,
                      {"scheme": "explicit-upwind", "dt": dt, "dx": list(grid.dx)})


# --------------------------------------------------------------- residual


@dataclass
class ResidualGrid:
    grid: SpaceTimeGrid
    values: np.ndarray  # (N,) + counts, NaN off the interior

    @property
    def interior(self) -> np.ndarray:
        return self.values[np.isfinite(self.values)]

    @property
    def max(self) -> float:
        r = self.interior
        return float(np.max(np.abs(r))) if r.size else 0.0

    @property
    def l2(self) -> float:
        r = self.interior
        return float(np.sqrt(np.mean(r ** 2))) if r.size else 0.0

    def summary(self) -> dict:
        return {"max": self.max, "l2": self.l2, "nodes": int(self.interior.size)}

    def save_csv(self, path: str | Path) -> None:
        nodes = self.grid.nodes.reshape(-1, self.grid.n)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t"] + [f"x{j + 1}" for j in range(self.grid.n)] + ["residual"])
            for i, t in enumerate(self.grid.t_nodes[:-1]):
                for x, r in zip(nodes, self.values[i].reshape(-1)):
                    if np.isfinite(r):
                        w.writerow([repr(float(t))] + [repr(float(v)) for v in x] + [repr(float(r))])


def residual(field: ValueField, spec: ProblemSpec, control_set: ControlSet | None = None,
             algebra_tol: float = ALGEBRA_TOL,
             algebra_max_iter: int = ALGEBRA_MAX_ITER) -> ResidualGrid:
    """Strong-form residual ``dW/dt + min_u H`` at interior nodes.

    The time derivative is the forward difference from ``t_i`` to
    ``t_{i+1}``; space derivatives are central at ``t_i``.
    """
    control_set = control_set or spec.control_set
    grid = field.grid
    if grid.n != spec.n:
        raise ValueError("field dimension does not match the problem")
    nodes = grid.nodes.reshape(-1, grid.n)
    interior = np.ones(grid.counts, bool)
    for j in range(grid.n):
        sl = [slice(None)] * grid.n
        sl[j] = [0, grid.counts[j] - 1]
        interior[tuple(sl)] = False
    out = np.full((grid.N,) + tuple(grid.counts), np.nan)
    for i in range(grid.N):
        t = float(grid.t_nodes[i])
        W = field.values[i]
        dWdt = (field.values[i + 1] - W) / grid.dt
        sl_ = _Slice.of(W, grid.dx, one_sided=False)
        H, _ = _min_hamiltonian(spec, t, nodes, sl_, control_set, False, "residual",
                                algebra_tol, algebra_max_iter)
        r = dWdt + H.reshape(grid.counts)
        out[i] = np.where(interior, r, np.nan)
    return ResidualGrid(grid, out)
