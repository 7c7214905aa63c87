"""Fixed-point solver for the embedded algebra equation ``V = z0 + p^T sigma(t, x, v, V, u)``.

With ``z0 = 0`` this is the ``V`` plugged into the Hamiltonian; with
``z0 = z`` it is the auxiliary map ``h`` used around test functions.  The
map is a contraction with factor ``q = L3 |p|`` whenever that is below one.
All routines are vectorised over a leading batch of points.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ProblemSpec
from .errors import MaxIterations, NonContractive

ALGEBRA_TOL = 1e-12
ALGEBRA_MAX_ITER = 200


@dataclass(frozen=True)
class AlgebraSolution:
    V: np.ndarray
    iterations: int
    residual: float
    contraction_estimate: float


def _pt_sigma(spec: ProblemSpec, t, x, v, V, u, p) -> np.ndarray:
    sig = spec.sigma(t, x, v, V, u)  # (..., n, d)
    return np.einsum("...i,...ij->...j", p, sig)


def algebra_residual(spec: ProblemSpec, t, x, v, p, u, z0, V) -> float:
    """Max over the batch of ``|V - z0 - p^T sigma(t, x, v, V, u)|``."""
    r = V - z0 - _pt_sigma(spec, t, x, v, V, u, p)
    return float(np.max(np.linalg.norm(np.atleast_2d(r), axis=-1))) if r.size else 0.0


def solve_algebra(spec: ProblemSpec, t: float, x, v, p, u, z0=None,
                  tol: float = ALGEBRA_TOL, max_iter: int = ALGEBRA_MAX_ITER) -> AlgebraSolution:
    """Solve the algebra equation at one point or a batch of points.

    Shapes: ``x`` and ``p`` are ``(..., n)``, ``v`` is ``(...)``, ``u`` is
    ``(..., k)`` (or ``(k,)``), ``z0`` is ``(..., d)`` (default zero).

    Iteration starts at ``z0`` and stops once the a-posteriori contraction
    bound ``q / (1 - q) * |V^{j+1} - V^j|`` is within ``tol``.

    Raises:
        NonContractive: ``L3 |p| >= 1`` at some point of the batch.
        MaxIterations: ``tol`` not reached in ``max_iter`` sweeps.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    v = np.asarray(v, dtype=float)
    u = np.asarray(u, dtype=float)
    batch = np.broadcast_shapes(x.shape[:-1], p.shape[:-1], v.shape)
    if z0 is None:
        z0 = np.zeros(batch + (spec.d,))
    z0 = np.broadcast_to(np.asarray(z0, dtype=float), batch + (spec.d,))

    pnorm = np.linalg.norm(p, axis=-1)
    q_all = spec.L3 * pnorm
    q = float(np.max(q_all)) if q_all.size else 0.0
    if q >= 1.0:
        idx = np.unravel_index(int(np.argmax(q_all)), np.shape(q_all)) if np.ndim(q_all) else None
        raise NonContractive(
            f"algebra map not contractive: L3*|p| = {q:.4g} >= 1"
            + (f" at batch index {idx}" if idx else ""), index=idx, q=q)

    V = z0 + _pt_sigma(spec, t, x, v, z0, u, p)
    if not spec.depends.sigma_z or not np.any(pnorm):
        res = algebra_residual(spec, t, x, v, p, u, z0, V)
        return AlgebraSolution(V, 1, res, 0.0)

    # q == 0 with z-dependent sigma means L3 was declared 0; fall back to raw steps
    threshold = tol * (1.0 - q) / q if q > 0 else tol
    prev_gap = np.inf
    ratio = 0.0
    for it in range(2, max_iter + 1):
        V_new = z0 + _pt_sigma(spec, t, x, v, V, u, p)
        gap = float(np.max(np.linalg.norm(np.atleast_2d(V_new - V), axis=-1)))
        if np.isfinite(prev_gap) and prev_gap > 0:
            ratio = gap / prev_gap
        V = V_new
        if gap <= threshold:
            res = algebra_residual(spec, t, x, v, p, u, z0, V)
            return AlgebraSolution(V, it, res, ratio)
        prev_gap = gap
    raise MaxIterations(f"algebra iteration did not reach tol={tol:g} in {max_iter} steps "
                        f"(last gap {prev_gap:.3g})")


def probe_algebra_regularity(spec: ProblemSpec, p, box: float = 2.0, probes: int = 2000,
                             seed: int = 0, t: float = 0.0, tol: float = ALGEBRA_TOL) -> dict:
    """Empirical growth and z-Lipschitz constants of ``h(t, x, y, z, u)``.

    ``h`` solves ``h = z + p^T sigma(t, x, y, h, u)`` for the fixed gradient
    ``p``.  The growth constant is measured on the correction ``h - z``, so
    that vanishing coefficients give zero; ``|h| <= (1 + growth)(1 + |x| +
    |y| + |z|)`` follows.
    """
    rng = np.random.default_rng(seed)
    n, d = spec.n, spec.d
    p = np.broadcast_to(np.asarray(p, dtype=float), (probes, n))
    x = rng.uniform(-box, box, (probes, n))
    y = rng.uniform(-box, box, probes)
    z1 = rng.uniform(-box, box, (probes, d))
    z2 = rng.uniform(-box, box, (probes, d))
    u = spec.control_set.points[rng.integers(0, len(spec.control_set), probes)]
    h1 = solve_algebra(spec, t, x, y, p, u, z0=z1, tol=tol).V
    h2 = solve_algebra(spec, t, x, y, p, u, z0=z2, tol=tol).V
    scale = 1 + np.linalg.norm(x, axis=1) + np.abs(y) + np.linalg.norm(z1, axis=1)
    growth = float(np.max(np.linalg.norm(h1 - z1, axis=1) / scale))
    dz = np.linalg.norm(z1 - z2, axis=1)
    keep = dz > 1e-9
    lip = float(np.max(np.linalg.norm(h1 - h2, axis=1)[keep] / dz[keep]))
    return {"growth_const": growth, "lipschitz_const": lip, "probes": probes}
