"""Executable checks around the value function.

* :func:`mollify` smooths a grid field with a compactly supported bump and
  returns grid derivatives.
* :func:`pr_um_pipeline` builds slab-wise greedy controls against a
  candidate field, concatenates them and measures how far the resulting
  FBSDE solution sits from the candidate along paths.
* :func:`uniqueness_check_frozen_sigma` and :func:`uniqueness_check_full`
  compare a candidate with independently computed value fields, with the
  coefficients frozen along the candidate.
* :func:`ito_residual` evaluates ``dW/dt + H`` along simulated paths.

Verdicts are ``"equal"``, ``"consistent"`` (the candidate dominates the
value function, which is all that is claimed when controls enter a
``z``-dependent diffusion) or ``"inconsistent"``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.ndimage import convolve1d

from .algebra import solve_algebra
from .core import ControlSet, Dependence, ProblemSpec, SpaceTimeGrid
from .errors import ConfigError, GradientTooLarge, NotLipschitz, ResolutionError
from .fbsde import solve_with_config
from .hjb import assemble_hamiltonian
from .paths import EnsembleConfig, generate_ensemble, uniform_times
from .value import (ValueField, compute_value_dpp, estimate_regularity,
                    interp_slice)

UNIQUENESS_TOL = 5e-2
LIP_BOUND = 50.0

# -------------------------------------------------------------- mollifier


def bump_weights(h: float, eps: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Discrete ``(1 - r^2)^4`` kernel on offsets ``k h`` with its first two derivatives.

    The value weights sum to one.  The derivative weights are rescaled so
    that convolution differentiates linear (first) and quadratic (second)
    data exactly.
    """
    r_max = int(np.floor(eps / h - 1e-12))
    y = h * np.arange(-r_max, r_max + 1)
    r = y / eps
    base = np.clip(1 - r ** 2, 0.0, None)
    w0 = base ** 4
    w1 = -8 * r * base ** 3 / eps
    w2 = (-8 * base ** 3 + 48 * r ** 2 * base ** 2) / eps ** 2
    w0 = w0 / w0.sum()
    if r_max == 0:
        return w0, np.zeros(1), np.zeros(1)
    w1 = w1 / np.sum(-y * w1)
    w2 = w2 - w2.sum() * w0
    w2 = w2 * 2.0 / np.sum(y ** 2 * w2)
    return w0, w1, w2


@dataclass
class MollifiedField:
    """Smoothed field with its time derivative, gradient and Hessian on the grid."""

    source: ValueField
    epsilon: float
    epsilon_t: float
    values: np.ndarray
    dt_values: np.ndarray
    grad_values: np.ndarray  # (N + 1,) + counts + (n,)
    hess_values: np.ndarray  # (N + 1,) + counts + (n, n)

    @property
    def grid(self) -> SpaceTimeGrid:
        return self.source.grid

    def _interp(self, arr: np.ndarray, t: float, x) -> np.ndarray:
        g = self.grid
        s = (min(max(t, g.t_start), g.T) - g.t_start) / g.dt
        i = min(int(np.floor(s + 1e-12)), g.N - 1)
        w = min(max(s - i, 0.0), 1.0)
        extra = arr.shape[1 + g.n:]
        flat_a = arr[i].reshape(tuple(g.counts) + (-1,))
        flat_b = arr[i + 1].reshape(tuple(g.counts) + (-1,))
        cols = []
        for c in range(flat_a.shape[-1]):
            a = interp_slice(g, flat_a[..., c], x)
            cols.append(a if w == 0 else (1 - w) * a + w * interp_slice(g, flat_b[..., c], x))
        out = np.stack(cols, axis=-1)
        return out.reshape(out.shape[:-1] + extra)

    def value(self, t, x):
        return self._interp(self.values, t, x)

    def time_derivative(self, t, x):
        return self._interp(self.dt_values, t, x)

    def gradient(self, t, x):
        return self._interp(self.grad_values, t, x)

    def hessian(self, t, x):
        return self._interp(self.hess_values, t, x)


@dataclass
class AnalyticField:
    """Smooth candidate given by closed-form callables of ``(t, x)``."""

    value: Callable
    time_derivative: Callable
    gradient: Callable
    hessian: Callable


def mollify(field: ValueField, epsilon: float, epsilon_t: float | None = None) -> MollifiedField:
    """Convolve ``field`` with a normalised tensor-product bump of radius ``epsilon``.

    Time arguments outside ``[t_start, T]`` are clamped to the end slices and
    space arguments outside the box to the boundary nodes.  Derivatives come
    from convolving with the kernel derivatives.

    Raises:
        ResolutionError: a grid spacing exceeds a quarter of the radius.
    """
    epsilon_t = epsilon if epsilon_t is None else epsilon_t
    if not (epsilon > 0 and epsilon_t > 0):
        raise ValueError("epsilon must be positive")
    g = field.grid
    for name, h, e in [("dt", g.dt, epsilon_t)] + [(f"dx{j + 1}", h, epsilon)
                                                   for j, h in enumerate(g.dx)]:
        if h > e / 4 + 1e-12:
            raise ResolutionError(f"{name}={h:.4g} is coarser than epsilon/4={e / 4:.4g}")
    n = g.n
    kt = bump_weights(g.dt, epsilon_t)
    kx = [bump_weights(h, epsilon) for h in g.dx]

    def conv(orders_t: int, orders_x: tuple) -> np.ndarray:
        out = convolve1d(field.values, kt[orders_t], axis=0, mode="nearest")
        for j in range(n):
            out = convolve1d(out, kx[j][orders_x[j]], axis=1 + j, mode="nearest")
        return out

    zero = (0,) * n
    values = conv(0, zero)
    dtv = conv(1, zero)
    grad = np.stack([conv(0, tuple(int(i == j) for i in range(n))) for j in range(n)], axis=-1)
    hess = np.empty(values.shape + (n, n))
    for i in range(n):
        for j in range(i, n):
            orders = [0] * n
            orders[i] += 1
            orders[j] += 1
            hess[..., i, j] = hess[..., j, i] = conv(0, tuple(orders))
    return MollifiedField(field, float(epsilon), float(epsilon_t), values, dtv, grad, hess)


# ----------------------------------------------------------------- helpers


def _nearest_node(grid: SpaceTimeGrid, x: np.ndarray) -> tuple:
    idx = []
    for j, (lo, h, c) in enumerate(zip(grid.lower, grid.dx, grid.counts)):
        idx.append(np.clip(np.rint((x[..., j] - lo) / h).astype(np.intp), 0, c - 1))
    return tuple(idx)


def _central_mask(grid: SpaceTimeGrid, inner: float) -> np.ndarray:
    """Nodes within the central ``inner`` fraction of every axis."""
    mask = np.ones(grid.counts, bool)
    nodes = grid.nodes
    for j, (lo, hi) in enumerate(zip(grid.lower, grid.upper)):
        mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo) * inner
        mask &= np.abs(nodes[..., j] - mid) <= half + 1e-12
    return mask


def _resample(field: ValueField, grid: SpaceTimeGrid) -> np.ndarray:
    nodes = grid.nodes
    return np.stack([field(float(t), nodes) for t in grid.t_nodes])


def _gap_summary(diff: np.ndarray) -> dict:
    return {"max": float(np.max(diff)), "min": float(np.min(diff)),
            "mean_abs": float(np.mean(np.abs(diff)))}


class SlabFeedback:
    """Control fixed on each slab from the path state at the slab start."""

    def __init__(self, grid: SpaceTimeGrid, maps: list[np.ndarray], steps_per_slab: int):
        self.grid = grid
        self.maps = maps  # per slab: counts + (k,)
        self.steps = steps_per_slab
        self._current = None

    def __call__(self, i: int, t: float, X: np.ndarray) -> np.ndarray:
        if i % self.steps == 0 or self._current is None:
            j = min(i // self.steps, len(self.maps) - 1)
            self._current = self.maps[j][_nearest_node(self.grid, X)]
        return self._current


# ---------------------------------------------- slab-concatenated controls


def pr_um_pipeline(spec: ProblemSpec, W: ValueField, t: float, x, m: int,
                   cfg: EnsembleConfig | None = None, steps: int = 16,
                   control_set: ControlSet | None = None,
                   override_gate: bool | None = None, search_M: int = 5000) -> dict:
    """Slab-greedy controls against ``W`` and the resulting path mismatch.

    ``[t, T]`` is cut into ``m`` slabs.  On each slab every node of ``W``'s
    grid picks the lattice control minimising the one-slab semigroup with
    terminal map ``W`` at the slab end.  Paths use the choice of the node
    nearest to their state at the slab start.  The full-interval system is
    then solved under that policy with terminal ``phi``.  The greedy search
    compares controls on common random numbers with ``search_M`` paths.

    Returns ``rho = int |Y_s - W(s, X_s)|^2 ds + |Y_t - W(t, x)|`` (Monte
    Carlo), the mean mismatch at every slab boundary and a noise floor.
    """
    cfg = cfg or EnsembleConfig()
    control_set = control_set or spec.control_set
    if m < 1:
        raise ValueError("m must be positive")
    per = max(1, -(-steps // m))
    total = per * m
    times = uniform_times(t, spec.T, total)
    slab_len = (spec.T - t) / m
    grid = W.grid
    nodes = grid.nodes.reshape(-1, grid.n)
    maps = []
    for j in range(m):
        a = t + j * slab_len
        ens = generate_ensemble(uniform_times(a, a + slab_len, per), min(cfg.M, search_M), spec.d,
                                cfg.seed * 7919 + 101 * m + j + 1)

        def psi(X, _end=a + slab_len):
            return W(_end, X)

        best = np.full(nodes.shape[0], np.inf)
        choice = np.zeros((nodes.shape[0], spec.k))
        for u in control_set.points:
            sol = solve_with_config(spec, ens, nodes, u, psi, cfg, override_gate)
            better = sol.Y0 < best
            best = np.where(better, sol.Y0, best)
            choice[better] = u
        maps.append(choice.reshape(tuple(grid.counts) + (spec.k,)))

    policy = SlabFeedback(grid, maps, per)
    ens = generate_ensemble(times, cfg.M, spec.d, cfg.seed)
    sol = solve_with_config(spec, ens, np.asarray(x, float), policy, None, cfg, override_gate)
    X, Y = sol.X[:, 0], sol.Y[:, 0]
    mism = np.stack([Y[i] - W(float(times[i]), X[i]) for i in range(total + 1)])
    dt = times[1] - times[0]
    integral_paths = np.sum(mism[:-1] ** 2, axis=0) * dt
    y0 = float(sol.Y0[0])
    w0 = float(W(t, np.asarray(x, float)[None, :])[0])
    head = abs(y0 - w0)
    rho = float(np.mean(integral_paths)) + head
    noise = float(sol.y0_stderr[0] + integral_paths.std(ddof=1) / np.sqrt(len(integral_paths)))
    return {
        "m": m,
        "rho_m": rho,
        "initial_gap": head,
        "Y_t": y0,
        "W_t": w0,
        "per_slab_gaps": [float(np.mean(np.abs(mism[j * per]))) for j in range(m + 1)],
        "noise_floor": noise,
        "picard_iters": sol.picard_iters,
    }


# ------------------------------------------------------------- uniqueness


def _check_lipschitz(candidate: ValueField, lip_bound: float) -> float:
    lip = estimate_regularity(candidate)["lip_x"]
    if lip > lip_bound:
        raise NotLipschitz(f"candidate lip_x={lip:.4g} exceeds bound {lip_bound:.4g}")
    return lip


def _frozen_spec(spec: ProblemSpec, b, sigma, tag: str) -> ProblemSpec:
    deps = spec.depends
    src = None if spec.source is None else {**spec.source, "frozen": tag}
    return spec.replace(
        b=b, sigma=sigma, source=src, override_gate=True,
        depends=Dependence(b_y=False, b_z=False, sigma_y=False, sigma_z=False,
                           g_y=deps.g_y, g_z=deps.g_z, controlled=deps.controlled),
        name=f"{spec.name}[{tag}]")


def _verdict(W: np.ndarray, cand: np.ndarray, aux: np.ndarray | None, mask: np.ndarray,
             tol: float, control_free: bool) -> tuple[str, dict]:
    """Compare on ``mask`` with the per-node tolerance ``tol * max(1, |candidate|)``."""
    scale = np.maximum(1.0, np.abs(cand))[:, mask]
    above = (W - cand)[:, mask]
    below = (cand - W)[:, mask]
    gaps = {"W_minus_candidate": _gap_summary(above), "candidate_minus_W": _gap_summary(below)}
    excess = {"W_minus_candidate": float(np.max(above / scale)),
              "candidate_minus_W": float(np.max(below / scale))}
    ok = excess["W_minus_candidate"] <= tol
    if aux is not None:
        aux_gap = (aux - cand)[:, mask]
        gaps["aux_minus_candidate"] = _gap_summary(aux_gap)
        excess["aux_minus_candidate"] = float(np.max(aux_gap / scale))
        ok = ok and excess["aux_minus_candidate"] <= tol
    gaps["scaled_max"] = excess
    if not ok:
        return "inconsistent", gaps
    if control_free:
        return ("equal" if excess["candidate_minus_W"] <= tol else "inconsistent"), gaps
    return "consistent", gaps


def uniqueness_check_frozen_sigma(spec: ProblemSpec, candidate: ValueField,
                                  cfg: EnsembleConfig | None = None,
                                  grid: SpaceTimeGrid | None = None,
                                  tol: float = UNIQUENESS_TOL, lip_bound: float = LIP_BOUND,
                                  inner: float = 0.5, W: ValueField | None = None) -> dict:
    """Compare ``candidate`` with the value function, freezing ``sigma`` along it.

    The auxiliary problem uses ``sigma(t, x, candidate(t, x), ., u)``; both
    it and the original problem are solved by the DPP on ``grid`` (default:
    the candidate's grid) with a seed different from the candidate's.  Gaps
    are taken over the central ``inner`` fraction of the box, against the
    tolerance ``tol * max(1, |candidate|)`` at each node.
    """
    if spec.depends.sigma_z:
        raise ConfigError("sigma depends on z; use uniqueness_check_full")
    cfg = cfg or EnsembleConfig()
    grid = grid or candidate.grid
    lip = _check_lipschitz(candidate, lip_bound)
    cfg_w = cfg.with_(seed=cfg.seed + 1)
    if W is None:
        W = compute_value_dpp(spec, grid, cfg=cfg_w)
    if spec.depends.sigma_y:
        def sig(t, x, y, z, u, _s=spec.sigma):
            v = candidate(t, x)
            return _s(t, x, v, np.zeros(v.shape + (spec.d,)), u)

        aux_spec = spec.replace(sigma=sig, override_gate=True, name=f"{spec.name}[frozen-sigma]",
                                source=None if spec.source is None
                                else {**spec.source, "frozen": "sigma"},
                                depends=Dependence(**{**spec.depends.__dict__, "sigma_y": False}))
        aux = compute_value_dpp(aux_spec, grid, cfg=cfg.with_(seed=cfg.seed + 2)).values
        identity = False
    else:
        aux, identity = W.values, True
    control_free = len(spec.control_set) == 1 or not spec.depends.controlled
    cand = _resample(candidate, grid)
    verdict, gaps = _verdict(W.values, cand, aux, _central_mask(grid, inner), tol, control_free)
    return {"check": "frozen-sigma", "verdict": verdict, "gaps": gaps,
            "thresholds": {"tol": tol, "lip_bound": lip_bound, "inner": inner},
            "seeds": {"W": cfg_w.seed, "aux": None if identity else cfg.seed + 2},
            "candidate_lip_x": lip, "freezing_is_identity": identity}


def uniqueness_check_full(spec: ProblemSpec, candidate: ValueField,
                          cfg: EnsembleConfig | None = None, grid: SpaceTimeGrid | None = None,
                          epsilon: float | None = None, tol: float = UNIQUENESS_TOL,
                          lip_bound: float = LIP_BOUND, inner: float = 0.5,
                          W: ValueField | None = None, z_check_steps: int = 10) -> dict:
    """Freeze ``b`` and ``sigma`` at ``(candidate, V~)`` and compare.

    ``V~(t, x, u)`` solves the algebra equation with ``p`` the mollified
    gradient of the candidate and ``v`` the candidate value.  The frozen
    system is decoupled; its DPP value and an independently computed value
    field of the original problem must both stay below ``candidate + tol``
    for a ``"consistent"`` verdict.

    Raises:
        GradientTooLarge: ``sup |D W~| * L3 >= 1``.
    """
    cfg = cfg or EnsembleConfig()
    grid = grid or candidate.grid
    lip = _check_lipschitz(candidate, lip_bound)
    cg = candidate.grid
    if epsilon is None:
        epsilon = 4 * max(cg.dx)
    eps_t = max(epsilon, 4 * cg.dt)
    moll = mollify(candidate, epsilon, eps_t)
    gnorm = float(np.max(np.linalg.norm(moll.grad_values, axis=-1)))
    if gnorm * spec.L3 >= 1.0:
        raise GradientTooLarge(f"sup|DW~|*L3 = {gnorm:.4g}*{spec.L3:.4g} >= 1")

    def frozen_args(t, x, u):
        x = np.asarray(x, float)
        v = candidate(t, x)
        p = moll.gradient(t, x)
        V = solve_algebra(spec, t, x, v, p, u).V
        return v, V

    def b_f(t, x, y, z, u, _b=spec.b):
        v, V = frozen_args(t, x, u)
        return _b(t, x, v, V, u)

    def s_f(t, x, y, z, u, _s=spec.sigma):
        v, V = frozen_args(t, x, u)
        return _s(t, x, v, V, u)

    frozen = _frozen_spec(spec, b_f, s_f, "frozen-b-sigma")
    aux_field = compute_value_dpp(frozen, grid, cfg=cfg.with_(seed=cfg.seed + 2))
    cfg_w = cfg.with_(seed=cfg.seed + 1)
    if W is None:
        W = compute_value_dpp(spec, grid, cfg=cfg_w)
    cand = _resample(candidate, grid)
    verdict, gaps = _verdict(W.values, cand, aux_field.values, _central_mask(grid, inner), tol,
                             control_free=False)

    # Z along the frozen system against V~ at the path states
    x0 = 0.5 * (np.asarray(grid.lower) + np.asarray(grid.upper))
    times = uniform_times(grid.t_start, grid.T, z_check_steps)
    ens = generate_ensemble(times, cfg.M, spec.d, cfg.seed + 3)
    arg = aux_field.argmin

    def policy(i, t, X):
        j = min(int(round((t - grid.t_start) / grid.dt)), grid.N - 1)
        return arg[j][_nearest_node(grid, X)]

    sol = solve_with_config(frozen, ens, x0, policy, None, cfg, True)
    zgap = np.zeros(cfg.M)
    for i in range(z_check_steps):
        t = float(times[i])
        _, V = frozen_args(t, sol.X[i, 0], sol.controls[i][0])
        zgap += np.sum((sol.Z[i, 0] - V) ** 2, axis=-1) * ens.dt
    return {"check": "full", "verdict": verdict, "gaps": gaps,
            "thresholds": {"tol": tol, "lip_bound": lip_bound, "inner": inner,
                           "epsilon": epsilon, "epsilon_t": eps_t},
            "seeds": {"W": cfg_w.seed, "aux": cfg.seed + 2, "z_check": cfg.seed + 3},
            "candidate_lip_x": lip, "grad_sup": gnorm,
            "z_consistency_gap": float(np.mean(zgap))}


# -------------------------------------------------------------- Ito check


def ito_residual(spec: ProblemSpec, candidate, t: float, x, policy,
                 cfg: EnsembleConfig | None = None, steps: int = 20,
                 override_gate: bool | None = None) -> dict:
    """``Pi1 = dW~/dt + H(s, X_s, W~, DW~, D^2W~, u_s)`` along simulated paths.

    ``candidate`` offers ``value``, ``time_derivative``, ``gradient`` and
    ``hessian`` as functions of ``(t, x)`` (an :class:`AnalyticField` or a
    :class:`MollifiedField`).
    """
    cfg = cfg or EnsembleConfig()
    times = uniform_times(t, spec.T, steps)
    ens = generate_ensemble(times, cfg.M, spec.d, cfg.seed)
    sol = solve_with_config(spec, ens, np.asarray(x, float), policy, None, cfg, override_gate)
    lo, hi = np.inf, -np.inf
    for i in range(steps):
        s = float(times[i])
        X = sol.X[i, 0]
        u = sol.controls[i][0]
        H = assemble_hamiltonian(spec, s, X, candidate.value(s, X), candidate.gradient(s, X),
                                 candidate.hessian(s, X), u)
        pi = candidate.time_derivative(s, X) + H
        lo, hi = min(lo, float(np.min(pi))), max(hi, float(np.max(pi)))
    XT = sol.X[-1, 0]
    term = float(np.max(np.abs(candidate.value(spec.T, XT) - spec.phi(XT))))
    return {"check": "ito", "Pi1_min": lo, "Pi1_max": hi, "terminal_gap": term,
            "seeds": {"paths": cfg.seed}}


def heat_exact_field(T: float = 1.0, bump: float = 0.0) -> AnalyticField:
    """``x^2 + (T - t) + bump * sin(x)`` in one dimension with derivatives."""
    return AnalyticField(
        value=lambda t, x: x[..., 0] ** 2 + (T - t) + bump * np.sin(x[..., 0]),
        time_derivative=lambda t, x: -np.ones(x.shape[:-1]),
        gradient=lambda t, x: (2 * x[..., 0] + bump * np.cos(x[..., 0]))[..., None],
        hessian=lambda t, x: (2 - bump * np.sin(x[..., 0]))[..., None, None],
    )
