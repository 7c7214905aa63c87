"""Value fields on space-time grids and the backward dynamic-programming solver."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .core import ControlSet, ProblemSpec, SpaceTimeGrid, chunked_map, get_threads
from .errors import ConfigError, InterpolationOutOfBounds
from .fbsde import semigroup_on_nodes
from .paths import EnsembleConfig, PathEnsemble, generate_ensemble, uniform_times

SCHEMA = 1
MAX_EXIT_FRACTION = 0.25


def interp_slice(grid: SpaceTimeGrid, values: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Multilinear interpolation of one time slice, clamped to the box."""
    x = np.asarray(x, dtype=float)
    idx, wts = [], []
    for j, (lo, h, c) in enumerate(zip(grid.lower, grid.dx, grid.counts)):
        s = (np.clip(x[..., j], lo, lo + h * (c - 1)) - lo) / h
        i = np.clip(np.floor(s).astype(np.intp), 0, c - 2)
        idx.append(i)
        wts.append(s - i)
    out = np.zeros(x.shape[:-1])
    for corner in range(1 << grid.n):
        w = np.ones(x.shape[:-1])
        pos = []
        for j in range(grid.n):
            bit = (corner >> j) & 1
            w = w * (wts[j] if bit else 1.0 - wts[j])
            pos.append(idx[j] + bit)
        out += w * values[tuple(pos)]
    return out


def outside_fraction(grid: SpaceTimeGrid, x: np.ndarray, slack: float = 0.0) -> float:
    lo = np.asarray(grid.lower) - slack
    hi = np.asarray(grid.upper) + slack
    out = np.any((x < lo) | (x > hi), axis=-1)
    return float(np.mean(out)) if out.size else 0.0


@dataclass
class ValueField:
    """``W`` at every ``(t_i, x_node)``; shape ``(N + 1,) + grid.counts``."""

    grid: SpaceTimeGrid
    values: np.ndarray
    provenance: str = "external"
    problem_hash: str = ""
    argmin: np.ndarray | None = None  # (N + 1,) + counts + (k,), NaN at the terminal slice
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        want = (self.grid.N + 1,) + tuple(self.grid.counts)
        if self.values.shape != want:
            raise ValueError(f"values have shape {self.values.shape}, expected {want}")

    @property
    def t_nodes(self) -> np.ndarray:
        return self.grid.t_nodes

    def slice_at(self, i: int, x) -> np.ndarray:
        return interp_slice(self.grid, self.values[i], x)

    def __call__(self, t: float, x) -> np.ndarray:
        """Interpolate at time ``t``: linear in ``t`` between slices, clamped in both."""
        s = (min(max(t, self.grid.t_start), self.grid.T) - self.grid.t_start) / self.grid.dt
        i = min(int(np.floor(s + 1e-12)), self.grid.N - 1)
        w = min(max(s - i, 0.0), 1.0)
        a = self.slice_at(i, x)
        if w == 0.0:
            return a
        return (1 - w) * a + w * self.slice_at(i + 1, x)

    def shifted(self, c: float) -> "ValueField":
        return ValueField(self.grid, self.values + c, "external", self.problem_hash,
                          None if self.argmin is None else self.argmin.copy(),
                          {**self.meta, "shift": c})

    # -------------------------------------------------------------- I/O

    def header(self) -> dict:
        return {"schema": SCHEMA, "grid": self.grid.to_dict(), "problem_hash": self.problem_hash,
                "provenance": self.provenance,
                "k": 0 if self.argmin is None else int(self.argmin.shape[-1]),
                "meta": self.meta}

    def save(self, stem: str | Path) -> tuple[Path, Path]:
        """Write ``<stem>.csv`` (``t, x..., W, argmin_u...``) and ``<stem>.json``."""
        stem = Path(stem)
        csv_path, json_path = stem.with_suffix(".csv"), stem.with_suffix(".json")
        nodes = self.grid.nodes.reshape(-1, self.grid.n)
        k = 0 if self.argmin is None else self.argmin.shape[-1]
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t"] + [f"x{j + 1}" for j in range(self.grid.n)] + ["W"]
                       + [f"argmin_u{j + 1}" for j in range(k)])
            for i, t in enumerate(self.t_nodes):
                vals = self.values[i].reshape(-1)
                arg = None if k == 0 else self.argmin[i].reshape(-1, k)
                for r, x in enumerate(nodes):
                    row = [repr(float(t))] + [repr(float(v)) for v in x] + [repr(float(vals[r]))]
                    if arg is not None:
                        row += [repr(float(v)) for v in arg[r]]
                    w.writerow(row)
        json_path.write_text(json.dumps(self.header(), indent=2, sort_keys=True, default=str) + "\n")
        return csv_path, json_path

    @classmethod
    def load(cls, stem: str | Path) -> "ValueField":
        stem = Path(stem)
        try:
            head = json.loads(stem.with_suffix(".json").read_text())
            rows = list(csv.reader(open(stem.with_suffix(".csv"), newline="")))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read value field {stem}: {exc}") from exc
        if head.get("schema") != SCHEMA:
            raise ConfigError(f"unsupported value-field schema {head.get('schema')!r}")
        g = head["grid"]
        grid = SpaceTimeGrid(T=g["T"], N=g["N"], lower=g["lower"], upper=g["upper"],
                             counts=g["counts"], t_start=g.get("t_start", 0.0))
        data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float)
        n, k = grid.n, int(head.get("k", 0))
        want = (grid.N + 1) * int(np.prod(grid.counts))
        if data.shape != (want, 1 + n + 1 + k):
            raise ConfigError(f"value-field CSV has shape {data.shape}, expected {(want, n + 2 + k)}")
        shape = (grid.N + 1,) + tuple(grid.counts)
        values = data[:, 1 + n].reshape(shape)
        argmin = data[:, 2 + n:].reshape(shape + (k,)) if k else None
        return cls(grid, values, head.get("provenance", "external"), head.get("problem_hash", ""),
                   argmin, head.get("meta", {}))


def field_from_function(grid: SpaceTimeGrid, fn, provenance: str = "external",
                        problem_hash: str = "") -> ValueField:
    """Sample ``fn(t, x)`` (``x`` of shape ``counts + (n,)``) on every grid slice."""
    nodes = grid.nodes
    vals = np.stack([np.broadcast_to(fn(float(t), nodes), grid.counts) for t in grid.t_nodes])
    return ValueField(grid, vals, provenance, problem_hash)


# ----------------------------------------------------------------- DPP


def _slab(ensemble: PathEnsemble, i: int, substeps: int) -> PathEnsemble:
    a, b = i * substeps, (i + 1) * substeps
    return PathEnsemble(ensemble.t_nodes[a:b + 1], ensemble.dW[a:b], ensemble.seed)


def compute_value_dpp(spec: ProblemSpec, grid: SpaceTimeGrid, control_set: ControlSet | None = None,
                      cfg: EnsembleConfig | None = None, threads: int | None = None,
                      max_exit_fraction: float = MAX_EXIT_FRACTION,
                      override_gate: bool | None = None, chunk: int = 16) -> ValueField:
    """Backward DPP: ``W(t_i, x) = min_u G_{t_i, t_{i+1}}[W(t_{i+1}, .)](x)``.

    Controls are constant on each slab.  Paths leaving the box read the
    clamped boundary value; if more than ``max_exit_fraction`` of all slab
    endpoints leave the box the run is refused.

    Every slab uses its own block of the Brownian ensemble and the same
    block for all nodes and controls, so the minimisation compares
    controls on common random numbers.
    """
    cfg = cfg or EnsembleConfig()
    control_set = control_set or spec.control_set
    if abs(grid.T - spec.T) > 1e-12 or grid.n != spec.n:
        raise ValueError("grid does not match the problem horizon or dimension")
    threads = get_threads() if threads is None else threads
    s = int(cfg.substeps)
    times = uniform_times(grid.t_start, grid.T, grid.N * s)
    ens = generate_ensemble(times, cfg.M, spec.d, cfg.seed)
    nodes = grid.nodes.reshape(-1, spec.n)
    P, K = nodes.shape[0], len(control_set)
    values = np.empty((grid.N + 1, P))
    argmin = np.full((grid.N + 1, P, spec.k), np.nan)
    stderr = np.zeros((grid.N, P))
    values[grid.N] = spec.phi(nodes)
    worst_exit = 0.0

    for i in range(grid.N - 1, -1, -1):
        t = float(grid.t_nodes[i])
        slab = _slab(ens, i, s)
        nxt = values[i + 1].reshape(grid.counts)

        def run(sl: slice, _nxt=nxt, _t=t, _slab=slab):
            exits = []

            def psi(X):
                exits.append((outside_fraction(grid, X), X[..., 0].size))
                return interp_slice(grid, _nxt, X)

            cand = np.empty((K, sl.stop - sl.start))
            err = np.empty_like(cand)
            for c, u in enumerate(control_set.points):
                cand[c], err[c] = semigroup_on_nodes(spec, _t, nodes[sl], u, grid.dt, psi,
                                                     _slab, cfg, override_gate)
            return cand, err, exits

        parts = chunked_map(run, P, chunk=chunk, threads=threads)
        exits = [e for p in parts for e in p[2]]
        cand = np.concatenate([p[0] for p in parts], axis=1)
        err = np.concatenate([p[1] for p in parts], axis=1)
        best = np.argmin(cand, axis=0)
        cols = np.arange(P)
        values[i] = cand[best, cols]
        stderr[i] = err[best, cols]
        argmin[i] = control_set.points[best]
        # weight by path count so a short trailing chunk does not dominate
        total = sum(w for _, w in exits)
        frac = sum(f * w for f, w in exits) / total if total else 0.0
        worst_exit = max(worst_exit, frac)
        if frac > max_exit_fraction:
            raise InterpolationOutOfBounds(
                f"slab {i} (t={t:.4g}): {frac:.1%} of paths leave the box "
                f"{list(grid.lower)}..{list(grid.upper)}; widen the grid")
        if not np.all(np.isfinite(values[i])):
            bad = int(np.flatnonzero(~np.isfinite(values[i]))[0])
            raise InterpolationOutOfBounds(f"non-finite value at t={t:.4g}, node {nodes[bad].tolist()}")

    shape = (grid.N + 1,) + tuple(grid.counts)
    meta = {"M": cfg.M, "seed": cfg.seed, "substeps": s, "controls": K,
            "max_stderr": float(stderr.max()) if stderr.size else 0.0,
            "max_exit_fraction": worst_exit}
    field_ = ValueField(grid, values.reshape(shape), "dpp", spec.hash,
                        argmin.reshape(shape + (spec.k,)), meta)
    field_.stderr = stderr.reshape((grid.N,) + tuple(grid.counts))
    return field_


# ------------------------------------------------------------ regularity


def estimate_regularity(field: ValueField, box: float | None = None) -> dict:
    """Largest difference quotients of the field.

    ``lip_x`` is the largest ``|dW| / |dx|`` over neighbouring nodes along
    each axis; ``holder_t`` the largest ``|dW| / ((1 + |x|) sqrt(dt))`` over
    neighbouring times at a fixed node.  ``box`` restricts both to nodes
    with ``max_j |x_j| <= box``.
    """
    W = field.values
    if not np.all(np.isfinite(W)):
        raise ValueError("field has non-finite values")
    grid = field.grid
    nodes = grid.nodes
    inside = np.ones(grid.counts, bool) if box is None else \
        np.all(np.abs(nodes) <= box + 1e-12, axis=-1)
    lip = 0.0
    for j, h in enumerate(grid.dx):
        dq = np.abs(np.diff(W, axis=1 + j)) / h
        ok = np.logical_and(np.take(inside, range(0, grid.counts[j] - 1), axis=j),
                            np.take(inside, range(1, grid.counts[j]), axis=j))
        if np.any(ok):
            lip = max(lip, float(np.max(dq[:, ok])))
    norm = 1.0 + np.linalg.norm(nodes, axis=-1)
    hq = np.abs(np.diff(W, axis=0)) / (norm * np.sqrt(grid.dt))
    holder = float(np.max(hq[:, inside])) if np.any(inside) else 0.0
    return {"lip_x": lip, "holder_t": holder}


def discrete_lipschitz_ok(field: ValueField, L_W: float, pairs: int = 1000, seed: int = 0) -> bool:
    """Sampled check ``|W(t,x) - W(t,x')| <= L_W |x - x'| + 2 dx L_W`` on node pairs."""
    rng = np.random.default_rng(seed)
    grid = field.grid
    flat = field.values.reshape(grid.N + 1, -1)
    nodes = grid.nodes.reshape(-1, grid.n)
    i = rng.integers(0, grid.N + 1, pairs)
    a = rng.integers(0, nodes.shape[0], pairs)
    b = rng.integers(0, nodes.shape[0], pairs)
    gap = np.abs(flat[i, a] - flat[i, b])
    bound = L_W * np.linalg.norm(nodes[a] - nodes[b], axis=-1) + 2 * max(grid.dx) * L_W
    return bool(np.all(gap <= bound + 1e-12))
