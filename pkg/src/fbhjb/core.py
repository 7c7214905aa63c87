"""Problem definitions, grids, control lattices and the assumption gates.

Coefficient conventions used throughout the package (``...`` is any batch
shape, broadcast across arguments):

* ``b(t, x, y, z, u)``     -> ``(..., n)``
* ``sigma(t, x, y, z, u)`` -> ``(..., n, d)``
* ``g(t, x, y, z, u)``     -> ``(...)``
* ``phi(x)``               -> ``(...)``

with ``t`` a float, ``x`` of shape ``(..., n)``, ``y`` of shape ``(...)``,
``z`` of shape ``(..., d)`` and ``u`` of shape ``(..., k)``.
"""

from __future__ import annotations

import hashlib
import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np
from scipy.stats import qmc

from .errors import AssumptionGateError, InvalidConstants

CoefFn = Callable[..., np.ndarray]


# ------------------------------------------------------------------ controls


@dataclass(frozen=True)
class ControlSet:
    """Finite lattice standing in for the compact control set."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.size == 0:
            raise ValueError("control set must be nonempty")
        if not np.all(np.isfinite(pts)):
            raise ValueError("control points must be finite")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def k(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def fineness(self) -> float:
        """Largest nearest-neighbour gap (0 for a single point)."""
        if len(self) == 1:
            return 0.0
        diff = self.points[:, None, :] - self.points[None, :, :]
        dist = np.linalg.norm(diff, axis=-1)
        np.fill_diagonal(dist, np.inf)
        return float(dist.min(axis=1).max())

    @classmethod
    def single(cls, k: int = 1) -> "ControlSet":
        return cls(np.zeros((1, k)))

    @classmethod
    def uniform(cls, low, high, count, k: int | None = None) -> "ControlSet":
        """Tensor lattice with ``count`` points per axis on ``[low, high]``."""
        low = np.atleast_1d(np.asarray(low, dtype=float))
        high = np.atleast_1d(np.asarray(high, dtype=float))
        k = k or max(low.size, high.size)
        low = np.broadcast_to(low, (k,))
        high = np.broadcast_to(high, (k,))
        counts = np.broadcast_to(np.atleast_1d(count), (k,))
        axes = [np.linspace(lo, hi, int(c)) for lo, hi, c in zip(low, high, counts)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return cls(np.stack([m.ravel() for m in mesh], axis=-1))

    def superset_of(self, other: "ControlSet", atol: float = 1e-12) -> bool:
        return all(np.any(np.all(np.abs(self.points - p) <= atol, axis=1)) for p in other.points)


# ---------------------------------------------------------------------- grid


@dataclass(frozen=True)
class SpaceTimeGrid:
    """Uniform time nodes on ``[t_start, T]`` times a tensor spatial grid."""

    T: float
    N: int
    lower: tuple
    upper: tuple
    counts: tuple
    t_start: float = 0.0

    def __post_init__(self):
        lower = tuple(float(v) for v in np.atleast_1d(self.lower))
        upper = tuple(float(v) for v in np.atleast_1d(self.upper))
        counts = tuple(int(c) for c in np.atleast_1d(self.counts))
        if not (len(lower) == len(upper) == len(counts)):
            raise ValueError("lower, upper and counts must have equal length")
        if self.N < 1 or not self.T > self.t_start:
            raise ValueError("need N >= 1 and T > t_start")
        if any(c < 2 for c in counts) or any(hi <= lo for lo, hi in zip(lower, upper)):
            raise ValueError("each spatial axis needs >= 2 nodes on a nonempty interval")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "counts", counts)

    @classmethod
    def from_spacing(cls, T: float, dt: float, lower, upper, dx, t_start: float = 0.0):
        """Grid with steps as close as possible to (and never above) ``dt``/``dx``."""
        N = int(math.ceil((T - t_start) / dt - 1e-9))
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        dx = np.broadcast_to(np.atleast_1d(dx), lower.shape)
        counts = [int(math.ceil((hi - lo) / h - 1e-9)) + 1 for lo, hi, h in zip(lower, upper, dx)]
        return cls(T=T, N=N, lower=tuple(lower), upper=tuple(upper), counts=tuple(counts),
                   t_start=t_start)

    @property
    def n(self) -> int:
        return len(self.counts)

    @property
    def dt(self) -> float:
        return (self.T - self.t_start) / self.N

    @property
    def t_nodes(self) -> np.ndarray:
        return self.t_start + self.dt * np.arange(self.N + 1)

    @property
    def dx(self) -> tuple:
        return tuple((hi - lo) / (c - 1) for lo, hi, c in zip(self.lower, self.upper, self.counts))

    @property
    def axes(self) -> list[np.ndarray]:
        return [lo + h * np.arange(c) for lo, h, c in zip(self.lower, self.dx, self.counts)]

    @property
    def shape(self) -> tuple:
        return self.counts

    @property
    def nodes(self) -> np.ndarray:
        """All spatial nodes, shape ``counts + (n,)``."""
        return np.stack(np.meshgrid(*self.axes, indexing="ij"), axis=-1)

    def with_time(self, T: float | None = None, N: int | None = None,
                  t_start: float | None = None) -> "SpaceTimeGrid":
        return SpaceTimeGrid(T=self.T if T is None else T, N=self.N if N is None else N,
                             lower=self.lower, upper=self.upper, counts=self.counts,
                             t_start=self.t_start if t_start is None else t_start)

    def to_dict(self) -> dict:
        return {"T": self.T, "N": self.N, "t_start": self.t_start, "lower": list(self.lower),
                "upper": list(self.upper), "counts": list(self.counts)}


# ------------------------------------------------------------------- problem


@dataclass(frozen=True)
class Dependence:
    """Which arguments each coefficient actually uses (conservative default)."""

    b_y: bool = True
    b_z: bool = True
    sigma_y: bool = True
    sigma_z: bool = True
    g_y: bool = True
    g_z: bool = True
    controlled: bool = True

    @property
    def coupled(self) -> bool:
        return self.b_y or self.b_z or self.sigma_y or self.sigma_z


@dataclass(frozen=True)
class GateConstants:
    """The opaque FBSDE-estimate constants ``C2(.)`` and ``C4``.

    Neither has a closed form; the defaults are nominal placeholders.
    """

    C2: Callable[[float], float] | float = 1.0
    C4: float = 1.0
    source: str = "nominal"

    def c2(self, L: float) -> float:
        return float(self.C2(L)) if callable(self.C2) else float(self.C2)


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    n: int
    d: int
    k: int
    T: float
    b: CoefFn
    sigma: CoefFn
    g: CoefFn
    phi: Callable[[np.ndarray], np.ndarray]
    L1: float
    L2: float
    L3: float
    control_set: ControlSet
    depends: Dependence = field(default_factory=Dependence)
    constants: GateConstants = field(default_factory=GateConstants)
    name: str = "problem"
    source: dict | None = None
    override_gate: bool = False

    def __post_init__(self):
        if min(self.n, self.d, self.k) < 1:
            raise ValueError("dimensions must be >= 1")
        if not self.T > 0:
            raise ValueError("horizon must be positive")
        if self.control_set.k != self.k:
            raise ValueError(f"control points have dimension {self.control_set.k}, expected {self.k}")

    @property
    def hash(self) -> str:
        doc = self.source if self.source is not None else {"name": self.name, "id": id(self)}
        blob = json.dumps(doc, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def replace(self, **changes) -> "ProblemSpec":
        kw = {f: getattr(self, f) for f in self.__dataclass_fields__}
        kw.update(changes)
        return ProblemSpec(**kw)

    def with_controls(self, control_set: ControlSet) -> "ProblemSpec":
        src = None if self.source is None else {**self.source, "control": {
            "points": control_set.points.tolist()}}
        return self.replace(control_set=control_set, source=src)


def zeros_like_batch(x: np.ndarray, d: int) -> tuple[np.ndarray, np.ndarray]:
    """Zero ``y`` and ``z`` matching the batch shape of ``x``."""
    batch = x.shape[:-1]
    return np.zeros(batch), np.zeros(batch + (d,))


# --------------------------------------------------------------- assumptions


@dataclass(frozen=True)
class AssumptionReport:
    c1: float
    Lambda: float
    L_bar: float
    Lambda_bar: float
    L_W: float
    smallness_ok: bool
    l3_ok: bool
    l3_terms: tuple
    constants_source: str
    monotonicity: dict | None = None

    def to_dict(self) -> dict:
        def clean(v):
            if isinstance(v, float) and not math.isfinite(v):
                return "inf"
            return v

        return {k: (clean(v) if not isinstance(v, tuple) else [clean(x) for x in v])
                for k, v in self.__dict__.items()}


def _validate_c2(constants: GateConstants, L_probe: float) -> None:
    grid = np.linspace(0.0, max(10.0, 4.0 * L_probe), 65)
    vals = np.array([constants.c2(L) for L in grid])
    if not np.all(np.isfinite(vals)) or np.any(vals <= 0):
        raise InvalidConstants("C2 must be positive and finite on [0, max(10, 4 L1)]")
    if np.any(np.diff(vals) < 0):
        raise InvalidConstants("C2 must be nondecreasing")
    if not (math.isfinite(constants.C4) and constants.C4 > 0):
        raise InvalidConstants("C4 must be positive and finite")


def check_standing_assumptions(spec: ProblemSpec, constants: GateConstants | None = None,
                               L_W: float | None = None) -> AssumptionReport:
    """Evaluate the smallness condition and the L3 condition for ``spec``.

    ``L_W`` defaults to ``sqrt(C2(L1)) / (1 - sqrt(Lambda))``; it is
    infinite when ``Lambda >= 1``.
    """
    constants = constants or spec.constants
    _validate_c2(constants, spec.L1)
    if L_W is not None and not (L_W >= 0):
        raise InvalidConstants("L_W must be nonnegative")
    T = spec.T
    c1 = max(spec.L2, spec.L3)
    scale = 8.0 * (1.0 + T * T) * c1 * c1
    Lambda = constants.c2(spec.L1) * scale
    if Lambda < 1.0:
        L_bar = max(spec.L1, math.sqrt(constants.c2(spec.L1)) / (1.0 - math.sqrt(Lambda)))
        Lambda_bar = constants.c2(L_bar) * scale
        default_LW = math.sqrt(constants.c2(spec.L1)) / (1.0 - math.sqrt(Lambda))
    else:
        L_bar = Lambda_bar = default_LW = math.inf
    if L_W is None:
        L_W = default_LW
    l3_lw = 0.0 if spec.L3 == 0 else spec.L3 * L_W
    l3_quartic = 8.0 * constants.C4 * spec.L3 ** 4
    return AssumptionReport(
        c1=c1, Lambda=Lambda, L_bar=L_bar, Lambda_bar=Lambda_bar, L_W=L_W,
        smallness_ok=bool(Lambda_bar < 1.0 and Lambda < 1.0),
        l3_ok=bool(l3_lw < 1.0 and l3_quartic < 1.0),
        l3_terms=(l3_lw, l3_quartic),
        constants_source=constants.source,
    )


def require_gate(spec: ProblemSpec, report: AssumptionReport | None = None,
                 override: bool | None = None, who: str = "solver") -> AssumptionReport:
    """Raise ``AssumptionGateError`` unless the smallness condition holds."""
    report = report or check_standing_assumptions(spec)
    override = spec.override_gate if override is None else override
    if not report.smallness_ok and not override:
        raise AssumptionGateError(
            f"{who} refused: smallness condition fails for {spec.name!r} "
            f"(Lambda={report.Lambda:.4g}, Lambda_bar={report.Lambda_bar:.4g}); "
            "set override_gate to run anyway")
    return report


@dataclass(frozen=True)
class MonotonicityConfig:
    G: np.ndarray
    beta1: float = 0.0
    beta2: float = 0.0
    mu1: float = 0.0

    def __post_init__(self):
        G = np.atleast_1d(np.asarray(self.G, dtype=float)).ravel()
        object.__setattr__(self, "G", G)
        if not np.any(G != 0):
            raise ValueError("G must be nonzero")
        if min(self.beta1, self.beta2, self.mu1) < 0:
            raise ValueError("beta1, beta2, mu1 must be nonnegative")
        if not self.beta1 + self.beta2 > 0 and not self.beta2 + self.mu1 > 0:
            raise ValueError("need beta1 + beta2 > 0 or beta2 + mu1 > 0")

    def validate_for(self, n: int) -> list[str]:
        issues = []
        if self.G.size != n:
            issues.append(f"G has {self.G.size} entries, expected {n}")
        if not self.beta1 + self.beta2 > 0:
            issues.append("beta1 + beta2 must be positive")
        if not self.beta2 + self.mu1 > 0:
            issues.append("beta2 + mu1 must be positive")
        if n > 1 and not self.beta2 > 0:
            issues.append("beta2 must be positive when n > 1")
        return issues


def _box_sample(sampler: qmc.Sobol, count: int, lo: float, hi: float) -> np.ndarray:
    return lo + (hi - lo) * sampler.random(count)


def check_monotonicity_sampled(spec: ProblemSpec, cfg: MonotonicityConfig, probes: int = 1000,
                               seed: int = 0, box: float = 2.0, tol: float = 1e-10) -> dict:
    """Sample the monotonicity inequalities on random probe pairs.

    The pairing uses ``A = (-G^T g, G b, G sigma)`` against
    ``(x - x', y - y', z - z')``; a violation is the amount by which the
    pairing exceeds ``-beta1 |G dx|^2 - beta2 (|G|^2 |dy|^2 + |G|^2 |dz|^2)``
    or by which ``<phi(x) - phi(x'), G dx> - mu1 |G dx|^2`` falls below 0.
    """
    if probes < 1:
        raise ValueError("probes must be >= 1")
    n, d = spec.n, spec.d
    rng = np.random.default_rng(seed)
    G = cfg.G
    dim = 2 * (n + 1 + d) + 1
    pts = rng.uniform(-box, box, size=(probes, dim))
    t = rng.uniform(0.0, spec.T, size=probes)
    x, xb = pts[:, :n], pts[:, n:2 * n]
    y, yb = pts[:, 2 * n], pts[:, 2 * n + 1]
    z, zb = pts[:, 2 * n + 2:2 * n + 2 + d], pts[:, 2 * n + 2 + d:2 * n + 2 + 2 * d]
    controls = spec.control_set.points[rng.integers(0, len(spec.control_set), probes)]
    worst = -np.inf
    for i in range(probes):
        ti, u = float(t[i]), controls[i]
        b1, b2 = spec.b(ti, x[i], y[i], z[i], u), spec.b(ti, xb[i], yb[i], zb[i], u)
        s1, s2 = spec.sigma(ti, x[i], y[i], z[i], u), spec.sigma(ti, xb[i], yb[i], zb[i], u)
        g1, g2 = spec.g(ti, x[i], y[i], z[i], u), spec.g(ti, xb[i], yb[i], zb[i], u)
        dx, dy, dz = x[i] - xb[i], y[i] - yb[i], z[i] - zb[i]
        pairing = (-(G * (g1 - g2)) @ dx + float(G @ (b1 - b2)) * dy
                   + float((G @ (s1 - s2)) @ dz))
        Gdx = float(G @ dx)
        bound = -cfg.beta1 * Gdx ** 2 - cfg.beta2 * float(G @ G) * (dy ** 2 + dz @ dz)
        terminal = float((spec.phi(x[i]) - spec.phi(xb[i])) * Gdx) - cfg.mu1 * Gdx ** 2
        worst = max(worst, float(pairing - bound), float(-terminal))
    return {"ok": bool(worst <= tol), "worst_violation": worst, "probes": probes,
            "issues": cfg.validate_for(n)}


# ---------------------------------------------------------------- probing


@dataclass(frozen=True)
class LipschitzReport:
    quotients: dict
    declared: dict
    growth_constant: float
    growth_declared: float
    warnings: tuple

    @property
    def ok(self) -> bool:
        return not self.warnings


def probe_lipschitz(spec: ProblemSpec, box: float = 2.0, probes: int = 10_000,
                    seed: int = 0, rel_tol: float = 1e-6) -> LipschitzReport:
    """Refute declared Lipschitz constants with quasi-random difference quotients.

    Probing cannot certify a constant, only contradict it, so violations are
    reported through ``warnings.warn`` and the returned report.
    """
    n, d = spec.n, spec.d
    dim = 2 * n + 2 + 2 * d + 1
    sampler = qmc.Sobol(dim, scramble=True, seed=seed)
    m = 1 << int(math.ceil(math.log2(max(probes, 2))))
    raw = _box_sample(sampler, m, -box, box)[:probes]
    x1, x2 = raw[:, :n], raw[:, n:2 * n]
    y1, y2 = raw[:, 2 * n], raw[:, 2 * n + 1]
    z1, z2 = raw[:, 2 * n + 2:2 * n + 2 + d], raw[:, 2 * n + 2 + d:2 * n + 2 + 2 * d]
    # coefficients take a scalar time, so probes share a handful of time values
    t_vals = np.linspace(0.0, spec.T, 9)
    t_idx = np.minimum(((raw[:, -1] + box) / (2 * box) * 9).astype(int), 8)
    groups = [np.flatnonzero(t_idx == j) for j in range(9)]
    rng = np.random.default_rng(seed)
    u = spec.control_set.points[rng.integers(0, len(spec.control_set), probes)]
    tiny = 1e-300

    def quot(f, a, c, da):
        diff = np.asarray(f(a)) - np.asarray(f(c))
        num = np.sqrt(np.sum(diff.reshape(probes, -1) ** 2, axis=1))
        return float(np.max(num / np.maximum(da, tiny)))

    def per_t(f):
        def ev(args):
            out = None
            for tv, idx in zip(t_vals, groups):
                if idx.size == 0:
                    continue
                r = np.asarray(f(float(tv), *(a[idx] for a in args), u[idx]))
                r = np.broadcast_to(r, (idx.size,) + r.shape[1:]) if r.ndim else np.full(idx.size, r)
                if out is None:
                    out = np.empty((probes,) + r.shape[1:])
                out[idx] = r
            return out
        return ev

    b, s, g = per_t(spec.b), per_t(spec.sigma), per_t(spec.g)
    dxn = np.linalg.norm(x1 - x2, axis=1)
    dyn = np.abs(y1 - y2)
    dzn = np.linalg.norm(z1 - z2, axis=1)
    q = {
        "b_x": quot(b, (x1, y1, z1), (x2, y1, z1), dxn),
        "b_yz": quot(b, (x1, y1, z1), (x1, y2, z2), dyn + dzn),
        "sigma_x": quot(s, (x1, y1, z1), (x2, y1, z1), dxn),
        "sigma_y": quot(s, (x1, y1, z1), (x1, y2, z1), dyn),
        "sigma_z": quot(s, (x1, y1, z1), (x1, y1, z2), dzn),
        "g_x": quot(g, (x1, y1, z1), (x2, y1, z1), dxn),
        "g_y": quot(g, (x1, y1, z1), (x1, y2, z1), dyn),
        "g_z": quot(g, (x1, y1, z1), (x1, y1, z2), dzn),
        "phi_x": float(np.max(np.abs(spec.phi(x1) - spec.phi(x2)) / np.maximum(dxn, tiny))),
    }
    declared = {"b_x": spec.L1, "b_yz": spec.L2, "sigma_x": spec.L1, "sigma_y": spec.L2,
                "sigma_z": spec.L3, "g_x": spec.L1, "g_y": spec.L1, "g_z": spec.L1,
                "phi_x": spec.L1}
    msgs = []
    for key, val in q.items():
        if val > declared[key] * (1 + rel_tol) + rel_tol:
            msgs.append(f"{spec.name}: sampled {key} quotient {val:.4g} exceeds declared "
                        f"{declared[key]:.4g}")

    # growth |psi| <= L (1 + |x| + |y| + |z|)
    zero_x = np.zeros((len(spec.control_set), n))
    zero_y = np.zeros(len(spec.control_set))
    zero_z = np.zeros((len(spec.control_set), d))
    ctrl = spec.control_set.points
    at_origin = 0.0
    for f in (spec.b, spec.sigma, spec.g):
        vals = np.asarray(f(0.0, zero_x, zero_y, zero_z, ctrl))
        at_origin = max(at_origin, float(np.max(np.abs(vals))) if vals.size else 0.0)
    at_origin = max(at_origin, float(np.abs(spec.phi(np.zeros(n)))))
    growth_declared = max(spec.L1, spec.L2, spec.L3) * math.sqrt(max(n, d)) + at_origin
    denom = 1 + np.linalg.norm(x1, axis=1) + np.abs(y1) + np.linalg.norm(z1, axis=1)
    growth = 0.0
    for vals in (b((x1, y1, z1)), s((x1, y1, z1)), g((x1, y1, z1)), spec.phi(x1)):
        mag = np.sqrt(np.sum(np.asarray(vals).reshape(probes, -1) ** 2, axis=1))
        growth = max(growth, float(np.max(mag / denom)))
    if growth > growth_declared * (1 + rel_tol) + rel_tol:
        msgs.append(f"{spec.name}: sampled growth constant {growth:.4g} exceeds "
                    f"{growth_declared:.4g}")
    for msg in msgs:
        warnings.warn(msg, stacklevel=2)
    return LipschitzReport(q, declared, growth, growth_declared, tuple(msgs))


# ------------------------------------------------------------- parallelism


def chunked_map(fn: Callable[[slice], Any], total: int, chunk: int = 16,
                threads: int = 1) -> list:
    """Apply ``fn`` to fixed-size slices of ``range(total)``.

    Chunk boundaries never depend on ``threads``, so results are identical
    for any worker count.
    """
    slices = [slice(i, min(i + chunk, total)) for i in range(0, total, chunk)]
    if threads <= 1 or len(slices) <= 1:
        return [fn(s) for s in slices]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, slices))


_THREADS = 1


def set_threads(count: int) -> None:
    global _THREADS
    _THREADS = max(1, int(count))


def get_threads() -> int:
    return _THREADS


def as_array(values: Sequence[float] | np.ndarray) -> np.ndarray:
    return np.asarray(values, dtype=float)
