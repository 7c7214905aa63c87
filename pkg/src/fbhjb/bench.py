"""Acceptance benchmarks.

Each criterion is a function of a :class:`Scale` and an optional output
directory; it returns a :class:`CriterionResult`.  ``FULL`` carries the
acceptance settings, ``QUICK`` much smaller ones for smoke runs and the
reproducibility check.
"""

from __future__ import annotations

import hashlib
import json
import math
import tempfile
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable

import numpy as np

from . import expr
from .algebra import solve_algebra
from .core import (ProblemSpec, SpaceTimeGrid, check_standing_assumptions,
                   get_threads, set_threads)
from .errors import AssumptionGateError, MaxPicard, NonContractive, PicardDiverged
from .fbsde import backward_semigroup, semigroup_on_nodes, slab_ensemble, solve_fully_coupled
from .hjb import residual, solve_hjb
from .paths import EnsembleConfig, export_trajectories_csv, generate_ensemble, uniform_times
from .problems import problem_from_dict, registry_problem
from .value import ValueField, compute_value_dpp, estimate_regularity, field_from_function
from .verify import mollify, pr_um_pipeline, uniqueness_check_frozen_sigma, uniqueness_check_full


@dataclass(frozen=True)
class Scale:
    name: str
    hjb_dx: float
    dpp_M: int
    dpp_dx: float
    dpp_N: int
    path_M: int
    check_M: int
    check_dx: float
    comparison_instances: int
    comparison_M: int
    fuzz_count: int
    burgers_ref_dx: float


FULL = Scale("full", hjb_dx=0.05, dpp_M=50_000, dpp_dx=0.05, dpp_N=20, path_M=50_000,
             check_M=20_000, check_dx=0.1, comparison_instances=200, comparison_M=2000,
             fuzz_count=100_000, burgers_ref_dx=0.025)
QUICK = Scale("quick", hjb_dx=0.1, dpp_M=2000, dpp_dx=0.2, dpp_N=10, path_M=2000,
              check_M=1000, check_dx=0.25, comparison_instances=10, comparison_M=500,
              fuzz_count=2000, burgers_ref_dx=0.05)
SCALES = {"full": FULL, "quick": QUICK}


@dataclass
class CriterionResult:
    id: int
    name: str
    passed: bool
    detail: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] criterion {self.id:2d}: {self.name} ({self.seconds:.1f} s)"

    def to_dict(self) -> dict:
        return {"id": self.id, "name": self.name, "passed": self.passed, "seconds": self.seconds,
                "detail": self.detail}


def _out(out: Path | None, name: str) -> Path | None:
    if out is None:
        return None
    out.mkdir(parents=True, exist_ok=True)
    return out / name


def _node(grid: SpaceTimeGrid, x: float) -> int:
    return int(np.argmin(np.abs(grid.axes[0] - x)))


def _timed(fn, *args, **kw):
    t0 = time.perf_counter()
    res = fn(*args, **kw)
    return res, time.perf_counter() - t0


# ------------------------------------------------------------- oracles


def cole_hopf_burgers(tau: float, x: float, nodes: int = 200, h: float = 1e-5) -> float:
    """``W = psi_x / psi`` with ``psi(tau, x) = E[sech(x + sqrt(tau) xi)]``.

    Solves ``W_t + W_xx / 2 + W W_x = 0`` with ``W(T) = -tanh`` at time
    ``T - tau`` by Gauss-Hermite quadrature of the heat semigroup.
    """
    z, w = np.polynomial.hermite_e.hermegauss(nodes)
    w = w / w.sum()

    def psi(s):
        return float(np.sum(w / np.cosh(s + math.sqrt(tau) * z)))

    return (psi(x + h) - psi(x - h)) / (2 * h) / psi(x)


# ------------------------------------------------------------ criteria


def c1_heat(scale: Scale, out: Path | None = None) -> CriterionResult:
    spec = registry_problem("heat")
    g_hjb = SpaceTimeGrid.from_spacing(1.0, scale.hjb_dx ** 2 / 2, -3, 3, scale.hjb_dx)
    f_hjb, t_hjb = _timed(solve_hjb, spec, g_hjb)
    w_hjb = float(f_hjb.values[0, _node(g_hjb, 0.0)])
    g_dpp = SpaceTimeGrid(T=1.0, N=scale.dpp_N, lower=[-4], upper=[4],
                          counts=[int(round(8 / scale.dpp_dx)) + 1])
    f_dpp, t_dpp = _timed(compute_value_dpp, spec, g_dpp, cfg=EnsembleConfig(M=scale.dpp_M, seed=0))
    w_dpp = float(f_dpp.values[0, _node(g_dpp, 0.0)])
    if out is not None:
        f_hjb.save(_out(out, "heat_hjb"))
        f_dpp.save(_out(out, "heat_dpp"))
        residual(f_hjb, spec).save_csv(_out(out, "heat_hjb_residual.csv"))
    ok = abs(w_hjb - 1) <= 1e-2 and abs(w_dpp - 1) <= 5e-2 and t_hjb <= 60 and t_dpp <= 60
    return CriterionResult(1, "heat benchmark (hjb 1e-2, dpp 5e-2)", ok, {
        "hjb_W00": w_hjb, "hjb_seconds": t_hjb, "dpp_W00": w_dpp, "dpp_seconds": t_dpp,
        "dpp_stderr": f_dpp.meta["max_stderr"]})


def c2_burgers(scale: Scale, out: Path | None = None) -> CriterionResult:
    t0 = time.perf_counter()
    spec = registry_problem("burgers")
    T = spec.T

    def hjb_at(dx):
        g = SpaceTimeGrid.from_spacing(T, dx ** 2 / 2, -4, 4, dx)
        return g, solve_hjb(spec, g)

    g, f = hjb_at(scale.hjb_dx)
    h = scale.burgers_ref_dx
    g1, f1 = hjb_at(h)
    g2, f2 = hjb_at(h / 2)
    detail: dict = {}
    ok = True
    for x in (0.0, 0.5):
        w = float(f.values[0, _node(g, x)])
        ref = 2 * float(f2.values[0, _node(g2, x)]) - float(f1.values[0, _node(g1, x)])
        ch = cole_hopf_burgers(T, x)
        detail[f"x={x}"] = {"hjb": w, "richardson_ref": ref, "cole_hopf": ch}
        ok &= abs(w - ref) <= 1e-2 and abs(ref - ch) <= 1e-2
    steps = 20
    ens = generate_ensemble(uniform_times(0, T, steps), scale.path_M, 1, seed=11)
    dt = T / steps
    for x in (0.0, 0.5):
        sol = solve_fully_coupled(spec, ens, [x], np.array([0.0]))
        ref = detail[f"x={x}"]["richardson_ref"]
        y0, se = float(sol.Y0[0]), float(sol.y0_stderr[0])
        detail[f"x={x}"].update({"fbsde_Y0": y0, "stderr": se, "picard_iters": sol.picard_iters})
        ok &= abs(y0 - ref) <= 3 * se + 2 * dt
        if out is not None and x == 0.5:
            f.save(_out(out, "burgers_hjb"))
            k = min(50, ens.M)
            export_trajectories_csv(_out(out, "burgers_paths.csv"), ens.t_nodes,
                                    sol.X[:, :, :k], sol.Y[:, :, :k], sol.Z[:, :, :k])
    secs = time.perf_counter() - t0
    detail["seconds"] = secs
    return CriterionResult(2, "coupled Burgers (hjb vs Richardson, fbsde vs PDE)",
                           bool(ok and secs <= 120), detail)


def _sigma_affine(a: float, c: float) -> ProblemSpec:
    doc = {"n": 1, "d": 1, "k": 1, "T": 1.0, "b": ["0"], "sigma": [[f"{a!r} + {c!r}*z1"]],
           "g": "0", "phi": "0", "L1": 1.0, "L2": 0.0, "L3": abs(c), "override_gate": True}
    return problem_from_dict(doc)


def c3_algebra(scale: Scale, out: Path | None = None) -> CriterionResult:
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(100):
        a, c = rng.uniform(-2, 2), rng.uniform(-2, 2)
        pc = rng.uniform(-0.8, 0.8)
        p = pc / c
        spec = _sigma_affine(a, c)
        V = float(solve_algebra(spec, 0.0, np.zeros(1), 0.0, np.array([p]), np.zeros(1)).V[0])
        worst = max(worst, abs(V - p * a / (1 - p * c)))
    raised = 0
    for q in (1.0, 1.5, 4.0):
        spec = _sigma_affine(1.0, 0.5)
        try:
            solve_algebra(spec, 0.0, np.zeros(1), 0.0, np.array([q / 0.5]), np.zeros(1))
        except NonContractive:
            raised += 1
    ok = worst <= 1e-12 and raised == 3
    return CriterionResult(3, "algebra closed form and contraction guard", ok,
                           {"max_error": worst, "noncontractive_raised": f"{raised}/3"})


def random_coupled_instance(rng: np.random.Generator) -> tuple[dict, str]:
    """A coupled problem inside the gate plus a nonnegative terminal bump."""
    T = float(rng.uniform(0.25, 1.0))
    ay, az = (float(v) for v in rng.uniform(-0.1, 0.1, 2))
    bx = float(rng.uniform(-1, 1))
    s0, s1 = float(rng.uniform(0.5, 1.5)), float(rng.uniform(-0.3, 0.3))
    g1, g2, g3 = (float(v) for v in rng.uniform(-0.5, 0.5, 3))
    p1, p2, p3 = float(rng.uniform(-1, 1)), float(rng.uniform(-1, 1)), float(rng.uniform(0.5, 2))
    hgt, ctr = float(rng.uniform(0, 0.5)), float(rng.uniform(-1, 1))
    doc = {
        "n": 1, "d": 1, "k": 1, "T": T,
        "b": [f"{ay!r}*y + {az!r}*z1 + {bx!r}*sin(x1)"],
        "sigma": [[f"{s0!r} + {s1!r}*cos(x1)"]],
        "g": f"{g1!r}*y + {g2!r}*z1 + {g3!r}*cos(x1)",
        "phi": f"{p1!r}*tanh(x1) + {p2!r}*sin({p3!r}*x1)",
        "L1": float(max(1.0, abs(bx), abs(s1), abs(g1) + abs(g2) + abs(g3), abs(p1) + abs(p2) * p3)),
        "L2": float(abs(ay) + abs(az)), "L3": 0.0,
    }
    bump = f"{hgt!r}*exp(-(x1 - {ctr!r})^2)"
    return doc, bump


def c4_comparison(scale: Scale, out: Path | None = None) -> CriterionResult:
    rng = np.random.default_rng(4)
    fails, worst, gated = [], np.inf, 0
    for i in range(scale.comparison_instances):
        doc, bump = random_coupled_instance(rng)
        low = problem_from_dict(doc)
        high = problem_from_dict({**doc, "phi": f"{doc['phi']} + {bump}"})
        gated += check_standing_assumptions(low).smallness_ok
        x0 = [float(rng.uniform(-1, 1))]
        ens = generate_ensemble(uniform_times(0, low.T, 10), scale.comparison_M, 1, seed=1000 + i)
        s_hi = solve_fully_coupled(high, ens, x0, np.array([0.0]))
        s_lo = solve_fully_coupled(low, ens, x0, np.array([0.0]))
        se = math.hypot(float(s_hi.y0_stderr[0]), float(s_lo.y0_stderr[0]))
        margin = (float(s_hi.Y0[0]) - float(s_lo.Y0[0])) / max(se, 1e-300)
        worst = min(worst, margin)
        if margin < -3:
            fails.append(i)
    n = scale.comparison_instances
    return CriterionResult(4, "comparison property on random coupled instances",
                           not fails and gated == n,
                           {"instances": n, "gated": gated, "failures": fails,
                            "worst_margin_in_stderr": worst})


def _tail_ratios(history: list[float]) -> list[float]:
    g = [v for v in history[1:]]
    return [b / a if a > 0 else 0.0 for a, b in zip(g, g[1:])] if len(g) > 1 else [0.0]


def c5_picard(scale: Scale, out: Path | None = None) -> CriterionResult:
    detail: dict = {}
    ok = True
    for name in ("heat", "weak_burgers", "drift_control"):
        spec = registry_problem(name)
        rep = check_standing_assumptions(spec)
        ens = generate_ensemble(uniform_times(0, spec.T, 20), min(scale.path_M, 20_000), 1, seed=5)
        sol = solve_fully_coupled(spec, ens, [0.5], spec.control_set.points[0])
        ratios = _tail_ratios(sol.gap_history)
        tail = ratios[-5:]
        good = rep.smallness_ok and max(tail) < 1
        ok &= good
        detail[name] = {"gated": rep.smallness_ok, "gap_history": sol.gap_history,
                        "tail_ratios": tail, "ok": good}
    bad = registry_problem("burgers", b=["3*y"], L2=3.0, override_gate=False)
    try:
        solve_fully_coupled(bad, generate_ensemble(uniform_times(0, bad.T, 20), 2000, 1, 5),
                            [0.5], np.array([0.0]))
        refused = "ran"
    except AssumptionGateError:
        refused = "gate"
    except (PicardDiverged, MaxPicard) as exc:
        refused = type(exc).__name__
    try:
        forced = solve_fully_coupled(bad, generate_ensemble(uniform_times(0, bad.T, 20), 2000, 1, 5),
                                     [0.5], np.array([0.0]), override_gate=True)
        forced_outcome = {"converged": True, "gap_history": forced.gap_history}
    except (PicardDiverged, MaxPicard) as exc:
        forced_outcome = {"converged": False, "error": type(exc).__name__,
                          "gap_history": exc.gap_history}
    detail["violating"] = {"Lambda": check_standing_assumptions(bad).Lambda, "outcome": refused,
                           "with_override": forced_outcome}
    ok &= refused in ("gate", "PicardDiverged")
    return CriterionResult(5, "Picard contraction and gate refusal", bool(ok), detail)


def c6_dpp_consistency(scale: Scale, out: Path | None = None) -> CriterionResult:
    spec = registry_problem("heat")
    cfg = EnsembleConfig(M=scale.dpp_M, seed=6)
    t, delta = 0.5, 0.25
    inner = SpaceTimeGrid(T=1.0, N=1, lower=[-5], upper=[5], counts=[201], t_start=t + delta)
    nodes = inner.nodes.reshape(-1, 1)
    ens_inner = slab_ensemble(t + delta, delta, 1, cfg, 1, salt=1)
    mid, _ = semigroup_on_nodes(spec, t + delta, nodes, np.zeros(1), delta, spec.phi, ens_inner, cfg)
    mid_field = ValueField(inner, np.stack([mid, spec.phi(nodes)]))

    def psi(X):
        return mid_field.slice_at(0, X)

    worst = 0.0
    detail = {}
    for x in (0.0, 0.5, 1.0):
        one = backward_semigroup(spec, t, [x], np.zeros(1), 2 * delta, spec.phi, cfg=cfg, steps=2)
        two = backward_semigroup(spec, t, [x], np.zeros(1), delta, psi,
                                 ensemble=slab_ensemble(t, delta, 1, cfg, 1, salt=2), cfg=cfg)
        rel = abs(one - two) / max(abs(one), 1e-12)
        worst = max(worst, rel)
        detail[f"x={x}"] = {"one_slab": one, "two_slab": two, "exact": x * x + 0.5, "rel": rel}
    detail["worst_rel"] = worst
    return CriterionResult(6, "one-slab vs two-slab semigroup", worst <= 5e-2, detail)


def c7_regularity(scale: Scale, out: Path | None = None) -> CriterionResult:
    spec = registry_problem("heat")
    counts = [int(round(8 / scale.check_dx)) + 1]
    res = {}
    for N in (20, 40):
        g = SpaceTimeGrid(T=1.0, N=N, lower=[-4], upper=[4], counts=counts)
        f = compute_value_dpp(spec, g, cfg=EnsembleConfig(M=scale.check_M, seed=7))
        res[N] = estimate_regularity(f, box=2.0)
        if out is not None:
            f.save(_out(out, f"heat_dpp_N{N}"))
    lip = res[20]["lip_x"]
    ratio = res[40]["holder_t"] / res[20]["holder_t"]
    ok = abs(lip - 4) <= 0.2 * 4 and all(math.isfinite(r["holder_t"]) for r in res.values()) \
        and 0.5 <= ratio <= 2
    return CriterionResult(7, "regularity of the heat value field", ok,
                           {"lip_x": lip, "holder_t": {str(k): v["holder_t"] for k, v in res.items()},
                            "holder_ratio": ratio})


def c8_pr_um(scale: Scale, out: Path | None = None) -> CriterionResult:
    spec = registry_problem("drift_control")
    counts = [int(round(8 / scale.check_dx)) + 1]
    g = SpaceTimeGrid(T=1.0, N=20, lower=[-4], upper=[4], counts=counts)
    cfg = EnsembleConfig(M=scale.check_M, seed=8)
    W = compute_value_dpp(spec, g, cfg=cfg)
    if out is not None:
        W.save(_out(out, "drift_dpp"))
    runs = {m: pr_um_pipeline(spec, W, 0.0, [0.0], m, cfg) for m in (2, 4, 8)}
    rho = [runs[m]["rho_m"] for m in (2, 4, 8)]
    noise = max(runs[m]["noise_floor"] for m in (2, 4, 8))
    mono = all(b <= a + 2 * noise for a, b in zip(rho, rho[1:]))
    imp = pr_um_pipeline(spec, W.shifted(1.0), 0.0, [0.0], 8, cfg)
    ok = mono and imp["initial_gap"] >= 0.9 and all(map(math.isfinite, rho))
    return CriterionResult(8, "slab-concatenated controls: rho_m decay, impostor rejected", ok,
                           {"rho": dict(zip((2, 4, 8), rho)), "noise_floor": noise,
                            "impostor_gap_m8": imp["initial_gap"],
                            "per_slab_gaps_m8": runs[8]["per_slab_gaps"]})


def c9_uniqueness(scale: Scale, out: Path | None = None) -> CriterionResult:
    cfg = EnsembleConfig(M=scale.check_M, seed=9)
    counts = [int(round(8 / scale.check_dx)) + 1]
    heat = registry_problem("heat")
    g = SpaceTimeGrid(T=1.0, N=20, lower=[-4], upper=[4], counts=counts)
    W = compute_value_dpp(heat, g, cfg=cfg)
    own = uniqueness_check_frozen_sigma(heat, W, cfg)
    shifted = uniqueness_check_frozen_sigma(heat, W.shifted(0.5), cfg)
    sz = registry_problem("sigma_z")
    cand = solve_hjb(sz, SpaceTimeGrid.from_spacing(sz.T, scale.hjb_dx ** 2 / 5, -4, 4, scale.hjb_dx))
    gs = SpaceTimeGrid(T=sz.T, N=10, lower=[-4], upper=[4], counts=counts)
    full = uniqueness_check_full(sz, cand, cfg, grid=gs)
    ok = own["verdict"] == "equal" and shifted["verdict"] == "inconsistent" \
        and full["verdict"] == "consistent"
    return CriterionResult(9, "uniqueness checks (equal / inconsistent / consistent)", ok, {
        "own_field": own["verdict"], "own_gaps": own["gaps"]["scaled_max"],
        "shifted": shifted["verdict"], "shifted_gap": shifted["gaps"]["candidate_minus_W"],
        "full": full["verdict"], "full_gaps": full["gaps"]["scaled_max"],
        "z_consistency_gap": full["z_consistency_gap"]})


def c10_mollifier(scale: Scale, out: Path | None = None) -> CriterionResult:
    g = SpaceTimeGrid.from_spacing(1.0, 0.01, -2, 2, 0.01)
    src = field_from_function(g, lambda t, x: np.abs(x[..., 0]) + 0.0 * t)
    errs = {}
    for eps in (0.2, 0.1, 0.05):
        m = mollify(src, eps)
        errs[eps] = float(np.max(np.abs(m.values - src.values)))
    ratios = [errs[0.1] / errs[0.2], errs[0.05] / errs[0.1]]
    ok = all(errs[e] <= 1.0 * e for e in errs) and all(0.4 <= r <= 0.6 for r in ratios)
    return CriterionResult(10, "mollifier error <= L eps, halving ratio", ok,
                           {"sup_error": {str(k): v for k, v in errs.items()}, "ratios": ratios})


def golden_cases() -> list[dict]:
    text = resources.files("fbhjb").joinpath("data/parser_golden.json").read_text()
    return json.loads(text)["cases"]


def run_golden(cases: list[dict]) -> list[str]:
    """Return descriptions of failing golden cases."""
    bad = []
    for c in cases:
        src = c["source"]
        try:
            e = expr.parse(src, c["dims"])
        except expr.ExprError as exc:
            if type(exc).__name__ != c.get("error") or exc.offset != c.get("offset"):
                bad.append(f"{src!r}: {type(exc).__name__}@{exc.offset}")
            continue
        if "error" in c:
            bad.append(f"{src!r}: parsed, expected {c['error']}")
            continue
        if "printed" in c and expr.to_source(e.ast) != c["printed"]:
            bad.append(f"{src!r}: printed {expr.to_source(e.ast)!r}")
        if expr.parse(expr.to_source(e.ast), c["dims"]).ast != e.ast:
            bad.append(f"{src!r}: round trip changed the tree")
        try:
            v = float(expr.evaluate(e, c["env"]))
        except expr.DomainError as exc:
            if c.get("eval_error") != "DomainError":
                bad.append(f"{src!r}: {exc}")
            continue
        if "eval_error" in c:
            bad.append(f"{src!r}: evaluated, expected {c['eval_error']}")
        elif not math.isclose(v, c["value"], rel_tol=1e-12, abs_tol=1e-12):
            bad.append(f"{src!r}: {v!r} != {c['value']!r}")
    return bad


FUZZ_ALPHABET = b"0123456789.eE+-*/^(),  xyzutsincoexplgqrhbamd12\t\n"


def fuzz_inputs(count: int, seed: int = 0, max_len: int = 256):
    """Random byte strings, half from a token-like alphabet, half arbitrary."""
    rng = np.random.default_rng(seed)
    alpha = np.frombuffer(FUZZ_ALPHABET, dtype=np.uint8)
    for i in range(count):
        n = int(rng.integers(0, max_len + 1))
        raw = rng.choice(alpha, n) if i % 2 == 0 else rng.integers(0, 256, n, dtype=np.uint8)
        yield bytes(raw)


def fuzz_parser(count: int, seed: int = 0) -> dict:
    dims = {"n": 2, "d": 2, "k": 2}
    env = {"t": 0.5, "x1": 0.3, "x2": -0.7, "y": 1.1, "z1": 0.2, "z2": -0.4, "u1": 2.0, "u2": -1.0}
    parsed = crashes = 0
    first_crash = None
    with np.errstate(all="ignore"):
        for raw in fuzz_inputs(count, seed):
            text = raw.decode("utf-8", errors="replace")
            try:
                e = expr.parse(text, dims)
                parsed += 1
                expr.evaluate(e, env)
            except expr.ExprError:
                pass
            except Exception as exc:  # noqa: BLE001 - anything else is a crash
                crashes += 1
                first_crash = first_crash or f"{raw!r}: {type(exc).__name__}: {exc}"
    return {"inputs": count, "parsed": parsed, "crashes": crashes, "first_crash": first_crash}


def c11_parser(scale: Scale, out: Path | None = None) -> CriterionResult:
    cases = golden_cases()
    bad = run_golden(cases)
    fz = fuzz_parser(scale.fuzz_count)
    ok = len(cases) >= 30 and not bad and fz["crashes"] == 0
    return CriterionResult(11, "parser golden file and fuzz", ok,
                           {"golden_cases": len(cases), "golden_failures": bad, "fuzz": fz})


ARTIFACT_CRITERIA = (1, 2, 7, 8)


def artifact_digest(out: Path) -> dict[str, str]:
    return {str(p.relative_to(out)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(out.rglob("*.csv"))}


def c12_determinism(scale: Scale, out: Path | None = None) -> CriterionResult:
    """Artifact-producing criteria at QUICK scale, rerun and across thread counts."""
    digests = []
    before = get_threads()
    try:
        with tempfile.TemporaryDirectory() as tmp:
            for k, threads in enumerate((1, 1, 8)):
                set_threads(threads)
                d = Path(tmp) / f"run{k}"
                for cid in ARTIFACT_CRITERIA:
                    CRITERIA[cid][1](QUICK, d / f"c{cid}")
                digests.append(artifact_digest(d))
    finally:
        set_threads(before)
    same = digests[0] == digests[1] == digests[2] and len(digests[0]) > 0
    return CriterionResult(12, "byte-identical CSV artifacts (rerun, 1 vs 8 threads)", same,
                           {"files": len(digests[0]),
                            "differing": sorted(k for k in digests[0]
                                                if not (digests[0][k] == digests[1].get(k)
                                                        == digests[2].get(k)))})


CRITERIA: dict[int, tuple[str, Callable[..., CriterionResult]]] = {
    1: ("heat", c1_heat), 2: ("burgers", c2_burgers), 3: ("algebra", c3_algebra),
    4: ("comparison", c4_comparison), 5: ("picard", c5_picard), 6: ("dpp", c6_dpp_consistency),
    7: ("regularity", c7_regularity), 8: ("pr_um", c8_pr_um), 9: ("uniqueness", c9_uniqueness),
    10: ("mollifier", c10_mollifier), 11: ("parser", c11_parser), 12: ("determinism", c12_determinism),
}


def run_criterion(cid: int, scale: Scale = FULL, out: Path | None = None) -> CriterionResult:
    t0 = time.perf_counter()
    res = CRITERIA[cid][1](scale, None if out is None else out / f"c{cid}")
    res.seconds = time.perf_counter() - t0
    return res


def run_bench(criteria=None, scale: Scale = FULL, out: Path | None = None,
              echo: Callable[[str], None] | None = print) -> list[CriterionResult]:
    results = []
    for cid in criteria or sorted(CRITERIA):
        res = run_criterion(int(cid), scale, out)
        if echo:
            echo(res.line())
        results.append(res)
    return results
