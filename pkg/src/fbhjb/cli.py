"""Command line front end.

    fbhjb <command> --config <path> --out <dir> [--seed-override N] [--threads N]

Commands: check, solve-hjb, value-dpp, solve-fbsde, verify, bench.  Every
command writes ``report.json`` (``"schema": 1``) into ``--out`` together
with its CSV artifacts.

Exit codes: 0 success, 1 a bench criterion failed, 2 assumption gate
failure, 3 solver error, 4 config error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from pathlib import Path
from typing import Any

import numpy as np

from .config import RunConfig, load_document, parse_run_config
from .core import (MonotonicityConfig, check_monotonicity_sampled, check_standing_assumptions,
                   probe_lipschitz, set_threads)
from .errors import AssumptionGateError, ConfigError, FbhjbError, InvalidConstants, SolverError
from .fbsde import solve_fully_coupled
from .hjb import residual, solve_hjb
from .paths import PolynomialBasis, export_trajectories_csv, generate_ensemble, uniform_times
from .value import ValueField, compute_value_dpp
from .verify import (LIP_BOUND, UNIQUENESS_TOL, ito_residual, mollify, pr_um_pipeline,
                     uniqueness_check_frozen_sigma, uniqueness_check_full)

SCHEMA = 1
COMMANDS = ("check", "solve-hjb", "value-dpp", "solve-fbsde", "verify", "bench")
MODULE_OF = {"check": "core", "solve-hjb": "hjb", "value-dpp": "value", "solve-fbsde": "fbsde",
             "verify": "verify", "bench": "bench"}


def _clean(obj: Any) -> Any:
    """Make ``obj`` strict-JSON serialisable (non-finite floats become strings)."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else "nan")
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_report(out: Path, command: str, result: dict, run: RunConfig | None = None,
                 status: str = "ok") -> Path:
    doc = {"schema": SCHEMA, "command": command, "status": status, "result": result}
    if run is not None:
        doc["problem"] = run.problem.name
        doc["problem_hash"] = run.problem.hash
        doc["seed"] = run.ensemble.seed
    path = out / "report.json"
    path.write_text(json.dumps(_clean(doc), indent=2, sort_keys=True) + "\n")
    return path


def _need_grid(run: RunConfig, which: str):
    grid = run.hjb_grid if which == "hjb" else run.grid
    if grid is None:
        raise ConfigError(f"config needs a {'hjb.grid or ' if which == 'hjb' else ''}grid section")
    return grid


def _algebra(run: RunConfig) -> dict:
    return {"algebra_tol": run.ensemble.algebra_tol, "algebra_max_iter": run.ensemble.algebra_max_iter}


def _policy(run: RunConfig, section: dict) -> np.ndarray:
    pol = section.get("policy")
    if pol is None:
        return run.problem.control_set.points[0]
    arr = np.atleast_1d(np.asarray(pol, dtype=float))
    if arr.shape != (run.problem.k,):
        raise ConfigError(f"policy must have {run.problem.k} entries")
    return arr


def _points(raw, n: int, name: str) -> np.ndarray:
    arr = np.asarray(raw, dtype=float)
    arr = arr.reshape(1, n) if arr.ndim <= 1 else arr
    if arr.shape[-1] != n:
        raise ConfigError(f"{name} must have {n} coordinates per point")
    return arr


# ---------------------------------------------------------------- commands


def cmd_check(run: RunConfig, out: Path) -> tuple[int, dict]:
    chk = run.section("check")
    report = check_standing_assumptions(run.problem, L_W=chk.get("L_W"))
    result: dict = {"assumptions": report.to_dict(),
                    "dependence": run.problem.depends.__dict__,
                    "override_gate": run.problem.override_gate}
    mono = run.section("monotonicity")
    if mono:
        try:
            mcfg = MonotonicityConfig(G=mono["G"], beta1=float(mono.get("beta1", 0.0)),
                                      beta2=float(mono.get("beta2", 0.0)),
                                      mu1=float(mono.get("mu1", 0.0)))
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"monotonicity: {exc}") from exc
        result["monotonicity"] = check_monotonicity_sampled(
            run.problem, mcfg, probes=int(mono.get("probes", 1000)), seed=run.ensemble.seed,
            box=float(mono.get("box", 2.0)))
    lip = run.section("lipschitz")
    if lip:
        rep = probe_lipschitz(run.problem, box=float(lip.get("box", 2.0)),
                              probes=int(lip.get("probes", 10_000)), seed=run.ensemble.seed)
        result["lipschitz"] = {"ok": rep.ok, "quotients": rep.quotients, "declared": rep.declared,
                               "growth_constant": rep.growth_constant,
                               "growth_declared": rep.growth_declared,
                               "warnings": list(rep.warnings)}
    # the gate is the smallness condition; monotonicity is reported only
    return (0 if report.smallness_ok else 2), result


def _field_summary(field: ValueField) -> dict:
    W0 = field.values[0]
    return {"W_t0_min": float(np.min(W0)), "W_t0_max": float(np.max(W0)),
            "grid": field.grid.to_dict()}


def cmd_solve_hjb(run: RunConfig, out: Path) -> tuple[int, dict]:
    grid = _need_grid(run, "hjb")
    hjb = run.section("hjb")
    field = solve_hjb(run.problem, grid, check_every=int(hjb.get("check_every", 1)), **_algebra(run))
    field.save(out / "value_field")
    res = residual(field, run.problem, **_algebra(run))
    res.save_csv(out / "residual.csv")
    return 0, {**_field_summary(field), "residual": res.summary()}


def cmd_value_dpp(run: RunConfig, out: Path) -> tuple[int, dict]:
    grid = _need_grid(run, "dpp")
    val = run.section("value")
    field = compute_value_dpp(run.problem, grid, cfg=run.ensemble,
                              max_exit_fraction=float(val.get("max_exit_fraction", 0.25)),
                              chunk=int(val.get("chunk", 16)))
    field.save(out / "value_field")
    return 0, {**_field_summary(field), "max_stderr": field.meta.get("max_stderr")}


def cmd_solve_fbsde(run: RunConfig, out: Path) -> tuple[int, dict]:
    sec = run.section("fbsde")
    spec, cfg = run.problem, run.ensemble
    x0 = _points(sec.get("x0", [0.0] * spec.n), spec.n, "fbsde.x0")
    steps = int(sec.get("steps", 20))
    ens = generate_ensemble(uniform_times(0.0, spec.T, steps), cfg.M, spec.d, cfg.seed)
    sol = solve_fully_coupled(spec, ens, x0, _policy(run, sec), tol=cfg.picard_tol,
                              max_picard=cfg.picard_max, ridge=cfg.ridge,
                              basis=PolynomialBasis(cfg.basis_degree))
    keep = min(int(sec.get("export_paths", 20)), cfg.M)
    for b in range(x0.shape[0]):
        export_trajectories_csv(out / f"paths_{b}.csv", ens.t_nodes, sol.X[:, :, :keep],
                                sol.Y[:, :, :keep], sol.Z[:, :, :keep], group=b)
    return 0, {"x0": x0, **sol.report()}


def _candidate(run: RunConfig, sec: dict) -> ValueField:
    cand = sec.get("candidate", {"from": "hjb"})
    src = cand.get("from", "hjb")
    if src == "hjb":
        field = solve_hjb(run.problem, _need_grid(run, "hjb"), **_algebra(run))
    elif src == "dpp":
        field = compute_value_dpp(run.problem, _need_grid(run, "dpp"),
                                  cfg=run.ensemble.with_(seed=run.ensemble.seed + 1))
    elif src == "file":
        if "path" not in cand:
            raise ConfigError("verify.candidate.path is required for from=file")
        field = ValueField.load(cand["path"])
    else:
        raise ConfigError(f"verify.candidate.from must be hjb, dpp or file, not {src!r}")
    shift = float(cand.get("shift", 0.0))
    return field.shifted(shift) if shift else field


def cmd_verify(run: RunConfig, out: Path) -> tuple[int, dict]:
    sec = run.section("verify")
    check = sec.get("check")
    spec, cfg = run.problem, run.ensemble
    tol = float(sec.get("tol", UNIQUENESS_TOL))
    lip = float(sec.get("lip_bound", LIP_BOUND))
    inner = float(sec.get("inner", 0.5))
    if check not in ("pr-um", "frozen-sigma", "full", "ito"):
        raise ConfigError("verify.check must be one of pr-um, frozen-sigma, full, ito")
    cand = _candidate(run, sec)
    cand.save(out / "candidate")
    if check == "pr-um":
        x = _points(sec.get("x", [0.0] * spec.n), spec.n, "verify.x")[0]
        result = pr_um_pipeline(spec, cand, float(sec.get("t", 0.0)), x, int(sec.get("m", 4)), cfg,
                                steps=int(sec.get("steps", 16)),
                                search_M=int(sec.get("search_M", 5000)))
    elif check == "frozen-sigma":
        result = uniqueness_check_frozen_sigma(spec, cand, cfg, grid=run.grid, tol=tol,
                                               lip_bound=lip, inner=inner)
    elif check == "full":
        eps = sec.get("epsilon")
        result = uniqueness_check_full(spec, cand, cfg, grid=run.grid,
                                       epsilon=None if eps is None else float(eps), tol=tol,
                                       lip_bound=lip, inner=inner,
                                       z_check_steps=int(sec.get("steps", 10)))
    else:
        x = _points(sec.get("x", [0.0] * spec.n), spec.n, "verify.x")[0]
        g = cand.grid
        eps = float(sec.get("epsilon", 4 * max(g.dx)))
        smooth = mollify(cand, eps, max(eps, 4 * g.dt))
        result = ito_residual(spec, smooth, float(sec.get("t", 0.0)), x, _policy(run, sec), cfg,
                              steps=int(sec.get("steps", 20)))
    return 0, {"check": check, **result}


def cmd_bench(doc: dict, out: Path) -> tuple[int, dict]:
    from .bench import SCALES, run_bench

    sec = doc.get("bench", {})
    scale = sec.get("scale", "full")
    if scale not in SCALES:
        raise ConfigError(f"bench.scale must be one of {sorted(SCALES)}")
    criteria = sec.get("criteria")
    results = run_bench(criteria, SCALES[scale], out)
    print(f"{sum(r.passed for r in results)}/{len(results)} criteria passed")
    return (0 if all(r.passed for r in results) else 1), {
        "scale": scale, "criteria": [r.to_dict() for r in results]}


HANDLERS = {"check": cmd_check, "solve-hjb": cmd_solve_hjb, "value-dpp": cmd_value_dpp,
            "solve-fbsde": cmd_solve_fbsde, "verify": cmd_verify}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fbhjb", description=__doc__.split("\n\n")[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="run configuration (JSON)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed-override", type=int, default=None)
    p.add_argument("--threads", type=int, default=1)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out)
    module = MODULE_OF[args.command]
    set_threads(args.threads)
    run = None
    t0 = time.perf_counter()
    try:
        out.mkdir(parents=True, exist_ok=True)
        doc = load_document(args.config)
        if args.command == "bench":
            code, result = cmd_bench(doc, out)
        else:
            run = parse_run_config(doc, args.seed_override)
            code, result = HANDLERS[args.command](run, out)
    except AssumptionGateError as exc:
        code, err = 2, exc
    except SolverError as exc:
        code, err = 3, exc
    except (ConfigError, InvalidConstants, ValueError, FbhjbError, OSError) as exc:
        code, err = 4, exc
    else:
        result["seconds"] = time.perf_counter() - t0
        write_report(out, args.command, result, run, "ok" if code == 0 else "failed")
        return code
    msg = f"fbhjb {args.command} [{module}]: {type(err).__name__}: {err}"
    print(msg, file=sys.stderr)
    info = {"error": type(err).__name__, "message": str(err), "module": module}
    for attr in ("bound", "q", "gap_history", "index"):
        if getattr(err, attr, None) is not None:
            info[attr] = getattr(err, attr)
    if out.is_dir():
        write_report(out, args.command, info, run, "error")
    return code


if __name__ == "__main__":
    sys.exit(main())
