"""Run configuration: one JSON document per run.

Top-level keys (all optional except ``problem``)::

    problem       problem document, or {"registry": name, ...overrides}
    grid          DPP / verification grid: {"dt", "dx", "lower", "upper"}
                  or {"N", "counts", "lower", "upper"}
    hjb           {"grid": {...}, "check_every": 1}
    ensemble      {"M", "seed", "basis_degree", "ridge", "picard_tol",
                   "picard_max", "substeps"}
    algebra       {"tol", "max_iter"}
    fbsde         {"x0", "steps", "policy", "export_paths"}
    value         {"max_exit_fraction", "chunk"}
    verify        {"check", "candidate", "t", "x", "m", "steps", "tol",
                   "lip_bound", "inner", "epsilon", "search_M", "policy"}
    monotonicity  {"G", "beta1", "beta2", "mu1", "probes", "box"}
    lipschitz     {"box", "probes"}
    bench         {"criteria", "scale"}
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .algebra import ALGEBRA_MAX_ITER, ALGEBRA_TOL
from .core import ProblemSpec, SpaceTimeGrid
from .errors import ConfigError
from .paths import EnsembleConfig
from .problems import problem_from_dict

ENSEMBLE_KEYS = {"M", "seed", "basis_degree", "ridge", "picard_tol", "picard_max", "substeps"}


@dataclass
class RunConfig:
    problem: ProblemSpec
    raw: dict[str, Any]
    ensemble: EnsembleConfig
    grid: SpaceTimeGrid | None = None
    hjb_grid: SpaceTimeGrid | None = None
    sections: dict[str, dict] = field(default_factory=dict)

    def section(self, name: str) -> dict:
        return self.sections.get(name, {})


def grid_from_dict(doc: dict, T: float, n: int) -> SpaceTimeGrid:
    try:
        lower = doc.get("lower", [-4.0] * n)
        upper = doc.get("upper", [4.0] * n)
        if "dt" in doc or "dx" in doc:
            grid = SpaceTimeGrid.from_spacing(T, float(doc["dt"]), lower, upper, doc["dx"],
                                              t_start=float(doc.get("t_start", 0.0)))
        else:
            grid = SpaceTimeGrid(T=T, N=int(doc["N"]), lower=lower, upper=upper,
                                 counts=doc["counts"], t_start=float(doc.get("t_start", 0.0)))
    except KeyError as exc:
        raise ConfigError(f"grid is missing {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad grid: {exc}") from exc
    if grid.n != n:
        raise ConfigError(f"grid has {grid.n} spatial axes, problem has n={n}")
    return grid


def ensemble_from_dict(doc: dict) -> EnsembleConfig:
    unknown = set(doc) - ENSEMBLE_KEYS
    if unknown:
        raise ConfigError(f"unknown ensemble keys {sorted(unknown)}")
    try:
        cfg = EnsembleConfig(**{k: (float(v) if k in ("ridge", "picard_tol") else int(v))
                                for k, v in doc.items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad ensemble settings: {exc}") from exc
    if cfg.M < 2 or cfg.picard_max < 1 or cfg.substeps < 1 or not cfg.picard_tol > 0:
        raise ConfigError("ensemble needs M >= 2, picard_max >= 1, substeps >= 1, picard_tol > 0")
    return cfg


def parse_run_config(doc: dict, seed_override: int | None = None) -> RunConfig:
    if not isinstance(doc, dict) or "problem" not in doc:
        raise ConfigError("run config must be a JSON object with a 'problem' key")
    spec = problem_from_dict(doc["problem"])
    ens_doc = dict(doc.get("ensemble", {}))
    alg = doc.get("algebra", {})
    ens = ensemble_from_dict(ens_doc).with_(
        algebra_tol=float(alg.get("tol", ALGEBRA_TOL)),
        algebra_max_iter=int(alg.get("max_iter", ALGEBRA_MAX_ITER)))
    if seed_override is not None:
        ens = ens.with_(seed=int(seed_override))
    grid = grid_from_dict(doc["grid"], spec.T, spec.n) if "grid" in doc else None
    hjb = doc.get("hjb", {})
    hjb_grid = grid_from_dict(hjb["grid"], spec.T, spec.n) if "grid" in hjb else grid
    sections = {k: v for k, v in doc.items() if isinstance(v, dict)}
    return RunConfig(spec, doc, ens, grid, hjb_grid, sections)


def load_document(path: str | Path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    return doc


def load_run_config(path: str | Path, seed_override: int | None = None) -> RunConfig:
    return parse_run_config(load_document(path), seed_override)
