"""JSON problem documents and the built-in registry of benchmark problems."""

from __future__ import annotations

import copy
import json
from pathlib import Path
from typing import Any

import numpy as np

from .core import ControlSet, Dependence, GateConstants, ProblemSpec
from .errors import ConfigError
from .expr import ExprError, Expression, parse

REGISTRY: dict[str, dict[str, Any]] = {
    # closed form x^2 + (T - t)
    "heat": {
        "n": 1, "d": 1, "k": 1, "T": 1.0,
        "b": ["0"], "sigma": [["1"]], "g": "0", "phi": "x1^2",
        "L1": 4.0, "L2": 0.0, "L3": 0.0,
        "control": {"points": [[0.0]]},
    },
    "burgers": {
        "n": 1, "d": 1, "k": 1, "T": 0.5,
        "b": ["y"], "sigma": [["1"]], "g": "0", "phi": "-tanh(x1)",
        "L1": 1.0, "L2": 1.0, "L3": 0.0,
        "control": {"points": [[0.0]]},
        "override_gate": True,
    },
    "weak_burgers": {
        "n": 1, "d": 1, "k": 1, "T": 0.5,
        "b": ["0.2*y"], "sigma": [["1"]], "g": "0", "phi": "-tanh(x1)",
        "L1": 1.0, "L2": 0.2, "L3": 0.0,
        "control": {"points": [[0.0]]},
    },
    "drift_control": {
        "n": 1, "d": 1, "k": 1, "T": 1.0,
        "b": ["u1"], "sigma": [["1"]], "g": "0", "phi": "x1^2",
        "L1": 4.0, "L2": 0.0, "L3": 0.0,
        "control": {"uniform": {"low": -1.0, "high": 1.0, "count": 3}},
    },
    "sigma_z": {
        "n": 1, "d": 1, "k": 1, "T": 0.5,
        "b": ["0.2*y"], "sigma": [["1 + 0.5*z1"]], "g": "0", "phi": "sin(x1)",
        "L1": 1.0, "L2": 0.2, "L3": 0.5,
        "control": {"points": [[0.0]]},
        "override_gate": True,
    },
}


def _parse_all(items, dims, where: str) -> list[Expression]:
    out = []
    for i, src in enumerate(items):
        if isinstance(src, (int, float)):
            src = repr(float(src))
        if not isinstance(src, str):
            raise ConfigError(f"{where}[{i}] must be an expression string")
        try:
            out.append(parse(src, dims))
        except ExprError as exc:
            raise ConfigError(f"{where}[{i}]: {exc}") from exc
    return out


def _env(exprs, t, x, y, z, u) -> dict:
    names = set().union(*(e.variables for e in exprs))
    env: dict[str, Any] = {"t": t}
    if "y" in names:
        env["y"] = y
    for nm in names:
        if nm[0] in "xzu" and nm[1:].isdigit():
            src = {"x": x, "z": z, "u": u}[nm[0]]
            env[nm] = src[..., int(nm[1:]) - 1]
    return env


def _batch_shape(x, y, z, u) -> tuple:
    return np.broadcast_shapes(np.shape(x)[:-1], np.shape(y), np.shape(z)[:-1], np.shape(u)[:-1])


def _vector_fn(exprs: list[Expression], out_shape: tuple):
    def fn(t, x, y, z, u):
        x, z, u = np.asarray(x, float), np.asarray(z, float), np.asarray(u, float)
        batch = _batch_shape(x, y, z, u)
        env = _env(exprs, t, x, y, z, u)
        vals = [np.broadcast_to(e.evaluate(env), batch) for e in exprs]
        return np.stack(vals, axis=-1).reshape(batch + out_shape)

    return fn


def _scalar_fn(expr: Expression):
    def fn(t, x, y, z, u):
        x, z, u = np.asarray(x, float), np.asarray(z, float), np.asarray(u, float)
        batch = _batch_shape(x, y, z, u)
        return np.array(np.broadcast_to(expr.evaluate(_env([expr], t, x, y, z, u)), batch),
                        dtype=float)

    return fn


def _terminal_fn(expr: Expression):
    def fn(x):
        x = np.asarray(x, float)
        env = _env([expr], 0.0, x, 0.0, x[..., :0], x[..., :0])
        return np.array(np.broadcast_to(expr.evaluate(env), x.shape[:-1]), dtype=float)

    return fn


def _control_set(doc, k: int) -> ControlSet:
    ctrl = doc.get("control", {"points": [[0.0] * k]})
    if "points" in ctrl:
        return ControlSet(np.asarray(ctrl["points"], dtype=float).reshape(-1, k))
    if "uniform" in ctrl:
        spec = ctrl["uniform"]
        return ControlSet.uniform(spec["low"], spec["high"], spec["count"], k=k)
    raise ConfigError("control must give 'points' or 'uniform'")


def _constants(doc) -> GateConstants:
    c = doc.get("constants")
    if not c:
        return GateConstants()
    C2 = c.get("C2", 1.0)
    if isinstance(C2, list):
        pts = np.asarray(C2, dtype=float)
        C2 = lambda L, _p=pts: float(np.interp(L, _p[:, 0], _p[:, 1]))  # noqa: E731
    return GateConstants(C2=C2, C4=float(c.get("C4", 1.0)), source=c.get("source", "user"))


def problem_from_dict(doc: dict[str, Any]) -> ProblemSpec:
    """Build a :class:`ProblemSpec` from a problem document.

    A ``"registry"`` key names a built-in problem; any other keys override
    its fields.
    """
    doc = copy.deepcopy(doc)
    if "registry" in doc:
        name = doc.pop("registry")
        if name not in REGISTRY:
            raise ConfigError(f"unknown registry problem {name!r}; known: {sorted(REGISTRY)}")
        base = copy.deepcopy(REGISTRY[name])
        base["name"] = name
        base.update(doc)
        doc = base
    try:
        n, d, k = int(doc["n"]), int(doc["d"]), int(doc.get("k", 1))
        T = float(doc["T"])
        b_src, s_src, g_src, phi_src = doc["b"], doc["sigma"], doc["g"], doc["phi"]
    except KeyError as exc:
        raise ConfigError(f"problem document is missing {exc.args[0]!r}") from None
    dims = {"n": n, "d": d, "k": k}
    if not isinstance(b_src, list) or len(b_src) != n:
        raise ConfigError(f"'b' must be a list of {n} expressions")
    if (not isinstance(s_src, list) or len(s_src) != n
            or any(not isinstance(r, list) or len(r) != d for r in s_src)):
        raise ConfigError(f"'sigma' must be an {n}x{d} array of expressions")
    b_ex = _parse_all(b_src, dims, "b")
    s_ex = _parse_all([c for row in s_src for c in row], dims, "sigma")
    g_ex = _parse_all([g_src], dims, "g")[0]
    phi_ex = _parse_all([phi_src], {"n": n, "d": 0, "k": 0}, "phi")[0]
    if phi_ex.variables - {f"x{i + 1}" for i in range(n)}:
        raise ConfigError("'phi' may only depend on x1..xn")

    def uses(exprs, prefix):
        return any(v == prefix or (v[0] == prefix and v[1:].isdigit() and prefix != "y")
                   for e in exprs for v in e.variables)

    deps = Dependence(
        b_y=uses(b_ex, "y"), b_z=uses(b_ex, "z"),
        sigma_y=uses(s_ex, "y"), sigma_z=uses(s_ex, "z"),
        g_y=uses([g_ex], "y"), g_z=uses([g_ex], "z"),
        controlled=uses(b_ex + s_ex + [g_ex], "u"),
    )
    try:
        controls = _control_set(doc, k)
        return ProblemSpec(
            n=n, d=d, k=k, T=T,
            b=_vector_fn(b_ex, (n,)), sigma=_vector_fn(s_ex, (n, d)), g=_scalar_fn(g_ex),
            phi=_terminal_fn(phi_ex),
            L1=float(doc.get("L1", 1.0)), L2=float(doc.get("L2", 0.0)),
            L3=float(doc.get("L3", 0.0)),
            control_set=controls, depends=deps, constants=_constants(doc),
            name=str(doc.get("name", "problem")), source=doc,
            override_gate=bool(doc.get("override_gate", False)),
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def registry_problem(name: str, **overrides) -> ProblemSpec:
    return problem_from_dict({"registry": name, **overrides})


def load_problem(path: str | Path) -> ProblemSpec:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read problem {path}: {exc}") from exc
    return problem_from_dict(doc.get("problem", doc))
