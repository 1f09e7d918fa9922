"""Declarative problem files: parsing, validation and canonicalization.

A problem file is a single self-contained JSON document (matrices as
row-major nested lists, purely numeric). Validation errors carry the dotted
field path; JSON syntax errors carry the line and column. The canonical form
has every default materialized, so its hash changes exactly when a
semantically meaningful field changes.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .abstraction import BuildParams, ControlProblem
from .dynamics import Polynomial, PolynomialSystem
from .geometry import Ellipsoid, Hyperrectangle, InputSet, VPolytope
from .synthesis import StageCost, factor_stage_cost
from .tolerances import DEFAULT_TOL, Tolerances, with_overrides

__all__ = ["Problem", "ProblemError", "SingleTransition", "config_hash", "load_problem",
           "parse_problem"]


class ProblemError(ValueError):
    """A problem file failed validation; the message names the field."""


_DEFAULTS = {
    "lambda": 0.01,
    "lambda_improve": None,
    "rewire_k": 3,
    "p_goal": 0.2,
    "max_iters": 500,
    "improve_budget": 0,
    "seed": 0,
    "input_anchor": None,
    "trajectories": 5,
    "trajectory_noise": "uniform",
    "grid_res": 41,
    "max_steps": None,
    "tolerances": {},
    "obstacles": [],
    "transition": None,
}


@dataclass(frozen=True)
class SingleTransition:
    """Candidate center and target cell for a one-transition study."""

    center: np.ndarray
    target: Ellipsoid


@dataclass(frozen=True)
class Problem:
    name: str
    control: ControlProblem
    params: BuildParams
    tol: Tolerances
    transition: SingleTransition | None
    trajectories: int
    trajectory_noise: str
    grid_res: int
    max_steps: int | None
    canonical: dict


def _fail(path: str, msg: str):
    raise ProblemError(f"{path}: {msg}")


def _get(d: dict, key: str, path: str, required: bool = True, default=None):
    if key not in d:
        if required:
            _fail(f"{path}.{key}" if path else key, "required field is missing")
        return default
    return d[key]


def _number(val, path: str, lo=None, hi=None) -> float:
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        _fail(path, f"expected a number, got {type(val).__name__}")
    v = float(val)
    if lo is not None and v < lo:
        _fail(path, f"must be >= {lo}, got {v}")
    if hi is not None and v > hi:
        _fail(path, f"must be <= {hi}, got {v}")
    return v


def _integer(val, path: str, lo=None) -> int:
    if isinstance(val, bool) or not isinstance(val, int):
        _fail(path, f"expected an integer, got {type(val).__name__}")
    if lo is not None and val < lo:
        _fail(path, f"must be >= {lo}, got {val}")
    return val


def _vector(val, n: int, path: str) -> np.ndarray:
    if not isinstance(val, list) or len(val) != n:
        _fail(path, f"expected a list of {n} numbers")
    return np.array([_number(v, f"{path}[{i}]") for i, v in enumerate(val)])


def _matrix(val, path: str, rows=None, cols=None) -> np.ndarray:
    if not isinstance(val, list) or not val or not all(isinstance(r, list) for r in val):
        _fail(path, "expected a non-empty list of rows")
    width = len(val[0])
    if any(len(r) != width for r in val):
        _fail(path, "rows have inconsistent lengths")
    if rows is not None and len(val) != rows:
        _fail(path, f"expected {rows} rows, got {len(val)}")
    if cols is not None and width != cols:
        _fail(path, f"expected {cols} columns, got {width}")
    return np.array([[_number(v, f"{path}[{i}][{j}]") for j, v in enumerate(r)]
                     for i, r in enumerate(val)])


def _box(val, n: int, path: str, positive: bool = False) -> Hyperrectangle:
    if not isinstance(val, dict):
        _fail(path, "expected an object with 'center' and 'half_lengths'")
    center = _vector(_get(val, "center", path), n, f"{path}.center")
    half = _vector(_get(val, "half_lengths", path), n, f"{path}.half_lengths")
    if np.any(half < 0.0) or (positive and np.any(half <= 0.0)):
        _fail(f"{path}.half_lengths", "must be positive")
    extra = set(val) - {"center", "half_lengths"}
    if extra:
        _fail(path, f"unknown field(s) {sorted(extra)}")
    return Hyperrectangle(center, half)


def _poly(val, dims: tuple, path: str) -> Polynomial:
    n_x, n_u, n_w = dims
    if not isinstance(val, list):
        _fail(path, "expected a list of term records")
    terms = []
    for t, rec in enumerate(val):
        tp = f"{path}[{t}]"
        if not isinstance(rec, dict):
            _fail(tp, "expected an object with coeff and exponent lists")
        extra = set(rec) - {"coeff", "x_exp", "u_exp", "w_exp"}
        if extra:
            _fail(tp, f"unknown field(s) {sorted(extra)}")
        coeff = _number(_get(rec, "coeff", tp), f"{tp}.coeff")
        exps = []
        for key, n in (("x_exp", n_x), ("u_exp", n_u), ("w_exp", n_w)):
            raw = _get(rec, key, tp, required=False, default=[0] * n)
            if not isinstance(raw, list) or len(raw) != n:
                _fail(f"{tp}.{key}", f"expected a list of {n} integers")
            exps.extend(_integer(e, f"{tp}.{key}[{i}]", lo=0) for i, e in enumerate(raw))
        terms.append((coeff, exps))
    return Polynomial.from_terms(n_x + n_u + n_w, terms)


def parse_problem(doc: dict, name: str = "problem") -> Problem:
    if not isinstance(doc, dict):
        raise ProblemError("top level: expected a JSON object")
    known = {"name", "dimensions", "dynamics", "domain", "input_constraints",
             "noise_vertices", "cost_matrix", "spec", "transition", "lambda",
             "lambda_improve", "rewire_k", "p_goal", "max_iters", "improve_budget",
             "seed", "input_anchor", "trajectories", "trajectory_noise", "grid_res",
             "max_steps", "tolerances"}
    extra = set(doc) - known
    if extra:
        _fail("top level", f"unknown field(s) {sorted(extra)}")

    dims = _get(doc, "dimensions", "")
    if not isinstance(dims, dict):
        _fail("dimensions", "expected an object with x, u, w")
    n_x = _integer(_get(dims, "x", "dimensions"), "dimensions.x", lo=1)
    n_u = _integer(_get(dims, "u", "dimensions"), "dimensions.u", lo=1)
    n_w = _integer(_get(dims, "w", "dimensions"), "dimensions.w", lo=1)

    dyn = _get(doc, "dynamics", "")
    if not isinstance(dyn, list) or len(dyn) != n_x:
        _fail("dynamics", f"expected {n_x} component term lists")
    components = tuple(_poly(comp, (n_x, n_u, n_w), f"dynamics[{i}]")
                       for i, comp in enumerate(dyn))

    dom = _get(doc, "domain", "")
    if not isinstance(dom, dict):
        _fail("domain", "expected an object with at least an 'x' box")
    extra = set(dom) - {"x", "u", "w"}
    if extra:
        _fail("domain", f"unknown field(s) {sorted(extra)}")
    domain_x = _box(_get(dom, "x", "domain"), n_x, "domain.x", positive=True)
    domain_u = _box(dom["u"], n_u, "domain.u") if "u" in dom else None
    domain_w = _box(dom["w"], n_w, "domain.w") if "w" in dom else None

    system = PolynomialSystem(n_x, n_u, n_w, components, domain_x, domain_u, domain_w)

    raw_u = _get(doc, "input_constraints", "")
    if not isinstance(raw_u, list) or not raw_u:
        _fail("input_constraints", "expected a non-empty list of matrices")
    inputs = InputSet(tuple(_matrix(M, f"input_constraints[{k}]", cols=n_u)
                            for k, M in enumerate(raw_u)))

    raw_w = _get(doc, "noise_vertices", "")
    verts = _matrix(raw_w, "noise_vertices", cols=n_w)
    try:
        noise = VPolytope(verts)
    except ValueError as exc:
        _fail("noise_vertices", str(exc))

    q_raw = _matrix(_get(doc, "cost_matrix", ""), "cost_matrix",
                    rows=n_x + n_u + 1, cols=n_x + n_u + 1)
    try:
        cost = factor_stage_cost(q_raw)
    except ValueError as exc:
        _fail("cost_matrix", str(exc))

    spec = _get(doc, "spec", "")
    if not isinstance(spec, dict):
        _fail("spec", "expected an object with initial, target, obstacles")
    extra = set(spec) - {"initial", "target", "obstacles"}
    if extra:
        _fail("spec", f"unknown field(s) {sorted(extra)}")
    initial_box = _box(_get(spec, "initial", "spec"), n_x, "spec.initial", positive=True)
    target_box = _box(_get(spec, "target", "spec"), n_x, "spec.target", positive=True)
    raw_obs = spec.get("obstacles", [])
    if not isinstance(raw_obs, list):
        _fail("spec.obstacles", "expected a list of boxes")
    obstacles = tuple(_box(b, n_x, f"spec.obstacles[{i}]", positive=True)
                      for i, b in enumerate(raw_obs))

    anchor_raw = doc.get("input_anchor", None)
    u_anchor = None if anchor_raw is None else _vector(anchor_raw, n_u, "input_anchor")
    if u_anchor is not None and not inputs.contains(u_anchor):
        _fail("input_anchor", "lies outside the admissible input set")

    lam = _number(doc.get("lambda", _DEFAULTS["lambda"]), "lambda", lo=0.0, hi=1.0)
    lam2_raw = doc.get("lambda_improve", None)
    lam_improve = None if lam2_raw is None else _number(lam2_raw, "lambda_improve",
                                                        lo=0.0, hi=1.0)
    params = BuildParams(
        seed=_integer(doc.get("seed", _DEFAULTS["seed"]), "seed", lo=0),
        max_iters=_integer(doc.get("max_iters", _DEFAULTS["max_iters"]), "max_iters", lo=1),
        improve_budget=_integer(doc.get("improve_budget", _DEFAULTS["improve_budget"]),
                                "improve_budget", lo=0),
        lam=lam,
        lam_improve=lam_improve,
        rewire_k=_integer(doc.get("rewire_k", _DEFAULTS["rewire_k"]), "rewire_k", lo=0),
        p_goal=_number(doc.get("p_goal", _DEFAULTS["p_goal"]), "p_goal", lo=0.0, hi=1.0),
    )

    tol_raw = doc.get("tolerances", {})
    if not isinstance(tol_raw, dict):
        _fail("tolerances", "expected an object of name -> value")
    try:
        tol = with_overrides(DEFAULT_TOL, tol_raw)
    except ValueError as exc:
        _fail("tolerances", str(exc))

    transition = None
    tr_raw = doc.get("transition", None)
    if tr_raw is not None:
        if not isinstance(tr_raw, dict):
            _fail("transition", "expected an object")
        extra = set(tr_raw) - {"center", "target_center", "target_shape"}
        if extra:
            _fail("transition", f"unknown field(s) {sorted(extra)}")
        t_center = _vector(_get(tr_raw, "center", "transition"), n_x, "transition.center")
        tgt_c = _vector(_get(tr_raw, "target_center", "transition"), n_x,
                        "transition.target_center")
        tgt_P = _matrix(_get(tr_raw, "target_shape", "transition"), "transition.target_shape",
                        rows=n_x, cols=n_x)
        try:
            target = Ellipsoid(tgt_c, tgt_P)
        except ValueError as exc:
            _fail("transition.target_shape", str(exc))
        transition = SingleTransition(t_center, target)

    noise_mode = doc.get("trajectory_noise", _DEFAULTS["trajectory_noise"])
    if noise_mode not in ("zero", "uniform", "vertex-cycling"):
        _fail("trajectory_noise", "must be one of zero, uniform, vertex-cycling")
    n_traj = _integer(doc.get("trajectories", _DEFAULTS["trajectories"]), "trajectories", lo=0)
    grid_res = _integer(doc.get("grid_res", _DEFAULTS["grid_res"]), "grid_res", lo=2)
    max_steps_raw = doc.get("max_steps", None)
    max_steps = None if max_steps_raw is None else _integer(max_steps_raw, "max_steps", lo=1)

    control = ControlProblem(system=system, inputs=inputs, noise=noise, cost=cost,
                             initial_box=initial_box, target_box=target_box,
                             obstacle_boxes=obstacles, u_anchor=u_anchor)

    canonical = dict(doc)
    canonical.setdefault("name", name)
    for key, val in _DEFAULTS.items():
        if key in ("obstacles",):
            continue
        canonical.setdefault(key, val)
    canonical["spec"] = {"initial": spec["initial"], "target": spec["target"],
                         "obstacles": raw_obs}

    return Problem(name=str(canonical["name"]), control=control, params=params, tol=tol,
                   transition=transition, trajectories=n_traj, trajectory_noise=noise_mode,
                   grid_res=grid_res, max_steps=max_steps, canonical=canonical)


def load_problem(path) -> Problem:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ProblemError(f"cannot read {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProblemError(
            f"{path.name}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc
    return parse_problem(doc, name=path.stem)


def config_hash(canonical: dict) -> str:
    """Stable hash of the canonical problem document."""
    blob = json.dumps(canonical, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()
