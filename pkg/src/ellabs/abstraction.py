"""Backward lazy construction of the cell graph, rewiring and value table.

The builder grows a digraph of ellipsoidal cells rooted at the target cell.
Each accepted sample adds one cell with a certified transition into an
existing cell; rewiring then tries to reconnect nearby existing cells through
the new one whenever that strictly lowers their guaranteed cost-to-target.
"""
from __future__ import annotations

import heapq
import logging
from dataclasses import dataclass, field

import numpy as np

from .dynamics import PolynomialSystem, linearize, lipschitz_bound, nominal_linearization_point
from .geometry import (
    CenterBlocked,
    Ellipsoid,
    Hyperrectangle,
    InputSet,
    VPolytope,
    box_inner_ellipsoid,
    box_outer_ellipsoid,
    contains_point,
    ellipsoid_inclusion,
    ellipsoid_set_distance,
    point_to_ellipsoid_distance,
    shrink_to_avoid,
)
from .synthesis import Infeasible, LocalProblem, StageCost, new_transition, solve_local_problem
from .tolerances import DEFAULT_TOL, Tolerances

__all__ = [
    "AbstractSpec",
    "AbstractState",
    "AbstractTransition",
    "Abstraction",
    "BuildParams",
    "BuildResult",
    "ControlProblem",
    "ValueTable",
    "build_abstraction",
    "from_document",
    "get_abs_specification",
    "improve_abs",
    "k_closest",
    "sample_state",
    "to_document",
    "value_function",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AbstractState:
    id: int
    cell: Ellipsoid


@dataclass(frozen=True)
class AbstractTransition:
    """Deterministic edge: the controller maps all of `source` into `target`."""

    source: int
    target: int
    K: np.ndarray
    l: np.ndarray
    center: np.ndarray
    cost: float

    def control(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return (x - self.center) @ np.asarray(self.K).T + self.l


class Abstraction:
    """Rooted digraph of cells; the root is the target cell."""

    def __init__(self, root_cell: Ellipsoid):
        self.states: dict[int, AbstractState] = {}
        self.transitions: list[AbstractTransition] = []
        self._out: dict[int, list[int]] = {}
        self.root = self.add_state(root_cell)

    def add_state(self, cell: Ellipsoid) -> int:
        sid = len(self.states)
        self.states[sid] = AbstractState(sid, cell)
        self._out[sid] = []
        return sid

    def add_transition(self, source: int, target: int, K, l, center, cost: float) -> AbstractTransition:
        if source not in self.states or target not in self.states:
            raise KeyError("transition endpoints must be existing states")
        if cost < 0.0:
            raise ValueError("transition cost must be nonnegative")
        tr = AbstractTransition(source, target, np.asarray(K, dtype=float),
                                np.asarray(l, dtype=float).reshape(-1),
                                np.asarray(center, dtype=float).reshape(-1), float(cost))
        self._out[source].append(len(self.transitions))
        self.transitions.append(tr)
        return tr

    def out_transitions(self, sid: int) -> list[AbstractTransition]:
        return [self.transitions[i] for i in self._out[sid]]

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_transitions(self) -> int:
        return len(self.transitions)


@dataclass(frozen=True)
class AbstractSpec:
    """Conservative ellipsoidal cover of the boxes defining the task."""

    xi_I: Ellipsoid
    xi_T: Ellipsoid
    xi_O: tuple


@dataclass(frozen=True)
class ValueTable:
    """Guaranteed cost-to-target per cell plus the transition achieving it."""

    values: dict
    best: dict

    def value(self, sid: int) -> float:
        return self.values[sid]


def get_abs_specification(initial_box: Hyperrectangle, target_box: Hyperrectangle,
                          obstacle_boxes=()) -> AbstractSpec:
    """Outer ellipsoid for the start set and obstacles, inner for the target."""
    return AbstractSpec(
        xi_I=box_outer_ellipsoid(initial_box),
        xi_T=box_inner_ellipsoid(target_box),
        xi_O=tuple(box_outer_ellipsoid(b) for b in obstacle_boxes),
    )


def sample_state(rng: np.random.Generator, domain: Hyperrectangle,
                 initial_box: Hyperrectangle, p_goal: float = 0.2) -> np.ndarray:
    """Uniform draw from the start box with probability p_goal, else the domain.

    Consumes a fixed number of random values per call so seeded streams stay
    aligned regardless of which branch is taken.
    """
    toss = rng.random()
    box = initial_box if toss < p_goal else domain
    lo = box.center - box.half_lengths
    hi = box.center + box.half_lengths
    return rng.uniform(lo, hi)


def k_closest(states: dict, query, k: int, tol: Tolerances = DEFAULT_TOL) -> list:
    """Ids of the k states closest to a point or ellipsoid query.

    Point queries use the exact point-to-set distance. Ellipsoid queries rank
    by a cheap center-distance bound first and refine the top 3k candidates
    with the exact set distance. Ties break toward the smaller id.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    items = sorted(states.items())
    if isinstance(query, Ellipsoid):
        coarse = sorted(
            (max(0.0, float(np.linalg.norm(query.center - st.cell.center)) - query.max_semiaxis), sid)
            for sid, st in items
        )
        pool = [sid for _, sid in coarse[: 3 * k]]
        scored = sorted(
            (ellipsoid_set_distance(query, states[sid].cell, tol), sid) for sid in pool
        )
    else:
        q = np.asarray(query, dtype=float).reshape(-1)
        scored = sorted((point_to_ellipsoid_distance(q, st.cell, tol), sid) for sid, st in items)
    return [sid for _, sid in scored[:k]]


def value_function(abstraction: Abstraction) -> ValueTable:
    """Shortest-path cost to the root over the reversed transition graph."""
    radj: dict[int, list] = {sid: [] for sid in abstraction.states}
    for tr in abstraction.transitions:
        radj[tr.target].append((tr.source, tr.cost))
    dist = {abstraction.root: 0.0}
    heap = [(0.0, abstraction.root)]
    while heap:
        d, sid = heapq.heappop(heap)
        if d > dist.get(sid, np.inf):
            continue
        for src, cost in radj[sid]:
            nd = d + cost
            if nd < dist.get(src, np.inf):
                dist[src] = nd
                heapq.heappush(heap, (nd, src))
    missing = set(abstraction.states) - set(dist)
    if missing:
        raise RuntimeError(f"states {sorted(missing)} cannot reach the root; "
                           "the construction invariant is broken")
    best: dict[int, AbstractTransition | None] = {abstraction.root: None}
    for sid in abstraction.states:
        if sid == abstraction.root:
            continue
        cand = None
        for tr in abstraction.out_transitions(sid):
            score = tr.cost + dist[tr.target]
            if cand is None or score < cand[0] - 1e-15:
                cand = (score, tr)
        best[sid] = cand[1]
    return ValueTable(values=dist, best=best)


def improve_abs(abstraction: Abstraction, values: ValueTable, new_id: int, k: int,
                transition_solver, tol: Tolerances = DEFAULT_TOL) -> int:
    """Rewire up to k nearby cells through the newly inserted one.

    An edge from an existing cell is added only when its certified cost plus
    the new cell's value strictly undercuts that cell's current value.
    Returns the number of accepted edges.
    """
    if k < 1:
        return 0
    others = {sid: st for sid, st in abstraction.states.items() if sid != new_id}
    if not others:
        return 0
    new_cell = abstraction.states[new_id].cell
    v_new = values.values[new_id]
    accepted = 0
    for sid in k_closest(others, new_cell, k, tol):
        # positive edge costs make improvement impossible for cheaper cells
        if values.values[sid] <= v_new:
            continue
        try:
            sol = transition_solver(abstraction.states[sid].cell, new_cell)
        except Infeasible:
            continue
        if sol.J_bound + v_new < values.values[sid]:
            abstraction.add_transition(sid, new_id, sol.K, sol.l, sol.center, sol.J_bound)
            accepted += 1
    return accepted


# ---------------------------------------------------------------------------
# builder
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ControlProblem:
    """Everything the builder needs about one reach-avoid task."""

    system: PolynomialSystem
    inputs: InputSet
    noise: VPolytope
    cost: StageCost
    initial_box: Hyperrectangle
    target_box: Hyperrectangle
    obstacle_boxes: tuple = ()
    u_anchor: np.ndarray | None = None


@dataclass(frozen=True)
class BuildParams:
    seed: int = 0
    max_iters: int = 500
    improve_budget: int = 0
    lam: float = 0.01
    lam_improve: float | None = None
    rewire_k: int = 3
    p_goal: float = 0.2
    infeasible_streak: int = 50


@dataclass
class BuildResult:
    abstraction: Abstraction
    values: ValueTable
    spec: AbstractSpec
    covered: bool
    covering_id: int | None
    iterations: int
    stats: dict = field(default_factory=dict)


class _Builder:
    def __init__(self, problem: ControlProblem, params: BuildParams,
                 tol: Tolerances, backends, dump_dir):
        self.problem = problem
        self.params = params
        self.tol = tol
        self.backends = backends
        self.dump_dir = dump_dir
        self.rng = np.random.default_rng(params.seed)
        self.spec = get_abs_specification(problem.initial_box, problem.target_box,
                                          problem.obstacle_boxes)
        self.lipschitz = lipschitz_bound(problem.system)
        self.point = nominal_linearization_point(self.spec.xi_T, problem.inputs,
                                                 problem.noise, problem.u_anchor)
        self.u_bar = self.point[1]
        self.abstraction = Abstraction(self.spec.xi_T)
        self.values = ValueTable(values={self.abstraction.root: 0.0},
                                 best={self.abstraction.root: None})
        self.stats = dict(samples=0, blocked=0, infeasible=0, inserted=0,
                          rewire_attempts=0, rewires_accepted=0)
        self.streak = 0
        self.attempt = 0
        self.covering_id = None
        if ellipsoid_inclusion(self.spec.xi_I, self.spec.xi_T, tol):
            self.covering_id = self.abstraction.root

    @property
    def covered(self) -> bool:
        return self.covering_id is not None

    def _dump_path(self):
        if self.dump_dir is None:
            return None
        self.attempt += 1
        return self.dump_dir / f"attempt_{self.attempt:05d}.txt"

    def _transition_solver(self, source: Ellipsoid, target: Ellipsoid):
        self.stats["rewire_attempts"] += 1
        model = linearize(self.problem.system, (source.center, self.u_bar,
                                                np.zeros(self.problem.noise.dim)))
        return new_transition(source, target, model, self.lipschitz,
                              self.problem.inputs, self.problem.noise,
                              self.problem.cost, backends=self.backends,
                              tol=self.tol, dump_path=self._dump_path())

    def step(self, lam: float, rewire_k: int) -> bool:
        """One sampling attempt; returns True when a cell was inserted."""
        params = self.params
        p_goal = params.p_goal
        if self.streak >= params.infeasible_streak:
            p_goal = min(1.0, 2.0 * p_goal)
        c = sample_state(self.rng, self.problem.system.domain_x,
                         self.problem.initial_box, p_goal)
        self.stats["samples"] += 1
        if any(contains_point(obs, c, self.tol) for obs in self.spec.xi_O):
            self.stats["blocked"] += 1
            self.streak += 1
            return False
        nearest = k_closest(self.abstraction.states, c, 1, self.tol)[0]
        target_cell = self.abstraction.states[nearest].cell
        model = linearize(self.problem.system,
                          (c, self.u_bar, np.zeros(self.problem.noise.dim)))
        local = LocalProblem(center=c, target=target_cell, model=model,
                             lipschitz=self.lipschitz, inputs=self.problem.inputs,
                             noise=self.problem.noise, cost=self.problem.cost, lam=lam)
        try:
            sol = solve_local_problem(local, backends=self.backends, tol=self.tol,
                                      dump_path=self._dump_path())
        except Infeasible:
            self.stats["infeasible"] += 1
            self.streak += 1
            return False
        try:
            cell = shrink_to_avoid(sol.cell, self.spec.xi_O, self.tol)
        except CenterBlocked:  # pragma: no cover - center was pre-checked
            self.stats["blocked"] += 1
            self.streak += 1
            return False
        sid = self.abstraction.add_state(cell)
        self.abstraction.add_transition(sid, nearest, sol.K, sol.l, sol.center, sol.J_bound)
        self.values = value_function(self.abstraction)
        if rewire_k >= 1:
            added = improve_abs(self.abstraction, self.values, sid, rewire_k,
                                self._transition_solver, self.tol)
            if added:
                self.stats["rewires_accepted"] += added
                self.values = value_function(self.abstraction)
        self.stats["inserted"] += 1
        self.streak = 0
        if not self.covered and ellipsoid_inclusion(self.spec.xi_I, cell, self.tol):
            self.covering_id = sid
        return True


def build_abstraction(problem: ControlProblem, params: BuildParams,
                      tol: Tolerances = DEFAULT_TOL, backends=None,
                      dump_dir=None) -> BuildResult:
    """Grow the abstraction from the target cell until it covers the start set.

    Runs at most `max_iters` sampling attempts, then (if the start set is
    covered and a budget is configured) keeps refining for `improve_budget`
    further attempts using the improvement-phase weight.
    """
    b = _Builder(problem, params, tol, backends, dump_dir)
    iterations = 0
    if not b.covered:
        for _ in range(params.max_iters):
            iterations += 1
            if b.step(params.lam, params.rewire_k):
                if b.covered:
                    break
    first_feasible_iters = iterations
    if b.covered and params.improve_budget > 0:
        lam2 = params.lam if params.lam_improve is None else params.lam_improve
        for _ in range(params.improve_budget):
            iterations += 1
            b.step(lam2, params.rewire_k)
    b.stats["first_feasible_iterations"] = first_feasible_iters
    if not b.covered:
        log.warning("iteration cap reached after %d attempts without covering the start set",
                    iterations)
    return BuildResult(abstraction=b.abstraction, values=b.values, spec=b.spec,
                       covered=b.covered, covering_id=b.covering_id,
                       iterations=iterations, stats=b.stats)


# ---------------------------------------------------------------------------
# structured export / import
# ---------------------------------------------------------------------------


def to_document(abstraction: Abstraction, values: ValueTable) -> dict:
    """JSON-ready structured form of the abstraction and its value table."""
    return {
        "root": abstraction.root,
        "states": [
            {
                "id": sid,
                "center": st.cell.center.tolist(),
                "shape": st.cell.shape.tolist(),
                "value": values.values[sid],
            }
            for sid, st in sorted(abstraction.states.items())
        ],
        "transitions": [
            {
                "source": tr.source,
                "target": tr.target,
                "K": tr.K.tolist(),
                "l": tr.l.tolist(),
                "center": tr.center.tolist(),
                "cost": tr.cost,
            }
            for tr in abstraction.transitions
        ],
    }


def from_document(doc: dict) -> tuple:
    """Rebuild (Abstraction, ValueTable) from its structured form."""
    states = sorted(doc["states"], key=lambda s: s["id"])
    if not states or states[0]["id"] != doc["root"]:
        raise ValueError("document root must be the first state id")
    abstraction = Abstraction(Ellipsoid(states[0]["center"], states[0]["shape"]))
    for rec in states[1:]:
        sid = abstraction.add_state(Ellipsoid(rec["center"], rec["shape"]))
        if sid != rec["id"]:
            raise ValueError("state ids must be dense and ordered")
    for rec in doc["transitions"]:
        abstraction.add_transition(rec["source"], rec["target"], rec["K"], rec["l"],
                                   rec["center"], rec["cost"])
    return abstraction, value_function(abstraction)
