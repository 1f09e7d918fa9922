"""Concrete controller, closed-loop simulation and trajectory certification.

The concrete control law evaluates, at a state x, the stored affine law of
the cheapest cell containing x. Simulations log enough to re-check the
Bellman inequality step by step afterwards.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import Delaunay, QhullError

from .abstraction import Abstraction, ValueTable
from .dynamics import PolynomialSystem, eval_system
from .geometry import Hyperrectangle, VPolytope, contains_point
from .synthesis import StageCost
from .tolerances import DEFAULT_TOL, Tolerances

__all__ = [
    "CertificationReport",
    "ConcreteController",
    "MaxSteps",
    "NoisePolicy",
    "OutsideDomain",
    "Simulator",
    "Trajectory",
    "certify_trajectory",
]


class OutsideDomain(Exception):
    """The state is not covered by any cell, so the controller is undefined."""


class MaxSteps(Exception):
    """The step cap was hit before reaching the target set."""

    def __init__(self, trajectory: "Trajectory"):
        super().__init__(f"target not reached within {len(trajectory.inputs)} steps")
        self.trajectory = trajectory


@dataclass(frozen=True)
class NoisePolicy:
    """Disturbance realization: 'zero', 'uniform' over the hull, or
    'vertex-cycling' through the vertex list."""

    mode: str = "uniform"
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("zero", "uniform", "vertex-cycling"):
            raise ValueError(f"unknown noise mode {self.mode!r}")

    def stream(self, W: VPolytope):
        if self.mode == "zero":
            return _zero_stream(W)
        if self.mode == "vertex-cycling":
            return _cycling_stream(W)
        return _uniform_hull_stream(W, np.random.default_rng(self.seed))


def _zero_stream(W: VPolytope):
    z = np.zeros(W.dim)
    while True:
        yield z


def _cycling_stream(W: VPolytope):
    k = 0
    while True:
        yield W.vertices[k % W.n_vertices]
        k += 1


def _uniform_hull_stream(W: VPolytope, rng: np.random.Generator):
    """Exact uniform sampling over the hull via its affine-rank reduction."""
    vs = W.vertices
    mean = vs.mean(axis=0)
    centered = vs - mean
    u_svd, s, vt = np.linalg.svd(centered, full_matrices=False)
    rank = int(np.sum(s > 1e-12 * max(1.0, s[0] if s.size else 0.0)))
    if rank == 0:
        while True:
            yield vs[0]
    basis = vt[:rank]
    proj = centered @ basis.T
    if rank == 1:
        lo, hi = float(proj.min()), float(proj.max())
        while True:
            t = rng.uniform(lo, hi)
            yield mean + t * basis[0]
    try:
        tri = Delaunay(proj)
    except QhullError as exc:  # pragma: no cover - rank check should prevent this
        raise ValueError("cannot triangulate the disturbance hull") from exc
    simplices = tri.points[tri.simplices]
    vols = np.abs(np.linalg.det(simplices[:, 1:] - simplices[:, :1]))
    probs = vols / vols.sum()
    while True:
        idx = rng.choice(len(probs), p=probs)
        bary = rng.dirichlet(np.ones(rank + 1))
        point = bary @ simplices[idx]
        yield mean + point @ basis


@dataclass(frozen=True)
class Trajectory:
    states: np.ndarray       # (N+1, n_x)
    inputs: np.ndarray       # (N, n_u)
    noises: np.ndarray       # (N, n_w)
    cells: tuple             # cell id used at each of the N steps
    stage_costs: np.ndarray  # (N,)
    reached: bool

    @property
    def total_cost(self) -> float:
        return float(np.sum(self.stage_costs))

    def __len__(self) -> int:
        return self.inputs.shape[0]


class ConcreteController:
    """Controller induced by an abstraction and its value table."""

    def __init__(self, abstraction: Abstraction, values: ValueTable,
                 tol: Tolerances = DEFAULT_TOL):
        self.abstraction = abstraction
        self.values = values
        self.tol = tol

    def cells_containing(self, x) -> list:
        return [sid for sid, st in sorted(self.abstraction.states.items())
                if contains_point(st.cell, x, self.tol)]

    def _argmin_cell(self, x) -> int:
        cells = self.cells_containing(x)
        if not cells:
            raise OutsideDomain(f"state {np.asarray(x)} is outside every cell")
        return min(cells, key=lambda sid: (self.values.values[sid], sid))

    def concretize(self, x):
        """Input of the cheapest containing cell; returns (u, cell id)."""
        sid = self._argmin_cell(x)
        tr = self.values.best[sid]
        if tr is None:
            raise RuntimeError("the state is inside the target cell; no transition applies")
        return tr.control(x), sid

    def refine_value(self, x) -> float:
        return self.values.values[self._argmin_cell(x)]


@dataclass
class Simulator:
    system: PolynomialSystem
    controller: ConcreteController
    cost: StageCost
    target_box: Hyperrectangle
    noise_set: VPolytope

    def _at_target(self, x) -> bool:
        root = self.controller.abstraction.root
        root_cell = self.controller.abstraction.states[root].cell
        return self.target_box.contains(x) or contains_point(root_cell, x)

    def simulate(self, x0, noise: NoisePolicy, max_steps: int | None = None) -> Trajectory:
        """Closed loop from x0 until the target set is reached.

        Raises OutsideDomain if the state ever leaves the covered region
        (that would contradict the transition certificates) and MaxSteps if
        the cap is exhausted first.
        """
        if max_steps is None:
            max_steps = self.controller.abstraction.n_states + 5
        x = np.asarray(x0, dtype=float).reshape(-1)
        stream = noise.stream(self.noise_set)
        xs, us, ws, cells, costs = [x.copy()], [], [], [], []
        reached = self._at_target(x)
        while not reached and len(us) < max_steps:
            u, sid = self.controller.concretize(x)
            w = next(stream)
            stage = float(self.cost.evaluate(x, u)[0])
            x = eval_system(self.system, x, u, np.asarray(w, dtype=float),
                            warn_outside=False)
            xs.append(x.copy())
            us.append(np.asarray(u, dtype=float))
            ws.append(np.asarray(w, dtype=float))
            cells.append(sid)
            costs.append(stage)
            reached = self._at_target(x)
        traj = Trajectory(
            states=np.asarray(xs),
            inputs=np.asarray(us) if us else np.zeros((0, self.system.n_u)),
            noises=np.asarray(ws) if ws else np.zeros((0, self.system.n_w)),
            cells=tuple(cells), stage_costs=np.asarray(costs), reached=reached)
        if not reached:
            raise MaxSteps(traj)
        return traj


@dataclass(frozen=True)
class CertificationReport:
    passed: bool
    first_violation: int | None
    reason: str


def certify_trajectory(traj: Trajectory, controller: ConcreteController,
                       slack: float = 1e-6) -> CertificationReport:
    """Re-check the one-step value decrease along a logged trajectory.

    Verifies v(x_k) >= J_k + v(x_{k+1}) - slack at every step (with the
    logged stage costs) and that the values of the cells actually used
    strictly decrease.
    """
    values = controller.values.values
    for k in range(len(traj)):
        v_here = controller.refine_value(traj.states[k])
        v_next = controller.refine_value(traj.states[k + 1])
        if v_here < traj.stage_costs[k] + v_next - slack:
            return CertificationReport(False, k, (
                f"Bellman gap at step {k}: v={v_here!r} < "
                f"{traj.stage_costs[k]!r} + {v_next!r}"))
        if k + 1 < len(traj):
            if values[traj.cells[k + 1]] >= values[traj.cells[k]]:
                return CertificationReport(False, k + 1, (
                    f"cell value did not decrease at step {k + 1}"))
    return CertificationReport(True, None, "all steps satisfy the value decrease")
