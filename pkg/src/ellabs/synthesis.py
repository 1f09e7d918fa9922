"""Local transition design: one conic program per candidate transition.

Each program co-designs the source cell shape, an affine feedback law and a
worst-case stage-cost bound so that every state of the source cell is mapped
into the target cell by the true nonlinear dynamics, for every admissible
disturbance, with the control staying inside the input set. The curvature of
the dynamics enters through a worst-case error box whose vertices are affine
in the decision variables, which keeps every block a genuine LMI.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np

from .dynamics import AffineModel
from .geometry import Ellipsoid, InputSet, VPolytope, max_sq_dist_to_point, volume
from .tolerances import DEFAULT_TOL, Tolerances

__all__ = [
    "AssembledProgram",
    "ConicBackend",
    "CvxpyBackend",
    "Infeasible",
    "LocalProblem",
    "LocalSolution",
    "NumericalFailure",
    "StageCost",
    "assemble_lmis",
    "default_backend_ladder",
    "dump_program",
    "factor_stage_cost",
    "new_transition",
    "solve_local_problem",
]


class Infeasible(Exception):
    """No certified transition exists for this candidate (or none was found)."""


class NumericalFailure(Exception):
    """The backend failed to return a trustworthy solution."""


@dataclass(frozen=True)
class StageCost:
    """Quadratic stage cost J(x, u) = (x, u, 1)' Q (x, u, 1) with Q = S'S."""

    Q: np.ndarray
    S: np.ndarray

    def evaluate(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        u = np.atleast_2d(np.asarray(u, dtype=float))
        z = np.concatenate([x, u, np.ones((x.shape[0], 1))], axis=1)
        return np.einsum("ij,jk,ik->i", z, self.Q, z)


def factor_stage_cost(Q, tol: Tolerances = DEFAULT_TOL) -> StageCost:
    """Validate Q and factor it as S'S via the symmetric square root."""
    Q = np.asarray(Q, dtype=float)
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
        raise ValueError(f"cost matrix must be square, got {Q.shape}")
    scale = np.linalg.norm(Q, "fro")
    if scale == 0.0 or np.linalg.norm(Q - Q.T, "fro") > tol.symmetry_rtol * scale:
        raise ValueError("cost matrix is not symmetric within tolerance")
    Qs = 0.5 * (Q + Q.T)
    evals, evecs = np.linalg.eigh(Qs)
    if evals[0] <= 0.0:
        raise ValueError(f"cost matrix is not positive definite (min eig {evals[0]:.3e})")
    S = (evecs * np.sqrt(evals)) @ evecs.T
    if np.linalg.norm(S.T @ S - Qs, "fro") > tol.factor_rtol * scale:
        raise ValueError("square-root factor failed its accuracy check")
    return StageCost(Qs, S)


@dataclass(frozen=True)
class LocalProblem:
    """One candidate transition: grow a cell at `center` that maps into `target`."""

    center: np.ndarray
    target: Ellipsoid
    model: AffineModel
    lipschitz: np.ndarray
    inputs: InputSet
    noise: VPolytope
    cost: StageCost
    lam: float = 0.01

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float).reshape(-1)
        L = np.asarray(self.lipschitz, dtype=float).reshape(-1)
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")
        if c.size != self.target.dim:
            raise ValueError("center and target dimensions differ")
        if L.size != c.size or np.any(L < 0.0):
            raise ValueError("lipschitz vector must be nonnegative with state dimension")
        if not np.allclose(self.model.point[0], c, atol=1e-12):
            raise ValueError("model must be linearized at the candidate center")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "lipschitz", L)


@dataclass(frozen=True)
class LocalSolution:
    """A certified transition: cell shape, affine law and cost bound."""

    center: np.ndarray
    P: np.ndarray
    K: np.ndarray
    l: np.ndarray
    J_bound: float
    delta_X: float
    delta_U: float
    objective: float
    solver: str = ""

    @property
    def cell(self) -> Ellipsoid:
        return Ellipsoid(self.center, self.P)

    @property
    def volume(self) -> float:
        return volume(self.cell)

    def control(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return (x - self.center) @ self.K.T + self.l


# ---------------------------------------------------------------------------
# conic backend
# ---------------------------------------------------------------------------

_STATUS_MAP = {
    cp.OPTIMAL: "optimal",
    cp.INFEASIBLE: "infeasible",
    cp.INFEASIBLE_INACCURATE: "infeasible",
    cp.UNBOUNDED: "numerical-failure",
    cp.UNBOUNDED_INACCURATE: "numerical-failure",
    cp.OPTIMAL_INACCURATE: "optimal-inaccurate",
}


class ConicBackend:
    """Solver handle: PSD and linear constraints plus a concave log-det term."""

    name = "abstract"

    def solve(self, problem: cp.Problem) -> str:
        """Run the solver; returns 'optimal', 'infeasible' or 'numerical-failure'."""
        raise NotImplementedError


class CvxpyBackend(ConicBackend):
    def __init__(self, solver: str = "CLARABEL", **settings):
        self.solver = solver
        self.settings = settings
        self.name = solver if not settings else f"{solver}(tight)"

    def solve(self, problem: cp.Problem) -> str:
        try:
            problem.solve(solver=self.solver, **self.settings)
        except (cp.error.SolverError, ValueError, ArithmeticError):
            return "numerical-failure"
        return _STATUS_MAP.get(problem.status, "numerical-failure")


def default_backend_ladder() -> list:
    """Deterministic retry ladder: defaults, tightened settings, then SCS.

    The fallback caps are iteration counts, never wall-clock limits, so a run
    is reproducible regardless of machine load. Borderline instances that
    exhaust the ladder are treated as infeasible; the caller simply resamples.
    """
    return [
        CvxpyBackend("CLARABEL"),
        CvxpyBackend("CLARABEL", tol_gap_abs=1e-11, tol_gap_rel=1e-11, tol_feas=1e-11,
                     max_iter=500),
        CvxpyBackend("SCS", eps=1e-8, max_iters=20_000),
    ]


# ---------------------------------------------------------------------------
# LMI assembly
# ---------------------------------------------------------------------------


@dataclass
class _Normalized:
    """Problem data after the uniform state rescaling x -> x / sigma."""

    sigma: float
    c: np.ndarray
    c_plus: np.ndarray
    P_plus_inv: np.ndarray
    A: np.ndarray
    B: np.ndarray
    E: np.ndarray
    g: np.ndarray
    u_bar: np.ndarray
    S: np.ndarray
    delta_W: float
    lip_dx: np.ndarray       # multiplies the scaled state slack in the error box
    lip_uw: np.ndarray       # multiplies the input slack and delta_W
    active: tuple            # dims with nonzero curvature
    L_fixed: np.ndarray | None
    dX_fixed: float | None


def _normalize(p: LocalProblem, fix_shape: Ellipsoid | None) -> _Normalized:
    n_x = p.center.size
    sigma = float(np.exp(-0.5 * np.mean(np.log(p.target.eigenvalues))))
    target_s = Ellipsoid(p.target.center / sigma, sigma**2 * p.target.shape)
    S = p.cost.S @ np.diag(np.concatenate([np.full(n_x, sigma), np.ones(p.inputs.dim + 1)]))
    L_fixed = dX_fixed = None
    if fix_shape is not None:
        shape_s = Ellipsoid(fix_shape.center / sigma, sigma**2 * fix_shape.shape)
        L_fixed = shape_s.sqrt_inv_shape()
        dX_fixed = shape_s.max_radius_sq
    return _Normalized(
        sigma=sigma,
        c=p.center / sigma,
        c_plus=p.target.center / sigma,
        P_plus_inv=target_s.inv_shape(),
        A=p.model.A,
        B=p.model.B / sigma,
        E=p.model.E / sigma,
        g=p.model.g / sigma,
        u_bar=np.asarray(p.model.point[1], dtype=float),
        S=S,
        delta_W=max_sq_dist_to_point(p.noise, np.zeros(p.noise.dim)),
        lip_dx=0.5 * p.lipschitz * sigma,
        lip_uw=0.5 * p.lipschitz / sigma,
        active=tuple(d for d in range(n_x) if p.lipschitz[d] > 0.0),
        L_fixed=L_fixed,
        dX_fixed=dX_fixed,
    )


@dataclass
class AssembledProgram:
    variables: dict
    constraints: list
    blocks: dict
    sigma: float
    fixed_shape: bool
    data: dict = field(default_factory=dict)

    def block_count(self) -> int:
        return sum(self.blocks.values())


def _row(expr, width: int):
    return cp.reshape(expr, (1, width), order="C")


def _col(expr, height: int):
    return cp.reshape(expr, (height, 1), order="C")


def _scalar(expr):
    return cp.reshape(expr, (1, 1), order="C")


def _check_problem(p: LocalProblem, fix_shape: Ellipsoid | None, tol: Tolerances) -> None:
    n_x = p.center.size
    n_u = p.inputs.dim
    n_w = p.noise.dim
    if n_x > tol.max_lmi_dim:
        raise ValueError(f"state dimension {n_x} exceeds the 2^n vertex guard "
                         f"({tol.max_lmi_dim}); raise max_lmi_dim to override")
    if p.model.A.shape != (n_x, n_x) or p.model.B.shape != (n_x, n_u) \
            or p.model.E.shape != (n_x, n_w):
        raise ValueError("model matrices are inconsistent with the problem dimensions")
    nz = n_x + n_u + 1
    if p.cost.Q.shape != (nz, nz):
        raise ValueError(f"cost matrix must be {nz}x{nz}, got {p.cost.Q.shape}")
    if fix_shape is not None and not np.allclose(fix_shape.center, p.center, atol=1e-12):
        raise ValueError("fixed shape must be centered at the candidate center")


def assemble_lmis(p: LocalProblem, fix_shape: Ellipsoid | None = None,
                  tol: Tolerances = DEFAULT_TOL) -> AssembledProgram:
    """Build the five LMI families for one transition as a conic program.

    Data is normalized so the target shape has unit geometric mean of
    eigenvalues (uniform state rescaling); the solution is mapped back by the
    caller via `sigma`. With `fix_shape` the cell geometry is pinned and only
    the controller and scalar variables remain free.
    """
    _check_problem(p, fix_shape, tol)
    n_x, n_u, n_w = p.center.size, p.inputs.dim, p.noise.dim
    nz = n_x + n_u + 1
    nd = _normalize(p, fix_shape)

    eps = tol.psd_margin
    variables: dict = {}
    cons: list = []
    blocks: dict = {}

    if fix_shape is None:
        L = cp.Variable((n_x, n_x), symmetric=True, name="L")
        dX = cp.Variable(nonneg=True, name="delta_X")
        variables["L"] = L
        variables["delta_X"] = dX
        cons.append(L >> eps * np.eye(n_x))
        cons.append(cp.bmat([[np.eye(n_x), L], [L, dX * np.eye(n_x)]])
                    >> eps * np.eye(2 * n_x))
        blocks["state_bound"] = 1
    else:
        L = nd.L_fixed
        dX = nd.dX_fixed
        variables["L"] = L
        variables["delta_X"] = dX
        blocks["state_bound"] = 0

    F = cp.Variable((n_u, n_x), name="F")
    l = cp.Variable(n_u, name="l")
    dU = cp.Variable(nonneg=True, name="delta_U")
    phi = cp.Variable(nonneg=True, name="phi")
    gamma = cp.Variable(nonneg=True, name="gamma")
    J = cp.Variable(name="J_bound")
    variables.update(F=F, l=l, delta_U=dU, phi=phi, gamma=gamma, J_bound=J)

    # input magnitude around the anchor
    cons.append(cp.bmat([
        [phi * np.eye(n_x), np.zeros((n_x, 1)), F.T],
        [np.zeros((1, n_x)), _scalar(dU - phi), _row(l - nd.u_bar, n_u)],
        [F, _col(l - nd.u_bar, n_u), np.eye(n_u)],
    ]) >> eps * np.eye(n_x + 1 + n_u))
    blocks["input_bound"] = 1

    # transition blocks: error-box vertices (active curvature dims) x noise vertices
    mu = nd.g + nd.A @ nd.c + nd.B @ l - nd.c_plus
    patterns = [()] if not nd.active else [
        tuple((i >> k) & 1 for k in range(len(nd.active)))
        for i in range(2 ** len(nd.active))
    ]
    AL_BF = nd.A @ L + nd.B @ F
    n_trans = 0
    betas = []
    for pat in patterns:
        v_terms = []
        for d in range(n_x):
            if d in nd.active:
                sign = 1.0 if pat[nd.active.index(d)] else -1.0
                v_terms.append(sign * (nd.lip_dx[d] * dX + nd.lip_uw[d] * (dU + nd.delta_W)))
            else:
                v_terms.append(cp.Constant(0.0))
        V = cp.hstack(v_terms)
        for j in range(p.noise.n_vertices):
            beta = cp.Variable(nonneg=True, name=f"beta_{n_trans}")
            betas.append(beta)
            row = _row(mu + V + nd.E @ p.noise.vertices[j], n_x)
            cons.append(cp.bmat([
                [beta * np.eye(n_x), np.zeros((n_x, 1)), AL_BF.T],
                [np.zeros((1, n_x)), _scalar(1.0 - beta), row],
                [AL_BF, row.T, nd.P_plus_inv],
            ]) >> eps * np.eye(2 * n_x + 1))
            n_trans += 1
    variables["betas"] = betas
    blocks["transition"] = n_trans

    # input feasibility, one block per constraint ellipsoid
    taus = []
    for k, U_k in enumerate(p.inputs.constraints):
        m = U_k.shape[0]
        tau = cp.Variable(nonneg=True, name=f"tau_{k}")
        taus.append(tau)
        UF = U_k @ F
        Ul = U_k @ l
        cons.append(cp.bmat([
            [tau * np.eye(n_x), np.zeros((n_x, 1)), UF.T],
            [np.zeros((1, n_x)), _scalar(1.0 - tau), _row(Ul, m)],
            [UF, _col(Ul, m), np.eye(m)],
        ]) >> eps * np.eye(n_x + 1 + m))
    variables["taus"] = taus
    blocks["input_feasibility"] = len(taus)

    # stage-cost bound over the cell
    M_top = cp.vstack([L, F, np.zeros((1, n_x))]) if fix_shape is None else \
        cp.vstack([cp.Constant(L), F, np.zeros((1, n_x))])
    z_bar = cp.hstack([cp.Constant(nd.c), l, cp.Constant(np.ones(1))])
    SM = nd.S @ M_top
    Sz = nd.S @ z_bar
    cons.append(cp.bmat([
        [gamma * np.eye(n_x), np.zeros((n_x, 1)), SM.T],
        [np.zeros((1, n_x)), _scalar(J - gamma), _row(Sz, nz)],
        [SM, _col(Sz, nz), np.eye(nz)],
    ]) >> eps * np.eye(n_x + 1 + nz))
    blocks["cost_bound"] = 1

    data = {
        "n_x": n_x, "n_u": n_u, "n_w": n_w, "sigma": nd.sigma,
        "center": p.center, "target_center": p.target.center,
        "target_shape": p.target.shape, "A": p.model.A, "B": p.model.B,
        "E": p.model.E, "g": p.model.g, "u_bar": nd.u_bar,
        "lipschitz": p.lipschitz, "delta_W": nd.delta_W,
        "noise_vertices": p.noise.vertices,
        "input_constraints": p.inputs.constraints,
        "cost_Q": p.cost.Q, "lambda": p.lam,
        "fixed_shape": None if fix_shape is None else fix_shape.shape,
    }
    return AssembledProgram(variables, cons, blocks, nd.sigma, fix_shape is not None, data)


# ---------------------------------------------------------------------------
# parameterized template cache
# ---------------------------------------------------------------------------


def _signature(p: LocalProblem, fixed: bool, tol: Tolerances) -> tuple:
    return (
        p.center.size, p.inputs.dim, p.noise.dim, p.noise.n_vertices,
        tuple(d for d in range(p.center.size) if p.lipschitz[d] > 0.0),
        tuple(U.shape[0] for U in p.inputs.constraints),
        fixed, tol.psd_margin,
    )


class _Template:
    """One parameterized conic program, canonicalized once and reused.

    The parameterization mirrors `assemble_lmis` exactly; every product of
    two data quantities is precomputed numerically so the program stays
    parameter-affine and cvxpy can cache its canonical form.
    """

    def __init__(self, sig: tuple, tol: Tolerances):
        n_x, n_u, n_w, n_vert, active, input_rows, fixed, eps = sig
        self.sig = sig
        nz = n_x + n_u + 1
        pr: dict = {}
        variables: dict = {}
        cons: list = []

        pr["A"] = cp.Parameter((n_x, n_x), name="A")
        pr["B"] = cp.Parameter((n_x, n_u), name="B")
        pr["mu0"] = cp.Parameter(n_x, name="mu0")          # g + A c - c_plus
        pr["u_bar"] = cp.Parameter(n_u, name="u_bar")
        pr["Ppinv"] = cp.Parameter((n_x, n_x), name="Ppinv", symmetric=True)
        pr["Ew"] = cp.Parameter((n_vert, n_x), name="Ew")  # rows E @ w_j
        pr["lip_dx"] = cp.Parameter(n_x, nonneg=True, name="lip_dx")
        pr["lip_uw"] = cp.Parameter(n_x, nonneg=True, name="lip_uw")
        pr["v_const"] = cp.Parameter(n_x, nonneg=True, name="v_const")  # lip_uw * delta_W
        pr["Sx"] = cp.Parameter((nz, n_x), name="Sx")
        pr["Su"] = cp.Parameter((nz, n_u), name="Su")
        pr["Sz0"] = cp.Parameter(nz, name="Sz0")           # S @ (c, 0, 1)
        pr["lam"] = cp.Parameter(nonneg=True, name="lam")
        pr["one_minus_lam"] = cp.Parameter(nonneg=True, name="one_minus_lam")

        if not fixed:
            L = cp.Variable((n_x, n_x), symmetric=True, name="L")
            dX = cp.Variable(nonneg=True, name="delta_X")
            variables["L"] = L
            variables["delta_X"] = dX
            cons.append(L >> eps * np.eye(n_x))
            cons.append(cp.bmat([[np.eye(n_x), L], [L, dX * np.eye(n_x)]])
                        >> eps * np.eye(2 * n_x))
            AL = pr["A"] @ L
            SxL = pr["Sx"] @ L
        else:
            pr["AL"] = cp.Parameter((n_x, n_x), name="AL")       # A @ L_fixed
            pr["SxL"] = cp.Parameter((nz, n_x), name="SxL")      # Sx @ L_fixed
            pr["v_dx"] = cp.Parameter(n_x, nonneg=True, name="v_dx")  # lip_dx * dX
            dX = None
            AL = pr["AL"]
            SxL = pr["SxL"]

        F = cp.Variable((n_u, n_x), name="F")
        l = cp.Variable(n_u, name="l")
        dU = cp.Variable(nonneg=True, name="delta_U")
        phi = cp.Variable(nonneg=True, name="phi")
        gamma = cp.Variable(nonneg=True, name="gamma")
        J = cp.Variable(name="J_bound")
        variables.update(F=F, l=l, delta_U=dU, phi=phi, gamma=gamma, J_bound=J)

        cons.append(cp.bmat([
            [phi * np.eye(n_x), np.zeros((n_x, 1)), F.T],
            [np.zeros((1, n_x)), _scalar(dU - phi), _row(l - pr["u_bar"], n_u)],
            [F, _col(l - pr["u_bar"], n_u), np.eye(n_u)],
        ]) >> eps * np.eye(n_x + 1 + n_u))

        mu = pr["mu0"] + pr["B"] @ l
        AL_BF = AL + pr["B"] @ F
        patterns = [()] if not active else [
            tuple((i >> k) & 1 for k in range(len(active)))
            for i in range(2 ** len(active))
        ]
        betas = []
        for pat in patterns:
            v_terms = []
            for d in range(n_x):
                if d in active:
                    sign = 1.0 if pat[active.index(d)] else -1.0
                    dx_term = pr["v_dx"][d] if fixed else pr["lip_dx"][d] * dX
                    v_terms.append(sign * (dx_term + pr["lip_uw"][d] * dU
                                           + pr["v_const"][d]))
                else:
                    v_terms.append(cp.Constant(0.0))
            V = cp.hstack(v_terms)
            for j in range(n_vert):
                beta = cp.Variable(nonneg=True)
                betas.append(beta)
                row = _row(mu + V + pr["Ew"][j], n_x)
                cons.append(cp.bmat([
                    [beta * np.eye(n_x), np.zeros((n_x, 1)), AL_BF.T],
                    [np.zeros((1, n_x)), _scalar(1.0 - beta), row],
                    [AL_BF, row.T, pr["Ppinv"]],
                ]) >> eps * np.eye(2 * n_x + 1))
        variables["betas"] = betas

        taus = []
        pr["Uks"] = []
        for k, m in enumerate(input_rows):
            U_k = cp.Parameter((m, n_u), name=f"U_{k}")
            pr["Uks"].append(U_k)
            tau = cp.Variable(nonneg=True)
            taus.append(tau)
            UF = U_k @ F
            Ul = U_k @ l
            cons.append(cp.bmat([
                [tau * np.eye(n_x), np.zeros((n_x, 1)), UF.T],
                [np.zeros((1, n_x)), _scalar(1.0 - tau), _row(Ul, m)],
                [UF, _col(Ul, m), np.eye(m)],
            ]) >> eps * np.eye(n_x + 1 + m))
        variables["taus"] = taus

        SM = SxL + pr["Su"] @ F
        Sz = pr["Sz0"] + pr["Su"] @ l
        cons.append(cp.bmat([
            [gamma * np.eye(n_x), np.zeros((n_x, 1)), SM.T],
            [np.zeros((1, n_x)), _scalar(J - gamma), _row(Sz, nz)],
            [SM, _col(Sz, nz), np.eye(nz)],
        ]) >> eps * np.eye(n_x + 1 + nz))

        if fixed:
            objective = cp.Minimize(J)
        else:
            objective = cp.Minimize(pr["lam"] * J
                                    + pr["one_minus_lam"] * (-cp.log_det(variables["L"])))
        self.problem = cp.Problem(objective, cons)
        assert self.problem.is_dcp(dpp=True), "template must stay parameter-affine"
        self.params = pr
        self.variables = variables
        self.constraints = cons
        self.fixed = fixed

    def load(self, p: LocalProblem, nd: _Normalized, lam: float) -> None:
        pr = self.params
        n_x = p.center.size
        nz = n_x + p.inputs.dim + 1
        pr["A"].value = nd.A
        pr["B"].value = nd.B
        pr["mu0"].value = nd.g + nd.A @ nd.c - nd.c_plus
        pr["u_bar"].value = nd.u_bar
        pr["Ppinv"].value = 0.5 * (nd.P_plus_inv + nd.P_plus_inv.T)
        pr["Ew"].value = p.noise.vertices @ nd.E.T
        pr["lip_dx"].value = nd.lip_dx
        pr["lip_uw"].value = nd.lip_uw
        pr["v_const"].value = nd.lip_uw * nd.delta_W
        pr["Sx"].value = nd.S[:, :n_x]
        pr["Su"].value = nd.S[:, n_x:nz - 1]
        pr["Sz0"].value = nd.S[:, :n_x] @ nd.c + nd.S[:, -1]
        pr["lam"].value = lam
        pr["one_minus_lam"].value = 1.0 - lam
        for U_k, param in zip(p.inputs.constraints, pr["Uks"]):
            param.value = U_k
        if self.fixed:
            pr["AL"].value = nd.A @ nd.L_fixed
            pr["SxL"].value = nd.S[:, :n_x] @ nd.L_fixed
            pr["v_dx"].value = nd.lip_dx * nd.dX_fixed


class ProgramCache:
    """Per-worker cache of canonicalized program templates."""

    def __init__(self):
        self._templates: dict = {}

    def get(self, p: LocalProblem, fixed: bool, tol: Tolerances) -> _Template:
        sig = _signature(p, fixed, tol)
        if sig not in self._templates:
            self._templates[sig] = _Template(sig, tol)
        return self._templates[sig]


_SHARED_CACHE = ProgramCache()


def _max_violation(constraints) -> float:
    worst = 0.0
    for con in constraints:
        v = con.violation()
        worst = max(worst, float(np.max(v)) if np.ndim(v) else float(v))
    return worst


def _run_ladder(problem: cp.Problem, constraints, backends, tol: Tolerances) -> str:
    """Run the retry ladder; returns the name of the accepting backend.

    A solution counts regardless of the solver's accuracy label as long as
    the primal residuals pass the acceptance gate.
    """
    last = "numerical-failure"
    for backend in backends:
        status = backend.solve(problem)
        if status == "infeasible":
            raise Infeasible(f"{backend.name} reported infeasibility")
        if status in ("optimal", "optimal-inaccurate"):
            if _max_violation(constraints) <= tol.residual:
                return backend.name
            last = "numerical-failure"
            continue
        last = status
    raise Infeasible(f"no backend produced a trustworthy solution (last: {last})")


def _extract_solution(p: LocalProblem, variables: dict, nd: _Normalized, lam: float,
                      solver: str, fixed: Ellipsoid | None) -> LocalSolution:
    sigma = nd.sigma
    if fixed is None:
        L_s = np.asarray(variables["L"].value, dtype=float)
        L_s = 0.5 * (L_s + L_s.T)
        dX = sigma**2 * float(variables["delta_X"].value)
    else:
        L_s = nd.L_fixed
        dX = sigma**2 * nd.dX_fixed
    evals, evecs = np.linalg.eigh(L_s)
    if evals[0] <= 0.0:
        raise NumericalFailure("returned cell factor is not positive definite")
    P = (evecs / (sigma * evals) ** 2) @ evecs.T
    L_inv = (evecs / evals) @ evecs.T
    F = np.asarray(variables["F"].value, dtype=float)
    K = (F @ L_inv) / sigma
    l = np.asarray(variables["l"].value, dtype=float).reshape(-1)
    J = float(variables["J_bound"].value)
    dU = float(variables["delta_U"].value)
    logdet_L = float(np.sum(np.log(sigma * evals)))
    objective = lam * J - (1.0 - lam) * logdet_L
    if fixed is not None:
        P = fixed.shape
    return LocalSolution(center=p.center.copy(), P=P, K=K, l=l, J_bound=J,
                         delta_X=dX, delta_U=dU, objective=objective, solver=solver)


def solve_local_problem(p: LocalProblem, backends=None, tol: Tolerances = DEFAULT_TOL,
                        dump_path=None, cache: ProgramCache | None = None) -> LocalSolution:
    """Co-design the cell and controller; raises Infeasible when none exists.

    The objective trades the worst-case transition cost against the cell
    volume: lam * J + (1 - lam) * (-log det L).
    """
    backends = default_backend_ladder() if backends is None else backends
    _check_problem(p, None, tol)
    nd = _normalize(p, None)
    if dump_path is not None:
        dump_program(assemble_lmis(p, tol=tol), dump_path)
    template = (cache or _SHARED_CACHE).get(p, fixed=False, tol=tol)
    template.load(p, nd, p.lam)
    solver = _run_ladder(template.problem, template.constraints, backends, tol)
    return _extract_solution(p, template.variables, nd, p.lam, solver, None)


def new_transition(source: Ellipsoid, target: Ellipsoid, model: AffineModel,
                   lipschitz, inputs: InputSet, noise: VPolytope, cost: StageCost,
                   backends=None, tol: Tolerances = DEFAULT_TOL,
                   dump_path=None, cache: ProgramCache | None = None) -> LocalSolution:
    """Controller-only design from a fixed source cell into a target cell.

    The cell geometry (and hence its smallest bounding ball) is pinned, so the
    program minimizes the worst-case transition cost alone.
    """
    backends = default_backend_ladder() if backends is None else backends
    p = LocalProblem(center=source.center, target=target, model=model,
                     lipschitz=lipschitz, inputs=inputs, noise=noise, cost=cost,
                     lam=1.0)
    _check_problem(p, source, tol)
    nd = _normalize(p, source)
    if dump_path is not None:
        dump_program(assemble_lmis(p, fix_shape=source, tol=tol), dump_path)
    template = (cache or _SHARED_CACHE).get(p, fixed=True, tol=tol)
    template.load(p, nd, 1.0)
    solver = _run_ladder(template.problem, template.constraints, backends, tol)
    return _extract_solution(p, template.variables, nd, 1.0, solver, source)


# ---------------------------------------------------------------------------
# debug dump
# ---------------------------------------------------------------------------


def _fmt_matrix(name: str, M) -> str:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    rows = "\n".join("  " + " ".join(repr(float(v)) for v in row) for row in M)
    return f"{name} ({M.shape[0]}x{M.shape[1]}):\n{rows}"


def dump_program(program: AssembledProgram, path) -> None:
    """Write a self-describing text record of one assembled program."""
    d = program.data
    lines = [
        "local transition conic program",
        f"dimensions: n_x={d['n_x']} n_u={d['n_u']} n_w={d['n_w']}",
        f"normalization sigma: {d['sigma']!r}",
        f"lambda: {d['lambda']!r}",
        f"delta_W: {d['delta_W']!r}",
        f"shape fixed: {program.fixed_shape}",
        "block inventory: " + ", ".join(f"{k}={v}" for k, v in sorted(program.blocks.items())),
        _fmt_matrix("center", d["center"]),
        _fmt_matrix("target_center", d["target_center"]),
        _fmt_matrix("target_shape", d["target_shape"]),
        _fmt_matrix("A", d["A"]),
        _fmt_matrix("B", d["B"]),
        _fmt_matrix("E", d["E"]),
        _fmt_matrix("g", d["g"]),
        _fmt_matrix("u_bar", d["u_bar"]),
        _fmt_matrix("lipschitz", d["lipschitz"]),
        _fmt_matrix("noise_vertices", d["noise_vertices"]),
        _fmt_matrix("cost_Q", d["cost_Q"]),
    ]
    for k, U_k in enumerate(d["input_constraints"]):
        lines.append(_fmt_matrix(f"input_constraint_{k}", U_k))
    if d["fixed_shape"] is not None:
        lines.append(_fmt_matrix("fixed_shape", d["fixed_shape"]))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
