"""Set primitives: ellipsoids, hyperrectangles, vertex polytopes, input sets.

All values are immutable after construction and every operation is pure, so
they are safe to share between concurrent workers. Predicates that the
literature phrases as "a convex scalar optimization" (inclusion, disjointness,
obstacle shrink) are decided here by scalar searches with eigenvalue
feasibility checks; no conic solver is involved on these hot paths.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .tolerances import DEFAULT_TOL, Tolerances

__all__ = [
    "CenterBlocked",
    "DegenerateBox",
    "Ellipsoid",
    "Hyperrectangle",
    "InputSet",
    "VPolytope",
    "box_inner_ellipsoid",
    "box_outer_ellipsoid",
    "contains_point",
    "ellipsoid_inclusion",
    "ellipsoid_set_distance",
    "ellipsoids_disjoint",
    "max_sq_dist_to_point",
    "min_quadratic_over_ellipsoid",
    "point_to_ellipsoid_distance",
    "project_onto_ellipsoid",
    "shrink_to_avoid",
    "unit_ball_volume",
    "volume",
]


class CenterBlocked(Exception):
    """The cell center sits inside an obstacle, so no shrink factor works."""


class DegenerateBox(ValueError):
    """A box has a zero half-length where a positive one is required."""


def _vector(v, n: int | None = None, name: str = "vector") -> np.ndarray:
    a = np.asarray(v, dtype=float).reshape(-1)
    if n is not None and a.size != n:
        raise ValueError(f"{name}: expected dimension {n}, got {a.size}")
    return a


def _check_dims(a_dim: int, b_dim: int, what: str) -> None:
    if a_dim != b_dim:
        raise ValueError(f"dimension mismatch in {what}: {a_dim} vs {b_dim}")


@dataclass(frozen=True)
class Ellipsoid:
    """Set {x : (x - c)' P (x - c) <= 1} with P symmetric positive definite."""

    center: np.ndarray
    shape: np.ndarray

    def __post_init__(self):
        c = _vector(self.center, name="center")
        P = np.asarray(self.shape, dtype=float)
        if P.shape != (c.size, c.size):
            raise ValueError(f"shape matrix must be {c.size}x{c.size}, got {P.shape}")
        scale = np.linalg.norm(P, "fro")
        if scale == 0.0 or np.linalg.norm(P - P.T, "fro") > DEFAULT_TOL.symmetry_rtol * scale:
            raise ValueError("shape matrix is not symmetric within tolerance")
        P = 0.5 * (P + P.T)
        evals, evecs = np.linalg.eigh(P)
        if evals[0] <= 0.0:
            raise ValueError(f"shape matrix is not positive definite (min eig {evals[0]:.3e})")
        c.setflags(write=False)
        P.setflags(write=False)
        evals.setflags(write=False)
        evecs.setflags(write=False)
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "shape", P)
        object.__setattr__(self, "_evals", evals)
        object.__setattr__(self, "_evecs", evecs)

    @classmethod
    def ball(cls, center, radius: float) -> "Ellipsoid":
        c = _vector(center)
        if radius <= 0.0:
            raise ValueError("ball radius must be positive")
        return cls(c, np.eye(c.size) / radius**2)

    @property
    def dim(self) -> int:
        return self.center.size

    @property
    def eigenvalues(self) -> np.ndarray:
        return self._evals

    @property
    def max_semiaxis(self) -> float:
        return 1.0 / math.sqrt(self._evals[0])

    @property
    def max_radius_sq(self) -> float:
        """Squared radius of the smallest ball around the center containing the set."""
        return 1.0 / self._evals[0]

    def inv_shape(self) -> np.ndarray:
        V, lam = self._evecs, self._evals
        return (V / lam) @ V.T

    def sqrt_inv_shape(self) -> np.ndarray:
        """Symmetric L with L @ L = inv(P); maps the unit ball onto this set."""
        V, lam = self._evecs, self._evals
        return (V / np.sqrt(lam)) @ V.T

    def bounding_half_lengths(self) -> np.ndarray:
        return np.sqrt(np.diag(self.inv_shape()))

    def scaled(self, gamma: float) -> "Ellipsoid":
        return Ellipsoid(self.center, gamma * self.shape)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Uniform samples from the interior, shape (size, dim)."""
        n = self.dim
        z = rng.standard_normal((size, n))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        radii = rng.random(size) ** (1.0 / n)
        return self.center + (radii[:, None] * z) @ self.sqrt_inv_shape().T

    def sample_boundary(self, rng: np.random.Generator, size: int) -> np.ndarray:
        z = rng.standard_normal((size, self.dim))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        return self.center + z @ self.sqrt_inv_shape().T


@dataclass(frozen=True)
class Hyperrectangle:
    """Axis-aligned box given by a center and componentwise half-lengths."""

    center: np.ndarray
    half_lengths: np.ndarray

    def __post_init__(self):
        c = _vector(self.center, name="center")
        h = _vector(self.half_lengths, c.size, name="half_lengths")
        if np.any(h < 0.0):
            raise ValueError("half-lengths must be nonnegative")
        c.setflags(write=False)
        h.setflags(write=False)
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "half_lengths", h)

    @property
    def dim(self) -> int:
        return self.center.size

    def contains(self, x, tol: float = 0.0) -> bool:
        x = _vector(x, self.dim, "point")
        return bool(np.all(np.abs(x - self.center) <= self.half_lengths + tol))

    def vertices(self) -> np.ndarray:
        """All 2^n corner points, shape (2^n, n). Intended for small n."""
        n = self.dim
        signs = np.array(np.meshgrid(*([[-1.0, 1.0]] * n), indexing="ij")).reshape(n, -1).T
        return self.center + signs * self.half_lengths

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        lo = self.center - self.half_lengths
        hi = self.center + self.half_lengths
        return rng.uniform(lo, hi, size=(size, self.dim))


@dataclass(frozen=True)
class VPolytope:
    """Convex hull of a finite vertex list; must contain the origin."""

    vertices: np.ndarray

    def __post_init__(self):
        vs = np.asarray(self.vertices, dtype=float)
        if vs.ndim != 2 or vs.shape[0] < 1:
            raise ValueError("vertices must be a nonempty (N, dim) array")
        if not _origin_in_hull(vs):
            raise ValueError("the origin must lie in the convex hull of the vertices")
        vs.setflags(write=False)
        object.__setattr__(self, "vertices", vs)

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]


def _origin_in_hull(vs: np.ndarray, tol: float = 1e-9) -> bool:
    # Feasibility LP: weights >= 0, sum to 1, combine to the origin.
    n_v, dim = vs.shape
    if n_v == 1:
        return bool(np.linalg.norm(vs[0]) <= tol)
    A_eq = np.vstack([vs.T, np.ones((1, n_v))])
    b_eq = np.concatenate([np.zeros(dim), [1.0]])
    res = linprog(np.zeros(n_v), A_eq=A_eq, b_eq=b_eq, bounds=[(0, None)] * n_v, method="highs")
    return bool(res.success)


@dataclass(frozen=True)
class InputSet:
    """Intersection of (possibly degenerate) ellipsoids {u : ||M_k u|| <= 1}."""

    constraints: tuple

    def __post_init__(self):
        mats = tuple(np.asarray(M, dtype=float) for M in self.constraints)
        if len(mats) < 1:
            raise ValueError("at least one input constraint is required")
        n_u = mats[0].shape[-1]
        norm = []
        for k, M in enumerate(mats):
            if M.ndim > 2:
                raise ValueError(f"constraint {k}: expected a matrix, got ndim {M.ndim}")
            M = np.atleast_2d(M)
            if M.shape[1] != n_u:
                raise ValueError(f"constraint {k}: column dimension {M.shape[1]} != {n_u}")
            M = M.copy()
            M.setflags(write=False)
            norm.append(M)
        object.__setattr__(self, "constraints", tuple(norm))

    @property
    def dim(self) -> int:
        return self.constraints[0].shape[1]

    def contains(self, u, tol: float = DEFAULT_TOL.membership) -> bool:
        u = _vector(u, self.dim, "input")
        return all(np.linalg.norm(M @ u) <= 1.0 + tol for M in self.constraints)

    def contains_batch(self, us: np.ndarray, tol: float = DEFAULT_TOL.membership) -> np.ndarray:
        ok = np.ones(us.shape[0], dtype=bool)
        for M in self.constraints:
            ok &= np.linalg.norm(us @ M.T, axis=1) <= 1.0 + tol
        return ok


# ---------------------------------------------------------------------------
# predicates and scalar searches
# ---------------------------------------------------------------------------


def contains_point(E: Ellipsoid, x, tol: Tolerances = DEFAULT_TOL) -> bool:
    x = _vector(x, name="point")
    _check_dims(x.size, E.dim, "contains_point")
    d = x - E.center
    return bool(d @ E.shape @ d <= 1.0 + tol.membership)


def contains_points(E: Ellipsoid, xs: np.ndarray, tol: Tolerances = DEFAULT_TOL) -> np.ndarray:
    d = xs - E.center
    return np.einsum("ij,jk,ik->i", d, E.shape, d) <= 1.0 + tol.membership


def _homogeneous_form(E: Ellipsoid) -> np.ndarray:
    # M with (x, 1)' M (x, 1) = (x - c)' P (x - c) - 1
    P, c = E.shape, E.center
    Pc = P @ c
    return np.block([[P, -Pc[:, None]], [-Pc[None, :], np.array([[c @ Pc - 1.0]])]])


def ellipsoid_inclusion(E_in: Ellipsoid, E_out: Ellipsoid, tol: Tolerances = DEFAULT_TOL) -> bool:
    """Whether E_in is a subset of E_out.

    Uses the lossless single-constraint S-procedure: E_in is inside E_out iff
    some multiplier lam >= 0 makes lam*M_in - M_out positive semidefinite,
    where M_* are the homogeneous quadratic forms of the two sets. The left
    side's minimum eigenvalue is concave in lam, so a golden-section search
    over a doubling bracket decides feasibility.
    """
    _check_dims(E_in.dim, E_out.dim, "ellipsoid_inclusion")
    M_in = _homogeneous_form(E_in)
    M_out = _homogeneous_form(E_out)

    def g(lam: float) -> float:
        return float(np.linalg.eigvalsh(lam * M_in - M_out)[0])

    hi = 1.0
    for _ in range(80):
        if g(2.0 * hi) <= g(hi):
            break
        hi *= 2.0
    hi *= 2.0
    lo = 0.0
    # golden-section maximization of the concave minimum eigenvalue
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    x1 = b - invphi * (b - a)
    x2 = a + invphi * (b - a)
    g1, g2 = g(x1), g(x2)
    for _ in range(200):
        if (b - a) <= tol.inclusion_rtol * max(1.0, b):
            break
        if g1 < g2:
            a, x1, g1 = x1, x2, g2
            x2 = a + invphi * (b - a)
            g2 = g(x2)
        else:
            b, x2, g2 = x2, x1, g1
            x1 = b - invphi * (b - a)
            g1 = g(x1)
    best = max(g1, g2, g(0.5 * (a + b)))
    slack = tol.inclusion_rtol * max(1.0, float(np.abs(M_out).max()))
    return best >= -slack


def min_quadratic_over_ellipsoid(E_dom: Ellipsoid, E_form: Ellipsoid) -> float:
    """Minimum of the E_form quadratic form (x-c2)'P2(x-c2) over x in E_dom.

    After mapping E_dom to the unit ball this is a convex trust-region
    problem; the boundary case reduces to a one-dimensional secular equation
    in the Lagrange multiplier.
    """
    _check_dims(E_dom.dim, E_form.dim, "min_quadratic_over_ellipsoid")
    C = E_dom.sqrt_inv_shape()
    P2 = E_form.shape
    b = E_dom.center - E_form.center
    Q = C @ P2 @ C
    Q = 0.5 * (Q + Q.T)
    q = C @ (P2 @ b)
    r0 = float(b @ P2 @ b)
    lam, U = np.linalg.eigh(Q)
    qt = U.T @ q
    y_unc = -qt / lam
    if y_unc @ y_unc <= 1.0:
        return max(0.0, r0 + qt @ y_unc)  # value q'y* since Qy* = -q

    def norm_sq(nu: float) -> float:
        y = -qt / (lam + nu)
        return float(y @ y)

    lo_nu, hi_nu = 0.0, 1.0
    for _ in range(200):
        if norm_sq(hi_nu) <= 1.0:
            break
        hi_nu *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo_nu + hi_nu)
        if norm_sq(mid) > 1.0:
            lo_nu = mid
        else:
            hi_nu = mid
        if hi_nu - lo_nu <= 1e-14 * max(1.0, hi_nu):
            break
    nu = hi_nu
    y = -qt / (lam + nu)
    val = float(y @ (lam * y) + 2.0 * qt @ y + r0)
    return max(0.0, val)


def ellipsoids_disjoint(E1: Ellipsoid, E2: Ellipsoid, tol: Tolerances = DEFAULT_TOL) -> bool:
    """True iff the two sets have empty intersection."""
    _check_dims(E1.dim, E2.dim, "ellipsoids_disjoint")
    return min_quadratic_over_ellipsoid(E1, E2) > 1.0 + tol.disjoint


def shrink_to_avoid(E: Ellipsoid, obstacles, tol: Tolerances = DEFAULT_TOL) -> Ellipsoid:
    """Smallest uniform shrink E(c, gamma*P), gamma >= 1, clearing all obstacles.

    Raises CenterBlocked when the center itself lies inside an obstacle, in
    which case no finite shrink can help and the caller should discard the
    candidate.
    """
    obstacles = list(obstacles)
    if not obstacles:
        return E
    for obs in obstacles:
        _check_dims(E.dim, obs.dim, "shrink_to_avoid")
        if contains_point(obs, E.center, tol):
            raise CenterBlocked("cell center lies inside an obstacle")

    def clear(gamma: float) -> bool:
        cand = E.scaled(gamma)
        return all(ellipsoids_disjoint(cand, obs, tol) for obs in obstacles)

    if clear(1.0):
        return E
    hi = 2.0
    for _ in range(200):
        if clear(hi):
            break
        hi *= 2.0
    else:  # pragma: no cover - impossible for a strictly outside center
        raise CenterBlocked("no finite shrink factor separates the cell from the obstacles")
    lo = max(1.0, hi / 2.0)
    while (hi - lo) > tol.shrink_rtol * hi:
        mid = 0.5 * (lo + hi)
        if clear(mid):
            hi = mid
        else:
            lo = mid
    return E.scaled(hi)


def project_onto_ellipsoid(x, E: Ellipsoid, tol: Tolerances = DEFAULT_TOL) -> np.ndarray:
    """Euclidean projection of a point onto the ellipsoid."""
    x = _vector(x, E.dim, "point")
    z = E._evecs.T @ (x - E.center)
    lam = E._evals
    if z @ (lam * z) <= 1.0:
        return x.copy()

    def h(nu: float) -> float:
        return float(np.sum(lam * z**2 / (1.0 + nu * lam) ** 2)) - 1.0

    hi = 1.0
    for _ in range(300):
        if h(hi) < 0.0:
            break
        hi *= 2.0
    lo = 0.0
    nu = 0.5 * hi
    for _ in range(200):
        val = h(nu)
        if abs(val) <= tol.secular:
            break
        if val > 0.0:
            lo = nu
        else:
            hi = nu
        # Newton step on h, clipped to the bracket
        dz = 1.0 + nu * lam
        dh = float(np.sum(-2.0 * lam**2 * z**2 / dz**3))
        step = nu - val / dh if dh != 0.0 else 0.5 * (lo + hi)
        nu = step if lo < step < hi else 0.5 * (lo + hi)
    z_proj = z / (1.0 + nu * lam)
    return E.center + E._evecs @ z_proj


def point_to_ellipsoid_distance(x, E: Ellipsoid, tol: Tolerances = DEFAULT_TOL) -> float:
    x = _vector(x, E.dim, "point")
    _check_dims(x.size, E.dim, "point_to_ellipsoid_distance")
    return float(np.linalg.norm(x - project_onto_ellipsoid(x, E, tol)))


def ellipsoid_set_distance(E1: Ellipsoid, E2: Ellipsoid, tol: Tolerances = DEFAULT_TOL) -> float:
    """Euclidean distance between two ellipsoids (0 when they intersect).

    Intersection is decided exactly; the separated case runs alternating
    projections, which converge for disjoint convex sets.
    """
    _check_dims(E1.dim, E2.dim, "ellipsoid_set_distance")
    if min_quadratic_over_ellipsoid(E1, E2) <= 1.0 + tol.disjoint:
        return 0.0
    p = project_onto_ellipsoid(E2.center, E1, tol)
    prev = math.inf
    for _ in range(200):
        q = project_onto_ellipsoid(p, E2, tol)
        p = project_onto_ellipsoid(q, E1, tol)
        d = float(np.linalg.norm(p - q))
        if prev - d <= tol.set_distance:
            return d
        prev = d
    return prev


# ---------------------------------------------------------------------------
# box conversions, volume, polytope helpers
# ---------------------------------------------------------------------------


def box_outer_ellipsoid(H: Hyperrectangle) -> Ellipsoid:
    """Circumscribed axis-aligned ellipsoid; touches all 2^n box vertices."""
    h = H.half_lengths
    if np.any(h <= 0.0):
        raise DegenerateBox("outer ellipsoid requires strictly positive half-lengths")
    n = H.dim
    return Ellipsoid(H.center, np.diag(1.0 / (n * h**2)))


def box_inner_ellipsoid(H: Hyperrectangle) -> Ellipsoid:
    """Inscribed axis-aligned ellipsoid; touches the facet midpoints."""
    h = H.half_lengths
    if np.any(h <= 0.0):
        raise DegenerateBox("inner ellipsoid requires strictly positive half-lengths")
    return Ellipsoid(H.center, np.diag(1.0 / h**2))


def unit_ball_volume(n: int) -> float:
    return math.pi ** (n / 2.0) / math.gamma(n / 2.0 + 1.0)


def volume(E: Ellipsoid) -> float:
    return unit_ball_volume(E.dim) / math.sqrt(float(np.prod(E.eigenvalues)))


def max_sq_dist_to_point(W: VPolytope, w_bar) -> float:
    """max over the hull of ||w - w_bar||^2; attained at a vertex."""
    w_bar = _vector(w_bar, W.dim, "w_bar")
    d = W.vertices - w_bar
    return float(np.max(np.sum(d * d, axis=1)))
