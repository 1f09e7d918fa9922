"""Polynomial discrete-time dynamics with exact Jacobians and error bounds.

Dynamics are declared as term lists (coefficient plus one exponent tuple per
variable group), so differentiation is exact coefficient manipulation and the
curvature bound over the declared domain box is a certified interval bound,
not a sampled estimate.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .geometry import Hyperrectangle, InputSet, VPolytope, _vector

__all__ = [
    "AffineModel",
    "Polynomial",
    "PolynomialSystem",
    "UnboundedDomain",
    "error_box",
    "linearize",
    "lipschitz_bound",
    "nominal_linearization_point",
]


class UnboundedDomain(ValueError):
    """A curvature bound was requested over an unbounded variable range."""


@dataclass(frozen=True)
class Polynomial:
    """Multivariate polynomial over the concatenated (x, u, w) variables.

    Stored as parallel arrays: coeffs[t] multiplies the monomial with
    exponents exps[t, :] over the joint variable vector.
    """

    n_vars: int
    coeffs: np.ndarray
    exps: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float).reshape(-1)
        e = np.asarray(self.exps, dtype=int)
        if e.ndim != 2 or e.shape != (c.size, self.n_vars):
            raise ValueError(f"exponents must be ({c.size}, {self.n_vars}), got {e.shape}")
        if np.any(e < 0):
            raise ValueError("exponents must be nonnegative")
        keep = c != 0.0
        c, e = c[keep].copy(), e[keep].copy()
        c.setflags(write=False)
        e.setflags(write=False)
        object.__setattr__(self, "coeffs", c)
        object.__setattr__(self, "exps", e)

    @classmethod
    def from_terms(cls, n_vars: int, terms) -> "Polynomial":
        coeffs = [t[0] for t in terms]
        exps = [t[1] for t in terms] if terms else np.zeros((0, n_vars), dtype=int)
        return cls(n_vars, np.asarray(coeffs, dtype=float), np.asarray(exps, dtype=int))

    @property
    def is_zero(self) -> bool:
        return self.coeffs.size == 0

    def __call__(self, z: np.ndarray) -> np.ndarray:
        """Evaluate at points z of shape (..., n_vars); returns shape (...)."""
        z = np.asarray(z, dtype=float)
        if self.is_zero:
            return np.zeros(z.shape[:-1])
        mono = np.prod(z[..., None, :] ** self.exps, axis=-1)
        return mono @ self.coeffs

    def diff(self, var: int) -> "Polynomial":
        """Exact partial derivative with respect to joint variable `var`."""
        e = self.exps[:, var]
        keep = e >= 1
        new_c = self.coeffs[keep] * e[keep]
        new_e = self.exps[keep].copy()
        new_e[:, var] -= 1
        return Polynomial(self.n_vars, new_c, new_e)

    def abs_bound(self, max_abs: np.ndarray) -> float:
        """Upper bound on |p(z)| when |z_i| <= max_abs[i] componentwise."""
        if self.is_zero:
            return 0.0
        with np.errstate(invalid="ignore"):
            mono = np.prod(np.where(self.exps > 0, max_abs[None, :] ** self.exps, 1.0), axis=-1)
        total = float(np.sum(np.abs(self.coeffs) * mono))
        if not np.isfinite(total):
            raise UnboundedDomain("monomial bound is infinite over the declared domain")
        return total


@dataclass(frozen=True)
class PolynomialSystem:
    """x(k+1) = f(x(k), u(k), w(k)) with polynomial components.

    The domain boxes bound where the model is declared valid; the state box
    is required, the input and noise boxes are optional and only consulted
    when a curvature bound actually involves those variables.
    """

    n_x: int
    n_u: int
    n_w: int
    components: tuple
    domain_x: Hyperrectangle
    domain_u: Hyperrectangle | None = None
    domain_w: Hyperrectangle | None = None

    def __post_init__(self):
        n_vars = self.n_x + self.n_u + self.n_w
        comps = tuple(self.components)
        if len(comps) != self.n_x:
            raise ValueError(f"expected {self.n_x} component polynomials, got {len(comps)}")
        for i, p in enumerate(comps):
            if p.n_vars != n_vars:
                raise ValueError(f"component {i}: expected {n_vars} variables, got {p.n_vars}")
        if self.domain_x.dim != self.n_x:
            raise ValueError("state domain box has the wrong dimension")
        if self.domain_u is not None and self.domain_u.dim != self.n_u:
            raise ValueError("input domain box has the wrong dimension")
        if self.domain_w is not None and self.domain_w.dim != self.n_w:
            raise ValueError("noise domain box has the wrong dimension")
        object.__setattr__(self, "components", comps)

    @property
    def n_vars(self) -> int:
        return self.n_x + self.n_u + self.n_w

    def _max_abs_bounds(self) -> np.ndarray:
        parts = []
        for box, n in ((self.domain_x, self.n_x), (self.domain_u, self.n_u), (self.domain_w, self.n_w)):
            if box is None:
                parts.append(np.full(n, np.inf))
            else:
                parts.append(np.maximum(np.abs(box.center - box.half_lengths),
                                        np.abs(box.center + box.half_lengths)))
        return np.concatenate(parts)

    def in_domain(self, x, u, w) -> bool:
        ok = self.domain_x.contains(x)
        if self.domain_u is not None:
            ok = ok and self.domain_u.contains(u)
        if self.domain_w is not None:
            ok = ok and self.domain_w.contains(w)
        return ok


@dataclass(frozen=True)
class AffineModel:
    """f_tilde(x, u, w) = A x + B u + E w + g, exact at the expansion point."""

    A: np.ndarray
    B: np.ndarray
    E: np.ndarray
    g: np.ndarray
    point: tuple  # (x_bar, u_bar, w_bar)

    def __call__(self, x, u, w) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        w = np.asarray(w, dtype=float)
        return x @ self.A.T + u @ self.B.T + w @ self.E.T + self.g


def eval_system(sys: PolynomialSystem, x, u, w, warn_outside: bool = True) -> np.ndarray:
    """Evaluate the dynamics at one point or a batch of points."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    w = np.asarray(w, dtype=float)
    single = x.ndim == 1
    if x.shape[-1] != sys.n_x or u.shape[-1] != sys.n_u or w.shape[-1] != sys.n_w:
        raise ValueError("dimension mismatch in eval")
    if warn_outside and single and not sys.in_domain(x, u, w):
        warnings.warn("evaluating dynamics outside the declared domain", RuntimeWarning,
                      stacklevel=2)
    z = np.concatenate([x, u, w], axis=-1)
    out = np.stack([p(z) for p in sys.components], axis=-1)
    return out


def linearize(sys: PolynomialSystem, point) -> AffineModel:
    """First-order model at (x_bar, u_bar, w_bar) with exact Jacobians."""
    x_bar = _vector(point[0], sys.n_x, "x_bar")
    u_bar = _vector(point[1], sys.n_u, "u_bar")
    w_bar = _vector(point[2], sys.n_w, "w_bar")
    z = np.concatenate([x_bar, u_bar, w_bar])
    J = np.empty((sys.n_x, sys.n_vars))
    for i, p in enumerate(sys.components):
        for v in range(sys.n_vars):
            J[i, v] = p.diff(v)(z)
    A = J[:, : sys.n_x]
    B = J[:, sys.n_x : sys.n_x + sys.n_u]
    E = J[:, sys.n_x + sys.n_u :]
    f0 = eval_system(sys, x_bar, u_bar, w_bar, warn_outside=False)
    g = f0 - A @ x_bar - B @ u_bar - E @ w_bar
    return AffineModel(A, B, E, g, (x_bar, u_bar, w_bar))


def lipschitz_bound(sys: PolynomialSystem) -> np.ndarray:
    """Per-component certified bound on the Jacobian's rate of change.

    Bounds the Frobenius norm of each component Hessian over the declared
    domain (Frobenius dominates the spectral norm). Raises UnboundedDomain if
    a required variable range is unbounded.
    """
    max_abs = sys._max_abs_bounds()
    n = sys.n_vars
    L = np.zeros(sys.n_x)
    for i, p in enumerate(sys.components):
        frob_sq = 0.0
        for a in range(n):
            pa = p.diff(a)
            if pa.is_zero:
                continue
            for b in range(a, n):
                entry = pa.diff(b).abs_bound(max_abs)
                frob_sq += entry**2 if a == b else 2.0 * entry**2
        L[i] = np.sqrt(frob_sq)
    return L


def error_box(L: np.ndarray, r_sq: float) -> Hyperrectangle:
    """Linearization-error box: half-lengths (1/2) * L_i * r^2 around zero."""
    L = np.asarray(L, dtype=float).reshape(-1)
    if r_sq < 0.0:
        raise ValueError("squared radius must be nonnegative")
    return Hyperrectangle(np.zeros(L.size), 0.5 * L * r_sq)


def nominal_linearization_point(cell, inputs: InputSet, noise: VPolytope, u_anchor=None):
    """Expansion point (cell center, input anchor, 0) used by the local design.

    `cell` may be an ellipsoid or a bare center vector. The default anchor is
    the origin of the input space; an override must lie in the admissible
    input set.
    """
    u_bar = np.zeros(inputs.dim) if u_anchor is None else _vector(u_anchor, inputs.dim, "u_anchor")
    if not inputs.contains(u_bar):
        raise ValueError("input anchor lies outside the admissible input set")
    center = np.asarray(getattr(cell, "center", cell), dtype=float).reshape(-1)
    return (center, u_bar, np.zeros(noise.dim))
