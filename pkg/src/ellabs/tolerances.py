"""Numerical tolerances and guards, collected in one place.

Every module takes its tolerances from a :class:`Tolerances` instance so a
problem file (or the CLI) can override any of them for a whole run.
"""
from __future__ import annotations

from dataclasses import dataclass, fields, replace


@dataclass(frozen=True)
class Tolerances:
    # geometry
    symmetry_rtol: float = 1e-9      # relative Frobenius check on shape matrices
    membership: float = 1e-9         # slack on the quadratic-form membership test
    inclusion_rtol: float = 1e-9     # scalar search for the inclusion certificate
    disjoint: float = 1e-9           # margin before two ellipsoids count as disjoint
    shrink_rtol: float = 1e-6        # bisection on the obstacle-shrink factor
    secular: float = 1e-10           # point-to-ellipsoid projection solve
    set_distance: float = 1e-7       # alternating-projection ellipsoid distance
    # synthesis
    psd_margin: float = 1e-8         # strict-feasibility shift on every LMI block
    residual: float = 1e-7           # accepted primal residual from the backend
    objective_match: float = 1e-6    # reported objective vs recomputed identity
    max_lmi_dim: int = 12            # reject state dims whose vertex count blows up
    factor_rtol: float = 1e-9        # cost factor check |S'S - Q| / |Q|


DEFAULT_TOL = Tolerances()

_FIELD_NAMES = {f.name for f in fields(Tolerances)}


def with_overrides(base: Tolerances, overrides: dict) -> Tolerances:
    """Return a copy of `base` with the given fields replaced.

    Unknown keys raise ValueError so typos in problem files fail loudly.
    """
    bad = set(overrides) - _FIELD_NAMES
    if bad:
        raise ValueError(f"unknown tolerance field(s): {sorted(bad)}")
    typed = {}
    for key, val in overrides.items():
        typed[key] = int(val) if key == "max_lmi_dim" else float(val)
    return replace(base, **typed)
