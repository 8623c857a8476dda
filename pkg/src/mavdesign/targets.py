"""Target functionals of the mean curve and their parameter gradients."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DegenerateEffectError, DomainError, NoCrossingError, ValidationError
from .models import Candidate, DesignSpace, ModelFamily, ParamVector, _raw_grad

QUAD_ORDER = 64
ED_GRID = 512
ED_XTOL = 1e-10
ED_FD_REL_STEP = 1e-5


@dataclass(frozen=True)
class AUC:
    """Area under the mean curve over ``region``."""

    region: tuple

    def __post_init__(self):
        lo, hi = (float(v) for v in self.region)
        if not lo < hi:
            raise ValidationError(f"AUC region must satisfy lower < upper, got {self.region}")
        object.__setattr__(self, "region", (lo, hi))


@dataclass(frozen=True)
class ED:
    """Smallest dose reaching a fraction ``alpha`` of the effect range over ``space``."""

    alpha: float
    space: DesignSpace

    def __post_init__(self):
        if not 0.0 < float(self.alpha) < 1.0:
            raise ValidationError(f"ED alpha must lie in (0, 1), got {self.alpha}")
        object.__setattr__(self, "alpha", float(self.alpha))


@dataclass(frozen=True)
class PointMean:
    x0: float

    def __post_init__(self):
        object.__setattr__(self, "x0", float(self.x0))


def validate_target(target, space: DesignSpace) -> None:
    """Check that a target is compatible with the design space."""
    if isinstance(target, AUC):
        lo, hi = target.region
        if lo < space.lower or hi > space.upper:
            raise ValidationError(f"AUC region {target.region} must lie within [{space.lower}, {space.upper}]")
    elif isinstance(target, ED):
        if target.space != space:
            raise ValidationError("ED target refers to a different design space")
    elif isinstance(target, PointMean):
        if not space.contains(target.x0):
            raise ValidationError(f"PointMean x0={target.x0} outside the design space")
    else:
        raise ValidationError(f"unknown target {target!r}")


@lru_cache(maxsize=None)
def _gauss_legendre(lo: float, hi: float, order: int = QUAD_ORDER):
    nodes, weights = np.polynomial.legendre.leggauss(order)
    half = 0.5 * (hi - lo)
    return half * nodes + 0.5 * (hi + lo), half * weights


def _mean(family: ModelFamily, x, params: ParamVector):
    return family.mean(np.asarray(x, dtype=float), np.asarray(params.vartheta), np.asarray(params.gamma))


def ed_dose(family: ModelFamily, params: ParamVector, alpha: float, space: DesignSpace) -> float:
    """Grid-bracketed bisection for the ED level.

    The normalized effect is scanned on a uniform grid; the first grid cell
    whose right end attains ``alpha`` is bisected to width ``ED_XTOL`` and
    the crossing is placed by linear interpolation inside that final bracket.
    """
    a, b = space.lower, space.upper
    ea, eb = (float(v) for v in _mean(family, np.array([a, b]), params))
    span = eb - ea
    if not abs(span) >= 1e-12:
        raise DegenerateEffectError(f"eta(b) - eta(a) = {span:.3e}; ED undefined")

    def effect(x):
        return (_mean(family, x, params) - ea) / span

    grid = np.linspace(a, b, ED_GRID)
    vals = effect(grid)
    hits = np.flatnonzero(vals >= alpha)
    if hits.size == 0:
        raise NoCrossingError(f"normalized effect never reaches alpha={alpha}")
    j = int(hits[0])
    if j == 0:
        return float(grid[0])
    lo, hi = float(grid[j - 1]), float(grid[j])
    flo, fhi = float(vals[j - 1]), float(vals[j])
    while hi - lo > ED_XTOL:
        mid = 0.5 * (lo + hi)
        fm = float(effect(mid))
        if fm >= alpha:
            hi, fhi = mid, fm
        else:
            lo, flo = mid, fm
    if fhi > flo:
        return lo + (alpha - flo) * (hi - lo) / (fhi - flo)
    return hi


def eval_target(target, family: ModelFamily, params: ParamVector) -> float:
    family.validate(params)
    if isinstance(target, AUC):
        if target.region[0] < family.x_min:
            raise DomainError(f"AUC region starts below the family's dose range")
        nodes, weights = _gauss_legendre(*target.region)
        return float(weights @ _mean(family, nodes, params))
    if isinstance(target, ED):
        return ed_dose(family, params, target.alpha, target.space)
    if isinstance(target, PointMean):
        if target.x0 < family.x_min:
            raise DomainError(f"x0={target.x0} below the family's dose range")
        return float(_mean(family, target.x0, params))
    raise ValidationError(f"unknown target {target!r}")


def target_grad_full(target, family: ModelFamily, params: ParamVector) -> np.ndarray:
    """Gradient of the target w.r.t. (sigma2, vartheta, gamma).

    The sigma2 entry is identically zero for every built-in target.
    """
    family.validate(params)
    out = np.zeros(family.dim)
    if isinstance(target, AUC):
        nodes, weights = _gauss_legendre(*target.region)
        out[1:] = weights @ _raw_grad(family, nodes, params.vartheta, params.gamma)
    elif isinstance(target, PointMean):
        out[1:] = _raw_grad(family, np.array(target.x0), params.vartheta, params.gamma)
    elif isinstance(target, ED):
        base = params.full
        for j in range(1, family.dim):
            h = ED_FD_REL_STEP * max(1.0, abs(base[j]))
            up, dn = base.copy(), base.copy()
            up[j] += h
            dn[j] -= h
            fu = eval_target(target, family, ParamVector.from_full(up, family.n_vartheta))
            fd = eval_target(target, family, ParamVector.from_full(dn, family.n_vartheta))
            out[j] = (fu - fd) / (2 * h)
    else:
        raise ValidationError(f"unknown target {target!r}")
    return out


def target_grad_sub(target, candidate: Candidate, params: ParamVector) -> np.ndarray:
    """Gradient w.r.t. the candidate's free parameters at the nominal point.

    Frozen and free optional parameters alike sit at their nominal values,
    so this is the projection of the full gradient.
    """
    return candidate.projection @ target_grad_full(target, candidate.family, params)
