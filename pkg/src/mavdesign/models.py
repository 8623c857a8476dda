"""Regression families, parameter layout, candidate submodels and designs.

Parameter vectors always use the layout ``(sigma2, vartheta..., gamma...)``:
``sigma2`` first, then the mean parameters that every candidate keeps, then
the optional parameters in ascending index.  ``p`` counts ``sigma2`` together
with ``vartheta``; ``q`` counts ``gamma``.  Candidate subsets use 1-based
indices into ``gamma``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from scipy.special import expit

from .errors import DomainError, ValidationError

WEIGHT_SUM_TOL = 1e-12
DEFAULT_DROP_TOL = 1e-4


# ---------------------------------------------------------------------------
# Design domain
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DesignSpace:
    lower: float
    upper: float

    def __post_init__(self):
        lo, hi = float(self.lower), float(self.upper)
        if not (math.isfinite(lo) and math.isfinite(hi)) or not lo < hi:
            raise ValidationError(f"design space needs finite lower < upper, got [{lo}, {hi}]")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def length(self) -> float:
        return self.upper - self.lower

    def contains(self, x: float, tol: float = 0.0) -> bool:
        return self.lower - tol <= x <= self.upper + tol


@dataclass(frozen=True)
class Design:
    """Approximate design: support points with simplex weights.

    Construction validates the invariants; use :func:`normalize_design` to
    clean up raw optimizer output first.
    """

    points: tuple
    weights: tuple

    def __post_init__(self):
        pts = tuple(float(v) for v in self.points)
        wts = tuple(float(v) for v in self.weights)
        if len(pts) == 0 or len(pts) != len(wts):
            raise ValidationError("design needs k >= 1 points and as many weights")
        if any(not math.isfinite(v) for v in pts + wts):
            raise ValidationError("design entries must be finite")
        if any(b <= a for a, b in zip(pts, pts[1:])):
            raise ValidationError("design points must be strictly increasing")
        if any(w <= 0.0 for w in wts):
            raise ValidationError("design weights must be positive")
        if abs(math.fsum(wts) - 1.0) > WEIGHT_SUM_TOL:
            raise ValidationError(f"design weights sum to {math.fsum(wts)!r}, not 1")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", wts)

    @property
    def k(self) -> int:
        return len(self.points)

    @property
    def x(self) -> np.ndarray:
        return np.asarray(self.points)

    @property
    def w(self) -> np.ndarray:
        return np.asarray(self.weights)

    def check_within(self, space: DesignSpace) -> None:
        for v in self.points:
            if not space.contains(v):
                raise DomainError(f"design point {v} outside [{space.lower}, {space.upper}]")

    @classmethod
    def point_mass(cls, x: float) -> "Design":
        return cls((x,), (1.0,))

    @classmethod
    def uniform(cls, points: Sequence[float]) -> "Design":
        k = len(points)
        return cls(tuple(points), tuple([1.0 / k] * k))


def normalize_design(
    points,
    weights=None,
    space: Optional[DesignSpace] = None,
    merge_tol: Optional[float] = None,
    drop_tol: float = DEFAULT_DROP_TOL,
) -> Design:
    """Turn raw point/weight lists into a valid :class:`Design`.

    Points are sorted, runs of points with consecutive gaps below
    ``merge_tol`` are merged (weights summed, location at the weighted mean),
    weights below ``drop_tol`` are removed and the rest renormalized.
    ``points`` may also be a :class:`Design`, in which case ``weights`` is
    ignored.  A design that needs no merging, dropping or renormalizing is
    returned unchanged, which makes the operation idempotent.
    """
    if isinstance(points, Design):
        points, weights = points.points, points.weights
    x = np.asarray(points, dtype=float).ravel()
    w = np.asarray(weights, dtype=float).ravel()
    if x.size == 0 or x.size != w.size:
        raise ValidationError("points and weights must be nonempty and of equal length")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(w))):
        raise ValidationError("non-finite design entries")
    if space is not None:
        for v in x:
            if not space.contains(v):
                raise DomainError(f"design point {v} outside [{space.lower}, {space.upper}]")
        if merge_tol is None:
            merge_tol = 1e-3 * space.length
    if merge_tol is None:
        merge_tol = 0.0
    w = np.clip(w, 0.0, None)

    order = np.argsort(x, kind="stable")
    x, w = x[order], w[order]
    changed = bool(np.any(order != np.arange(x.size)))

    merged_x, merged_w = [], []
    start = 0
    for i in range(1, x.size + 1):
        if i == x.size or x[i] - x[i - 1] >= merge_tol and x[i] > x[i - 1]:
            cx, cw = x[start:i], w[start:i]
            tot = cw.sum()
            if i - start == 1:
                merged_x.append(cx[0])
            else:
                changed = True
                merged_x.append(float(cx @ cw / tot) if tot > 0 else float(cx.mean()))
            merged_w.append(tot)
            start = i
    mx, mw = np.array(merged_x), np.array(merged_w)

    total = mw.sum()
    if total <= 0:
        raise ValidationError("design has no positive weight")
    keep = mw / total >= drop_tol
    if not np.any(keep):
        raise ValidationError("design is empty after dropping negligible weights")
    if not np.all(keep):
        changed = True
    mx, mw = mx[keep], mw[keep]
    if changed or abs(math.fsum(mw) - 1.0) > WEIGHT_SUM_TOL:
        mw = mw / math.fsum(mw)
    return Design(tuple(mx.tolist()), tuple(mw.tolist()))


# ---------------------------------------------------------------------------
# Parameters and families
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ParamVector:
    sigma2: float
    vartheta: tuple
    gamma: tuple

    def __post_init__(self):
        object.__setattr__(self, "sigma2", float(self.sigma2))
        object.__setattr__(self, "vartheta", tuple(float(v) for v in self.vartheta))
        object.__setattr__(self, "gamma", tuple(float(v) for v in self.gamma))
        if not self.sigma2 > 0:
            raise DomainError(f"sigma2 must be positive, got {self.sigma2}")

    @property
    def full(self) -> np.ndarray:
        """Canonical flat vector (sigma2, vartheta, gamma)."""
        return np.array((self.sigma2,) + self.vartheta + self.gamma)

    @property
    def mean_params(self) -> np.ndarray:
        return np.array(self.vartheta + self.gamma)

    @classmethod
    def from_full(cls, full, n_vartheta: int) -> "ParamVector":
        full = [float(v) for v in full]
        return cls(full[0], tuple(full[1 : 1 + n_vartheta]), tuple(full[1 + n_vartheta :]))

    def replace(self, **changes) -> "ParamVector":
        d = dict(sigma2=self.sigma2, vartheta=self.vartheta, gamma=self.gamma)
        d.update(changes)
        return ParamVector(**d)


MeanFn = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ModelFamily:
    """Wide Gaussian regression model ``y ~ N(eta(x, vartheta, gamma), sigma2)``.

    ``mean`` and ``mean_grad`` take an array of doses and 1-D parameter
    arrays; ``mean_grad`` returns shape ``x.shape + (p - 1 + q,)``.  When
    ``mean_grad`` is omitted a central finite-difference gradient is used.
    ``fit_bounds`` holds per-mean-parameter (lower, upper) boxes used by the
    maximum-likelihood fits; ``check`` raises :class:`DomainError` for
    inadmissible parameters.
    """

    name: str
    p: int
    q: int
    gamma0: tuple
    mean: MeanFn
    mean_grad: Optional[MeanFn] = None
    x_min: float = -math.inf
    check: Optional[Callable[[np.ndarray, np.ndarray], None]] = None
    fit_bounds: Optional[tuple] = None
    param_names: tuple = ()
    stacked: bool = False  # mean/mean_grad accept (A, n) parameter stacks

    def __post_init__(self):
        object.__setattr__(self, "gamma0", tuple(float(v) for v in self.gamma0))
        if len(self.gamma0) != self.q:
            raise ValidationError(f"gamma0 has length {len(self.gamma0)}, expected q={self.q}")
        if self.p < 1 or self.q < 0:
            raise ValidationError("need p >= 1 (sigma2 included) and q >= 0")

    @property
    def n_vartheta(self) -> int:
        return self.p - 1

    @property
    def n_mean(self) -> int:
        return self.p - 1 + self.q

    @property
    def dim(self) -> int:
        return self.p + self.q

    def validate(self, params: ParamVector) -> None:
        if len(params.vartheta) != self.n_vartheta or len(params.gamma) != self.q:
            raise ValidationError(
                f"{self.name}: expected {self.n_vartheta} vartheta and {self.q} gamma, "
                f"got {len(params.vartheta)} and {len(params.gamma)}"
            )
        if self.check is not None:
            self.check(np.asarray(params.vartheta), np.asarray(params.gamma))

    def nominal(self, sigma2: float, vartheta: Sequence[float]) -> ParamVector:
        return ParamVector(sigma2, tuple(vartheta), self.gamma0)


def _fd_gradient(mean: MeanFn, x, vartheta, gamma) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    theta = np.concatenate([vartheta, gamma]).astype(float)
    nv = len(vartheta)
    out = np.empty(x.shape + (theta.size,))
    for j in range(theta.size):
        h = 1e-6 * max(1.0, abs(theta[j]))
        tp, tm = theta.copy(), theta.copy()
        tp[j] += h
        tm[j] -= h
        fp = mean(x, tp[:nv], tp[nv:])
        fm = mean(x, tm[:nv], tm[nv:])
        out[..., j] = (np.asarray(fp) - np.asarray(fm)) / (2 * h)
    return out


# sigmoid Emax: gamma1 + vartheta1 * x^h / (x^h + vartheta2^h), h = gamma2


def _emax_check(vartheta, gamma):
    if not vartheta[1] > 0:
        raise DomainError(f"sigmoid Emax needs vartheta2 > 0, got {vartheta[1]}")
    if not gamma[1] > 0:
        raise DomainError(f"sigmoid Emax needs gamma2 > 0, got {gamma[1]}")


def _cols(params, x, n):
    """Split a parameter array into ``n`` columns broadcastable against ``x``.

    ``params`` is 1-D for a single point or (A, n) for a stack of points, in
    which case results gain a leading atom axis.
    """
    params = np.asarray(params, dtype=float)
    shape = params.shape[:-1] + (1,) * np.ndim(x)
    return [params[..., i].reshape(shape) for i in range(n)]


def _emax_frac(x, ed50, hill):
    x = np.asarray(x, dtype=float)
    pos = x > 0
    # (ed50/x)^h form is stable for large h; x = 0 is the limit 0
    with np.errstate(divide="ignore", over="ignore"):
        ratio = np.where(pos, np.power(ed50 / np.where(pos, x, 1.0), hill), np.inf)
    return 1.0 / (1.0 + ratio)


def emax_mean(x, vartheta, gamma):
    emax, ed50 = _cols(vartheta, x, 2)
    base, hill = _cols(gamma, x, 2)
    return base + emax * _emax_frac(x, ed50, hill)


def emax_grad(x, vartheta, gamma):
    x = np.asarray(x, dtype=float)
    emax, ed50 = _cols(vartheta, x, 2)
    _, hill = _cols(gamma, x, 2)
    f = _emax_frac(x, ed50, hill)
    ff = f * (1.0 - f)
    pos = x > 0
    logx = np.where(pos, np.log(np.where(pos, x, 1.0)), 0.0)
    logratio = np.where(pos, logx - np.log(ed50), 0.0)
    return np.stack(
        np.broadcast_arrays(f, -emax * ff * hill / ed50, 1.0, emax * ff * logratio),
        axis=-1,
    )


# 4-parameter logistic: gamma1 + vartheta1 / (1 + exp((vartheta2 - x) / gamma2))


def _logistic_check(vartheta, gamma):
    if not vartheta[1] > 0:
        raise DomainError(f"logistic needs vartheta2 > 0, got {vartheta[1]}")
    if not gamma[1] > 0:
        raise DomainError(f"logistic needs gamma2 > 0, got {gamma[1]}")


def logistic_mean(x, vartheta, gamma):
    x = np.asarray(x, dtype=float)
    emax, ed50 = _cols(vartheta, x, 2)
    base, slope = _cols(gamma, x, 2)
    return base + emax * expit((x - ed50) / slope)


def logistic_grad(x, vartheta, gamma):
    x = np.asarray(x, dtype=float)
    emax, ed50 = _cols(vartheta, x, 2)
    _, slope = _cols(gamma, x, 2)
    f = expit((x - ed50) / slope)
    ff = f * (1.0 - f)
    return np.stack(
        np.broadcast_arrays(f, -emax * ff / slope, 1.0, emax * ff * (ed50 - x) / slope**2),
        axis=-1,
    )


SIGMOID_EMAX = ModelFamily(
    name="sigmoid_emax",
    p=3,
    q=2,
    gamma0=(0.0, 1.0),
    mean=emax_mean,
    mean_grad=emax_grad,
    x_min=0.0,
    check=_emax_check,
    # ED50 in [0.001, 1.5] x max dose, Hill in [0.5, 10]; max dose 8
    fit_bounds=((-math.inf, math.inf), (0.008, 12.0), (-math.inf, math.inf), (0.5, 10.0)),
    param_names=("sigma2", "vartheta1", "vartheta2", "gamma1", "gamma2"),
    stacked=True,
)

LOGISTIC4 = ModelFamily(
    name="logistic4",
    p=3,
    q=2,
    gamma0=(0.0, 1.0),
    mean=logistic_mean,
    mean_grad=logistic_grad,
    x_min=0.0,
    check=_logistic_check,
    # ED50 in [0.001, 1.5] x max dose, slope in [0.01, 0.5] x max dose
    fit_bounds=((-math.inf, math.inf), (0.008, 12.0), (-math.inf, math.inf), (0.08, 4.0)),
    param_names=("sigma2", "vartheta1", "vartheta2", "gamma1", "gamma2"),
    stacked=True,
)

_REGISTRY: dict = {f.name: f for f in (SIGMOID_EMAX, LOGISTIC4)}


def register_family(family: ModelFamily, *, overwrite: bool = False) -> ModelFamily:
    if family.name in _REGISTRY and not overwrite:
        raise ValidationError(f"family {family.name!r} already registered")
    _REGISTRY[family.name] = family
    return family


def get_family(name: str) -> ModelFamily:
    try:
        return _REGISTRY[name]
    except KeyError:
        raise ValidationError(
            f"unknown family {name!r}; known: {sorted(_REGISTRY)}"
        ) from None


def _check_x(family: ModelFamily, x, space: Optional[DesignSpace]):
    xa = np.asarray(x, dtype=float)
    lo = family.x_min if space is None else max(space.lower, family.x_min)
    hi = math.inf if space is None else space.upper
    if np.any(xa < lo) or np.any(xa > hi) or not np.all(np.isfinite(xa)):
        raise DomainError(f"dose {x} outside admissible range [{lo}, {hi}] for {family.name}")


def mean_eta(family: ModelFamily, x, params: ParamVector, space: Optional[DesignSpace] = None):
    """Mean response at dose(s) ``x``; scalar in, float out."""
    _check_x(family, x, space)
    family.validate(params)
    out = family.mean(np.asarray(x, dtype=float), np.asarray(params.vartheta), np.asarray(params.gamma))
    return float(out) if np.ndim(out) == 0 else np.asarray(out)


def grad_eta(family: ModelFamily, x, params: ParamVector, space: Optional[DesignSpace] = None) -> np.ndarray:
    """Gradient of the mean w.r.t. (vartheta, gamma), last axis in canonical order."""
    _check_x(family, x, space)
    family.validate(params)
    return _raw_grad(family, x, params.vartheta, params.gamma)


def _raw_grad(family: ModelFamily, x, vartheta, gamma) -> np.ndarray:
    v, g = np.asarray(vartheta, dtype=float), np.asarray(gamma, dtype=float)
    if family.mean_grad is not None:
        return np.asarray(family.mean_grad(np.asarray(x, dtype=float), v, g))
    return _fd_gradient(family.mean, x, v, g)


# ---------------------------------------------------------------------------
# Candidate submodels
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CandidateSubset:
    indices: tuple = ()

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if len(set(idx)) != len(idx):
            raise ValidationError(f"duplicate indices in candidate subset {idx}")
        object.__setattr__(self, "indices", tuple(sorted(idx)))

    def validate(self, q: int) -> None:
        for i in self.indices:
            if not 1 <= i <= q:
                raise ValidationError(f"candidate index {i} outside 1..{q}")

    def __len__(self):
        return len(self.indices)


@dataclass(frozen=True)
class Candidate:
    """Submodel ``f_S`` of a family: free (theta, gamma_S), the rest frozen."""

    family: ModelFamily
    subset: CandidateSubset
    free_index: tuple = field(init=False)

    def __post_init__(self):
        self.subset.validate(self.family.q)
        p = self.family.p
        idx = tuple(range(p)) + tuple(p + i - 1 for i in self.subset.indices)
        object.__setattr__(self, "free_index", idx)

    @property
    def dim(self) -> int:
        return len(self.free_index)

    @property
    def mean_index(self) -> np.ndarray:
        """Positions of the free mean parameters inside the (vartheta, gamma) gradient."""
        return np.asarray(self.free_index[1:], dtype=int) - 1

    @property
    def projection(self) -> np.ndarray:
        P = np.zeros((self.dim, self.family.dim))
        P[np.arange(self.dim), self.free_index] = 1.0
        return P

    @property
    def is_wide(self) -> bool:
        return len(self.subset) == self.family.q

    @property
    def n_params(self) -> int:
        """Number of estimated parameters, sigma2 included."""
        return self.dim

    def embed(self, free, gamma0: Optional[Sequence[float]] = None) -> ParamVector:
        """Map the free vector (theta, gamma_S) to a full ParamVector."""
        free = np.asarray(free, dtype=float)
        if free.size != self.dim:
            raise ValidationError(f"expected {self.dim} free parameters, got {free.size}")
        full = np.concatenate([[0.0] * self.family.p, self.family.gamma0 if gamma0 is None else gamma0]).astype(float)
        full[list(self.free_index)] = free
        return ParamVector.from_full(full, self.family.n_vartheta)

    def restrict(self, params: ParamVector) -> np.ndarray:
        return params.full[list(self.free_index)]

    def label(self) -> str:
        return "S{" + ",".join(str(i) for i in self.subset.indices) + "}"


def build_candidate(family: ModelFamily, S) -> Candidate:
    if not isinstance(S, CandidateSubset):
        S = CandidateSubset(tuple(S))
    return Candidate(family, S)


@dataclass(frozen=True)
class AveragingScheme:
    candidates: tuple
    g_weights: tuple

    def __post_init__(self):
        cands = tuple(c if isinstance(c, CandidateSubset) else CandidateSubset(tuple(c)) for c in self.candidates)
        g = tuple(float(v) for v in self.g_weights)
        if not cands or len(cands) != len(g):
            raise ValidationError("scheme needs r >= 1 candidates and as many weights")
        if len(set(cands)) != len(cands):
            raise ValidationError("candidate subsets must be pairwise distinct")
        if any(v < 0 for v in g):
            raise ValidationError("g must be nonnegative")
        if abs(math.fsum(g) - 1.0) > WEIGHT_SUM_TOL:
            raise ValidationError(f"g must sum to 1 (got {math.fsum(g)!r})")
        object.__setattr__(self, "candidates", cands)
        object.__setattr__(self, "g_weights", g)

    @property
    def r(self) -> int:
        return len(self.candidates)

    def build(self, family: ModelFamily) -> list:
        return [build_candidate(family, s) for s in self.candidates]


@dataclass(frozen=True)
class Misspecification:
    """Local deviation ``gamma_true = gamma0 + delta / sqrt(n)``; stores raw delta."""

    delta: tuple
    n: int

    def __post_init__(self):
        object.__setattr__(self, "delta", tuple(float(v) for v in self.delta))
        if int(self.n) != self.n or self.n < 1:
            raise ValidationError(f"n must be a positive integer, got {self.n}")
        object.__setattr__(self, "n", int(self.n))

    @classmethod
    def from_scaled(cls, delta_over_sqrt_n: Iterable[float], n: int) -> "Misspecification":
        return cls(tuple(float(v) * math.sqrt(n) for v in delta_over_sqrt_n), n)

    @property
    def delta_over_sqrt_n(self) -> tuple:
        return tuple(v / math.sqrt(self.n) for v in self.delta)

    @property
    def vector(self) -> np.ndarray:
        return np.asarray(self.delta)
