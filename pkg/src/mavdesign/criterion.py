"""Information matrices and the asymptotic MSE criterion of the averaged estimate.

Everything is evaluated at a nominal point ``(theta, gamma)``; for candidate
``S`` the frozen optional parameters sit at the nominal ``gamma`` as well, so
``J_S = P_S J P_S^T`` and ``c_S = P_S c``.  Linear systems in ``J_S`` are
solved only after a condition-number guard; the single-candidate helpers
use a Cholesky factorization, the batched kernel a symmetric eigenvalue
guard followed by a direct solve.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import SingularInformationError, ValidationError
from .models import (
    WEIGHT_SUM_TOL,
    AveragingScheme,
    Candidate,
    Design,
    Misspecification,
    ModelFamily,
    ParamVector,
    _check_x,
    _raw_grad,
    build_candidate,
)
from .targets import target_grad_full, target_grad_sub

COND_LIMIT = 1e12


@dataclass(frozen=True)
class PriorAtom:
    params: ParamVector
    weight: float
    delta: Optional[tuple] = None  # per-atom raw delta override


@dataclass(frozen=True)
class PriorSpec:
    """Finite prior over nominal parameter points plus the deviation direction."""

    atoms: tuple
    misspec: Misspecification

    def __post_init__(self):
        atoms = tuple(a if isinstance(a, PriorAtom) else PriorAtom(*a) for a in self.atoms)
        if not atoms:
            raise ValidationError("prior needs at least one atom")
        wts = [float(a.weight) for a in atoms]
        if any(w <= 0 for w in wts):
            raise ValidationError("prior weights must be positive")
        if abs(math.fsum(wts) - 1.0) > WEIGHT_SUM_TOL:
            raise ValidationError(f"prior weights sum to {math.fsum(wts)!r}, not 1")
        object.__setattr__(self, "atoms", atoms)

    @classmethod
    def single(cls, params: ParamVector, misspec: Misspecification) -> "PriorSpec":
        return cls((PriorAtom(params, 1.0),), misspec)

    @property
    def weights(self) -> np.ndarray:
        return np.array([a.weight for a in self.atoms])

    def delta_for(self, i: int) -> np.ndarray:
        d = self.atoms[i].delta
        return np.asarray(self.misspec.delta if d is None else d, dtype=float)

    def validate(self, family: ModelFamily) -> None:
        for i, a in enumerate(self.atoms):
            family.validate(a.params)
            if len(self.delta_for(i)) != family.q:
                raise ValidationError(f"atom {i}: delta must have length q={family.q}")


@dataclass
class CriterionReport:
    phi: float
    nu_by_atom: list
    tau2_by_atom: list


# ---------------------------------------------------------------------------
# Single-candidate building blocks
# ---------------------------------------------------------------------------


def _fisher_from_grad(grad: np.ndarray, sigma2: float) -> np.ndarray:
    m = grad.shape[-1]
    out = np.zeros((m + 1, m + 1))
    out[0, 0] = 1.0 / (2.0 * sigma2**2)
    out[1:, 1:] = np.outer(grad, grad) / sigma2
    return out


def fisher_point(candidate: Candidate, x: float, params: ParamVector) -> np.ndarray:
    """Gaussian Fisher information of one observation at ``x`` in candidate ``S``."""
    fam = candidate.family
    _check_x(fam, x, None)
    fam.validate(params)
    g = _raw_grad(fam, np.asarray(float(x)), params.vartheta, params.gamma)
    return _fisher_from_grad(g[candidate.mean_index], params.sigma2)


def info_matrix(candidate: Candidate, design: Design, params: ParamVector) -> np.ndarray:
    fam = candidate.family
    _check_x(fam, design.x, None)
    fam.validate(params)
    G = _raw_grad(fam, design.x, params.vartheta, params.gamma)[:, candidate.mean_index]
    m = G.shape[1]
    out = np.zeros((m + 1, m + 1))
    out[0, 0] = 1.0 / (2.0 * params.sigma2**2)
    out[1:, 1:] = (G.T * design.w) @ G / params.sigma2
    return out


def _factor(J: np.ndarray, what: str):
    cond = np.linalg.cond(J)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise SingularInformationError(f"{what}: information matrix singular (cond={cond:.3e})", cond)
    try:
        return cho_factor(J, lower=True)
    except np.linalg.LinAlgError:
        raise SingularInformationError(f"{what}: information matrix not positive definite") from None


def _describe(candidate: Candidate, design: Design) -> str:
    return f"candidate {candidate.label()} at design points {list(design.points)}"


def h_vector(candidate: Candidate, design: Design, params: ParamVector, target) -> np.ndarray:
    """``P_S^T J_S^{-1} c_S``, always of length p + q."""
    JS = info_matrix(candidate, design, params)
    fac = _factor(JS, _describe(candidate, design))
    cS = target_grad_sub(target, candidate, params)
    return candidate.projection.T @ cho_solve(fac, cS)


def L_matrix(candidate: Candidate, design: Design, params: ParamVector) -> np.ndarray:
    fam = candidate.family
    wide = build_candidate(fam, range(1, fam.q + 1))
    J = info_matrix(wide, design, params)
    JS = info_matrix(candidate, design, params)
    fac = _factor(JS, _describe(candidate, design))
    P = candidate.projection
    inner = P.T @ cho_solve(fac, P @ J) - np.eye(fam.dim)
    return inner[:, fam.p :]


# ---------------------------------------------------------------------------
# Batched evaluation over prior atoms
# ---------------------------------------------------------------------------


@dataclass
class CriterionState:
    """All per-atom quantities at one design; arrays have a leading atom axis.

    ``padded[j]`` is ``J_S`` of candidate ``j`` embedded in a full-size matrix
    whose frozen rows/columns carry ``J[0, 0]`` on the diagonal, so solving
    with a right-hand side that vanishes on frozen positions yields
    ``P_S^T J_S^{-1} P_S b``.  The padding value is a diagonal entry of
    ``J_S`` and an eigenvalue of it (the sigma2 block decouples), so the
    padded condition number equals that of ``J_S``.
    """

    J: np.ndarray  # (A, d, d) wide information
    padded: np.ndarray  # (r, A, d, d)
    masks: np.ndarray  # (r, d) free-parameter indicators
    h: np.ndarray  # (r, A, d)
    nu_by_cand: np.ndarray  # (r, A)
    nu: np.ndarray  # (A,)
    H: np.ndarray  # (A, d) = sum_j g_j h_j
    tau2: np.ndarray  # (A,)

    @property
    def phi_by_atom(self) -> np.ndarray:
        return self.nu**2 + self.tau2

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """``P_S^T J_S^{-1} P_S rhs`` for every candidate; rhs (A, d) -> (r, A, d)."""
        b = rhs[None, :, :] * self.masks[:, None, :]
        return np.linalg.solve(self.padded, b[..., None])[..., 0]


class CriterionProblem:
    """Precomputed scheme/prior/target bundle for fast repeated evaluation.

    The target gradients depend only on the nominal points, so they are
    computed once per atom here and reused for every design.
    """

    def __init__(self, scheme: AveragingScheme, family: ModelFamily, prior: PriorSpec, target):
        prior.validate(family)
        self.scheme = scheme
        self.family = family
        self.prior = prior
        self.target = target
        self.candidates = scheme.build(family)
        self.g = np.asarray(scheme.g_weights)
        self.atom_weights = prior.weights
        A, d, p = len(prior.atoms), family.dim, family.p
        self.sigma2 = np.array([a.params.sigma2 for a in prior.atoms])
        self.vartheta = np.array([a.params.vartheta for a in prior.atoms]).reshape(A, family.n_vartheta)
        self.gamma = np.array([a.params.gamma for a in prior.atoms]).reshape(A, family.q)
        self.c = np.array([target_grad_full(target, family, a.params) for a in prior.atoms])
        self.e = np.zeros((A, d))
        for i in range(A):
            self.e[i, p:] = prior.delta_for(i)
        self.masks = np.zeros((len(self.candidates), d))
        for j, cand in enumerate(self.candidates):
            self.masks[j, list(cand.free_index)] = 1.0
        self._pair = self.masks[:, :, None] * self.masks[:, None, :]
        self._pad = np.einsum("ri,ij->rij", 1.0 - self.masks, np.eye(d))

    @property
    def n_atoms(self) -> int:
        return len(self.atom_weights)

    def mean_grads(self, x: np.ndarray) -> np.ndarray:
        """(A, k, p - 1 + q) mean gradients at doses ``x``."""
        x = np.asarray(x, dtype=float)
        if self.family.stacked and self.family.mean_grad is not None:
            return self.family.mean_grad(x, self.vartheta, self.gamma)
        return np.stack([_raw_grad(self.family, x, v, g) for v, g in zip(self.vartheta, self.gamma)])

    def wide_info(self, x: np.ndarray, w: np.ndarray) -> np.ndarray:
        G = self.mean_grads(x)
        A, d = self.n_atoms, self.family.dim
        J = np.zeros((A, d, d))
        J[:, 0, 0] = 1.0 / (2.0 * self.sigma2**2)
        J[:, 1:, 1:] = np.einsum("akm,k,akn->amn", G, w, G) / self.sigma2[:, None, None]
        return J

    def state(self, x, w) -> CriterionState:
        x = np.asarray(x, dtype=float)
        w = np.asarray(w, dtype=float)
        _check_x(self.family, x, None)
        J = self.wide_info(x, w)
        padded = J[None] * self._pair[:, None] + self._pad[:, None] * J[None, :, :1, :1]
        eig = np.linalg.eigvalsh(padded)  # ascending, (r, A, d)
        with np.errstate(divide="ignore", invalid="ignore"):
            cond = np.where(eig[..., 0] > 0, eig[..., -1] / eig[..., 0], np.inf)
        bad = ~np.isfinite(cond) | (cond > COND_LIMIT)
        if np.any(bad):
            j, i = (int(v) for v in np.argwhere(bad)[0])
            raise SingularInformationError(
                f"candidate {self.candidates[j].label()} singular at prior atom {i} "
                f"(cond={cond[j, i]:.3e}) for design points {x.tolist()}",
                float(np.max(np.where(np.isnan(cond), np.inf, cond))),
            )
        st = CriterionState(
            J=J, padded=padded, masks=self.masks, h=None, nu_by_cand=None, nu=None, H=None, tau2=None
        )
        h = st.solve(self.c)
        Je = np.einsum("aij,aj->ai", J, self.e)
        ce = np.einsum("ai,ai->a", self.c, self.e)
        st.h = h
        st.nu_by_cand = np.einsum("rai,ai->ra", h, Je) - ce
        st.nu = self.g @ st.nu_by_cand
        st.H = np.einsum("r,rad->ad", self.g, h)
        st.tau2 = np.einsum("ai,aij,aj->a", st.H, J, st.H)
        return st

    def phi(self, x, w) -> float:
        st = self.state(x, w)
        return float(self.atom_weights @ st.phi_by_atom)

    def report(self, design: Design) -> CriterionReport:
        st = self.state(design.x, design.w)
        return CriterionReport(
            phi=float(self.atom_weights @ st.phi_by_atom),
            nu_by_atom=st.nu.tolist(),
            tau2_by_atom=st.tau2.tolist(),
        )


# ---------------------------------------------------------------------------
# Public criterion functions
# ---------------------------------------------------------------------------


def _local_problem(scheme, family, params, misspec, target) -> CriterionProblem:
    if misspec is None:
        misspec = Misspecification(tuple([0.0] * family.q), 1)
    return CriterionProblem(scheme, family, PriorSpec.single(params, misspec), target)


def bias_nu(scheme, family, design: Design, params: ParamVector, misspec: Misspecification, target) -> float:
    st = _local_problem(scheme, family, params, misspec, target).state(design.x, design.w)
    return float(st.nu[0])


def variance_tau2(scheme, family, design: Design, params: ParamVector, target) -> float:
    st = _local_problem(scheme, family, params, None, target).state(design.x, design.w)
    return float(st.tau2[0])


def phi_local(scheme, family, design: Design, params: ParamVector, misspec: Misspecification, target) -> float:
    """Asymptotic squared bias plus variance, ``nu**2 + tau2``."""
    st = _local_problem(scheme, family, params, misspec, target).state(design.x, design.w)
    return float(st.nu[0] ** 2 + st.tau2[0])


def phi_bayes(scheme, family, design: Design, prior: PriorSpec, target) -> CriterionReport:
    return CriterionProblem(scheme, family, prior, target).report(design)
