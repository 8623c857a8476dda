"""Directional derivatives of the criterion and the equivalence-type check.

For a one-point design at ``x`` the wide information is
``J_x = diag(1/(2 sigma^4), grad grad^T / sigma^2)``, so every term of the
derivative formulas reduces to bilinear forms ``a^T J_x b`` which are
evaluated for a whole grid of ``x`` at once.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import cho_solve

from .criterion import (
    CriterionProblem,
    PriorSpec,
    _describe,
    _factor,
    _local_problem,
    info_matrix,
)
from .models import Candidate, Design, DesignSpace, ParamVector, _check_x
from .targets import target_grad_sub


@dataclass
class SensitivityReport:
    grid: list
    d_values: list
    max_violation: float
    support_residuals: list
    tol: float
    phi: float
    passed: bool
    argmax: float


@dataclass
class Derivatives:
    """Per-atom pieces at a set of doses: arrays of shape (A, nx)."""

    nu: np.ndarray
    d1: np.ndarray
    d2: np.ndarray

    def d_atom(self) -> np.ndarray:
        return -2.0 * self.nu[:, None] * self.d1 - self.d2


def derivatives(problem: CriterionProblem, design: Design, x) -> Derivatives:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    _check_x(problem.family, x, None)
    st = problem.state(design.x, design.w)
    Gx = problem.mean_grads(x)  # (A, nx, m)
    s2 = problem.sigma2

    def bilinear(a, b):
        # a^T J_x b for stacked a, b of shape (A, d)
        mean_a = np.einsum("axm,am->ax", Gx, a[:, 1:])
        mean_b = np.einsum("axm,am->ax", Gx, b[:, 1:])
        return (a[:, :1] * b[:, :1]) / (2.0 * s2[:, None] ** 2) + mean_a * mean_b / s2[:, None]

    JH = np.einsum("aij,aj->ai", st.J, st.H)
    Je = np.einsum("aij,aj->ai", st.J, problem.e)
    w = st.solve(Je)  # (r, A, d)
    z = st.solve(JH)
    A = st.J.shape[0]
    d1 = np.zeros((A, x.size))
    cross = np.zeros((A, x.size))
    for j in range(len(problem.candidates)):
        d1 += problem.g[j] * bilinear(st.h[j], problem.e - w[j])
        cross += problem.g[j] * bilinear(st.h[j], z[j])
    d2 = st.tau2[:, None] + bilinear(st.H, st.H) - 2.0 * cross
    return Derivatives(nu=st.nu, d1=d1, d2=d2)


def _scalar_or_array(v: np.ndarray, x):
    return float(v[0]) if np.ndim(x) == 0 else v


def h_tilde(candidate: Candidate, design: Design, x: float, params: ParamVector, target) -> np.ndarray:
    """``P_S^T J_S^{-1}(xi) J_S(xi_x) J_S^{-1}(xi) c_S``."""
    JS = info_matrix(candidate, design, params)
    fac = _factor(JS, _describe(candidate, design))
    JSx = info_matrix(candidate, Design.point_mass(x), params)
    u = cho_solve(fac, target_grad_sub(target, candidate, params))
    return candidate.projection.T @ cho_solve(fac, JSx @ u)


def d1(scheme, family, design: Design, x, params: ParamVector, misspec, target):
    """Directional derivative of the bias toward the point mass at ``x``."""
    der = derivatives(_local_problem(scheme, family, params, misspec, target), design, x)
    return _scalar_or_array(der.d1[0], x)


def d2(scheme, family, design: Design, x, params: ParamVector, target):
    """Directional derivative of the variance toward the point mass at ``x``."""
    der = derivatives(_local_problem(scheme, family, params, None, target), design, x)
    return _scalar_or_array(der.d2[0], x)


def d_pi_values(problem: CriterionProblem, design: Design, x) -> np.ndarray:
    der = derivatives(problem, design, x)
    return problem.atom_weights @ der.d_atom()


def d_pi(scheme, family, design: Design, x, prior: PriorSpec, target):
    """Sensitivity function; minus the directional derivative of the Bayesian criterion."""
    vals = d_pi_values(CriterionProblem(scheme, family, prior, target), design, x)
    return _scalar_or_array(vals, x)


def sensitivity_grid(space: DesignSpace, design: Design, grid_size: int) -> np.ndarray:
    grid = np.linspace(space.lower, space.upper, grid_size)
    return np.sort(np.concatenate([grid, design.x]), kind="stable")


def check_problem(
    problem: CriterionProblem,
    design: Design,
    space: DesignSpace,
    grid_size: int = 1001,
    tol: Optional[float] = None,
    rel_tol: float = 1e-4,
) -> SensitivityReport:
    if grid_size < 2:
        raise ValueError("grid_size must be at least 2")
    xs = sensitivity_grid(space, design, grid_size)
    phi = problem.phi(design.x, design.w)
    vals = d_pi_values(problem, design, np.concatenate([xs, design.x]))
    dv, support = vals[: xs.size], vals[xs.size :]
    if tol is None:
        tol = rel_tol * phi
    imax = int(np.argmax(dv))
    max_violation = float(dv[imax])
    passed = max_violation <= tol and bool(np.all(np.abs(support) <= tol))
    return SensitivityReport(
        grid=xs.tolist(),
        d_values=dv.tolist(),
        max_violation=max_violation,
        support_residuals=support.tolist(),
        tol=float(tol),
        phi=phi,
        passed=passed,
        argmax=float(xs[imax]),
    )


def check_optimality(
    scheme,
    family,
    design: Design,
    prior: PriorSpec,
    target,
    space: DesignSpace,
    grid_size: int = 1001,
    tol: Optional[float] = None,
) -> SensitivityReport:
    """Evaluate the sensitivity function on a grid plus the support.

    Passes iff the maximum over the grid and every absolute support value
    are at most ``tol`` (default ``1e-4`` times the criterion value).
    Failures are reported, never raised.
    """
    problem = CriterionProblem(scheme, family, prior, target)
    return check_problem(problem, design, space, grid_size, tol)
