"""Multistart COBYLA search for designs minimizing the Bayesian criterion."""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import minimize
from scipy.stats import qmc

from .criterion import CriterionProblem, PriorSpec
from .errors import AllStartsFailedError, MavDesignError, SingularInformationError, ValidationError
from .models import DEFAULT_DROP_TOL, Design, DesignSpace, normalize_design
from .sensitivity import SensitivityReport, check_problem

log = logging.getLogger(__name__)

PENALTY = 1e20
# Singular designs score SINGULAR_SCALE * log10(cond): far above any usable
# criterion value, yet decreasing as the design moves away from singularity,
# so a start inside the singular region still has a direction to follow.
SINGULAR_SCALE = 1e10
SINGULAR_CAP = 1e12
INSERT_WEIGHT = 0.05


def worker_count(requested: Optional[int] = None) -> int:
    """Worker cap: explicit request, else MAVDESIGN_THREADS, else CPU count."""
    if requested is not None:
        return max(1, int(requested))
    env = os.environ.get("MAVDESIGN_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


@dataclass(frozen=True)
class OptimizerOptions:
    k_init: Optional[int] = None  # default p + q
    max_k: Optional[int] = None  # default p + q + 3
    n_starts: int = 20
    max_evals_per_start: int = 2000
    rng_seed: int = 0
    merge_tol: Optional[float] = None
    drop_tol: float = DEFAULT_DROP_TOL
    eq_tol: float = 1e-4
    grid_size: int = 1001
    rhobeg: float = 0.1
    rhoend: float = 1e-10
    polish_ftol: float = 1e-15
    polish_maxiter: int = 500
    workers: Optional[int] = None

    def resolved(self, dim: int) -> "OptimizerOptions":
        k_init = dim if self.k_init is None else self.k_init
        max_k = max(k_init, dim + 3) if self.max_k is None else self.max_k
        if not 1 <= k_init <= max_k:
            raise ValidationError(f"need 1 <= k_init <= max_k, got {k_init}, {max_k}")
        if self.n_starts < 1:
            raise ValidationError("n_starts must be >= 1")
        return OptimizerOptions(**{**self.__dict__, "k_init": k_init, "max_k": max_k})


@dataclass
class OptimResult:
    design: Design
    phi: float
    sensitivity: SensitivityReport
    trace: list  # (start_index, phi_final); refinement rounds use index -1, -2, ...
    converged: bool
    initial_phis: list = field(default_factory=list)


class _Objective:
    """Criterion over the unconstrained COBYLA vector.

    The vector holds the k points scaled to [0, 1] followed by k - 1
    weights; the last weight is implied.  The best feasible point seen is
    tracked so the search never reports something worse than it visited.
    """

    def __init__(self, problem: CriterionProblem, space: DesignSpace, k: int):
        self.problem = problem
        self.space = space
        self.k = k
        self.best_f = math.inf
        self.best_z = None
        self.nfev = 0

    def unpack(self, z):
        u = np.clip(z[: self.k], 0.0, 1.0)
        x = self.space.lower + u * self.space.length
        w = np.append(z[self.k :], 1.0 - np.sum(z[self.k :]))
        return x, w

    def __call__(self, z):
        self.nfev += 1
        x, w = self.unpack(z)
        if np.any(w < 0.0):
            return PENALTY
        try:
            f = self.problem.phi(x, w)
        except SingularInformationError as exc:
            cond = exc.cond if math.isfinite(exc.cond) else 1e100
            return min(SINGULAR_SCALE * math.log10(max(cond, 10.0)), SINGULAR_CAP)
        if not math.isfinite(f):
            return PENALTY
        if f < self.best_f:
            self.best_f, self.best_z = f, np.array(z, dtype=float)
        return f

    def constraints(self):
        k = self.k
        return [
            {"type": "ineq", "fun": lambda z: z[:k]},
            {"type": "ineq", "fun": lambda z: 1.0 - z[:k]},
            {"type": "ineq", "fun": lambda z: z[k:]},
            {"type": "ineq", "fun": lambda z: np.atleast_1d(1.0 - np.sum(z[k:]))},
        ]


def _pack(space: DesignSpace, x, w) -> np.ndarray:
    u = (np.asarray(x, dtype=float) - space.lower) / space.length
    return np.concatenate([u, np.asarray(w, dtype=float)[:-1]])


def local_search(problem: CriterionProblem, space: DesignSpace, x0, w0, opts: OptimizerOptions, rhobeg: Optional[float] = None):
    """One COBYLA run from (x0, w0); returns (x, w, phi, phi_initial) or None."""
    k = len(x0)
    obj = _Objective(problem, space, k)
    z0 = _pack(space, x0, w0)
    f0 = obj(z0)
    minimize(
        obj,
        z0,
        method="COBYLA",
        constraints=obj.constraints(),
        options={"rhobeg": opts.rhobeg if rhobeg is None else rhobeg, "tol": opts.rhoend, "maxiter": opts.max_evals_per_start},
    )
    if obj.best_z is None:
        return None
    x, w = obj.unpack(obj.best_z)
    return x, w, obj.best_f, f0


def starting_designs(space: DesignSpace, k: int, n_starts: int, seed: int) -> list:
    """Latin-hypercube support points (sorted) with Dirichlet(1) weights."""
    lhs = qmc.LatinHypercube(d=k, seed=np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0,))))
    u = np.sort(lhs.random(n_starts), axis=1)
    out = []
    for s in range(n_starts):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1, s)))
        w = rng.dirichlet(np.ones(k))
        out.append((space.lower + u[s] * space.length, w))
    return out


def polish(problem: CriterionProblem, space: DesignSpace, x, w, f, opts: OptimizerOptions):
    """Gradient-based (SLSQP) refinement of a COBYLA result.

    COBYLA gets close but crawls along the flat valleys of the criterion;
    SLSQP with finite-difference gradients then reaches the stationarity
    level the sensitivity check asks for.  The polished point is kept only
    if it improves the criterion.
    """
    k = len(x)
    obj = _Objective(problem, space, k)
    z0 = _pack(space, x, w)
    obj(z0)
    cons = obj.constraints()
    try:
        minimize(
            obj,
            z0,
            method="SLSQP",
            bounds=[(0.0, 1.0)] * k + [(0.0, 1.0)] * (k - 1),
            constraints=cons[3:],
            options={"ftol": opts.polish_ftol, "maxiter": opts.polish_maxiter},
        )
    except (ValueError, ArithmeticError) as exc:  # pragma: no cover - defensive
        log.debug("polish failed: %s", exc)
    if obj.best_z is None or obj.best_f >= f:
        return x, w, f
    xp, wp = obj.unpack(obj.best_z)
    return xp, np.clip(wp, 0.0, None), obj.best_f


def _finish(problem, space, x, w, opts: OptimizerOptions) -> tuple:
    design = normalize_design(np.clip(x, space.lower, space.upper), w, space, opts.merge_tol, opts.drop_tol)
    phi = problem.phi(design.x, design.w)
    report = check_problem(problem, design, space, opts.grid_size, tol=opts.eq_tol * phi)
    return design, phi, report


def optimize_problem(problem: CriterionProblem, space: DesignSpace, opts: OptimizerOptions = OptimizerOptions()) -> OptimResult:
    """Multistart search, polishing, verification and support-point refinement.

    The winner across starts is chosen by (phi, start index), so the result
    does not depend on the number of workers.
    """
    opts = opts.resolved(problem.family.dim)
    starts = starting_designs(space, opts.k_init, opts.n_starts, opts.rng_seed)

    def run(s):
        x0, w0 = starts[s]
        return local_search(problem, space, x0, w0, opts)

    workers = min(worker_count(opts.workers), opts.n_starts)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, range(opts.n_starts)))
    else:
        results = [run(s) for s in range(opts.n_starts)]

    trace, initial = [], []
    best = None
    for s, res in enumerate(results):
        if res is None:
            log.debug("start %d never left singular information", s)
            continue
        x, w, f, f0 = res
        trace.append((s, f))
        initial.append((s, f0))
        if best is None or (f, s) < (best[2], best[3]):
            best = (x, w, f, s)
    if best is None:
        raise AllStartsFailedError("every start hit singular information")

    x, w, f = polish(problem, space, best[0], best[1], best[2], opts)
    design, phi, report = _finish(problem, space, x, w, opts)
    rnd = 0
    while not report.passed and design.k < opts.max_k:
        rnd += 1
        x_new = np.append(design.x, report.argmax)
        w_new = np.append(design.w * (1.0 - INSERT_WEIGHT), INSERT_WEIGHT)
        order = np.argsort(x_new, kind="stable")
        res = local_search(problem, space, x_new[order], w_new[order], opts)
        if res is None:
            break
        x, w, f = polish(problem, space, res[0], res[1], res[2], opts)
        trace.append((-rnd, f))
        try:
            cand = _finish(problem, space, x, w, opts)
        except (MavDesignError, ValueError):
            break
        log.info("refinement %d: k=%d phi=%.10g max d_pi=%.3g", rnd, cand[0].k, cand[1], cand[2].max_violation)
        if cand[1] >= phi:
            break
        design, phi, report = cand

    return OptimResult(
        design=design,
        phi=phi,
        sensitivity=report,
        trace=trace,
        converged=bool(report.passed),
        initial_phis=initial,
    )


def optimize_design(scheme, family, prior: PriorSpec, target, space: DesignSpace, opts: OptimizerOptions = OptimizerOptions()) -> OptimResult:
    return optimize_problem(CriterionProblem(scheme, family, prior, target), space, opts)


@dataclass
class ComparisonRow:
    name: str
    phi: Optional[float]
    efficiency: Optional[float]  # phi(best) / phi(design)
    error: Optional[str] = None


def compare_problem(problem: CriterionProblem, designs) -> list:
    if not isinstance(designs, dict):
        designs = {f"design_{i + 1}": d for i, d in enumerate(designs)}
    rows = []
    for name, d in designs.items():
        try:
            rows.append(ComparisonRow(name, problem.phi(d.x, d.w), None))
        except MavDesignError as exc:
            rows.append(ComparisonRow(name, None, None, str(exc)))
    ok = [r.phi for r in rows if r.phi is not None]
    if ok:
        best = min(ok)
        for r in rows:
            if r.phi is not None:
                r.efficiency = best / r.phi
    return rows


def evaluate_and_compare(designs, scheme, family, prior: PriorSpec, target) -> list:
    """Criterion value per design and relative efficiency against the best one.

    ``designs`` is a mapping name -> Design or a plain sequence.  Designs
    with singular information are reported with ``error`` set.
    """
    return compare_problem(CriterionProblem(scheme, family, prior, target), designs)
