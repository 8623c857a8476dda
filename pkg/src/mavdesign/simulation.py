"""Monte Carlo comparison of designs.

Data are generated from a fixed truth, every candidate submodel is fitted by
Gaussian maximum likelihood, and the target is estimated with fixed weights,
smooth AIC weights, or the AIC-selected model.

Fitting works on grouped data: with ``n_i`` observations at dose ``x_i`` the
residual sum of squares is ``sum_i n_i (ybar_i - eta_i)^2`` plus the
within-group sum of squares, so only the group means enter the least-squares
problem.  All replicates of a block and all starts are fitted together by a
vectorized, box-projected Levenberg-Marquardt iteration.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import MavDesignError, ValidationError
from .models import Candidate, Design, ModelFamily, ParamVector
from .optimizer import worker_count
from .rounding import efficient_round
from .targets import eval_target

log = logging.getLogger(__name__)

METHODS = ("fixed", "smooth_aic", "aic_select")
SIGMA2_FLOOR = 1e-8
START_PERTURBATION = 0.2
# Replicates are processed in blocks of this size.  The blocking is fixed, so
# every number is independent of how many workers run the blocks.
BLOCK_SIZE = 100

LM_MAX_ITER = 300
LM_FTOL = 1e-13
LM_XTOL = 1e-12
LM_LAMBDA0 = 1e-3
LM_LAMBDA_MAX = 1e16


@dataclass(frozen=True)
class TruthSpec:
    """Data-generating parameters (sigma2, vartheta, gamma) with a label for reports."""

    params: ParamVector
    truth_id: str = "truth"


@dataclass(frozen=True, eq=False)
class Dataset:
    """Responses ordered point by point: ``counts[0]`` values at ``points[0]``, then the next point."""

    points: np.ndarray
    counts: tuple
    y: np.ndarray

    @property
    def n(self) -> int:
        return int(sum(self.counts))

    @property
    def x(self) -> np.ndarray:
        return np.repeat(self.points, self.counts)

    @property
    def rep_index(self) -> np.ndarray:
        return np.concatenate([np.arange(c) for c in self.counts])

    def group_stats(self):
        """Group means and the within-group sum of squares."""
        groups = np.split(self.y, np.cumsum(self.counts)[:-1])
        ybar = np.array([g.mean() for g in groups])
        wss = math.fsum(float(((g - m) ** 2).sum()) for g, m in zip(groups, ybar))
        return ybar, wss


@dataclass(frozen=True)
class FitResult:
    """Maximum-likelihood fit of one candidate.

    ``params_hat`` is laid out like the wide model, with the candidate's
    frozen components held at ``gamma0``; ``candidate.restrict`` recovers the
    estimated subvector.
    """

    candidate: Candidate
    params_hat: ParamVector
    loglik: float
    aic: float
    converged: bool
    rss: float


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.SeedSequence):
        return np.random.default_rng(seed)
    return np.random.default_rng(np.random.SeedSequence(int(seed)))


def replicate_stream(seed: int, design_index: int, replicate: int) -> np.random.Generator:
    """Counter-based substream for one replicate of one design."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(design_index), int(replicate))))


def gen_data(family: ModelFamily, truth: TruthSpec, counts, points, seed, sigma: Optional[float] = None) -> Dataset:
    """Simulate ``y_ij = eta(x_i) + sigma * eps_ij`` with standard normal errors.

    ``sigma`` overrides ``sqrt(truth.params.sigma2)``; ``sigma=0`` gives the
    noiseless responses.
    """
    counts = tuple(int(c) for c in counts)
    points = np.asarray(points, dtype=float)
    if len(counts) != points.size or any(c < 0 for c in counts):
        raise ValidationError("counts must be nonnegative and match the number of points")
    family.validate(truth.params)
    s = math.sqrt(truth.params.sigma2) if sigma is None else float(sigma)
    eta = family.mean(points, np.asarray(truth.params.vartheta), np.asarray(truth.params.gamma))
    eps = _rng(seed).standard_normal(sum(counts))
    return Dataset(points=points, counts=counts, y=np.repeat(eta, counts) + s * eps)


# ---------------------------------------------------------------------------
# Batched least squares
# ---------------------------------------------------------------------------


def _stacked(family: ModelFamily, x, full):
    """Mean and gradient for a stack of mean-parameter vectors ``full`` (N, n_mean)."""
    nv = family.n_vartheta
    if family.stacked and family.mean_grad is not None:
        return family.mean(x, full[:, :nv], full[:, nv:]), family.mean_grad(x, full[:, :nv], full[:, nv:])
    from .models import _raw_grad

    eta = np.stack([family.mean(x, f[:nv], f[nv:]) for f in full])
    grad = np.stack([_raw_grad(family, x, f[:nv], f[nv:]) for f in full])
    return eta, grad


def _bounds(candidate: Candidate):
    idx = candidate.mean_index
    fb = candidate.family.fit_bounds
    if fb is None:
        return np.full(idx.size, -np.inf), np.full(idx.size, np.inf)
    fb = np.asarray(fb, dtype=float)
    return fb[idx, 0], fb[idx, 1]


def _lm(candidate: Candidate, points, counts, ybar, starts):
    """Vectorized Levenberg-Marquardt over independent problems.

    ``ybar`` is (N, k) and ``starts`` (N, m) in the candidate's free mean
    coordinates.  Steps are projected onto the family's fitting box and
    accepted only if they lower the weighted sum of squares, so the result is
    never worse than the start.  Returns (theta, grouped_rss, converged).
    """
    family = candidate.family
    idx = candidate.mean_index
    base = np.concatenate([np.zeros(family.n_vartheta), family.gamma0])
    lo, hi = _bounds(candidate)
    sq = np.sqrt(np.asarray(counts, dtype=float))

    def evaluate(theta, yb):
        full = np.broadcast_to(base, (theta.shape[0], base.size)).copy()
        full[:, idx] = theta
        with np.errstate(all="ignore"):
            eta, grad = _stacked(family, points, full)
        r = sq * (yb - eta)
        jac = -sq[:, None] * grad[..., idx]
        f = np.einsum("nk,nk->n", r, r)
        f = np.where(np.isfinite(f), f, np.inf)
        return r, jac, f

    theta = np.clip(np.asarray(starts, dtype=float), lo, hi)
    r, jac, f = evaluate(theta, ybar)
    n_prob, m = theta.shape
    lam = np.full(n_prob, LM_LAMBDA0)
    active = np.isfinite(f)
    converged = np.zeros(n_prob, dtype=bool)
    eye = np.eye(m)
    for _ in range(LM_MAX_ITER):
        if not active.any():
            break
        a = np.flatnonzero(active)
        A = np.einsum("nkm,nkl->nml", jac[a], jac[a])
        g = np.einsum("nkm,nk->nm", jac[a], r[a])
        diag = np.einsum("nmm->nm", A)
        diag = np.maximum(diag, 1e-12 * np.maximum(diag.max(axis=1, keepdims=True), 1.0))
        M = A + lam[a, None, None] * diag[:, :, None] * eye
        # Coordinates sitting on a bound with the descent direction pointing
        # outward are held fixed for this step.
        th_a = theta[a]
        pinned = ((th_a <= lo) & (g > 0.0)) | ((th_a >= hi) & (g < 0.0))
        if pinned.any():
            keep = ~pinned
            M = M * (keep[:, :, None] & keep[:, None, :]) + pinned[:, :, None] * eye
            g = np.where(pinned, 0.0, g)
        with np.errstate(all="ignore"):
            step = -np.linalg.solve(M, g[..., None])[..., 0]
        step = np.where(np.isfinite(step), step, 0.0)
        trial = np.clip(th_a + step, lo, hi)
        r_t, jac_t, f_t = evaluate(trial, ybar[a])
        better = f_t < f[a]
        moved = np.max(np.abs(trial - th_a) / (np.abs(th_a) + LM_XTOL), axis=1)
        small_gain = (f[a] - f_t) <= LM_FTOL * (f[a] + 1e-300)
        upd = a[better]
        theta[upd], r[upd], jac[upd], f[upd] = trial[better], r_t[better], jac_t[better], f_t[better]
        lam[a] = np.where(better, np.maximum(lam[a] / 3.0, 1e-12), lam[a] * 4.0)
        done = (better & small_gain) | (moved <= LM_XTOL)
        stuck = ~better & (lam[a] > LM_LAMBDA_MAX)
        converged[a] = converged[a] | done | stuck
        active[a] = ~(done | stuck)
    return theta, f, converged


def perturbed_starts(nominal_free: np.ndarray, n_starts: int = 5) -> np.ndarray:
    """Nominal values plus deterministic +/-20% perturbation patterns.

    Zero nominal components are shifted additively by 20% of ``max(|v|, 1)``.
    """
    nominal_free = np.asarray(nominal_free, dtype=float)
    m = nominal_free.size
    alt = np.where(np.arange(m) % 2 == 0, 1.0, -1.0)
    patterns = [np.zeros(m), np.ones(m), -np.ones(m), alt, -alt]
    while len(patterns) < n_starts:
        patterns.append(patterns[1 + (len(patterns) - 1) % 4] * 0.5)
    scale = np.maximum(np.abs(nominal_free), 1.0) * START_PERTURBATION
    scale = np.where(nominal_free != 0.0, np.abs(nominal_free) * START_PERTURBATION, scale)
    return np.array([nominal_free + s * scale for s in patterns[:n_starts]])


def _nested(sub: Candidate, sup: Candidate) -> bool:
    return set(sub.subset.indices) < set(sup.subset.indices)


def _fit_all(candidates: Sequence[Candidate], nominal: ParamVector, points, counts, ybar, wss, n_starts: int):
    """Fit every candidate for a stack of replicates.

    Candidates are fitted from the smallest to the largest subset; each fit
    also starts from the fits of its nested submodels, which guarantees that
    a larger model never reports a lower likelihood than a submodel.
    Returns a list aligned with ``candidates`` of (theta_mean_full, rss, converged).
    """
    B = ybar.shape[0]
    order = sorted(range(len(candidates)), key=lambda j: (len(candidates[j].subset), j))
    out = [None] * len(candidates)
    for j in order:
        cand = candidates[j]
        idx = cand.mean_index
        nominal_free = nominal.mean_params[idx]
        base = perturbed_starts(nominal_free, n_starts)  # (S, m)
        warm = [out[i][0][:, idx] for i in order if out[i] is not None and _nested(candidates[i], cand)]
        starts = np.concatenate([np.broadcast_to(base, (B,) + base.shape)] + [w[:, None, :] for w in warm], axis=1)
        S = starts.shape[1]
        theta, f, conv = _lm(cand, points, counts, np.repeat(ybar, S, axis=0), starts.reshape(B * S, -1))
        f = f.reshape(B, S)
        best = np.argmin(f, axis=1)  # first minimum
        rows = np.arange(B)
        theta_best = theta.reshape(B, S, -1)[rows, best]
        full = np.broadcast_to(np.concatenate([np.zeros(cand.family.n_vartheta), cand.family.gamma0]), (B, cand.family.n_mean)).copy()
        full[:, idx] = theta_best
        rss = f[rows, best] + wss
        out[j] = (full, rss, conv.reshape(B, S)[rows, best])
    return out


def _fit_result(cand: Candidate, mean_full: np.ndarray, rss: float, n: int, converged: bool) -> FitResult:
    s2 = max(rss / n, SIGMA2_FLOOR)
    loglik = -0.5 * n * (math.log(2.0 * math.pi * s2) + 1.0)
    nv = cand.family.n_vartheta
    params = ParamVector(s2, tuple(mean_full[:nv]), tuple(mean_full[nv:]))
    return FitResult(cand, params, loglik, 2.0 * loglik - 2.0 * cand.n_params, bool(converged), float(rss))


def fit_mle(candidate: Candidate, dataset: Dataset, nominal: Optional[ParamVector] = None, n_starts: int = 5) -> FitResult:
    """Gaussian maximum likelihood for one candidate.

    The mean parameters minimize the residual sum of squares (multistart from
    ``nominal`` perturbed by +/-20%); ``sigma2_hat = RSS / n`` floored at
    1e-8 and ``loglik = -n/2 (log(2 pi sigma2_hat) + 1)``.  Non-convergence
    is flagged, not raised.
    """
    if dataset.n == 0:
        raise ValidationError("empty dataset")
    fam = candidate.family
    if nominal is None:
        raise ValidationError("fit_mle needs nominal parameter values for its starts")
    ybar, wss = dataset.group_stats()
    keep = np.asarray(dataset.counts) > 0
    pts, cnt = dataset.points[keep], tuple(np.asarray(dataset.counts)[keep])
    ((full, rss, conv),) = _fit_all([candidate], nominal, pts, cnt, ybar[keep][None, :], np.array([wss]), n_starts)
    return _fit_result(candidate, full[0], float(rss[0]), dataset.n, bool(conv[0]))


def fit_candidates(candidates: Sequence[Candidate], dataset: Dataset, nominal: ParamVector, n_starts: int = 5) -> list:
    """Fit all candidates to one dataset, with nested warm starts."""
    ybar, wss = dataset.group_stats()
    keep = np.asarray(dataset.counts) > 0
    pts, cnt = dataset.points[keep], tuple(np.asarray(dataset.counts)[keep])
    res = _fit_all(list(candidates), nominal, pts, cnt, ybar[keep][None, :], np.array([wss]), n_starts)
    return [_fit_result(c, full[0], float(rss[0]), dataset.n, bool(cv[0])) for c, (full, rss, cv) in zip(candidates, res)]


# ---------------------------------------------------------------------------
# Weights and estimators
# ---------------------------------------------------------------------------


def smooth_aic_weights(aic_scores) -> np.ndarray:
    """``w_j proportional to exp(aic_j / 2)``, computed after subtracting the maximum score."""
    a = np.asarray(aic_scores, dtype=float)
    if a.size == 0 or not np.all(np.isfinite(a)):
        raise ValidationError("AIC scores must be finite and nonempty")
    e = np.exp(0.5 * (a - a.max()))
    return e / e.sum()


def select_aic(aic_scores) -> int:
    """0-based index of the greatest AIC score; the first one on ties."""
    a = np.asarray(aic_scores, dtype=float)
    if a.size == 0:
        raise ValidationError("no AIC scores")
    return int(np.argmax(a))


def estimate_target(fits: Sequence[FitResult], weights, candidates: Sequence[Candidate], family: ModelFamily, target) -> float:
    """Weighted sum of per-candidate plug-in estimates of the target.

    Candidates with zero weight are not evaluated.
    """
    w = np.asarray(weights, dtype=float)
    if len(fits) != w.size or len(candidates) != w.size:
        raise ValidationError("fits, weights and candidates must have equal length")
    if abs(math.fsum(w) - 1.0) > 1e-9:
        raise ValidationError("weights must sum to 1")
    total = []
    for fit, wj in zip(fits, w):
        if wj != 0.0:
            total.append(wj * eval_target(target, family, fit.params_hat))
    return math.fsum(total)


def method_weights(method: str, g_weights, aic_scores) -> np.ndarray:
    if method == "fixed":
        return np.asarray(g_weights, dtype=float)
    if method == "smooth_aic":
        return smooth_aic_weights(aic_scores)
    if method == "aic_select":
        out = np.zeros(len(aic_scores))
        out[select_aic(aic_scores)] = 1.0
        return out
    raise ValidationError(f"unknown method {method!r}; choose from {METHODS}")


# ---------------------------------------------------------------------------
# MSE study
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MSERow:
    design: str
    method: str
    truth_id: str
    reps: int
    mse: float
    n_invalid: int


@dataclass
class _BlockResult:
    estimates: dict  # method -> list of per-replicate estimates (None when invalid)
    nonconverged: int = 0


def _run_block(ctx, design_index: int, points, counts, reps: range) -> _BlockResult:
    family, candidates, g, target, nominal, truth, methods, seed = ctx
    B = len(reps)
    n = int(sum(counts))
    eta = family.mean(points, np.asarray(truth.params.vartheta), np.asarray(truth.params.gamma))
    sigma = math.sqrt(truth.params.sigma2)
    bounds = np.cumsum(counts)[:-1]
    ybar = np.empty((B, len(points)))
    wss = np.empty(B)
    for b, rep in enumerate(reps):
        eps = replicate_stream(seed, design_index, rep).standard_normal(n)
        y = np.repeat(eta, counts) + sigma * eps
        groups = np.split(y, bounds)
        ybar[b] = [grp.mean() for grp in groups]
        wss[b] = math.fsum(float(((grp - m) ** 2).sum()) for grp, m in zip(groups, ybar[b]))
    fitted = _fit_all(candidates, nominal, points, counts, ybar, wss, 5)
    out = {m: [] for m in methods}
    nonconv = 0
    for b in range(B):
        fits = [_fit_result(c, full[b], float(rss[b]), n, bool(cv[b])) for c, (full, rss, cv) in zip(candidates, fitted)]
        nonconv += sum(not f.converged for f in fits)
        try:
            plug = [eval_target(target, family, f.params_hat) for f in fits]
        except MavDesignError as exc:
            log.debug("replicate %d of design %d invalid: %s", reps[b], design_index, exc)
            for m in methods:
                out[m].append(None)
            continue
        aic = [f.aic for f in fits]
        for m in methods:
            w = method_weights(m, g, aic)
            out[m].append(math.fsum(wj * pj for wj, pj in zip(w, plug) if wj != 0.0))
    return _BlockResult(out, nonconv)


def run_mse_study(
    scenario,
    designs,
    methods: Sequence[str],
    truth: TruthSpec,
    reps: int,
    seed: int,
    workers: Optional[int] = None,
) -> list:
    """Simulated MSE of the target estimate per design and method.

    ``scenario`` supplies ``family``, ``scheme``, ``target``, ``nominal`` and
    ``n``; ``designs`` maps names to :class:`Design` (or is a sequence of
    (name, design) pairs).  Each design is rounded to ``scenario.n``
    observations.  Replicate ``l`` of design ``i`` draws its noise from the
    substream ``(seed, i, l)``.  A replicate where any candidate's target
    cannot be evaluated is excluded from every method and counted in
    ``n_invalid``.
    """
    methods = tuple(methods)
    if not methods:
        raise ValidationError("at least one estimation method is required")
    for m in methods:
        if m not in METHODS:
            raise ValidationError(f"unknown method {m!r}; choose from {METHODS}")
    if int(reps) < 1:
        raise ValidationError("reps must be >= 1")
    reps = int(reps)
    items = list(designs.items()) if isinstance(designs, dict) else list(designs)
    family = scenario.family
    family.validate(truth.params)
    candidates = scenario.scheme.build(family)
    ctx = (family, candidates, scenario.scheme.g_weights, scenario.target, scenario.nominal, truth, methods, int(seed))
    mu_true = eval_target(scenario.target, family, truth.params)

    jobs = []
    for i, (name, design) in enumerate(items):
        counts = tuple(efficient_round(design, scenario.n))
        for start in range(0, reps, BLOCK_SIZE):
            jobs.append((i, design.x, counts, range(start, min(reps, start + BLOCK_SIZE))))

    def run(job):
        i, pts, counts, block = job
        return _run_block(ctx, i, pts, counts, block)

    n_workers = min(worker_count(workers), len(jobs))
    if n_workers > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(job) for job in jobs]

    rows = []
    for i, (name, _) in enumerate(items):
        blocks = [r for job, r in zip(jobs, results) if job[0] == i]
        nonconv = sum(b.nonconverged for b in blocks)
        if nonconv:
            log.info("design %s: %d candidate fits flagged non-converged", name, nonconv)
        for m in methods:
            est = [e for b in blocks for e in b.estimates[m]]
            valid = [e for e in est if e is not None]
            n_invalid = len(est) - len(valid)
            mse = math.fsum((e - mu_true) ** 2 for e in valid) / len(valid) if valid else math.nan
            rows.append(MSERow(name, m, truth.truth_id, reps, mse, n_invalid))
    return rows
