"""End-to-end fitting: support handling, initialization, subsampling,
penalty selection, and averaging of per-subsample solutions.

The likelihood always uses the whole sample; each subsample only selects
which anchor functions span the basis.  Subsample fits are independent
work units with deterministic child RNG streams, so results are
reproducible regardless of worker count.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace

import numpy as np
from joblib import Parallel, delayed
from scipy import stats
from threadpoolctl import threadpool_limits

from .basis import BasisSet, default_constraint_points, eval_density, gram_matrix
from .distributions import ErrorModel
from .solver import (
    InfeasibleStartError,
    Objective,
    SimplexOptions,
    equality_nullspace,
    nelder_mead,
    penalized_nll,
)

NEGATIVITY_THRESHOLD = -1e-4
VIOLATION_TOLERANCE = 1e-6
CV_SCORE_FLOOR = 1e-12

# distinct stream tags so CV bookkeeping never collides with subsample streams
_CV_FOLD_TAG = 104729
_CV_ANCHOR_TAG = 104743

_HEURISTIC_RATIO_TABLE = {30: 1e4, 100: 1e5, 300: 1e6}


class FitError(RuntimeError):
    """All subsample fits failed; carries per-subsample diagnostics."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or []


class InitializationError(ValueError):
    pass


@dataclass
class FitConfig:
    """Tuning parameters for a density fit."""

    lambda_mode: str = "heuristic"  # "fixed" | "heuristic" | "cv"
    lambda_value: float | None = None
    heuristic_ratio: float | None = None  # None: size-based default
    heuristic_calibration: float = 10.0  # scales the gradient-ratio output
    cv_grid_size: int = 7
    cv_folds: int = 5
    subsample_size: int = 30
    n_subsamples: int | None = None  # None: max(10, ceil(2n/S))
    constraint_point_count: int = 30
    support: tuple[float, float] | None = None
    support_padding: float = 0.4  # widening fraction per side
    init_smoothness_factor: float = 3.0  # target curvature multiple of the KDE's
    max_shrink_rounds: int = 10
    quadrature_nodes: int = 4096
    grid_points: int = 1000
    seed: int = 0
    n_jobs: int | None = None  # None: PMLE_THREADS or cpu count
    max_redraws: int = 3

    def __post_init__(self):
        if self.lambda_mode not in ("fixed", "heuristic", "cv"):
            raise ValueError(f"unknown lambda_mode {self.lambda_mode!r}")
        if self.lambda_mode == "fixed" and self.lambda_value is None:
            raise ValueError("fixed lambda_mode needs lambda_value")
        if self.subsample_size < 4:
            raise ValueError("subsample_size must be at least 4")
        if self.lambda_mode == "cv" and self.cv_folds < 2:
            raise ValueError("cross-validation needs at least 2 folds")
        if self.n_subsamples is not None and self.n_subsamples < 1:
            raise ValueError("n_subsamples must be positive")


@dataclass
class SubsampleFit:
    """One subsample's solution, bound to the basis it was fit in."""

    alpha: np.ndarray
    basis: BasisSet
    indices: np.ndarray
    converged: bool
    violation_max: float
    lam: float
    objective_value: float


@dataclass
class DensityEstimate:
    """Averaged density estimate on an evaluation grid.

    ``values`` is the final density (negatives clipped, renormalized to
    unit integral); ``raw_values`` the plain average used for boundary
    diagnostics.  ``per_subsample`` keeps each contributing coefficient
    vector with its basis.
    """

    support: tuple[float, float]
    grid: np.ndarray
    values: np.ndarray
    raw_values: np.ndarray
    per_subsample: list[SubsampleFit]
    diagnostics: dict = field(default_factory=dict)

    def pdf(self, x):
        x_arr = np.asarray(x, dtype=float)
        out = np.interp(x_arr, self.grid, self.values, left=0.0, right=0.0)
        return out if x_arr.ndim else float(out)

    __call__ = pdf

    def convolved_pdf(self, t):
        """Convolved density (estimate * error) averaged over subsample fits."""
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        acc = np.zeros_like(t_arr)
        for sub in self.per_subsample:
            acc += sub.basis.response_rows(t_arr) @ sub.alpha
        acc /= len(self.per_subsample)
        return acc if np.ndim(t) else float(acc[0])

    def integral(self) -> float:
        return float(np.trapezoid(self.values, self.grid))


def resolve_workers(n_jobs: int | None = None) -> int:
    if n_jobs is not None:
        return max(1, int(n_jobs))
    env = os.environ.get("PMLE_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


SUPPORT_SIGMA = 3.5  # latent-moment interval half-width in deconvolved SDs


def moment_support(y, error: ErrorModel) -> tuple[float, float]:
    """Latent-range estimate from first and second moments.

    Centered at ``mean(y) - mean(e)`` with half-width proportional to the
    deconvolved standard deviation ``sqrt(var(y) - var(e))``.  Extreme-value
    support arithmetic collapses when the error spread rivals the data
    spread (low signal-to-noise); this interval cannot.
    """
    y = np.asarray(y, dtype=float)
    center = float(y.mean()) - error.mean()
    var_y = float(np.var(y, ddof=1))
    var_e = error.variance()
    # upper-confidence width: the plain difference is noise-dominated for
    # small samples at low signal-to-noise
    buffer = 2.0 * np.sqrt(2.0 / len(y)) * np.sqrt(var_y**2 + var_e**2)
    var_x = max(var_y - var_e, (0.15 * np.sqrt(var_y)) ** 2) + buffer
    half = SUPPORT_SIGMA * np.sqrt(var_x)
    return (center - half, center + half)


def initial_support(y, error, padding: float = 0.1) -> tuple[float, float]:
    """Starting support: data range minus error range, widened per side.

    ``padding`` is the widening fraction of the raw width (the pipeline
    default is wider, see :class:`FitConfig`; data extremes systematically
    understate the latent range for unbounded truths).
    """
    y = np.asarray(y, dtype=float)
    if isinstance(error, ErrorModel):
        lo_e, hi_e = error.support_bounds()
    else:
        e = np.asarray(error, dtype=float)
        if e.size == 0:
            raise ValueError("empty error sample")
        lo_e, hi_e = float(e.min()), float(e.max())
    lower = float(y.min()) - lo_e
    upper = float(y.max()) - hi_e
    if upper <= lower:
        raise ValueError("error spread exceeds data spread")
    pad = padding * (upper - lower)
    return (lower - pad, upper + pad)


def shrink_support(est: DensityEstimate, current: tuple[float, float]) -> tuple[float, float]:
    """Halve the distance to the minimum of any boundary-adjacent negative dip."""
    return _shrink_from_values(est.grid, est.raw_values, current)


def _shrink_from_values(grid, values, current):
    neg = values < NEGATIVITY_THRESHOLD
    lower, upper = current
    new_lower, new_upper = lower, upper
    if neg[0]:
        run = np.argmin(neg) if not neg.all() else len(neg)
        m = grid[np.argmin(values[:run])]
        new_lower = 0.5 * (lower + m)
    if neg[-1]:
        rev = neg[::-1]
        run = np.argmin(rev) if not rev.all() else len(rev)
        tail = values[len(values) - run :]
        m = grid[len(values) - run + np.argmin(tail)]
        new_upper = 0.5 * (m + upper)
    return (new_lower, new_upper)


def silverman_bandwidth(y) -> float:
    """Rule-of-thumb Gaussian-kernel bandwidth 0.9 min(sd, IQR/1.34) n^(-1/5)."""
    y = np.asarray(y, dtype=float)
    if len(y) < 2:
        raise ValueError("bandwidth needs at least 2 observations")
    sd = float(np.std(y, ddof=1))
    iqr = float(np.percentile(y, 75) - np.percentile(y, 25))
    spread = min(sd, iqr / 1.34)
    if spread <= 0.0:
        raise ValueError("zero spread: bandwidth undefined")
    return 0.9 * spread * len(y) ** (-0.2)


def _kde_values(y, bandwidth, t):
    z = (t[:, None] - y[None, :]) / bandwidth
    return stats.norm.pdf(z).mean(axis=1) / bandwidth


def kde_curvature_penalty(y, bandwidth, grid) -> float:
    """Curvature penalty of the Gaussian KDE (analytic second derivative).

    Convolution only smooths, so the KDE of the contaminated sample lower
    bounds the roughness scale of any plausible deconvolved estimate.
    """
    z = (grid[:, None] - np.asarray(y)[None, :]) / bandwidth
    second = ((z * z - 1.0) * stats.norm.pdf(z)).mean(axis=1) / bandwidth**3
    return float(np.trapezoid(second**2, grid))


def initialize_coeffs(y, basis: BasisSet, alpha0, nullspace, objective=None,
                      gram=None, smoothness_factor: float = 3.0) -> np.ndarray:
    """Reduced starting coordinates from a projected kernel density estimate.

    Least-squares matches the convolved basis responses to a Gaussian KDE
    of the observed sample on a 500-point grid, restricted to the
    equality-feasible affine set.  The normal equations carry a curvature
    ridge whose weight is bisected so the start's penalty lands at
    ``smoothness_factor`` times the KDE's own: the unregularized
    projection is pathologically rough (deconvolution amplifies KDE noise
    into enormous f'' wiggles) and the derivative-free solver never leaves
    that basin.  The result is halved toward zero until the objective is
    finite.
    """
    y = np.asarray(y, dtype=float)
    bandwidth = silverman_bandwidth(y)
    grid = np.linspace(y.min(), y.max(), 500)
    kde = _kde_values(y, bandwidth, grid)
    responses = basis.response_rows(grid)
    design = responses @ nullspace
    target = kde - responses @ alpha0
    if gram is None:
        beta, *_ = np.linalg.lstsq(design, target, rcond=None)
    else:
        target_penalty = smoothness_factor * kde_curvature_penalty(y, bandwidth, grid)
        gtg = design.T @ design
        curv = nullspace.T @ gram @ nullspace
        curv_shift = nullspace.T @ (gram @ alpha0)
        base_penalty = float(alpha0 @ gram @ alpha0)
        scale = np.trace(gtg) / max(np.trace(curv), 1e-300)
        lo, hi = 1e-10 * scale, 1e4 * scale
        beta = None
        for _ in range(40):
            mu = np.sqrt(lo * hi)
            beta = np.linalg.solve(gtg + mu * curv, design.T @ target - mu * curv_shift)
            penalty = float(beta @ curv @ beta + 2.0 * beta @ curv_shift + base_penalty)
            if penalty > target_penalty:
                lo = mu
            else:
                hi = mu
    if objective is None:
        return beta
    for _ in range(31):
        if np.isfinite(penalized_nll(objective, beta)):
            return beta
        beta = 0.5 * beta
    raise InitializationError("initialization failed: no feasible start after halving")


def stratified_subsample(y, size: int, rng: np.random.Generator) -> np.ndarray:
    """One index per equal-width stratum of the data range, exactly ``size`` total.

    Empty strata are compensated by extra draws from the stratum with the
    most unchosen points.
    """
    y = np.asarray(y, dtype=float)
    n = len(y)
    if size > n:
        raise ValueError(f"subsample size {size} exceeds sample size {n}")
    lo, hi = float(y.min()), float(y.max())
    if hi == lo:
        strata = np.zeros(n, dtype=int)
    else:
        strata = np.minimum((size * (y - lo) / (hi - lo)).astype(int), size - 1)
    pools = [list(np.flatnonzero(strata == s)) for s in range(size)]
    chosen: list[int] = []
    for pool in pools:
        if pool:
            pick = pool[rng.integers(len(pool))]
            chosen.append(int(pick))
            pool.remove(pick)
    while len(chosen) < size:
        t = int(np.argmax([len(p) for p in pools]))
        pool = pools[t]
        pick = pool[rng.integers(len(pool))]
        chosen.append(int(pick))
        pool.remove(pick)
    return np.array(sorted(chosen), dtype=int)


def default_heuristic_ratio(n: int) -> float:
    """Sample-size ratio for the quick penalty heuristic (10^4 at n=30,
    10^5 at 100, 10^6 at 300; a matching power law in between)."""
    if n in _HEURISTIC_RATIO_TABLE:
        return _HEURISTIC_RATIO_TABLE[n]
    return 1e4 * (n / 30.0) ** 2


def heuristic_lambda(obj: Objective, beta0: np.ndarray, ratio: float) -> float:
    """Penalty weight balancing log-likelihood and smoothness gradients.

    lambda = (1/ratio) * sum|d loglik / d alpha| / sum|d penalty / d alpha|,
    both gradients taken at the initial coefficients.
    """
    alpha = obj.expand(beta0)
    conv = obj.likelihood @ alpha
    if conv.min() <= 0.0:
        raise ValueError("heuristic lambda requires a feasible starting point")
    grad_ll = (obj.likelihood / conv[:, None]).sum(axis=0)
    grad_pen = 2.0 * (obj.gram @ alpha)
    denom = np.abs(grad_pen).sum()
    if denom == 0.0:
        raise ZeroDivisionError("smoothness gradient vanished")
    return float(np.abs(grad_ll).sum() / denom / ratio)


def _subsample_unit(y, error, support, config, lam_fixed, round_idx, unit_idx, grid):
    """Fit one subsample (with redraws); returns (SubsampleFit, values) or raises."""
    n = len(y)
    nonneg_offset = 3
    last_error: Exception | None = None
    for attempt in range(config.max_redraws + 1):
        rng = np.random.default_rng(
            np.random.SeedSequence((config.seed, round_idx, unit_idx, attempt))
        )
        idx = stratified_subsample(y, config.subsample_size, rng)
        try:
            with threadpool_limits(limits=1):
                basis = BasisSet(
                    support,
                    y[idx],
                    error,
                    default_constraint_points(*support, config.constraint_point_count),
                    n_quad_nodes=config.quadrature_nodes,
                )
                gram = gram_matrix(basis)
                likelihood = basis.response_rows(y)
                alpha0, nullspace = equality_nullspace(gram, len(idx))
                nonneg = np.arange(len(idx) + nonneg_offset, basis.size)
                probe = Objective(gram, likelihood, 0.0, alpha0, nullspace, nonneg, 0.0)
                beta0 = initialize_coeffs(
                    y, basis, alpha0, nullspace, probe, gram=gram,
                    smoothness_factor=config.init_smoothness_factor,
                )
                if lam_fixed is not None:
                    lam = lam_fixed
                else:
                    ratio = config.heuristic_ratio or default_heuristic_ratio(n)
                    lam = config.heuristic_calibration * heuristic_lambda(probe, beta0, ratio)
                base = Objective(gram, likelihood, lam, alpha0, nullspace, nonneg, 0.0)
                j0 = penalized_nll(base, beta0)
                barrier = 1e6 * (abs(j0) + 1.0)
                result = None
                alpha = None
                violation = np.inf
                for _ in range(5):
                    obj = replace(base, barrier_weight=barrier)
                    result = nelder_mead(lambda b: penalized_nll(obj, b), beta0, SimplexOptions())
                    alpha = obj.expand(result.x)
                    violation = obj.constraint_violation(alpha)
                    if violation <= VIOLATION_TOLERANCE:
                        break
                    barrier *= 10.0
                    beta0 = result.x
                if not np.isfinite(result.fun):
                    raise InfeasibleStartError("solver returned non-finite objective")
                values = eval_density(alpha, basis, grid)
                sub = SubsampleFit(
                    alpha=alpha,
                    basis=basis,
                    indices=idx,
                    converged=result.converged,
                    violation_max=violation,
                    lam=lam,
                    objective_value=result.fun,
                )
                return sub, values, None
        except (ValueError, np.linalg.LinAlgError) as exc:
            last_error = exc
    return None, None, f"unit {unit_idx}: {last_error}"


def _fit_on_support(y, error, support, config, lam_fixed, round_idx, n_subsamples):
    grid = np.linspace(support[0], support[1], config.grid_points)
    workers = resolve_workers(config.n_jobs)
    outcomes = Parallel(n_jobs=min(workers, n_subsamples))(
        delayed(_subsample_unit)(y, error, support, config, lam_fixed, round_idx, unit, grid)
        for unit in range(n_subsamples)
    )
    fits = [sub for sub, _, _ in outcomes if sub is not None]
    stacked = [vals for _, vals, _ in outcomes if vals is not None]
    failures = [msg for _, _, msg in outcomes if msg is not None]
    if not fits:
        raise FitError("all subsample fits failed", diagnostics=failures)
    raw = np.mean(stacked, axis=0)
    return grid, raw, fits, failures


def _finalize(support, grid, raw, fits, diagnostics) -> DensityEstimate:
    values = np.maximum(raw, 0.0)
    integral = float(np.trapezoid(values, grid))
    diagnostics["integral_before_normalization"] = integral
    if integral <= 0.0:
        raise FitError("averaged estimate has non-positive mass")
    values = values / integral
    lams = [sub.lam for sub in fits]
    diagnostics["lambda"] = float(np.median(lams))
    diagnostics["lambdas"] = lams
    diagnostics["violation_max"] = [sub.violation_max for sub in fits]
    return DensityEstimate(
        support=support,
        grid=grid,
        values=values,
        raw_values=raw,
        per_subsample=fits,
        diagnostics=diagnostics,
    )


def _pipeline_support(y, error, config: FitConfig) -> tuple[float, float]:
    # hull of the extreme-based rule and the moment interval; the former
    # degenerates at low signal-to-noise, the latter backstops it
    lower, upper = initial_support(y, error, config.support_padding)
    if isinstance(error, ErrorModel):
        m_lower, m_upper = moment_support(y, error)
        lower, upper = min(lower, m_lower), max(upper, m_upper)
    return (lower, upper)


def fit_density(y, error: ErrorModel, config: FitConfig | None = None) -> DensityEstimate:
    """Fit the deconvolved density of ``y`` under the given error model.

    Pipeline: choose a support, then per subsample build the basis and
    Gram matrix, project a KDE start, select the penalty, and run the
    simplex solver; average the per-subsample densities on a common grid,
    shrinking the support and refitting while the average dips negative
    at a boundary.
    """
    config = config or FitConfig()
    y = np.sort(np.asarray(y, dtype=float))
    n = len(y)
    if n < config.subsample_size:
        raise ValueError(f"need at least subsample_size={config.subsample_size} observations")
    n_subsamples = config.n_subsamples or max(
        10, math.ceil(2 * n / config.subsample_size)
    )
    support = tuple(config.support) if config.support else _pipeline_support(y, error, config)

    if config.lambda_mode == "fixed":
        lam_fixed = float(config.lambda_value)
    elif config.lambda_mode == "cv":
        lam_fixed = cv_lambda(y, error, config, support)
    else:
        lam_fixed = None

    diagnostics: dict = {"warnings": [], "failed_units": []}
    shrink_history = [support]
    for round_idx in range(config.max_shrink_rounds + 1):
        grid, raw, fits, failures = _fit_on_support(
            y, error, support, config, lam_fixed, round_idx, n_subsamples
        )
        diagnostics["failed_units"].extend(failures)
        new_support = _shrink_from_values(grid, raw, support)
        if new_support == support or round_idx == config.max_shrink_rounds:
            if new_support != support:
                diagnostics["warnings"].append(
                    "boundary negativity persisted after max shrink rounds"
                )
            break
        support = new_support
        shrink_history.append(support)
    diagnostics["shrink_history"] = shrink_history
    return _finalize(support, grid, raw, fits, diagnostics)


def cv_lambda(y, error: ErrorModel, config: FitConfig, support=None) -> float:
    """Penalty weight maximizing K-fold validation log-likelihood.

    The grid is log-spaced around the heuristic value; validation scores
    use the convolved density at held-out points floored at 1e-12.  Ties
    break toward the smoother (larger) penalty.
    """
    y = np.sort(np.asarray(y, dtype=float))
    n = len(y)
    if 2 * config.cv_folds > n:
        raise ValueError("too few observations for the requested folds")
    if support is None:
        support = config.support or _pipeline_support(y, error, config)

    anchor = _anchor_lambda(y, error, config, support)
    if config.cv_grid_size == 1:
        grid = np.array([anchor])
    else:
        grid = np.geomspace(anchor / 100.0, anchor * 100.0, config.cv_grid_size)

    rng = np.random.default_rng(np.random.SeedSequence((config.seed, _CV_FOLD_TAG)))
    perm = rng.permutation(n)
    folds = np.array_split(perm, config.cv_folds)

    sub_config = replace(
        config,
        lambda_mode="fixed",
        lambda_value=1.0,
        support=support,
        max_shrink_rounds=0,
        n_subsamples=config.n_subsamples or max(3, math.ceil(2 * n / config.subsample_size)),
    )
    units = []
    for fold in folds:
        mask = np.ones(n, dtype=bool)
        mask[fold] = False
        if mask.sum() < config.subsample_size:
            raise ValueError("fold too small: training set below subsample size")
        for gi, lam in enumerate(grid):
            units.append((gi, y[mask], y[~mask], float(lam)))

    def _score_unit(unit):
        gi, train, val, lam = unit
        try:
            est = fit_density(train, error, replace(sub_config, lambda_value=lam, n_jobs=1))
        except (FitError, ValueError):
            return gi, None
        conv = np.maximum(est.convolved_pdf(val), CV_SCORE_FLOOR)
        return gi, float(np.log(conv).sum())

    workers = resolve_workers(config.n_jobs)
    results = Parallel(n_jobs=min(workers, len(units)))(
        delayed(_score_unit)(unit) for unit in units
    )
    scores = np.zeros(len(grid))
    usable = np.ones(len(grid), dtype=bool)
    for gi, score in results:
        if score is None:
            usable[gi] = False
        else:
            scores[gi] += score
    if not usable.any():
        raise FitError("cross-validation failed on every fold for every penalty value")
    scores[~usable] = -np.inf
    best = np.flatnonzero(scores >= scores.max() - 1e-12)[-1]  # prefer larger lambda
    return float(grid[best])


def _anchor_lambda(y, error, config, support) -> float:
    if config.heuristic_ratio:
        ratio = config.heuristic_ratio
    else:
        ratio = default_heuristic_ratio(len(y))
    rng = np.random.default_rng(np.random.SeedSequence((config.seed, _CV_ANCHOR_TAG)))
    idx = stratified_subsample(y, config.subsample_size, rng)
    basis = BasisSet(
        support,
        y[idx],
        error,
        default_constraint_points(*support, config.constraint_point_count),
        n_quad_nodes=config.quadrature_nodes,
    )
    gram = gram_matrix(basis)
    likelihood = basis.response_rows(y)
    alpha0, nullspace = equality_nullspace(gram, len(idx))
    nonneg = np.arange(len(idx) + 3, basis.size)
    probe = Objective(gram, likelihood, 0.0, alpha0, nullspace, nonneg, 0.0)
    beta0 = initialize_coeffs(
        y, basis, alpha0, nullspace, probe, gram=gram,
        smoothness_factor=config.init_smoothness_factor,
    )
    return config.heuristic_calibration * heuristic_lambda(probe, beta0, ratio)
