"""Penalized negative log-likelihood objective and simplex minimizer.

The three linear equality constraints (zero mean-slope/mass conditions on
f'' and the unit-integral condition) are eliminated exactly by a
null-space reparameterization, so the simplex search runs unconstrained
on the affine feasible set.  Pointwise non-negativity at the constraint
points is a one-sided linear penalty; a non-positive convolved density at
any observation makes the log-likelihood undefined and is treated as an
infinitely bad vertex.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import null_space


class InfeasibleStartError(ValueError):
    pass


def equality_nullspace(gram: np.ndarray, n_anchors: int):
    """Particular solution and null-space basis of the equality constraints.

    The constraint rows are the Gram rows of 1, r and r**2 with targets
    (0, 0, 2).  Returns ``(alpha0, nullspace)`` where ``alpha0`` is the
    minimum-norm solution and the null-space columns are orthonormal.
    """
    n = n_anchors
    rows = gram[[n, n + 1, n + 2]]
    target = np.array([0.0, 0.0, 2.0])
    sv = np.linalg.svd(rows, compute_uv=False)
    if sv[-1] <= 1e-10 * np.linalg.norm(rows, axis=1).max():
        raise ValueError(
            f"equality constraint rows {n}..{n + 2} are rank deficient "
            f"(singular values {sv})"
        )
    alpha0, *_ = np.linalg.lstsq(rows, target, rcond=None)
    basis = null_space(rows)
    return alpha0, basis


@dataclass
class Objective:
    """Data for the reduced-coordinate penalized objective.

    ``likelihood`` holds one convolved-response row per observation (for a
    basis anchored on the full sample these are the first ``n`` Gram
    rows).  ``nonneg_rows`` indexes the Gram rows carrying the pointwise
    non-negativity constraints.
    """

    gram: np.ndarray
    likelihood: np.ndarray
    lam: float
    alpha0: np.ndarray
    nullspace: np.ndarray
    nonneg_rows: np.ndarray
    barrier_weight: float = 0.0

    def expand(self, beta: np.ndarray) -> np.ndarray:
        beta = np.asarray(beta, dtype=float)
        if beta.shape != (self.nullspace.shape[1],):
            raise ValueError(
                f"expected {self.nullspace.shape[1]} reduced coordinates, got {beta.shape}"
            )
        return self.alpha0 + self.nullspace @ beta

    def constraint_violation(self, alpha: np.ndarray) -> float:
        if len(self.nonneg_rows) == 0:
            return 0.0
        vals = self.gram[self.nonneg_rows] @ alpha
        return float(max(0.0, -vals.min()))


def penalized_nll(obj: Objective, beta: np.ndarray) -> float:
    """Penalized negative log-likelihood at reduced coordinates ``beta``.

    Returns ``inf`` when any observation's convolved density is
    non-positive (log undefined).
    """
    alpha = obj.expand(beta)
    conv = obj.likelihood @ alpha
    if conv.min() <= 0.0:
        return np.inf
    g_alpha = obj.gram @ alpha
    value = -np.log(conv).sum() + obj.lam * float(alpha @ g_alpha)
    if obj.barrier_weight > 0.0 and len(obj.nonneg_rows):
        value += obj.barrier_weight * np.maximum(-g_alpha[obj.nonneg_rows], 0.0).sum()
    return float(value)


@dataclass
class SimplexOptions:
    """Knobs for the simplex minimizer (classic coefficient defaults)."""

    max_iterations: int | None = None  # default 200 * dimension
    f_tol: float | None = None  # default 1e-8 * (1 + |f(x0)|)
    x_tol: float = 1e-6  # vertices may straddle a minimum with equal values
    reflection: float = 1.0
    expansion: float = 2.0
    contraction: float = 0.5
    shrink: float = 0.5
    restarts: int = 1  # one re-polish from the best point costs little

    def __post_init__(self):
        if self.reflection <= 0 or not 0 < self.contraction < 1:
            raise ValueError("need reflection > 0 and 0 < contraction < 1")
        if self.expansion <= 1 or not 0 < self.shrink < 1:
            raise ValueError("need expansion > 1 and 0 < shrink < 1")


@dataclass
class SimplexResult:
    x: np.ndarray
    fun: float
    iterations: int
    converged: bool
    history: list = field(default_factory=list, repr=False)


def _initial_simplex(x0: np.ndarray) -> np.ndarray:
    dim = len(x0)
    simplex = np.tile(x0, (dim + 1, 1))
    for d in range(dim):
        simplex[d + 1, d] += max(0.05 * abs(x0[d]), 0.00025)
    return simplex


def nelder_mead(f, x0, options: SimplexOptions | None = None) -> SimplexResult:
    """Minimize ``f`` from ``x0`` by the reflect/expand/contract/shrink simplex.

    ``f`` may return ``inf`` for infeasible points; such vertices are
    ordered worst.  Deterministic given ``x0`` and the options.  Raises
    ``InfeasibleStartError`` when ``f(x0)`` itself is not finite.
    """
    opts = options or SimplexOptions()
    x0 = np.asarray(x0, dtype=float)
    f0 = f(x0)
    if not np.isfinite(f0):
        raise InfeasibleStartError("infeasible start: objective not finite at x0")

    dim = len(x0)
    max_iter = opts.max_iterations if opts.max_iterations is not None else 200 * dim
    f_tol = opts.f_tol if opts.f_tol is not None else 1e-8 * (1.0 + abs(f0))

    best_x, best_f = x0.copy(), f0
    total_iter = 0
    converged = False
    history: list = []
    budget = max_iter

    for _ in range(opts.restarts + 1):
        simplex = _initial_simplex(best_x)
        values = np.array([best_f] + [f(v) for v in simplex[1:]])
        while total_iter < budget:
            order = np.argsort(values, kind="stable")
            simplex, values = simplex[order], values[order]
            history.append(values[0])
            spread = values[-1] - values[0]
            if spread <= f_tol and (
                opts.x_tol <= 0.0 or np.abs(simplex[1:] - simplex[0]).max() <= opts.x_tol
            ):
                converged = True
                break
            total_iter += 1
            centroid = simplex[:-1].mean(axis=0)
            reflected = centroid + opts.reflection * (centroid - simplex[-1])
            f_ref = f(reflected)
            if f_ref < values[0]:
                expanded = centroid + opts.expansion * (reflected - centroid)
                f_exp = f(expanded)
                if f_exp < f_ref:
                    simplex[-1], values[-1] = expanded, f_exp
                else:
                    simplex[-1], values[-1] = reflected, f_ref
            elif f_ref < values[-2]:
                simplex[-1], values[-1] = reflected, f_ref
            else:
                if f_ref < values[-1]:
                    simplex[-1], values[-1] = reflected, f_ref
                contracted = centroid + opts.contraction * (simplex[-1] - centroid)
                f_con = f(contracted)
                if f_con < values[-1]:
                    simplex[-1], values[-1] = contracted, f_con
                else:
                    simplex[1:] = simplex[0] + opts.shrink * (simplex[1:] - simplex[0])
                    values[1:] = [f(v) for v in simplex[1:]]
        i_best = int(np.argmin(values))
        if values[i_best] < best_f:
            best_x, best_f = simplex[i_best].copy(), float(values[i_best])
        if total_iter >= budget:
            break

    return SimplexResult(
        x=best_x, fun=best_f, iterations=total_iter, converged=converged, history=history
    )
