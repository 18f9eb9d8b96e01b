"""Function basis, inner products, and density evaluation.

The estimated density's second derivative is expanded over a basis of
``n + k`` functions on the support ``[l, u]``: one integrated-CDF
translate per anchor observation, the polynomials ``1, r, r**2``, and one
hinge-combination "bridge" function per constraint point.  All L2 inner
products are computed by a panel-wise Simpson rule whose panel edges
include every slope break of the integrands, so products of piecewise
cubics (the empirical and point-mass error cases) integrate exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .distributions import ErrorModel

MAX_KINK_NODES = 50_000


@dataclass(frozen=True)
class QuadratureRule:
    """Panel-Simpson rule: edges, refined points (edges + midpoints), weights."""

    edges: np.ndarray
    points: np.ndarray
    weights: np.ndarray

    @property
    def panel_widths(self) -> np.ndarray:
        return np.diff(self.edges)


def build_rule(lower: float, upper: float, n_nodes: int = 4096, kinks=None) -> QuadratureRule:
    """Simpson rule on [lower, upper] with kink locations forced onto panel edges."""
    if not (np.isfinite(lower) and np.isfinite(upper) and lower < upper):
        raise ValueError(f"invalid interval ({lower}, {upper})")
    edges = np.linspace(lower, upper, max(int(n_nodes), 16))
    if kinks is not None and len(kinks):
        kinks = np.asarray(kinks, dtype=float)
        inside = kinks[(kinks > lower) & (kinks < upper)]
        if inside.size and inside.size <= MAX_KINK_NODES:
            edges = np.union1d(edges, inside)
    # merge nearly coincident edges; zero-width panels break the midpoint step
    keep = np.concatenate([[True], np.diff(edges) > 1e-13 * (upper - lower)])
    keep[-1] = True
    edges = edges[keep]
    if edges[-1] != upper:
        edges[-1] = upper
    mids = 0.5 * (edges[:-1] + edges[1:])
    points = np.empty(2 * len(edges) - 1)
    points[0::2] = edges
    points[1::2] = mids
    h = np.diff(edges)
    weights = np.zeros_like(points)
    weights[0:-1:2] += h / 6.0
    weights[1::2] += 4.0 * h / 6.0
    weights[2::2] += h / 6.0
    return QuadratureRule(edges=edges, points=points, weights=weights)


def default_constraint_points(lower: float, upper: float, count: int = 30) -> np.ndarray:
    """``count`` evenly spaced interior points, excluding both endpoints."""
    m = np.arange(1, count + 1)
    return lower + m * (upper - lower) / (count + 1)


def bridge_function(lower: float, upper: float, x: float, r) -> np.ndarray:
    """Hinge combination whose inner product with f'' evaluates f at ``x``.

    Orthogonal to 1 and r on [lower, upper] by construction, which is what
    lets it carry the pointwise non-negativity constraints.
    """
    r = np.asarray(r, dtype=float)
    w = upper - lower
    a = x - lower
    b = upper - x
    w_left = b * b * (b + 3.0 * a) / w**3
    w_right = a * a * (a + 3.0 * b) / w**3
    const = 2.0 * a * a * b * b / w**3
    return w_left * np.maximum(x - r, 0.0) + w_right * np.maximum(r - x, 0.0) - const


class BasisSet:
    """Basis over [l, u]: anchor responses, polynomials, and bridge terms.

    Index layout (0-based): ``0..n-1`` anchor functions ``H(y_i - r)``,
    ``n..n+2`` the polynomials ``1, r, r**2``, and ``n+3..n+k-1`` bridge
    functions at the constraint points.
    """

    def __init__(
        self,
        support: tuple[float, float],
        anchors,
        error_model: ErrorModel,
        constraint_points=None,
        n_quad_nodes: int = 4096,
    ):
        lower, upper = float(support[0]), float(support[1])
        if not lower < upper:
            raise ValueError("support must satisfy l < u")
        self.support = (lower, upper)
        self.anchors = np.asarray(anchors, dtype=float)
        self.error_model = error_model
        if constraint_points is None:
            constraint_points = default_constraint_points(lower, upper)
        self.constraint_points = np.asarray(constraint_points, dtype=float)
        if len(self.constraint_points):
            inside = (self.constraint_points > lower) & (self.constraint_points < upper)
            if not inside.all() or np.any(np.diff(self.constraint_points) <= 0):
                raise ValueError("constraint points must be strictly increasing inside (l, u)")
        self.rule = build_rule(lower, upper, n_quad_nodes, kinks=self._kinks())
        self._design = None

    def _kinks(self) -> np.ndarray:
        pieces = [self.constraint_points]
        err_kinks = self.error_model.kink_points()
        if err_kinks.size and err_kinks.size * len(self.anchors) <= MAX_KINK_NODES:
            pieces.append((self.anchors[:, None] - err_kinks[None, :]).ravel())
        return np.concatenate(pieces) if pieces else np.empty(0)

    @property
    def n_anchors(self) -> int:
        return len(self.anchors)

    @property
    def size(self) -> int:
        return len(self.anchors) + 3 + len(self.constraint_points)

    def evaluate(self, i: int, r):
        """Value of basis function ``i`` at ``r`` (scalar or array)."""
        n = self.n_anchors
        if not 0 <= i < self.size:
            raise IndexError(f"basis index {i} out of range for size {self.size}")
        r = np.asarray(r, dtype=float)
        if i < n:
            return self.error_model.h(self.anchors[i] - r)
        if i == n:
            return np.ones_like(r)
        if i == n + 1:
            return r.copy()
        if i == n + 2:
            return r * r
        x = self.constraint_points[i - n - 3]
        return bridge_function(*self.support, x, r)

    def design_matrix(self) -> np.ndarray:
        """All basis functions evaluated at the quadrature points, (size, P)."""
        if self._design is None:
            pts = self.rule.points
            rows = np.empty((self.size, len(pts)))
            n = self.n_anchors
            if n:
                rows[:n] = self.error_model.h(self.anchors[:, None] - pts[None, :])
            rows[n] = 1.0
            rows[n + 1] = pts
            rows[n + 2] = pts * pts
            for j, x in enumerate(self.constraint_points):
                rows[n + 3 + j] = bridge_function(*self.support, x, pts)
            self._design = rows
        return self._design

    def response_rows(self, obs) -> np.ndarray:
        """Convolved responses ``<H(t - .), k_j>`` for each t in ``obs``.

        Row t, dotted with a coefficient vector, gives the convolved
        density of the estimate at t.  Anchor observations reproduce the
        corresponding Gram rows.
        """
        obs = np.asarray(obs, dtype=float)
        pts = self.rule.points
        h_rows = self.error_model.h(obs[:, None] - pts[None, :])
        return (h_rows * self.rule.weights) @ self.design_matrix().T


def gram_matrix(basis: BasisSet) -> np.ndarray:
    """Matrix of pairwise L2 inner products of the basis functions."""
    design = basis.design_matrix()
    if not np.all(np.isfinite(design)):
        raise ValueError("non-finite basis evaluations on the quadrature grid")
    gram = (design * basis.rule.weights) @ design.T
    gram = 0.5 * (gram + gram.T)
    lower, upper = basis.support
    n = basis.n_anchors
    for a in range(3):
        for b in range(3):
            p = a + b + 1
            gram[n + a, n + b] = (upper**p - lower**p) / p
    return gram


def convolved_density(alpha: np.ndarray, gram: np.ndarray, i: int) -> float:
    """Convolved density of the estimate at anchor observation ``i``."""
    return float(gram[i] @ alpha)


class _PanelCoefficients:
    # quadratic interpolant of f'' per panel, plus cumulative integrals
    def __init__(self, basis: BasisSet, alpha: np.ndarray):
        fpp = np.asarray(alpha, dtype=float) @ basis.design_matrix()
        fa, fm, fb = fpp[0:-1:2], fpp[1::2], fpp[2::2]
        self.edges = basis.rule.edges
        self.h = basis.rule.panel_widths
        self.p0 = fa
        self.p1 = -3.0 * fa + 4.0 * fm - fb
        self.p2 = 2.0 * fa - 4.0 * fm + 2.0 * fb
        panel0 = self.h * (fa + 4.0 * fm + fb) / 6.0
        panel1 = self.edges[:-1] * panel0 + self.h**2 * (
            self.p0 / 2.0 + self.p1 / 3.0 + self.p2 / 4.0
        )
        self.cum0 = np.concatenate([[0.0], np.cumsum(panel0)])
        self.cum1 = np.concatenate([[0.0], np.cumsum(panel1)])

    def partials(self, j: np.ndarray, x: np.ndarray):
        h = self.h[j]
        s = (x - self.edges[j]) / h
        p0, p1, p2 = self.p0[j], self.p1[j], self.p2[j]
        part0 = h * (p0 * s + p1 * s**2 / 2.0 + p2 * s**3 / 3.0)
        part_m = h**2 * (p0 * s**2 / 2.0 + p1 * s**3 / 6.0 + p2 * s**4 / 12.0)
        part1 = self.edges[j] * part0 + h**2 * (
            p0 * s**2 / 2.0 + p1 * s**3 / 3.0 + p2 * s**4 / 4.0
        )
        return part0, part1, part_m


def eval_density(alpha: np.ndarray, basis: BasisSet, x, form: str = "left"):
    """Density implied by the coefficient vector at point(s) ``x``.

    Integrates the basis expansion of f'' against the evaluation hinge
    (``form="left"`` is canonical; ``form="right"`` integrates from the
    other endpoint and agrees for coefficient vectors on the constraint
    set).  Points outside the support return 0.
    """
    lower, upper = basis.support
    x_arr = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.zeros_like(x_arr)
    inside = (x_arr >= lower) & (x_arr <= upper)
    if inside.any():
        coeffs = _PanelCoefficients(basis, alpha)
        xv = x_arr[inside]
        j = np.clip(np.searchsorted(coeffs.edges, xv, side="right") - 1, 0, len(coeffs.h) - 1)
        part0, part1, part_m = coeffs.partials(j, xv)
        if form == "left":
            vals = xv * coeffs.cum0[j] - coeffs.cum1[j] + part_m
        elif form == "right":
            total0, total1 = coeffs.cum0[-1], coeffs.cum1[-1]
            rest0 = total0 - coeffs.cum0[j] - part0
            rest1 = total1 - coeffs.cum1[j] - part1
            vals = rest1 - xv * rest0
        else:
            raise ValueError("form must be 'left' or 'right'")
        out[inside] = vals
    return out if np.ndim(x) else float(out[0])
