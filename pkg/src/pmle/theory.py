"""Numerical validators for the smoothness-penalty inequalities.

Each check evaluates one provable bound on concrete sampled densities:
the sup-norm and Lipschitz bounds in terms of the curvature penalty, the
penalty contraction under convolution, Kullback-Leibler lower bounds for
separated densities, the log-ratio integral bound for densities with few
modes, and the closed-form penalty-rate constants.  Randomized sweeps
over generated densities are the property suite for these bounds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .distributions import ErrorModel

DENSITY_TOL = 1e-4
DEFAULT_GRID = 10_001


class HypothesisError(ValueError):
    """The inputs do not satisfy the hypothesis of the requested bound."""


@dataclass(frozen=True)
class BoundCheck:
    """Outcome of one inequality check; ``margin >= 0`` iff it holds."""

    lhs: float
    rhs: float
    holds: bool
    margin: float


@dataclass
class SampledDensity:
    """A function sampled on a uniform grid with its first two derivatives."""

    grid: np.ndarray
    values: np.ndarray
    deriv1: np.ndarray
    deriv2: np.ndarray
    is_density: bool = True

    def __post_init__(self):
        if self.is_density:
            total = np.trapezoid(self.values, self.grid)
            if abs(total - 1.0) > DENSITY_TOL:
                raise ValueError(f"values integrate to {total}, not 1")
            if self.values.min() < -1e-12:
                raise ValueError("density values must be non-negative")

    @property
    def spacing(self) -> float:
        return float(self.grid[1] - self.grid[0])

    @classmethod
    def from_callable(cls, func, lower, upper, num=DEFAULT_GRID, deriv1=None, deriv2=None,
                      is_density=True) -> "SampledDensity":
        grid = np.linspace(lower, upper, num)
        values = np.asarray(func(grid), dtype=float)
        h = grid[1] - grid[0]
        d1 = np.asarray(deriv1(grid), float) if deriv1 else _stencil_d1(func, grid, h)
        d2 = np.asarray(deriv2(grid), float) if deriv2 else _stencil_d2(func, grid, h)
        return cls(grid=grid, values=values, deriv1=d1, deriv2=d2, is_density=is_density)


def _stencil_d1(func, grid, h):
    # 5-point central differences, evaluating func off-grid
    return (func(grid - 2 * h) - 8 * func(grid - h) + 8 * func(grid + h) - func(grid + 2 * h)) / (
        12 * h
    )


def _stencil_d2(func, grid, h):
    return (
        -func(grid - 2 * h)
        + 16 * func(grid - h)
        - 30 * func(grid)
        + 16 * func(grid + h)
        - func(grid + 2 * h)
    ) / (12 * h**2)


def _array_d2(values: np.ndarray, h: float) -> np.ndarray:
    # 5-point stencil on stored values; ends padded by nearest interior value
    out = np.empty_like(values)
    out[2:-2] = (
        -values[:-4] + 16 * values[1:-3] - 30 * values[2:-2] + 16 * values[3:-1] - values[4:]
    ) / (12 * h**2)
    out[:2] = out[2]
    out[-2:] = out[-3]
    return out


def smoothness(density: SampledDensity) -> float:
    """Curvature penalty: the integral of the squared second derivative."""
    if density.deriv2 is None:
        raise ValueError("second derivative unavailable")
    return float(np.trapezoid(density.deriv2**2, density.grid))


def _bump(x, delta):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    left = (x > -delta) & (x <= 0.0)
    right = (x > 0.0) & (x < delta)
    t = x[left] + delta
    out[left] = (3 * delta * t * t - 2 * t**3) / delta**4
    t = x[right] - delta
    out[right] = (3 * delta * t * t + 2 * t**3) / delta**4
    return out


def _bump_d1(x, delta):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    left = (x > -delta) & (x <= 0.0)
    right = (x > 0.0) & (x < delta)
    t = x[left] + delta
    out[left] = (6 * delta * t - 6 * t * t) / delta**4
    t = x[right] - delta
    out[right] = (6 * delta * t + 6 * t * t) / delta**4
    return out


def _bump_d2(x, delta):
    # closed masks: the second derivative jumps at the support edges and the
    # inside-limit values are the ones the curvature integral needs
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    left = (x >= -delta) & (x <= 0.0)
    right = (x > 0.0) & (x <= delta)
    out[left] = (6 * delta - 12 * (x[left] + delta)) / delta**4
    out[right] = (6 * delta + 12 * (x[right] - delta)) / delta**4
    return out


def bump_kernel(delta: float, num: int = DEFAULT_GRID) -> SampledDensity:
    """The compactly supported piecewise-cubic kernel on [-delta, delta].

    Unit mass, peak value 1/delta, curvature penalty 24/delta**5.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    grid = np.linspace(-delta, delta, num)
    return SampledDensity(
        grid=grid,
        values=_bump(grid, delta),
        deriv1=_bump_d1(grid, delta),
        deriv2=_bump_d2(grid, delta),
    )


def gaussian_mixture_density(weights, means, sigmas, num=DEFAULT_GRID) -> SampledDensity:
    """Gaussian mixture with analytic derivatives on an 8-sigma grid."""
    weights = np.asarray(weights, float)
    means = np.asarray(means, float)
    sigmas = np.asarray(sigmas, float)
    lower = float((means - 8 * sigmas).min())
    upper = float((means + 8 * sigmas).max())
    grid = np.linspace(lower, upper, num)
    z = (grid[None, :] - means[:, None]) / sigmas[:, None]
    phi = np.exp(-0.5 * z * z) / np.sqrt(2 * np.pi)
    w = (weights / sigmas)[:, None]
    values = (w * phi).sum(axis=0)
    d1 = (w * -z * phi / sigmas[:, None]).sum(axis=0)
    d2 = (w * (z * z - 1) * phi / sigmas[:, None] ** 2).sum(axis=0)
    return SampledDensity(grid=grid, values=values, deriv1=d1, deriv2=d2)


def bump_mixture_density(weights, centers, deltas, num=DEFAULT_GRID,
                         pad: float = 0.0) -> SampledDensity:
    """Mixture of compact piecewise-cubic bumps; boundary-vanishing."""
    weights = np.asarray(weights, float)
    centers = np.asarray(centers, float)
    deltas = np.asarray(deltas, float)
    lower = float((centers - deltas).min()) - pad
    upper = float((centers + deltas).max()) + pad
    grid = np.linspace(lower, upper, num)
    values = np.zeros_like(grid)
    d1 = np.zeros_like(grid)
    d2 = np.zeros_like(grid)
    for w, c, d in zip(weights, centers, deltas):
        values += w * _bump(grid - c, d)
        d1 += w * _bump_d1(grid - c, d)
        d2 += w * _bump_d2(grid - c, d)
    return SampledDensity(grid=grid, values=values, deriv1=d1, deriv2=d2)


def check_supnorm_bound(density: SampledDensity) -> BoundCheck:
    """Peak density against the fifth-root curvature bound."""
    if not density.is_density:
        raise ValueError("sup-norm bound applies to densities")
    lhs = float(density.values.max())
    rhs = (5**4 * smoothness(density) / (3 * 2**12)) ** 0.2
    holds = lhs <= rhs * (1 + 1e-6)
    return BoundCheck(lhs, rhs, holds, rhs - lhs)


def check_lipschitz_bound(density: SampledDensity) -> BoundCheck:
    """Peak slope against the curvature bound (compact support required)."""
    boundary = max(abs(density.values[0]), abs(density.values[-1]))
    if boundary > 1e-8 * max(density.values.max(), 1.0):
        raise HypothesisError("density must vanish at the grid boundary")
    lhs = float(np.abs(density.deriv1).max())
    rhs = (125 * smoothness(density) ** 2 / 144) ** 0.2
    holds = lhs <= rhs * (1 + 1e-6)
    return BoundCheck(lhs, rhs, holds, rhs - lhs)


def convolve_with_error(density: SampledDensity, error: ErrorModel) -> SampledDensity:
    """Grid convolution of a sampled density with an error distribution."""
    h = density.spacing
    if error.kind == "point_mass":
        shift = error.scale * error.loc
        grid = density.grid + shift
        return SampledDensity(
            grid=grid,
            values=density.values.copy(),
            deriv1=density.deriv1.copy(),
            deriv2=density.deriv2.copy(),
            is_density=density.is_density,
        )
    lo, hi = error.support_bounds()
    pad = 0.1 * (hi - lo) + h
    t = np.arange(lo - pad, hi + pad + h, h)
    # error mass per grid cell from CDF differences (robust to CDF jumps)
    cell = np.diff(error.cdf(np.concatenate([[t[0] - 0.5 * h], t + 0.5 * h])))
    vals = np.convolve(density.values, cell, mode="full")
    grid = (density.grid[0] + t[0]) + h * np.arange(len(vals))
    d2 = _array_d2(vals, h)
    return SampledDensity(grid=grid, values=vals, deriv1=np.gradient(vals, h), deriv2=d2,
                          is_density=density.is_density)


def check_convolution_smoothing(density: SampledDensity, error: ErrorModel) -> BoundCheck:
    """Curvature penalty never increases under convolution."""
    conv = convolve_with_error(density, error)
    psi_conv = smoothness(conv)
    psi_f = smoothness(density)
    holds = psi_conv <= psi_f * (1 + DENSITY_TOL)
    return BoundCheck(psi_conv, psi_f, holds, psi_f - psi_conv)


def _kl_divergence(g: SampledDensity, h_values: np.ndarray) -> float:
    integrand = np.where(
        g.values > 1e-15,
        g.values * np.log(np.maximum(g.values, 1e-300) / np.maximum(h_values, 1e-300)),
        0.0,
    )
    return float(np.trapezoid(integrand, g.grid))


def check_kl_bounds(g: SampledDensity, h: SampledDensity, x0=None, delta=None, eps=None,
                    rho=None) -> BoundCheck:
    """Kullback-Leibler lower bounds for separated densities.

    With ``x0, delta, eps``: requires ``h`` to exceed ``g`` by more than
    ``eps`` (or fall below by more than ``eps``) on the whole window
    ``[x0 - delta, x0 + delta]``.  With ``rho``: requires a sup-norm gap
    above ``rho`` between two Lipschitz densities with ``rho < sqrt(2L)``.
    Raises :class:`HypothesisError` when the assumptions fail.
    """
    if not np.array_equal(g.grid, h.grid):
        raise ValueError("g and h must share a grid")
    kl = _kl_divergence(g, h.values)
    if rho is not None:
        lipschitz = float(max(np.abs(g.deriv1).max(), np.abs(h.deriv1).max()))
        gap = float(np.abs(g.values - h.values).max())
        if gap <= rho:
            raise HypothesisError(f"sup-norm gap {gap} does not exceed rho={rho}")
        if rho >= np.sqrt(2 * lipschitz):
            raise HypothesisError("rho must be below sqrt(2 L)")
        bound = rho**4 / (48 * lipschitz**2)
    else:
        if x0 is None or delta is None or eps is None:
            raise ValueError("window bounds need x0, delta and eps (or pass rho)")
        window = np.abs(g.grid - x0) <= delta
        if not window.any():
            raise HypothesisError("window contains no grid points")
        above = np.all(h.values[window] > g.values[window] + eps)
        below = np.all(h.values[window] < g.values[window] - eps)
        if above:
            bound = 2 * delta**2 * eps**2
        elif below:
            bound = 2 * delta**2 * eps**2 - (8.0 / 3.0) * delta**3 * eps**3
        else:
            raise HypothesisError(
                "h is neither above g + eps nor below g - eps on the whole window"
            )
    return BoundCheck(kl, bound, kl > bound, kl - bound)


def count_local_maxima(values: np.ndarray, floor: float = 1e-10) -> int:
    """Strict local maxima of a sampled function, ignoring sub-floor wiggles."""
    d = np.diff(values)
    signs = np.where(d > floor, 1, np.where(d < -floor, -1, 0))
    signs = signs[signs != 0]
    if signs.size == 0:
        return 0
    flips = np.sum((signs[:-1] == 1) & (signs[1:] == -1))
    return int(flips)


def check_logratio_integral(g: SampledDensity, r: float, m_max: int) -> BoundCheck:
    """Total log-variation of max(g, r) against the mode-count bound."""
    if r <= 0:
        raise ValueError("r must be positive")
    detected = count_local_maxima(g.values)
    if detected > m_max:
        raise HypothesisError(f"detected {detected} local maxima, more than M={m_max}")
    b = np.maximum(g.values, r)
    db = np.where(g.values > r, g.deriv1, 0.0)
    lhs = float(np.trapezoid(np.abs(db) / b, g.grid))
    rhs = (2 * m_max / 5) * np.log(5**4 * smoothness(g) / (3 * 2**12 * r**5))
    holds = lhs <= rhs * (1 + DENSITY_TOL)
    return BoundCheck(lhs, rhs, holds, rhs - lhs)


def theoretical_lambda(n: int, support_width: float, psi_fx: float, psi_fy: float):
    """Closed-form penalty rate and its two constants.

    Returns ``(lambda_n, c1, c2)`` where
    ``lambda_n = c1 * n**(7/8) * log(n)**(1/8) * sqrt(support_width)``.
    """
    if min(n, support_width, psi_fx, psi_fy) <= 0:
        raise ValueError("all inputs must be positive")
    c1 = 2 ** (31 / 20) * 3 ** (-1 / 10) * 5 ** (3 / 20) / (psi_fx ** 0.8 * psi_fy ** 0.1)
    c2 = (
        (1 + np.sqrt(1 + 3 ** 0.4 / 16)) ** 0.25
        * 2 ** (179 / 80)
        * 3 ** (9 / 40)
        * 5 ** (27 / 80)
        * psi_fx ** 0.25
        * psi_fy ** (-1 / 40)
    )
    lam = c1 * n ** (7 / 8) * np.log(n) ** (1 / 8) * np.sqrt(support_width)
    return float(lam), float(c1), float(c2)


# ---------------------------------------------------------------------------
# Randomized sweeps: the executable property suite for the bounds above.


def random_gaussian_mixture(rng: np.random.Generator, num=DEFAULT_GRID) -> SampledDensity:
    k = int(rng.integers(1, 5))
    raw = rng.random(k) + 0.2
    weights = raw / raw.sum()
    means = rng.uniform(-3.0, 3.0, size=k)
    sigmas = rng.uniform(0.3, 2.0, size=k)
    return gaussian_mixture_density(weights, means, sigmas, num=num)


def random_bump_mixture(rng: np.random.Generator, num=DEFAULT_GRID, k=None,
                        spread=3.0, pad: float = 0.0) -> SampledDensity:
    k = k if k is not None else int(rng.integers(1, 4))
    raw = rng.random(k) + 0.2
    weights = raw / raw.sum()
    centers = rng.uniform(-spread, spread, size=k)
    deltas = rng.uniform(0.5, 2.5, size=k)
    return bump_mixture_density(weights, centers, deltas, num=num, pad=pad)


def sweep_supnorm(count: int, rng: np.random.Generator) -> list[BoundCheck]:
    return [check_supnorm_bound(random_gaussian_mixture(rng, num=4001)) for _ in range(count)]


def sweep_lipschitz(count: int, rng: np.random.Generator) -> list[BoundCheck]:
    return [check_lipschitz_bound(random_bump_mixture(rng, num=4001)) for _ in range(count)]


def sweep_convolution(count: int, rng: np.random.Generator) -> list[BoundCheck]:
    out = []
    for _ in range(count):
        density = random_gaussian_mixture(rng, num=2001)
        kind = ("normal", "laplace", "beta", "uniform")[int(rng.integers(4))]
        error = ErrorModel(kind, scale=float(rng.uniform(0.3, 2.0)))
        out.append(check_convolution_smoothing(density, error))
    return out


def _windowed_pair(rng: np.random.Generator, direction: str):
    for _ in range(100):
        g = random_bump_mixture(rng, num=8001, pad=1.0)
        width = g.grid[-1] - g.grid[0]
        x0 = float(rng.uniform(g.grid[0] + 0.3 * width, g.grid[-1] - 0.3 * width))
        delta = float(rng.uniform(0.02, 0.08) * width)
        window = np.abs(g.grid - x0) <= delta
        outside_mass = float(np.trapezoid(np.where(window, 0.0, g.values), g.grid))
        min_window = float(g.values[window].min())
        if direction == "above":
            eps = min(0.2 * outside_mass / (2.1 * delta), 0.5 * g.values.max())
        else:
            eps = 0.9 * min_window / 1.05
        if eps <= 1e-6 or outside_mass < 0.2:
            continue
        h_values = g.values.copy()
        if direction == "above":
            h_values[window] += 1.05 * eps
            theta = 1.05 * eps * 2 * delta / outside_mass
            h_values[~window] *= 1.0 - theta
        else:
            h_values[window] -= 1.05 * eps
            theta = 1.05 * eps * 2 * delta / outside_mass
            h_values[~window] *= 1.0 + theta
        h = SampledDensity(grid=g.grid, values=h_values, deriv1=g.deriv1, deriv2=g.deriv2,
                           is_density=False)
        return g, h, x0, delta, eps
    raise RuntimeError("failed to construct a windowed pair")


def sweep_kl_window(count: int, rng: np.random.Generator) -> list[BoundCheck]:
    out = []
    for i in range(count):
        direction = "above" if i % 2 == 0 else "below"
        g, h, x0, delta, eps = _windowed_pair(rng, direction)
        out.append(check_kl_bounds(g, h, x0=x0, delta=delta, eps=eps))
    return out


def _anchored_bump_mixture(rng: np.random.Generator, k: int) -> SampledDensity:
    # a weight-0.3 broad bump pins the support to [-6, 6] and keeps the
    # density positive there, so KL against another such mixture is finite
    raw = rng.random(k) + 0.2
    weights = np.concatenate([[0.3], 0.7 * raw / raw.sum()])
    centers = np.concatenate([[0.0], rng.uniform(-2.0, 2.0, size=k)])
    deltas = np.concatenate([[6.0], rng.uniform(0.5, 2.0, size=k)])
    return bump_mixture_density(weights, centers, deltas, num=6001)


def sweep_kl_sup(count: int, rng: np.random.Generator) -> list[BoundCheck]:
    out = []
    tries = 0
    while len(out) < count and tries < 50 * count:
        tries += 1
        k = int(rng.integers(1, 4))
        g = _anchored_bump_mixture(rng, k)
        h = _anchored_bump_mixture(rng, k)
        gap = float(np.abs(g.values - h.values).max())
        lipschitz = float(max(np.abs(g.deriv1).max(), np.abs(h.deriv1).max()))
        rho = 0.999 * gap
        if rho <= 1e-6 or rho >= np.sqrt(2 * lipschitz):
            continue
        out.append(check_kl_bounds(g, h, rho=rho))
    if len(out) < count:
        raise RuntimeError("failed to generate enough sup-gap pairs")
    return out


def sweep_logratio(count: int, rng: np.random.Generator) -> list[BoundCheck]:
    out = []
    for i in range(count):
        if i % 2 == 0:
            g = bump_mixture_density([1.0], [0.0], [float(rng.uniform(0.5, 3.0))], num=8001)
            m_max = 1
        else:
            sep = float(rng.uniform(2.5, 4.0))
            d1, d2 = rng.uniform(0.5, 1.2, size=2)
            g = bump_mixture_density([0.5, 0.5], [-sep / 2, sep / 2], [d1, d2], num=8001)
            m_max = 2
        peak = g.values.max()
        r = peak * 10 ** float(rng.uniform(-2.0, -0.5))
        out.append(check_logratio_integral(g, r, m_max))
    return out


ALL_SWEEPS = {
    "supnorm-bound": sweep_supnorm,
    "lipschitz-bound": sweep_lipschitz,
    "convolution-smoothing": sweep_convolution,
    "kl-window": sweep_kl_window,
    "kl-sup-gap": sweep_kl_sup,
    "log-ratio-integral": sweep_logratio,
}
