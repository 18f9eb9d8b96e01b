"""Error-distribution models and true-density generators.

The error model exposes the three quantities the fitting machinery needs:
the CDF, the integrated CDF ``H(v) = integral of the CDF up to v``
(equivalently ``E[(v - e)+]``), and seeded sampling.  Parametric kinds use
closed forms; the empirical kind is driven by a stored pure-error sample.
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.special import betainc

_SQRT2 = np.sqrt(2.0)
_BETA_STRETCH = np.sqrt(39.2)  # unit-variance stretch of Beta(2, 5)
_LAPLACE_B = 1.0 / _SQRT2  # unit-variance Laplace scale

ERROR_KINDS = ("normal", "laplace", "beta", "point_mass", "uniform", "empirical")


@dataclass(frozen=True)
class ErrorModel:
    """Additive-error distribution with CDF, integrated CDF and sampling.

    Parametric kinds are a unit-variance base form multiplied by ``scale``
    (the error magnitude C; the point mass sits at ``scale * loc``).  The
    empirical kind stores its sample sorted and ignores ``scale``.
    """

    kind: str
    scale: float = 1.0
    loc: float = 0.0
    sample_values: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in ERROR_KINDS:
            raise ValueError(f"unknown error kind {self.kind!r}; valid: {ERROR_KINDS}")
        if self.kind == "empirical":
            if self.sample_values is None or len(self.sample_values) == 0:
                raise ValueError("empirical error model needs a nonempty sample")
            values = np.sort(np.asarray(self.sample_values, dtype=float))
            if not np.all(np.isfinite(values)):
                raise ValueError("empirical error sample must be finite")
            object.__setattr__(self, "sample_values", values)
        elif self.scale <= 0:
            raise ValueError("scale must be positive")

    @classmethod
    def empirical(cls, sample) -> "ErrorModel":
        return cls(kind="empirical", sample_values=np.asarray(sample, dtype=float))

    @classmethod
    def point_mass(cls, loc: float = 0.0) -> "ErrorModel":
        return cls(kind="point_mass", loc=loc)

    def cdf(self, v):
        """CDF of the error distribution, vectorized over ``v``."""
        v = np.asarray(v, dtype=float)
        c = self.scale
        if self.kind == "normal":
            out = stats.norm.cdf(v / c)
        elif self.kind == "laplace":
            out = stats.laplace.cdf(v / c, scale=_LAPLACE_B)
        elif self.kind == "beta":
            t = np.clip(v / (c * _BETA_STRETCH), 0.0, 1.0)
            out = betainc(2.0, 5.0, t)
        elif self.kind == "point_mass":
            out = (v >= c * self.loc).astype(float)
        elif self.kind == "uniform":
            out = np.clip(v / c, 0.0, 1.0)
        else:  # empirical
            e = self.sample_values
            out = np.searchsorted(e, v, side="right") / len(e)
        return out if out.ndim else float(out)

    def h(self, v):
        """Integrated CDF ``H(v) = E[(v - e)+]``, vectorized over ``v``.

        Nondecreasing, convex, zero below the lower support bound, and
        asymptotic to ``v - mean`` for finite-mean kinds.
        """
        v = np.asarray(v, dtype=float)
        if not np.all(np.isfinite(v)):
            raise ValueError("h requires finite evaluation points")
        c = self.scale
        if self.kind == "empirical":
            out = _empirical_h(self.sample_values, v)
        else:
            out = c * self._h_unit(v / c)
        return out if out.ndim else float(out)

    def _h_unit(self, v):
        if self.kind == "normal":
            return v * stats.norm.cdf(v) + stats.norm.pdf(v)
        if self.kind == "laplace":
            b = _LAPLACE_B
            neg = 0.5 * b * np.exp(np.minimum(v, 0.0) / b)
            pos = v + 0.5 * b * np.exp(-np.maximum(v, 0.0) / b)
            return np.where(v <= 0.0, neg, pos)
        if self.kind == "beta":
            s = _BETA_STRETCH
            t = np.clip(v / s, 0.0, 1.0)
            mid = v * betainc(2.0, 5.0, t) - s * (2.0 / 7.0) * betainc(3.0, 5.0, t)
            return np.where(v <= 0.0, 0.0, np.where(v >= s, v - s * 2.0 / 7.0, mid))
        if self.kind == "point_mass":
            return np.maximum(v - self.loc, 0.0)
        if self.kind == "uniform":
            return np.where(v <= 0.0, 0.0, np.where(v < 1.0, 0.5 * v**2, v - 0.5))
        raise AssertionError(self.kind)

    def mean(self) -> float:
        c = self.scale
        if self.kind in ("normal", "laplace"):
            return 0.0
        if self.kind == "beta":
            return c * _BETA_STRETCH * (2.0 / 7.0)
        if self.kind == "point_mass":
            return c * self.loc
        if self.kind == "uniform":
            return 0.5 * c
        return float(np.mean(self.sample_values))

    def variance(self) -> float:
        c = self.scale
        if self.kind in ("normal", "laplace", "beta"):
            return c * c  # unit-variance base forms
        if self.kind == "point_mass":
            return 0.0
        if self.kind == "uniform":
            return c * c / 12.0
        if len(self.sample_values) < 2:
            return 0.0
        return float(np.var(self.sample_values, ddof=1))

    def support_bounds(self) -> tuple[float, float]:
        """(lower, upper) range used for support arithmetic.

        Parametric kinds report their 0.01%/99.99% quantiles; the
        empirical kind reports its sample extremes.
        """
        c = self.scale
        if self.kind == "normal":
            q = stats.norm.ppf(0.9999)
            return (-c * q, c * q)
        if self.kind == "laplace":
            q = stats.laplace.ppf(0.9999, scale=_LAPLACE_B)
            return (-c * q, c * q)
        if self.kind == "beta":
            lo = stats.beta.ppf(0.0001, 2, 5) * c * _BETA_STRETCH
            hi = stats.beta.ppf(0.9999, 2, 5) * c * _BETA_STRETCH
            return (lo, hi)
        if self.kind == "point_mass":
            p = c * self.loc
            return (p, p)
        if self.kind == "uniform":
            return (0.0001 * c, 0.9999 * c)
        e = self.sample_values
        return (float(e[0]), float(e[-1]))

    def kink_points(self) -> np.ndarray:
        """Locations where the CDF jumps (H is only C0 there)."""
        if self.kind == "empirical":
            return self.sample_values
        if self.kind == "point_mass":
            return np.array([self.scale * self.loc])
        return np.empty(0)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Draw ``n`` i.i.d. errors; deterministic given the generator state."""
        if n < 1:
            raise ValueError("need n >= 1 draws")
        c = self.scale
        if self.kind == "normal":
            return c * rng.standard_normal(n)
        if self.kind == "laplace":
            return c * rng.laplace(0.0, _LAPLACE_B, size=n)
        if self.kind == "beta":
            return c * _BETA_STRETCH * rng.beta(2.0, 5.0, size=n)
        if self.kind == "point_mass":
            return np.full(n, c * self.loc)
        if self.kind == "uniform":
            return c * rng.random(n)
        return rng.choice(self.sample_values, size=n, replace=True)


def _empirical_h(sorted_sample: np.ndarray, v: np.ndarray) -> np.ndarray:
    # (1/M) sum_j max(v - e_j, 0), exact, via prefix sums of the sorted sample
    m = len(sorted_sample)
    prefix = np.concatenate([[0.0], np.cumsum(sorted_sample)])
    k = np.searchsorted(sorted_sample, v, side="right")
    return (k * v - prefix[k]) / m


TRUE_KINDS = ("normal", "chisq4", "beta25", "laplace", "mixnormal", "mixgamma", "cauchy")


class TrueDistribution:
    """Latent-variable distribution used to generate simulation truths.

    All kinds are standardized to unit variance except ``cauchy`` (infinite
    variance); each is represented as a weighted mixture of frozen scipy
    distributions so pdf/cdf/ppf/rvs share one code path.
    """

    def __init__(self, kind: str):
        if kind not in TRUE_KINDS:
            raise ValueError(f"unknown true distribution {kind!r}; valid: {TRUE_KINDS}")
        self.kind = kind
        self.weights, self.components = _true_components(kind)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        out = sum(w * comp.pdf(x) for w, comp in zip(self.weights, self.components))
        return out if np.ndim(out) else float(out)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        out = sum(w * comp.cdf(x) for w, comp in zip(self.weights, self.components))
        return out if np.ndim(out) else float(out)

    def ppf(self, q: float) -> float:
        if len(self.components) == 1:
            return float(self.components[0].ppf(q))
        lo = min(comp.ppf(q) for comp in self.components)
        hi = max(comp.ppf(q) for comp in self.components)
        from scipy.optimize import brentq

        return float(brentq(lambda x: self.cdf(x) - q, lo - 1e-9, hi + 1e-9, xtol=1e-12))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if n < 1:
            raise ValueError("need n >= 1 draws")
        if len(self.components) == 1:
            return np.asarray(self.components[0].rvs(size=n, random_state=rng), dtype=float)
        picks = rng.choice(len(self.weights), size=n, p=self.weights)
        draws = np.column_stack(
            [np.asarray(c.rvs(size=n, random_state=rng), dtype=float) for c in self.components]
        )
        return draws[np.arange(n), picks]


def _true_components(kind):
    if kind == "normal":
        return (1.0,), (stats.norm(),)
    if kind == "chisq4":
        return (1.0,), (stats.chi2(4, scale=1.0 / np.sqrt(8.0)),)
    if kind == "beta25":
        return (1.0,), (stats.beta(2, 5, scale=_BETA_STRETCH),)
    if kind == "laplace":
        return (1.0,), (stats.laplace(scale=_LAPLACE_B),)
    if kind == "mixnormal":
        s = 2.0 / np.sqrt(29.0)
        return (0.5, 0.5), (stats.norm(-3.0 * s, s), stats.norm(2.0 * s, s))
    if kind == "mixgamma":
        s = 1.0 / np.sqrt(25.16)
        return (0.4, 0.6), (stats.gamma(5, scale=s), stats.gamma(13, scale=s))
    if kind == "cauchy":
        return (1.0,), (stats.cauchy(),)
    raise AssertionError(kind)


def read_sample(path: str | os.PathLike) -> np.ndarray:
    """Read a single-column CSV of values (optional header ``value``)."""
    with io.open(path, "r", newline="") as fh:
        rows = [row for row in csv.reader(fh) if row and row[0].strip()]
    if not rows:
        raise ValueError(f"no data in {path}")
    start = 1 if rows[0][0].strip().lower() == "value" else 0
    try:
        values = np.array([float(row[0]) for row in rows[start:]], dtype=float)
    except ValueError as exc:
        raise ValueError(f"non-numeric entry in {path}: {exc}") from None
    if values.size == 0:
        raise ValueError(f"no numeric rows in {path}")
    return values
