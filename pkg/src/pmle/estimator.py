"""Scikit-learn style front end for the deconvolution density fit."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .distributions import ErrorModel
from .pipeline import FitConfig, fit_density

_PARAMETRIC_ERRORS = ("normal", "laplace", "beta", "point_mass", "uniform")


def _as_sample(X) -> np.ndarray:
    arr = np.asarray(X, dtype=float)
    if arr.ndim == 2 and arr.shape[1] == 1:
        arr = arr[:, 0]
    if arr.ndim != 1:
        raise ValueError(f"expected a 1d sample or single-column 2d array, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError("empty sample")
    if not np.all(np.isfinite(arr)):
        raise ValueError("sample contains non-finite values")
    return arr


class DeconvolutionDensity(BaseEstimator):
    """Density estimator for additively contaminated samples.

    Fits the latent density of X from observations Y = X + e by penalized
    maximum likelihood.  The error distribution is either a parametric
    family scaled by ``error_scale`` or the empirical distribution of
    ``error_sample``.

    Parameters mirror :class:`pmle.pipeline.FitConfig`; see there for the
    fitting details.

    Examples
    --------
    >>> est = DeconvolutionDensity(error="normal", error_scale=0.5, random_state=1)
    >>> est.fit(y).predict([0.0, 1.0])  # doctest: +SKIP
    """

    def __init__(
        self,
        error="normal",
        error_scale=1.0,
        error_sample=None,
        lambda_mode="heuristic",
        lambda_value=None,
        heuristic_ratio=None,
        heuristic_calibration=10.0,
        cv_grid_size=7,
        cv_folds=5,
        subsample_size=30,
        n_subsamples=None,
        constraint_point_count=30,
        support=None,
        support_padding=0.4,
        init_smoothness_factor=3.0,
        max_shrink_rounds=10,
        quadrature_nodes=4096,
        grid_points=1000,
        random_state=0,
        n_jobs=None,
    ):
        self.error = error
        self.error_scale = error_scale
        self.error_sample = error_sample
        self.lambda_mode = lambda_mode
        self.lambda_value = lambda_value
        self.heuristic_ratio = heuristic_ratio
        self.heuristic_calibration = heuristic_calibration
        self.cv_grid_size = cv_grid_size
        self.cv_folds = cv_folds
        self.subsample_size = subsample_size
        self.n_subsamples = n_subsamples
        self.constraint_point_count = constraint_point_count
        self.support = support
        self.support_padding = support_padding
        self.init_smoothness_factor = init_smoothness_factor
        self.max_shrink_rounds = max_shrink_rounds
        self.quadrature_nodes = quadrature_nodes
        self.grid_points = grid_points
        self.random_state = random_state
        self.n_jobs = n_jobs

    def _error_model(self) -> ErrorModel:
        if isinstance(self.error, ErrorModel):
            return self.error
        if self.error_sample is not None:
            return ErrorModel.empirical(_as_sample(self.error_sample))
        if self.error not in _PARAMETRIC_ERRORS:
            raise ValueError(
                f"unknown error family {self.error!r}; valid: {_PARAMETRIC_ERRORS} "
                "(or pass error_sample)"
            )
        return ErrorModel(self.error, scale=self.error_scale)

    def _config(self) -> FitConfig:
        return FitConfig(
            lambda_mode=self.lambda_mode,
            lambda_value=self.lambda_value,
            heuristic_ratio=self.heuristic_ratio,
            heuristic_calibration=self.heuristic_calibration,
            cv_grid_size=self.cv_grid_size,
            cv_folds=self.cv_folds,
            subsample_size=self.subsample_size,
            n_subsamples=self.n_subsamples,
            constraint_point_count=self.constraint_point_count,
            support=self.support,
            support_padding=self.support_padding,
            init_smoothness_factor=self.init_smoothness_factor,
            max_shrink_rounds=self.max_shrink_rounds,
            quadrature_nodes=self.quadrature_nodes,
            grid_points=self.grid_points,
            seed=self.random_state,
            n_jobs=self.n_jobs,
        )

    def fit(self, X, y=None):
        """Fit the latent density from the contaminated sample ``X``."""
        sample = _as_sample(X)
        self.estimate_ = fit_density(sample, self._error_model(), self._config())
        self.support_ = self.estimate_.support
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        """Estimated latent density at the query points."""
        check_is_fitted(self, "estimate_")
        return self.estimate_.pdf(_as_sample(X))

    def score_samples(self, X):
        """Log of the estimated latent density, floored at 1e-300."""
        check_is_fitted(self, "estimate_")
        return np.log(np.maximum(self.predict(X), 1e-300))

    def score(self, X, y=None):
        """Mean log-density of the query points under the estimate."""
        return float(np.mean(self.score_samples(X)))

    def sample(self, n_samples=1, random_state=None):
        """Draw from the fitted density by inverse transform on the grid."""
        check_is_fitted(self, "estimate_")
        rng = np.random.default_rng(random_state)
        est = self.estimate_
        cdf = np.concatenate([[0.0], np.cumsum(np.diff(est.grid) * 0.5 * (est.values[1:] + est.values[:-1]))])
        cdf /= cdf[-1]
        return np.interp(rng.random(n_samples), cdf, est.grid)
