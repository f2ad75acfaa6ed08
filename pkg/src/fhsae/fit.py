"""Between-area variance estimators.

Four routes to a fitted ``a``:

* ``fit_reml``           maximise the restricted likelihood on [0, a_max];
                         the boundary value 0 is a legitimate outcome
* ``fit_area_adjusted``  maximise the area-adjusted objective for one
                         area; with the positivity guard (the default) the
                         result is strictly positive whenever m > p + 2
* ``fit_area_adjusted_all``  the per-area vector of the above; areas with
                         equal sampling variances share one fit because
                         the objective depends on the area only through
                         its sampling variance
* ``fit_morris_balanced``    closed form for equal sampling variances,
                         with the always-positive fallback 2d/(m - p - 2)

``fit_bias_variance`` gives the leading-order bias and variance of the
area-adjusted fit around the true ``a``; tests check the Monte Carlo
moments against it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _pykernels
from .backends import suitable_backend
from .errors import InsufficientDegreesOfFreedom, NotBalanced, OptimizationDidNotConverge
from .likelihood import positivity_factor_slope
from .model import FhDataset, HyperEstimate, coef_quadratic_forms
from .optimize import default_search_cap, effective_tol

_VARIANT_CODE = {"REML": _pykernels.REML, "area-only": _pykernels.AREA_ONLY,
                 "adjusted": _pykernels.ADJUSTED}


@dataclass(frozen=True)
class FitConfig:
    """Search interval and termination settings for the variance fits.

    ``a_max`` defaults to 1000 times the larger of max(d) and var(y);
    ``abs_tol`` defaults to 1e-8 * (1 + a_max).
    """

    a_max: float | None = None
    abs_tol: float | None = None
    max_iter: int = 200
    grid_points: int = 200

    def __post_init__(self):
        if self.a_max is not None and not self.a_max > 0:
            raise ValueError("a_max must be positive")
        if self.abs_tol is not None and not self.abs_tol > 0:
            raise ValueError("abs_tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.grid_points < 4:
            raise ValueError("grid_points must be at least 4")

    def resolve(self, data: FhDataset) -> tuple[float, float]:
        a_max = self.a_max if self.a_max is not None else default_search_cap(data.y, data.d)
        return a_max, effective_tol(self.abs_tol, 0.0, a_max)


def _run_fit(data: FhDataset, variant: str, area: int | None, cfg: FitConfig | None,
             method: str) -> HyperEstimate:
    cfg = cfg or FitConfig()
    a_max, tol = cfg.resolve(data)
    be = suitable_backend(data.p)
    a, val, evals, iters, conv = be.fit_variance(
        data.y, data.X, data.d, _VARIANT_CODE[variant], area if area is not None else 0,
        cfg.grid_points, tol, cfg.max_iter, a_max,
    )
    if not conv:
        raise OptimizationDidNotConverge(
            f"{method} fit did not close its bracket to {tol:g} within "
            f"{cfg.max_iter} golden-section steps"
        )
    return HyperEstimate(a=float(a), method=method, area=area,
                         objective_at_opt=float(val), converged=True,
                         iterations=int(evals))


def fit_reml(data: FhDataset, cfg: FitConfig | None = None) -> HyperEstimate:
    """Restricted maximum likelihood fit of the between-area variance."""
    return _run_fit(data, "REML", None, cfg, "REML")


def _need_adjusted_dof(data: FhDataset) -> None:
    if data.m <= data.p + 2:
        raise InsufficientDegreesOfFreedom(
            f"area-adjusted fit needs m > p + 2 (m={data.m}, p={data.p})"
        )


def fit_area_adjusted(
    data: FhDataset, area: int, cfg: FitConfig | None = None, positivity: bool = True
) -> HyperEstimate:
    """Area-specific adjusted-likelihood fit.

    With ``positivity=True`` the objective carries the log barrier at zero
    and the estimate is strictly positive. ``positivity=False`` drops the
    guard (useful for cross-checks against the balanced closed form).
    """
    if not 0 <= area < data.m:
        raise ValueError(f"area index {area} out of range [0, {data.m})")
    _need_adjusted_dof(data)
    variant = "adjusted" if positivity else "area-only"
    method = "adjusted" if positivity else "area-only"
    return _run_fit(data, variant, area, cfg, method)


def fit_area_adjusted_all(
    data: FhDataset, cfg: FitConfig | None = None, positivity: bool = True
) -> list[HyperEstimate]:
    """Adjusted fit for every area, computed once per distinct d value."""
    _need_adjusted_dof(data)
    uniq, first = np.unique(data.d, return_index=True)
    by_value = {}
    for rep in first:
        est = fit_area_adjusted(data, int(rep), cfg, positivity)
        by_value[data.d[rep]] = est
    return [
        HyperEstimate(a=by_value[data.d[i]].a, method=by_value[data.d[i]].method,
                      area=i, objective_at_opt=by_value[data.d[i]].objective_at_opt,
                      converged=True, iterations=by_value[data.d[i]].iterations)
        for i in range(data.m)
    ]


def adjusted_values(estimates: list[HyperEstimate]) -> np.ndarray:
    return np.array([e.a for e in estimates])


def _balanced_d(data: FhDataset) -> float:
    if (data.d.max() - data.d.min()) > 1e-12 * data.d.mean():
        raise NotBalanced(
            f"sampling variances are not all equal "
            f"(range [{data.d.min()}, {data.d.max()}])"
        )
    return float(data.d.mean())


def _ols_rss(data: FhDataset) -> float:
    beta, *_ = np.linalg.lstsq(data.X, data.y, rcond=None)
    resid = data.y - data.X @ beta
    return float(resid @ resid)


def fit_morris_balanced(data: FhDataset) -> HyperEstimate:
    """Closed-form positive estimate for equal sampling variances.

    rss/(m - p - 2) - d when that is positive, else 2d/(m - p - 2); always
    strictly positive.
    """
    d = _balanced_d(data)
    _need_adjusted_dof(data)
    m, p = data.m, data.p
    s = _ols_rss(data)
    if s > (m - p - 2) * d:
        a = s / (m - p - 2) - d
    else:
        a = 2.0 * d / (m - p - 2)
    return HyperEstimate(a=a, method="morris-plus")


def fit_unbiased_balanced(data: FhDataset) -> HyperEstimate:
    """Untruncated moment estimate rss/(m - p) - d; can be negative."""
    d = _balanced_d(data)
    s = _ols_rss(data)
    return HyperEstimate(a=s / (data.m - data.p) - d, method="unbiased")


@dataclass(frozen=True)
class FitMoments:
    """Leading-order moments of the area-adjusted fit around the truth.

    ``mse_approx`` is the matching second-order prediction MSE for the
    area, evaluated at the true variance.
    """

    bias: float
    variance: float
    mse_approx: float


def fit_bias_variance(
    data: FhDataset, a_true: float, area: int, positivity: bool = True
) -> FitMoments:
    """Approximate bias and variance of the area-adjusted fit at ``a_true``.

    variance = 2 / trace(V^-2); bias = (log-slope of the adjustment at
    a_true) * variance. Both carry o(1/m) errors, so they are reference
    points for moderately large m, not exact values.
    """
    if not 0 <= area < data.m:
        raise ValueError(f"area index {area} out of range [0, {data.m})")
    a_true = float(a_true)
    if a_true < 0:
        raise ValueError("a_true must be nonnegative")
    av = a_true + data.d
    variance = 2.0 / float(np.sum(av ** -2))
    slope = 1.0 / (a_true + float(data.d[area]))
    if positivity:
        slope += positivity_factor_slope(data, a_true)
    di = float(data.d[area])
    avi = a_true + di
    q = float(coef_quadratic_forms(data, a_true)[area])
    mse_approx = (
        a_true * di / avi + di * di * q / avi ** 2 + di * di * variance / avi ** 3
    )
    return FitMoments(bias=slope * variance, variance=variance, mse_approx=mse_approx)
