"""Restricted likelihood and its adjustment factors.

All fitting in this package maximises, in ``a``, the log of

    adjustment(a) * restricted_likelihood(a)

where the restricted likelihood integrates the regression coefficients out
of the two-level model and the adjustment selects the estimator:

* no adjustment: REML;
* ``(a + d_i)``: an area-specific factor whose log-derivative matches
  the curvature weight of area ``i``, which is what removes the need for a
  bias correction in the area ``i`` MSE estimate;
* ``(a + d_i) * arctan(sum_j a / (a + d_j)) ** (1/m)``: the same factor
  times a positivity guard. The guard vanishes at ``a = 0`` (a log barrier,
  so the maximiser is strictly positive) and tends to a constant as ``a``
  grows, so it perturbs nothing to the order that matters.

Values are computed on the log scale throughout. The quadratic form in the
restricted likelihood is evaluated as the weighted residual sum of squares
of the GLS fit; the projection matrix it formally involves is never built.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteInput
from .model import FhDataset, _gls_factor

VARIANT_REML = "reml"
VARIANT_AREA_ONLY = "area-only"
VARIANT_ADJUSTED = "adjusted"

_VARIANTS = (VARIANT_REML, VARIANT_AREA_ONLY, VARIANT_ADJUSTED)


@dataclass(frozen=True)
class ObjectiveParts:
    """One evaluation of the adjusted log-objective, term by term.

    Terms that do not apply to the requested variant are exactly 0.0, so
    ``total`` is always the plain sum of the three parts.
    """

    a: float
    log_restricted: float
    log_area_factor: float
    log_positivity_factor: float

    @property
    def total(self) -> float:
        return self.log_restricted + self.log_area_factor + self.log_positivity_factor


def _check_a(a: float) -> float:
    a = float(a)
    if math.isnan(a):
        raise NonFiniteInput("a is NaN")
    if a < 0.0:
        raise ValueError("between-area variance must be nonnegative")
    return a


def log_residual_likelihood(data: FhDataset, a: float) -> float:
    """Log restricted likelihood of ``a`` (additive constants dropped).

    Invariant to translating y by any column span of X, and independent of
    the basis chosen for that span.
    """
    a = _check_a(a)
    if math.isinf(a):
        return -math.inf
    av = a + data.d
    beta, R = _gls_factor(data, np.full(data.m, a))
    resid = data.y - data.X @ beta
    quad = float(np.sum(resid * resid / av))
    logdet_gram = 2.0 * float(np.sum(np.log(np.abs(np.diag(R)))))
    logdet_v = float(np.sum(np.log(av)))
    return -0.5 * (logdet_gram + logdet_v + quad)


def log_area_factor(a: float, d_i: float) -> float:
    """Log of the area-specific adjustment ``a + d_i``."""
    return math.log(_check_a(a) + d_i)


def log_positivity_factor(data: FhDataset, a: float) -> float:
    """Log of the positivity guard ``arctan(sum_j a/(a+d_j)) ** (1/m)``.

    Equals -inf at a = 0 and increases to log(arctan(m))/m as a -> inf.
    """
    a = _check_a(a)
    if a == 0.0:
        return -math.inf
    t = float(np.sum(a / (a + data.d)))
    return math.log(math.atan(t)) / data.m


def positivity_factor_slope(data: FhDataset, a: float) -> float:
    """d/da of ``log_positivity_factor`` in closed form (+inf at a = 0)."""
    a = _check_a(a)
    if a == 0.0:
        return math.inf
    av = a + data.d
    t = float(np.sum(a / av))
    t_slope = float(np.sum(data.d / (av * av)))
    return t_slope / (data.m * (1.0 + t * t) * math.atan(t))


def evaluate_objective(
    data: FhDataset, a: float, variant: str = VARIANT_REML, area: int | None = None
) -> ObjectiveParts:
    """Evaluate one variant of the adjusted log-objective at ``a``."""
    if variant not in _VARIANTS:
        raise ValueError(f"unknown variant {variant!r}, expected one of {_VARIANTS}")
    if variant == VARIANT_REML:
        if area is not None:
            raise ValueError("the REML variant takes no area index")
        return ObjectiveParts(a, log_residual_likelihood(data, a), 0.0, 0.0)
    if area is None or not 0 <= area < data.m:
        raise ValueError(f"variant {variant!r} needs an area index in [0, {data.m})")
    area_part = log_area_factor(a, data.d[area])
    pos_part = 0.0
    if variant == VARIANT_ADJUSTED:
        pos_part = log_positivity_factor(data, a)
        if math.isinf(pos_part):
            # log barrier at zero: short-circuit so the total is -inf even
            # though the other parts are finite there.
            return ObjectiveParts(a, log_residual_likelihood(data, a), area_part, pos_part)
    return ObjectiveParts(a, log_residual_likelihood(data, a), area_part, pos_part)


def adjusted_log_objective(
    data: FhDataset, a: float, variant: str = VARIANT_REML, area: int | None = None
) -> float:
    """Total adjusted log-objective (sum of the parts for the variant)."""
    return evaluate_objective(data, a, variant, area).total


def objective_callable(data: FhDataset, variant: str, area: int | None = None):
    """Bind a variant to a plain ``f(a) -> float`` for the optimiser."""
    # validate eagerly so bad arguments fail at bind time, not mid-search
    evaluate_objective(data, 0.0, variant, area)
    def f(a: float) -> float:
        return adjusted_log_objective(data, a, variant, area)

    return f
