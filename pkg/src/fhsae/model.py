"""Core area-level model quantities.

The model has one observation per area: ``y_i = x_i . beta + v_i + e_i``
with independent area effects ``v_i ~ N(0, a)`` and sampling errors
``e_i ~ N(0, d_i)``. The sampling variances ``d_i`` are known inputs; the
between-area variance ``a`` is the object everything else in the package
estimates. Given a value for ``a`` (or one value per area, when per-area
estimates are plugged in), this module supplies the generalised
least-squares coefficients, the shrinkage weights ``b_i = d_i / (a + d_i)``
and the compromise predictor ``(1 - b_i) y_i + b_i x_i . beta``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatch,
    InsufficientDegreesOfFreedom,
    NonFiniteInput,
    NonpositiveSamplingVariance,
    RankDeficientX,
    SingularNormalEquations,
)

_RANK_RTOL = 1e-10


@dataclass(frozen=True)
class FhDataset:
    """Validated inputs for one fit: direct estimates, design, variances."""

    y: np.ndarray
    X: np.ndarray
    d: np.ndarray
    area_ids: tuple[str, ...]

    @property
    def m(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class HyperEstimate:
    """A fitted between-area variance and how it was obtained.

    ``method`` is one of "REML", "adjusted", "area-only", "morris-plus",
    "unbiased"; ``area`` is set for the area-specific methods and None for
    the shared ones. ``objective_at_opt`` is on the log scale (NaN for the
    closed-form methods, which do not maximise anything).
    """

    a: float
    method: str
    area: int | None = None
    objective_at_opt: float = float("nan")
    converged: bool = True
    iterations: int = 0


@dataclass(frozen=True)
class ShrinkageVector:
    """Per-area shrinkage weights and the variance values behind them."""

    b: np.ndarray
    a_used: np.ndarray


@dataclass(frozen=True)
class EblupResult:
    theta: np.ndarray
    beta: np.ndarray
    shrink: ShrinkageVector
    a_label: str = field(default="custom")


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr, dtype=np.float64)
    if out is arr:
        out = out.copy()
    out.flags.writeable = False
    return out


def validate_dataset(y, X, d, area_ids=None) -> FhDataset:
    """Check shapes, finiteness, positive variances and design rank.

    Raises DimensionMismatch, NonFiniteInput, NonpositiveSamplingVariance,
    RankDeficientX or InsufficientDegreesOfFreedom (when m <= p, leaving no
    degrees of freedom for the residual likelihood).
    """
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    X = np.asarray(X, dtype=np.float64)
    d = np.atleast_1d(np.asarray(d, dtype=np.float64))
    if y.ndim != 1:
        raise DimensionMismatch(f"y must be one-dimensional, got shape {y.shape}")
    if X.ndim != 2:
        raise DimensionMismatch(f"X must be two-dimensional, got shape {X.shape}")
    m = y.shape[0]
    if X.shape[0] != m:
        raise DimensionMismatch(f"X has {X.shape[0]} rows but y has {m} entries")
    if d.shape != (m,):
        raise DimensionMismatch(f"d must have shape ({m},), got {d.shape}")
    p = X.shape[1]
    if p < 1:
        raise DimensionMismatch("X must have at least one column")
    for name, arr in (("y", y), ("X", X), ("d", d)):
        if not np.all(np.isfinite(arr)):
            raise NonFiniteInput(f"{name} contains non-finite values")
    if np.any(d <= 0.0):
        bad = int(np.argmax(d <= 0.0))
        raise NonpositiveSamplingVariance(
            f"sampling variance d[{bad}] = {d[bad]} must be strictly positive"
        )
    if m <= p:
        raise InsufficientDegreesOfFreedom(
            f"need more areas than regression coefficients (m={m}, p={p})"
        )
    sv = np.linalg.svd(X, compute_uv=False)
    if sv[-1] <= _RANK_RTOL * sv[0]:
        raise RankDeficientX(
            f"design matrix is rank deficient (smallest/largest singular value "
            f"= {sv[-1] / sv[0]:.3e})"
        )
    if area_ids is None:
        ids = tuple(str(i) for i in range(m))
    else:
        ids = tuple(str(a) for a in area_ids)
        if len(ids) != m:
            raise DimensionMismatch(f"area_ids has {len(ids)} entries, expected {m}")
    return FhDataset(y=_freeze(y), X=_freeze(X), d=_freeze(d), area_ids=ids)


def _as_variance_vector(data: FhDataset, a) -> np.ndarray:
    a_arr = np.asarray(a, dtype=np.float64)
    if a_arr.ndim == 0:
        a_arr = np.full(data.m, float(a_arr))
    if a_arr.shape != (data.m,):
        raise DimensionMismatch(
            f"a must be a scalar or have shape ({data.m},), got {a_arr.shape}"
        )
    if not np.all(np.isfinite(a_arr)):
        raise NonFiniteInput("a contains non-finite values")
    if np.any(a_arr < 0.0):
        raise ValueError("between-area variance must be nonnegative")
    return a_arr


def _gls_factor(data: FhDataset, a_vec: np.ndarray):
    """GLS via QR of the row-weighted design; returns (beta, R).

    R is the triangular factor of the weighted design, so the coefficient
    covariance factor (X' V^-1 X)^-1 equals R^-1 R^-T. No explicit matrix
    inverse is formed anywhere.
    """
    sw = 1.0 / np.sqrt(a_vec + data.d)
    Q, R = np.linalg.qr(data.X * sw[:, None])
    rdiag = np.abs(np.diag(R))
    if rdiag.min() <= 1e-13 * max(rdiag.max(), 1.0):
        raise SingularNormalEquations("weighted normal equations are singular")
    beta = np.linalg.solve(R, Q.T @ (data.y * sw))
    return beta, R

def gls_beta(data: FhDataset, a) -> np.ndarray:
    """Generalised least-squares coefficients under Var = diag(a_i + d_i)."""
    beta, _ = _gls_factor(data, _as_variance_vector(data, a))
    return beta


def coef_quadratic_forms(data: FhDataset, a) -> np.ndarray:
    """Per-area values of x_i' (X' V^-1 X)^-1 x_i for Var = diag(a_i + d_i)."""
    _, R = _gls_factor(data, _as_variance_vector(data, a))
    Z = np.linalg.solve(R.T, data.X.T)
    return np.einsum("ij,ij->j", Z, Z)


def shrinkage(data: FhDataset, a) -> ShrinkageVector:
    """Shrinkage weights b_i = d_i / (a_i + d_i) in (0, 1]."""
    a_vec = _as_variance_vector(data, a)
    return ShrinkageVector(b=data.d / (a_vec + data.d), a_used=a_vec)


def eblup(data: FhDataset, a, a_label: str = "custom") -> EblupResult:
    """Compromise predictor: direct estimate pulled toward the fitted mean.

    With a = 0 the predictor collapses to the regression fit; as a grows it
    approaches the direct estimates.
    """
    a_vec = _as_variance_vector(data, a)
    beta, _ = _gls_factor(data, a_vec)
    shrink = ShrinkageVector(b=data.d / (a_vec + data.d), a_used=a_vec)
    theta = data.y - shrink.b * (data.y - data.X @ beta)
    return EblupResult(theta=theta, beta=beta, shrink=shrink, a_label=a_label)


def fingerprint(data: FhDataset) -> str:
    """Short stable hash of the dataset contents, for report provenance."""
    h = hashlib.sha256()
    h.update(np.asarray(data.y).tobytes())
    h.update(np.asarray(data.X).tobytes())
    h.update(np.asarray(data.d).tobytes())
    h.update("|".join(data.area_ids).encode())
    return h.hexdigest()[:16]
