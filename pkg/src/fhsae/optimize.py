"""Scalar maximisation and root finding on a variance interval.

The likelihood objectives here are smooth on (0, a_max] but can put their
maximum at 0, arbitrarily close to 0, or far out in the tail, and the
area-adjusted variants occasionally develop a second local maximum. The
search policy is therefore deliberately plain:

1. evaluate a coarse grid (log-spaced, since the interesting structure
   lives on a multiplicative scale; the lower endpoint itself is included
   and may evaluate to -inf when the objective has a log barrier there);
2. golden-section refine every grid-local maximum;
3. return the best refined point, breaking exact ties toward the smaller
   argument, and snapping to an interval endpoint when the refined point
   has converged onto it and the endpoint value is no worse.

The same policy is mirrored in the compiled kernel; tests pin the two
implementations against each other and against dense-grid oracles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import (
    InsufficientDegreesOfFreedom,
    MaxIterExceeded,
    MultipleSignChanges,
    NoFiniteValues,
    NoSignChange,
    NotBalanced,
)
from .likelihood import positivity_factor_slope
from .model import FhDataset

_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0

# Log-spaced grids over [0, hi] start at hi * GRID_FLOOR_REL.
GRID_FLOOR_REL = 1e-10


@dataclass(frozen=True)
class SearchResult:
    argmax: float
    value: float
    evaluations: int
    iterations: int
    converged: bool
    bracket: tuple[float, float]


def default_search_cap(y: np.ndarray, d: np.ndarray) -> float:
    """Upper end of the variance search interval.

    Generous by construction: three orders of magnitude above both the
    largest sampling variance and the spread of the direct estimates.
    """
    return 1e3 * max(float(np.max(d)), float(np.var(y, ddof=1)), 1.0e-30)


def effective_tol(abs_tol: float | None, lo: float, hi: float) -> float:
    if abs_tol is not None:
        return float(abs_tol)
    return 1e-8 * (1.0 + (hi - lo))


def build_grid(lo: float, hi: float, n: int) -> np.ndarray:
    """Search grid of n points on [lo, hi], including both endpoints."""
    if n < 2:
        raise ValueError("grid needs at least 2 points")
    if lo > 0.0:
        return np.geomspace(lo, hi, n)
    if lo == 0.0:
        g = np.empty(n)
        g[0] = 0.0
        g[1:] = np.geomspace(hi * GRID_FLOOR_REL, hi, n - 1)
        return g
    return np.linspace(lo, hi, n)


def _golden(f, a, b, fa_best, tol, max_iter):
    """Golden-section maximisation on [a, b]; ties move left."""
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = f(c), f(d)
    evals, iters = 2, 0
    converged = True
    while (b - a) > tol:
        if iters >= max_iter:
            converged = False
            break
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = f(d)
        evals += 1
        iters += 1
    x = 0.5 * (a + b)
    fx = f(x)
    evals += 1
    return x, fx, evals, iters, converged, (a, b)


def maximize_on_interval(
    f: Callable[[float], float],
    lo: float,
    hi: float,
    *,
    grid_points: int = 200,
    abs_tol: float | None = None,
    max_iter: int = 200,
    raise_on_maxiter: bool = True,
) -> SearchResult:
    """Maximise ``f`` on [lo, hi] by grid bracketing plus golden sections.

    ``f`` may return -inf (treated as "worse than everything finite");
    NaN is treated the same way. If no grid point is finite the search
    raises NoFiniteValues. When the refinement budget runs out before the
    bracket closes to tolerance, raises MaxIterExceeded, unless
    ``raise_on_maxiter`` is false, in which case the best point found is
    returned with ``converged=False`` (the variance fitters use that to
    drive their retry-and-drop policy).
    """
    if not hi > lo:
        raise ValueError(f"empty interval [{lo}, {hi}]")
    grid = build_grid(lo, hi, grid_points)
    vals = np.empty(grid.shape[0])
    for k, g in enumerate(grid):
        v = f(float(g))
        vals[k] = -math.inf if math.isnan(v) else v
    evals = grid.shape[0]
    if not np.any(np.isfinite(vals)):
        raise NoFiniteValues("objective is non-finite at every grid point")

    n = grid.shape[0]
    best = None  # (value, argmax, iters, converged, bracket)
    for k in range(n):
        if not math.isfinite(vals[k]):
            continue
        left_ok = k == 0 or vals[k] > vals[k - 1]
        right_ok = k == n - 1 or vals[k] >= vals[k + 1]
        if not (left_ok and right_ok):
            continue
        a = grid[k - 1] if k > 0 else grid[0]
        b = grid[k + 1] if k < n - 1 else grid[n - 1]
        if b > a:
            tol = effective_tol(abs_tol, lo, hi)
            x, fx, ev, it, conv, brk = _golden(f, float(a), float(b), vals[k], tol, max_iter)
            evals += ev
        else:
            x, fx, it, conv, brk = float(grid[k]), float(vals[k]), 0, True, (a, b)
        # the refined point should not lose to its own grid seed
        if vals[k] > fx:
            x, fx = float(grid[k]), float(vals[k])
        if best is None or fx > best[0] or (fx == best[0] and x < best[1]):
            best = (fx, x, it, conv, brk)

    fx, x, iters, converged, bracket = best
    if not converged and raise_on_maxiter:
        raise MaxIterExceeded(
            f"bracket still wider than tolerance after {max_iter} refinement steps"
        )
    tol = effective_tol(abs_tol, lo, hi)
    # endpoint snapping: a refined point that converged onto an endpoint
    # with no loss of objective reports the endpoint exactly
    if math.isfinite(vals[0]) and (x - lo) <= tol and vals[0] >= fx:
        x, fx = float(lo), float(vals[0])
    elif math.isfinite(vals[-1]) and (hi - x) <= tol and vals[-1] >= fx:
        x, fx = float(hi), float(vals[-1])
    return SearchResult(
        argmax=x,
        value=fx,
        evaluations=evals,
        iterations=iters,
        converged=converged,
        bracket=bracket,
    )


def _balanced_d(data: FhDataset) -> float:
    d = data.d
    if (d.max() - d.min()) > 1e-12 * d.mean():
        raise NotBalanced(
            f"sampling variances are not all equal (range [{d.min()}, {d.max()}])"
        )
    return float(d.mean())


def stationarity_balanced(
    data: FhDataset, a: float, use_positivity: bool = True
) -> float:
    """Stationarity function of the balanced area-adjusted fit.

    Zero exactly where the derivative of the adjusted log-objective is
    zero. With the positivity guard on, the function is +inf at a = 0 and
    strictly decreasing to -inf, so it has a unique root; with the guard
    off it is linear and the root is ols_rss/(m - p - 2) - d when positive.
    """
    d = _balanced_d(data)
    m, p = data.m, data.p
    beta, *_ = np.linalg.lstsq(data.X, data.y, rcond=None)
    resid = data.y - data.X @ beta
    s = float(resid @ resid)
    av = a + d
    k = -(m - p - 2) * av + s
    if use_positivity:
        k += 2.0 * av * av * positivity_factor_slope(data, a)
    return k


def find_root_balanced(
    data: FhDataset,
    *,
    use_positivity: bool = True,
    a_max: float | None = None,
    abs_tol: float | None = None,
    scan_points: int = 512,
) -> float:
    """Root of the balanced stationarity function.

    Scans a log-spaced grid for sign changes (exactly one is required;
    anything else raises NoSignChange / MultipleSignChanges) and closes in
    by bisection. Used as an independent cross-check of the maximiser.
    """
    if data.m <= data.p + 2:
        raise InsufficientDegreesOfFreedom(
            f"stationarity function needs m > p + 2 (m={data.m}, p={data.p})"
        )
    _balanced_d(data)
    hi = a_max if a_max is not None else default_search_cap(data.y, data.d)
    lo = 1e-8 * float(data.d.mean())
    grid = np.geomspace(lo, hi, scan_points)
    vals = np.array([stationarity_balanced(data, float(g), use_positivity) for g in grid])
    signs = np.sign(vals)
    hits = np.nonzero(signs == 0.0)[0]
    if hits.size:
        return float(grid[hits[0]])
    flips = np.nonzero(signs[1:] * signs[:-1] < 0.0)[0]
    if flips.size == 0:
        raise NoSignChange(
            f"stationarity function has constant sign on [{lo:g}, {hi:g}]"
        )
    if flips.size > 1:
        raise MultipleSignChanges(
            f"stationarity function changes sign {flips.size} times on [{lo:g}, {hi:g}]"
        )
    k = int(flips[0])
    a, b = float(grid[k]), float(grid[k + 1])
    fa = float(vals[k])
    tol = abs_tol if abs_tol is not None else 1e-12 * (1.0 + hi)
    for _ in range(200):
        if (b - a) <= tol:
            break
        mid = 0.5 * (a + b)
        fm = stationarity_balanced(data, mid, use_positivity)
        if fm == 0.0:
            return mid
        if (fm > 0.0) == (fa > 0.0):
            a, fa = mid, fm
        else:
            b = mid
    else:
        raise MaxIterExceeded("bisection did not reach tolerance in 200 steps")
    return 0.5 * (a + b)
