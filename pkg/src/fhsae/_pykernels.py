"""NumPy implementations of the hot kernels.

This module is the fallback backend used when the compiled extension is
unavailable, and the executable reference the extension is tested against.
Functions here operate on plain arrays (no dataset wrapper, no validation)
because they sit inside Monte Carlo loops; all checking happens in the
public layer before anything reaches a kernel.

Kernel surface (shared with the compiled backend):

* ``log_objective``      one adjusted log-objective evaluation
* ``fit_variance``       maximise one objective over [0, a_max]
* ``bootstrap_pass``     synthesize worlds, refit, predict, accumulate
"""

from __future__ import annotations

import math

import numpy as np

from .errors import NoFiniteValues
from .optimize import maximize_on_interval

NAME = "python"

# variant codes shared with the compiled kernel
REML = 0
AREA_ONLY = 1
ADJUSTED = 2

# fits with wider brackets than abs_tol after max_iter golden steps are
# retried once on a grid this many times denser, then dropped
RETRY_GRID_FACTOR = 4


def log_objective(
    y: np.ndarray,
    X: np.ndarray,
    d: np.ndarray,
    a: float,
    variant: int,
    area: int,
) -> float:
    if a < 0.0:
        return -math.inf
    av = a + d
    sw = 1.0 / np.sqrt(av)
    Q, R = np.linalg.qr(X * sw[:, None])
    rdiag = np.abs(np.diag(R))
    if rdiag.min() <= 1e-13 * max(rdiag.max(), 1.0):
        return -math.inf
    yw = y * sw
    beta = np.linalg.solve(R, Q.T @ yw)
    resid = yw - (X * sw[:, None]) @ beta
    quad = float(resid @ resid)
    val = -0.5 * (
        2.0 * float(np.sum(np.log(rdiag))) + float(np.sum(np.log(av))) + quad
    )
    if variant >= AREA_ONLY:
        val += math.log(av[area])
    if variant == ADJUSTED:
        if a == 0.0:
            return -math.inf
        t = float(np.sum(a / av))
        val += math.log(math.atan(t)) / y.shape[0]
    return val


def fit_variance(
    y: np.ndarray,
    X: np.ndarray,
    d: np.ndarray,
    variant: int,
    area: int,
    grid_points: int,
    abs_tol: float,
    max_iter: int,
    a_max: float,
):
    """Returns (a, value, evaluations, iterations, converged)."""
    r = maximize_on_interval(
        lambda a: log_objective(y, X, d, a, variant, area),
        0.0,
        a_max,
        grid_points=grid_points,
        abs_tol=abs_tol if abs_tol > 0 else None,
        max_iter=max_iter,
        raise_on_maxiter=False,
    )
    return r.argmax, r.value, r.evaluations, r.iterations, r.converged


def _gls(X: np.ndarray, y: np.ndarray, av: np.ndarray):
    sw = 1.0 / np.sqrt(av)
    Xw = X * sw[:, None]
    Q, R = np.linalg.qr(Xw)
    beta = np.linalg.solve(R, Q.T @ (y * sw))
    return beta, R


def _fit_world(
    y, X, d, refit_variant, group_rep, group_of, grid_points, abs_tol, max_iter, a_max
):
    """Refit the variance(s) on one synthetic world, with one dense retry."""
    m = y.shape[0]
    if a_max <= 0.0:
        a_max = 1e3 * max(float(np.max(d)), float(np.var(y, ddof=1)), 1e-30)
    tol = abs_tol if abs_tol > 0 else 1e-8 * (1.0 + a_max)
    avec = np.empty(m)
    ok = True
    if refit_variant == REML:
        targets = [(REML, 0)]
    else:
        # the area-adjusted objective depends on the area only through its
        # sampling variance, so one fit per distinct d value suffices
        targets = [(refit_variant, int(rep)) for rep in group_rep]
    fitted = []
    for variant, area in targets:
        try:
            a, _, _, _, conv = fit_variance(
                y, X, d, variant, area, grid_points, tol, max_iter, a_max
            )
            if not conv:
                a, _, _, _, conv = fit_variance(
                    y, X, d, variant, area,
                    grid_points * RETRY_GRID_FACTOR, tol, max_iter, a_max,
                )
        except NoFiniteValues:
            a, conv = 0.0, False
        ok = ok and conv
        fitted.append(a)
    if refit_variant == REML:
        avec[:] = fitted[0]
    else:
        avec[:] = np.asarray(fitted)[group_of]
    return avec, ok


def bootstrap_pass(
    X: np.ndarray,
    d: np.ndarray,
    xbeta: np.ndarray,
    a_gen: np.ndarray,
    zv: np.ndarray,
    ze: np.ndarray,
    refit_variant: int,
    group_rep: np.ndarray,
    group_of: np.ndarray,
    grid_points: int,
    abs_tol: float,
    max_iter: int,
    a_max: float,
    want_bl: bool,
    y_orig: np.ndarray,
    eblup_orig: np.ndarray,
    out_sq: np.ndarray,
    out_g12: np.ndarray,
    out_pred: np.ndarray,
    out_flags: np.ndarray,
    b0: int,
    b1: int,
) -> None:
    """Fill rows [b0, b1) of the output arrays, one synthetic world per row.

    Row ``b`` uses only ``zv[b]``/``ze[b]``, so the result is identical no
    matter how the row range is split across workers. ``out_flags`` row
    values: 0 fitted, 1 dropped (refit failed even after the dense retry).
    """
    sd_gen = np.sqrt(a_gen)
    sd_e = np.sqrt(d)
    for b in range(b0, b1):
        theta = xbeta + sd_gen * zv[b]
        y_star = theta + sd_e * ze[b]
        avec, ok = _fit_world(
            y_star, X, d, refit_variant, group_rep, group_of,
            grid_points, abs_tol, max_iter, a_max,
        )
        if not ok:
            out_flags[b] = 1
            continue
        av = avec + d
        try:
            beta, R = _gls(X, y_star, av)
        except np.linalg.LinAlgError:
            out_flags[b] = 1
            continue
        out_flags[b] = 0
        shr = d / av
        pred = y_star - shr * (y_star - X @ beta)
        out_sq[b] = (pred - theta) ** 2
        if want_bl:
            Z = np.linalg.solve(R.T, X.T)
            q = np.einsum("ij,ij->j", Z, Z)
            out_g12[b] = avec * d / av + d * d * q / (av * av)
            pred_at_orig = y_orig - shr * (y_orig - X @ beta)
            out_pred[b] = (pred_at_orig - eblup_orig) ** 2
