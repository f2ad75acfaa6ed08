# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: objective evaluation, variance fits, bootstrap passes.

Mirror of ``_pykernels`` (same search policy, same retry and drop rules),
with the weighted GLS step done through a Cholesky factorisation of the
p x p weighted Gram matrix instead of a QR of the weighted design. The
pure-Python module remains the reference; tests pin the two against each
other.
"""

from libc.math cimport INFINITY, atan, exp, fmax, isfinite, log, sqrt
from libc.stdlib cimport free, malloc

import numpy as np

from .errors import NoFiniteValues

NAME = "compiled"

cdef enum:
    _REML = 0
    _AREA_ONLY = 1
    _ADJUSTED = 2
    _RETRY_GRID_FACTOR = 4

REML = _REML
AREA_ONLY = _AREA_ONLY
ADJUSTED = _ADJUSTED

RETRY_GRID_FACTOR = _RETRY_GRID_FACTOR

# golden ratio step and the relative floor of log-spaced grids; both must
# match the Python search policy
cdef double INVPHI = 0.6180339887498949
cdef double GRID_FLOOR_REL = 1e-10

MAX_P = 32
cdef int _MAX_P = 32


cdef int _chol(double* G, int p) noexcept nogil:
    """In-place lower Cholesky; returns nonzero if not positive definite."""
    cdef int i, j, k
    cdef double s
    for i in range(p):
        for j in range(i + 1):
            s = G[i * p + j]
            for k in range(j):
                s -= G[i * p + k] * G[j * p + k]
            if i == j:
                if s <= 0.0:
                    return -1
                G[i * p + i] = sqrt(s)
            else:
                G[i * p + j] = s / G[j * p + j]
    return 0


cdef void _chol_solve(double* L, double* b, double* x, int p) noexcept nogil:
    """Solve L L' x = b given the lower factor L."""
    cdef int i, k
    cdef double s
    for i in range(p):
        s = b[i]
        for k in range(i):
            s -= L[i * p + k] * x[k]
        x[i] = s / L[i * p + i]
    for i in range(p - 1, -1, -1):
        s = x[i]
        for k in range(i + 1, p):
            s -= L[k * p + i] * x[k]
        x[i] = s / L[i * p + i]


cdef double _objective(int m, int p, const double* y, const double* X,
                       const double* d, double a, int variant, int area,
                       double* G, double* rhs, double* beta) noexcept nogil:
    cdef int j, r, c
    cdef double av, w, wy, xr, logdetv = 0.0, t = 0.0
    cdef double logdetg = 0.0, quad = 0.0, fit, rj, val
    if a < 0.0 or not isfinite(a):
        return -INFINITY
    for r in range(p):
        rhs[r] = 0.0
        for c in range(p):
            G[r * p + c] = 0.0
    for j in range(m):
        av = a + d[j]
        w = 1.0 / av
        logdetv += log(av)
        t += a * w
        wy = w * y[j]
        for r in range(p):
            xr = X[j * p + r]
            rhs[r] += xr * wy
            for c in range(r + 1):
                G[r * p + c] += xr * X[j * p + c] * w
    if _chol(G, p) != 0:
        return -INFINITY
    for r in range(p):
        logdetg += 2.0 * log(G[r * p + r])
    _chol_solve(G, rhs, beta, p)
    for j in range(m):
        fit = 0.0
        for r in range(p):
            fit += X[j * p + r] * beta[r]
        rj = y[j] - fit
        quad += rj * rj / (a + d[j])
    val = -0.5 * (logdetg + logdetv + quad)
    if variant >= _AREA_ONLY:
        val += log(a + d[area])
    if variant == _ADJUSTED:
        if a <= 0.0:
            return -INFINITY
        val += log(atan(t)) / m
    return val


cdef int _fit_one(int m, int p, const double* y, const double* X, const double* d,
                  int variant, int area, int grid_points, double abs_tol,
                  int max_iter, double a_max, double* G, double* rhs, double* betab,
                  double* out_a, double* out_val, int* out_evals,
                  int* out_iters) noexcept nogil:
    """Grid bracket + golden sections on [0, a_max].

    Returns 0 on success, 1 if the objective is nowhere finite, 2 if some
    bracket failed to close within max_iter. The search policy (local
    maxima, tie toward the smaller argument, endpoint snapping) matches
    maximize_on_interval in optimize.py.
    """
    cdef int n = grid_points
    cdef double* g = <double*> malloc(2 * n * sizeof(double))
    cdef double* vals
    if g == NULL:
        return 2
    vals = g + n
    cdef double floor = a_max * GRID_FLOOR_REL
    cdef double lfloor = log(floor)
    cdef double step = (log(a_max) - lfloor) / (n - 2) if n > 2 else 0.0
    cdef int k, any_finite = 0, evals = n, iters = 0, cv
    cdef double tol = abs_tol if abs_tol > 0.0 else 1e-8 * (1.0 + a_max)
    g[0] = 0.0
    for k in range(1, n):
        g[k] = exp(lfloor + step * (k - 1))
    g[n - 1] = a_max
    for k in range(n):
        vals[k] = _objective(m, p, y, X, d, g[k], variant, area, G, rhs, betab)
        if isfinite(vals[k]):
            any_finite = 1
    if not any_finite:
        free(g)
        return 1
    cdef double best_v = -INFINITY, best_x = 0.0
    cdef int best_it = 0, best_conv = 1, left_ok, right_ok
    cdef double a, b, c, dd, fc, fd, x, fx
    cdef int it, conv
    for k in range(n):
        if not isfinite(vals[k]):
            continue
        left_ok = 1 if k == 0 else (1 if vals[k] > vals[k - 1] else 0)
        right_ok = 1 if k == n - 1 else (1 if vals[k] >= vals[k + 1] else 0)
        if not (left_ok and right_ok):
            continue
        a = g[k - 1] if k > 0 else g[0]
        b = g[k + 1] if k < n - 1 else g[n - 1]
        if b > a:
            c = b - INVPHI * (b - a)
            dd = a + INVPHI * (b - a)
            fc = _objective(m, p, y, X, d, c, variant, area, G, rhs, betab)
            fd = _objective(m, p, y, X, d, dd, variant, area, G, rhs, betab)
            evals += 2
            it = 0
            conv = 1
            while (b - a) > tol:
                if it >= max_iter:
                    conv = 0
                    break
                if fc >= fd:
                    b = dd
                    dd = c
                    fd = fc
                    c = b - INVPHI * (b - a)
                    fc = _objective(m, p, y, X, d, c, variant, area, G, rhs, betab)
                else:
                    a = c
                    c = dd
                    fc = fd
                    dd = a + INVPHI * (b - a)
                    fd = _objective(m, p, y, X, d, dd, variant, area, G, rhs, betab)
                evals += 1
                it += 1
            x = 0.5 * (a + b)
            fx = _objective(m, p, y, X, d, x, variant, area, G, rhs, betab)
            evals += 1
        else:
            x = g[k]
            fx = vals[k]
            it = 0
            conv = 1
        if vals[k] > fx:
            x = g[k]
            fx = vals[k]
        if fx > best_v or (fx == best_v and x < best_x):
            best_v = fx
            best_x = x
            best_it = it
            best_conv = conv
    if isfinite(vals[0]) and best_x <= tol and vals[0] >= best_v:
        best_x = 0.0
        best_v = vals[0]
    elif isfinite(vals[n - 1]) and (a_max - best_x) <= tol and vals[n - 1] >= best_v:
        best_x = a_max
        best_v = vals[n - 1]
    free(g)
    out_a[0] = best_x
    out_val[0] = best_v
    out_evals[0] = evals
    out_iters[0] = best_it
    return 0 if best_conv else 2


def log_objective(const double[::1] y, const double[:, ::1] X,
                  const double[::1] d, double a, int variant, int area):
    cdef int m = y.shape[0], p = X.shape[1]
    cdef double G[1024]
    cdef double rhs[32]
    cdef double beta[32]
    if p > _MAX_P:
        raise ValueError(f"compiled kernel supports at most {_MAX_P} coefficients")
    cdef double out
    with nogil:
        out = _objective(m, p, &y[0], &X[0, 0], &d[0], a, variant, area, G, rhs, beta)
    return out


def fit_variance(const double[::1] y, const double[:, ::1] X,
                 const double[::1] d, int variant, int area, int grid_points,
                 double abs_tol, int max_iter, double a_max):
    """Returns (a, value, evaluations, iterations, converged)."""
    cdef int m = y.shape[0], p = X.shape[1]
    cdef double G[1024]
    cdef double rhs[32]
    cdef double beta[32]
    cdef double a_hat = 0.0, val = 0.0
    cdef int evals = 0, iters = 0, status
    if p > _MAX_P:
        raise ValueError(f"compiled kernel supports at most {_MAX_P} coefficients")
    with nogil:
        status = _fit_one(m, p, &y[0], &X[0, 0], &d[0], variant, area,
                          grid_points, abs_tol, max_iter, a_max,
                          G, rhs, beta, &a_hat, &val, &evals, &iters)
    if status == 1:
        raise NoFiniteValues("objective is non-finite at every grid point")
    return a_hat, val, evals, iters, status == 0


cdef double _dmax(const double* d, int m) noexcept nogil:
    cdef double best = d[0]
    cdef int j
    for j in range(1, m):
        if d[j] > best:
            best = d[j]
    return best


cdef int _fit_retry(int m, int p, const double* y, const double* X, const double* d,
                    int variant, int area, int grid_points, double tol,
                    int max_iter, double a_max, double* G, double* rhs,
                    double* betab, double* out_a) noexcept nogil:
    """One fit with the standard retry-on-non-convergence policy."""
    cdef double val
    cdef int evals, iters, status
    status = _fit_one(m, p, y, X, d, variant, area, grid_points, tol, max_iter,
                      a_max, G, rhs, betab, out_a, &val, &evals, &iters)
    if status == 2:
        status = _fit_one(m, p, y, X, d, variant, area,
                          grid_points * _RETRY_GRID_FACTOR, tol, max_iter,
                          a_max, G, rhs, betab, out_a, &val, &evals, &iters)
    return status


def bootstrap_pass(const double[:, ::1] X, const double[::1] d,
                   const double[::1] xbeta, const double[::1] a_gen,
                   const double[:, ::1] zv, const double[:, ::1] ze,
                   int refit_variant, const int[::1] group_rep,
                   const int[::1] group_of, int grid_points, double abs_tol,
                   int max_iter, double a_max, bint want_bl,
                   const double[::1] y_orig, const double[::1] eblup_orig,
                   double[:, ::1] out_sq, double[:, ::1] out_g12,
                   double[:, ::1] out_pred, signed char[::1] out_flags,
                   int b0, int b1):
    """Fill rows [b0, b1) of the outputs, one synthetic world per row."""
    cdef int m = d.shape[0], p = X.shape[1]
    cdef int n_groups = group_rep.shape[0]
    cdef int b, j, r, gidx, status, evals, iters
    cdef double amx, tol, mean, var, a_fit, val, av, w, wy, xr, xb, shr, pred, q, s
    cdef double G[1024]
    cdef double rhs[32]
    cdef double beta[32]
    cdef double zb[32]
    if p > _MAX_P:
        raise ValueError(f"compiled kernel supports at most {_MAX_P} coefficients")
    cdef double* buf = <double*> malloc((5 * m + max(n_groups, 1)) * sizeof(double))
    if buf == NULL:
        raise MemoryError
    cdef double* theta = buf
    cdef double* ystar = buf + m
    cdef double* sd_gen = buf + 2 * m
    cdef double* sd_e = buf + 3 * m
    cdef double* avec = buf + 4 * m
    cdef double* ag = buf + 5 * m
    with nogil:
        for j in range(m):
            sd_gen[j] = sqrt(a_gen[j])
            sd_e[j] = sqrt(d[j])
        for b in range(b0, b1):
            for j in range(m):
                theta[j] = xbeta[j] + sd_gen[j] * zv[b, j]
                ystar[j] = theta[j] + sd_e[j] * ze[b, j]
            amx = a_max
            if amx <= 0.0:
                mean = 0.0
                for j in range(m):
                    mean += ystar[j]
                mean /= m
                var = 0.0
                for j in range(m):
                    var += (ystar[j] - mean) * (ystar[j] - mean)
                var /= m - 1
                amx = 1e3 * fmax(_dmax(&d[0], m), fmax(var, 1e-30))
            tol = abs_tol if abs_tol > 0.0 else 1e-8 * (1.0 + amx)
            status = 0
            if refit_variant == _REML:
                status = _fit_retry(m, p, ystar, &X[0, 0], &d[0], _REML, 0,
                                    grid_points, tol, max_iter, amx,
                                    G, rhs, beta, &a_fit)
                for j in range(m):
                    avec[j] = a_fit
            else:
                for gidx in range(n_groups):
                    status = _fit_retry(m, p, ystar, &X[0, 0], &d[0],
                                        refit_variant, group_rep[gidx],
                                        grid_points, tol, max_iter, amx,
                                        G, rhs, beta, &ag[gidx])
                    if status != 0:
                        break
                if status == 0:
                    for j in range(m):
                        avec[j] = ag[group_of[j]]
            if status != 0:
                out_flags[b] = 1
                continue
            out_flags[b] = 0
            # GLS under diag(avec + d)
            for r in range(p):
                rhs[r] = 0.0
                for j in range(p):
                    G[r * p + j] = 0.0
            for j in range(m):
                av = avec[j] + d[j]
                w = 1.0 / av
                wy = w * ystar[j]
                for r in range(p):
                    xr = X[j, r]
                    rhs[r] += xr * wy
                    for gidx in range(r + 1):
                        G[r * p + gidx] += xr * X[j, gidx] * w
            if _chol(G, p) != 0:
                out_flags[b] = 1
                continue
            _chol_solve(G, rhs, beta, p)
            for j in range(m):
                av = avec[j] + d[j]
                shr = d[j] / av
                xb = 0.0
                for r in range(p):
                    xb += X[j, r] * beta[r]
                pred = ystar[j] - shr * (ystar[j] - xb)
                out_sq[b, j] = (pred - theta[j]) * (pred - theta[j])
                if want_bl:
                    # x_j' (X'V*X)^-1 x_j through the lower factor
                    for r in range(p):
                        s = X[j, r]
                        for gidx in range(r):
                            s -= G[r * p + gidx] * zb[gidx]
                        zb[r] = s / G[r * p + r]
                    q = 0.0
                    for r in range(p):
                        q += zb[r] * zb[r]
                    out_g12[b, j] = avec[j] * d[j] / av + d[j] * d[j] * q / (av * av)
                    pred = y_orig[j] - shr * (y_orig[j] - xb)
                    out_pred[b, j] = (pred - eblup_orig[j]) * (pred - eblup_orig[j])
    free(buf)
