"""MSE estimators for the compromise predictor.

Six estimators, tagged by the variance fit they ride on (``.RE`` = REML,
``.HL`` = area-adjusted likelihood):

====================  ======================================================
naive.RE              g1 + g2 at the REML fit (no correction; biased low)
DL.RE                 g1 + g2 + 2 g3 at the REML fit (Taylor bias-corrected)
PB.RE                 parametric bootstrap around the REML fit
BL.RE                 bootstrap-bias-corrected g1 + g2 plus the bootstrap
                      variability of the predictor (can go negative;
                      reported as computed)
Taylor.HL             g1 + g2 + g3 at the area-adjusted fit; the adjustment
                      is what makes this correct without a bias correction
PB.HL                 parametric bootstrap around the area-adjusted fits
====================  ======================================================

with g1 = a d_i / (a + d_i) (prediction error at known parameters),
g2 = d_i^2 x_i'(X'V^-1 X)^-1 x_i / (a + d_i)^2 (coefficient estimation),
g3 = 2 d_i^2 / ((a + d_i)^3 tr V^-2) (variance estimation).

Bootstrap worlds are indexed by (seed, replicate, area) through the
counter-based streams in ``rng``, so estimates never depend on how the
replicates are batched or threaded, and the two parametric bootstraps see
the same underlying normal draws (common random numbers).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _pykernels
from .backends import resolve_threads, suitable_backend
from .errors import DegreesOfFreedomTooSmall, OptimizationDidNotConverge
from .fit import FitConfig, adjusted_values, fit_area_adjusted_all, fit_reml
from .model import FhDataset, HyperEstimate, coef_quadratic_forms, eblup, fingerprint, gls_beta
from .rng import DOMAIN_BOOT, derive_key, gauss_pairs

TAYLOR_TAGS = ("naive.RE", "DL.RE", "Taylor.HL")
BOOT_TAGS = ("PB.RE", "BL.RE", "PB.HL")
ALL_TAGS = ("naive.RE", "DL.RE", "PB.RE", "BL.RE", "Taylor.HL", "PB.HL")

# a bootstrap call fails outright if more than this fraction of replicates
# is dropped for non-convergence
MAX_DROP_FRACTION = 0.01


@dataclass(frozen=True)
class GDecomposition:
    g1: float
    g2: float
    g3: float

    @property
    def total(self) -> float:
        return self.g1 + self.g2 + self.g3


def g_sums(data: FhDataset, a: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectors of g1, g2, g3 over all areas at a common plug-in ``a``."""
    a = float(a)
    if a < 0:
        raise ValueError("a must be nonnegative")
    av = a + data.d
    g1 = a * data.d / av
    q = coef_quadratic_forms(data, a)
    g2 = data.d ** 2 * q / av ** 2
    tr = float(np.sum(av ** -2.0))
    g3 = 2.0 * data.d ** 2 / (av ** 3 * tr)
    return g1, g2, g3


def g_decomposition(data: FhDataset, a: float, area: int) -> GDecomposition:
    """The three MSE components for one area at plug-in value ``a``."""
    if not 0 <= area < data.m:
        raise ValueError(f"area index {area} out of range [0, {data.m})")
    g1, g2, g3 = g_sums(data, a)
    return GDecomposition(float(g1[area]), float(g2[area]), float(g3[area]))


def _taylor_hl_values(data: FhDataset, adjusted: list[HyperEstimate]) -> np.ndarray:
    out = np.empty(data.m)
    avec = adjusted_values(adjusted)
    for a in np.unique(avec):
        g1, g2, g3 = g_sums(data, float(a))
        idx = avec == a
        out[idx] = (g1 + g2 + g3)[idx]
    return out


def mse_taylor(
    data: FhDataset,
    tag: str,
    *,
    reml: HyperEstimate | None = None,
    adjusted: list[HyperEstimate] | None = None,
    cfg: FitConfig | None = None,
) -> np.ndarray:
    """Per-area values of one of the closed-form estimators."""
    if tag not in TAYLOR_TAGS:
        raise ValueError(f"unknown closed-form estimator {tag!r}, expected {TAYLOR_TAGS}")
    if tag == "Taylor.HL":
        if adjusted is None:
            adjusted = fit_area_adjusted_all(data, cfg)
        return _taylor_hl_values(data, adjusted)
    if reml is None:
        reml = fit_reml(data, cfg)
    g1, g2, g3 = g_sums(data, reml.a)
    if tag == "naive.RE":
        return g1 + g2
    return g1 + g2 + 2.0 * g3


@dataclass(frozen=True)
class BootstrapResult:
    values: np.ndarray
    variant: str
    n_boot: int
    n_dropped: int
    seed: int


@dataclass(frozen=True)
class MseReport:
    values: dict[str, np.ndarray]
    bootstrap_meta: dict
    fingerprint: str


def _bootstrap_engine(
    data: FhDataset,
    refit_code: int,
    key: int,
    n_boot: int,
    cfg: FitConfig,
    gen_avec: np.ndarray,
    xbeta: np.ndarray,
    want_bl: bool,
    eblup_orig: np.ndarray,
    threads: int,
):
    """Shared bootstrap pass; returns (sq, g12, pred, n_dropped, kept mask)."""
    m = data.m
    be = suitable_backend(data.p)
    uniq, first = np.unique(data.d, return_index=True)
    group_rep = np.asarray(first, dtype=np.int32)
    group_of = np.searchsorted(uniq, data.d).astype(np.int32)
    a_max = cfg.a_max if cfg.a_max is not None else -1.0
    abs_tol = cfg.abs_tol if cfg.abs_tol is not None else -1.0
    out_sq = np.zeros((n_boot, m))
    out_g12 = np.zeros((n_boot if want_bl else 0, m))
    out_pred = np.zeros((n_boot if want_bl else 0, m))
    flags = np.zeros(n_boot, dtype=np.int8)
    areas = np.arange(m)[None, :]

    def run_rows(c0: int, c1: int) -> None:
        rows = np.arange(c0, c1)[:, None]
        zv, ze = gauss_pairs(key, rows, areas)
        be.bootstrap_pass(
            data.X, data.d, xbeta, gen_avec, zv, ze, refit_code,
            group_rep, group_of, cfg.grid_points, abs_tol, cfg.max_iter, a_max,
            want_bl, data.y, eblup_orig, out_sq[c0:c1], out_g12[c0:c1],
            out_pred[c0:c1], flags[c0:c1], 0, c1 - c0,
        )

    if threads <= 1:
        run_rows(0, n_boot)
    else:
        bounds = np.linspace(0, n_boot, threads + 1).astype(int)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(lambda k: run_rows(bounds[k], bounds[k + 1]), range(threads)))

    kept = flags == 0
    n_dropped = int(n_boot - kept.sum())
    if n_dropped > MAX_DROP_FRACTION * n_boot:
        raise OptimizationDidNotConverge(
            f"{n_dropped} of {n_boot} bootstrap replicates failed to converge"
        )
    return out_sq, out_g12, out_pred, n_dropped, kept


def _bootstrap_values(
    data: FhDataset,
    tag: str,
    n_boot: int,
    key: int,
    seed: int,
    cfg: FitConfig,
    reml: HyperEstimate | None,
    adjusted: list[HyperEstimate] | None,
    threads: int,
    want: tuple[str, ...],
) -> dict[str, BootstrapResult]:
    """Run one world family (.RE or .HL) and extract the requested tags."""
    if tag == "PB.HL":
        if adjusted is None:
            adjusted = fit_area_adjusted_all(data, cfg)
        avec = adjusted_values(adjusted)
        xbeta = data.X @ gls_beta(data, avec)
        sq, _, _, dropped, kept = _bootstrap_engine(
            data, _pykernels.ADJUSTED, key, n_boot, cfg, avec, xbeta,
            False, data.y, threads,
        )
        values = sq[kept].mean(axis=0)
        return {"PB.HL": BootstrapResult(values, "PB.HL", n_boot, dropped, seed)}
    # REML-based family: one pass serves PB.RE and BL.RE
    if reml is None:
        reml = fit_reml(data, cfg)
    a_re = np.full(data.m, reml.a)
    want_bl = "BL.RE" in want
    res = eblup(data, reml.a, a_label="REML")
    xbeta = data.X @ res.beta
    sq, g12, pred, dropped, kept = _bootstrap_engine(
        data, _pykernels.REML, key, n_boot, cfg, a_re, xbeta,
        want_bl, res.theta, threads,
    )
    out: dict[str, BootstrapResult] = {}
    if "PB.RE" in want:
        out["PB.RE"] = BootstrapResult(sq[kept].mean(axis=0), "PB.RE", n_boot, dropped, seed)
    if want_bl:
        g1, g2, _ = g_sums(data, reml.a)
        values = 2.0 * (g1 + g2) - g12[kept].mean(axis=0) + pred[kept].mean(axis=0)
        out["BL.RE"] = BootstrapResult(values, "BL.RE", n_boot, dropped, seed)
    return out


def mse_bootstrap(
    data: FhDataset,
    tag: str,
    n_boot: int,
    seed: int,
    *,
    cfg: FitConfig | None = None,
    reml: HyperEstimate | None = None,
    adjusted: list[HyperEstimate] | None = None,
    threads: int | None = None,
    rng_key: int | None = None,
) -> BootstrapResult:
    """One bootstrap MSE estimator for all areas.

    Same seed, same data, same tag: bit-identical output, for any thread
    count and whether or not other tags are computed alongside.
    """
    if tag not in BOOT_TAGS:
        raise ValueError(f"unknown bootstrap estimator {tag!r}, expected {BOOT_TAGS}")
    if n_boot < 1:
        raise ValueError("n_boot must be at least 1")
    cfg = cfg or FitConfig()
    key = rng_key if rng_key is not None else derive_key(seed, DOMAIN_BOOT)
    threads = threads if threads is not None else resolve_threads(n_boot)
    out = _bootstrap_values(
        data, tag, n_boot, key, seed, cfg, reml, adjusted, threads, (tag,)
    )
    return out[tag]


def mse_bootstrap_area(
    data: FhDataset, area: int, tag: str, n_boot: int, seed: int, **kwargs
) -> float:
    """Bootstrap MSE estimate for a single area (same worlds as the batch)."""
    if not 0 <= area < data.m:
        raise ValueError(f"area index {area} out of range [0, {data.m})")
    return float(mse_bootstrap(data, tag, n_boot, seed, **kwargs).values[area])


def mse_report(
    data: FhDataset,
    estimators: tuple[str, ...] = ALL_TAGS,
    n_boot: int = 1000,
    seed: int = 0,
    *,
    cfg: FitConfig | None = None,
    threads: int | None = None,
    rng_key: int | None = None,
) -> MseReport:
    """Evaluate a set of estimators, sharing fits and bootstrap passes."""
    for tag in estimators:
        if tag not in ALL_TAGS:
            raise ValueError(f"unknown estimator {tag!r}, expected a subset of {ALL_TAGS}")
    cfg = cfg or FitConfig()
    need_re = any(t.endswith(".RE") for t in estimators)
    need_hl = any(t.endswith(".HL") for t in estimators)
    reml = fit_reml(data, cfg) if need_re else None
    adjusted = fit_area_adjusted_all(data, cfg) if need_hl else None
    values: dict[str, np.ndarray] = {}
    meta: dict = {}
    if reml is not None:
        meta["a_reml"] = reml.a
    if adjusted is not None:
        meta["a_adjusted"] = adjusted_values(adjusted).tolist()
    for tag in estimators:
        if tag in TAYLOR_TAGS:
            values[tag] = mse_taylor(data, tag, reml=reml, adjusted=adjusted, cfg=cfg)
    boot_wanted = tuple(t for t in estimators if t in BOOT_TAGS)
    if boot_wanted:
        meta.update({"n_boot": n_boot, "seed": seed, "dropped": {}})
        key = rng_key if rng_key is not None else derive_key(seed, DOMAIN_BOOT)
        threads = threads if threads is not None else resolve_threads(n_boot)
        re_family = tuple(t for t in boot_wanted if t.endswith(".RE"))
        if re_family:
            res = _bootstrap_values(
                data, re_family[0], n_boot, key, seed, cfg, reml, adjusted,
                threads, re_family,
            )
            for tag in re_family:
                values[tag] = res[tag].values
                meta["dropped"][tag] = res[tag].n_dropped
        if "PB.HL" in boot_wanted:
            res = _bootstrap_values(
                data, "PB.HL", n_boot, key, seed, cfg, reml, adjusted,
                threads, ("PB.HL",),
            )
            values["PB.HL"] = res["PB.HL"].values
            meta["dropped"]["PB.HL"] = res["PB.HL"].n_dropped
    return MseReport(values=values, bootstrap_meta=meta, fingerprint=fingerprint(data))


@dataclass(frozen=True)
class MseEstimatorVariances:
    """Leading-order variances of the two corrected MSE estimators.

    ``reml_based`` is the variance of the Taylor-corrected REML estimator
    (DL.RE); ``adjusted_based`` is the variance of the area-adjusted
    estimator (Taylor.HL). Balanced case only.
    """

    reml_based: float
    adjusted_based: float

    @property
    def adjusted_no_worse(self) -> bool:
        return self.adjusted_based <= self.reml_based


def balanced_mse_variances(
    m: int, p: int, d: float, shrink_b: float, leverage_q: float
) -> MseEstimatorVariances:
    """Closed-form higher-order variances in the balanced case.

    ``shrink_b`` is the true shrinkage d/(a+d); ``leverage_q`` is
    x_i'(X'X)^-1 x_i for the area of interest. Requires m > p + 4 so the
    fourth moment behind the formulas exists.
    """
    if m <= p + 4:
        raise DegreesOfFreedomTooSmall(
            f"variance formulas need m > p + 4 (m={m}, p={p})"
        )
    if not 0 < shrink_b <= 1:
        raise ValueError("shrink_b must lie in (0, 1]")
    if not 0 <= leverage_q < 1:
        raise ValueError("leverage_q must lie in [0, 1)")
    if d <= 0:
        raise ValueError("d must be positive")
    tail = 2.0 * d * d * shrink_b * shrink_b / (m - p - 4)
    a_m = ((m - 4 - m * leverage_q) * (m - p) / (m * (m - p - 2))) ** 2 * tail
    b_m = ((m - 2 - m * leverage_q) / m) ** 2 * tail
    return MseEstimatorVariances(reml_based=a_m, adjusted_based=b_m)
