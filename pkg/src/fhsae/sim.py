"""Monte Carlo evaluation of the estimators on synthetic designs.

A design fixes the covariates, the sampling variances, the true
between-area variance and coefficients, and the replication counts. Each
replicate draws area effects and sampling errors through the counter-based
streams keyed by (seed, replicate, area), fits the variance estimators,
forms the predictors, and evaluates the requested MSE estimators; the
harness then reports relative bias and relative root-MSE of

* the shrinkage weight estimates against the true weights, and
* the MSE estimates against the empirical MSE of the predictor family
  they target (``.RE`` tags against the REML predictor, ``.HL`` tags
  against the adjusted-fit predictor).

Every replicate writes into its own row of preallocated arrays and all
reductions run afterwards in a fixed order, so results are identical for
any worker count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .backends import resolve_threads
from .errors import DimensionMismatch, OptimizationDidNotConverge, ZeroTruth
from .fit import FitConfig, adjusted_values, fit_area_adjusted_all, fit_reml
from .model import FhDataset, _freeze, eblup, validate_dataset
from .mse import (ALL_TAGS, BOOT_TAGS, MAX_DROP_FRACTION, TAYLOR_TAGS,
                  _bootstrap_values, mse_taylor)
from .rng import DOMAIN_BOOT, DOMAIN_SIM, derive_key, gauss_pairs

A_TAGS = ("RE", "HL", "TRUTH")


@dataclass(frozen=True)
class SimDesign:
    """Everything a Monte Carlo run depends on, in one frozen record."""

    X: np.ndarray
    d: np.ndarray
    a_true: float
    beta_true: np.ndarray
    n_mc: int
    n_boot: int = 1000
    seed: int = 0
    a_estimators: tuple[str, ...] = ("RE", "HL")
    mse_estimators: tuple[str, ...] = ()
    name: str = "custom"

    def __post_init__(self):
        X = _freeze(np.atleast_2d(np.asarray(self.X, dtype=np.float64)))
        d = _freeze(np.asarray(self.d, dtype=np.float64))
        beta = _freeze(np.asarray(self.beta_true, dtype=np.float64))
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "beta_true", beta)
        if X.ndim != 2 or d.shape != (X.shape[0],) or beta.shape != (X.shape[1],):
            raise DimensionMismatch(
                f"inconsistent design shapes X{X.shape}, d{d.shape}, beta{beta.shape}"
            )
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(d)) and np.all(np.isfinite(beta))):
            raise ValueError("design contains non-finite values")
        if np.any(d <= 0):
            raise ValueError("sampling variances must be positive")
        if not np.isfinite(self.a_true) or self.a_true < 0:
            raise ValueError("a_true must be a nonnegative number")
        if self.n_mc < 1 or self.n_boot < 1:
            raise ValueError("n_mc and n_boot must be at least 1")
        for t in self.a_estimators:
            if t not in A_TAGS:
                raise ValueError(f"unknown predictor tag {t!r}, expected subset of {A_TAGS}")
        for t in self.mse_estimators:
            if t not in ALL_TAGS:
                raise ValueError(f"unknown MSE estimator {t!r}, expected subset of {ALL_TAGS}")

    @property
    def m(self) -> int:
        return self.d.shape[0]


def builtin_design(name: str, **overrides) -> SimDesign:
    """Named designs used by the test bench and the CLI.

    ``table3-surrogate``: 15 areas, intercept plus a linear covariate,
    sampling variances spanning weak to strong shrinkage (true weights
    from about 0.1 to 0.67), true between-area variance set at the median
    sampling variance.

    ``balanced-m50``: 50 areas, intercept only, all variances equal to the
    true between-area variance; the setting where the closed forms apply.
    """
    if name == "table3-surrogate":
        m = 15
        base = SimDesign(
            X=np.column_stack([np.ones(m), np.linspace(-1.0, 1.0, m)]),
            d=np.geomspace(1.883, 31.694, m),
            a_true=15.94,
            beta_true=np.array([10.0, 5.0]),
            n_mc=1000,
            n_boot=1000,
            seed=2016,
            name=name,
        )
    elif name == "balanced-m50":
        m = 50
        base = SimDesign(
            X=np.ones((m, 1)),
            d=np.ones(m),
            a_true=1.0,
            beta_true=np.zeros(1),
            n_mc=2000,
            n_boot=500,
            seed=2016,
            mse_estimators=("naive.RE", "Taylor.HL", "PB.HL"),
            name=name,
        )
    else:
        raise KeyError(
            f"unknown design {name!r}; built-ins are 'table3-surrogate', 'balanced-m50'"
        )
    return replace(base, **overrides) if overrides else base


def simulate_fh(design: SimDesign, rep: int) -> tuple[np.ndarray, np.ndarray]:
    """Synthetic (y, theta) for replicate ``rep`` of the design."""
    key = derive_key(design.seed, DOMAIN_SIM)
    zv, ze = gauss_pairs(key, np.full(design.m, rep), np.arange(design.m))
    theta = design.X @ design.beta_true + np.sqrt(design.a_true) * zv
    y = theta + np.sqrt(design.d) * ze
    return y, theta


def rb_rrmse(values: np.ndarray, truth: float) -> tuple[float, float, float]:
    """Percent relative bias, relative root-MSE, and the MC standard error
    of the relative bias. The standard error is NaN for fewer than two
    replicates."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 1 or values.shape[0] < 1:
        raise ValueError("values must be a nonempty vector")
    truth = float(truth)
    if truth == 0.0:
        raise ZeroTruth("relative metrics are undefined against a zero truth")
    err = values - truth
    rb = 100.0 * float(np.mean(err)) / truth
    rrmse = 100.0 * float(np.sqrt(np.mean(err * err))) / abs(truth)
    if values.shape[0] >= 2:
        se = 100.0 * float(np.std(values, ddof=1)) / (abs(truth) * np.sqrt(values.shape[0]))
    else:
        se = float("nan")
    return rb, rrmse, se


@dataclass(frozen=True)
class MetricRow:
    area: int
    target: str
    estimator: str
    rb_percent: float
    rrmse_percent: float
    mc_standard_error: float


@dataclass(frozen=True)
class SimResult:
    design: SimDesign
    rows: list[MetricRow]
    true_b: np.ndarray
    emp_mse: dict[str, np.ndarray]
    emp_mse_se: dict[str, np.ndarray]
    mse_mean: dict[str, np.ndarray]
    mse_se: dict[str, np.ndarray]
    paired_sq_diff_mean: np.ndarray | None
    paired_sq_diff_se: np.ndarray | None
    dropped_boot: dict[str, int]
    n_kept: int

    def row(self, area: int, target: str, estimator: str) -> MetricRow:
        for r in self.rows:
            if (r.area, r.target, r.estimator) == (area, target, estimator):
                return r
        raise KeyError((area, target, estimator))


def _family(tag: str) -> str:
    return "HL" if tag.endswith(".HL") else "RE"


def run_monte_carlo(
    design: SimDesign, cfg: FitConfig | None = None, threads: int | None = None
) -> SimResult:
    cfg = cfg or FitConfig()
    m, n = design.m, design.n_mc
    y0, _ = simulate_fh(design, 0)
    template = validate_dataset(y0, design.X, design.d)

    mse_tags = tuple(design.mse_estimators)
    predictor_tags = tuple(
        dict.fromkeys(design.a_estimators + tuple(_family(t) for t in mse_tags))
    )
    need_re = "RE" in predictor_tags or any(t.endswith(".RE") for t in mse_tags)
    need_hl = "HL" in predictor_tags or any(t.endswith(".HL") for t in mse_tags)

    b_hat = {t: np.zeros((n, m)) for t in predictor_tags}
    sq = {t: np.zeros((n, m)) for t in predictor_tags}
    mse_val = {t: np.zeros((n, m)) for t in mse_tags}
    dropped = {t: np.zeros(n, dtype=np.int64) for t in mse_tags if t in BOOT_TAGS}
    rep_ok = np.ones(n, dtype=bool)

    boot_re_family = tuple(t for t in mse_tags if t in BOOT_TAGS and t.endswith(".RE"))
    boot_hl = "PB.HL" in mse_tags

    def one_rep(r: int) -> None:
        try:
            _one_rep(r)
        except OptimizationDidNotConverge:
            rep_ok[r] = False

    def _one_rep(r: int) -> None:
        y, theta = simulate_fh(design, r)
        data = FhDataset(y=_freeze(y), X=template.X, d=template.d,
                         area_ids=template.area_ids)
        reml_est = fit_reml(data, cfg) if need_re else None
        adj_est = fit_area_adjusted_all(data, cfg) if need_hl else None
        for t in predictor_tags:
            if t == "RE":
                a_used = reml_est.a
            elif t == "HL":
                a_used = adjusted_values(adj_est)
            else:
                a_used = design.a_true
            res = eblup(data, a_used, a_label=t)
            b_hat[t][r] = res.shrink.b
            sq[t][r] = (res.theta - theta) ** 2
        for t in mse_tags:
            if t in TAYLOR_TAGS:
                mse_val[t][r] = mse_taylor(data, t, reml=reml_est, adjusted=adj_est, cfg=cfg)
        if boot_re_family or boot_hl:
            key_r = derive_key(design.seed, DOMAIN_BOOT, r)
            if boot_re_family:
                out = _bootstrap_values(
                    data, boot_re_family[0], design.n_boot, key_r, design.seed,
                    cfg, reml_est, adj_est, 1, boot_re_family,
                )
                for t in boot_re_family:
                    mse_val[t][r] = out[t].values
                    dropped[t][r] = out[t].n_dropped
            if boot_hl:
                out = _bootstrap_values(
                    data, "PB.HL", design.n_boot, key_r, design.seed,
                    cfg, reml_est, adj_est, 1, ("PB.HL",),
                )
                mse_val["PB.HL"][r] = out["PB.HL"].values
                dropped["PB.HL"][r] = out["PB.HL"].n_dropped

    workers = threads if threads is not None else resolve_threads(n)
    if workers <= 1:
        for r in range(n):
            one_rep(r)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(one_rep, range(n)))

    n_kept = int(rep_ok.sum())
    if n - n_kept > MAX_DROP_FRACTION * n:
        raise OptimizationDidNotConverge(
            f"{n - n_kept} of {n} Monte Carlo replicates failed to converge"
        )

    def col_se(arr: np.ndarray) -> np.ndarray:
        if n_kept >= 2:
            return np.std(arr, axis=0, ddof=1) / np.sqrt(n_kept)
        return np.full(m, np.nan)

    true_b = design.d / (design.a_true + design.d)
    rows: list[MetricRow] = []
    for t in design.a_estimators:
        for i in range(m):
            rb, rr, se = rb_rrmse(b_hat[t][rep_ok, i], float(true_b[i]))
            rows.append(MetricRow(i, "shrinkage", t, rb, rr, se))
    emp_mse = {t: sq[t][rep_ok].mean(axis=0) for t in predictor_tags}
    emp_mse_se = {t: col_se(sq[t][rep_ok]) for t in predictor_tags}
    mse_mean = {t: mse_val[t][rep_ok].mean(axis=0) for t in mse_tags}
    mse_se = {t: col_se(mse_val[t][rep_ok]) for t in mse_tags}
    for t in mse_tags:
        target = emp_mse[_family(t)]
        for i in range(m):
            rb, rr, se = rb_rrmse(mse_val[t][rep_ok, i], float(target[i]))
            rows.append(MetricRow(i, "mse", t, rb, rr, se))
    if "RE" in predictor_tags and "HL" in predictor_tags:
        diff = sq["RE"][rep_ok] - sq["HL"][rep_ok]
        paired_mean = diff.mean(axis=0)
        paired_se = col_se(diff)
    else:
        paired_mean = paired_se = None
    return SimResult(
        design=design,
        rows=rows,
        true_b=true_b,
        emp_mse=emp_mse,
        emp_mse_se=emp_mse_se,
        mse_mean=mse_mean,
        mse_se=mse_se,
        paired_sq_diff_mean=paired_mean,
        paired_sq_diff_se=paired_se,
        dropped_boot={t: int(v[rep_ok].sum()) for t, v in dropped.items()},
        n_kept=n_kept,
    )
