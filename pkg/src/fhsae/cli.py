"""Command-line interface.

Subcommands:

* ``fit``       variance fits, shrinkage weights and predictors for a dataset
* ``mse``       per-area MSE estimates for a chosen set of estimators
* ``simulate``  Monte Carlo evaluation of a design (built-in or JSON file)
* ``validate``  schema and sanity checks for a dataset file

Datasets are CSV with header ``area_id,y,d,x1,...,xp`` (``--intercept``
prepends a column of ones). Results are written to ``--output-dir`` as
JSON and/or CSV. Outputs are deterministic: same inputs and seed give
byte-identical files, regardless of SAE_FH_THREADS or how the work is
scheduled.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys

import numpy as np

from .errors import FhError, NonpositiveSamplingVariance, ParseError, SchemaError
from .fit import FitConfig, adjusted_values, fit_area_adjusted_all, fit_reml
from .model import FhDataset, eblup, fingerprint, validate_dataset
from .mse import ALL_TAGS, mse_report
from .sim import SimDesign, builtin_design, run_monte_carlo, simulate_fh

SCHEMA_VERSION = 1
_BUILTIN_DATASET = "demo"
_BUILTIN_DESIGNS = ("table3-surrogate", "balanced-m50")


def _f17(v: float) -> str:
    return format(float(v), ".17g")


def _jsonify(obj):
    """Make an object JSON-safe and deterministic (NaN/inf become null)."""
    if isinstance(obj, dict):
        return {str(k): _jsonify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonify(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonify(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj


def read_dataset_csv(path: str, intercept: bool = False) -> FhDataset:
    """Parse a dataset CSV with header ``area_id,y,d,x1,...,xp``."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise SchemaError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if header[:3] != ["area_id", "y", "d"]:
        raise SchemaError(
            f"{path}: header must start with area_id,y,d (got {','.join(header[:3])})"
        )
    p = len(header) - 3
    for k in range(p):
        if header[3 + k] != f"x{k + 1}":
            raise SchemaError(
                f"{path}: covariate columns must be named x1..x{p} in order "
                f"(column {k + 4} is {header[3 + k]!r})"
            )
    if p == 0 and not intercept:
        raise SchemaError(f"{path}: no covariate columns; pass --intercept to fit a mean")
    body = [r for r in rows[1:] if r and any(f.strip() for f in r)]
    if not body:
        raise SchemaError(f"{path}: no data rows")
    ids, y, d, X = [], [], [], []
    for lineno, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise ParseError(
                f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}"
            )
        ids.append(row[0].strip())
        try:
            y.append(float(row[1]))
            d.append(float(row[2]))
            X.append([float(v) for v in row[3:]])
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from exc
        if not d[-1] > 0:
            raise NonpositiveSamplingVariance(
                f"{path}:{lineno}: d must be positive, got {row[2].strip()}"
            )
    Xarr = np.asarray(X, dtype=np.float64).reshape(len(body), p)
    if intercept:
        Xarr = np.column_stack([np.ones(len(body)), Xarr]) if p else np.ones((len(body), 1))
    return validate_dataset(np.asarray(y), Xarr, np.asarray(d), ids)


def write_dataset_csv(path: str, data: FhDataset) -> None:
    """Write a dataset back out; values carry 17 significant digits so a
    read of the file reproduces the arrays bit for bit."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["area_id", "y", "d"] + [f"x{k + 1}" for k in range(data.p)])
        for i in range(data.m):
            w.writerow(
                [data.area_ids[i], _f17(data.y[i]), _f17(data.d[i])]
                + [_f17(v) for v in data.X[i]]
            )


def demo_dataset() -> FhDataset:
    """Deterministic built-in dataset: one draw of the surrogate design."""
    design = builtin_design("table3-surrogate")
    y, _ = simulate_fh(design, 0)
    ids = [f"a{i + 1:02d}" for i in range(design.m)]
    return validate_dataset(y, design.X, design.d, ids)


def _load_input(args) -> FhDataset:
    if args.input is None or args.input == _BUILTIN_DATASET:
        return demo_dataset()
    return read_dataset_csv(args.input, getattr(args, "intercept", False))


def load_design(spec: str) -> SimDesign:
    if spec in _BUILTIN_DESIGNS:
        return builtin_design(spec)
    if not os.path.exists(spec):
        raise SchemaError(
            f"unknown design {spec!r}: not a file, and not one of the "
            f"built-ins {', '.join(_BUILTIN_DESIGNS)}"
        )
    try:
        with open(spec) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{spec}: invalid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise SchemaError(f"{spec}: design must be a JSON object")
    if raw.get("schema_version") != SCHEMA_VERSION:
        raise SchemaError(
            f"{spec}: schema_version must be {SCHEMA_VERSION}, got {raw.get('schema_version')!r}"
        )
    required = ("X", "d", "a_true", "beta_true", "n_mc")
    missing = [k for k in required if k not in raw]
    if missing:
        raise SchemaError(f"{spec}: missing design fields: {', '.join(missing)}")
    try:
        return SimDesign(
            X=np.asarray(raw["X"], dtype=np.float64),
            d=np.asarray(raw["d"], dtype=np.float64),
            a_true=float(raw["a_true"]),
            beta_true=np.asarray(raw["beta_true"], dtype=np.float64),
            n_mc=int(raw["n_mc"]),
            n_boot=int(raw.get("n_boot", 1000)),
            seed=int(raw.get("seed", 0)),
            a_estimators=tuple(raw.get("a_estimators", ("RE", "HL"))),
            mse_estimators=tuple(raw.get("mse_estimators", ())),
            name=str(raw.get("name", os.path.basename(spec))),
        )
    except (TypeError, ValueError, FhError) as exc:
        raise SchemaError(f"{spec}: {exc}") from exc


def _write_json(path: str, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonify(payload), fh, sort_keys=True, indent=2)
        fh.write("\n")


def _write_csv(path: str, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _emit(args, name: str, payload: dict, header: list[str], rows: list[list]) -> list[str]:
    os.makedirs(args.output_dir, exist_ok=True)
    written = []
    if args.format in ("json", "both"):
        path = os.path.join(args.output_dir, f"{name}.json")
        _write_json(path, payload)
        written.append(path)
    if args.format in ("csv", "both"):
        path = os.path.join(args.output_dir, f"{name}.csv")
        _write_csv(path, header, rows)
        written.append(path)
    return written


def _cell(v: float) -> str:
    return _f17(v) if not math.isnan(v) else "nan"


def cmd_fit(args) -> int:
    data = _load_input(args)
    cfg = FitConfig()
    re = fit_reml(data, cfg)
    adj = fit_area_adjusted_all(data, cfg)
    avec = adjusted_values(adj)
    pred_re = eblup(data, re.a, a_label="RE")
    pred_hl = eblup(data, avec, a_label="HL")
    areas = [
        {
            "area_id": data.area_ids[i],
            "y": data.y[i],
            "d": data.d[i],
            "a_adjusted": avec[i],
            "b_re": pred_re.shrink.b[i],
            "b_hl": pred_hl.shrink.b[i],
            "eblup_re": pred_re.theta[i],
            "eblup_hl": pred_hl.theta[i],
        }
        for i in range(data.m)
    ]
    payload = {
        "schema_version": SCHEMA_VERSION,
        "command": "fit",
        "input_fingerprint": fingerprint(data),
        "a_reml": re.a,
        "beta_re": pred_re.beta,
        "beta_hl": pred_hl.beta,
        "areas": areas,
    }
    header = ["area_id", "y", "d", "a_reml", "a_adjusted", "b_re", "b_hl",
              "eblup_re", "eblup_hl"]
    rows = [
        [a["area_id"], _f17(a["y"]), _f17(a["d"]), _f17(re.a), _f17(a["a_adjusted"]),
         _f17(a["b_re"]), _f17(a["b_hl"]), _f17(a["eblup_re"]), _f17(a["eblup_hl"])]
        for a in areas
    ]
    written = _emit(args, "estimates", payload, header, rows)
    print(f"fit: m={data.m} p={data.p} a_reml={re.a:.6g} "
          f"a_adjusted=[{avec.min():.6g}, {avec.max():.6g}]")
    for path in written:
        print(f"wrote {path}")
    return 0


def _parse_estimators(arg: str | None) -> tuple[str, ...]:
    if not arg:
        return ALL_TAGS
    tags = tuple(t.strip() for t in arg.split(",") if t.strip())
    for t in tags:
        if t not in ALL_TAGS:
            raise SchemaError(
                f"unknown estimator {t!r}; choose from {', '.join(ALL_TAGS)}"
            )
    return tags


def cmd_mse(args) -> int:
    data = _load_input(args)
    tags = _parse_estimators(args.estimators)
    needs_rng = any(t in ("PB.RE", "BL.RE", "PB.HL") for t in tags)
    if needs_rng and args.seed is None:
        raise SchemaError("--seed is required when bootstrap estimators are selected")
    if needs_rng and args.boot_reps < 1:
        raise SchemaError("--boot-reps must be at least 1")
    seed = args.seed if needs_rng else None
    report = mse_report(data, tags, n_boot=args.boot_reps, seed=seed or 0)
    areas = [
        {"area_id": data.area_ids[i], **{t: report.values[t][i] for t in tags}}
        for i in range(data.m)
    ]
    payload = {
        "schema_version": SCHEMA_VERSION,
        "command": "mse",
        "input_fingerprint": report.fingerprint,
        "estimators": list(tags),
        "seed": seed,
        "n_boot": args.boot_reps if needs_rng else None,
        "bootstrap_meta": report.bootstrap_meta,
        "areas": areas,
    }
    header = ["area_id"] + list(tags)
    rows = [[a["area_id"]] + [_f17(a[t]) for t in tags] for a in areas]
    written = _emit(args, "mse", payload, header, rows)
    print(f"mse: m={data.m} estimators={','.join(tags)}"
          + (f" n_boot={args.boot_reps} seed={seed}" if needs_rng else ""))
    for path in written:
        print(f"wrote {path}")
    return 0


def cmd_simulate(args) -> int:
    design = load_design(args.design)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.boot_reps is not None:
        overrides["n_boot"] = args.boot_reps
    if args.n_mc is not None:
        overrides["n_mc"] = args.n_mc
    if args.estimators is not None:
        overrides["mse_estimators"] = _parse_estimators(args.estimators)
    if overrides:
        design = _replace_design(design, overrides)
    result = run_monte_carlo(design)
    metrics = [
        {
            "area": r.area,
            "target": r.target,
            "estimator": r.estimator,
            "rb_percent": r.rb_percent,
            "rrmse_percent": r.rrmse_percent,
            "mc_standard_error": r.mc_standard_error,
        }
        for r in result.rows
    ]
    payload = {
        "schema_version": SCHEMA_VERSION,
        "command": "simulate",
        "design": {
            "name": design.name,
            "m": design.m,
            "p": design.X.shape[1],
            "a_true": design.a_true,
            "n_mc": design.n_mc,
            "n_boot": design.n_boot,
            "seed": design.seed,
            "a_estimators": list(design.a_estimators),
            "mse_estimators": list(design.mse_estimators),
        },
        "metrics": metrics,
        "true_shrinkage": result.true_b,
        "empirical_mse": result.emp_mse,
        "estimator_means": result.mse_mean,
        "dropped_bootstrap": result.dropped_boot,
        "replicates_kept": result.n_kept,
    }
    header = ["area", "target", "estimator", "rb_percent", "rrmse_percent",
              "mc_standard_error"]
    rows = [
        [r.area, r.target, r.estimator, _cell(r.rb_percent), _cell(r.rrmse_percent),
         _cell(r.mc_standard_error)]
        for r in result.rows
    ]
    written = _emit(args, "simulate", payload, header, rows)
    if args.format in ("csv", "both"):
        long_rows = []
        for r in result.rows:
            key = f"{r.target}_rb_percent"
            long_rows.append([r.area, key, r.estimator, _cell(r.rb_percent)])
            long_rows.append([r.area, f"{r.target}_rrmse_percent", r.estimator,
                              _cell(r.rrmse_percent)])
        for tag in sorted(result.emp_mse):
            for i, v in enumerate(result.emp_mse[tag]):
                long_rows.append([i, "empirical_mse", tag, _cell(v)])
        for tag in design.mse_estimators:
            for i, v in enumerate(result.mse_mean[tag]):
                long_rows.append([i, "mse_mean", tag, _cell(v)])
        long_path = os.path.join(args.output_dir, "simulate_long.csv")
        _write_csv(long_path, ["area", "metric", "estimator", "value"], long_rows)
        written.append(long_path)
    print(f"simulate: design={design.name} m={design.m} n_mc={design.n_mc} "
          f"n_boot={design.n_boot} seed={design.seed} kept={result.n_kept}")
    for path in written:
        print(f"wrote {path}")
    return 0


def _replace_design(design: SimDesign, overrides: dict) -> SimDesign:
    from dataclasses import replace

    return replace(design, **overrides)


def cmd_validate(args) -> int:
    data = read_dataset_csv(args.input, args.intercept)
    balanced = bool((data.d.max() - data.d.min()) <= 1e-12 * data.d.mean())
    payload = {
        "ok": True,
        "m": data.m,
        "p": data.p,
        "balanced": balanced,
        "fingerprint": fingerprint(data),
    }
    print(json.dumps(_jsonify(payload), sort_keys=True, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fhsae",
        description="Small-area model fits, MSE estimates and Monte Carlo runs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp, with_input=True):
        if with_input:
            sp.add_argument("--input", default=None,
                            help="dataset CSV (default: built-in demo dataset)")
            sp.add_argument("--intercept", action="store_true",
                            help="prepend a column of ones to the covariates")
        sp.add_argument("--output-dir", default=".", help="directory for result files")
        sp.add_argument("--format", choices=("json", "csv", "both"), default="both")

    sp = sub.add_parser("fit", help="variance fits, shrinkage and predictors")
    common(sp)
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("mse", help="per-area MSE estimates")
    common(sp)
    sp.add_argument("--estimators", default=None,
                    help=f"comma-separated subset of {','.join(ALL_TAGS)}")
    sp.add_argument("--seed", type=int, default=None,
                    help="bootstrap seed (required for PB.RE, BL.RE, PB.HL)")
    sp.add_argument("--boot-reps", type=int, default=1000,
                    help="bootstrap replicates per estimator")
    sp.set_defaults(func=cmd_mse)

    sp = sub.add_parser("simulate", help="Monte Carlo evaluation of a design")
    common(sp, with_input=False)
    sp.add_argument("--design", required=True,
                    help=f"design JSON file or one of {', '.join(_BUILTIN_DESIGNS)}")
    sp.add_argument("--seed", type=int, default=None, help="override the design seed")
    sp.add_argument("--boot-reps", type=int, default=None,
                    help="override the design bootstrap replicates")
    sp.add_argument("--n-mc", type=int, default=None,
                    help="override the design Monte Carlo replicates")
    sp.add_argument("--estimators", default=None,
                    help="override the design MSE estimator set")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("validate", help="check a dataset file")
    sp.add_argument("--input", required=True, help="dataset CSV")
    sp.add_argument("--intercept", action="store_true",
                    help="prepend a column of ones to the covariates")
    sp.set_defaults(func=cmd_validate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (FhError, ValueError) as exc:
        err = {"error": {"type": type(exc).__name__, "message": str(exc)}}
        print(json.dumps(err, sort_keys=True), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
