"""CLI: dataset parsing, subcommands, output files, determinism."""

import json
import os
import subprocess
import sys

import numpy as np
import pytest

from fhsae.cli import (
    _jsonify,
    demo_dataset,
    load_design,
    main,
    read_dataset_csv,
    write_dataset_csv,
)
from fhsae.errors import (
    NonpositiveSamplingVariance,
    ParseError,
    SchemaError,
)


def write_lines(path, lines):
    path.write_text("\n".join(lines) + "\n")
    return str(path)


GOOD_LINES = [
    "area_id,y,d,x1",
    "a,1.0,0.5,1.0",
    "b,2.0,0.7,1.0",
    "c,3.5,0.9,1.0",
    "d,4.0,1.1,1.0",
    "e,2.2,1.3,1.0",
]


class TestReadDatasetCsv:
    def test_round_trip_is_bit_exact(self, tmp_path):
        data = demo_dataset()
        path = str(tmp_path / "demo.csv")
        write_dataset_csv(path, data)
        back = read_dataset_csv(path)
        assert np.array_equal(back.y, data.y)
        assert np.array_equal(back.X, data.X)
        assert np.array_equal(back.d, data.d)
        assert back.area_ids == data.area_ids

    def test_good_file(self, tmp_path):
        data = read_dataset_csv(write_lines(tmp_path / "a.csv", GOOD_LINES))
        assert data.m == 5 and data.p == 1
        assert data.area_ids == ("a", "b", "c", "d", "e")

    def test_intercept_prepends_ones(self, tmp_path):
        lines = ["area_id,y,d,x1"] + [f"r{i},1.0,1.0,{i}" for i in range(6)]
        data = read_dataset_csv(write_lines(tmp_path / "a.csv", lines), intercept=True)
        assert data.p == 2
        assert np.all(data.X[:, 0] == 1.0)
        assert np.array_equal(data.X[:, 1], np.arange(6.0))

    def test_no_covariates_needs_intercept_flag(self, tmp_path):
        lines = ["area_id,y,d"] + [f"r{i},1.5,1.0" for i in range(5)]
        path = write_lines(tmp_path / "a.csv", lines)
        with pytest.raises(SchemaError, match="--intercept"):
            read_dataset_csv(path)
        data = read_dataset_csv(path, intercept=True)
        assert data.p == 1 and np.all(data.X == 1.0)

    def test_bad_leading_header(self, tmp_path):
        path = write_lines(tmp_path / "a.csv", ["id,y,d,x1", "a,1,1,1"])
        with pytest.raises(SchemaError, match="area_id,y,d"):
            read_dataset_csv(path)

    def test_bad_covariate_names(self, tmp_path):
        path = write_lines(tmp_path / "a.csv", ["area_id,y,d,x2", "a,1,1,1"])
        with pytest.raises(SchemaError, match="column 4"):
            read_dataset_csv(path)

    def test_field_count_error_names_line(self, tmp_path):
        lines = list(GOOD_LINES)
        lines[2] = "b,2.0,0.7"
        path = write_lines(tmp_path / "a.csv", lines)
        with pytest.raises(ParseError, match=":3:"):
            read_dataset_csv(path)

    def test_float_parse_error_names_line(self, tmp_path):
        lines = list(GOOD_LINES)
        lines[4] = "d,oops,1.1,1.0"
        path = write_lines(tmp_path / "a.csv", lines)
        with pytest.raises(ParseError, match=":5:"):
            read_dataset_csv(path)

    def test_nonpositive_d_names_line(self, tmp_path):
        lines = list(GOOD_LINES)
        lines[3] = "c,3.5,0.0,1.0"
        path = write_lines(tmp_path / "a.csv", lines)
        with pytest.raises(NonpositiveSamplingVariance, match=":4:"):
            read_dataset_csv(path)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "a.csv"
        path.write_text("")
        with pytest.raises(SchemaError, match="empty"):
            read_dataset_csv(str(path))

    def test_header_without_rows(self, tmp_path):
        path = write_lines(tmp_path / "a.csv", ["area_id,y,d,x1"])
        with pytest.raises(SchemaError, match="no data rows"):
            read_dataset_csv(path)

    def test_blank_lines_are_skipped(self, tmp_path):
        lines = GOOD_LINES[:3] + ["", "  "] + GOOD_LINES[3:]
        data = read_dataset_csv(write_lines(tmp_path / "a.csv", lines))
        assert data.m == 5

    def test_missing_file(self, tmp_path):
        with pytest.raises(ParseError, match="cannot read"):
            read_dataset_csv(str(tmp_path / "nope.csv"))


class TestJsonify:
    def test_nan_and_inf_become_null(self):
        out = _jsonify({"a": float("nan"), "b": [np.float64(2.0), float("inf")],
                        "c": np.arange(2), "d": "s"})
        assert out == {"a": None, "b": [2.0, None], "c": [0.0, 1.0], "d": "s"}


class TestFitCommand:
    def test_demo_outputs(self, tmp_path, capsys):
        out = str(tmp_path / "out")
        assert main(["fit", "--output-dir", out]) == 0
        listing = sorted(os.listdir(out))
        assert listing == ["estimates.csv", "estimates.json"]
        payload = json.loads((tmp_path / "out" / "estimates.json").read_text())
        assert payload["schema_version"] == 1
        assert payload["command"] == "fit"
        assert len(payload["input_fingerprint"]) == 16
        assert payload["a_reml"] > 0
        assert len(payload["beta_re"]) == 2
        assert len(payload["areas"]) == 15
        area = payload["areas"][0]
        assert set(area) == {"area_id", "y", "d", "a_adjusted", "b_re", "b_hl",
                             "eblup_re", "eblup_hl"}
        assert area["area_id"] == "a01"
        lines = (tmp_path / "out" / "estimates.csv").read_text().splitlines()
        assert lines[0].startswith("area_id,y,d,a_reml,a_adjusted")
        assert len(lines) == 16
        assert "wrote" in capsys.readouterr().out

    def test_rerun_is_byte_identical(self, tmp_path):
        out1, out2 = str(tmp_path / "o1"), str(tmp_path / "o2")
        assert main(["fit", "--output-dir", out1]) == 0
        assert main(["fit", "--output-dir", out2]) == 0
        for name in ("estimates.json", "estimates.csv"):
            b1 = (tmp_path / "o1" / name).read_bytes()
            b2 = (tmp_path / "o2" / name).read_bytes()
            assert b1 == b2, name

    def test_csv_input(self, tmp_path):
        src = str(tmp_path / "data.csv")
        write_dataset_csv(src, demo_dataset())
        out = str(tmp_path / "out")
        assert main(["fit", "--input", src, "--output-dir", out, "--format", "json"]) == 0
        assert os.listdir(out) == ["estimates.json"]


class TestMseCommand:
    def test_taylor_only_runs_without_seed(self, tmp_path):
        out = str(tmp_path / "out")
        rc = main(["mse", "--estimators", "naive.RE,DL.RE,Taylor.HL",
                   "--output-dir", out, "--format", "json"])
        assert rc == 0
        payload = json.loads((tmp_path / "out" / "mse.json").read_text())
        assert payload["seed"] is None
        assert payload["n_boot"] is None
        assert payload["estimators"] == ["naive.RE", "DL.RE", "Taylor.HL"]
        assert "seed" not in payload["bootstrap_meta"]
        assert len(payload["areas"]) == 15
        assert set(payload["areas"][3]) == {"area_id", "naive.RE", "DL.RE", "Taylor.HL"}

    def test_bootstrap_requires_seed(self, tmp_path, capsys):
        rc = main(["mse", "--estimators", "PB.RE", "--output-dir", str(tmp_path)])
        assert rc == 2
        err = json.loads(capsys.readouterr().err)
        assert err["error"]["type"] == "SchemaError"
        assert "--seed" in err["error"]["message"]

    def test_bootstrap_with_seed(self, tmp_path):
        out = str(tmp_path / "out")
        rc = main(["mse", "--estimators", "naive.RE,PB.RE", "--seed", "3",
                   "--boot-reps", "64", "--output-dir", out])
        assert rc == 0
        payload = json.loads((tmp_path / "out" / "mse.json").read_text())
        assert payload["seed"] == 3
        assert payload["n_boot"] == 64
        assert payload["bootstrap_meta"]["dropped"] == {"PB.RE": 0}
        mse_csv = (tmp_path / "out" / "mse.csv").read_text().splitlines()
        assert mse_csv[0] == "area_id,naive.RE,PB.RE"
        assert len(mse_csv) == 16

    def test_unknown_estimator(self, capsys):
        rc = main(["mse", "--estimators", "bogus", "--output-dir", "/tmp"])
        assert rc == 2
        assert json.loads(capsys.readouterr().err)["error"]["type"] == "SchemaError"

    def test_zero_boot_reps_rejected(self, capsys):
        rc = main(["mse", "--estimators", "PB.HL", "--seed", "1",
                   "--boot-reps", "0", "--output-dir", "/tmp"])
        assert rc == 2
        assert "--boot-reps" in json.loads(capsys.readouterr().err)["error"]["message"]


def tiny_design_file(tmp_path, **extra):
    spec = {
        "schema_version": 1,
        "X": [[1.0]] * 8,
        "d": [1.0] * 8,
        "a_true": 1.0,
        "beta_true": [0.0],
        "n_mc": 4,
        "n_boot": 8,
        "seed": 7,
        "mse_estimators": [],
    }
    spec.update(extra)
    path = tmp_path / "design.json"
    path.write_text(json.dumps(spec))
    return str(path)


class TestSimulateCommand:
    def test_builtin_design_with_overrides(self, tmp_path):
        out = str(tmp_path / "out")
        rc = main(["simulate", "--design", "balanced-m50", "--n-mc", "6",
                   "--boot-reps", "16", "--output-dir", out])
        assert rc == 0
        names = sorted(os.listdir(out))
        assert names == ["simulate.csv", "simulate.json", "simulate_long.csv"]
        payload = json.loads((tmp_path / "out" / "simulate.json").read_text())
        assert payload["design"]["name"] == "balanced-m50"
        assert payload["design"]["n_mc"] == 6
        assert payload["design"]["n_boot"] == 16
        assert payload["replicates_kept"] == 6
        assert set(payload["empirical_mse"]) == {"RE", "HL"}
        assert set(payload["estimator_means"]) == {"naive.RE", "Taylor.HL", "PB.HL"}
        assert len(payload["true_shrinkage"]) == 50
        long_lines = (tmp_path / "out" / "simulate_long.csv").read_text().splitlines()
        assert long_lines[0] == "area,metric,estimator,value"
        cells = [ln.split(",") for ln in long_lines[1:]]
        assert ["empirical_mse", "RE"] in [c[1:3] for c in cells]
        assert ["mse_mean", "PB.HL"] in [c[1:3] for c in cells]

    def test_json_design_file(self, tmp_path):
        path = tiny_design_file(tmp_path)
        out = str(tmp_path / "out")
        rc = main(["simulate", "--design", path, "--output-dir", out,
                   "--format", "json"])
        assert rc == 0
        payload = json.loads((tmp_path / "out" / "simulate.json").read_text())
        assert payload["design"]["name"] == "design.json"
        assert payload["design"]["m"] == 8
        assert payload["replicates_kept"] == 4

    def test_single_replicate_reports_null_errors(self, tmp_path):
        path = tiny_design_file(tmp_path, n_mc=1)
        out = str(tmp_path / "out")
        assert main(["simulate", "--design", path, "--output-dir", out]) == 0
        payload = json.loads((tmp_path / "out" / "simulate.json").read_text())
        assert all(row["mc_standard_error"] is None for row in payload["metrics"])
        csv_lines = (tmp_path / "out" / "simulate.csv").read_text().splitlines()
        assert csv_lines[1].endswith(",nan")

    def test_unknown_design_name(self, capsys):
        rc = main(["simulate", "--design", "nope", "--output-dir", "/tmp"])
        assert rc == 2
        err = json.loads(capsys.readouterr().err)
        assert err["error"]["type"] == "SchemaError"
        assert "built-ins" in err["error"]["message"]

    def test_design_schema_version_checked(self, tmp_path, capsys):
        path = tiny_design_file(tmp_path, schema_version=99)
        assert main(["simulate", "--design", path, "--output-dir", "/tmp"]) == 2
        assert "schema_version" in json.loads(capsys.readouterr().err)["error"]["message"]

    def test_design_missing_fields(self, tmp_path):
        spec = {"schema_version": 1, "X": [[1.0]] * 5, "d": [1.0] * 5}
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(spec))
        with pytest.raises(SchemaError, match="missing design fields"):
            load_design(str(path))

    def test_design_invalid_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(ParseError, match="invalid JSON"):
            load_design(str(path))

    def test_design_must_be_object(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("[1, 2]")
        with pytest.raises(SchemaError, match="JSON object"):
            load_design(str(path))

    def test_design_field_errors_become_schema_errors(self, tmp_path):
        path = tiny_design_file(tmp_path, a_true=-2.0)
        with pytest.raises(SchemaError):
            load_design(path)


class TestValidateCommand:
    def test_reports_shape_and_fingerprint(self, tmp_path, capsys):
        path = write_lines(tmp_path / "a.csv", GOOD_LINES)
        assert main(["validate", "--input", path]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["ok"] is True
        assert (payload["m"], payload["p"]) == (5, 1)
        assert payload["balanced"] is False
        assert len(payload["fingerprint"]) == 16

    def test_balanced_flag(self, tmp_path, capsys):
        lines = ["area_id,y,d,x1"] + [f"r{i},{i}.5,2.0,1.0" for i in range(6)]
        path = write_lines(tmp_path / "b.csv", lines)
        assert main(["validate", "--input", path]) == 0
        assert json.loads(capsys.readouterr().out)["balanced"] is True

    def test_bad_file_exits_2(self, tmp_path, capsys):
        path = write_lines(tmp_path / "a.csv", ["id,nope", "1,2"])
        assert main(["validate", "--input", path]) == 2
        assert json.loads(capsys.readouterr().err)["error"]["type"] == "SchemaError"


class TestThreadEnvInvariance:
    def test_simulate_output_independent_of_thread_count(self, tmp_path):
        outs = []
        for threads, sub in (("1", "t1"), ("3", "t3")):
            out = tmp_path / sub
            env = dict(os.environ, SAE_FH_THREADS=threads)
            cmd = [
                sys.executable, "-m", "fhsae.cli", "simulate",
                "--design", "balanced-m50", "--n-mc", "6", "--boot-reps", "16",
                "--output-dir", str(out), "--format", "json",
            ]
            proc = subprocess.run(cmd, env=env, capture_output=True, text=True)
            assert proc.returncode == 0, proc.stderr
            outs.append((out / "simulate.json").read_bytes())
        assert outs[0] == outs[1]
