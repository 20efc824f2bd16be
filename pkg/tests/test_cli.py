import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from stardemand.cli import EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL, EXIT_OK, main
from stardemand.estimators import read_model_json
from stardemand.panel import read_panel_csv


def write_yaml(path: Path, cfg: dict) -> Path:
    with open(path, "w") as fh:
        yaml.safe_dump(cfg, fh)
    return path


@pytest.fixture
def synth_run(tmp_path):
    """A synth run dir with panel.csv, truth.json and a stack directory."""
    out = tmp_path / "synth"
    cfg = write_yaml(tmp_path / "synth.yaml", {
        "seed": 3,
        "output_dir": str(out),
        "synth": {"kind": "star", "k": 6, "length": 80, "sigma": 1.0,
                  "p": 1, "eta": 2, "eta_max": 2, "density": 0.5},
    })
    assert main(["synth", "-c", str(cfg)]) == EXIT_OK
    return out


class TestSynth:
    def test_outputs(self, synth_run):
        panel = read_panel_csv(synth_run / "panel.csv")
        assert panel.k == 6 and panel.T == 80
        truth = json.loads((synth_run / "truth.json").read_text())
        assert truth["kind"] == "star" and len(truth["coefficients"]) == 6
        manifest = json.loads((synth_run / "manifest.json").read_text())
        assert "panel.csv" in manifest["outputs"]
        assert (synth_run / "stack" / "manifest.json").exists()
        assert (synth_run / "config.yaml").exists()

    def test_seed_reproducible(self, tmp_path):
        cfg_dict = {
            "seed": 11, "output_dir": "",
            "synth": {"kind": "var", "k": 2, "length": 30, "sigma": 0.5,
                      "lag_matrices": [[[0.5, 0.0], [0.1, 0.4]]]},
        }
        texts = []
        for name in ("a", "b"):
            out = tmp_path / name
            cfg_dict["output_dir"] = str(out)
            cfg = write_yaml(tmp_path / f"{name}.yaml", cfg_dict)
            assert main(["synth", "-c", str(cfg)]) == EXIT_OK
            texts.append((out / "panel.csv").read_bytes())
        assert texts[0] == texts[1]


class TestWeights:
    def test_centroid_scheme(self, tmp_path):
        zones = tmp_path / "zones.csv"
        zones.write_text("zone_id,lon,lat\nA,0,0\nB,1,0\nC,3,0\n")
        out = tmp_path / "w"
        cfg = write_yaml(tmp_path / "w.yaml", {
            "output_dir": str(out),
            "weights": {"scheme": "centroid", "eta_max": 3,
                        "zones_csv": str(zones)},
        })
        assert main(["weights", "-c", str(cfg)]) == EXIT_OK
        checks = json.loads((out / "stack_checks.json").read_text())
        assert all(c["ok"] for c in checks)
        from stardemand.weights import read_stack
        stack = read_stack(out / "stack")
        assert stack.k == 3 and stack.eta_max == 3
        assert np.allclose(stack.matrices[0], np.eye(3))

    def test_unknown_scheme_is_config_error(self, tmp_path):
        zones = tmp_path / "zones.csv"
        zones.write_text("zone_id,lon,lat\nA,0,0\n")
        cfg = write_yaml(tmp_path / "w.yaml", {
            "output_dir": str(tmp_path / "w"),
            "weights": {"scheme": "voronoi", "eta_max": 1, "zones_csv": str(zones)},
        })
        assert main(["weights", "-c", str(cfg)]) == EXIT_CONFIG


class TestIngest:
    def _trips(self, tmp_path):
        trips = tmp_path / "trips.csv"
        trips.write_text(
            "Date/Time,Lat,Lon\n"
            "4/1/2014 0:05:00,0.1,0.1\n"
            "4/1/2014 0:20:00,0.1,0.9\n"
            "4/1/2014 0:21:00,0.2,0.8\n"
            "not-a-date,0,0\n"
        )
        zones = tmp_path / "zones.csv"
        zones.write_text("zone_id,lon,lat\nA,0,0\nB,1,0\n")
        return trips, zones

    def test_end_to_end(self, tmp_path):
        trips, zones = self._trips(tmp_path)
        out = tmp_path / "ingest"
        cfg = write_yaml(tmp_path / "i.yaml", {
            "output_dir": str(out),
            "ingest": {
                "trips": str(trips), "zones_csv": str(zones),
                "timestamp_format": "%m/%d/%Y %H:%M:%S",
                "bin_minutes": 15, "assign_policy": "nearest",
                "day_range": ["2014-04-01", "2014-04-02"],
            },
        })
        assert main(["ingest", "-c", str(cfg)]) == EXIT_OK
        panel = read_panel_csv(out / "panel.csv")
        assert panel.zone_ids == ("A", "B") and panel.T == 96
        # bin 0: one trip near A; bin 1: two trips nearer B
        assert panel.values[0, 0] == 1 and panel.values[1, 1] == 2
        report = json.loads((out / "ingest_report.json").read_text())
        assert report["assigned"] == 3 and report["dropped_parse"] == 1
        assert report["row_errors"][0]["line"] == 5

    def test_no_trips_is_data_error(self, tmp_path):
        trips = tmp_path / "trips.csv"
        trips.write_text("Date/Time,Lat,Lon\nbad,0,0\n")
        zones = tmp_path / "zones.csv"
        zones.write_text("zone_id,lon,lat\nA,0,0\n")
        cfg = write_yaml(tmp_path / "i.yaml", {
            "output_dir": str(tmp_path / "out"),
            "ingest": {"trips": str(trips), "zones_csv": str(zones)},
        })
        assert main(["ingest", "-c", str(cfg)]) == EXIT_DATA
        # the report is still written before the failure surfaces
        assert (tmp_path / "out" / "ingest_report.json").exists()


class TestFit:
    def test_lasso_star_outputs(self, tmp_path, synth_run):
        out = tmp_path / "fit"
        cfg = write_yaml(tmp_path / "f.yaml", {
            "output_dir": str(out),
            "panel": str(synth_run / "panel.csv"),
            "stacks": {"rings": str(synth_run / "stack")},
            "split": {"t1": 30, "t2": 60},
            "lasso": {"n_lambdas": 10},
            "fit": {"model": "lasso_star", "p": 1, "eta": 2, "stack": "rings"},
        })
        assert main(["fit", "-c", str(cfg)]) == EXIT_OK
        model = read_model_json(out / "model.json")
        assert model.coefficients.shape == (6, 2)
        curve = json.loads((out / "lambda_curve.json").read_text())
        assert curve["lambda"] >= 0 and len(curve["curve"]) >= 10

    def test_var_fit(self, tmp_path, synth_run):
        out = tmp_path / "fitvar"
        cfg = write_yaml(tmp_path / "fv.yaml", {
            "output_dir": str(out),
            "panel": str(synth_run / "panel.csv"),
            "split": {"t1": 30, "t2": 60},
            "fit": {"model": "var", "p": 2},
        })
        assert main(["fit", "-c", str(cfg)]) == EXIT_OK
        model = read_model_json(out / "model.json")
        assert model.p == 2 and len(model.lag_matrices) == 2

    def test_unknown_stack_name(self, tmp_path, synth_run):
        cfg = write_yaml(tmp_path / "f.yaml", {
            "output_dir": str(tmp_path / "fit"),
            "panel": str(synth_run / "panel.csv"),
            "stacks": {"rings": str(synth_run / "stack")},
            "fit": {"model": "star", "p": 1, "eta": 1, "stack": "nope"},
        })
        assert main(["fit", "-c", str(cfg)]) == EXIT_CONFIG


class TestGrid:
    def _config(self, tmp_path, synth_run, out, timings):
        return write_yaml(tmp_path / f"g_{out.name}.yaml", {
            "output_dir": str(out),
            "panel": str(synth_run / "panel.csv"),
            "stacks": {"rings": str(synth_run / "stack")},
            "split": {"t1": 30, "t2": 60},
            "timings": timings,
            "lasso": {"n_lambdas": 10},
            "grid": {"models": ["star", "lasso_star"], "p": [1, 2],
                     "eta": [1, 2], "include_var": True},
        })

    def test_outputs_and_row_count(self, tmp_path, synth_run):
        out = tmp_path / "grid"
        cfg = self._config(tmp_path, synth_run, out, timings=True)
        assert main(["grid", "-c", str(cfg)]) == EXIT_OK
        lines = (out / "reports.csv").read_text().splitlines()
        assert lines[0] == "model,p,eta,scheme,val_mspe,test_mspe,lambda,seconds,error"
        # 2 models x 2 eta x 2 p + 2 VAR rows
        assert len(lines) == 1 + 8 + 2
        assert (out / "table.txt").read_text().count("VAR") == 1

    def test_byte_identical_without_timings(self, tmp_path, synth_run):
        texts = []
        for name in ("g1", "g2"):
            out = tmp_path / name
            cfg = self._config(tmp_path, synth_run, out, timings=False)
            assert main(["grid", "-c", str(cfg), "--jobs", "2"]) == EXIT_OK
            texts.append((out / "reports.csv").read_bytes())
        assert texts[0] == texts[1]
        assert b"seconds" not in texts[0]

    def test_all_failed_is_numerical_error(self, tmp_path, synth_run):
        cfg = write_yaml(tmp_path / "g.yaml", {
            "output_dir": str(tmp_path / "grid"),
            "panel": str(synth_run / "panel.csv"),
            "stacks": {"rings": str(synth_run / "stack")},
            "split": {"t1": 30, "t2": 60},
            "grid": {"models": ["star"], "p": [1], "eta": [5],
                     "include_var": False},
        })
        # eta=5 exceeds the stack depth in every cell
        assert main(["grid", "-c", str(cfg)]) == EXIT_NUMERICAL


class TestExitCodes:
    def test_missing_config_file(self, tmp_path):
        assert main(["grid", "-c", str(tmp_path / "nope.yaml")]) == EXIT_CONFIG

    def test_invalid_yaml(self, tmp_path):
        cfg = tmp_path / "bad.yaml"
        cfg.write_text("a: [unclosed\n")
        assert main(["fit", "-c", str(cfg)]) == EXIT_CONFIG

    def test_missing_key(self, tmp_path):
        cfg = write_yaml(tmp_path / "c.yaml", {"output_dir": str(tmp_path)})
        assert main(["synth", "-c", str(cfg)]) == EXIT_CONFIG

    def test_bad_usage(self):
        assert main(["frobnicate"]) == EXIT_CONFIG

    def test_bad_panel_is_data_error(self, tmp_path):
        panel = tmp_path / "panel.csv"
        panel.write_text("zone_id,bin_0\nA,1\nA,2\n")
        cfg = write_yaml(tmp_path / "c.yaml", {
            "output_dir": str(tmp_path / "out"),
            "panel": str(panel), "stacks": {},
            "split": {"t1": 1, "t2": 2},
            "fit": {"model": "var", "p": 1},
        })
        assert main(["fit", "-c", str(cfg)]) == EXIT_DATA


def test_config_echo_reruns_identically(tmp_path):
    """The echoed config in a run dir drives an identical re-run."""
    out1 = tmp_path / "r1"
    cfg = write_yaml(tmp_path / "s.yaml", {
        "seed": 5, "output_dir": str(out1),
        "synth": {"kind": "star", "k": 4, "length": 40, "sigma": 1.0,
                  "p": 1, "eta": 1},
    })
    assert main(["synth", "-c", str(cfg)]) == EXIT_OK
    echoed = yaml.safe_load((out1 / "config.yaml").read_text())
    out2 = tmp_path / "r2"
    echoed["output_dir"] = str(out2)
    cfg2 = write_yaml(tmp_path / "s2.yaml", echoed)
    assert main(["synth", "-c", str(cfg2)]) == EXIT_OK
    assert (out1 / "panel.csv").read_bytes() == (out2 / "panel.csv").read_bytes()
