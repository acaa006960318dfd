"""
Integration tests for the strata-eit command line.

Runs cli.main.main in-process on small experiment configs and checks exit
statuses, reports, manifests and determinism.
"""

import json

import pytest

from cli.main import main
from models.reports import (
    AlessandriniReport,
    GaugeReport,
    InversionReport,
    Manifest,
    NDMapReport,
    TangentReport,
)
from services.artifacts import sha256_of
from tests.utils.builders import region_payload, validate_report_file, write_config

UNIT_MODEL = {"tensors": [[2.0, 0.3, 0.0, 1.5, 0.0, 1.0], [1.0, 0.0, 0.0, 1.0, 0.0, 1.0]]}


def run_cli(command, config, out, *extra):
    return main([command, "--config", str(config), "--out", str(out), *extra])


class TestExitStatuses:
    def test_invalid_json_is_config_error(self, tmp_path):
        config = tmp_path / "broken.json"
        config.write_text("{not json")
        assert run_cli("forward", config, tmp_path / "out") == 2

    def test_schema_violation_is_config_error(self, tmp_path):
        config = write_config(tmp_path, "forward.json", {"command": "forward", "region": region_payload()})
        assert run_cli("forward", config, tmp_path / "out") == 2

    def test_command_mismatch_is_config_error(self, tmp_path, experiment):
        assert run_cli("tangent", experiment("gauge_identity.json"), tmp_path / "out") == 2

    def test_randomized_without_seed_is_config_error(self, tmp_path):
        config = write_config(
            tmp_path,
            "alessandrini.json",
            {
                "command": "alessandrini",
                "region": region_payload(),
                "model": UNIT_MODEL,
                "mesh": {"h": 0.25},
                "trials": 2,
            },
        )
        assert run_cli("alessandrini", config, tmp_path / "out") == 2

    def test_missing_data_csv_is_config_error(self, tmp_path):
        config = write_config(
            tmp_path,
            "invert.json",
            {
                "command": "invert",
                "region": region_payload(),
                "mesh": {"h": 0.25},
                "inversion": {},
                "data_csv": "absent.csv",
            },
        )
        assert run_cli("invert", config, tmp_path / "out") == 2

    def test_crossing_interfaces_are_validation_error(self, tmp_path):
        interfaces = [{"offset": 0.5, "modes": [[1, 0, 0.2]]}, {"offset": 0.55}]
        config = write_config(
            tmp_path,
            "forward.json",
            {
                "command": "forward",
                "region": region_payload(interfaces),
                "model": {"tensors": UNIT_MODEL["tensors"] + [[1.0, 0.0, 0.0, 1.0, 0.0, 1.0]]},
                "mesh": {"h": 0.25},
            },
        )
        assert run_cli("forward", config, tmp_path / "out") == 3

    def test_bad_seed_rejected_by_parser(self, tmp_path, experiment):
        with pytest.raises(SystemExit) as exc:
            run_cli("tangent", experiment("tangent.json"), tmp_path / "out", "--seed", "-1")
        assert exc.value.code == 2


class TestExperiments:
    def test_gauge_identity(self, tmp_path, experiment):
        out = tmp_path / "gauge"
        assert run_cli("gauge", experiment("gauge_identity.json"), out) == 0

        report = validate_report_file(out / "gauge.json", GaugeReport)
        assert report["diffeo"] == "identity"
        assert all(row["gap"] <= 1e-10 for row in report["rows"])
        assert report["flat_converges"] and report["passed"]
        assert report["contrast_stabilizes"] is None

        manifest = Manifest(**json.loads((out / "manifest.json").read_text()))
        assert manifest.command == "gauge"
        assert [e.path for e in manifest.artifacts] == ["gauge.json"]
        assert manifest.artifacts[0].sha256 == sha256_of(out / "gauge.json")
        assert not (out / "metrics.prom").exists()

    def test_tangent_seed_from_command_line(self, tmp_path, experiment):
        out = tmp_path / "tangent"
        assert run_cli("tangent", experiment("tangent.json"), out, "--seed", "5") == 0

        report = validate_report_file(out / "tangent.json", TangentReport)
        assert report["seed"] == 5
        assert report["max_relative_error"] < 1e-8
        assert report["single_normal_rejected"] and report["two_normals_rejected"]
        assert json.loads((out / "manifest.json").read_text())["seed"] == 5

    def test_ndmap_reruns_are_byte_identical(self, tmp_path, experiment):
        first, second = tmp_path / "a", tmp_path / "b"
        assert run_cli("ndmap", experiment("ndmap_two_layer.json"), first) == 0
        assert run_cli("ndmap", experiment("ndmap_two_layer.json"), second) == 0

        for name in ("nd.csv", "ndmap.json", "manifest.json"):
            assert (first / name).read_bytes() == (second / name).read_bytes(), name

        report = validate_report_file(first / "ndmap.json", NDMapReport)
        assert report["symmetry_error"] <= 1e-10
        assert report["min_eigenvalue"] > 0
        assert report["local_global_gap"] <= 1e-10
        assert report["invisible_interface_gap"] <= 1e-10

    def test_metrics_export_when_enabled(self, tmp_path, experiment, monkeypatch):
        monkeypatch.setenv("STRATA_EXPORT_METRICS", "true")
        out = tmp_path / "metrics"
        assert run_cli("gauge", experiment("gauge_identity.json"), out) == 0

        assert b"strata_experiments_total" in (out / "metrics.prom").read_bytes()
        manifest = json.loads((out / "manifest.json").read_text())
        assert "metrics.prom" not in [e["path"] for e in manifest["artifacts"]]
        print("✅ Metrics exported outside the manifest")

    @pytest.mark.slow
    def test_alessandrini_reruns_are_byte_identical(self, tmp_path, experiment):
        first, second = tmp_path / "a", tmp_path / "b"
        assert run_cli("alessandrini", experiment("alessandrini.json"), first) == 0
        assert run_cli("alessandrini", experiment("alessandrini.json"), second) == 0

        for name in ("alessandrini.json", "manifest.json"):
            assert (first / name).read_bytes() == (second / name).read_bytes(), name

        report = validate_report_file(first / "alessandrini.json", AlessandriniReport)
        assert report["trials"] == 20
        assert report["seed"] == 7
        assert report["max_residual"] <= 1e-9
        assert report["passed"]

    @pytest.mark.slow
    def test_gauge_refinement_verdicts(self, tmp_path, experiment):
        out = tmp_path / "gauge"
        assert run_cli("gauge", experiment("gauge_refinement.json"), out) == 0

        report = validate_report_file(out / "gauge.json", GaugeReport)
        assert [row["h"] for row in report["rows"]] == [0.2, 0.1, 0.05]
        assert all(r <= 0.7 for r in report["ratios"])
        assert report["flat_converges"]
        assert min(row["gap"] for row in report["contrast_rows"]) >= report["contrast_floor"]
        assert report["contrast_stabilizes"]
        assert report["passed"]
        print(f"✅ Gauge ratios {report['ratios']}, contrast ratios {report['contrast_ratios']}")

    @pytest.mark.slow
    def test_invert_reruns_are_byte_identical(self, tmp_path, experiment):
        first, second = tmp_path / "a", tmp_path / "b"
        assert run_cli("invert", experiment("invert_k1.json"), first) == 0
        assert run_cli("invert", experiment("invert_k1.json"), second) == 0

        for name in ("inversion.json", "nd_measured.csv", "manifest.json"):
            assert (first / name).read_bytes() == (second / name).read_bytes(), name

        report = validate_report_file(first / "inversion.json", InversionReport)
        assert report["layer_count"] == 1
        assert report["truth"]["layer_count_matches"]
        assert max(report["truth"]["tensor_relative_errors"]) <= 1e-3
        assert max(report["truth"]["interface_coefficient_errors"]) <= 1e-2
        assert report["contrast_verdict"] is None
        manifest = json.loads((first / "manifest.json").read_text())
        assert {"inversion.json", "nd_measured.csv", "model.vtk"} <= {e["path"] for e in manifest["artifacts"]}

    @pytest.mark.slow
    def test_flat_gauge_contrast_is_non_identifiable(self, tmp_path, experiment):
        out = tmp_path / "flat"
        assert run_cli("invert", experiment("invert_flat_gauge.json"), out) == 0

        report = validate_report_file(out / "inversion.json", InversionReport)
        assert report["contrast_verdict"] == "NON-IDENTIFIABLE"
        assert report["contrast_data_gap"] > 0.0
        assert report["layer_count"] == 1
        print(f"✅ Flat sheared contrast flagged, data gap {report['contrast_data_gap']:.2e}")
