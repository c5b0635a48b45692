"""Tests for the command-line interface."""

import json
from unittest.mock import patch

import pytest
from typer.testing import CliRunner

from gripmat.cli import app
from gripmat.core import ModelKind, ViscoelasticFit
from gripmat.util import dump_json

runner = CliRunner()


@pytest.fixture(autouse=True)
def no_user_config(tmp_path):
    """Keep a developer's own settings file out of the runs."""
    with patch("gripmat.config.get_default_config_path", return_value=tmp_path / "absent.json"):
        yield


def invoke(out_dir, *args):
    return runner.invoke(app, ["--out-dir", str(out_dir), *args])


def synth(out_dir, name, *extra):
    result = invoke(out_dir, "synth", "--name", name, *extra)
    assert result.exit_code == 0, result.output
    return out_dir / f"{name}.manifest.json"


def fits_document(path, fits):
    path.write_text(dump_json({"model": "hunt_crossley", "fits": [f.to_dict() for f in fits]}))
    return path


def hc_fit(label, K, eta, cycle_index=1):
    return ViscoelasticFit(
        ModelKind.HUNT_CROSSLEY,
        K,
        eta,
        1.0,
        0.99,
        0.1,
        identifiable=True,
        label=label,
        cycle_index=cycle_index,
    )


class TestSynth:
    """Test synthetic cycle generation."""

    def test_writes_manifest_set(self, tmp_path):
        """Test that the manifest, CSV and sample spec are written."""
        manifest_path = synth(tmp_path, "foam", "--K", "40000")
        manifest = json.loads(manifest_path.read_text())
        assert manifest["csv"] == "foam.csv"
        assert manifest["contact"] == {"floor_n": 0.0}
        assert (tmp_path / "foam.csv").read_text().startswith("t_s,position_mm,effort\n")
        assert json.loads((tmp_path / "foam.sample.json").read_text())["label"] == "foam"

    def test_same_seed_same_bytes(self, tmp_path):
        """Test that a seed reproduces the trace exactly."""
        args = ("synth", "--name", "s", "--K", "2e4", "--noise", "0.01")
        invoke(tmp_path / "a", "--seed", "7", *args)
        invoke(tmp_path / "b", "--seed", "7", *args)
        invoke(tmp_path / "c", "--seed", "8", *args)
        first = (tmp_path / "a" / "s.csv").read_bytes()
        assert first == (tmp_path / "b" / "s.csv").read_bytes()
        assert first != (tmp_path / "c" / "s.csv").read_bytes()

    def test_strain_max_out_of_range(self, tmp_path):
        """Test that a peak strain of 1 or more is a usage error."""
        result = invoke(tmp_path, "synth", "--K", "1e4", "--strain-max", "1.2")
        assert result.exit_code == 2
        assert not (tmp_path / "synthetic.manifest.json").exists()

    def test_unknown_model(self, tmp_path):
        """Test that only kv and hc can be generated."""
        assert invoke(tmp_path, "synth", "--K", "1e4", "--model", "maxwell").exit_code == 2


class TestConvert:
    """Test raw cycle conversion."""

    def test_convert_one(self, tmp_path):
        """Test a synthetic manifest converts to a curve."""
        manifest_path = synth(tmp_path, "foam", "--K", "40000", "--samples", "300")
        result = invoke(tmp_path, "convert", str(manifest_path))
        assert result.exit_code == 0, result.output
        assert (tmp_path / "foam.curve.csv").exists()
        assert (tmp_path / "convert.log").exists()
        summary = json.loads((tmp_path / "convert.json").read_text())
        assert summary["failures"] == []

    def test_one_corrupt_of_three(self, tmp_path):
        """Test that a bad manifest fails alone with exit code 1."""
        good = [synth(tmp_path, name, "--K", "40000", "--samples", "300") for name in ("a", "b")]
        bad = tmp_path / "bad.manifest.json"
        bad.write_text("{\n")
        result = invoke(tmp_path, "convert", str(good[0]), str(bad), str(good[1]))
        assert result.exit_code == 1
        summary = json.loads((tmp_path / "convert.json").read_text())
        assert len(summary["converted"]) == 2
        assert [f["item"] for f in summary["failures"]] == [str(bad)]
        assert summary["failures"][0]["error_type"] == "ManifestError"

    def test_parallel_matches_serial(self, tmp_path):
        """Test that worker count does not change the output."""
        paths = [str(synth(tmp_path, name, "--K", "40000", "--samples", "300")) for name in ("a", "b")]
        invoke(tmp_path / "serial", "convert", *paths)
        invoke(tmp_path / "parallel", "-j", "2", "convert", *paths)
        for name in ("a", "b"):
            serial = (tmp_path / "serial" / f"{name}.curve.csv").read_bytes()
            assert serial == (tmp_path / "parallel" / f"{name}.curve.csv").read_bytes()

    def test_saturating_gripper_keeps_stiffness(self, tmp_path):
        """Test that forces past the 2F-85 range survive synth, convert and fit."""
        synth(tmp_path, "tin", "--K", "2e5", "--device", "robotiq_2f85")
        result = invoke(tmp_path, "convert", str(tmp_path / "tin.manifest.json"))
        assert result.exit_code == 0, result.output
        summary = json.loads((tmp_path / "convert.json").read_text())
        assert summary["converted"][0]["extrapolated"] > 0
        sidecar = json.loads((tmp_path / "tin.curve.json").read_text())
        assert sidecar["extrapolated"] == summary["converted"][0]["extrapolated"]

        result = invoke(tmp_path, "fit", "--model", "kv", str(tmp_path / "tin.curve.csv"))
        assert result.exit_code == 0, result.output
        fits = json.loads((tmp_path / "fits.json").read_text())
        assert fits["fits"][0]["K_pa"] == pytest.approx(2e5, rel=0.02)

    def test_duplicate_output_names(self, tmp_path):
        """Test that two manifests with one stem are refused."""
        result = invoke(
            tmp_path,
            "convert",
            str(tmp_path / "x" / "cube.manifest.json"),
            str(tmp_path / "y" / "cube.manifest.json"),
        )
        assert result.exit_code == 2


class TestEstimateAndFit:
    """Test estimation, fitting and classification end to end."""

    def test_estimate_records_skips(self, tmp_path):
        """Test that strain points past the peak are skipped, not failed."""
        synth(tmp_path, "foam", "--K", "40000", "--strain-max", "0.5", "--samples", "500")
        invoke(tmp_path, "convert", str(tmp_path / "foam.manifest.json"))
        result = invoke(tmp_path, "estimate", str(tmp_path / "foam.curve.csv"))
        assert result.exit_code == 0, result.output
        data = json.loads((tmp_path / "estimates.json").read_text())
        assert {"linear", "cv40"} <= {e["method"] for e in data["estimates"]}
        assert 0.7 in [s["strain_point"] for s in data["skipped"]]
        assert data["failures"] == []

    def test_unknown_method(self, tmp_path):
        """Test an unknown estimation method."""
        result = invoke(tmp_path, "estimate", "-m", "secant", str(tmp_path / "x.curve.csv"))
        assert result.exit_code == 2

    def test_synth_fit_classify(self, tmp_path):
        """Test a Hunt-Crossley cycle from generation to material class."""
        synth(tmp_path, "bottle", "--model", "hc", "--K", "2e4", "--n", "1.5", "--eta", "5000")
        assert invoke(tmp_path, "convert", str(tmp_path / "bottle.manifest.json")).exit_code == 0
        result = invoke(tmp_path, "fit", "--model", "hc", str(tmp_path / "bottle.curve.csv"))
        assert result.exit_code == 0, result.output
        fits = json.loads((tmp_path / "fits.json").read_text())
        assert fits["summary"]["identifiable"] == 1
        assert fits["fits"][0]["K_pa"] == pytest.approx(2e4, rel=0.02)

        result = invoke(tmp_path, "classify", str(tmp_path / "fits.json"))
        assert result.exit_code == 0, result.output
        decisions = json.loads((tmp_path / "decisions.json").read_text())
        assert decisions["decisions"][0]["material"] == "PET and Plastic"
        assert decisions["counts"]["PET and Plastic"] == 1

    def test_missing_curve_fails_item(self, tmp_path):
        """Test that an unreadable curve is an item failure."""
        result = invoke(tmp_path, "fit", str(tmp_path / "none.curve.csv"))
        assert result.exit_code == 1
        fits = json.loads((tmp_path / "fits.json").read_text())
        assert fits["summary"]["failed"] == 1

    def test_unknown_model(self, tmp_path):
        """Test an unknown model name."""
        assert invoke(tmp_path, "fit", "--model", "maxwell", "x.csv").exit_code == 2


class TestClassify:
    """Test the classify command."""

    def test_missing_config_is_usage_error(self, tmp_path):
        """Test that an unloadable class config stops the run."""
        fits = fits_document(tmp_path / "fits.json", [hc_fit("a", 1e4, 1.0)])
        result = invoke(tmp_path, "classify", str(fits), "--classes", str(tmp_path / "none.json"))
        assert result.exit_code == 2

    def test_refusal_is_partial_failure(self, tmp_path):
        """Test that refused fits are reported with exit code 1."""
        classes = tmp_path / "classes.json"
        classes.write_text(
            json.dumps(
                [
                    {"label": "plastic", "k_min_pa": 0, "k_max_pa": 3e4, "eta_max_pa_s": 5000},
                    {"label": "other", "k_min_pa": 3e4, "k_max_pa": None, "fallback": True},
                ],
            ),
        )
        unidentifiable = ViscoelasticFit(
            ModelKind.HUNT_CROSSLEY, 1e4, 1.0, 1.0, 0.9, 0.0, identifiable=False, label="b"
        )
        fits = fits_document(tmp_path / "fits.json", [hc_fit("a", 1e4, 1.0), unidentifiable])
        result = invoke(tmp_path, "classify", str(fits), "--classes", str(classes))
        assert result.exit_code == 1
        decisions = json.loads((tmp_path / "decisions.json").read_text())
        assert [d["label"] for d in decisions["decisions"]] == ["a"]
        assert decisions["refusals"][0]["error_type"] == "IdentifiabilityError"


class TestReportAndCompare:
    """Test aggregation and device comparison."""

    def test_report_groups_and_ttest(self, tmp_path):
        """Test grouping by cycle and a Welch t-test between cycles."""
        fits = fits_document(
            tmp_path / "fits.json",
            [
                hc_fit("a", 1.0e4, 10.0, cycle_index=1),
                hc_fit("b", 1.1e4, 12.0, cycle_index=1),
                hc_fit("a", 2.0e4, 10.0, cycle_index=5),
                hc_fit("b", 2.1e4, 11.0, cycle_index=5),
            ],
        )
        result = invoke(tmp_path, "report", str(fits), "--ttest", "cycle_index=1,5")
        assert result.exit_code == 0, result.output
        data = json.loads((tmp_path / "aggregate.json").read_text())
        k_means = [e["mean"] for e in data["sections"]["hunt_crossley"] if e["quantity"] == "K_pa"]
        assert k_means == pytest.approx([1.05e4, 2.05e4])
        ttest = data["ttests"][0]
        assert ttest["n"] == [2, 2]
        assert ttest["p"] < 0.05
        scatter = (tmp_path / "scatter.csv").read_text().splitlines()
        assert scatter[0] == "label,model,K_pa,eta_pa_s,n,cycle_index,speed_mm_s"
        assert len(scatter) == 5

    def test_report_rejects_unknown_document(self, tmp_path):
        """Test that an unrelated JSON document is refused."""
        path = tmp_path / "other.json"
        path.write_text("[]")
        assert invoke(tmp_path, "report", str(path)).exit_code == 2

    def test_compare(self, tmp_path):
        """Test agreement between two proportional devices."""
        samples = (("a", 1e4, 100.0), ("b", 2e4, 300.0), ("c", 4e4, 200.0))
        first = fits_document(tmp_path / "a.json", [hc_fit(s, k, e) for s, k, e in samples])
        second = fits_document(tmp_path / "b.json", [hc_fit(s, 2 * k, 3 * e) for s, k, e in samples])
        result = invoke(tmp_path, "compare", str(first), str(second))
        assert result.exit_code == 0, result.output
        data = json.loads((tmp_path / "comparison.json").read_text())
        assert data["r2_K"] == pytest.approx(1.0)

    def test_profiles(self, tmp_path):
        """Test the profile listing."""
        result = invoke(tmp_path, "profiles")
        assert result.exit_code == 0
        assert "robotiq_2f85" in result.output
