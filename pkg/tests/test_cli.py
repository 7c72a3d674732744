import json
import subprocess
import sys

import numpy as np
import pytest

import diffeometer as dm
from diffeometer.rng import derive_stream


def run_cli(*args, cwd=None):
    return subprocess.run(
        [sys.executable, "-m", "diffeometer.cli", *map(str, args)],
        capture_output=True, text=True, cwd=cwd,
    )


def tree_hashes(root):
    from diffeometer._fsio import sha256_file

    return {
        p.name: sha256_file(p)
        for p in sorted(root.rglob("*"))
        if p.is_file() and p.name != "run_manifest.json"   # manifest holds wall time
    }


class TestSample:
    def test_zero_temperature_artifacts(self, tmp_path):
        out = tmp_path / "run"
        r = run_cli("sample", "--n", 32, "--T", 0, "--c", 3, "--count", 1,
                    "--seed", 4, "--out-dir", out)
        assert r.returncode == 0, r.stderr
        grid = np.load(out / "displacement_0000.npy")
        assert np.all(grid == 0.0)
        validity = json.loads((out / "validity_0000.json").read_text())
        assert validity["is_bijective"] and validity["delta"] == 0.0
        manifest = json.loads((out / "run_manifest.json").read_text())
        assert manifest["command"] == "sample" and manifest["outputs"]

    def test_delta_routing_records_inverse_temperature(self, tmp_path):
        out = tmp_path / "run"
        r = run_cli("sample", "--n", 32, "--delta", 1, "--c", 3, "--out-dir", out)
        assert r.returncode == 0, r.stderr
        manifest = json.loads((out / "run_manifest.json").read_text())
        assert manifest["params"]["T"] == pytest.approx(dm.temperature_for_delta(32, 3, 1.0), rel=1e-12)
        header = json.loads((out / "field_0000.json").read_text())
        assert header["spec"]["T"] == manifest["params"]["T"]

    def test_same_line_twice_identical_hashes(self, tmp_path):
        args = ("sample", "--n", 16, "--T", 1e-3, "--c", 3, "--count", 2, "--seed", 9)
        a, b = tmp_path / "a", tmp_path / "b"
        assert run_cli(*args, "--out-dir", a).returncode == 0
        assert run_cli(*args, "--out-dir", b).returncode == 0
        assert tree_hashes(a) == tree_hashes(b)

    def test_t_and_delta_together_is_usage_error(self, tmp_path):
        r = run_cli("sample", "--n", 32, "--T", 1e-3, "--delta", 1, "--c", 3,
                    "--out-dir", tmp_path / "x")
        assert r.returncode == 2

    def test_invalid_cutoff_exit_2(self, tmp_path):
        r = run_cli("sample", "--n", 16, "--T", 1e-3, "--c", 17, "--out-dir", tmp_path / "x")
        assert r.returncode == 2


class TestRender:
    @pytest.fixture
    def image_path(self, tmp_path):
        img = derive_stream(60).random((1, 24, 24))
        np.save(tmp_path / "img.npy", img)
        return tmp_path / "img.npy"

    def test_identity_field_bilinear_pixel_identical(self, tmp_path, image_path):
        fdir, out = tmp_path / "fields", tmp_path / "render"
        assert run_cli("sample", "--n", 24, "--T", 0, "--c", 3, "--out-dir", fdir).returncode == 0
        r = run_cli("render", "--image", image_path, "--field", fdir / "field_0000.json",
                    "--out-dir", out)
        assert r.returncode == 0, r.stderr
        warped = np.load(out / "img__field_0000.npy")
        assert np.array_equal(warped, np.load(image_path))

    def test_gaussian_writes_baseline(self, tmp_path, image_path):
        fdir, out = tmp_path / "fields", tmp_path / "render"
        run_cli("sample", "--n", 24, "--delta", 1, "--c", 3, "--out-dir", fdir)
        r = run_cli("render", "--image", image_path, "--field", fdir / "field_0000.json",
                    "--interp", "gaussian", "--out-dir", out)
        assert r.returncode == 0, r.stderr
        baseline = np.load(out / "img__baseline.npy")
        expected = dm.gaussian_smooth(dm.Image(data=np.load(image_path)))
        assert np.array_equal(baseline, expected.data)

    def test_montage_flags_cells_above_bound(self, tmp_path, image_path):
        out = tmp_path / "render"
        t_hi = dm.validity_bounds(24, 3)[1]
        r = run_cli("render", "--image", image_path,
                    "--grid-T", f"{t_hi / 4},{t_hi * 4}", "--grid-c", "3",
                    "--no-png", "--out-dir", out)
        assert r.returncode == 0, r.stderr
        cells = json.loads((out / "montage_cells.json").read_text())
        assert [c["exceeds_bijectivity_bound"] for c in cells] == [False, True]

    def test_size_mismatch_exit_3(self, tmp_path, image_path):
        fdir = tmp_path / "fields"
        run_cli("sample", "--n", 16, "--T", 1e-3, "--c", 3, "--out-dir", fdir)
        r = run_cli("render", "--image", image_path, "--field", fdir / "field_0000.json",
                    "--out-dir", tmp_path / "o")
        assert r.returncode == 3


class TestPhaseDiagram:
    def test_zero_temperature_row(self, tmp_path):
        out = tmp_path / "pd"
        r = run_cli("phase-diagram", "--n", 16, "--T-grid", "0,0.001", "--c-grid", "3",
                    "--samples", 20, "--out-dir", out)
        assert r.returncode == 0, r.stderr
        rows = json.loads((out / "phase.json").read_text())
        zero = rows[0]
        assert zero["p_bijective"] == 1.0 and zero["delta_exact"] == 0.0
        spec = dm.DiffeoSpec(n=16, T=0.001, c=3)
        assert rows[1]["delta_exact"] == dm.expected_delta(spec)

    def test_csv_and_json_agree(self, tmp_path):
        import csv

        out = tmp_path / "pd"
        run_cli("phase-diagram", "--n", 16, "--T-grid", "1e-3:1e-2:3", "--c-grid", "3,4",
                "--samples", 10, "--out-dir", out)
        rows_json = json.loads((out / "phase.json").read_text())
        with open(out / "phase.csv") as fh:
            rows_csv = list(csv.DictReader(fh))
        assert len(rows_json) == len(rows_csv) == 6
        for rj, rc in zip(rows_json, rows_csv):
            assert float(rc["T"]) == pytest.approx(rj["T"], rel=1e-15)
            assert float(rc["p_bijective"]) == rj["p_bijective"]


class TestProbeCommands:
    def test_emit_model_collect_round_trip(self, tmp_path):
        images = derive_stream(70).standard_normal((5, 1, 16, 16))
        np.save(tmp_path / "imgs.npy", images)
        pdir = tmp_path / "probe"
        r = run_cli("probe", "emit", "--images", tmp_path / "imgs.npy", "--c", 3,
                    "--n-transforms", 2, "--seed", 8, "--out-dir", pdir)
        assert r.returncode == 0, r.stderr
        f = dm.LinearPredictor(16 * 16, 6, seed=71)
        dm.run_predictor_on_probe(pdir, f)
        r = run_cli("probe", "collect", "--dir", pdir)
        assert r.returncode == 0, r.stderr
        report = json.loads((pdir / "report.json").read_text())
        probe = dm.ProbeConfig(n=16, c=3, n_images=5, n_transforms_per_image=2, seed=8)
        expected = dm.compute_stability(f, probe, images)
        assert report["r_f"] == pytest.approx(expected.r_f, rel=1e-12)

    def test_collect_missing_outputs_exit_3(self, tmp_path):
        images = derive_stream(72).standard_normal((4, 1, 16, 16))
        np.save(tmp_path / "imgs.npy", images)
        pdir = tmp_path / "probe"
        run_cli("probe", "emit", "--images", tmp_path / "imgs.npy", "--c", 3, "--out-dir", pdir)
        r = run_cli("probe", "collect", "--dir", pdir)
        assert r.returncode == 3
        assert "f_x.npy" in r.stderr

    def test_collect_tampered_manifest_exit_3(self, tmp_path):
        images = derive_stream(73).standard_normal((4, 1, 16, 16))
        np.save(tmp_path / "imgs.npy", images)
        pdir = tmp_path / "probe"
        run_cli("probe", "emit", "--images", tmp_path / "imgs.npy", "--c", 3, "--out-dir", pdir)
        dm.run_predictor_on_probe(pdir, dm.IdentityPredictor(16 * 16))
        manifest = json.loads((pdir / "probe_manifest.json").read_text())
        manifest["config"]["seed"] = 999
        (pdir / "probe_manifest.json").write_text(json.dumps(manifest))
        r = run_cli("probe", "collect", "--dir", pdir)
        assert r.returncode == 3 and "integrity" in r.stderr

    def test_degenerate_predictor_exit_4(self, tmp_path):
        images = derive_stream(74).standard_normal((4, 1, 16, 16))
        np.save(tmp_path / "imgs.npy", images)
        pdir = tmp_path / "probe"
        run_cli("probe", "emit", "--images", tmp_path / "imgs.npy", "--c", 3,
                "--n-transforms", 2, "--out-dir", pdir)
        dm.write_probe_outputs(pdir, np.ones((4, 2)), np.ones((8, 2)), np.ones((8, 2)))
        r = run_cli("probe", "collect", "--dir", pdir)
        assert r.returncode == 4


class TestStripeCommand:
    def test_single_p_no_slope(self, tmp_path):
        out = tmp_path / "stripe"
        r = run_cli("stripe-experiment", "--d", 8, "--P", "64", "--seeds", 2,
                    "--width", 16, "--max-steps", 2000, "--out-dir", out)
        assert r.returncode == 0, r.stderr
        summary = json.loads((out / "summary.json").read_text())
        assert summary["slope"] is None
        csv_text = (out / "stripe.csv").read_text()
        assert csv_text.splitlines()[0] == "P,seed,R_f,alignment,test_error"
        assert len(csv_text.strip().splitlines()) == 3

    def test_rerun_identical_csv(self, tmp_path):
        args = ("stripe-experiment", "--d", 8, "--P", "32,64", "--seeds", 2,
                "--width", 16, "--max-steps", 2000)
        a, b = tmp_path / "a", tmp_path / "b"
        assert run_cli(*args, "--out-dir", a).returncode == 0
        assert run_cli(*args, "--out-dir", b).returncode == 0
        assert (a / "stripe.csv").read_text() == (b / "stripe.csv").read_text()


class TestConfigFile:
    def test_config_supplies_defaults_flags_override(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"n": 16, "T": 0.001, "c": 3, "count": 2}))
        out = tmp_path / "run"
        r = run_cli("sample", "--config", cfg, "--count", 1, "--out-dir", out)
        assert r.returncode == 0, r.stderr
        manifest = json.loads((out / "run_manifest.json").read_text())
        assert manifest["params"]["n"] == 16          # from config
        assert manifest["params"]["count"] == 1       # flag wins

    def test_version_flag(self):
        r = run_cli("--version")
        assert r.returncode == 0 and dm.__version__ in r.stdout
