import numpy as np
import pytest

import diffeometer as dm
from diffeometer import DegeneratePredictorError, ParameterError
from diffeometer.rng import derive_stream
from diffeometer.stability import assemble_probe


def white_noise_images(count, n=16, channels=1, seed=0):
    return derive_stream(seed).standard_normal((count, channels, n, n))


def small_probe(**kw):
    defaults = dict(n=16, c=3, delta=1.0, n_transforms_per_image=3, aggregation="mean", seed=1)
    defaults.update(kw)
    return dm.ProbeConfig(**defaults)


class ConstantPredictor(dm.Predictor):
    output_dim = 4
    name = "constant"

    def __call__(self, batch):
        return np.ones((batch.shape[0], 4))


class TestSphereNoise:
    def test_zero_radius(self):
        assert np.all(dm.sample_sphere_noise(10, 0.0, derive_stream(0)) == 0.0)

    def test_exact_norm(self):
        v = dm.sample_sphere_noise(1000, 3.0, derive_stream(1))
        assert np.linalg.norm(v) == pytest.approx(3.0, rel=1e-12)

    def test_isotropy(self):
        draws = np.array([dm.sample_sphere_noise(8, 1.0, derive_stream(2, k)) for k in range(10_000)])
        # each coordinate has mean 0 and variance 1/dim
        se = np.sqrt(1.0 / 8 / draws.shape[0])
        assert np.abs(draws.mean(axis=0)).max() < 4 * se

    def test_rejects_bad_args(self):
        with pytest.raises(ParameterError):
            dm.sample_sphere_noise(0, 1.0, derive_stream(0))
        with pytest.raises(ParameterError):
            dm.sample_sphere_noise(5, -1.0, derive_stream(0))


class TestNoiseCalibration:
    def test_zero_temperature_fields(self):
        spec = dm.DiffeoSpec(n=16, T=0.0, c=3, seed=0)
        fields = dm.sample_fields(spec, 2)
        assert dm.calibrate_noise_norm(white_noise_images(3), fields) == 0.0

    def test_constant_image_is_warp_invariant(self):
        spec = dm.DiffeoSpec(n=16, T=1e-3, c=3, seed=3)
        fields = dm.sample_fields(spec, 3)
        const = np.full((2, 1, 16, 16), 0.7)
        assert dm.calibrate_noise_norm(const, fields, dm.BILINEAR) == pytest.approx(0.0, abs=1e-12)

    def test_matches_brute_force_recomputation(self):
        # independent pass: warp each (image, field) pair explicitly and
        # average the norms by hand
        images = white_noise_images(4, seed=4)
        spec = dm.DiffeoSpec(n=16, T=1e-3, c=3, seed=5)
        fields = dm.sample_fields(spec, 3)
        value = dm.calibrate_noise_norm(images, fields, dm.BILINEAR)
        acc = []
        for img in images:
            for f in fields:
                grid = dm.evaluate_displacement(f)
                warped = dm.apply_diffeo(dm.Image(data=img), grid, dm.BILINEAR)
                acc.append(np.sqrt(np.sum((warped.data - img) ** 2)))
        assert value == pytest.approx(np.mean(acc), rel=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(ParameterError):
            dm.calibrate_noise_norm(white_noise_images(0), [])


class TestComputeStability:
    def test_identity_predictor_mean_aggregation(self):
        # for f = x the noise numerator is exactly ||eta||^2 and
        # R_f = mean v^2 / (mean v)^2 >= 1 (Jensen)
        images = white_noise_images(6, seed=6)
        probe = small_probe(aggregation="mean", seed=7)
        f = dm.IdentityPredictor(input_dim=16 * 16)
        rep = dm.compute_stability(f, probe, images)
        assert rep.num_noise == pytest.approx(rep.noise_norm**2, rel=1e-12)
        assert rep.r_f >= 1.0 - 1e-12
        arrays = assemble_probe(probe, images)
        t = probe.n_transforms_per_image
        v2 = [
            np.sum((arrays.tau_x[i * t + j] - arrays.x[i]) ** 2)
            for i in range(6) for j in range(t)
        ]
        assert rep.r_f == pytest.approx(np.mean(v2) / np.mean(np.sqrt(v2)) ** 2, rel=1e-12)

    def test_constant_predictor_degenerate(self):
        with pytest.raises(DegeneratePredictorError):
            dm.compute_stability(ConstantPredictor(), small_probe(), white_noise_images(4))

    def test_r_f_is_ratio_of_d_and_g(self):
        rep = dm.compute_stability(
            dm.LinearPredictor(16 * 16, 5, seed=8), small_probe(), white_noise_images(5, seed=9)
        )
        assert rep.r_f == pytest.approx(rep.d_f / rep.g_f, rel=1e-12)

    def test_scale_invariance(self):
        images = white_noise_images(5, seed=10)
        base = dm.LinearPredictor(16 * 16, 5, seed=11)

        class Scaled(dm.Predictor):
            output_dim = 5
            name = "scaled"

            def __call__(self, batch):
                return -3.7 * base(batch)

        a = dm.compute_stability(base, small_probe(seed=12), images)
        b = dm.compute_stability(Scaled(), small_probe(seed=12), images)
        for key in ("d_f", "g_f", "r_f"):
            assert getattr(a, key) == pytest.approx(getattr(b, key), rel=1e-9)

    def test_determinism(self):
        images = white_noise_images(4, seed=13)
        f = dm.LinearPredictor(16 * 16, 3, seed=14)
        a = dm.compute_stability(f, small_probe(seed=15), images)
        b = dm.compute_stability(f, small_probe(seed=15), images)
        assert a == b

    def test_single_image_rejected(self):
        with pytest.raises(ParameterError):
            dm.compute_stability(
                dm.LinearPredictor(16 * 16, 3), small_probe(), white_noise_images(1)
            )

    def test_median_and_mean_agree_on_single_triple(self):
        images = white_noise_images(2, seed=16)
        f = dm.LinearPredictor(16 * 16, 3, seed=17)
        med = dm.compute_stability(f, small_probe(n_transforms_per_image=1, aggregation="median", seed=18), images)
        mean = dm.compute_stability(f, small_probe(n_transforms_per_image=1, aggregation="mean", seed=18), images)
        assert med.num_diffeo == pytest.approx(mean.num_diffeo, rel=1e-12)
        assert med.num_noise == pytest.approx(mean.num_noise, rel=1e-12)
        assert med.denom == pytest.approx(mean.denom, rel=1e-12)

    def test_gaussian_kind_uses_smoothed_baseline(self):
        images = white_noise_images(3, seed=19)
        probe = small_probe(kind=dm.Gaussian(), seed=20)
        arrays = assemble_probe(probe, images)
        expected = np.stack([
            dm.gaussian_smooth(dm.Image(data=img)).data for img in images
        ])
        assert np.array_equal(arrays.x, expected)

    def test_noise_norm_matching_invariant(self):
        probe = small_probe(seed=21)
        arrays = assemble_probe(probe, white_noise_images(4, seed=22))
        t = probe.n_transforms_per_image
        for i in range(4):
            for j in range(t):
                norm = np.linalg.norm(arrays.x_noise[i * t + j] - arrays.x[i])
                assert norm == pytest.approx(arrays.noise_norm, rel=1e-12)


class TestLinearIsotropyOracle:
    def test_linear_r_f_near_unity(self):
        # for a random Gaussian linear map and matched norms, E||f(v)||^2
        # depends only on ||v||; R_f concentrates near 1
        images = white_noise_images(64, n=16, seed=23)
        reports = [
            dm.compute_stability(
                dm.LinearPredictor(16 * 16, 10, seed=100 + s),
                small_probe(n_transforms_per_image=2, aggregation="mean", seed=24 + s),
                images,
            )
            for s in range(6)
        ]
        r = dm.log_average(reports).r_f
        assert 0.8 < r < 1.25


class TestLogAverage:
    def test_single_report_is_identity(self):
        rep = dm.compute_stability(
            dm.LinearPredictor(16 * 16, 3, seed=25), small_probe(seed=26), white_noise_images(4, seed=27)
        )
        out = dm.log_average([rep])
        assert out.r_f == pytest.approx(rep.r_f, rel=1e-12)

    def test_two_value_geometric_mean(self):
        rep = dm.compute_stability(
            dm.LinearPredictor(16 * 16, 3, seed=28), small_probe(seed=29), white_noise_images(4, seed=30)
        )
        import dataclasses
        a = dataclasses.replace(rep, d_f=0.1, g_f=1.0, r_f=0.1)
        b = dataclasses.replace(rep, d_f=0.9, g_f=1.0, r_f=0.9)
        assert dm.log_average([a, b]).r_f == pytest.approx(0.3, rel=1e-12)

    def test_ratio_identity(self):
        images = white_noise_images(5, seed=31)
        reports = [
            dm.compute_stability(dm.LinearPredictor(16 * 16, 4, seed=s), small_probe(seed=s), images)
            for s in (32, 33, 34)
        ]
        out = dm.log_average(reports)
        assert out.r_f == pytest.approx(out.d_f / out.g_f, rel=1e-12)

    def test_mismatched_config_rejected(self):
        images = white_noise_images(4, seed=35)
        f = dm.LinearPredictor(16 * 16, 3, seed=36)
        a = dm.compute_stability(f, small_probe(seed=37), images)
        b = dm.compute_stability(f, small_probe(seed=37, c=4), images)
        with pytest.raises(ParameterError):
            dm.log_average([a, b])


class TestDeltaSweep:
    def test_single_delta_reduces_to_compute_stability(self):
        images = white_noise_images(4, seed=38)
        f = dm.LinearPredictor(16 * 16, 3, seed=39)
        probe = small_probe(seed=40)
        sweep = dm.stability_vs_delta_sweep(f, [1.0], probe, images)
        assert sweep[0] == dm.compute_stability(f, probe, images)

    def test_linear_predictor_flat_across_delta(self):
        # linear maps have no scale preference: R_f(delta) flat within x1.3
        images = white_noise_images(48, seed=41)
        f = dm.LinearPredictor(16 * 16, 8, seed=42)
        probe = small_probe(n_transforms_per_image=2, aggregation="mean", seed=43)
        sweep = dm.stability_vs_delta_sweep(f, [0.5, 1.0, 2.0], probe, images)
        rs = [rep.r_f for rep in sweep]
        assert max(rs) / min(rs) < 1.3

    def test_rejects_unsorted(self):
        with pytest.raises(ParameterError):
            dm.stability_vs_delta_sweep(
                dm.LinearPredictor(16 * 16, 3), [2.0, 1.0], small_probe(), white_noise_images(4)
            )

    def test_sweep_csv_table(self, tmp_path):
        import csv

        images = white_noise_images(4, seed=44)
        f = dm.LinearPredictor(16 * 16, 3, seed=45)
        sweep = dm.stability_vs_delta_sweep(f, [0.5, 1.0], small_probe(seed=46), images)
        dm.write_sweep_csv(sweep, tmp_path / "sweep.csv")
        with open(tmp_path / "sweep.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 2
        assert float(rows[0]["delta"]) == 0.5
        assert float(rows[1]["r_f"]) == pytest.approx(sweep[1].r_f, rel=1e-12)
        assert rows[0]["interpolation"] == "bilinear"
