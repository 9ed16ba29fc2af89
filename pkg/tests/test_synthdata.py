"""Tests for the synthetic spline and ellipse datasets."""
import io
import struct

import numpy as np
import numpy.testing as npt
import pytest
from scipy.interpolate import CubicSpline

from structcov.gaussian import chol_factor, sym_eigen
from structcov.synthdata import (
    EllipseConfig,
    SplineConfig,
    SynthRecord,
    cubic_spline,
    ellipse_covariance,
    ellipse_mask,
    gen_ellipses,
    gen_splines,
    linear_reconstructor_fit,
    read_dataset,
    spline_covariance,
    write_dataset,
)


class TestCubicSpline:
    def test_two_knots_linear(self):
        x = np.array([0.0, 4.0])
        y = np.array([1.0, 9.0])
        eval_x = np.array([0.0, 1.0, 2.0, 3.0, 4.0])
        npt.assert_allclose(cubic_spline(x, y, eval_x), 1.0 + 2.0 * eval_x)

    def test_reproduces_a_line(self):
        x = np.array([0.0, 1.0, 3.0, 6.0, 10.0])
        y = 2.0 * x - 5.0
        eval_x = np.linspace(0.0, 10.0, 41)
        npt.assert_allclose(cubic_spline(x, y, eval_x), 2.0 * eval_x - 5.0, atol=1e-12)

    def test_interpolates_knots(self):
        rng = np.random.default_rng(0)
        x = np.array([0.0, 2.0, 3.0, 7.0, 11.0, 12.0])
        y = rng.normal(size=6)
        npt.assert_allclose(cubic_spline(x, y, x), y, atol=1e-12)

    def test_against_reference_implementation(self):
        rng = np.random.default_rng(1)
        x = np.sort(rng.uniform(0.0, 20.0, size=8))
        y = rng.normal(size=8)
        eval_x = np.linspace(x[0], x[-1], 200)
        reference = CubicSpline(x, y, bc_type="natural")(eval_x)
        npt.assert_allclose(cubic_spline(x, y, eval_x), reference, rtol=1e-10, atol=1e-12)

    def test_natural_boundary_second_derivative(self):
        rng = np.random.default_rng(2)
        x = np.linspace(0.0, 9.0, 5)
        y = rng.normal(size=5)
        h = 1e-4
        for edge in (x[0], x[-1]):
            probe = np.array([edge - h, edge, edge + h]) if edge > x[0] else np.array(
                [edge, edge + h, edge + 2 * h]
            )
            vals = cubic_spline(x, y, probe)
            second = (vals[0] - 2.0 * vals[1] + vals[2]) / h**2
            assert abs(second) < 1e-2

    def test_bad_inputs(self):
        with pytest.raises(ValueError):
            cubic_spline(np.array([0.0]), np.array([1.0]), np.array([0.0]))
        with pytest.raises(ValueError):
            cubic_spline(np.array([0.0, 0.0]), np.array([1.0, 2.0]), np.array([0.0]))
        with pytest.raises(ValueError):
            cubic_spline(np.array([0.0, 1.0]), np.array([1.0]), np.array([0.0]))


class TestSplineCovariance:
    def test_diagonal_values(self):
        config = SplineConfig(n_points=4, variance=0.05, jitter=1e-4)
        mean = np.array([1.0, -2.0, 0.0, 0.5])
        cov = spline_covariance(mean, config)
        amp = np.abs(mean) + 1e-4
        npt.assert_allclose(np.diag(cov), amp * amp * (0.05 + 1e-4), rtol=1e-12)

    def test_symmetric_positive_definite(self):
        config = SplineConfig(n_points=12)
        rng = np.random.default_rng(3)
        mean = rng.normal(size=12)
        cov = spline_covariance(mean, config)
        npt.assert_array_equal(cov, cov.T)
        chol_factor(cov)  # raises if not positive definite

    def test_entry_formula(self):
        config = SplineConfig(lengthscale=2.0, variance=0.05, jitter=1e-4, diag_offset=0.3)
        mean = np.array([1.0, 0.0, -2.0])
        cov = spline_covariance(mean, config)
        amp = np.abs(mean) + 0.3
        expected_01 = amp[0] * amp[1] * 0.05 * np.exp(-1.0 / 8.0)
        npt.assert_allclose(cov[0, 1], expected_01, rtol=1e-12)

    def test_tiny_lengthscale_decorrelates(self):
        config = SplineConfig(n_points=6, lengthscale=1e-6)
        mean = np.ones(6)
        cov = spline_covariance(mean, config)
        off = cov - np.diag(np.diag(cov))
        assert np.max(np.abs(off)) < 1e-10 * np.min(np.diag(cov))


class TestGenSplines:
    def test_record_independent_of_count(self):
        long = gen_splines(5, seed=11)
        short = gen_splines(3, seed=11)
        for idx in range(3):
            npt.assert_array_equal(long[idx].mean, short[idx].mean)
            npt.assert_array_equal(long[idx].sample, short[idx].sample)
            npt.assert_array_equal(long[idx].gt_cov, short[idx].gt_cov)
        assert long[0].index == 0 and long[4].index == 4

    def test_chunked_generation_matches_single_call(self):
        whole = gen_splines(6, seed=12)
        tail = gen_splines(2, seed=12, start=4)
        for offset in range(2):
            assert tail[offset].index == 4 + offset
            npt.assert_array_equal(tail[offset].sample, whole[4 + offset].sample)

    def test_seed_changes_records(self):
        a = gen_splines(1, seed=1)[0]
        b = gen_splines(1, seed=2)[0]
        assert not np.array_equal(a.mean, b.mean)

    def test_shapes_and_default_config(self):
        rec = gen_splines(1, seed=0)[0]
        assert rec.mean.shape == (50,)
        assert rec.sample.shape == (50,)
        assert rec.gt_cov.shape == (50, 50)

    def test_standardized_residuals_are_unit_normal(self):
        # Whitening each sample by its own ground-truth factor must give
        # iid standard normals across records and coordinates.
        records = gen_splines(200, seed=5)
        z = []
        for rec in records:
            chol = chol_factor(rec.gt_cov)
            z.append(np.linalg.solve(chol, rec.sample - rec.mean))
        z = np.concatenate(z)
        assert z.shape == (10_000,)
        assert abs(z.mean()) < 0.04
        assert abs(z.var() - 1.0) < 0.05

    def test_zero_mean_scale_gives_tiny_noise(self):
        config = SplineConfig(mean_scale=0.0)
        rec = gen_splines(1, seed=7, config=config)[0]
        npt.assert_array_equal(rec.mean, np.zeros(50))
        assert np.max(np.abs(rec.sample)) < 1e-3

    def test_mean_scale_scales_mean(self):
        base = gen_splines(1, seed=9)[0]
        scaled = gen_splines(1, seed=9, config=SplineConfig(mean_scale=2.5))[0]
        npt.assert_allclose(scaled.mean, 2.5 * base.mean, rtol=1e-12)

    def test_bad_config_rejected(self):
        with pytest.raises(ValueError):
            gen_splines(1, seed=0, config=SplineConfig(n_points=1))
        with pytest.raises(ValueError):
            gen_splines(1, seed=0, config=SplineConfig(n_knots=1))


class TestEllipseMask:
    def test_axis_aligned_hand_case(self):
        mask = ellipse_mask(np.array([8.0, 8.0]), np.array([3.0, 2.0]), 0.0, 16)
        assert mask[8, 8]
        assert mask[8, 11] and not mask[8, 12]  # semi-axis 3 along x
        assert mask[10, 8] and not mask[11, 8]  # semi-axis 2 along y

    def test_rotation_swaps_axes(self):
        mask = ellipse_mask(np.array([8.0, 8.0]), np.array([3.0, 2.0]), np.pi / 2.0, 16)
        assert mask[11, 8] and not mask[8, 11]

    def test_tiny_ellipse_misses_all_pixels(self):
        mask = ellipse_mask(np.array([7.5, 7.5]), np.array([0.2, 0.2]), 0.0, 16)
        assert not mask.any()


class TestEllipseCovariance:
    def test_axis_aligned_anisotropy(self):
        config = EllipseConfig()
        cov = ellipse_covariance(0.0, config)
        n = 16
        ref = 8 * n + 8  # pixel (row 8, col 8)
        same_row = 8 * n + 10  # two columns to the right
        same_col = 10 * n + 8  # two rows down
        expected_row = 0.05 * np.exp(-0.5 * (2.0 / 4.0) ** 2)
        expected_col = 0.05 * np.exp(-0.5 * (2.0 / 0.75) ** 2)
        npt.assert_allclose(cov[ref, same_row], expected_row, rtol=1e-12)
        npt.assert_allclose(cov[ref, same_col], expected_col, rtol=1e-12)
        assert cov[ref, same_row] > 20.0 * cov[ref, same_col]

    def test_diagonal_and_symmetry(self):
        config = EllipseConfig(side=6)
        cov = ellipse_covariance(1.1, config)
        npt.assert_allclose(np.diag(cov), np.full(36, 0.05 + 1e-4), rtol=1e-12)
        npt.assert_array_equal(cov, cov.T)
        chol_factor(cov)

    @pytest.mark.parametrize("phi", [0.0, np.pi / 4.0, np.pi / 3.0, 2.0])
    def test_autocorrelation_angle_matches_orientation(self, phi):
        # Second-moment direction of the correlation seen from a center
        # pixel must align with the requested orientation (mod pi).
        config = EllipseConfig()
        cov = ellipse_covariance(phi, config)
        n = 16
        ref_row, ref_col = 8, 8
        ref = ref_row * n + ref_col
        sxx = sxy = syy = 0.0
        for row in range(16):
            for col in range(16):
                dx = float(col - ref_col)
                dy = float(row - ref_row)
                if max(abs(dx), abs(dy)) > 4 or (dx == 0 and dy == 0):
                    continue
                w = cov[ref, row * n + col]
                sxx += w * dx * dx
                sxy += w * dx * dy
                syy += w * dy * dy
        angle = 0.5 * np.arctan2(2.0 * sxy, sxx - syy)
        delta = (angle - phi + np.pi / 2.0) % np.pi - np.pi / 2.0
        assert abs(delta) < np.deg2rad(10.0)


class TestGenEllipses:
    def test_means_are_binary_with_both_values(self):
        for rec in gen_ellipses(10, seed=21):
            values = np.unique(rec.mean)
            npt.assert_array_equal(values, [-1.0, 1.0])
            assert rec.mean.shape == (256,)
            assert rec.gt_cov.shape == (256, 256)

    def test_record_independent_of_count(self):
        long = gen_ellipses(4, seed=22)
        short = gen_ellipses(2, seed=22)
        for idx in range(2):
            npt.assert_array_equal(long[idx].mean, short[idx].mean)
            npt.assert_array_equal(long[idx].sample, short[idx].sample)

    def test_chunked_generation_matches_single_call(self):
        whole = gen_ellipses(4, seed=22)
        tail = gen_ellipses(2, seed=22, start=2)
        npt.assert_array_equal(tail[0].mean, whole[2].mean)
        npt.assert_array_equal(tail[1].sample, whole[3].sample)

    def test_standardized_residuals_are_unit_normal(self):
        records = gen_ellipses(50, seed=23)
        z = []
        for rec in records:
            chol = chol_factor(rec.gt_cov)
            z.append(np.linalg.solve(chol, rec.sample - rec.mean))
        z = np.concatenate(z)
        assert abs(z.mean()) < 0.03
        assert abs(z.var() - 1.0) < 0.04

    def test_small_side_config(self):
        records = gen_ellipses(3, seed=24, config=EllipseConfig(side=8))
        for rec in records:
            assert rec.mean.shape == (64,)
            npt.assert_array_equal(np.unique(rec.mean), [-1.0, 1.0])

    def test_bad_config_rejected(self):
        with pytest.raises(ValueError):
            gen_ellipses(1, seed=0, config=EllipseConfig(side=3))


class TestLinearReconstructor:
    def test_identical_images_reconstruct_exactly(self):
        image = np.linspace(-1.0, 1.0, 12)
        samples = np.tile(image, (30, 1))
        recon = linear_reconstructor_fit(samples, rank=3)
        npt.assert_allclose(recon.reconstruct(image), image, atol=1e-12)
        npt.assert_allclose(recon.code(image), np.zeros(3), atol=1e-12)

    def test_exact_low_dimensional_subspace(self):
        rng = np.random.default_rng(30)
        basis = np.linalg.qr(rng.normal(size=(10, 3)))[0]
        center = rng.normal(size=10)
        codes = rng.normal(size=(100, 3))
        samples = center + codes @ basis.T
        recon = linear_reconstructor_fit(samples, rank=3)
        npt.assert_allclose(recon.reconstruct(samples), samples, atol=1e-8)

    def test_full_rank_is_exact_for_any_data(self):
        rng = np.random.default_rng(31)
        samples = rng.normal(size=(40, 6))
        recon = linear_reconstructor_fit(samples, rank=6)
        npt.assert_allclose(recon.reconstruct(samples), samples, atol=1e-8)

    def test_components_orthonormal(self):
        rng = np.random.default_rng(32)
        samples = rng.normal(size=(50, 8))
        recon = linear_reconstructor_fit(samples, rank=4)
        npt.assert_allclose(recon.components.T @ recon.components, np.eye(4), atol=1e-10)
        assert recon.rank == 4

    def test_projector_matches_reference_eigendecomposition(self):
        # Spectrum with clear gaps so the top-k subspace is unambiguous.
        rng = np.random.default_rng(33)
        basis = np.linalg.qr(rng.normal(size=(7, 7)))[0]
        scales = np.array([5.0, 3.0, 1.0, 0.3, 0.1, 0.03, 0.01])
        samples = rng.normal(size=(4000, 7)) * scales @ basis.T
        recon = linear_reconstructor_fit(samples, rank=2)
        centered = samples - samples.mean(axis=0)
        w, v = np.linalg.eigh(centered.T @ centered / 4000)
        ref = v[:, -2:]
        npt.assert_allclose(
            recon.components @ recon.components.T, ref @ ref.T, atol=1e-8
        )

    def test_batched_code_matches_loop(self):
        rng = np.random.default_rng(34)
        samples = rng.normal(size=(20, 5))
        recon = linear_reconstructor_fit(samples, rank=2)
        batch = rng.normal(size=(4, 5))
        codes = recon.code(batch)
        for row in range(4):
            npt.assert_allclose(codes[row], recon.code(batch[row]), rtol=1e-12)

    def test_bad_rank_rejected(self):
        samples = np.zeros((5, 4))
        with pytest.raises(ValueError):
            linear_reconstructor_fit(samples, rank=0)
        with pytest.raises(ValueError):
            linear_reconstructor_fit(samples, rank=5)


class TestDatasetSerialization:
    def make_records(self, count=3, n=4, seed=40):
        rng = np.random.default_rng(seed)
        records = []
        for idx in range(count):
            a = rng.normal(size=(n, n))
            records.append(
                SynthRecord(
                    index=idx,
                    mean=rng.normal(size=n),
                    sample=rng.normal(size=n),
                    gt_cov=a @ a.T + np.eye(n),
                )
            )
        return records

    def test_round_trip(self):
        records = self.make_records()
        buf = io.BytesIO()
        write_dataset(buf, records)
        buf.seek(0)
        loaded = read_dataset(buf)
        assert len(loaded) == 3
        for orig, back in zip(records, loaded):
            assert back.index == orig.index
            npt.assert_array_equal(back.mean, orig.mean)
            npt.assert_array_equal(back.sample, orig.sample)
            npt.assert_array_equal(back.gt_cov, orig.gt_cov)

    def test_exact_byte_layout(self):
        rec = SynthRecord(
            index=0,
            mean=np.array([1.0, 2.0]),
            sample=np.array([3.0, 4.0]),
            gt_cov=np.array([[5.0, 6.0], [7.0, 8.0]]),
        )
        buf = io.BytesIO()
        write_dataset(buf, [rec])
        expected = (
            b"SSYN"
            + struct.pack("<II", 2, 1)
            + struct.pack("<8d", 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0)
        )
        assert buf.getvalue() == expected

    def test_bad_magic_rejected(self):
        with pytest.raises(ValueError):
            read_dataset(io.BytesIO(b"XSYN" + struct.pack("<II", 2, 0)))

    def test_truncated_rejected(self):
        records = self.make_records(count=1)
        buf = io.BytesIO()
        write_dataset(buf, records)
        data = buf.getvalue()
        with pytest.raises(ValueError):
            read_dataset(io.BytesIO(data[:-8]))

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            write_dataset(io.BytesIO(), [])

    def test_file_round_trip(self, tmp_path):
        records = self.make_records(count=2)
        path = str(tmp_path / "data.ssyn")
        write_dataset(path, records)
        loaded = read_dataset(path)
        npt.assert_array_equal(loaded[1].gt_cov, records[1].gt_cov)


class TestPcaOnSynthData:
    def test_spline_samples_compress_well(self):
        # Spline means live near a low-dimensional family, so a modest rank
        # captures most energy while a tiny rank cannot.
        records = gen_splines(300, seed=50)
        samples = np.stack([rec.sample for rec in records])
        recon = linear_reconstructor_fit(samples, rank=12)
        err = np.mean((recon.reconstruct(samples) - samples) ** 2)
        total = np.mean((samples - samples.mean(axis=0)) ** 2)
        assert err < 0.1 * total
