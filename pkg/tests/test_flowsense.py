import numpy as np
import pytest

from cyldrag.flowsense.dis import FlowParams, estimate_flow
from cyldrag.flowsense.pipeline import (
    BenchmarkCase,
    benchmark_aee,
    calibrate_and_downsample,
    lattice_field_sampler,
)
from cyldrag.flowsense.synth import (
    ImagePair,
    OpticsConfig,
    ParticleSet,
    render,
    seed_and_advect,
    seed_particles,
)
from cyldrag.grids import FlowField

WINDOW = (0.0, 0.0, 0.1, 0.1)


def small_optics(size=192, **kw):
    return OpticsConfig(window=WINDOW, image_size=(size, size), **kw)


def shifted_pair(shift_px, optics, seed=3):
    """Exposure pair where every particle moves by a known pixel offset."""
    parts = seed_particles(optics, seed=seed)
    img0 = render(parts, optics, noise_seed=seed * 2 + 10)
    m = optics.meters_per_px
    parts.positions[:, 0] += shift_px[0] * m
    parts.positions[:, 1] += shift_px[1] * m
    img1 = render(parts, optics, noise_seed=seed * 2 + 11)
    return ImagePair(img0, img1, 0.0, 1.0)


class TestParticles:
    def test_seeding_density(self):
        optics = small_optics()
        parts = seed_particles(optics, seed=0)
        assert parts.count >= optics.seeding_density * 192 * 192
        x0, y0, x1, y1 = WINDOW
        assert np.all((parts.positions[:, 0] >= x0) & (parts.positions[:, 0] <= x1))

    def test_advect_zero_field(self):
        parts = seed_particles(small_optics(), seed=1)
        before = parts.positions.copy()
        seed_and_advect(parts, lambda p: np.zeros_like(p), 0.01)
        np.testing.assert_array_equal(parts.positions, before)

    def test_advect_uniform_translation(self):
        parts = seed_particles(small_optics(), seed=2)
        keep = parts.positions[:, 0] < 0.09  # avoid re-seeded leavers
        before = parts.positions.copy()
        seed_and_advect(parts, lambda p: np.tile([0.5, 0.0], (len(p), 1)), 0.01)
        np.testing.assert_allclose(
            parts.positions[keep, 0], before[keep, 0] + 0.005, atol=1e-12
        )

    def test_advect_midpoint_rotation_error(self):
        # Midpoint integration keeps the radius to O(dt^2): quartering dt
        # should shrink the radius error ~16x.
        center = np.array([0.05, 0.05])
        omega = 20.0

        def field(p):
            rel = p - center
            return omega * np.stack([-rel[:, 1], rel[:, 0]], axis=1)

        def radius_error(dt, steps):
            parts = ParticleSet(
                positions=np.array([[0.08, 0.05]]),
                brightness=np.ones(1),
                sigma_px=np.ones(1),
                window=WINDOW,
                rng=np.random.default_rng(0),
            )
            r0 = np.linalg.norm(parts.positions[0] - center)
            for _ in range(steps):
                seed_and_advect(parts, field, dt)
            return abs(np.linalg.norm(parts.positions[0] - center) - r0)

        coarse = radius_error(0.004, 25)
        fine = radius_error(0.001, 100)
        assert fine < coarse / 8

    def test_reseed_at_inflow_edge(self):
        parts = seed_particles(small_optics(), seed=3)
        seed_and_advect(parts, lambda p: np.tile([5.0, 0.0], (len(p), 1)), 0.1)
        x0, _, x1, _ = WINDOW
        assert np.all(parts.positions[:, 0] <= x0 + 0.025 * (x1 - x0))


class TestRender:
    def test_no_particles_pure_background(self):
        optics = small_optics(sensor_noise=0.0, background=0.07)
        parts = seed_particles(optics, seed=0)
        parts.positions = np.empty((0, 2))
        parts.brightness = np.empty(0)
        parts.sigma_px = np.empty(0)
        img = render(parts, optics)
        assert np.all(img == pytest.approx(0.07))

    def test_single_particle_peak_at_center(self):
        optics = small_optics(sensor_noise=0.0)
        parts = ParticleSet(
            positions=np.array([[0.05, 0.05]]),
            brightness=np.ones(1),
            sigma_px=np.array([1.5]),
            window=WINDOW,
            rng=np.random.default_rng(0),
        )
        img = render(parts, optics)
        j, i = np.unravel_index(np.argmax(img), img.shape)
        assert abs(i - (192 / 2 - 0.5)) <= 1
        assert abs(j - (192 / 2 - 0.5)) <= 1

    def test_render_deterministic(self):
        optics = small_optics()
        parts = seed_particles(optics, seed=5)
        a = render(parts, optics, noise_seed=42)
        b = render(parts, optics, noise_seed=42)
        assert np.array_equal(a, b)
        c = render(parts, optics, noise_seed=43)
        assert not np.array_equal(a, c)

    def test_pixel_range(self):
        optics = small_optics(sensor_noise=0.05)
        parts = seed_particles(optics, seed=6)
        img = render(parts, optics, noise_seed=1)
        assert img.min() >= 0.0 and img.max() <= 1.0


class TestImagePair:
    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="dimensions"):
            ImagePair(np.zeros((4, 4)), np.zeros((4, 5)), 0.0, 0.1)

    def test_positive_dt(self):
        with pytest.raises(ValueError, match="positive"):
            ImagePair(np.zeros((4, 4)), np.zeros((4, 4)), 0.0, 0.0)

    def test_range_check(self):
        with pytest.raises(ValueError, match="0, 1"):
            ImagePair(np.full((4, 4), 2.0), np.zeros((4, 4)), 0.0, 0.1)


class TestEstimator:
    def test_uniform_shift(self):
        pair = shifted_pair((3.0, 0.0), small_optics(256))
        est = estimate_flow(pair)
        err = np.linalg.norm(est.vectors - np.array([3.0, 0.0]), axis=2)
        assert err[est.valid].mean() < 0.1

    def test_identical_images_zero(self):
        optics = small_optics()
        parts = seed_particles(optics, seed=7)
        img = render(parts, optics, noise_seed=3)
        est = estimate_flow(ImagePair(img, img, 0.0, 1.0))
        assert est.valid.any()
        assert np.all(est.vectors[est.valid] == 0.0)

    def test_degenerate_texture_all_invalid(self):
        flat = np.full((128, 128), 0.25)
        est = estimate_flow(ImagePair(flat, flat, 0.0, 1.0))
        assert not est.valid.any()
        assert np.all(est.vectors == 0.0)

    def test_shear_field(self):
        # Linear shear with 8 px peak displacement across the image.
        optics = small_optics(256, sensor_noise=0.003)
        parts = seed_particles(optics, seed=8)
        img0 = render(parts, optics, noise_seed=30)
        m = optics.meters_per_px
        x0, y0, x1, y1 = WINDOW

        def px_shift(pos):
            s = (pos[:, 1] - y0) / (y1 - y0)  # 0 at bottom, 1 at top
            return np.stack([(-4.0 + 8.0 * s), np.zeros(len(pos))], axis=1)

        parts.positions[:, 0] += px_shift(parts.positions)[:, 0] * m
        img1 = render(parts, optics, noise_seed=31)
        est = estimate_flow(ImagePair(img0, img1, 0.0, 1.0))
        h, w = est.shape
        rows = np.arange(h)
        # rendered row 0 is the BOTTOM of the window (y = y0)
        s = (rows + 0.5) / h
        truth_u = -4.0 + 8.0 * s
        err = np.abs(est.vectors[:, :, 0] - truth_u[:, None])
        interior = np.zeros_like(est.valid)
        interior[16:-16, 16:-16] = True
        sel = est.valid & interior
        assert err[sel].mean() < 0.5

    def test_shift_equivariance(self):
        # Shifts aligned with the patch grid at every pyramid level move the
        # estimate without changing its values.
        optics = small_optics(256)
        pair = shifted_pair((2.0, 1.0), optics, seed=9)
        est = estimate_flow(pair)
        dx, dy = 32, 64
        rolled = ImagePair(
            np.roll(pair.first, (dy, dx), (0, 1)),
            np.roll(pair.second, (dy, dx), (0, 1)),
            0.0, 1.0,
        )
        est2 = estimate_flow(rolled)
        sl_a = (slice(80, 160), slice(80, 160))
        sl_b = (slice(80 + dy, 160 + dy), slice(80 + dx, 160 + dx))
        both = est.valid[sl_a] & est2.valid[sl_b]
        assert both.any()
        assert np.abs(est.vectors[sl_a] - est2.vectors[sl_b])[both].max() < 0.05

    def test_too_small_image_rejected(self):
        tiny = np.zeros((8, 8))
        with pytest.raises(ValueError, match="pyramid"):
            estimate_flow(ImagePair(tiny, tiny, 0.0, 1.0))

    def test_variational_refinement_runs(self):
        pair = shifted_pair((1.5, -0.5), small_optics(128))
        est = estimate_flow(pair, FlowParams(refine_iterations=3))
        err = np.linalg.norm(est.vectors - np.array([1.5, -0.5]), axis=2)
        assert err[est.valid].mean() < 0.2


class TestCalibrate:
    def test_unit_arithmetic(self):
        # 1 px/frame at 1e-4 m/px and 60 Hz exposure spacing is 6 mm/s.
        field = FlowField(np.ones((32, 32, 2)) * [1.0, 0.0], "px/frame")
        out = calibrate_and_downsample(field, 1e-4, 1 / 60, out=(16, 16))
        assert out.units == "m/s"
        np.testing.assert_allclose(out.vectors[:, :, 0], 6e-3, rtol=1e-12)

    def test_all_invalid_propagates(self):
        field = FlowField(np.ones((32, 32, 2)), "px/frame", np.zeros((32, 32), bool))
        out = calibrate_and_downsample(field, 1e-4, 0.01, out=(8, 8))
        assert not out.valid.any()
        assert np.all(out.vectors == 0.0)

    def test_constant_field_preserved(self):
        field = FlowField(np.full((512, 512, 2), 3.3), "px/frame")
        out = calibrate_and_downsample(field, 1.0, 1.0, out=(16, 16))
        np.testing.assert_allclose(out.vectors, 3.3, rtol=1e-12)
        assert out.shape == (16, 16)

    def test_linearity(self):
        rng = np.random.default_rng(0)
        mask = rng.random((64, 64)) > 0.2
        a = FlowField(rng.normal(size=(64, 64, 2)), "px/frame", mask)
        b = FlowField(rng.normal(size=(64, 64, 2)), "px/frame", mask)
        summed = FlowField(a.vectors + 2.0 * b.vectors, "px/frame", mask)
        out_a = calibrate_and_downsample(a, 1e-3, 0.01, (8, 8))
        out_b = calibrate_and_downsample(b, 1e-3, 0.01, (8, 8))
        out_s = calibrate_and_downsample(summed, 1e-3, 0.01, (8, 8))
        np.testing.assert_allclose(
            out_s.vectors, out_a.vectors + 2.0 * out_b.vectors, atol=1e-12
        )

    def test_bad_dt(self):
        field = FlowField(np.zeros((16, 16, 2)), "px/frame")
        with pytest.raises(ValueError):
            calibrate_and_downsample(field, 1e-4, 0.0)


class TestBenchmark:
    def test_empty_suite(self):
        report = benchmark_aee([])
        assert report.rows == []
        assert np.isnan(report.mean_aee)

    def test_uniform_suite(self, tmp_path):
        optics = small_optics(256)
        cases = []
        for k, shift in enumerate([(1.0, 0.0), (0.0, 2.0), (3.0, -1.0)]):
            pair = shifted_pair(shift, optics, seed=20 + k)
            truth = FlowField(np.tile(shift, (256, 256, 1)).astype(float), "px/frame")
            cases.append(BenchmarkCase(f"shift_{shift}", pair, truth))
        report = benchmark_aee(cases)
        assert report.mean_aee < 0.1
        report.to_csv(tmp_path / "report.csv")
        text = (tmp_path / "report.csv").read_text().splitlines()
        assert text[0] == "name,aee,p50,p90,valid_fraction,seconds"
        assert len(text) == 4


def test_end_to_end_wake_correlation(tiny_wake_state):
    """Estimated 16x16 field tracks the true field on a developed wake."""
    from cyldrag.lattice import sample_velocity_field

    state = tiny_wake_state
    window = (0.08, 0.02, 0.13, 0.07)
    optics = OpticsConfig(window=window, image_size=(256, 256))
    parts = seed_particles(optics, seed=12)
    sampler = lattice_field_sampler(state)
    dt = 6.0 * optics.meters_per_px / 0.3  # ~6 px at the fastest expected speed
    img0 = render(parts, optics, noise_seed=50)
    seed_and_advect(parts, sampler, dt)
    img1 = render(parts, optics, noise_seed=51)
    est_px = estimate_flow(ImagePair(img0, img1, 0.0, dt))
    cal = calibrate_and_downsample(est_px, optics.meters_per_px, dt, (16, 16))
    est = cal.vectors
    truth = sample_velocity_field(state, window, (16, 16)).vectors
    cos = np.sum(est * truth) / (np.linalg.norm(est) * np.linalg.norm(truth))
    assert cos > 0.9
