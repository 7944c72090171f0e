"""From pixel displacements to the low-resolution flow observation.

Wires the synthetic imaging and the patch-based estimator into the path the
environment uses: render an exposure pair, estimate pixel displacements,
convert to m/s with the window calibration, box-downsample to the requested
observation grid. Also hosts the estimator benchmark used by the tests and
the CLI.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass

import numpy as np

from ..grids import FlowField
from .dis import FlowParams, estimate_flow
from .synth import ImagePair, OpticsConfig, ParticleSet, render, seed_and_advect, seed_particles


def calibrate_and_downsample(
    field: FlowField,
    meters_per_px: float,
    dt: float,
    out: tuple[int, int] = (16, 16),
) -> FlowField:
    """Convert a px/frame field to m/s and box-average it to ``out`` = (w, h).

    The average honors the validity mask: a block is the mean of its valid
    cells; blocks with no valid cell come out zero and invalid. The whole
    operation is linear in the input values.
    """
    if dt <= 0:
        raise ValueError("exposure separation must be positive")
    ow, oh = out
    H, W = field.shape
    if ow < 1 or oh < 1 or ow > W or oh > H:
        raise ValueError("output resolution must be between 1x1 and the input size")
    scale = meters_per_px / dt
    vec = field.vectors * scale
    valid = field.valid

    if H % oh == 0 and W % ow == 0:
        by, bx = H // oh, W // ow
        v = vec.reshape(oh, by, ow, bx, 2)
        m = valid.reshape(oh, by, ow, bx)
        counts = m.sum(axis=(1, 3))
        sums = (v * m[:, :, :, :, None]).sum(axis=(1, 3))
        out_valid = counts > 0
        safe = np.maximum(counts, 1)[:, :, None]
        out_vec = sums / safe
        out_vec[~out_valid] = 0.0
    else:
        # Fall back to sampling block centers when sizes do not divide.
        ys = ((np.arange(oh) + 0.5) * H / oh - 0.5).round().astype(int).clip(0, H - 1)
        xs = ((np.arange(ow) + 0.5) * W / ow - 0.5).round().astype(int).clip(0, W - 1)
        out_vec = vec[np.ix_(ys, xs)]
        out_valid = valid[np.ix_(ys, xs)]
        out_vec[~out_valid] = 0.0
    return FlowField(out_vec, "m/s", out_valid)


def lattice_field_sampler(state):
    """Velocity lookup (m/s) at arbitrary physical points of a channel state."""
    dx = state.units.dx
    vel = state.units.velocity

    def field_at(points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        gi = np.clip(pts[:, 0] / dx, 0, state.nx - 1 - 1e-12)
        gj = np.clip(pts[:, 1] / dx - state.y_offset, 0, state.ny - 1 - 1e-12)
        i0 = gi.astype(np.int64)
        j0 = gj.astype(np.int64)
        fi = gi - i0
        fj = gj - j0
        i1 = np.minimum(i0 + 1, state.nx - 1)
        j1 = np.minimum(j0 + 1, state.ny - 1)
        out = np.empty_like(pts)
        for c in range(2):
            comp = state.u[c]
            top = comp[j0, i0] * (1 - fi) + comp[j0, i1] * fi
            bot = comp[j1, i0] * (1 - fi) + comp[j1, i1] * fi
            out[:, c] = (top * (1 - fj) + bot * fj) * vel
        return out

    return field_at


class FlowSensor:
    """Stateful imaging pipeline attached to one environment.

    Tracks a persistent particle population; each call to :meth:`estimate`
    takes an exposure pair ``dt_exposure`` apart, estimates pixel flow,
    calibrates it, and keeps the particles synchronized with simulated time
    across the full control interval.
    """

    def __init__(
        self,
        env,
        window,
        resolution=(16, 16),
        image_size=(512, 512),
        dt_exposure: float | None = None,
        target_displacement_px: float = 6.0,
        seeding_density: float = 0.02,
        sensor_noise: float = 0.005,
        params: FlowParams | None = None,
    ):
        self.env = env
        self.resolution = tuple(resolution)
        self.optics = OpticsConfig(
            window=tuple(window),
            image_size=tuple(image_size),
            seeding_density=seeding_density,
            sensor_noise=sensor_noise,
        )
        self.params = params or FlowParams()
        control_dt = env.substeps * env.state.units.dt
        if dt_exposure is None:
            # Keep peak displacements near the estimator's sweet spot.
            f = env.fluid
            vmax = max(f.inflow_speed * 2.0, f.cylinder_radius * f.rotation_cap * 0.5, 1e-9)
            dt_exposure = min(control_dt, target_displacement_px * self.optics.meters_per_px / vmax)
        self.dt_exposure = float(dt_exposure)
        self.control_dt = control_dt
        self.particles: ParticleSet = seed_particles(self.optics, seed=env.fluid.seed + 0x0F)
        self._frame = 0

    def estimate(self) -> np.ndarray:
        """One calibrated (h, w, 2) m/s estimate at the sensor resolution."""
        field_at = lattice_field_sampler(self.env.state)
        seed0 = (self.env.fluid.seed << 20) + 2 * self._frame
        img0 = render(self.particles, self.optics, noise_seed=seed0)
        seed_and_advect(self.particles, field_at, self.dt_exposure)
        img1 = render(self.particles, self.optics, noise_seed=seed0 + 1)
        remainder = self.control_dt - self.dt_exposure
        if remainder > 0:
            seed_and_advect(self.particles, field_at, remainder)
        self._frame += 1
        pair = ImagePair(img0, img1, self.env.state.time, self.dt_exposure)
        est = estimate_flow(pair, self.params)
        # Rendered rows grow with physical y, so no axis flip is needed.
        cal = calibrate_and_downsample(
            est, self.optics.meters_per_px, self.dt_exposure, self.resolution
        )
        return cal.vectors


@dataclass
class BenchmarkCase:
    name: str
    pair: ImagePair
    truth: FlowField  # px/frame


@dataclass
class BenchmarkReport:
    rows: list[dict]

    @property
    def mean_aee(self) -> float:
        if not self.rows:
            return float("nan")
        return float(np.mean([r["aee"] for r in self.rows]))

    def to_csv(self, path) -> None:
        fields = ["name", "aee", "p50", "p90", "valid_fraction", "seconds"]
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=fields)
            writer.writeheader()
            for row in self.rows:
                writer.writerow({k: row[k] for k in fields})


def benchmark_aee(cases, params: FlowParams | None = None, estimator=None) -> BenchmarkReport:
    """Average endpoint error and wall-clock per case for the estimator."""
    est = estimator or (lambda pair: estimate_flow(pair, params))
    rows = []
    for case in cases:
        t0 = time.perf_counter()
        result = est(case.pair)
        elapsed = time.perf_counter() - t0
        both = result.valid & case.truth.valid
        if both.any():
            err = np.linalg.norm(result.vectors - case.truth.vectors, axis=2)[both]
            aee = float(np.mean(err))
            p50 = float(np.percentile(err, 50))
            p90 = float(np.percentile(err, 90))
        else:
            aee = p50 = p90 = float("nan")
        rows.append({
            "name": case.name,
            "aee": aee,
            "p50": p50,
            "p90": p90,
            "valid_fraction": float(np.mean(result.valid)),
            "seconds": elapsed,
        })
    return BenchmarkReport(rows)
