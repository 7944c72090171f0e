"""Synthetic tracer-particle imaging: seeding, advection, rendering.

Mimics the optical chain of the rig: neutrally buoyant tracers ride the
velocity field inside a fixed imaging window and are photographed twice per
estimate; each particle renders as a Gaussian spot on top of a noisy
background.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit


@dataclass
class OpticsConfig:
    window: tuple[float, float, float, float]  # (x0, y0, x1, y1) in meters
    image_size: tuple[int, int] = (512, 512)   # (w, h) pixels
    seeding_density: float = 0.02              # particles per px^2
    spot_sigma: float = 1.2                    # px, point-spread radius
    spot_sigma_jitter: float = 0.25            # relative spread of per-particle sigma
    brightness: tuple[float, float] = (0.5, 1.0)
    background: float = 0.03
    sensor_noise: float = 0.005                # std of additive pixel noise

    @property
    def meters_per_px(self) -> float:
        x0, y0, x1, y1 = self.window
        return (x1 - x0) / self.image_size[0]

    def validate(self) -> None:
        x0, y0, x1, y1 = self.window
        if not (x1 > x0 and y1 > y0):
            raise ValueError("imaging window must have positive extent")
        w, h = self.image_size
        if w < 16 or h < 16:
            raise ValueError("image size too small")
        if self.seeding_density <= 0:
            raise ValueError("seeding density must be positive")


@dataclass
class ParticleSet:
    """Tracer positions (m) inside the window, with per-particle looks."""

    positions: np.ndarray        # (n, 2) meters
    brightness: np.ndarray       # (n,)
    sigma_px: np.ndarray         # (n,)
    window: tuple[float, float, float, float]
    rng: np.random.Generator = field(repr=False, default=None)  # type: ignore[assignment]

    @property
    def count(self) -> int:
        return self.positions.shape[0]


def seed_particles(optics: OpticsConfig, seed: int = 0) -> ParticleSet:
    optics.validate()
    w, h = optics.image_size
    n = max(1, math.ceil(optics.seeding_density * w * h))
    rng = np.random.default_rng(seed)
    x0, y0, x1, y1 = optics.window
    pos = np.empty((n, 2))
    pos[:, 0] = rng.uniform(x0, x1, n)
    pos[:, 1] = rng.uniform(y0, y1, n)
    bright = rng.uniform(optics.brightness[0], optics.brightness[1], n)
    sig = optics.spot_sigma * (1.0 + optics.spot_sigma_jitter * rng.uniform(-1, 1, n))
    return ParticleSet(pos, bright, sig, optics.window, rng)


def seed_and_advect(particles: ParticleSet, field_at, dt: float) -> ParticleSet:
    """Advance particles by midpoint integration of ``field_at`` over dt.

    ``field_at`` maps an (n, 2) array of positions (m) to velocities (m/s).
    Particles leaving the window are re-seeded in a thin strip along the
    inflow (left) edge so the seeding level stays constant.
    """
    pos = particles.positions
    mid = pos + 0.5 * dt * field_at(pos)
    new = pos + dt * field_at(mid)
    x0, y0, x1, y1 = particles.window
    out = (new[:, 0] < x0) | (new[:, 0] > x1) | (new[:, 1] < y0) | (new[:, 1] > y1)
    n_out = int(out.sum())
    if n_out:
        rng = particles.rng
        new[out, 0] = x0 + rng.uniform(0.0, 0.02 * (x1 - x0), n_out)
        new[out, 1] = rng.uniform(y0, y1, n_out)
    particles.positions = new
    return particles


@njit(cache=True)
def _splat(img, px, py, bright, sigma):
    h, w = img.shape
    for n in range(px.size):
        s = sigma[n]
        rad = int(3.0 * s + 1.0)
        cx = px[n]
        cy = py[n]
        i0 = int(cx) - rad
        j0 = int(cy) - rad
        inv2s2 = 1.0 / (2.0 * s * s)
        for j in range(j0, j0 + 2 * rad + 2):
            if j < 0 or j >= h:
                continue
            dy = j - cy
            for i in range(i0, i0 + 2 * rad + 2):
                if i < 0 or i >= w:
                    continue
                dx = i - cx
                img[j, i] += bright[n] * np.exp(-(dx * dx + dy * dy) * inv2s2)


def render(particles: ParticleSet, optics: OpticsConfig, noise_seed: int = 0) -> np.ndarray:
    """Grayscale exposure in [0, 1]; bitwise deterministic for a given seed.

    Row index grows with physical y (row 0 is the bottom edge of the
    window), so displacement fields estimated from these images share axes
    with the velocity field they sample.
    """
    w, h = optics.image_size
    x0, y0, x1, y1 = optics.window
    img = np.zeros((h, w), dtype=np.float64)
    # Pixel centers: physical x0 maps to px coordinate -0.5.
    px = (particles.positions[:, 0] - x0) / (x1 - x0) * w - 0.5
    py = (particles.positions[:, 1] - y0) / (y1 - y0) * h - 0.5
    _splat(img, px, py, particles.brightness, particles.sigma_px)
    img += optics.background
    if optics.sensor_noise > 0:
        rng = np.random.default_rng(noise_seed)
        img += optics.sensor_noise * rng.standard_normal(img.shape)
    return np.clip(img, 0.0, 1.0)


@dataclass
class ImagePair:
    """Two exposures of the same window separated by ``dt`` seconds."""

    first: np.ndarray
    second: np.ndarray
    t0: float
    dt: float

    def __post_init__(self):
        self.first = np.asarray(self.first, dtype=np.float64)
        self.second = np.asarray(self.second, dtype=np.float64)
        if self.first.shape != self.second.shape:
            raise ValueError("exposures must share dimensions")
        if self.dt <= 0:
            raise ValueError("exposure separation must be positive")
        for img in (self.first, self.second):
            if img.min() < -1e-9 or img.max() > 1 + 1e-9:
                raise ValueError("pixel values must lie in [0, 1]")
