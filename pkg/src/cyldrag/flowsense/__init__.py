"""Flow sensing: synthetic tracer imaging and patch-based flow estimation."""

from .dis import FlowParams, estimate_flow
from .pipeline import (
    BenchmarkCase,
    BenchmarkReport,
    FlowSensor,
    benchmark_aee,
    calibrate_and_downsample,
    lattice_field_sampler,
)
from .synth import ImagePair, OpticsConfig, ParticleSet, render, seed_and_advect, seed_particles
