"""Open-loop sinusoid evaluation: grid sweeps and ternary refinement.

Policies are rotation-rate sinusoids amplitude * sin(2*pi*f*t), phase zero at
episode start, sampled at the control instants. Scores are episode-mean drag
variation in percent of the no-control level, signed by the task so that
larger is always better.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .env import DragControlEnv, EnvConfig, config_hash
from .lattice import ConfigError, DivergenceError, FluidConfig

PAPER_AMPLITUDES = (7.85, 10.467, 13.083, 15.700)


@dataclass(frozen=True)
class SinusoidPolicy:
    amplitude: float  # rad/s
    frequency: float  # Hz

    def action_at(self, t: float, cap: float) -> float:
        return (self.amplitude / cap) * math.sin(2.0 * math.pi * self.frequency * t)

    def validate(self, cap: float, control_rate: float) -> None:
        if not 0.0 <= self.amplitude <= cap * (1 + 1e-12):
            raise ConfigError(f"amplitude {self.amplitude} outside [0, {cap}]")
        # At least ten control updates per period.
        if not 0.0 <= self.frequency <= control_rate / 10.0 + 1e-12:
            raise ConfigError(
                f"frequency {self.frequency} Hz outside [0, {control_rate / 10:.2f}] "
                "(ten control updates per period required)"
            )


@dataclass
class PolicyScore:
    mean: float
    min: float
    max: float
    reps: int
    values: list[float]
    failures: int = 0

    @classmethod
    def from_values(cls, values, failures=0) -> "PolicyScore":
        vals = [float(v) for v in values]
        if not vals:
            raise ValueError("no successful repetitions")
        return cls(
            mean=float(np.mean(vals)),
            min=min(vals),
            max=max(vals),
            reps=len(vals),
            values=vals,
            failures=failures,
        )

    @property
    def stderr(self) -> float:
        if self.reps < 2:
            return 0.0
        return float(np.std(self.values, ddof=1) / math.sqrt(self.reps))


def run_policy_episode(env: DragControlEnv, action_fn) -> float:
    """One full episode; returns the episode-mean drag variation in percent."""
    env.reset()
    total = 0.0
    n = env.cfg.episode_steps
    dt_ctrl = 1.0 / env.cfg.control_rate
    for k in range(n):
        res = env.step(action_fn(k * dt_ctrl), observe=False)
        total += res.reward
    return 100.0 * total / n


def eval_sinusoid(
    policy: SinusoidPolicy,
    reps: int,
    fluid: FluidConfig,
    cfg: EnvConfig,
    base_seed: int = 0,
) -> PolicyScore:
    """Score a sinusoid over ``reps`` episodes with per-repetition seeds.

    Repetitions that diverge are excluded and counted in ``failures``.
    """
    policy.validate(cfg.action_cap, cfg.control_rate)
    values = []
    failures = 0
    for rep in range(reps):
        env = DragControlEnv(fluid, cfg, seed=base_seed + 1000 * rep)
        try:
            values.append(run_policy_episode(
                env, lambda t: policy.action_at(t, cfg.action_cap)
            ))
        except DivergenceError:
            failures += 1
    return PolicyScore.from_values(values, failures)


def paper_grid() -> tuple[tuple[float, ...], tuple[float, ...]]:
    """The coarse scan grid: four amplitudes x frequencies 0..3 Hz step 0.1."""
    freqs = tuple(round(0.1 * k, 10) for k in range(31))
    return PAPER_AMPLITUDES, freqs


def _cell_key(fluid: FluidConfig, cfg: EnvConfig, policy: SinusoidPolicy, reps: int, seed: int) -> str:
    blob = json.dumps(
        {
            "config": config_hash(fluid, cfg),
            "A": policy.amplitude,
            "f": policy.frequency,
            "reps": reps,
            "seed": seed,
        },
        sort_keys=True,
    )
    return hashlib.sha256(blob.encode()).hexdigest()[:20]


def _eval_cell(args):
    fluid_dict, cfg_dict, a, f, reps, seed = args
    fluid = FluidConfig(**fluid_dict)
    fluid.body_force = tuple(fluid.body_force)
    cfg = EnvConfig.from_dict(cfg_dict)
    score = eval_sinusoid(SinusoidPolicy(a, f), reps, fluid, cfg, base_seed=seed)
    return a, f, score


def grid_sweep(
    amplitudes,
    frequencies,
    reps: int,
    fluid: FluidConfig,
    cfg: EnvConfig,
    base_seed: int = 0,
    cache_dir=None,
    workers: int = 1,
) -> list[dict]:
    """Score every (amplitude, frequency) cell; returns rows sorted best-first.

    Results are cached per cell (keyed by the full configuration) so an
    interrupted sweep resumes, and merged in cell order regardless of worker
    completion order.
    """
    amplitudes = list(amplitudes)
    frequencies = list(frequencies)
    if not amplitudes or not frequencies:
        raise ValueError("amplitude and frequency grids must be non-empty")
    cache = Path(cache_dir) if cache_dir else None
    if cache:
        cache.mkdir(parents=True, exist_ok=True)

    cells = [(a, f) for a in amplitudes for f in frequencies]
    results: dict[tuple[float, float], PolicyScore] = {}
    pending = []
    for a, f in cells:
        key = _cell_key(fluid, cfg, SinusoidPolicy(a, f), reps, base_seed)
        path = cache / f"{key}.json" if cache else None
        if path is not None and path.exists():
            with open(path) as fh:
                data = json.load(fh)
            results[(a, f)] = PolicyScore(**data)
        else:
            pending.append((a, f, path))

    def finish(a, f, score, path):
        results[(a, f)] = score
        if path is not None:
            with open(path, "w") as fh:
                json.dump(asdict(score), fh)

    if workers > 1 and len(pending) > 1:
        args = [
            (asdict(fluid), cfg.to_dict(), a, f, reps, base_seed)
            for a, f, _ in pending
        ]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for (a, f, path), (_, _, score) in zip(pending, pool.map(_eval_cell, args)):
                finish(a, f, score, path)
    else:
        for a, f, path in pending:
            score = eval_sinusoid(SinusoidPolicy(a, f), reps, fluid, cfg, base_seed=base_seed)
            finish(a, f, score, path)

    rows = [
        {"amplitude": a, "frequency": f, **asdict(results[(a, f)])}
        for a, f in cells
    ]
    rows.sort(key=lambda r: r["mean"], reverse=True)
    return rows


def sweep_to_csv(rows, path) -> None:
    fields = ["amplitude", "frequency", "mean", "min", "max", "reps", "failures"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore")
        writer.writeheader()
        writer.writerows(rows)


@dataclass
class TernaryResult:
    frequency: float
    score: float
    interval: tuple[float, float]
    evaluations: list[tuple[float, float]]

    @property
    def width(self) -> float:
        return self.interval[1] - self.interval[0]


def ternary_search(score_fn, f_lo: float, f_hi: float, steps: int) -> TernaryResult:
    """Maximize a unimodal score over [f_lo, f_hi] by interval thirds.

    ``score_fn(f)`` returns either a score or a (score, stderr) pair. Probe
    scores within half the combined standard error are treated as a tie and
    both outer thirds are dropped, so noisy plateaus shrink toward the
    center. Each step keeps at most 2/3 of the interval; the midpoint of the
    final interval is returned with its score.
    """
    if not f_lo < f_hi:
        raise ValueError("need f_lo < f_hi")
    if steps < 0:
        raise ValueError("steps must be non-negative")

    def probe(f):
        out = score_fn(f)
        if isinstance(out, tuple):
            return float(out[0]), float(out[1])
        return float(out), 0.0

    lo, hi = float(f_lo), float(f_hi)
    evals: list[tuple[float, float]] = []
    for _ in range(steps):
        m1 = lo + (hi - lo) / 3.0
        m2 = hi - (hi - lo) / 3.0
        s1, e1 = probe(m1)
        s2, e2 = probe(m2)
        evals.append((m1, s1))
        evals.append((m2, s2))
        if abs(s1 - s2) <= 0.5 * (e1 + e2):
            lo, hi = m1, m2
        elif s1 < s2:
            lo = m1
        else:
            hi = m2
    mid = 0.5 * (lo + hi)
    score, _ = probe(mid)
    evals.append((mid, score))
    return TernaryResult(mid, score, (lo, hi), evals)


def ternary_search_env(
    amplitude: float,
    f_lo: float,
    f_hi: float,
    steps: int,
    reps: int,
    fluid: FluidConfig,
    cfg: EnvConfig,
    base_seed: int = 0,
) -> TernaryResult:
    """Ternary refinement of the frequency at fixed amplitude on the channel."""

    def score_fn(f):
        score = eval_sinusoid(SinusoidPolicy(amplitude, f), reps, fluid, cfg, base_seed)
        return score.mean, score.stderr

    return ternary_search(score_fn, f_lo, f_hi, steps)
