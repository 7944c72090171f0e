"""Record action trajectories, replay them open-loop, compare the curves.

A recorded trajectory is the verbatim sequence of normalized commands from
one episode log. Replaying executes it with observations disabled entirely;
with the recording seed and zero sensor noise the replayed episode is
bit-identical to the recorded one, while fresh seeds probe run-to-run
variability. The probe utilities classify whether the early torque response
of a policy moves with or against its long-run effect.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .env import DragControlEnv, EnvConfig, config_hash as env_config_hash
from .lattice import FluidConfig
from .openloop import SinusoidPolicy, run_policy_episode


@dataclass
class ActionTrajectory:
    """One episode's commands plus enough metadata to validate a replay."""

    actions: np.ndarray
    session_id: str = ""
    episode_index: int = 0
    observation_set: dict = field(default_factory=dict)
    config_hash: str = ""
    seed: int | None = None

    def __post_init__(self):
        self.actions = np.asarray(self.actions, dtype=np.float64)
        if self.actions.ndim != 1:
            raise ValueError("actions must be a flat sequence")
        bad = np.nonzero(np.abs(self.actions) > 1.0 + 1e-12)[0]
        if bad.size:
            raise ValueError(f"action out of [-1, 1] at index {int(bad[0])}")

    def __len__(self) -> int:
        return int(self.actions.size)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump({
                "actions": self.actions.tolist(),
                "session_id": self.session_id,
                "episode_index": self.episode_index,
                "observation_set": self.observation_set,
                "config_hash": self.config_hash,
                "seed": self.seed,
            }, fh)

    @classmethod
    def load(cls, path) -> "ActionTrajectory":
        with open(path) as fh:
            data = json.load(fh)
        return cls(**data)


def record(log_path, expected_steps: int, session_id: str = "", episode_index: int = 0,
           observation_set: dict | None = None, config_hash: str = "",
           seed: int | None = None) -> ActionTrajectory:
    """Extract the commanded actions from an episode log, verbatim.

    Rejects logs that are truncated or padded relative to ``expected_steps``
    and logs containing out-of-range actions.
    """
    actions = []
    with open(log_path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            entry = json.loads(line)
            actions.append(float(entry["action"]))
    if len(actions) != expected_steps:
        raise ValueError(
            f"episode log has {len(actions)} steps, expected {expected_steps}; "
            "refusing a truncated or mismatched recording"
        )
    return ActionTrajectory(
        np.array(actions), session_id=session_id, episode_index=episode_index,
        observation_set=observation_set or {}, config_hash=config_hash, seed=seed,
    )


def running_average_curve(rewards) -> np.ndarray:
    """Point k is 100 * mean(rewards[0..k]), the running drag variation in %."""
    arr = np.asarray(rewards, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("empty reward sequence")
    return 100.0 * np.cumsum(arr) / np.arange(1, arr.size + 1)


@dataclass
class CurveSet:
    """Per-repetition running-average curves on a shared episode-time axis."""

    t: np.ndarray               # seconds into the episode
    curves: np.ndarray          # (reps, n) percent vs no-control
    rewards: np.ndarray         # (reps, n) raw per-step rewards

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.float64)
        self.curves = np.atleast_2d(np.asarray(self.curves, dtype=np.float64))
        self.rewards = np.atleast_2d(np.asarray(self.rewards, dtype=np.float64))
        if self.curves.shape[1] != self.t.size:
            raise ValueError("curves do not share the time axis")

    @property
    def mean(self) -> np.ndarray:
        return self.curves.mean(axis=0)

    @property
    def lo(self) -> np.ndarray:
        return self.curves.min(axis=0)

    @property
    def hi(self) -> np.ndarray:
        return self.curves.max(axis=0)

    @property
    def final_scores(self) -> np.ndarray:
        return self.curves[:, -1]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t_s", "mean", "min", "max"])
            if self.t.size and self.curves.size:
                for k in range(self.t.size):
                    writer.writerow([
                        f"{self.t[k]:.6f}", f"{self.mean[k]:.6f}",
                        f"{self.lo[k]:.6f}", f"{self.hi[k]:.6f}",
                    ])

    @classmethod
    def empty(cls) -> "CurveSet":
        return cls(np.zeros(0), np.zeros((1, 0)), np.zeros((1, 0)))


def replay(
    traj: ActionTrajectory,
    reps: int,
    fluid: FluidConfig,
    cfg: EnvConfig,
    seed_policy: str = "fresh",
    base_seed: int = 0,
) -> CurveSet:
    """Execute a trajectory open-loop ``reps`` times and collect the curves.

    ``seed_policy='same'`` reuses the trajectory's recording seed for every
    repetition (the determinism check); ``'fresh'`` draws a new seed per
    repetition (the variability study). The environment configuration must
    match the recording length exactly; nothing is resampled.
    """
    if seed_policy not in ("same", "fresh"):
        raise ValueError("seed_policy must be 'same' or 'fresh'")
    if cfg.episode_steps != len(traj):
        raise ValueError(
            f"episode length mismatch: config yields {cfg.episode_steps} steps, "
            f"trajectory has {len(traj)}; adjust control_rate/episode_duration"
        )
    if traj.config_hash and traj.config_hash != env_config_hash(fluid, cfg):
        raise ValueError("configuration hash differs from the recording")

    curves = []
    rewards_all = []
    for rep in range(reps):
        if seed_policy == "same":
            seed = traj.seed if traj.seed is not None else base_seed
        else:
            seed = base_seed + 7919 * (rep + 1)
        env = DragControlEnv(fluid, cfg, seed=seed)
        env.reset()
        rewards = np.empty(len(traj))
        for k, action in enumerate(traj.actions):
            rewards[k] = env.step(float(action), observe=False).reward
        rewards_all.append(rewards)
        curves.append(running_average_curve(rewards))
    t = (np.arange(len(traj)) + 1) / cfg.control_rate
    return CurveSet(t, np.array(curves), np.array(rewards_all))


def transient_alignment(tau_hat: np.ndarray, window_steps: int) -> tuple[int, int]:
    """Signs of the first smoothed-window change and of the long-run change.

    ``tau_hat`` is a smoothed torque series starting at the actuation onset;
    the initial change is measured one full smoothing window in, the long-run
    change at the end of the series.
    """
    arr = np.asarray(tau_hat, dtype=np.float64)
    if arr.size < 2:
        raise ValueError("need at least two samples")
    k = min(max(1, window_steps), arr.size - 1)
    initial = arr[k] - arr[0]
    long_run = arr[-1] - arr[0]
    return int(np.sign(initial)), int(np.sign(long_run))


@dataclass
class ProbeEntry:
    name: str
    initial_change: float
    long_run_change: float
    initial_sign: int
    long_run_sign: int
    anti_aligned: bool


@dataclass
class ProbeReport:
    entries: list[ProbeEntry]
    correlation: float

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump({
                "entries": [asdict(e) for e in self.entries],
                "correlation": self.correlation,
            }, fh, indent=2)


def anti_alignment_probe(
    fluid: FluidConfig,
    cfg: EnvConfig,
    policies: list | None = None,
    base_seed: int = 0,
) -> ProbeReport:
    """Measure early-vs-long-run torque response for a family of actuations.

    The family defaults to an impulsive full-cap spin-up plus a few strong
    sinusoids. Each policy runs one episode from a stabilized wake; the probe
    records the smoothed-torque change one smoothing window after onset, the
    episode-end change, their signs, and the correlation of early and final
    changes across the family. It reports; it asserts nothing about the
    physics.
    """
    if policies is None:
        cap = cfg.action_cap
        policies = [
            ("step_spin_up", lambda t: 1.0),
            ("sin_A1.0_f0.8", SinusoidPolicy(cap, 0.8)),
            ("sin_A1.0_f2.0", SinusoidPolicy(cap, 2.0)),
            ("sin_A0.5_f0.8", SinusoidPolicy(0.5 * cap, 0.8)),
        ]
    entries = []
    window_ctrl = max(1, round(cfg.smoothing_window * cfg.control_rate))
    for item in policies:
        name, policy = item
        env = DragControlEnv(fluid, cfg, seed=base_seed)
        env.reset()
        tau_series = [env.tau_start]
        n = cfg.episode_steps
        dt_ctrl = 1.0 / cfg.control_rate
        for k in range(n):
            if isinstance(policy, SinusoidPolicy):
                a = policy.action_at(k * dt_ctrl, cfg.action_cap)
            else:
                a = policy(k * dt_ctrl)
            res = env.step(a, observe=False)
            tau_series.append(res.info["smoothed_torque"])
        si, sl = transient_alignment(np.array(tau_series), window_ctrl)
        initial = tau_series[min(window_ctrl, n)] - tau_series[0]
        long_run = tau_series[-1] - tau_series[0]
        entries.append(ProbeEntry(
            name=name,
            initial_change=float(initial),
            long_run_change=float(long_run),
            initial_sign=si,
            long_run_sign=sl,
            anti_aligned=(si != 0 and sl != 0 and si != sl),
        ))
    x = np.array([e.initial_change for e in entries])
    y = np.array([e.long_run_change for e in entries])
    if x.size >= 2 and np.std(x) > 0 and np.std(y) > 0:
        corr = float(np.corrcoef(x, y)[0, 1])
    else:
        corr = float("nan")
    return ProbeReport(entries, corr)


def record_episode_with_policy(
    fluid: FluidConfig, cfg: EnvConfig, policy: SinusoidPolicy, seed: int, log_dir
) -> tuple[ActionTrajectory, CurveSet]:
    """Run one logged closed-protocol episode of a sinusoid and record it."""
    log_dir = Path(log_dir)
    env = DragControlEnv(fluid, cfg, seed=seed, log_dir=log_dir)
    run_policy_episode(env, lambda t: policy.action_at(t, cfg.action_cap))
    rewards = np.array(env.episode_rewards())
    traj = record(
        log_dir / f"episode_{env.episode_index:04d}.jsonl",
        cfg.episode_steps,
        session_id="sinusoid",
        episode_index=env.episode_index,
        config_hash=env_config_hash(fluid, cfg),
        seed=seed,
    )
    t = (np.arange(rewards.size) + 1) / cfg.control_rate
    return traj, CurveSet(t, running_average_curve(rewards)[None, :], rewards[None, :])
