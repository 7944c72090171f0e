"""Episodic drag-control environment wrapped around the channel solver.

One environment owns one channel. Actions are normalized rotation-rate
commands in [-1, 1]; a first-order motor model tracks them; the solver
advances a fixed number of lattice substeps per control step; raw torque is
sampled every lattice step, noised, and smoothed over a trailing window. The
reward is the signed change of the smoothed torque relative to its value at
the start of the episode, normalized by the no-control torque level.

Between episodes the channel keeps running (uncontrolled) for a
stabilization period rather than being re-initialized, matching a
continuously circulating rig.
"""

from __future__ import annotations

import hashlib
import json
import math
from collections import deque
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from ._version import __version__ as _pkg_version
from .lattice import (
    ConfigError,
    DivergenceError,
    FluidConfig,
    LatticeState,
    compute_force,
    init_lattice,
    sample_velocity_field,
    step as lattice_step,
)

FLOW_MODES = ("omit", "zeroed", "truth", "estimated")


@dataclass
class ObservationSet:
    """Which signals the agent sees; flow_mode selects the feedback path."""

    drag: bool = True
    commanded_rate: bool = True
    rate_feedback: bool = True
    time_index: bool = False
    flow_mode: str = "omit"
    flow_resolution: tuple[int, int] = (16, 16)

    def validate(self) -> None:
        if self.flow_mode not in FLOW_MODES:
            raise ConfigError(f"flow_mode must be one of {FLOW_MODES}")

    def enabled_fields(self) -> list[str]:
        names = []
        if self.drag:
            names.append("torque")
        if self.commanded_rate:
            names.append("commanded_rate")
        if self.rate_feedback:
            names.append("rate_feedback")
        if self.time_index:
            names.append("time_index")
        if self.flow_mode != "omit":
            names.append("flow")
        return names


@dataclass
class EnvConfig:
    task: str = "maximize"                # "maximize" | "minimize"
    control_rate: float = 30.0            # Hz
    episode_duration: float = 60.0        # s
    stabilization_duration: float = 60.0  # s
    action_cap: float = 15.7              # rad/s mapped to action = +/-1
    motor_time_constant: float = 0.05     # s, first-order lag
    torque_noise: float = 0.15            # mN*m std on raw samples
    parasitic_torque: bool = False        # uniform [-0.48, 0.56] mN*m disturbance
    smoothing_window: float = 1.0         # s trailing mean
    observation_set: ObservationSet = field(default_factory=ObservationSet)
    no_control_torque: float | None = None  # mN*m; None = calibrate before use
    substeps: int | None = None           # lattice steps per control step
    flow_window: tuple[float, float, float, float] | None = None  # imaging rect (m)
    flow_latency: str = "zero"            # "zero" | "one_frame"
    flowsense: dict = field(default_factory=dict)  # overrides for the imaging pipeline

    @property
    def episode_steps(self) -> int:
        n = self.episode_duration * self.control_rate
        if abs(n - round(n)) > 1e-9:
            raise ConfigError("episode_duration * control_rate must be an integer")
        return int(round(n))

    def validate(self, fluid: FluidConfig) -> None:
        if self.task not in ("maximize", "minimize"):
            raise ConfigError("task must be 'maximize' or 'minimize'")
        if self.action_cap <= 0:
            raise ConfigError("action_cap must be positive")
        if self.action_cap > fluid.rotation_cap * (1 + 1e-12):
            raise ConfigError("action_cap exceeds the solver's rotation cap")
        self.episode_steps  # integrality check
        # The control rate must comfortably oversample the fastest expected
        # wake oscillation (Strouhal bound 0.32).
        if fluid.inflow_speed > 0:
            f_wake = 0.32 * fluid.inflow_speed / fluid.diameter
            if self.control_rate < 10.0 * f_wake:
                raise ConfigError(
                    f"control_rate {self.control_rate} Hz below 10x the wake "
                    f"frequency bound {f_wake:.2f} Hz"
                )
        self.observation_set.validate()
        if self.no_control_torque is not None and self.no_control_torque <= 0:
            raise ConfigError("no_control_torque must be positive")
        if self.flow_latency not in ("zero", "one_frame"):
            raise ConfigError("flow_latency must be 'zero' or 'one_frame'")

    @classmethod
    def paper_profile(cls, **overrides) -> "EnvConfig":
        """Full-length protocol: 60 s episodes, 60 s stabilization, 30 Hz."""
        return cls(**overrides)

    @classmethod
    def desk_profile(cls, **overrides) -> "EnvConfig":
        """Short profile for interactive runs: 20 s episodes, 10 s stabilization."""
        base = dict(episode_duration=20.0, stabilization_duration=10.0)
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "EnvConfig":
        data = dict(data)
        if "observation_set" in data and isinstance(data["observation_set"], dict):
            obs = dict(data["observation_set"])
            if "flow_resolution" in obs:
                obs["flow_resolution"] = tuple(obs["flow_resolution"])
            data["observation_set"] = ObservationSet(**obs)
        if data.get("flow_window") is not None:
            data["flow_window"] = tuple(data["flow_window"])
        return cls(**data)


@dataclass
class Observation:
    """Agent-facing signal bundle; disabled fields are None and never serialized."""

    torque: float | None = None            # smoothed, mN*m
    commanded_rate: float | None = None    # normalized [-1, 1]
    rate_feedback: float | None = None     # motor rate / cap
    time_index: float | None = None        # fraction of episode elapsed
    flow: np.ndarray | None = None         # (h, w, 2) m/s

    def to_dict(self) -> dict:
        out = {}
        for name in ("torque", "commanded_rate", "rate_feedback", "time_index"):
            val = getattr(self, name)
            if val is not None:
                out[name] = float(val)
        if self.flow is not None:
            out["flow"] = np.asarray(self.flow, dtype=np.float64).tolist()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "Observation":
        flow = data.get("flow")
        if flow is not None:
            flow = np.asarray(flow, dtype=np.float64)
        return cls(
            torque=data.get("torque"),
            commanded_rate=data.get("commanded_rate"),
            rate_feedback=data.get("rate_feedback"),
            time_index=data.get("time_index"),
            flow=flow,
        )


@dataclass
class StepResult:
    observation: Observation | None
    reward: float
    done: bool
    info: dict


def smooth_torque(samples, window_samples: int | None = None) -> float:
    """Mean of the trailing window; a shorter prefix averages what exists."""
    if len(samples) == 0:
        raise ValueError("empty torque buffer")
    arr = np.asarray(samples, dtype=np.float64)
    if window_samples is not None and arr.size > window_samples:
        arr = arr[-window_samples:]
    return float(np.mean(arr))


def compute_reward(tau_start: float, tau_hat: float, task: str, tau_nc: float) -> float:
    """Signed drag change since episode start, normalized by the no-control level."""
    if tau_nc <= 0:
        raise ConfigError("no-control torque must be positive")
    sign = 1.0 if task == "maximize" else -1.0
    return sign * (tau_hat - tau_start) / tau_nc


def motor_update(omega: float, omega_cmd: float, dt: float, time_constant: float) -> float:
    """Exact discretization of a first-order lag toward omega_cmd."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if time_constant <= 0:
        return omega_cmd
    return omega + (omega_cmd - omega) * (1.0 - math.exp(-dt / time_constant))


def config_hash(fluid: FluidConfig, cfg: EnvConfig) -> str:
    """Digest of everything that defines the dynamics except the seed.

    Recordings and their replays share this hash even though each repetition
    runs its own seed.
    """
    fluid_dict = asdict(fluid)
    fluid_dict.pop("seed")
    blob = json.dumps({"fluid": fluid_dict, "env": cfg.to_dict()}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


class DragControlEnv:
    """Owns one channel plus the measurement chain; single-threaded use only.

    ``log_dir`` enables one JSON-lines file per episode plus a run manifest,
    the format consumed by the replay tooling.
    """

    def __init__(
        self,
        fluid: FluidConfig,
        cfg: EnvConfig | None = None,
        seed: int | None = None,
        log_dir=None,
    ):
        cfg = cfg or EnvConfig()
        cfg.validate(fluid)
        if seed is not None:
            fluid = FluidConfig(**{**asdict(fluid), "seed": seed})
            if isinstance(fluid.body_force, list):
                fluid.body_force = tuple(fluid.body_force)
        self.fluid = fluid
        self.cfg = cfg
        self.state: LatticeState = init_lattice(fluid)
        units = self.state.units
        if cfg.substeps is not None:
            self.substeps = int(cfg.substeps)
        else:
            self.substeps = max(1, round(1.0 / (cfg.control_rate * units.dt)))
        self.window_samples = max(1, round(cfg.smoothing_window / units.dt))
        self._torque_buf: deque[float] = deque(maxlen=self.window_samples)
        self._rng = np.random.default_rng(self.fluid.seed + 0x5EED)
        self.motor_rate = 0.0          # rad/s actually realized
        self.commanded = 0.0           # rad/s last commanded
        self.tau_start: float | None = None
        self.episode_index = -1
        self.episode_step = 0
        self.in_episode = False
        self.clip_events = 0
        self._flow_sensor = None
        self._last_flow = None
        self._rewards: list[float] = []

        self.log_dir = Path(log_dir) if log_dir is not None else None
        self._log_fh = None
        if self.log_dir is not None:
            self.log_dir.mkdir(parents=True, exist_ok=True)
            self._write_manifest()

    # -- measurement chain ----------------------------------------------

    def _raw_torque_sample(self) -> float:
        tau = compute_force(self.state).torque
        if self.cfg.torque_noise > 0:
            tau += self.cfg.torque_noise * self._rng.standard_normal()
        if self.cfg.parasitic_torque:
            tau += self._rng.uniform(-0.48, 0.56)
        return tau

    def _advance(self, omega_cmd: float, n_lattice_steps: int) -> None:
        """Run the motor + solver + torque sampling for n lattice steps."""
        dt = self.state.units.dt
        tc = self.cfg.motor_time_constant
        try:
            for _ in range(n_lattice_steps):
                self.motor_rate = motor_update(self.motor_rate, omega_cmd, dt, tc)
                lattice_step(self.state, self.motor_rate)
                self._torque_buf.append(self._raw_torque_sample())
        except DivergenceError as err:
            self._close_log()
            raise DivergenceError(
                err.step,
                f"solver diverged during episode {self.episode_index} "
                f"(control step {self.episode_step}); lower lattice_mach",
            ) from err

    def smoothed_torque(self) -> float:
        return smooth_torque(self._torque_buf)

    # -- episode protocol -------------------------------------------------

    def reset(self) -> Observation:
        """Stabilize the flow uncontrolled, then open a fresh episode."""
        self._close_log()
        n_ctrl = round(self.cfg.stabilization_duration * self.cfg.control_rate)
        for _ in range(n_ctrl):
            self._advance(0.0, self.substeps)
        if not self._torque_buf:
            self._advance(0.0, self.substeps)
        self.episode_index += 1
        self.episode_step = 0
        self.in_episode = True
        self.commanded = 0.0
        self.tau_start = self.smoothed_torque()
        self._rewards = []
        self._last_flow = None
        if self.log_dir is not None:
            path = self.log_dir / f"episode_{self.episode_index:04d}.jsonl"
            self._log_fh = open(path, "w")
        return self.assemble_observation()

    def step(self, action: float, observe: bool = True) -> StepResult:
        """Apply one normalized action and advance one control interval.

        With ``observe=False`` (replay mode) no observation is assembled and
        the flow-sensing path is skipped entirely.
        """
        if not self.in_episode:
            raise RuntimeError("step() before reset()")
        a = float(action)
        if not math.isfinite(a):
            raise ValueError("action must be finite")
        if abs(a) > 1.0:
            self.clip_events += 1
            a = math.copysign(1.0, a)
        omega_cmd = a * self.cfg.action_cap
        self.commanded = omega_cmd
        self._advance(omega_cmd, self.substeps)

        tau_hat = self.smoothed_torque()
        tau_nc = self.cfg.no_control_torque
        if tau_nc is None:
            raise ConfigError(
                "no_control_torque unset; run calibrate_no_control() or set it"
            )
        reward = compute_reward(self.tau_start, tau_hat, self.cfg.task, tau_nc)
        self.episode_step += 1
        self._rewards.append(reward)
        done = self.episode_step >= self.cfg.episode_steps
        info = {
            "raw_torque": self._torque_buf[-1],
            "smoothed_torque": tau_hat,
            "motor_rate": self.motor_rate,
            "episode_step": self.episode_step,
        }
        obs = self.assemble_observation() if observe else None
        if self._log_fh is not None:
            self._log_fh.write(json.dumps({
                "step": self.episode_step,
                "action": a,
                "omega": self.motor_rate,
                "tau_raw": info["raw_torque"],
                "tau_hat": tau_hat,
                "reward": reward,
            }) + "\n")
        if done:
            self.in_episode = False
            self._close_log()
        return StepResult(obs, reward, done, info)

    def episode_rewards(self) -> list[float]:
        return list(self._rewards)

    # -- observation assembly ---------------------------------------------

    def assemble_observation(self) -> Observation:
        obs_set = self.cfg.observation_set
        obs = Observation()
        if obs_set.drag:
            obs.torque = self.smoothed_torque()
        if obs_set.commanded_rate:
            obs.commanded_rate = self.commanded / self.cfg.action_cap
        if obs_set.rate_feedback:
            obs.rate_feedback = self.motor_rate / self.cfg.action_cap
        if obs_set.time_index:
            obs.time_index = self.episode_step / self.cfg.episode_steps
        mode = obs_set.flow_mode
        if mode != "omit":
            w, h = obs_set.flow_resolution
            if mode == "zeroed":
                obs.flow = np.zeros((h, w, 2))
            elif mode == "truth":
                obs.flow = sample_velocity_field(
                    self.state, self._imaging_window(), (w, h)
                ).vectors
            else:
                obs.flow = self._estimated_flow((w, h))
        return obs

    def _imaging_window(self) -> tuple[float, float, float, float]:
        if self.cfg.flow_window is not None:
            return self.cfg.flow_window
        # Default: a square patch of wake directly behind the cylinder.
        f = self.fluid
        cx = f.cylinder_center_x if f.cylinder_center_x is not None else f.channel_length / 4
        side = min(2.0 * f.diameter, 0.9 * f.channel_height)
        x0 = cx + f.cylinder_radius * 1.2
        y0 = (f.channel_height - side) / 2
        x1 = min(x0 + 2 * side, f.channel_length * 0.98)
        return (x0, y0, x1, y0 + side)

    def _estimated_flow(self, resolution) -> np.ndarray:
        from .flowsense.pipeline import FlowSensor

        if self._flow_sensor is None:
            self._flow_sensor = FlowSensor(
                self, self._imaging_window(), resolution, **self.cfg.flowsense
            )
        try:
            estimate = self._flow_sensor.estimate()
        except Exception:
            # A failed estimate falls back to the previous frame.
            if self._last_flow is None:
                w, h = resolution
                return np.zeros((h, w, 2))
            return self._last_flow
        if self.cfg.flow_latency == "one_frame":
            previous = self._last_flow
            self._last_flow = estimate
            if previous is None:
                return np.zeros_like(estimate)
            return previous
        self._last_flow = estimate
        return estimate

    # -- logging -----------------------------------------------------------

    def _write_manifest(self) -> None:
        manifest = {
            "config_hash": config_hash(self.fluid, self.cfg),
            "seed": self.fluid.seed,
            "version": _pkg_version,
            "fluid": asdict(self.fluid),
            "env": self.cfg.to_dict(),
            "substeps": self.substeps,
            "lattice_dt": self.state.units.dt,
            "reward_uses_smoothed_torque": True,
            "flow_latency": self.cfg.flow_latency,
        }
        with open(self.log_dir / "manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)

    def _close_log(self) -> None:
        if self._log_fh is not None:
            self._log_fh.close()
            self._log_fh = None

    def close(self) -> None:
        self._close_log()


def calibrate_no_control(
    fluid: FluidConfig, cfg: EnvConfig, episodes: int = 10, seed: int | None = None
) -> float:
    """Mean smoothed torque over uncontrolled episodes; use as no_control_torque.

    The rig-specific absolute torque level depends on geometry and lever arm,
    so it is measured rather than assumed.
    """
    probe_cfg = EnvConfig.from_dict(cfg.to_dict())
    probe_cfg.no_control_torque = 1.0  # placeholder; rewards are discarded
    env = DragControlEnv(fluid, probe_cfg, seed=seed)
    values = []
    for _ in range(episodes):
        env.reset()
        total = 0.0
        for _ in range(probe_cfg.episode_steps):
            res = env.step(0.0, observe=False)
            total += res.info["smoothed_torque"]
        values.append(total / probe_cfg.episode_steps)
    tau_nc = float(np.mean(values))
    if tau_nc <= 0:
        raise ConfigError(
            f"calibrated no-control torque {tau_nc:.4f} mN*m is not positive; "
            "check lever_arm and geometry"
        )
    return tau_nc
