"""Training-experiment driver: agents over the wire, curves to CSV."""

from __future__ import annotations

import csv
import importlib
import re
from pathlib import Path

import numpy as np

from .client import make_env
from .presets import PresetConfig

# Horizon-matched discount for model-free baselines plugged in via agent_spec.
DEFAULT_AGENT_KWARGS = {"discount": 0.999}


class RandomAgent:
    """Uniform actions in [-1, 1]; the smoke-test baseline."""

    def __init__(self, seed: int = 0, **_):
        self.rng = np.random.default_rng(seed)

    def act(self, obs) -> float:
        return float(self.rng.uniform(-1.0, 1.0))

    def observe(self, obs, action, reward, next_obs, done) -> None:
        pass


def load_agent(agent_spec: str, seed: int = 0, **kwargs):
    """Instantiate 'random' or a 'module:callable' plugin agent."""
    merged = {**DEFAULT_AGENT_KWARGS, **kwargs}
    if agent_spec == "random":
        return RandomAgent(seed=seed)
    if ":" not in agent_spec:
        raise ValueError(
            f"unknown agent {agent_spec!r}: use 'random' or 'module:callable'"
        )
    mod_name, attr = agent_spec.split(":", 1)
    factory = getattr(importlib.import_module(mod_name), attr)
    return factory(seed=seed, **merged)


def parse_budget(budget) -> int:
    """'60ep' / '3ep' / plain int -> number of episodes."""
    if isinstance(budget, int):
        return budget
    match = re.fullmatch(r"(\d+)\s*ep", str(budget).strip())
    if not match:
        raise ValueError(f"budget must look like '60ep', got {budget!r}")
    return int(match.group(1))


def run_training(endpoint: str, preset: PresetConfig, agent, episodes: int):
    """One training run; returns per-episode mean drag-variation scores (%)."""
    scores = []
    with make_env(preset, endpoint) as env:
        for _ in range(episodes):
            obs = env.reset()
            rewards = []
            done = False
            while not done:
                action = agent.act(obs)
                next_obs, reward, done, _ = env.step(action)
                agent.observe(obs, action, reward, next_obs, done)
                rewards.append(reward)
                obs = next_obs
            scores.append(100.0 * float(np.mean(rewards)))
    return scores


def run_experiment(
    agent_spec: str,
    preset: PresetConfig,
    budget,
    repetitions: int,
    endpoint: str,
    out_dir,
    episode_duration: float = 20.0,
    base_seed: int = 0,
    agent_kwargs: dict | None = None,
) -> Path:
    """Drive ``repetitions`` training runs and write learning-curve CSVs.

    The aggregate CSV shares the replay curve schema (t_s, mean, min, max)
    with t the cumulative in-episode training time, so one plotting path
    serves both. Partial curves survive an agent crash.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    episodes = parse_budget(budget)
    all_scores: list[list[float]] = []
    for rep in range(repetitions):
        agent = load_agent(agent_spec, seed=base_seed + rep, **(agent_kwargs or {}))
        try:
            scores = run_training(endpoint, preset, agent, episodes)
        except Exception:
            if not all_scores:
                raise
            break
        all_scores.append(scores)
        with open(out_dir / f"run_{rep:02d}.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t_s", "score_pct"])
            for k, score in enumerate(scores):
                writer.writerow([f"{(k + 1) * episode_duration:.6f}", f"{score:.6f}"])

    table = np.array(all_scores)
    out = out_dir / "learning_curve.csv"
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t_s", "mean", "min", "max"])
        for k in range(table.shape[1]):
            col = table[:, k]
            writer.writerow([
                f"{(k + 1) * episode_duration:.6f}",
                f"{col.mean():.6f}", f"{col.min():.6f}", f"{col.max():.6f}",
            ])
    return out
