"""Named observation-set presets mirroring the server's configurations."""

from __future__ import annotations

from dataclasses import dataclass, field

PRESET_OBSERVATIONS = {
    # drag + commanded/feedback rates + dense flow estimate
    "full": dict(drag=True, commanded_rate=True, rate_feedback=True,
                 time_index=False, flow_mode="estimated"),
    # no flow; the episode time index stands in for the missing exteroception
    "noflow": dict(drag=True, commanded_rate=True, rate_feedback=True,
                   time_index=True, flow_mode="omit"),
    "drag_only": dict(drag=True, commanded_rate=False, rate_feedback=False,
                      time_index=False, flow_mode="omit"),
    # flow input present but identically zero
    "zeroed_flow": dict(drag=True, commanded_rate=True, rate_feedback=True,
                        time_index=False, flow_mode="zeroed"),
}


@dataclass
class PresetConfig:
    """An experiment recipe: what the agent sees and how the run is paced."""

    name: str = "full"
    task: str = "maximize"            # "maximize" | "minimize"
    pacing: str = "fast"              # "fast" | "realtime"
    profile: str = "desk"             # "desk" | "paper"
    flow_source: str | None = None    # override the preset's flow_mode
    extra_observations: dict = field(default_factory=dict)

    def observation_set(self) -> dict:
        if self.name not in PRESET_OBSERVATIONS:
            raise ValueError(
                f"unknown preset {self.name!r}; choose from {sorted(PRESET_OBSERVATIONS)}"
            )
        obs = dict(PRESET_OBSERVATIONS[self.name])
        if self.flow_source is not None:
            if obs["flow_mode"] == "omit":
                raise ValueError(f"preset {self.name!r} carries no flow input")
            obs["flow_mode"] = self.flow_source
        obs.update(self.extra_observations)
        return obs

    def expected_fields(self) -> set[str]:
        obs = self.observation_set()
        fields = set()
        if obs.get("drag"):
            fields.add("torque")
        if obs.get("commanded_rate"):
            fields.add("commanded_rate")
        if obs.get("rate_feedback"):
            fields.add("rate_feedback")
        if obs.get("time_index"):
            fields.add("time_index")
        if obs.get("flow_mode", "omit") != "omit":
            fields.add("flow")
        return fields


def available_presets() -> list[str]:
    return sorted(PRESET_OBSERVATIONS)
