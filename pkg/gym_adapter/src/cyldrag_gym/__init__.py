"""Client for the drag-control channel's wire protocol.

``make_env`` returns a reset/step/close handle; :mod:`presets` names the
observation configurations; :mod:`runner` drives training experiments and
writes learning-curve CSVs.
"""

from .client import RemoteDragEnv, ServerProcess, make_env
from .presets import PresetConfig, available_presets
from .runner import RandomAgent, load_agent, parse_budget, run_experiment

__version__ = "0.1.0"
