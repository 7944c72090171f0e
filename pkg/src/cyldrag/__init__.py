"""Desk-scale twin of a water-channel drag-control rig.

Layers: a D2Q9 channel-flow solver around a spinning cylinder
(:mod:`cyldrag.lattice`), the episodic control environment built on it
(:mod:`cyldrag.env`), synthetic tracer-image flow sensing
(:mod:`cyldrag.flowsense`), open-loop sinusoid search
(:mod:`cyldrag.openloop`), action-trajectory recording and replay
(:mod:`cyldrag.replay`), and a newline-JSON wire protocol for external
learning agents (:mod:`cyldrag.bridge`).
"""

from ._version import __version__
from .lattice import (
    ConfigError,
    DivergenceError,
    FluidConfig,
    ForceSample,
    LatticeState,
    UnitSystem,
    compute_force,
    desk_config,
    init_lattice,
    init_from_fields,
    sample_velocity_field,
    save_snapshot,
    step,
    strouhal_of,
)
from .grids import FlowField, read_raw_grid, write_raw_grid, write_pgm, read_pgm
from .env import (
    DragControlEnv,
    EnvConfig,
    Observation,
    ObservationSet,
    StepResult,
    calibrate_no_control,
    compute_reward,
    motor_update,
    smooth_torque,
)
from .openloop import (
    PolicyScore,
    SinusoidPolicy,
    eval_sinusoid,
    grid_sweep,
    paper_grid,
    ternary_search,
)
# record() and replay() stay namespaced under cyldrag.replay so the function
# names do not shadow the submodule.
from .replay import (
    ActionTrajectory,
    CurveSet,
    anti_alignment_probe,
    running_average_curve,
    transient_alignment,
)
