"""Hard-sphere gas dynamics in the low-density scaling, with the
statistical machinery to test kinetic limits: law of large numbers
against a velocity-discretized collisional solver, Gaussian fluctuation
fields against a linearized stochastic equation, cumulant and generating
function estimators, collision-history expansions, and large-deviation
rate functionals with their Hamilton-Jacobi structure.
"""

from .dynamics import (
    CollisionEvent,
    OverlapError,
    Particle,
    ScalingConfig,
    SystemState,
    Trajectory,
    ZenoCascadeError,
    advance_free,
    min_pair_distance,
    predict_pair_collision,
    reflect_velocities,
    run,
    time_reverse,
)

__all__ = [
    "CollisionEvent",
    "OverlapError",
    "Particle",
    "ScalingConfig",
    "SystemState",
    "Trajectory",
    "ZenoCascadeError",
    "advance_free",
    "min_pair_distance",
    "predict_pair_collision",
    "reflect_velocities",
    "run",
    "time_reverse",
]

__version__ = "0.1.0"
