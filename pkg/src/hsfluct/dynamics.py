"""Event-driven hard-sphere gas on the unit torus in dimension 2 or 3.

Particles are spheres of diameter ``epsilon`` whose centers stream freely
between elastic pairwise collisions.  The dynamics is simulated exactly
(up to floating-point roundoff): contact times are roots of per-pair
quadratics, processed in order through an event heap with stale entries
invalidated by per-particle collision counters.

Scaling: configurations are meant to be sampled with on the order of
``mu = epsilon^-(d-1)`` particles, which keeps the per-particle collision
rate order one as ``epsilon -> 0``.  Nothing in the integrator itself
depends on that coupling; :class:`ScalingConfig` merely enforces it for
the statistical layers built on top.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from . import _dynamics_kernels as _k


class ZenoCascadeError(RuntimeError):
    """Collision times accumulated faster than the blowup guard allows."""


class OverlapError(RuntimeError):
    """Sphere overlap where the dynamics requires separation."""


@dataclasses.dataclass(frozen=True)
class ScalingConfig:
    """Sphere diameter, expected particle number, and their coupling."""

    d: int
    epsilon: float
    mu: float

    def __post_init__(self):
        if self.d not in (2, 3):
            raise ValueError(f"dimension must be 2 or 3, got {self.d}")
        if not 0.0 < self.epsilon < 0.25:
            raise ValueError(f"epsilon must lie in (0, 0.25), got {self.epsilon}")
        if abs(self.mu * self.epsilon ** (self.d - 1) - 1.0) > 1e-12:
            raise ValueError(
                "mu * epsilon^(d-1) must equal 1: "
                f"mu={self.mu!r}, epsilon={self.epsilon!r}, d={self.d}"
            )

    @classmethod
    def from_epsilon(cls, d: int, epsilon: float) -> "ScalingConfig":
        epsilon = float(epsilon)
        return cls(d=d, epsilon=epsilon, mu=epsilon ** -(d - 1))

    @classmethod
    def from_mu(cls, d: int, mu: float) -> "ScalingConfig":
        mu = float(mu)
        return cls(d=d, epsilon=mu ** (-1.0 / (d - 1)), mu=mu)


@dataclasses.dataclass(frozen=True)
class Particle:
    x: np.ndarray
    v: np.ndarray


@dataclasses.dataclass
class SystemState:
    """Positions and velocities of all spheres at a common time."""

    x: np.ndarray
    v: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.x = np.ascontiguousarray(self.x, dtype=np.float64)
        self.v = np.ascontiguousarray(self.v, dtype=np.float64)
        if self.x.ndim != 2 or self.x.shape != self.v.shape:
            raise ValueError("x and v must be matching (N, d) arrays")
        if self.x.shape[1] not in (2, 3):
            raise ValueError("dimension must be 2 or 3")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    @property
    def particles(self) -> list:
        return [Particle(self.x[i].copy(), self.v[i].copy()) for i in range(self.n)]

    def copy(self) -> "SystemState":
        return SystemState(self.x.copy(), self.v.copy(), self.time)

    def kinetic_energy(self) -> float:
        return 0.5 * float((self.v * self.v).sum())

    def momentum(self) -> np.ndarray:
        return self.v.sum(axis=0)


@dataclasses.dataclass(frozen=True)
class CollisionEvent:
    """One processed collision: time, pair (i < j), contact direction.

    ``omega`` is the unit vector from the center of ``j`` to the center of
    ``i`` at contact; the reflection subtracts the normal relative velocity
    component along it from ``i`` and adds it to ``j``.
    """

    time: float
    i: int
    j: int
    omega: np.ndarray


@dataclasses.dataclass
class Trajectory:
    """Event log of a run, sufficient to reconstruct any intermediate state."""

    config: ScalingConfig
    initial: SystemState
    times: np.ndarray
    idx_i: np.ndarray
    idx_j: np.ndarray
    omegas: np.ndarray
    final: SystemState
    n_transfers: int = 0

    @property
    def n_events(self) -> int:
        return int(self.times.shape[0])

    @property
    def final_time(self) -> float:
        return self.final.time

    def events(self):
        for m in range(self.n_events):
            yield CollisionEvent(
                float(self.times[m]), int(self.idx_i[m]), int(self.idx_j[m]),
                self.omegas[m].copy(),
            )

    def state_at(self, t: float) -> SystemState:
        """Replay the log up to time t (within the simulated span)."""
        t0 = self.initial.time
        if t < t0 - 1e-12 or t > self.final_time + 1e-12:
            raise ValueError(
                f"t={t} outside simulated span [{t0}, {self.final_time}]"
            )
        x, v = _k._replay(
            self.initial.x, self.initial.v, t0,
            self.times, self.idx_i, self.idx_j, self.omegas, float(t),
        )
        return SystemState(x, v, float(t))


def reflect_velocities(v1, v2, omega):
    """Elastic hard-sphere reflection: exchange normal components along omega."""
    v1 = np.asarray(v1, dtype=float)
    v2 = np.asarray(v2, dtype=float)
    omega = np.asarray(omega, dtype=float)
    lam = float(np.dot(v1 - v2, omega))
    return v1 - lam * omega, v2 + lam * omega


def predict_pair_collision(x1, v1, x2, v2, epsilon: float):
    """First contact time of two spheres on the torus, or None.

    Valid over one full period of relative displacement (periodic images
    are scanned, including wraparound re-encounters).  Grazing encounters,
    where the contact would be tangential, count as no collision.
    """
    t = _k._predict_public(
        np.ascontiguousarray(x1, dtype=np.float64),
        np.ascontiguousarray(v1, dtype=np.float64),
        np.ascontiguousarray(x2, dtype=np.float64),
        np.ascontiguousarray(v2, dtype=np.float64),
        float(epsilon),
    )
    return float(t) if t >= 0.0 else None


def advance_free(state: SystemState, dt: float) -> SystemState:
    """Ballistic streaming with periodic wrap; ignores collisions."""
    x = state.x + state.v * dt
    x -= np.floor(x)
    return SystemState(x, state.v.copy(), state.time + dt)


def time_reverse(state: SystemState) -> SystemState:
    """Momentum-reversed state at the same positions and clock."""
    return SystemState(state.x.copy(), -state.v, state.time)


def min_pair_distance(state: SystemState) -> float:
    """Smallest center-to-center torus distance, brute force O(N^2)."""
    return float(_k._min_pair_distance(state.x))


def _cell_count_cap(epsilon: float) -> int:
    cap = int(np.floor(1.0 / epsilon))
    while cap > 4 and 1.0 / cap <= epsilon * (1.0 + 1e-12):
        cap -= 1
    return max(cap, 4)


def _choose_n_cells(epsilon: float, n: int, d: int) -> int:
    # aim for a few particles per cell, but never let cells shrink to the
    # sphere diameter (the neighborhood sweep requires cell side > epsilon)
    target = int(round((max(n, 1) / 3.0) ** (1.0 / d)))
    return int(np.clip(target, 4, _cell_count_cap(epsilon)))


def run(state: SystemState, config: ScalingConfig, t_end=None, *,
        max_events=None, n_cells=None, zeno_count: int = 10_000,
        zeno_window: float = 1e-9, check_initial: bool = True) -> Trajectory:
    """Evolve a state by event-driven dynamics and return the trajectory.

    Stops at ``t_end``, or after ``max_events`` processed collisions,
    whichever comes first.  At least one of the two must be given.

    Raises :class:`OverlapError` if the initial configuration overlaps
    (when ``check_initial``) or if the engine detects an inconsistent
    contact, and :class:`ZenoCascadeError` if more than ``zeno_count``
    collisions occur within a ``zeno_window`` time span.
    """
    if state.d != config.d:
        raise ValueError(f"state dimension {state.d} != config dimension {config.d}")
    if t_end is None:
        if max_events is None:
            raise ValueError("need t_end or max_events (or both)")
        t_end = 1e12  # effectively unbounded; max_events terminates the run
    t_end = float(t_end)
    if t_end < state.time:
        raise ValueError(f"t_end={t_end} precedes state.time={state.time}")

    x = state.x.copy()
    x -= np.floor(x)
    v = state.v.copy()
    n = state.n

    if n_cells is None:
        n_cells = _choose_n_cells(config.epsilon, n, config.d)
    n_cells = int(n_cells)
    if n_cells < 4 or 1.0 / n_cells <= config.epsilon:
        raise ValueError(f"n_cells={n_cells} incompatible with epsilon={config.epsilon}")

    if check_initial and n > 1:
        if _k._has_overlap_cells(x, config.epsilon * (1.0 - 1e-12), n_cells):
            raise OverlapError("initial configuration has overlapping spheres")

    max_coll = -1 if max_events is None else int(max_events)
    if max_coll == 0:
        raise ValueError("max_events must be positive")
    ev_cap0 = max_coll if max_coll > 0 else 4096

    initial = SystemState(x.copy(), v.copy(), state.time)
    status, t_fin, n_coll, n_transfer, ev_t, ev_i, ev_j, ev_om, diag = \
        _k._run_events(x, v, float(state.time), t_end, float(config.epsilon),
                       n_cells, max_coll, int(zeno_count), float(zeno_window),
                       int(ev_cap0))

    if status == _k.STATUS_ZENO:
        raise ZenoCascadeError(
            f"{zeno_count} collisions within {zeno_window} around t={diag[0]:.6g} "
            f"(last pair {int(diag[1])},{int(diag[2])})"
        )
    if status == _k.STATUS_CORRUPT:
        raise OverlapError(
            f"inconsistent contact at t={diag[0]:.6g} for pair "
            f"({int(diag[1])},{int(diag[2])}): distance {diag[3]:.12g}"
        )

    return Trajectory(
        config=config,
        initial=initial,
        times=ev_t[:n_coll].copy(),
        idx_i=ev_i[:n_coll].copy(),
        idx_j=ev_j[:n_coll].copy(),
        omegas=ev_om[:n_coll].copy(),
        final=SystemState(x, v, t_fin),
        n_transfers=int(n_transfer),
    )
