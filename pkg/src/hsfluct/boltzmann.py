"""Deterministic reference solver for the spatially homogeneous hard-sphere
kinetic equation, plus the linearized operator and its adjoint around a
solution. The stochastic particle oracle lives in dsmc.py.
"""

import dataclasses
from typing import Optional

import numpy as np

from . import collision as _c
from .collision import KERNEL_MASS, AngularDesign, default_design  # noqa: F401
from .dsmc import DsmcResult, dsmc_run  # noqa: F401  (same-physics oracle)
from .vgrid import VelocityGrid


@dataclasses.dataclass(frozen=True)
class VelocityGridFn:
    """Flat values on a velocity grid with a time stamp."""

    grid: VelocityGrid
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        vals = np.ascontiguousarray(np.asarray(self.values, float))
        if vals.shape != (self.grid.n_nodes,):
            raise ValueError("values must be flat over the grid nodes")
        if not np.isfinite(vals).all():
            raise ValueError("values must be finite")
        object.__setattr__(self, "values", vals)

    @property
    def mass(self) -> float:
        return self.grid.integrate(self.values)

    def momentum(self) -> np.ndarray:
        nodes = self.grid.nodes()
        return (self.values[:, None] * nodes).sum(axis=0) \
            * self.grid.cell_volume

    def energy(self) -> float:
        nodes = self.grid.nodes()
        return float((self.values * (nodes ** 2).sum(axis=1)).sum()
                     * self.grid.cell_volume)

    def with_values(self, values, time: Optional[float] = None):
        return VelocityGridFn(self.grid, values,
                              self.time if time is None else float(time))


def grid_density(grid: VelocityGrid, profile, time: float = 0.0):
    return VelocityGridFn(grid, grid.project(profile), time)


def collision_operator(f: VelocityGridFn, design: AngularDesign):
    """Hard-sphere collision operator by pair quadrature and conservative
    deposit; exact discrete conservation of mass, momentum and energy."""
    out, _ = _c.collision_bilinear(f.grid, design, f.values, f.values)
    return f.with_values(out)


def collision_bilinear_fn(f: VelocityGridFn, g: VelocityGridFn, design):
    if f.grid != g.grid:
        raise ValueError("grid mismatch")
    out, _ = _c.collision_bilinear(f.grid, design, f.values, g.values)
    return f.with_values(out)


def linearized_apply(f: VelocityGridFn, h: VelocityGridFn, design):
    """Linearization of the collision operator around f applied to h:
    collisions of h-mass against the background f, both gain and loss."""
    if f.grid != h.grid:
        raise ValueError("grid mismatch")
    out, _ = _c.collision_bilinear(f.grid, design, f.values, h.values)
    return h.with_values(2.0 * out)


def linearized_adjoint_apply(f: VelocityGridFn, phi, design):
    """Adjoint of the linearized operator in the f-pairing: the expected
    jump of phi for a tagged velocity colliding against the background f."""
    grid = f.grid
    if isinstance(phi, VelocityGridFn):
        if phi.grid != grid:
            raise ValueError("grid mismatch")
        phi = phi.values
    lstar, _, _ = _c.basis_pass(grid, design, f.values, phi, want_lstar=True)
    return VelocityGridFn(grid, lstar[:, 0], f.time)


def h_functional(f: VelocityGridFn) -> float:
    """int f log f over the grid (cells with f <= 0 contribute zero)."""
    vals = f.values
    pos = vals > 0
    return float((vals[pos] * np.log(vals[pos])).sum() * f.grid.cell_volume)


def mean_rel_speed(f: VelocityGridFn) -> float:
    return _c.mean_rel_speed(f.grid, f.values)


def mean_free_time(f: VelocityGridFn) -> float:
    """Reciprocal of the per-particle collision rate at the law f."""
    rate = KERNEL_MASS[f.grid.d] * mean_rel_speed(f)
    if rate <= 0:
        raise ValueError("degenerate law: zero collision rate")
    return 1.0 / rate


@dataclasses.dataclass(frozen=True)
class StepReport:
    dropped: float
    clipped: float
    drift: float


def step_boltzmann(f: VelocityGridFn, dt: float, design: AngularDesign,
                   report: bool = False):
    """One explicit trapezoidal (Heun) step with mass renormalization.

    Aborts if the update drives any cell below -1e-8 in density units.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    grid = f.grid
    mass0 = f.mass
    k1, drop1 = _c.collision_bilinear(grid, design, f.values, f.values)
    g = f.values + dt * k1
    k2, drop2 = _c.collision_bilinear(grid, design, g, g)
    new = f.values + 0.5 * dt * (k1 + k2)
    floor = new.min()
    if floor < -1e-8:
        raise ValueError(f"negative density {floor:.3e} beyond tolerance; "
                         "reduce dt or refine the grid")
    clipped = float(-new[new < 0].sum() * grid.cell_volume)
    new = np.maximum(new, 0.0)
    mass1 = new.sum() * grid.cell_volume
    drift = abs(mass1 - mass0)
    if drift > 1e-6 * max(mass0, 1e-300):
        raise ValueError(f"mass drift {drift:.3e} too large for one step")
    new *= mass0 / mass1
    out = VelocityGridFn(grid, new, f.time + dt)
    if report:
        return out, StepReport(float((drop1 + drop2) * 0.5 * dt), clipped,
                               float(drift))
    return out


@dataclasses.dataclass(frozen=True)
class KineticPath:
    """Stored solution slices f(t_k) on a uniform step grid."""

    grid: VelocityGrid
    design: AngularDesign
    times: np.ndarray
    values: np.ndarray
    dropped: float
    clipped: float
    max_drift: float

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 \
            else 0.0

    def at(self, t: float) -> np.ndarray:
        """Linear interpolation between stored slices."""
        times = self.times
        if t < times[0] - 1e-12 or t > times[-1] + 1e-12:
            raise ValueError(f"time {t} outside stored range")
        t = min(max(t, times[0]), times[-1])
        k = int(np.searchsorted(times, t, side="right")) - 1
        k = min(k, len(times) - 2) if len(times) > 1 else 0
        if len(times) == 1:
            return self.values[0].copy()
        w = (t - times[k]) / (times[k + 1] - times[k])
        return (1.0 - w) * self.values[k] + w * self.values[k + 1]

    def fn_at(self, t: float) -> VelocityGridFn:
        return VelocityGridFn(self.grid, self.at(t), t)

    @property
    def final(self) -> VelocityGridFn:
        return VelocityGridFn(self.grid, self.values[-1],
                              float(self.times[-1]))


def solve_boltzmann(f0: VelocityGridFn, t_end: float, dt: float,
                    design: Optional[AngularDesign] = None) -> KineticPath:
    """Integrate the homogeneous equation from f0 to t_end with fixed-step
    Heun updates, storing every slice."""
    if t_end <= f0.time:
        raise ValueError("t_end must exceed the initial time")
    if design is None:
        design = default_design(f0.grid.d)
    n_steps = max(1, int(np.ceil((t_end - f0.time) / dt - 1e-12)))
    dt = (t_end - f0.time) / n_steps
    times = f0.time + dt * np.arange(n_steps + 1)
    values = np.empty((n_steps + 1, f0.grid.n_nodes))
    values[0] = f0.values
    cur = f0
    dropped = clipped = max_drift = 0.0
    for k in range(n_steps):
        cur, rep = step_boltzmann(cur, dt, design, report=True)
        values[k + 1] = cur.values
        dropped += rep.dropped
        clipped += rep.clipped
        max_drift = max(max_drift, rep.drift)
    return KineticPath(f0.grid, design, times, values, float(dropped),
                       float(clipped), float(max_drift))
