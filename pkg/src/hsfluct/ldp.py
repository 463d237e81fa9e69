"""Large-deviation functionals for velocity-grid densities.

The rate of an untypical kinetic path splits into a relative-entropy cost
for the initial datum and a time integral of a Legendre pair: a Hamiltonian
built on the pair-collision measure and the control field conjugate to the
observed time derivative. The same collision quadrature also powers a
residual checker for the Hamilton-Jacobi equation satisfied by a cumulant
generating functional.
"""

import dataclasses
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from .boltzmann import VelocityGridFn
from .collision import (AngularDesign, NoiseNodes, deposit_patterns,
                        gather_at, noise_nodes)
from .vgrid import VelocityGrid

_EXP_CAP = 200.0


def _values(obj, grid=None):
    if isinstance(obj, VelocityGridFn):
        if grid is not None and obj.grid != grid:
            raise ValueError("grid mismatch")
        return obj.grid, obj.values
    arr = np.asarray(obj, float)
    if grid is None:
        raise ValueError("plain arrays need an explicit grid")
    if arr.shape != (grid.n_nodes,):
        raise ValueError("values must live on the grid nodes")
    return grid, arr


@dataclasses.dataclass(frozen=True)
class DensityPath:
    """Nonnegative density slices phi(t_k) on a shared velocity grid.

    One spatial cell (homogeneous) unless x_cells is set, in which case
    values has shape (times, x_cells, nodes) and only the material
    derivative helper applies.
    """

    grid: VelocityGrid
    times: np.ndarray
    values: np.ndarray
    design: Optional[AngularDesign] = None
    x_cells: Optional[int] = None

    def __post_init__(self):
        times = np.asarray(self.times, float)
        values = np.asarray(self.values, float)
        want = (len(times), self.grid.n_nodes) if self.x_cells is None \
            else (len(times), self.x_cells, self.grid.n_nodes)
        if times.ndim != 1 or len(times) < 1 or np.any(np.diff(times) <= 0):
            raise ValueError("times must be strictly increasing")
        if values.shape != want:
            raise ValueError(f"values must have shape {want}")
        if not np.all(np.isfinite(values)):
            raise ValueError("density values must be finite")
        if values.min() < -1e-10 * max(values.max(), 1.0):
            raise ValueError("density values must be nonnegative")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", np.maximum(values, 0.0))

    @classmethod
    def from_kinetic(cls, path) -> "DensityPath":
        return cls(path.grid, path.times, path.values, path.design)

    def at(self, t: float) -> np.ndarray:
        if self.x_cells is not None:
            raise ValueError("interpolation only in the homogeneous mode")
        times = self.times
        if t < times[0] - 1e-12 or t > times[-1] + 1e-12:
            raise ValueError(f"time {t} outside stored range")
        t = min(max(t, times[0]), times[-1])
        if len(times) == 1:
            return self.values[0].copy()
        k = min(int(np.searchsorted(times, t, side="right")) - 1,
                len(times) - 2)
        w = (t - times[k]) / (times[k + 1] - times[k])
        return (1.0 - w) * self.values[k] + w * self.values[k + 1]


@dataclasses.dataclass(frozen=True)
class ControlField:
    """Conjugate field p(t, v) with a quadratic growth cap."""

    grid: VelocityGrid
    times: np.ndarray
    values: np.ndarray
    c0: float = 4.0
    c2: float = 0.5

    def __post_init__(self):
        times = np.asarray(self.times, float)
        values = np.atleast_2d(np.asarray(self.values, float))
        if values.shape != (len(times), self.grid.n_nodes):
            raise ValueError("one value row per time required")
        cap = self.cap()
        if np.any(np.abs(values) > cap[None, :] * (1 + 1e-12) + 1e-12):
            raise ValueError("control exceeds the quadratic growth cap")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    def cap(self) -> np.ndarray:
        speed2 = (self.grid.nodes() ** 2).sum(axis=1)
        return self.c0 + self.c2 * speed2


# ------------------------------------------------- collision quadrature

def _collision_nodes(grid, design, f):
    """Pair-collision nodes for the density f with their prime points."""
    sel = noise_nodes(grid, design, f)
    nodes = grid.nodes()
    om = design.omegas[sel.qq]
    u = nodes[sel.ii] - nodes[sel.jj]
    lam = (u * om).sum(axis=1)
    vp1 = nodes[sel.ii] - lam[:, None] * om
    vp2 = nodes[sel.jj] + lam[:, None] * om
    return sel, vp1, vp2


def _delta_field(grid, p, sel, vp1, vp2):
    """Deposit-stencil increment p(v1') + p(v2') - p(v1) - p(v2)."""
    g1, _ = gather_at(grid, p, vp1)
    g2, _ = gather_at(grid, p, vp2)
    return g1 + g2 - p[sel.ii] - p[sel.jj]


def _check_exp_range(dp, sel):
    if len(dp) == 0:
        return
    k = int(np.argmax(dp))
    if dp[k] > _EXP_CAP:
        raise ValueError(
            f"control increment {dp[k]:.2f} overflows the exponential at "
            f"node (i={int(sel.ii[k])}, j={int(sel.jj[k])}, "
            f"q={int(sel.qq[k])})")


def hamiltonian(phi, p, design: AngularDesign, grid=None) -> float:
    """Pair-collision Hamiltonian: sum of rate weights times expm1 of the
    control increment. Zero control gives exactly zero."""
    grid, fv = _values(phi, grid)
    _, pv = _values(p, grid)
    sel, vp1, vp2 = _collision_nodes(grid, design, fv)
    dp = _delta_field(grid, pv, sel, vp1, vp2)
    _check_exp_range(dp, sel)
    return float((sel.ww * np.expm1(dp)).sum())


def hamiltonian_grad_p(phi, p, design: AngularDesign, grid=None)\
        -> np.ndarray:
    """Functional p-gradient as a velocity density; at p = 0 it is the
    collision operator of phi on the shared quadrature."""
    grid, fv = _values(phi, grid)
    _, pv = _values(p, grid)
    sel, vp1, vp2 = _collision_nodes(grid, design, fv)
    dp = _delta_field(grid, pv, sel, vp1, vp2)
    _check_exp_range(dp, sel)
    return deposit_patterns(grid, design, sel, sel.ww * np.exp(dp))


def initial_rate(phi0, f0, grid=None) -> float:
    """Relative entropy int (phi log(phi/f) - phi + f); +inf when phi
    puts mass where f vanishes."""
    grid, p0 = _values(phi0, grid)
    _, ref = _values(f0, grid)
    if p0.min() < 0 or ref.min() < 0:
        raise ValueError("densities must be nonnegative")
    pos = p0 > 0
    if np.any(ref[pos] == 0.0):
        return float("inf")
    terms = np.zeros_like(p0)
    terms[pos] = p0[pos] * np.log(p0[pos] / ref[pos])
    return float((terms - p0 + ref).sum() * grid.cell_volume)


# ------------------------------------------------------ path functional

@dataclasses.dataclass(frozen=True)
class PathRateResult:
    value: float
    initial: float
    dynamic: float
    control: ControlField
    converged: bool
    grad_norms: np.ndarray
    iterations: np.ndarray


def _slice_supremum(grid, design, phim, deriv, cap, tol, max_iter):
    """sup_p of vol <p, deriv> - H(phim, p) by bound-constrained quasi-
    Newton ascent from p = 0."""
    from scipy import optimize

    sel, vp1, vp2 = _collision_nodes(grid, design, phim)
    vol = grid.cell_volume

    def negated(p):
        dp = _delta_field(grid, p, sel, vp1, vp2)
        if dp.max() > _EXP_CAP:
            return np.inf, np.zeros_like(p)
        edp = np.exp(dp)
        obj = vol * float(p @ deriv) - float((sel.ww * (edp - 1.0)).sum())
        grad = vol * (deriv - deposit_patterns(grid, design, sel,
                                               sel.ww * edp))
        return -obj, -grad

    res = optimize.minimize(
        negated, np.zeros(grid.n_nodes), jac=True, method="L-BFGS-B",
        bounds=optimize.Bounds(-cap, cap),
        options={"maxiter": max_iter, "ftol": 1e-18, "gtol": 0.5 * tol})
    p = res.x
    _, ngrad = negated(p)
    # deactivate outward components pinned at the cap
    free = np.ones_like(p)
    free[(p >= cap * (1 - 1e-12)) & (ngrad < 0)] = 0.0
    free[(p <= -cap * (1 - 1e-12)) & (ngrad > 0)] = 0.0
    gnorm = float(np.abs(ngrad * free).max())
    return -float(res.fun), p, gnorm, int(res.nit), gnorm < tol


def path_rate(path: DensityPath, f0, design: Optional[AngularDesign] = None,
              *, c0: float = 4.0, c2: float = 0.5, tol: float = 1e-8,
              max_iter: int = 1000) -> PathRateResult:
    """Initial relative entropy plus the time-integrated slice suprema.

    Each midpoint slice maximizes a concave objective: the pairing of the
    control with the observed time derivative minus the Hamiltonian. A
    slice converges when the max-norm of its projected gradient drops
    below tol; the reported value is a certified lower bound of the
    supremum over all capped controls either way.
    """
    if path.x_cells is not None:
        raise ValueError("path rate runs in the homogeneous mode")
    if len(path.times) < 2:
        raise ValueError("need at least two time slices")
    grid = path.grid
    design = design or path.design
    if design is None:
        raise ValueError("an angular design is required")
    _, ref = _values(f0, grid)
    init = initial_rate(path.values[0], ref, grid)
    cap = c0 + c2 * (grid.nodes() ** 2).sum(axis=1)
    dyn = 0.0
    controls = []
    mids = []
    gnorms = []
    iters = []
    all_conv = True
    for k in range(len(path.times) - 1):
        dt = path.times[k + 1] - path.times[k]
        phim = 0.5 * (path.values[k] + path.values[k + 1])
        deriv = (path.values[k + 1] - path.values[k]) / dt
        val, p, gn, it, conv = _slice_supremum(grid, design, phim, deriv,
                                               cap, tol, max_iter)
        dyn += dt * max(val, 0.0)
        controls.append(p)
        mids.append(path.times[k] + 0.5 * dt)
        gnorms.append(gn)
        iters.append(it)
        all_conv = all_conv and conv
    control = ControlField(grid, np.asarray(mids), np.asarray(controls),
                           c0, c2)
    return PathRateResult(init + dyn, init, dyn, control, all_conv,
                          np.asarray(gnorms), np.asarray(iters))


def material_derivative(times, values, grid, x_extent: float = 1.0)\
        -> np.ndarray:
    """D_s phi = d/ds phi + v_x d/dx phi for slab-inhomogeneous slices
    (times, x_cells, nodes), central differences in both variables;
    returned on the interior time slices."""
    times = np.asarray(times, float)
    values = np.asarray(values, float)
    if values.ndim != 3 or values.shape[0] != len(times) or len(times) < 3:
        raise ValueError("need (times, x_cells, nodes) with 3+ slices")
    dx = x_extent / values.shape[1]
    vx = grid.nodes()[:, 0]
    dt_phi = (values[2:] - values[:-2]) \
        / (times[2:] - times[:-2])[:, None, None]
    dx_phi = (np.roll(values, -1, axis=1) - np.roll(values, 1, axis=1)) \
        / (2.0 * dx)
    return dt_phi + vx[None, None, :] * dx_phi[1:-1]


# ------------------------------------------- cumulant generating checks

@dataclasses.dataclass(frozen=True)
class CgfCandidate:
    """Candidate cumulant generating functional on a velocity grid.

    fn(t, h_values) evaluates the functional; dfn, when given, returns the
    functional derivative with respect to the compensated exponential
    gamma = e^h - 1 (otherwise grid-Dirac finite differences of fn are
    used). fn must vanish at h = 0.
    """

    grid: VelocityGrid
    times: np.ndarray
    fn: Callable[[float, np.ndarray], float]
    family: Tuple[np.ndarray, ...] = ()
    dfn: Optional[Callable[[float, np.ndarray, float], np.ndarray]] = None

    def __post_init__(self):
        times = np.sort(np.asarray(self.times, float))
        if len(times) < 1:
            raise ValueError("at least one evaluation time required")
        object.__setattr__(self, "times", times)
        family = tuple(np.asarray(h, float) for h in self.family)
        for h in family:
            if h.shape != (self.grid.n_nodes,):
                raise ValueError("family members must live on the grid")
        object.__setattr__(self, "family", family)
        zero = np.zeros(self.grid.n_nodes)
        for t in (times[0], times[-1]):
            val = self.fn(t, zero)
            if abs(val) > 1e-10:
                raise ValueError(f"candidate must vanish at h=0, got {val}")

    def evaluate(self, t: float, h) -> float:
        _, hv = _values(h, self.grid)
        return float(self.fn(t, hv))

    def gamma_derivative(self, t: float, h, eps: float = 1e-4)\
            -> np.ndarray:
        """d/d gamma by symmetric grid-Dirac perturbations of e^h - 1."""
        _, hv = _values(h, self.grid)
        if self.dfn is not None:
            return np.asarray(self.dfn(t, hv, eps), float)
        vol = self.grid.cell_volume
        bump = eps / vol
        eh = np.exp(hv)
        out = np.empty(self.grid.n_nodes)
        for z in range(self.grid.n_nodes):
            up = hv.copy()
            up[z] = np.log(eh[z] + bump)
            if eh[z] > bump:
                dn = hv.copy()
                dn[z] = np.log(eh[z] - bump)
                out[z] = (self.fn(t, up) - self.fn(t, dn)) / (2.0 * eps)
            else:
                out[z] = (self.fn(t, up) - self.fn(t, hv)) / eps
        return out


def legendre_rate(cand: CgfCandidate, path: DensityPath, t: float) -> float:
    """Restricted Legendre transform over the candidate's test family:
    max_h of <phi(t), h> - J(t, h). A lower bound of the full supremum,
    monotone under family enlargement."""
    if not cand.family:
        raise ValueError("candidate has an empty test family")
    phi = path.at(t) if isinstance(path, DensityPath) else \
        _values(path, cand.grid)[1]
    vol = cand.grid.cell_volume
    best = -np.inf
    for h in cand.family:
        best = max(best, vol * float(phi @ h) - cand.evaluate(t, h))
    return float(best)


@dataclasses.dataclass(frozen=True)
class HjResidual:
    value: float
    time_term: float
    collision_term: float
    d_gamma: np.ndarray
    stability: float
    dt: float
    eps_gamma: float


def hj_residual(cand: CgfCandidate, h, t: float, background,
                design: AngularDesign, *, dt: Optional[float] = None,
                eps_gamma: float = 1e-4,
                check_stability: bool = True) -> HjResidual:
    """Hamilton-Jacobi defect: time derivative of the functional minus the
    pair-collision quadratic form of its gamma-derivative.

    The time derivative is a central difference; the derivative field comes
    from grid-Dirac perturbations; the quadratic form runs over the bare
    collision measure restricted to the background support. Collision
    invariants annihilate the quadratic form to rounding.
    """
    grid = cand.grid
    _, hv = _values(h, grid)
    _, bg = _values(background, grid)
    if dt is None:
        if len(cand.times) < 2:
            raise ValueError("need a time spacing for the derivative")
        dt = float(np.min(np.diff(cand.times)))
    lo, hi = cand.times[0], cand.times[-1]
    if t - dt < lo - 1e-12 or t + dt > hi + 1e-12:
        raise ValueError("central difference leaves the candidate's range")
    time_term = (cand.evaluate(t + dt, hv) - cand.evaluate(t - dt, hv)) \
        / (2.0 * dt)
    d_gamma = cand.gamma_derivative(t, hv, eps_gamma)
    stability = 0.0
    if check_stability and cand.dfn is None:
        again = cand.gamma_derivative(t, hv, eps_gamma / 2.0)
        scale = np.abs(again).max() + 1e-300
        stability = float(np.abs(d_gamma - again).max() / scale)
        if not np.isfinite(stability):
            raise ValueError("gamma perturbation produced non-finite values")
    support = (bg > bg.max() * 1e-12).astype(float)
    sel, vp1, vp2 = _collision_nodes(grid, design, support)
    g1, _ = gather_at(grid, hv, vp1)
    g2, _ = gather_at(grid, hv, vp2)
    bracket = np.exp(g1 + g2) - np.exp(hv[sel.ii] + hv[sel.jj])
    coll = float((sel.ww * d_gamma[sel.ii] * d_gamma[sel.jj]
                  * bracket).sum())
    return HjResidual(time_term - coll, time_term, coll, d_gamma,
                      stability, dt, eps_gamma)
