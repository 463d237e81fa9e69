"""Linear fluctuation field around a kinetic background.

Three coupled pieces share one discretization of the pair-collision geometry:
the jump statistic of a test function, the Gaussian pair noise whose
covariance matches the jump second moment, and a moment-closure flow for
equal-time and two-time covariances of the field paired with a basis.
"""

import dataclasses
from typing import Optional, Sequence, Union

import numpy as np

from . import collision as _c
from .boltzmann import KineticPath, VelocityGridFn
from .collision import AngularDesign, NoiseNodes
from .observables import TestFunction
from .vgrid import VelocityGrid


def delta_h(h: TestFunction, x, v, w, omega):
    """Jump of h across a binary collision: post minus pre, both particles.

    x is shared by the pair; rows of v, w, omega describe one collision each.
    """
    x = np.atleast_2d(np.asarray(x, float))
    v = np.atleast_2d(np.asarray(v, float))
    w = np.atleast_2d(np.asarray(w, float))
    omega = np.atleast_2d(np.asarray(omega, float))
    lam = ((v - w) * omega).sum(axis=1, keepdims=True)
    vp = v - lam * omega
    wp = w + lam * omega
    return h(x, vp) + h(x, wp) - h(x, v) - h(x, w)


def cov_form(grid: VelocityGrid, design: AngularDesign, f, phis):
    """Pair-noise covariance of the basis pairings: the collision-rate
    weighted second moment of the jumps. Symmetric, PSD, and zero on
    collision invariants."""
    phis = np.asarray(phis, float)
    squeeze = phis.ndim == 1
    _, qmat, _ = _c.basis_pass(grid, design, f, phis, want_lstar=False)
    return float(qmat[0, 0]) if squeeze else qmat


class NoiseSampler:
    """Draws density-field noise increments with covariance dt * cov_form.

    k_nodes None enumerates every collision node per draw (exact Gaussian
    field); an integer K subsamples K nodes proportionally to their rate,
    which keeps the covariance exact for any K and is cheap when the node
    set is large.
    """

    def __init__(self, grid: VelocityGrid, design: AngularDesign, f,
                 k_nodes: Optional[int] = None):
        self.grid = grid
        self.design = design
        self.sel = _c.noise_nodes(grid, design, f)
        self.total = self.sel.total
        if k_nodes is not None and k_nodes < 1:
            raise ValueError("k_nodes must be positive")
        self.k_nodes = k_nodes
        if k_nodes is not None and self.sel.ww.size:
            cdf = np.cumsum(self.sel.ww)
            self._cdf = cdf / cdf[-1]
        else:
            self._cdf = None

    def sample(self, dt: float, rng: np.random.Generator) -> np.ndarray:
        if dt <= 0:
            raise ValueError("dt must be positive")
        sel = self.sel
        if sel.ww.size == 0:
            return np.zeros(self.grid.n_nodes)
        if self.k_nodes is None:
            amps = np.sqrt(dt * sel.ww) * rng.standard_normal(sel.ww.size)
            return _c.deposit_patterns(self.grid, self.design, sel, amps)
        idx = np.searchsorted(self._cdf, rng.random(self.k_nodes))
        sub = NoiseNodes(sel.ii[idx], sel.jj[idx], sel.qq[idx], sel.ww[idx])
        amps = np.sqrt(self.total * dt / self.k_nodes) \
            * rng.standard_normal(self.k_nodes)
        return _c.deposit_patterns(self.grid, self.design, sub, amps)


def sample_noise_increment(grid, design, f, dt, rng,
                           k_nodes: Optional[int] = None) -> np.ndarray:
    """One-shot wrapper over NoiseSampler for single draws."""
    return NoiseSampler(grid, design, f, k_nodes).sample(dt, rng)


def poisson_field(grid: VelocityGrid, f, rng: np.random.Generator,
                  size: Optional[int] = None) -> np.ndarray:
    """Gaussian field with the counting-noise covariance of density f:
    pairings with test functions have variance int phi^2 f."""
    f = np.asarray(f, float)
    if (f < 0).any():
        raise ValueError("density must be nonnegative")
    scale = np.sqrt(f / grid.cell_volume)
    shape = (grid.n_nodes,) if size is None else (size, grid.n_nodes)
    return rng.standard_normal(shape) * scale


def spde_step(zetas, lmat, nu, dt, noise):
    """Semi-implicit update: the relaxation part of the linearized operator
    is treated implicitly, the rest explicitly, then noise is added."""
    drift = zetas @ lmat.T + nu * zetas
    return (zetas + dt * drift + noise) / (1.0 + dt * nu)


@dataclasses.dataclass(frozen=True)
class SpdeEnsemble:
    """Replica fields recorded at requested times."""

    grid: VelocityGrid
    times: np.ndarray
    fields: np.ndarray  # (n_times, n_replicas, n_nodes)

    def pair(self, values) -> np.ndarray:
        """<zeta, h> for every stored replica; shape (n_times, n_replicas)."""
        return self.fields @ np.asarray(values, float) * self.grid.cell_volume


def spde_run(background: Union[VelocityGridFn, KineticPath],
             n_replicas: int, t_end: float, dt: float,
             record_times: Sequence[float], rng: np.random.Generator,
             design: Optional[AngularDesign] = None,
             k_nodes: Optional[int] = None,
             init: Union[str, np.ndarray] = "poisson") -> SpdeEnsemble:
    """Integrate the fluctuation field for an ensemble of replicas.

    The linearized operator, relaxation rates, and noise law are rebuilt
    from the background at every step (once overall when the background is
    a fixed state), and shared across replicas.
    """
    frozen = isinstance(background, VelocityGridFn)
    grid = background.grid
    if design is None:
        design = background.design if not frozen \
            else _c.default_design(grid.d)
    record = np.asarray(sorted(float(t) for t in record_times))
    if record.size == 0 or record[0] < 0 or record[-1] > t_end + 1e-12:
        raise ValueError("record times must sit inside [0, t_end]")
    n_steps = max(1, int(np.ceil(t_end / dt - 1e-12)))
    dt = t_end / n_steps

    def state_at(t):
        return background.values if frozen else background.at(t)

    if isinstance(init, str):
        if init == "poisson":
            zetas = poisson_field(grid, state_at(0.0), rng, size=n_replicas)
        elif init == "zero":
            zetas = np.zeros((n_replicas, grid.n_nodes))
        else:
            raise ValueError(f"unknown init {init!r}")
    else:
        zetas = np.array(init, float)
        if zetas.shape != (n_replicas, grid.n_nodes):
            raise ValueError("init array must have shape (replicas, nodes)")

    out = np.empty((record.size, n_replicas, grid.n_nodes))
    rec_ptr = 0
    lmat = nu = sampler = None
    for k in range(n_steps + 1):
        t = k * dt
        while rec_ptr < record.size and record[rec_ptr] <= t + 1e-9 * dt:
            out[rec_ptr] = zetas
            rec_ptr += 1
        if k == n_steps:
            break
        if lmat is None or not frozen:
            f_now = state_at(t)
            lmat = _c.linearized_matrix(grid, design, f_now)
            nu = _c.loss_rates(grid, design, f_now)
            sampler = NoiseSampler(grid, design, f_now, k_nodes)
        noise = np.stack([sampler.sample(dt, rng) for _ in range(n_replicas)])
        zetas = spde_step(zetas, lmat, nu, dt, noise)
    return SpdeEnsemble(grid, record, out)


# ------------------------------------------------------- covariance flow

@dataclasses.dataclass(frozen=True)
class CovarianceFlow:
    """Equal-time covariance and propagator of basis pairings on a time
    grid, with the basis-closure residual as a quality diagnostic."""

    times: np.ndarray
    cov: np.ndarray        # (n_times, K, K)
    prop: np.ndarray       # (n_times, K, K), flow map from time 0
    residual: float        # worst relative closure defect seen
    gram0: np.ndarray      # (K, K) pairing Gram at the initial state

    def _locate(self, t: float) -> int:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"time {t} not on the solution grid")
        return k

    def at(self, t: float) -> np.ndarray:
        return self.cov[self._locate(t)]

    def two_time(self, s: float, t: float) -> np.ndarray:
        """Cov of pairings at times s and t; rows index s, columns t."""
        if s > t:
            return self.two_time(t, s).T
        ks, kt = self._locate(s), self._locate(t)
        flow = self.prop[kt] @ np.linalg.inv(self.prop[ks])
        return self.cov[ks] @ flow.T


def covariance_ode_solve(background: Union[VelocityGridFn, KineticPath],
                         phis, t_end: float, dt: float,
                         design: Optional[AngularDesign] = None,
                         c0: Optional[np.ndarray] = None) -> CovarianceFlow:
    """Closed moment flow dC = A C + C A^T + Q for the basis pairings.

    A is the least-squares projection of the adjoint action onto the basis,
    weighted by the background density, so the equilibrium identity
    A G + G A^T + Q ~ 0 holds independently of how well the basis closes.
    Initial covariance defaults to the counting noise of the initial state.
    """
    frozen = isinstance(background, VelocityGridFn)
    grid = background.grid
    if design is None:
        design = background.design if not frozen \
            else _c.default_design(grid.d)
    phis = np.ascontiguousarray(np.asarray(phis, float))
    if phis.ndim == 1:
        phis = phis[:, None]
    if phis.shape[0] != grid.n_nodes:
        raise ValueError("basis columns must live on the grid")
    kk = phis.shape[1]
    vol = grid.cell_volume

    def state_at(t):
        return background.values if frozen else background.at(t)

    cache = {}
    worst = [0.0]

    def coeffs(t):
        key = round(t, 12)
        if key in cache:
            return cache[key]
        f_now = state_at(t)
        lstar, qmat, _ = _c.basis_pass(grid, design, f_now, phis)
        g_f = (phis.T * f_now) @ phis * vol
        b = (lstar.T * f_now) @ phis * vol
        a = np.linalg.solve(g_f, b.T).T
        resid = lstar - phis @ a.T
        num = np.sqrt(((resid ** 2) * f_now[:, None]).sum(0) * vol)
        den = np.sqrt(((lstar ** 2) * f_now[:, None]).sum(0) * vol)
        rel = float(np.max(num / np.maximum(den, 1e-300)))
        worst[0] = max(worst[0], rel if den.max() > 0 else 0.0)
        cache[key] = (a, qmat)
        if frozen:
            cache["*"] = cache[key]
        return cache[key]

    if frozen:
        coeffs(0.0)

        def coeffs(t):  # noqa: F811  (constant background shortcut)
            return cache["*"]

    f0 = state_at(0.0)
    if c0 is None:
        c0 = (phis.T * f0) @ phis * vol
    c0 = np.asarray(c0, float)
    if c0.shape != (kk, kk):
        raise ValueError("c0 must be (K, K)")

    n_steps = max(1, int(np.ceil(t_end / dt - 1e-12)))
    dt = t_end / n_steps
    times = np.arange(n_steps + 1) * dt
    cov = np.empty((n_steps + 1, kk, kk))
    prop = np.empty((n_steps + 1, kk, kk))
    cov[0], prop[0] = c0, np.eye(kk)

    def rhs(t, c, p):
        a, q = coeffs(t)
        return a @ c + c @ a.T + q, a @ p

    c, p = c0.copy(), np.eye(kk)
    for k in range(n_steps):
        t = times[k]
        k1c, k1p = rhs(t, c, p)
        k2c, k2p = rhs(t + 0.5 * dt, c + 0.5 * dt * k1c, p + 0.5 * dt * k1p)
        k3c, k3p = rhs(t + 0.5 * dt, c + 0.5 * dt * k2c, p + 0.5 * dt * k2p)
        k4c, k4p = rhs(t + dt, c + dt * k3c, p + dt * k3p)
        c = c + dt / 6.0 * (k1c + 2 * k2c + 2 * k3c + k4c)
        p = p + dt / 6.0 * (k1p + 2 * k2p + 2 * k3p + k4p)
        c = 0.5 * (c + c.T)
        cov[k + 1], prop[k + 1] = c, p

    gram0 = (phis.T * f0) @ phis * vol
    return CovarianceFlow(times, cov, prop, worst[0], gram0)
