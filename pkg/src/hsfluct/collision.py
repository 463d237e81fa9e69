"""Fixed unit-sphere quadrature designs and wrappers over the collision
kernels shared by the deterministic solver, the fluctuation field noise, and
the rate-function machinery."""

import dataclasses

import numpy as np

from . import _collision_kernels as _k
from .vgrid import VelocityGrid

_SPHERE_AREA = {2: 2.0 * np.pi, 3: 4.0 * np.pi}

# total kernel mass int_{S^(d-1)} (e . omega)_+ domega for a unit vector e
KERNEL_MASS = {2: 2.0, 3: float(np.pi)}


@dataclasses.dataclass(frozen=True)
class AngularDesign:
    """Unit vectors with positive weights summing to the sphere area.

    The node set is exactly closed under omega -> -omega; together with pair
    exchange this makes the discrete collision operator and its adjoint dual
    to one another to roundoff.
    """

    omegas: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        om = np.ascontiguousarray(np.asarray(self.omegas, float))
        w = np.ascontiguousarray(np.asarray(self.weights, float))
        if om.ndim != 2 or om.shape[1] not in (2, 3):
            raise ValueError("omegas must have shape (Q, d) with d in {2, 3}")
        if w.shape != (om.shape[0],) or not (w > 0).all():
            raise ValueError("one positive weight per node required")
        norms = np.linalg.norm(om, axis=1)
        if not np.allclose(norms, 1.0, atol=1e-12):
            raise ValueError("omegas must be unit vectors")
        area = _SPHERE_AREA[om.shape[1]]
        if abs(w.sum() - area) > 1e-10 * area:
            raise ValueError("weights must sum to the sphere area")
        neg = -om
        for q in range(om.shape[0]):
            hit = np.all(np.abs(om - neg[q]) < 1e-12, axis=1) & \
                np.isclose(w, w[q], rtol=1e-12)
            if not hit.any():
                raise ValueError("design is not antipodally symmetric")
        object.__setattr__(self, "omegas", om)
        object.__setattr__(self, "weights", w)

    @property
    def d(self) -> int:
        return self.omegas.shape[1]

    @property
    def n(self) -> int:
        return self.omegas.shape[0]


def circle_design(q: int = 16) -> AngularDesign:
    """Midpoint angles on the circle; q even gives exact antipodal pairs."""
    if q < 4 or q % 2:
        raise ValueError("q must be even and at least 4")
    half = q // 2
    th = 2.0 * np.pi * (np.arange(half) + 0.5) / q
    top = np.stack([np.cos(th), np.sin(th)], axis=1)
    om = np.concatenate([top, -top])
    w = np.full(q, 2.0 * np.pi / q)
    return AngularDesign(om, w)


def sphere_design(n_polar: int = 6, n_az: int = 8) -> AngularDesign:
    """Gauss-Legendre polar nodes times uniform azimuths, mirrored exactly."""
    if n_polar < 2 or n_polar % 2:
        raise ValueError("n_polar must be even and at least 2")
    if n_az < 2:
        raise ValueError("n_az must be at least 2")
    c, lw = np.polynomial.legendre.leggauss(n_polar)
    keep = c > 0
    c, lw = c[keep], lw[keep]
    az = 2.0 * np.pi * (np.arange(n_az) + 0.5) / n_az
    s = np.sqrt(1.0 - c ** 2)
    top = np.stack([np.outer(s, np.cos(az)).ravel(),
                    np.outer(s, np.sin(az)).ravel(),
                    np.repeat(c, n_az)], axis=1)
    wt = np.repeat(lw, n_az) * (2.0 * np.pi / n_az)
    om = np.concatenate([top, -top])
    w = np.concatenate([wt, wt])
    return AngularDesign(om, w)


def default_design(d: int, resolution: int = 16) -> AngularDesign:
    if d == 2:
        return circle_design(resolution)
    return sphere_design(max(2, (resolution // 4) * 2), resolution)


# --------------------------------------------------------------- wrappers

def _check(grid: VelocityGrid, design: AngularDesign, *arrays):
    if design.d != grid.d:
        raise ValueError("design dimension does not match grid")
    out = []
    for a in arrays:
        a = np.ascontiguousarray(np.asarray(a, float))
        if a.shape != (grid.n_nodes,):
            raise ValueError("grid function must be flat over the nodes")
        out.append(a)
    return out


def _active(threshold_source, rel: float = 1e-13):
    a = np.abs(threshold_source)
    top = a.max()
    mask = a > top * rel if top > 0 else np.zeros(a.shape, bool)
    return np.flatnonzero(mask).astype(np.int64), mask


def _geo(grid: VelocityGrid):
    nodes = np.ascontiguousarray(grid.nodes())
    vmin_node = -grid.vmax + 0.5 * grid.dx
    return nodes, grid.m, grid.d, vmin_node, 1.0 / grid.dx, grid.cell_volume


def collision_bilinear(grid, design, fa, fb):
    """Symmetric bilinear collision deposit; (f, f) gives the collision
    operator. Returns (density array, dropped rate diagnostic)."""
    fa, fb = _check(grid, design, fa, fb)
    nodes, m, d, vmin, invdx, vol = _geo(grid)
    act, mask = _active(np.abs(fa) + np.abs(fb))
    out = np.zeros(grid.n_nodes)
    dropped = _k._cbil_kernel(nodes, m, d, vmin, invdx, vol,
                              design.omegas, design.weights,
                              fa, fb, act, mask, out)
    return out, float(dropped)


def linearized_matrix(grid, design, f, allow_large: bool = False):
    """Dense matrix of h -> 2 * collision_bilinear(f, h), for repeated
    application along a frozen background path."""
    (f,) = _check(grid, design, f)
    n = grid.n_nodes
    if n > 4096 and not allow_large:
        raise ValueError("dense operator too large; pass allow_large=True")
    nodes, m, d, vmin, invdx, vol = _geo(grid)
    act, mask = _active(f)
    lmat = np.zeros((n, n))
    _k._assemble_lin(nodes, m, d, vmin, invdx, vol,
                     design.omegas, design.weights, f, act, mask, lmat)
    return lmat


def basis_pass(grid, design, f, phis, want_lstar: bool = True):
    """Adjoint action on basis columns and the pair-noise covariance matrix.

    Returns (lstar values (n, K), q matrix (K, K), dropped diagnostic).
    """
    (f,) = _check(grid, design, f)
    phis = np.ascontiguousarray(np.asarray(phis, float))
    if phis.ndim == 1:
        phis = phis[:, None]
    if phis.shape[0] != grid.n_nodes:
        raise ValueError("basis columns must live on the grid")
    nodes, m, d, vmin, invdx, vol = _geo(grid)
    act, mask = _active(f)
    kk = phis.shape[1]
    lstar = np.zeros((grid.n_nodes, kk))
    qmat = np.zeros((kk, kk))
    dropped = _k._basis_pass(nodes, m, d, vmin, invdx, vol,
                             design.omegas, design.weights,
                             f, act, mask, phis, want_lstar, lstar, qmat)
    qmat = qmat + np.triu(qmat, 1).T
    return lstar, qmat, float(dropped)


def loss_rates(grid, design, f):
    """Collision frequency nu(v) against the density f at every node."""
    (f,) = _check(grid, design, f)
    nodes, m, d, vmin, invdx, vol = _geo(grid)
    act, _ = _active(f)
    out = np.empty(grid.n_nodes)
    _k._loss_rates(nodes, vol, design.omegas, design.weights, f, act, out)
    return out


@dataclasses.dataclass(frozen=True)
class NoiseNodes:
    """Enumerated collision nodes (i < j, approaching, in range) with their
    rate weights; the sampling measure of the fluctuation noise."""

    ii: np.ndarray
    jj: np.ndarray
    qq: np.ndarray
    ww: np.ndarray

    @property
    def total(self) -> float:
        return float(self.ww.sum())


def noise_nodes(grid, design, f) -> NoiseNodes:
    (f,) = _check(grid, design, f)
    if (f < 0).any():
        raise ValueError("noise enumeration requires a nonnegative density")
    nodes, m, d, vmin, invdx, vol = _geo(grid)
    act, _ = _active(f, rel=1e-12)
    empty = np.empty(0, np.int64)
    emptyf = np.empty(0)
    cnt = _k._enumerate_noise(nodes, m, d, vmin, invdx, vol,
                              design.omegas, design.weights, f, act,
                              empty, empty, empty, emptyf, True)
    ii = np.empty(cnt, np.int64)
    jj = np.empty(cnt, np.int64)
    qq = np.empty(cnt, np.int64)
    ww = np.empty(cnt)
    _k._enumerate_noise(nodes, m, d, vmin, invdx, vol,
                        design.omegas, design.weights, f, act,
                        ii, jj, qq, ww, False)
    return NoiseNodes(ii, jj, qq, ww)


def deposit_patterns(grid, design, sel: NoiseNodes, amps) -> np.ndarray:
    """Field density sum_r amps_r * pattern_r / vol for selected nodes."""
    amps = np.ascontiguousarray(np.asarray(amps, float))
    if amps.shape != sel.ii.shape:
        raise ValueError("one amplitude per selected node required")
    nodes, m, d, vmin, invdx, vol = _geo(grid)
    out = np.zeros(grid.n_nodes)
    _k._deposit_patterns(nodes, m, d, vmin, invdx, vol, design.omegas,
                         sel.ii, sel.jj, sel.qq, amps, out)
    return out


def mean_rel_speed(grid, f) -> float:
    """iint f(v) f(w) |v - w| dv dw."""
    f = np.ascontiguousarray(np.asarray(f, float))
    if f.shape != (grid.n_nodes,):
        raise ValueError("grid function must be flat over the nodes")
    nodes = np.ascontiguousarray(grid.nodes())
    act, _ = _active(f)
    return float(_k._mean_rel_speed(nodes, grid.cell_volume, f, act))


def gather_at(grid, values, points):
    """Quadratic interpolation of one or more grid columns at points.

    Returns (values (P,) or (P, K), inside mask).
    """
    vals = np.ascontiguousarray(np.asarray(values, float))
    squeeze = vals.ndim == 1
    if squeeze:
        vals = vals[:, None]
    if vals.shape[0] != grid.n_nodes:
        raise ValueError("columns must live on the grid")
    pts = np.ascontiguousarray(np.asarray(points, float))
    if pts.ndim != 2 or pts.shape[1] != grid.d:
        raise ValueError("points must have shape (P, d)")
    _, m, d, vmin, invdx, _ = _geo(grid)
    out = np.empty((pts.shape[0], vals.shape[1]))
    ok = np.empty(pts.shape[0], np.bool_)
    _k._gather_at(m, d, vmin, invdx, vals, pts, out, ok)
    return (out[:, 0] if squeeze else out), ok
