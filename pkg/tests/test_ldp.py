"""Rate functionals: Hamiltonian calibration, path costs, HJ residuals."""

import numpy as np
import pytest

from hsfluct import boltzmann as B
from hsfluct import collision as C
from hsfluct import ldp
from hsfluct.vgrid import VelocityGrid

GRID = VelocityGrid(2, 16, 4.0)
DESIGN = C.circle_design(8)
NODES = GRID.nodes()
VOL = GRID.cell_volume
N = GRID.n_nodes


def smooth_density(seed=1):
    rng = np.random.default_rng(seed)
    f = np.exp(-0.5 * (NODES ** 2).sum(1))
    f *= 1.0 + 0.5 * np.sin(NODES[:, 0] * 2.0) * rng.uniform(0.5, 1.0)
    return f / (f.sum() * VOL)


def decaying_control(seed, scale=0.3):
    rng = np.random.default_rng(seed)
    return scale * rng.normal(size=N) * np.exp(-0.2 * (NODES ** 2).sum(1))


# ------------------------------------------------------------ Hamiltonian

def test_zero_control_gives_exact_zero():
    f = smooth_density()
    assert ldp.hamiltonian(f, np.zeros(N), DESIGN, grid=GRID) == 0.0
    fn = B.VelocityGridFn(GRID, f)
    assert ldp.hamiltonian(fn, np.zeros(N), DESIGN) == 0.0


def test_zero_density_degenerates_cleanly():
    p = decaying_control(0)
    assert ldp.hamiltonian(np.zeros(N), p, DESIGN, grid=GRID) == 0.0
    g = ldp.hamiltonian_grad_p(np.zeros(N), p, DESIGN, grid=GRID)
    assert np.all(g == 0.0)


def test_gradient_at_zero_is_collision_operator():
    f = B.VelocityGridFn(GRID, smooth_density())
    g0 = ldp.hamiltonian_grad_p(f, np.zeros(N), DESIGN)
    cv = B.collision_operator(f, DESIGN).values
    assert np.abs(g0 - cv).max() <= 1e-14 * np.abs(cv).max()
    # pairing with a test function is the integrated collision rate
    q = NODES[:, 0] ** 3
    assert VOL * (q @ g0) == pytest.approx(VOL * (q @ cv), rel=1e-12)


def test_small_control_linearization():
    f = smooth_density()
    p = decaying_control(7, scale=1.0)
    cv = B.collision_operator(B.VelocityGridFn(GRID, f), DESIGN).values
    pair = VOL * float(p @ cv)
    s = 1e-6
    val = ldp.hamiltonian(f, s * p, DESIGN, grid=GRID) / s
    assert val == pytest.approx(pair, rel=1e-4)


def test_gradient_matches_finite_differences():
    f = smooth_density(2)
    p = decaying_control(3)
    g = ldp.hamiltonian_grad_p(f, p, DESIGN, grid=GRID)
    rng = np.random.default_rng(11)
    idx = rng.choice(N, size=12, replace=False)
    scale = np.abs(VOL * g).max()
    for z in idx:
        e = np.zeros(N)
        e[z] = 1.0
        fd = (ldp.hamiltonian(f, p + 1e-6 * e, DESIGN, grid=GRID)
              - ldp.hamiltonian(f, p - 1e-6 * e, DESIGN, grid=GRID)) / 2e-6
        assert abs(VOL * g[z] - fd) <= 1e-8 * scale


def test_collision_invariant_controls_vanish():
    # quadratic interpolation reproduces conserved quantities exactly
    f = smooth_density()
    for p in (np.ones(N), NODES[:, 0], NODES[:, 1], (NODES ** 2).sum(1)):
        assert abs(ldp.hamiltonian(f, p, DESIGN, grid=GRID)) < 1e-12


def test_convex_along_control_directions():
    f = smooth_density()
    rng = np.random.default_rng(5)
    for _ in range(3):
        p = rng.normal(size=N) * np.exp(-0.3 * (NODES ** 2).sum(1))
        vals = [ldp.hamiltonian(f, th * p, DESIGN, grid=GRID)
                for th in (-0.4, -0.2, 0.0, 0.2, 0.4)]
        assert np.diff(vals, 2).min() > -1e-12


def test_exponential_overflow_guard():
    f = smooth_density()
    spike = np.zeros(N)
    spike[int(np.argmin((NODES ** 2).sum(1)))] = 500.0
    with pytest.raises(ValueError, match="node"):
        ldp.hamiltonian(f, spike, DESIGN, grid=GRID)
    with pytest.raises(ValueError, match="node"):
        ldp.hamiltonian_grad_p(f, 40.0 * NODES[:, 0] ** 3, DESIGN, grid=GRID)


# ----------------------------------------------------------- initial rate

def test_initial_rate_identities():
    m = GRID.maxwellian(1.0)
    mass = m.sum() * VOL
    assert ldp.initial_rate(m, m, GRID) == 0.0
    for c in (0.5, 2.0, 3.7):
        want = (c * np.log(c) - c + 1.0) * mass
        assert ldp.initial_rate(c * m, m, GRID) == pytest.approx(
            want, abs=1e-12)
    rng = np.random.default_rng(9)
    bump = m * np.exp(0.3 * rng.normal(size=N))
    assert ldp.initial_rate(bump, m, GRID) > 0.0


def test_initial_rate_support_and_validation():
    m = GRID.maxwellian(1.0)
    ref = m.copy()
    ref[0] = 0.0
    phi = m.copy()
    assert ldp.initial_rate(phi, ref, GRID) == np.inf
    phi[0] = 0.0
    assert np.isfinite(ldp.initial_rate(phi, ref, GRID))
    with pytest.raises(ValueError):
        ldp.initial_rate(-m, m, GRID)


# ------------------------------------------------------------- containers

def test_density_path_validation_and_interp():
    t = np.array([0.0, 0.1, 0.3])
    vals = np.tile(GRID.maxwellian(), (3, 1))
    path = ldp.DensityPath(GRID, t, vals)
    mid = path.at(0.2)
    assert np.allclose(mid, vals[0])
    with pytest.raises(ValueError):
        path.at(0.31)
    with pytest.raises(ValueError):
        ldp.DensityPath(GRID, t[::-1], vals)
    with pytest.raises(ValueError):
        ldp.DensityPath(GRID, t, vals[:, :10])
    with pytest.raises(ValueError):
        ldp.DensityPath(GRID, t, -vals)
    # tiny negative clipped
    dirty = vals.copy()
    dirty[1, 4] = -1e-13
    clean = ldp.DensityPath(GRID, t, dirty)
    assert clean.values[1, 4] == 0.0


def test_density_path_from_kinetic():
    f0 = B.VelocityGridFn(GRID, smooth_density())
    kp = B.solve_boltzmann(f0, 0.02, 0.01, DESIGN)
    path = ldp.DensityPath.from_kinetic(kp)
    assert path.design is DESIGN
    assert np.array_equal(path.values, kp.values)


def test_control_field_cap():
    t = np.array([0.0])
    good = 0.5 * np.ones((1, N))
    cf = ldp.ControlField(GRID, t, good, c0=1.0, c2=0.0)
    assert cf.cap().min() == 1.0
    with pytest.raises(ValueError):
        ldp.ControlField(GRID, t, 2.0 * np.ones((1, N)), c0=1.0, c2=0.0)


# --------------------------------------------------------------- path rate

def test_path_rate_of_kinetic_solution_is_tiny():
    f = smooth_density()
    kp = B.solve_boltzmann(B.VelocityGridFn(GRID, f), 0.05, 0.01, DESIGN)
    res = ldp.path_rate(ldp.DensityPath.from_kinetic(kp), f, DESIGN,
                        tol=1e-7)
    assert res.initial == 0.0
    assert res.dynamic >= 0.0
    assert res.value < 1e-6
    assert res.converged
    assert res.value >= res.initial


def test_path_rate_frozen_nonequilibrium_is_positive():
    f = smooth_density()
    times = np.array([0.0, 0.025])
    path = ldp.DensityPath(GRID, times, np.tile(f, (2, 1)))
    res = ldp.path_rate(path, f, DESIGN, tol=1e-6, max_iter=300)
    assert res.initial == 0.0
    assert res.dynamic > 1e-3
    assert abs(res.value - res.dynamic) < 1e-15
    cap = res.control.cap()
    assert np.all(np.abs(res.control.values) <= cap[None, :] * (1 + 1e-9))


def test_path_rate_constant_equilibrium_is_discretization_small():
    # the grid Maxwellian is not an exact fixed point of the quadrature;
    # the rate of its constant path measures that stationarity defect
    m = GRID.maxwellian(1.0)
    times = np.array([0.0, 0.025])
    path = ldp.DensityPath(GRID, times, np.tile(m, (2, 1)))
    res = ldp.path_rate(path, m, DESIGN, tol=1e-6, max_iter=400)
    assert res.initial == 0.0
    assert 0.0 <= res.value < 1e-3


def test_path_rate_monotone_in_caps():
    f = smooth_density()
    times = np.array([0.0, 0.025])
    path = ldp.DensityPath(GRID, times, np.tile(f, (2, 1)))
    small = ldp.path_rate(path, f, DESIGN, c0=0.05, c2=0.0,
                          tol=1e-6, max_iter=150)
    big = ldp.path_rate(path, f, DESIGN, tol=1e-6, max_iter=150)
    assert small.dynamic <= big.dynamic + 1e-12
    assert small.dynamic > 0.0


def test_path_rate_rejects_bad_inputs():
    f = smooth_density()
    one = ldp.DensityPath(GRID, np.array([0.0]), f[None, :])
    with pytest.raises(ValueError):
        ldp.path_rate(one, f, DESIGN)
    two = ldp.DensityPath(GRID, np.array([0.0, 0.1]), np.tile(f, (2, 1)))
    with pytest.raises(ValueError):
        ldp.path_rate(two, f, None)


# ------------------------------------------------------- material derivative

def test_material_derivative_annihilates_transport():
    X = 64
    ts = np.linspace(0.0, 4e-3, 5)
    x = (np.arange(X) + 0.5) / X
    psi = np.exp(-0.5 * (NODES ** 2).sum(1))
    vx = NODES[:, 0]
    vals = np.empty((5, X, N))
    for k, t in enumerate(ts):
        vals[k] = np.sin(2 * np.pi * (x[:, None] - vx[None, :] * t)) \
            * psi[None, :] + 2.0
    got = ldp.material_derivative(ts, vals, GRID)
    assert got.shape == (3, X, N)
    scale = np.abs((vals[2] - vals[0]) / (ts[2] - ts[0])).max()
    assert np.abs(got).max() < 0.01 * scale
    with pytest.raises(ValueError):
        ldp.material_derivative(ts[:2], vals[:2], GRID)


# ------------------------------------------------------------ HJ residuals

def poisson_candidate(ref, times):
    def fn(t, h):
        return VOL * float((ref * np.expm1(h)).sum())
    return ldp.CgfCandidate(GRID, times, fn)


def test_candidate_must_vanish_at_zero():
    with pytest.raises(ValueError, match="vanish"):
        ldp.CgfCandidate(GRID, np.array([0.0, 1.0]),
                         lambda t, h: 1.0 + float(h.sum()))
    with pytest.raises(ValueError):
        ldp.CgfCandidate(GRID, np.array([0.0, 1.0]),
                         lambda t, h: 0.0, family=(np.ones(3),))


def test_dirac_derivative_of_linear_functional_is_exact():
    m = GRID.maxwellian(1.0)
    cand = poisson_candidate(m, np.linspace(0.0, 0.2, 11))
    h = 0.1 * np.sin(NODES[:, 0])
    d = cand.gamma_derivative(0.1, h, eps=1e-4)
    assert np.abs(d - m).max() < 1e-10


def test_hj_residual_zero_observable_exact():
    m = GRID.maxwellian(1.0)
    cand = poisson_candidate(m, np.linspace(0.0, 0.2, 11))
    r = ldp.hj_residual(cand, np.zeros(N), 0.1, m, DESIGN)
    assert r.value == 0.0
    assert r.time_term == 0.0 and r.collision_term == 0.0


def test_hj_residual_invariants_annihilate_collision_term():
    m = GRID.maxwellian(1.0)
    cand = poisson_candidate(m, np.linspace(0.0, 0.2, 11))
    for h in (0.3 * np.ones(N), NODES[:, 1], 0.2 * (NODES ** 2).sum(1)):
        r = ldp.hj_residual(cand, h, 0.1, m, DESIGN, check_stability=False)
        assert abs(r.collision_term) < 1e-12


def test_hj_residual_poisson_at_equilibrium_is_quadrature_small():
    # gain and loss of the collision bracket balance under the grid
    # measure up to interpolation error; the bound is frozen from runs
    # at this resolution
    m = GRID.maxwellian(1.0)
    cand = poisson_candidate(m, np.linspace(0.0, 0.2, 11))
    h = 0.2 * np.exp(-((NODES[:, 0] - 0.7) ** 2 + (NODES[:, 1] + 0.4) ** 2))
    r = ldp.hj_residual(cand, h, 0.1, m, DESIGN)
    assert r.time_term == 0.0
    assert abs(r.value) < 1.5e-3
    assert r.stability < 1e-9


def test_hj_residual_vanishes_for_matched_linear_candidate():
    # time-linear functional whose slope is the same collision bracket
    # the checker assembles: defect is pure rounding at t = 0
    m = GRID.maxwellian(1.0)
    mask = (m > m.max() * 1e-12).astype(float)
    sel, vp1, vp2 = ldp._collision_nodes(GRID, DESIGN, mask)

    def quad_form(h):
        g1, _ = C.gather_at(GRID, h, vp1)
        g2, _ = C.gather_at(GRID, h, vp2)
        return float((sel.ww * m[sel.ii] * m[sel.jj]
                      * (np.exp(g1 + g2)
                         - np.exp(h[sel.ii] + h[sel.jj]))).sum())

    def fn(t, h):
        h = np.asarray(h, float)
        return VOL * float((m * np.expm1(h)).sum()) + t * quad_form(h)

    cand = ldp.CgfCandidate(GRID, np.linspace(-0.1, 0.1, 11), fn)
    h = 0.2 * np.exp(-((NODES[:, 0] - 0.7) ** 2
                       + (NODES[:, 1] + 0.4) ** 2))
    r = ldp.hj_residual(cand, h, 0.0, m, DESIGN, check_stability=False)
    assert abs(r.time_term - quad_form(h)) < 1e-13 * max(
        1.0, abs(r.time_term))
    assert abs(r.value) < 1e-9 * max(1.0, abs(r.time_term))


def test_hj_residual_range_and_spacing_checks():
    m = GRID.maxwellian(1.0)
    cand = poisson_candidate(m, np.linspace(0.0, 0.2, 11))
    with pytest.raises(ValueError):
        ldp.hj_residual(cand, np.zeros(N), 0.0, m, DESIGN)
    single = poisson_candidate(m, np.array([0.5]))
    with pytest.raises(ValueError):
        ldp.hj_residual(single, np.zeros(N), 0.5, m, DESIGN)


# ---------------------------------------------------------- Legendre rate

def test_legendre_rate_poisson_oracle():
    m = GRID.maxwellian(1.0)
    phi = m * np.exp(0.3 * np.sin(NODES[:, 0]))
    hstar = np.log(phi / m)
    times = np.array([0.0, 1.0])
    path = ldp.DensityPath(GRID, times, np.tile(phi, (2, 1)))

    def fn(t, h):
        return VOL * float((m * np.expm1(h)).sum())

    full = ldp.CgfCandidate(GRID, times, fn,
                            family=(np.zeros(N), 0.5 * hstar, hstar))
    sub = ldp.CgfCandidate(GRID, times, fn,
                           family=(np.zeros(N), 0.5 * hstar))
    trivial = ldp.CgfCandidate(GRID, times, fn, family=(np.zeros(N),))
    want = ldp.initial_rate(phi, m, GRID)
    got = ldp.legendre_rate(full, path, 0.5)
    assert got == pytest.approx(want, abs=1e-12)
    assert ldp.legendre_rate(trivial, path, 0.5) == 0.0
    assert ldp.legendre_rate(sub, path, 0.5) <= got
    none = ldp.CgfCandidate(GRID, times, fn)
    with pytest.raises(ValueError):
        ldp.legendre_rate(none, path, 0.5)
