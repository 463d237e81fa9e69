"""Deterministic kinetic solver against closed forms and the particle oracle."""

import numpy as np
import pytest

from hsfluct import boltzmann as B
from hsfluct import collision as C
from hsfluct.profiles import DensityProfile
from hsfluct.vgrid import VelocityGrid


def smooth_positive(grid, seed, width=1.0):
    rng = np.random.default_rng(seed)
    nodes = grid.nodes()
    f = np.exp(-0.5 * (nodes ** 2).sum(1) / width)
    f *= 1.0 + 0.5 * np.sin(nodes[:, 0] * 2.0) * rng.uniform(0.5, 1.0)
    return f / (f.sum() * grid.cell_volume)


@pytest.fixture(scope="module")
def eq32():
    grid = VelocityGrid(2, 32, 5.0)
    return grid, C.circle_design(16), B.VelocityGridFn(grid,
                                                       grid.maxwellian(1.0))


def test_grid_fn_validation():
    grid = VelocityGrid(2, 8, 2.0)
    with pytest.raises(ValueError):
        B.VelocityGridFn(grid, np.ones(5))
    with pytest.raises(ValueError):
        B.VelocityGridFn(grid, np.full(grid.n_nodes, np.nan))
    f = B.VelocityGridFn(grid, np.full(grid.n_nodes, 1.0 / 16.0))
    assert f.mass == pytest.approx(1.0)
    assert np.allclose(f.momentum(), 0.0)


def test_grid_density_matches_aligned_profile():
    prof = DensityProfile.bimodal(2, beta=1.0, shift=1.5, m=40, vmax=6.0)
    grid = VelocityGrid(2, 40, 6.0)
    f = B.grid_density(grid, prof)
    assert f.mass == pytest.approx(1.0, rel=1e-12)
    raw = prof.velocity_density(grid.nodes())
    raw = raw / (raw.sum() * grid.cell_volume)
    assert np.allclose(f.values, raw, rtol=1e-10)


def test_h_functional_maxwellian_closed_form():
    grid = VelocityGrid(2, 32, 5.0)
    f = B.VelocityGridFn(grid, grid.maxwellian(1.0))
    # int M log M = -(1 + log 2 pi) for unit temperature in d = 2
    assert B.h_functional(f) == pytest.approx(-(1.0 + np.log(2 * np.pi)),
                                              rel=1e-3)


def test_equilibrium_step_identity(eq32):
    grid, des, M = eq32
    out = B.step_boltzmann(M, 0.002, des)
    assert np.abs(out.values - M.values).max() <= 1e-6 * M.values.max()
    assert out.time == pytest.approx(0.002)


def test_step_conserves_moments():
    grid = VelocityGrid(2, 24, 5.0)
    des = C.circle_design(16)
    f = B.VelocityGridFn(grid, smooth_positive(grid, seed=0))
    p0, e0 = f.momentum(), f.energy()
    for _ in range(10):
        f = B.step_boltzmann(f, 0.01, des)
    assert f.mass == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(f.momentum(), p0, atol=1e-10)
    assert f.energy() == pytest.approx(e0, abs=1e-9)


def test_h_functional_nonincreasing():
    grid = VelocityGrid(2, 24, 5.0)
    des = C.circle_design(16)
    for seed in range(5):
        f = B.VelocityGridFn(grid, smooth_positive(grid, seed=seed))
        h_prev = B.h_functional(f)
        for _ in range(8):
            f = B.step_boltzmann(f, 0.01, des)
            h_now = B.h_functional(f)
            assert h_now <= h_prev + 1e-10
            h_prev = h_now


def test_step_negativity_abort():
    grid = VelocityGrid(2, 24, 5.0)
    des = C.circle_design(16)
    prof = DensityProfile.bimodal(2, beta=1.0, shift=1.5, m=24, vmax=5.0)
    f = B.grid_density(grid, prof)
    with pytest.raises(ValueError):
        B.step_boltzmann(f, 5.0, des)


def test_linearized_dissipative_at_equilibrium(eq32):
    grid, des, M = eq32
    rng = np.random.default_rng(3)
    damp = np.exp(-0.2 * (grid.nodes() ** 2).sum(1))
    for _ in range(8):
        h = B.VelocityGridFn(grid, rng.normal(size=grid.n_nodes) * damp
                             * M.values)
        lh = B.linearized_apply(M, h, des)
        assert grid.pair(lh.values, h.values / M.values) < 0.0


def test_linearized_adjoint_constant_is_zero(eq32):
    grid, des, M = eq32
    out = B.linearized_adjoint_apply(M, np.ones(grid.n_nodes), des)
    assert np.abs(out.values).max() < 1e-14


def test_mean_free_time_equilibrium(eq32):
    grid, des, M = eq32
    # d = 2, beta = 1: mean relative speed sqrt(pi), kernel mass 2
    assert B.mean_free_time(M) == pytest.approx(1.0 / (2 * np.sqrt(np.pi)),
                                                rel=1e-3)


# ------------------------------------------------------- particle oracle

@pytest.fixture(scope="module")
def bimodal_dsmc():
    prof = DensityProfile.bimodal(2, beta=1.0, shift=1.5, m=40, vmax=6.0)
    rng = np.random.default_rng(12345)
    return prof, B.dsmc_run(prof, 100_000, (0.0, 0.1, 0.2), rng)


def test_relaxation_matches_dsmc(bimodal_dsmc):
    prof, res = bimodal_dsmc
    grid = VelocityGrid(2, 40, 6.0)
    path = B.solve_boltzmann(B.grid_density(grid, prof), 0.2, 0.02,
                             C.circle_design(16))
    vx2 = grid.nodes()[:, 0] ** 2
    mom = res.moment(lambda v: v[:, 0] ** 2)
    se = res.moment_se(lambda v: v[:, 0] ** 2)
    for k, t in enumerate((0.0, 0.1, 0.2)):
        solver_val = grid.pair(path.at(t), vx2)
        assert abs(solver_val - mom[k]) < 3.0 * se[k]
    # relaxation actually happened over the window
    assert mom[0] - mom[2] > 30.0 * se[0]


def test_dsmc_exact_conservation(bimodal_dsmc):
    _, res = bimodal_dsmc
    first, last = res.snapshots[0], res.snapshots[-1]
    assert np.abs(first.sum(0) - last.sum(0)).max() < 1e-9
    e0 = (first ** 2).sum()
    assert abs((last ** 2).sum() - e0) < 1e-12 * e0


def test_dsmc_isotropization(bimodal_dsmc):
    _, res = bimodal_dsmc
    aniso = res.moment(lambda v: v[:, 0] ** 2 - v[:, 1] ** 2)
    se = res.moment_se(lambda v: v[:, 0] ** 2 - v[:, 1] ** 2)
    assert aniso[0] > aniso[1] + 3 * (se[0] + se[1])
    assert aniso[1] > aniso[2] + 3 * (se[1] + se[2])


def test_dsmc_equilibrium_stationary():
    mx = DensityProfile.maxwellian(2, beta=1.0)
    res = B.dsmc_run(mx, 20_000, (0.0, 2.0), np.random.default_rng(7))
    mom = res.moment(lambda v: v[:, 0] ** 2)
    se = res.moment_se(lambda v: v[:, 0] ** 2)
    assert abs(mom[-1] - 1.0) < 3 * se[-1]
    tau_emp = 20_000 * 2.0 / (2.0 * res.n_collisions)
    assert tau_emp == pytest.approx(1.0 / (2 * np.sqrt(np.pi)), rel=0.02)


def test_dsmc_validation():
    mx = DensityProfile.maxwellian(2, beta=1.0)
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        B.dsmc_run(mx, 1, (0.0, 1.0), rng)
    with pytest.raises(ValueError):
        B.dsmc_run(mx, 100, (-0.5, 0.2), rng)


def test_dsmc_handles_initial_fast_particle():
    # majorant must track speed growth when a hot tail particle spreads
    # energy through the population
    mx = DensityProfile.bimodal(2, beta=0.25, shift=3.0, m=48, vmax=12.0)
    res = B.dsmc_run(mx, 2_000, (0.0, 0.5), np.random.default_rng(42))
    assert res.n_collisions > 0
    e0 = (res.snapshots[0] ** 2).sum()
    assert abs((res.snapshots[-1] ** 2).sum() - e0) < 1e-12 * e0


# ------------------------------------------------------------- path object

def test_kinetic_path_interpolation():
    grid = VelocityGrid(2, 16, 4.0)
    des = C.circle_design(8)
    f0 = B.VelocityGridFn(grid, smooth_positive(grid, seed=1))
    path = B.solve_boltzmann(f0, 0.1, 0.02, des)
    assert len(path.times) == 6
    assert path.dt == pytest.approx(0.02)
    mid = path.at(0.03)
    assert np.allclose(mid, 0.5 * (path.at(0.02) + path.at(0.04)))
    assert np.array_equal(path.at(0.0), f0.values)
    assert path.final.time == pytest.approx(0.1)
    with pytest.raises(ValueError):
        path.at(-0.01)
    with pytest.raises(ValueError):
        path.at(0.11)


def test_solve_rejects_bad_horizon():
    grid = VelocityGrid(2, 16, 4.0)
    f0 = B.VelocityGridFn(grid, smooth_positive(grid, seed=1))
    with pytest.raises(ValueError):
        B.solve_boltzmann(f0, 0.0, 0.01)
