"""Test-function families and path observables."""

import numpy as np
import pytest

import hsfluct as hs
from hsfluct.observables import (PathObservable, TestFunction,
                                 collision_invariant, hermite_fourier_family,
                                 validate_family)


def test_growth_bound_check():
    ok = TestFunction(fn=lambda x, v: v[..., 0], alpha0=0.0, quad=1.0,
                      name="v0")
    assert ok.bound_ok(np.array([[0.5, 0.5]]), np.array([[3.0, 0.0]]))
    bad = TestFunction(fn=lambda x, v: v[..., 0] ** 4, alpha0=1.0, quad=1.0,
                       name="v0^4")
    assert not bad.bound_ok(np.array([[0.5, 0.5]]), np.array([[3.0, 0.0]]))


def test_validate_family_raises_on_violation():
    bad = TestFunction(fn=lambda x, v: np.exp((v * v).sum(axis=-1)),
                       alpha0=1.0, quad=1.0, name="too-big")
    with pytest.raises(ValueError):
        validate_family([bad], d=2)


def test_hermite_fourier_family_shape_and_bounds():
    for d in (2, 3):
        fam = hermite_fourier_family(d, max_vdeg=2, x_modes=1)
        validate_family(fam, d=d)
        names = [h.name for h in fam]
        assert len(names) == len(set(names))
        # constant member evaluates to one everywhere
        const = [h for h in fam if h.name == "1"][0]
        x = np.full((4, d), 0.25)
        v = np.zeros((4, d))
        assert np.allclose(const(x, v), 1.0)


def test_hermite_members_orthogonal_under_maxwellian():
    # velocity factors are orthonormal Hermite polynomials for beta = 1
    rng = np.random.default_rng(5)
    fam = hermite_fourier_family(2, max_vdeg=2, x_modes=0)
    v = rng.normal(size=(200_000, 2))
    x = rng.random(size=(200_000, 2))
    vals = np.stack([h(x, v) for h in fam])
    gram = vals @ vals.T / vals.shape[1]
    assert np.allclose(gram, np.eye(len(fam)), atol=0.02)


def test_collision_invariant_values():
    h = collision_invariant(2, a=1.0, b=np.array([2.0, 0.0]), c=0.5)
    x = np.array([[0.1, 0.1]])
    v = np.array([[3.0, 4.0]])
    assert h(x, v)[0] == pytest.approx(1.0 + 6.0 + 0.5 * 25.0)
    assert h.bound_ok(x, v)


def test_path_observable_validation():
    h = collision_invariant(2, c=1.0)
    with pytest.raises(ValueError):
        PathObservable(times=(0.2, 0.1), weights=(h, h))
    with pytest.raises(ValueError):
        PathObservable(times=(0.1,), weights=(h, h))
    with pytest.raises(ValueError):
        PathObservable.weighted(h, (0.0, 0.5), (1.0,))
    obs = PathObservable(times=(0.0, 0.5), weights=(h, h))
    with pytest.raises(ValueError):
        obs.check_span(0.0, 0.3)
    obs.check_span(0.0, 0.5)


def test_path_observable_particle_total():
    rng = np.random.default_rng(2)
    cfg = hs.ScalingConfig.from_mu(2, 40.0)
    from hsfluct.profiles import DensityProfile, sample_configuration
    prof = DensityProfile.maxwellian(2, beta=1.0)
    st = sample_configuration(cfg, prof, rng)
    traj = hs.run(st, cfg, t_end=0.4)
    one = TestFunction(fn=lambda x, v: np.ones(v.shape[:-1]), alpha0=1.0,
                       quad=0.0, name="1")
    obs = PathObservable(times=(0.0, 0.4), weights=(one, one))
    assert obs.particle_total(traj) == pytest.approx(2.0 * st.n)
    # opposite signs at two times cancel for a conserved energy sum
    he = collision_invariant(2, c=1.0)
    obs_e = PathObservable.weighted(he, (0.0, 0.4), (1.0, -1.0))
    assert obs_e.particle_total(traj) == pytest.approx(0.0, abs=1e-10)
    obs_2e = PathObservable(times=(0.0, 0.4), weights=(he, he))
    assert obs_2e.particle_total(traj) == pytest.approx(
        2.0 * (st.v ** 2).sum(), rel=1e-12)
