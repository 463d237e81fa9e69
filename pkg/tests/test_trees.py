"""Backward tree constructions and the truncated collision series."""

import itertools
import math

import numpy as np
import pytest

from hsfluct.dsmc import dsmc_run
from hsfluct.dynamics import SystemState
from hsfluct.profiles import DensityProfile
from hsfluct.trees import (CollisionTree, TreeParams, build_pseudo,
                           build_pseudo_limit, classify_pair_clustering,
                           count_trees, detect_recollisions,
                           forward_replay_check, mc_f1_estimate,
                           mc_moment_estimate, random_tree,
                           sample_tree_params, tree_weight)


def torus_gap(a, b):
    d = a - b
    return d - np.round(d)


EMPTY = TreeParams((), [], [])


# ------------------------------------------------------------- counting

def test_count_trees_matches_enumeration():
    for n in (1, 2, 3):
        for m in range(6):
            ranges = [range(n + i) for i in range(m)]
            seen = 0
            for labels in itertools.product(*ranges):
                CollisionTree(n, labels)  # validates every sequence
                seen += 1
            assert count_trees(n, m) == seen


def test_count_trees_examples():
    for m in range(7):
        assert count_trees(1, m) == math.factorial(m)
    assert count_trees(5, 0) == 1
    assert count_trees(2, 3) == 24


def test_count_trees_big_integers_exact():
    want = 1
    for k in range(30):
        want *= 2 + k
    got = count_trees(2, 30)
    assert got == want
    assert isinstance(got, int)


def test_tree_validation():
    with pytest.raises(ValueError):
        count_trees(0, 2)
    with pytest.raises(ValueError):
        CollisionTree(1, (1,))     # first insertion can only join the root
    with pytest.raises(ValueError):
        CollisionTree(0, ())
    CollisionTree(2, (1, 2, 0))    # valid: root 1, then the inserted one


def test_params_validation():
    with pytest.raises(ValueError):
        TreeParams((0.2, 0.3), np.array([[1.0, 0], [1.0, 0]]),
                   np.zeros((2, 2)))  # increasing times
    with pytest.raises(ValueError):
        TreeParams((0.3,), np.array([[2.0, 0.0]]), np.zeros((1, 2)))
    with pytest.raises(ValueError):
        TreeParams((0.3, 0.2), np.array([[1.0, 0.0]]), np.zeros((1, 2)))
    assert EMPTY.m == 0


# ------------------------------------------------------------- building

def test_m0_is_free_backward_flow():
    rng = np.random.default_rng(0)
    root = SystemState(rng.random((2, 2)), rng.standard_normal((2, 2)), 0.7)
    psi = build_pseudo_limit(root, CollisionTree(2, ()), EMPTY)
    assert psi.admissible and tree_weight(psi) == 1.0
    want = (root.x - 0.7 * root.v) % 1.0
    np.testing.assert_allclose(psi.psi0.x, want, atol=1e-13)
    np.testing.assert_array_equal(psi.psi0.v, root.v)
    assert len(psi.segments) == 1 and psi.segments[0].bot.time == 0.0


def test_particle_counts_per_interval():
    rng = np.random.default_rng(1)
    root = SystemState(rng.random((2, 2)), rng.standard_normal((2, 2)), 1.0)
    tree = random_tree(2, 3, rng)
    params = sample_tree_params(1.0, 3, 2, rng)
    psi = build_pseudo_limit(root, tree, params)
    assert [seg.bot.n for seg in psi.segments] == [2, 3, 4, 5]
    times = [seg.t_lo for seg in psi.segments]
    assert times == [*params.times, 0.0]


def test_scattering_branch_toggles_at_zero():
    root = SystemState(np.array([[0.5, 0.5]]), np.array([[0.0, 0.0]]), 1.0)
    tree = CollisionTree(1, (0,))
    for s, scattered in ((1e-9, True), (-1e-9, False)):
        params = TreeParams((0.5,), np.array([[1.0, 0.0]]),
                            np.array([[s, 1.0]]))
        psi = build_pseudo_limit(root, tree, params)
        ins = psi.insertions[0]
        assert ins.scattered is scattered
        assert ins.lam == pytest.approx(s, abs=0)
        if scattered:
            assert psi.psi0.v[1, 0] != s       # reflected component
        else:
            np.testing.assert_array_equal(psi.psi0.v[1], [s, 1.0])


def test_weight_recomputation_and_sign_flip():
    rng = np.random.default_rng(2)
    for _ in range(20):
        m = int(rng.integers(1, 4))
        root = SystemState(rng.random((1, 2)),
                           rng.standard_normal((1, 2)), 0.9)
        tree = random_tree(1, m, rng)
        params = sample_tree_params(0.9, m, 2, rng)
        psi = build_pseudo_limit(root, tree, params)
        again = 1.0
        for ins in psi.insertions:
            again *= float((ins.v_in - ins.partner_v_before) @ ins.omega)
        assert tree_weight(psi) == pytest.approx(again, rel=1e-13)
    # single insertion: negating the direction flips the sign exactly
    root = SystemState(np.array([[0.4, 0.4]]), np.array([[0.2, -0.1]]), 0.8)
    params = sample_tree_params(0.8, 1, 2, np.random.default_rng(3))
    flipped = TreeParams(params.times, -params.omegas, params.velocities)
    w1 = tree_weight(build_pseudo_limit(root, CollisionTree(1, (0,)), params))
    w2 = tree_weight(build_pseudo_limit(root, CollisionTree(1, (0,)),
                                        flipped))
    assert w2 == pytest.approx(-w1, rel=1e-13)


def test_build_validation():
    root = SystemState(np.array([[0.5, 0.5]]), np.zeros((1, 2)), 1.0)
    tree = CollisionTree(1, (0,))
    good = TreeParams((0.5,), np.array([[1.0, 0.0]]), np.ones((1, 2)))
    with pytest.raises(ValueError):
        build_pseudo(root, CollisionTree(2, ()), EMPTY, 0.0)  # size mismatch
    with pytest.raises(ValueError):
        build_pseudo(root, tree, EMPTY, 0.0)          # one row per insertion
    with pytest.raises(ValueError):
        build_pseudo(root, tree, good, -0.1)
    late = TreeParams((1.5,), np.array([[1.0, 0.0]]), np.ones((1, 2)))
    with pytest.raises(ValueError):
        build_pseudo(root, tree, late, 0.0)           # outside (0, t)


def test_inadmissible_insertion_flagged():
    # second insertion lands exactly on the first particle's sphere center
    eps = 0.24
    root = SystemState(np.array([[0.5, 0.5]]), np.zeros((1, 2)), 1e-3)
    tree = CollisionTree(1, (0, 0))
    params = TreeParams((2e-4, 1e-4),
                        np.array([[1.0, 0.0], [1.0, 0.0]]),
                        np.array([[1.0, 0.0], [1.0, 0.0]]))
    psi = build_pseudo(root, tree, params, eps)
    assert not psi.admissible
    assert psi.psi0 is None
    with pytest.raises(ValueError):
        detect_recollisions(psi)
    with pytest.raises(ValueError):
        forward_replay_check(psi)


# ----------------------------------------------- replay, coupling, kinds

def test_forward_replay_random_instances():
    rng = np.random.default_rng(42)
    checked = 0
    for _ in range(120):
        m = int(rng.integers(1, 4))
        root = SystemState(rng.random((1, 2)),
                           rng.standard_normal((1, 2)), 0.4)
        tree = random_tree(1, m, rng)
        params = sample_tree_params(0.4, m, 2, rng)
        psi = build_pseudo(root, tree, params, 0.01)
        if not psi.admissible:
            continue
        rep = forward_replay_check(psi)
        assert rep["ok"], rep
        checked += 1
    assert checked > 100


def test_epsilon_coupling_bound():
    # absent recollisions the two constructions stay within 10 m eps
    rng = np.random.default_rng(7)
    eps = 0.01
    compared = 0
    for _ in range(1000):
        m = int(rng.integers(1, 4))
        root = SystemState(rng.random((1, 2)),
                           rng.standard_normal((1, 2)), 0.4)
        tree = random_tree(1, m, rng)
        params = sample_tree_params(0.4, m, 2, rng)
        psi = build_pseudo(root, tree, params, eps)
        if not psi.admissible or len(detect_recollisions(psi)):
            continue
        lim = build_pseudo_limit(root, tree, params)
        gap = np.abs(torus_gap(psi.psi0.x, lim.psi0.x)).max()
        assert gap <= 10 * m * eps
        np.testing.assert_array_equal(psi.psi0.v, lim.psi0.v)
        compared += 1
    assert compared > 900


def test_engineered_recollision():
    # the second insertion scatters particle 1 straight back at particle 0;
    # they meet head on during the remaining backward transport
    eps = 0.02
    root = SystemState(np.array([[0.5, 0.5]]), np.zeros((1, 2)), 1.0)
    tree = CollisionTree(1, (0, 1))
    params = TreeParams((0.6, 0.4),
                        np.array([[1.0, 0.0], [1.0, 0.0]]),
                        np.array([[1.0, 0.0], [2.0, 0.0]]))
    psi = build_pseudo(root, tree, params, eps)
    assert psi.admissible
    rec = detect_recollisions(psi)
    assert len(rec) == 1
    ev = rec.events[0]
    assert {ev.i, ev.j} == {0, 1} and ev.kind == "recollision"
    assert ev.time == pytest.approx(0.2, abs=1e-9)
    assert forward_replay_check(psi)["ok"]
    with pytest.raises(ValueError):
        detect_recollisions(psi, epsilon=0.5)


def test_point_limit_crossing_detected():
    # same geometry without scattering: particle 2 crosses particle 0's
    # backward path within tolerance
    root = SystemState(np.array([[0.5, 0.5]]), np.zeros((1, 2)), 1.0)
    tree = CollisionTree(1, (0, 1))
    params = TreeParams((0.6, 0.4),
                        np.array([[1.0, 0.0], [0.0, 1.0]]),
                        np.array([[1.0, 0.0], [2.0, -1e-12]]))
    psi = build_pseudo_limit(root, tree, params)
    rec = detect_recollisions(psi)
    assert [(e.i, e.j) for e in rec.events] == [(0, 2)]
    assert rec.events[0].time == pytest.approx(0.2, abs=1e-6)
    assert rec.delta == 1e-9
    # birth contacts themselves are not recollisions
    quiet = TreeParams((0.5,), np.array([[0.0, 1.0]]),
                       np.array([[0.0, -1.0]]))
    calm = build_pseudo_limit(root, CollisionTree(1, (0,)), quiet)
    assert len(detect_recollisions(calm)) == 0


def test_pair_clustering_kinds():
    r1 = SystemState(np.array([[0.2, 0.5]]), np.array([[1.0, 0.0]]), 0.4)
    r2 = SystemState(np.array([[0.8, 0.5]]), np.array([[-1.0, 0.0]]), 0.4)
    tr = CollisionTree(1, ())
    p1 = build_pseudo_limit(r1, tr, EMPTY)
    p2 = build_pseudo_limit(r2, tr, EMPTY)
    cl = classify_pair_clustering(p1, p2)
    assert [(e.i, e.j, e.kind) for e in cl.events] == [(0, 0, "overlap")]
    assert cl.events[0].time == pytest.approx(0.2, abs=1e-9)
    rev = classify_pair_clustering(p2, p1)
    assert [(e.time, e.kind) for e in rev.events] == \
        [(e.time, e.kind) for e in cl.events]

    # spatially disjoint, bounded velocities: nothing to report
    r3 = SystemState(np.array([[0.1, 0.1]]), np.zeros((1, 2)), 0.4)
    r4 = SystemState(np.array([[0.6, 0.6]]), np.zeros((1, 2)), 0.4)
    assert len(classify_pair_clustering(build_pseudo_limit(r3, tr, EMPTY),
                                        build_pseudo_limit(r4, tr, EMPTY))) \
        == 0

    # at positive diameter an approaching contact is a recollision
    q1 = build_pseudo(r1, tr, EMPTY, 0.02)
    q2 = build_pseudo(r2, tr, EMPTY, 0.02)
    kinds = [e.kind for e in classify_pair_clustering(q1, q2).events]
    assert kinds == ["recollision"]
    with pytest.raises(ValueError):
        classify_pair_clustering(q1, p2)


# ----------------------------------------------------- series estimates

def dense_collision_rate(profile, v_star, nv=240, vmax=7.0, ntheta=512):
    """Direct double quadrature of the hard-sphere gain-loss integrand."""
    ax = np.linspace(-vmax, vmax, nv)
    dv = ax[1] - ax[0]
    v1 = np.stack(np.meshgrid(ax, ax, indexing="ij"), -1).reshape(-1, 2)
    f1 = profile.velocity_density(v1)
    v_star = np.asarray(v_star, float)
    fstar = profile.velocity_density(v_star[None, :])[0]
    total = 0.0
    for k in range(ntheta):
        th = 2 * np.pi * (k + 0.5) / ntheta
        om = np.array([np.cos(th), np.sin(th)])
        lam = (v_star - v1) @ om
        pos = lam > 0
        vp = v_star[None, :] - lam[pos, None] * om[None, :]
        v1p = v1[pos] + lam[pos, None] * om[None, :]
        gain = profile.velocity_density(vp) * profile.velocity_density(v1p)
        total += (lam[pos] * (gain - fstar * f1[pos])).sum()
    return total * dv * dv * (2 * np.pi / ntheta)


def test_first_order_matches_direct_quadrature():
    prof = DensityProfile.bimodal(2, shift=1.5)
    t = 0.05
    v_star = [1.5, 0.0]
    est = mc_f1_estimate(prof, t, v_star, 2, 200000,
                         np.random.default_rng(7))
    want = t * dense_collision_rate(prof, v_star)
    assert abs(est.orders[1] - want) < 3.0 * est.ses[1] + 5e-5
    # the first correction is resolved, not noise
    assert abs(est.orders[1]) > 20 * est.ses[1]


def test_t_zero_returns_initial_density():
    prof = DensityProfile.bimodal(2, shift=1.5)
    v_star = np.array([0.7, -0.4])
    est = mc_f1_estimate(prof, 0.0, v_star, 3, 10, np.random.default_rng(0))
    assert est.value == prof.velocity_density(v_star[None, :])[0]
    assert est.se == 0.0 and est.tail == 0.0


def test_equilibrium_series_time_independent():
    eq = DensityProfile.maxwellian(2)
    v_star = [0.7, -0.4]
    base = eq.velocity_density(np.asarray(v_star)[None, :])[0]
    for t in (0.05, 0.15):
        est = mc_f1_estimate(eq, t, v_star, 3, 100000,
                             np.random.default_rng(11))
        assert abs(est.value - base) < 3.0 * est.se
        # every correction order individually consistent with zero
        assert np.all(np.abs(est.orders[1:]) < 3.0 * est.ses[1:])


def test_moments_match_dsmc():
    prof = DensityProfile.bimodal(2, shift=1.5)
    t = 0.0389    # about a fifth of the initial mean free time
    est = mc_moment_estimate(prof, lambda x, v: v[:, 0] ** 2, t, 4, 400000,
                             np.random.default_rng(3))
    res = dsmc_run(prof, 200000, (0.0, t), np.random.default_rng(11))
    mom = res.moment(lambda v: v[:, 0] ** 2)
    se = res.moment_se(lambda v: v[:, 0] ** 2)
    z = (est.value - mom[1]) / np.hypot(est.se, se[1])
    assert abs(z) < 3.0
    # the relaxation itself is resolved
    assert est.orders[1] < -10 * est.ses[1]


def test_series_terms_decay_factorially():
    prof = DensityProfile.bimodal(2, shift=1.5)
    t = 0.0389
    est = mc_moment_estimate(prof, lambda x, v: v[:, 0] ** 2, t, 4, 400000,
                             np.random.default_rng(5))
    mags = np.maximum(np.abs(est.orders), est.ses)
    scaled = [mags[m] * math.factorial(m) for m in range(5)]
    assert scaled[1] > scaled[2] > scaled[3]
    assert est.c0_fit * t < 1.0
    assert 0.0 < est.tail < mags[3]


def test_positive_diameter_estimate_consistent():
    prof = DensityProfile.bimodal(2, shift=1.5)
    t, v_star, eps = 0.04, [1.5, 0.0], 0.01
    e0 = mc_f1_estimate(prof, t, v_star, 2, 60000, np.random.default_rng(5))
    ee = mc_f1_estimate(prof, t, v_star, 2, 2000, np.random.default_rng(6),
                        epsilon=eps)
    assert ee.n_rejected > 0
    assert abs(ee.value - e0.value) < 3.0 * np.hypot(e0.se, ee.se) + eps


def test_degenerate_proposal_raises():
    eq = DensityProfile.maxwellian(2)
    with pytest.raises(RuntimeError):
        mc_f1_estimate(eq, 1e-3, [0.0, 0.0], 2, 2, np.random.default_rng(0),
                       epsilon=0.24)
    with pytest.raises(ValueError):
        mc_f1_estimate(eq, 0.1, [0.0, 0.0], 7, 10, np.random.default_rng(0))
    with pytest.raises(ValueError):
        mc_f1_estimate(eq, 0.1, [0.0, 0.0], 2, 10, np.random.default_rng(0),
                       proposal_beta=0.0)
    with pytest.raises(ValueError):
        mc_moment_estimate(eq, lambda x, v: v[:, 0], -0.1, 2, 10,
                           np.random.default_rng(0))