"""Backward branching constructions for the short-time collision series.

A tree prescribes which existing particle each inserted particle attaches
to; parameters give the insertion times, contact directions, and incoming
velocities. Building the corresponding trajectory backward from the final
configuration, at positive sphere diameter or in the point limit, yields a
signed Monte Carlo representation of the one-particle density truncated at
a fixed number of collisions.
"""

import dataclasses
import math
from typing import Optional, Tuple

import numpy as np

from . import dynamics as dyn
from .dynamics import ScalingConfig, SystemState

_SPHERE_AREA = {2: 2.0 * np.pi, 3: 4.0 * np.pi}


def count_trees(n: int, m: int) -> int:
    """Number of attachment label sequences: n (n+1) ... (n+m-1)."""
    if n < 1 or m < 0:
        raise ValueError("need n >= 1 and m >= 0")
    out = 1
    for k in range(m):
        out *= n + k
    return out


@dataclasses.dataclass(frozen=True)
class CollisionTree:
    """Attachment labels: insertion i joins particle labels[i], an index
    among the n roots (0..n-1) and the i previously inserted particles
    (n..n+i-1)."""

    n: int
    labels: Tuple[int, ...]

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("need at least one root")
        labels = tuple(int(a) for a in self.labels)
        for i, a in enumerate(labels):
            if not 0 <= a <= self.n + i - 1:
                raise ValueError(f"label {a} out of range at insertion {i}")
        object.__setattr__(self, "labels", labels)

    @property
    def m(self) -> int:
        return len(self.labels)


def random_tree(n: int, m: int, rng: np.random.Generator) -> CollisionTree:
    return CollisionTree(n, tuple(int(rng.integers(0, n + i))
                                  for i in range(m)))


@dataclasses.dataclass(frozen=True)
class TreeParams:
    """Insertion times (strictly decreasing), contact directions, and
    incoming velocities, one row per insertion."""

    times: Tuple[float, ...]
    omegas: np.ndarray
    velocities: np.ndarray

    def __post_init__(self):
        times = tuple(float(t) for t in self.times)
        om = np.atleast_2d(np.asarray(self.omegas, float))
        ve = np.atleast_2d(np.asarray(self.velocities, float))
        m = len(times)
        if m == 0:
            om = om.reshape(0, max(om.shape[-1], 1))
            ve = ve.reshape(0, max(ve.shape[-1], 1))
        if om.shape[0] != m or ve.shape[:1] != om.shape[:1]:
            raise ValueError("need one direction and velocity per insertion")
        if any(t2 >= t1 for t1, t2 in zip(times, times[1:])):
            raise ValueError("times must be strictly decreasing")
        if m and not np.allclose(np.linalg.norm(om, axis=1), 1.0, atol=1e-9):
            raise ValueError("directions must be unit vectors")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "omegas", om)
        object.__setattr__(self, "velocities", ve)

    @property
    def m(self) -> int:
        return len(self.times)


def sample_tree_params(t: float, m: int, d: int, rng: np.random.Generator,
                       proposal_beta: float = 0.5) -> TreeParams:
    """Simplex-uniform times, sphere-uniform directions, Gaussian
    velocities: the proposal law of the series estimator."""
    times = tuple(np.sort(rng.random(m))[::-1] * t)
    return TreeParams(times, _uniform_sphere(rng, m, d),
                      rng.standard_normal((m, d)) / np.sqrt(proposal_beta))


@dataclasses.dataclass(frozen=True)
class Insertion:
    """Bookkeeping for one backward insertion event."""

    time: float
    new_id: int
    partner: int
    omega: np.ndarray
    v_in: np.ndarray
    lam: float              # (v_in - v_partner) . omega, signed
    scattered: bool         # lam > 0: the contact is post-collisional
    partner_v_before: np.ndarray


@dataclasses.dataclass(frozen=True)
class Segment:
    """Piecewise-linear motion of the particles present on [t_lo, t_hi].

    Each piece is (s_lo, s_hi, positions at s_lo, velocities); one piece
    unless a transport scattering split the interval.
    """

    t_lo: float
    t_hi: float
    top: SystemState
    bot: SystemState
    pieces: tuple
    events: tuple


@dataclasses.dataclass(frozen=True)
class RecollisionEvent:
    i: int
    j: int
    time: float
    kind: str  # recollision | overlap | external-clustering


@dataclasses.dataclass(frozen=True)
class RecollisionReport:
    events: Tuple[RecollisionEvent, ...]
    delta: float = 0.0

    def __len__(self):
        return len(self.events)


@dataclasses.dataclass(frozen=True)
class PseudoTrajectory:
    epsilon: float
    tree: CollisionTree
    params: TreeParams
    root: SystemState
    admissible: bool
    segments: Tuple[Segment, ...]
    insertions: Tuple[Insertion, ...]

    @property
    def psi0(self) -> Optional[SystemState]:
        """Configuration at time zero (all particles), if admissible."""
        return self.segments[-1].bot if self.admissible else None


def _wrap(x):
    return x - np.floor(x)


def _torus_gap(a, b):
    d = a - b
    return d - np.round(d)


def _backward_segment(state: SystemState, t_lo: float, epsilon: float,
                      config: Optional[ScalingConfig]) -> Segment:
    """Transport every particle backward from state.time to t_lo."""
    t_hi = state.time
    span = t_hi - t_lo
    if span < 0:
        raise ValueError("segment must go backward")
    if epsilon == 0.0 or span == 0.0 or state.n == 1:
        bot = SystemState(_wrap(state.x - span * state.v), state.v.copy(),
                          t_lo)
        pieces = ((t_lo, t_hi, bot.x.copy(), state.v.copy()),)
        return Segment(t_lo, t_hi, state, bot, pieces, ())
    rev = dyn.time_reverse(SystemState(state.x, state.v, 0.0))
    traj = dyn.run(rev, config, t_end=span, check_initial=False)
    bot_rev = traj.state_at(span)
    bot = SystemState(bot_rev.x, -bot_rev.v, t_lo)
    events = []
    pieces = []
    cursor = 0.0
    cur = traj.initial
    # the reversed-run clock s corresponds to absolute time t_hi - s
    for ev in traj.events():
        pieces.append((t_hi - ev.time, t_hi - cursor,
                       _wrap(cur.x - (ev.time - cursor) * (-cur.v)),
                       -cur.v))
        events.append(RecollisionEvent(ev.i, ev.j, t_hi - ev.time,
                                       "recollision"))
        cursor, cur = ev.time, traj.state_at(ev.time)
    pieces.append((t_lo, t_hi - cursor, bot.x.copy(), -cur.v))
    return Segment(t_lo, t_hi, state, bot, tuple(pieces), tuple(events))


def build_pseudo(root: SystemState, tree: CollisionTree, params: TreeParams,
                 epsilon: float) -> PseudoTrajectory:
    """Backward construction: transport, insert at contact, scatter iff the
    contact is post-collisional. Inserting onto an occupied spot flags the
    trajectory inadmissible instead of raising."""
    if root.n != tree.n:
        raise ValueError("root configuration size must match the tree")
    if tree.m != params.m:
        raise ValueError("one parameter row per insertion required")
    if params.m and not (root.time > params.times[0] and params.times[-1] > 0):
        raise ValueError("insertion times must lie strictly inside (0, t)")
    if epsilon < 0:
        raise ValueError("diameter must be nonnegative")
    config = ScalingConfig.from_epsilon(root.d, epsilon) if epsilon > 0 \
        else None

    state = root
    segments = []
    insertions = []
    for i in range(tree.m):
        t_i = params.times[i]
        seg = _backward_segment(state, t_i, epsilon, config)
        segments.append(seg)
        low = seg.bot
        a = tree.labels[i]
        omega = params.omegas[i]
        v_in = params.velocities[i]
        x_new = _wrap(low.x[a] + epsilon * omega)
        if epsilon > 0.0:
            gaps = _torus_gap(low.x, x_new[None, :])
            dist = np.sqrt((gaps ** 2).sum(1))
            dist[a] = np.inf
            if dist.min() < epsilon * (1.0 - 1e-12):
                return PseudoTrajectory(epsilon, tree, params, root, False,
                                        tuple(segments), tuple(insertions))
        lam = float((v_in - low.v[a]) @ omega)
        new_id = root.n + i
        x = np.concatenate([low.x, x_new[None, :]])
        v = np.concatenate([low.v, v_in[None, :]])
        insertions.append(Insertion(t_i, new_id, a, omega.copy(),
                                    v_in.copy(), lam, lam > 0.0,
                                    low.v[a].copy()))
        if lam > 0.0:
            v_new, v_a = dyn.reflect_velocities(v_in, low.v[a], omega)
            v[new_id], v[a] = v_new, v_a
        state = SystemState(x, v, t_i)
    segments.append(_backward_segment(state, 0.0, epsilon, config))
    return PseudoTrajectory(epsilon, tree, params, root, True,
                            tuple(segments), tuple(insertions))


def build_pseudo_limit(root: SystemState, tree: CollisionTree,
                       params: TreeParams) -> PseudoTrajectory:
    """Point-particle limit: free transport and insertion at the partner's
    exact position; the scattering rule is unchanged."""
    return build_pseudo(root, tree, params, 0.0)


def tree_weight(psi: PseudoTrajectory) -> float:
    """Signed product of the contact kernel factors, one per insertion."""
    out = 1.0
    for ins in psi.insertions:
        out *= ins.lam
    return out


def _min_gap_on_piece(x1, v1, x2, v2, s_lo, s_hi):
    """Minimum torus distance between two linearly moving points on
    [s_lo, s_hi]: (min distance, time of minimum, distance at s_lo)."""
    r0 = _torus_gap(x1, x2)
    u = v1 - v2
    span = s_hi - s_lo
    w = int(np.ceil(np.abs(u).max() * span + 0.5))
    d = len(r0)
    best = (np.inf, s_lo)
    d_start = np.inf
    grid = [np.arange(-w, w + 1)] * d
    uu = float(u @ u)
    for k in np.stack(np.meshgrid(*grid, indexing="ij"), -1).reshape(-1, d):
        w0 = r0 + k
        d_start = min(d_start, float(np.linalg.norm(w0)))
        s = 0.0 if uu == 0.0 else float(np.clip(-(w0 @ u) / uu, 0.0, span))
        val = float(np.linalg.norm(w0 + s * u))
        if val < best[0]:
            best = (val, s_lo + s)
    return best[0], best[1], d_start


def detect_recollisions(psi: PseudoTrajectory, epsilon: Optional[float] =
                        None, delta: float = 1e-9) -> RecollisionReport:
    """Contacts between pre-existing particles during backward transport.

    At positive diameter these are the scattering events the transport
    already processed; in the point limit they are crossings within delta.
    Each insertion's own birth contact is not a recollision.
    """
    if epsilon is not None and epsilon != psi.epsilon:
        raise ValueError("diameter does not match the trajectory")
    if not psi.admissible:
        raise ValueError("trajectory is inadmissible")
    if psi.epsilon > 0.0:
        events = [ev for seg in psi.segments for ev in seg.events]
        events.sort(key=lambda e: -e.time)
        return RecollisionReport(tuple(events), 0.0)
    events = []
    for idx, seg in enumerate(psi.segments):
        (s_lo, s_hi, x0, v) = seg.pieces[0]
        born = None
        if idx >= 1:
            ins = psi.insertions[idx - 1]
            born = frozenset((ins.partner, ins.new_id))
        n = x0.shape[0]
        for i in range(n):
            for j in range(i + 1, n):
                if born == frozenset((i, j)):
                    continue
                val, s, _ = _min_gap_on_piece(x0[i], v[i], x0[j], v[j],
                                              s_lo, s_hi)
                if val < delta:
                    events.append(RecollisionEvent(i, j, s, "recollision"))
    events.sort(key=lambda e: -e.time)
    return RecollisionReport(tuple(events), delta)


def _piece_rows(psi: PseudoTrajectory):
    for seg in psi.segments:
        for (s_lo, s_hi, x0, v) in seg.pieces:
            yield s_lo, s_hi, x0, v


def classify_pair_clustering(psi1: PseudoTrajectory, psi2: PseudoTrajectory,
                             epsilon: Optional[float] = None,
                             delta: float = 1e-9) -> RecollisionReport:
    """Contacts between particles of two independently built trajectories.

    At positive diameter a pair that comes within one diameter after
    starting a window farther apart would have scattered in the coupled
    dynamics: a recollision. Pairs merely passing within tolerance in the
    point limit, or already inside at the window start, are overlaps.
    """
    if epsilon is None:
        epsilon = psi1.epsilon
    if psi1.epsilon != psi2.epsilon or epsilon != psi1.epsilon:
        raise ValueError("trajectories must share one diameter")
    thr = epsilon if epsilon > 0.0 else delta
    events = []
    for (a_lo, a_hi, xa, va) in _piece_rows(psi1):
        for (b_lo, b_hi, xb, vb) in _piece_rows(psi2):
            lo, hi = max(a_lo, b_lo), min(a_hi, b_hi)
            if hi <= lo:
                continue
            for i in range(xa.shape[0]):
                xi = _wrap(xa[i] + (lo - a_lo) * va[i])
                for j in range(xb.shape[0]):
                    xj = _wrap(xb[j] + (lo - b_lo) * vb[j])
                    val, s, d0 = _min_gap_on_piece(xi, va[i], xj, vb[j],
                                                   lo, hi)
                    if val < thr:
                        kind = "recollision" if epsilon > 0.0 \
                            and d0 >= thr else "overlap"
                        events.append(RecollisionEvent(i, j, s, kind))
    events.sort(key=lambda e: (e.i, e.j, e.time))
    kept = []
    for ev in events:
        if kept and kept[-1].i == ev.i and kept[-1].j == ev.j and \
                abs(kept[-1].time - ev.time) <= max(delta, 1e-9):
            continue
        kept.append(ev)
    kept.sort(key=lambda e: -e.time)
    return RecollisionReport(tuple(kept), delta if epsilon == 0.0 else 0.0)


def forward_replay_check(psi: PseudoTrajectory, tol: float = 1e-9) -> dict:
    """Replay each interval forward from its earliest state and confirm the
    stored motion and scattering events are what the dynamics produces."""
    if not psi.admissible:
        raise ValueError("cannot replay an inadmissible trajectory")
    max_pos = 0.0
    max_vel = 0.0
    events_ok = True
    config = ScalingConfig.from_epsilon(psi.root.d, psi.epsilon) \
        if psi.epsilon > 0.0 else None
    for seg in psi.segments:
        span = seg.t_hi - seg.t_lo
        if span <= 0:
            continue
        margin = min(1e-12, 0.5 * span)
        probe = span - margin
        if psi.epsilon == 0.0 or seg.bot.n == 1:
            got = dyn.advance_free(SystemState(seg.bot.x, seg.bot.v, 0.0),
                                   probe)
            if len(seg.events) != 0:
                events_ok = False
        else:
            traj = dyn.run(SystemState(seg.bot.x, seg.bot.v, 0.0), config,
                           t_end=span, check_initial=False)
            got = traj.state_at(probe)
            replay = [(min(ev.i, ev.j), max(ev.i, ev.j), seg.t_lo + ev.time)
                      for ev in traj.events() if ev.time <= probe]
            stored = sorted(((min(e.i, e.j), max(e.i, e.j), e.time)
                             for e in seg.events), key=lambda r: r[2])
            if len(replay) != len(stored):
                events_ok = False
            else:
                for got_ev, want_ev in zip(replay, stored):
                    if got_ev[:2] != want_ev[:2] or \
                            abs(got_ev[2] - want_ev[2]) > tol:
                        events_ok = False
        want_x = _wrap(seg.top.x - margin * seg.top.v)
        max_pos = max(max_pos, float(np.abs(
            _torus_gap(got.x, want_x)).max()))
        max_vel = max(max_vel, float(np.abs(got.v - seg.top.v).max()))
    return {"ok": events_ok and max_pos <= tol and max_vel <= tol,
            "max_position_error": max_pos, "max_velocity_error": max_vel,
            "events_match": events_ok}


# -------------------------------------------------- Monte Carlo estimate

@dataclasses.dataclass(frozen=True)
class TreeSeriesEstimate:
    """Per-order means and standard errors, a fitted factorial tail bound
    for the first dropped order, and the rejected-sample count."""

    orders: np.ndarray
    ses: np.ndarray
    tail: float
    c0_fit: float = 0.0
    n_rejected: int = 0

    @property
    def value(self) -> float:
        return float(self.orders.sum())

    @property
    def se(self) -> float:
        return float(np.sqrt((self.ses ** 2).sum()))


def _gauss_density(v: np.ndarray, beta: float) -> np.ndarray:
    d = v.shape[-1]
    return (beta / (2 * np.pi)) ** (d / 2) \
        * np.exp(-0.5 * beta * (v ** 2).sum(-1))


def _uniform_sphere(rng, n, d):
    u = rng.standard_normal((n, d))
    return u / np.linalg.norm(u, axis=1, keepdims=True)


def _fit_tail(orders, ses, t, m_max):
    """Fit log(|T_m| m!) linearly in m and extrapolate one order past the
    truncation; the magnitude floor keeps the fit defined when a term is
    statistically zero."""
    mags = np.maximum(np.abs(orders), ses)[1:]
    ms = np.arange(1, len(orders))
    if len(ms) < 2 or t <= 0 or not (mags > 0).all():
        return 0.0, 0.0
    y = np.log(mags) + np.array([math.lgamma(m + 1) for m in ms])
    slope, icept = np.polyfit(ms, y, 1)
    c0t = np.exp(slope)
    tail = float(np.exp(icept) * c0t ** (m_max + 1)
                 / math.factorial(m_max + 1))
    return tail, float(c0t / t)


def _insert_layers(vel, weight, rng, proposal_beta):
    """Apply the backward insertions of one order to a batch of samples,
    accumulating the proposal correction and the signed kernel factors."""
    s, cols, d = vel.shape
    for k in range(1, cols):
        vel[:, k] = rng.standard_normal((s, d)) / np.sqrt(proposal_beta)
        weight /= _gauss_density(vel[:, k], proposal_beta)
        partner = rng.integers(0, k, size=s)
        omega = _uniform_sphere(rng, s, d)
        va = vel[np.arange(s), partner]
        lam = ((vel[:, k] - va) * omega).sum(1)
        weight *= lam
        kick = (lam * (lam > 0.0))[:, None] * omega
        vel[:, k] -= kick
        vel[np.arange(s), partner] = va + kick


def _order_spatial(profile, t, v_star, x_star, m, n_samples, rng,
                   proposal_beta, epsilon):
    """One order of the positive-diameter estimate: per-sample backward
    construction, inadmissible samples contributing zero weight."""
    d = profile.d
    area = _SPHERE_AREA[d]
    root = SystemState(np.asarray(x_star, float)[None, :],
                       np.asarray(v_star, float)[None, :], t)
    vals = np.zeros(n_samples)
    rejected = 0
    for s in range(n_samples):
        tree = random_tree(1, m, rng)
        params = sample_tree_params(t, m, d, rng, proposal_beta)
        psi = build_pseudo(root, tree, params, epsilon)
        if not psi.admissible:
            rejected += 1
            continue
        w = (t * area) ** m * tree_weight(psi)
        w /= _gauss_density(params.velocities, proposal_beta).prod()
        vals[s] = w * profile.velocity_density(psi.psi0.v).prod()
    if rejected == n_samples:
        raise RuntimeError(f"degenerate proposal: all {n_samples} samples "
                           f"rejected at order {m}")
    return vals, rejected


def mc_f1_estimate(profile, t: float, v_star, m_max: int, n_samples: int,
                   rng: np.random.Generator, *, proposal_beta: float = 0.5,
                   epsilon: float = 0.0,
                   x_star=None) -> TreeSeriesEstimate:
    """Truncated collision-series estimate of the density at one velocity.

    Trees are sampled uniformly, insertion times uniformly on the ordered
    simplex, directions uniformly on the sphere, and incoming velocities
    from a Gaussian proposal with importance weights; the signed kernel
    product makes every retained order unbiased. In the point limit the
    weight does not depend on positions and orders vectorize; at positive
    diameter each sample builds its trajectory and inadmissible insertions
    are rejected with zero weight.
    """
    if m_max > 6 or m_max < 0:
        raise ValueError("series truncation must satisfy 0 <= m_max <= 6")
    if t < 0:
        raise ValueError("time must be nonnegative")
    if proposal_beta <= 0:
        raise ValueError("proposal width must be positive")
    d = profile.d
    v_star = np.asarray(v_star, float)
    if x_star is None:
        x_star = np.zeros(d)
    area = _SPHERE_AREA[d]
    orders = np.zeros(m_max + 1)
    ses = np.zeros(m_max + 1)
    rejected = 0
    orders[0] = float(profile.velocity_density(v_star[None, :])[0])
    for m in range(1, m_max + 1):
        if t == 0.0:
            continue
        if epsilon > 0.0:
            vals, rej = _order_spatial(profile, t, v_star, x_star, m,
                                       n_samples, rng, proposal_beta,
                                       epsilon)
            rejected += rej
        else:
            vel = np.empty((n_samples, m + 1, d))
            vel[:, 0] = v_star
            vals = np.full(n_samples, (t * area) ** m)
            _insert_layers(vel, vals, rng, proposal_beta)
            vals *= profile.velocity_density(
                vel.reshape(-1, d)).reshape(n_samples, m + 1).prod(1)
        orders[m] = vals.mean()
        ses[m] = vals.std(ddof=1) / np.sqrt(n_samples)
    tail, c0 = _fit_tail(orders, ses, t, m_max)
    return TreeSeriesEstimate(orders, ses, tail, c0, rejected)


def mc_moment_estimate(profile, h, t: float, m_max: int, n_samples: int,
                       rng: np.random.Generator, *,
                       proposal_beta: float = 0.5) -> TreeSeriesEstimate:
    """Truncated collision-series estimate of a velocity moment at time t.

    The root velocity is importance-sampled from the initial law; the
    per-sample weight is the observable at the root times the same signed
    tree weight as the pointwise estimate (point limit only)."""
    if m_max > 6 or m_max < 0:
        raise ValueError("series truncation must satisfy 0 <= m_max <= 6")
    if t < 0:
        raise ValueError("time must be nonnegative")
    if proposal_beta <= 0:
        raise ValueError("proposal width must be positive")
    d = profile.d
    area = _SPHERE_AREA[d]
    orders = np.zeros(m_max + 1)
    ses = np.zeros(m_max + 1)
    for m in range(m_max + 1):
        if m > 0 and t == 0.0:
            continue
        s = n_samples
        vel = np.empty((s, m + 1, d))
        vel[:, 0] = profile.sample_velocities(rng, s)
        hroot = np.asarray(h(np.zeros((s, d)), vel[:, 0]), float)
        dens0 = profile.velocity_density(vel[:, 0])
        vals = np.full(s, (t * area) ** m) * hroot
        _insert_layers(vel, vals, rng, proposal_beta)
        vals *= profile.velocity_density(
            vel.reshape(-1, d)).reshape(s, m + 1).prod(1) / dens0
        orders[m] = vals.mean()
        ses[m] = vals.std(ddof=1) / np.sqrt(s)
    tail, c0 = _fit_tail(orders, ses, t, m_max)
    return TreeSeriesEstimate(orders, ses, tail, c0, 0)
