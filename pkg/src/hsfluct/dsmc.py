"""Stochastic particle solver for the homogeneous hard-sphere kinetic
equation: pairwise collisions at rate |v - w| / M_p per pair (times the
kernel mass), majorant rejection, and kernel-tilted scattering directions.
Serves as an independent oracle for the deterministic solver.
"""

import dataclasses
from typing import Sequence

import numpy as np

from ._jit import njit
from .collision import KERNEL_MASS

_DONE = 0
_NEED_RANDOMS = 1
_MAJORANT_BREACH = 2


@njit(cache=True)
def _dsmc_loop(v, state, rec_times, snaps, u01):
    """Advance until all record times are consumed or the uniform batch is
    exhausted. state = [t, s_max, n_coll, rec_ptr]."""
    mp = v.shape[0]
    d = v.shape[1]
    kappa = 2.0 if d == 2 else np.pi
    t = state[0]
    s_max = state[1]
    n_coll = state[2]
    rec_ptr = int(state[3])
    ptr = 0
    status = _DONE
    while rec_ptr < rec_times.shape[0]:
        if ptr + 8 > u01.shape[0]:
            status = _NEED_RANDOMS
            break
        vmaj = 2.0 * s_max * 1.0000001
        rate = 0.5 * (mp - 1) * kappa * vmaj
        wait = -np.log(u01[ptr]) / rate
        ptr += 1
        t_next = t + wait
        while rec_ptr < rec_times.shape[0] and rec_times[rec_ptr] <= t_next:
            for p in range(mp):
                for k in range(d):
                    snaps[rec_ptr, p, k] = v[p, k]
            rec_ptr += 1
        if rec_ptr >= rec_times.shape[0]:
            t = t_next
            break
        t = t_next
        i = int(u01[ptr] * mp)
        ptr += 1
        if i >= mp:
            i = mp - 1
        j = int(u01[ptr] * (mp - 1))
        ptr += 1
        if j >= mp - 1:
            j = mp - 2
        if j >= i:
            j += 1
        rel2 = 0.0
        for k in range(d):
            diff = v[i, k] - v[j, k]
            rel2 += diff * diff
        rel = np.sqrt(rel2)
        if rel > vmaj:
            status = _MAJORANT_BREACH
            break
        if u01[ptr] * vmaj > rel:
            ptr += 1
            continue
        ptr += 1
        if rel == 0.0:
            continue
        # scattering direction tilted by the kernel: density prop to
        # (omega . u)_+ on the unit sphere, u the relative direction
        if d == 2:
            ux = (v[i, 0] - v[j, 0]) / rel
            uy = (v[i, 1] - v[j, 1]) / rel
            s = 2.0 * u01[ptr] - 1.0
            ptr += 1
            c = np.sqrt(max(0.0, 1.0 - s * s))
            ox = c * ux - s * uy
            oy = c * uy + s * ux
            lam = (v[i, 0] - v[j, 0]) * ox + (v[i, 1] - v[j, 1]) * oy
            v[i, 0] -= lam * ox
            v[i, 1] -= lam * oy
            v[j, 0] += lam * ox
            v[j, 1] += lam * oy
        else:
            ux = (v[i, 0] - v[j, 0]) / rel
            uy = (v[i, 1] - v[j, 1]) / rel
            uz = (v[i, 2] - v[j, 2]) / rel
            cpsi = np.sqrt(u01[ptr])
            ptr += 1
            spsi = np.sqrt(max(0.0, 1.0 - cpsi * cpsi))
            chi = 2.0 * np.pi * u01[ptr]
            ptr += 1
            # orthonormal frame around u via the least-aligned axis
            if abs(ux) <= abs(uy) and abs(ux) <= abs(uz):
                e1x, e1y, e1z = 0.0, -uz, uy
            elif abs(uy) <= abs(uz):
                e1x, e1y, e1z = -uz, 0.0, ux
            else:
                e1x, e1y, e1z = -uy, ux, 0.0
            nrm = np.sqrt(e1x * e1x + e1y * e1y + e1z * e1z)
            e1x /= nrm
            e1y /= nrm
            e1z /= nrm
            e2x = uy * e1z - uz * e1y
            e2y = uz * e1x - ux * e1z
            e2z = ux * e1y - uy * e1x
            ca = np.cos(chi)
            sa = np.sin(chi)
            ox = cpsi * ux + spsi * (ca * e1x + sa * e2x)
            oy = cpsi * uy + spsi * (ca * e1y + sa * e2y)
            oz = cpsi * uz + spsi * (ca * e1z + sa * e2z)
            lam = (v[i, 0] - v[j, 0]) * ox + (v[i, 1] - v[j, 1]) * oy \
                + (v[i, 2] - v[j, 2]) * oz
            v[i, 0] -= lam * ox
            v[i, 1] -= lam * oy
            v[i, 2] -= lam * oz
            v[j, 0] += lam * ox
            v[j, 1] += lam * oy
            v[j, 2] += lam * oz
        n_coll += 1.0
        si = 0.0
        sj = 0.0
        for k in range(d):
            si += v[i, k] * v[i, k]
            sj += v[j, k] * v[j, k]
        si = np.sqrt(si)
        sj = np.sqrt(sj)
        if si > s_max:
            s_max = si
        if sj > s_max:
            s_max = sj
    state[0] = t
    state[1] = s_max
    state[2] = n_coll
    state[3] = float(rec_ptr)
    return status


@dataclasses.dataclass(frozen=True)
class DsmcResult:
    """Velocity snapshots at the requested times for one particle ensemble."""

    times: np.ndarray
    snapshots: np.ndarray
    n_collisions: int
    m_p: int

    @property
    def d(self) -> int:
        return self.snapshots.shape[2]

    def moment(self, fn) -> np.ndarray:
        """Mean of fn(v) (vectorized over rows) at every recorded time."""
        return np.array([float(np.mean(fn(self.snapshots[k])))
                         for k in range(len(self.times))])

    def moment_se(self, fn) -> np.ndarray:
        vals = [np.asarray(fn(self.snapshots[k]), float)
                for k in range(len(self.times))]
        return np.array([v.std(ddof=1) / np.sqrt(v.size) for v in vals])


def dsmc_run(profile, m_p: int, times: Sequence[float],
             rng: np.random.Generator) -> DsmcResult:
    """Simulate m_p particles from the profile's velocity law and snapshot
    the ensemble at the given times (all > 0 or starting at 0)."""
    if m_p < 2:
        raise ValueError("need at least two particles")
    times = np.asarray(sorted(float(t) for t in times))
    if len(times) == 0 or times[0] < 0:
        raise ValueError("record times must be nonnegative")
    v = np.ascontiguousarray(profile.sample_velocities(rng, m_p))
    d = v.shape[1]
    snaps = np.empty((len(times), m_p, d))
    state = np.array([0.0, float(np.linalg.norm(v, axis=1).max()), 0.0, 0.0])
    if state[1] == 0.0:
        state[1] = 1e-12
    # expected uniform consumption is ~6 per candidate; size batches from
    # the majorant rate over the remaining horizon
    for _ in range(1000):
        kappa = KERNEL_MASS[d]
        horizon = max(times[-1] - state[0], 0.0) + 1e-9
        rate = 0.5 * (m_p - 1) * kappa * 2.0 * state[1]
        batch = int(min(5e7, max(8192.0, 8.0 * rate * horizon)))
        u = rng.random(batch)
        status = _dsmc_loop(v, state, times, snaps, u)
        if status == _DONE:
            return DsmcResult(times, snaps, int(state[2]), m_p)
        if status == _MAJORANT_BREACH:
            raise RuntimeError("majorant underestimated the pair rate")
    raise RuntimeError("particle loop failed to reach the horizon")
