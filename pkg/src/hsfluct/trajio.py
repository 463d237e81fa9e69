"""Binary trajectory files.

Layout (little-endian throughout):

    magic   5 bytes  b"HSBG1"
    d       u32
    epsilon f64
    mu      f64
    N       u32
    horizon f64      final simulated time
    seed    u64      provenance tag, not interpreted
    x       N*d f64  initial positions
    v       N*d f64  initial velocities
    t0      f64      initial time
    n_ev    u64
    events  n_ev records of (time f64, i u32, j u32, omega d*f64)

The event log plus the initial state reconstructs every intermediate
state exactly (see ``Trajectory.state_at``).
"""

from __future__ import annotations

import struct

import numpy as np

from . import _dynamics_kernels as _k
from .dynamics import ScalingConfig, SystemState, Trajectory

MAGIC = b"HSBG1"
_HEADER = struct.Struct("<IddIdQ")


def write_trajectory(path, traj: Trajectory, seed: int = 0) -> None:
    n = traj.initial.n
    d = traj.config.d
    m = traj.n_events
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_HEADER.pack(d, traj.config.epsilon, traj.config.mu, n,
                              traj.final_time, int(seed) & (2**64 - 1)))
        fh.write(np.ascontiguousarray(traj.initial.x, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(traj.initial.v, dtype="<f8").tobytes())
        fh.write(struct.pack("<d", traj.initial.time))
        fh.write(struct.pack("<Q", m))
        if m:
            rec = np.zeros(m, dtype=_record_dtype(d))
            rec["t"] = traj.times
            rec["i"] = traj.idx_i
            rec["j"] = traj.idx_j
            rec["om"] = traj.omegas
            fh.write(rec.tobytes())


def read_trajectory(path) -> tuple:
    """Read a trajectory file; returns (trajectory, seed)."""
    with open(path, "rb") as fh:
        magic = fh.read(5)
        if magic != MAGIC:
            raise ValueError(f"bad magic {magic!r}, expected {MAGIC!r}")
        d, epsilon, mu, n, horizon, seed = _HEADER.unpack(fh.read(_HEADER.size))
        if d not in (2, 3):
            raise ValueError(f"bad dimension {d}")
        x = np.frombuffer(fh.read(8 * n * d), dtype="<f8").reshape(n, d).copy()
        v = np.frombuffer(fh.read(8 * n * d), dtype="<f8").reshape(n, d).copy()
        (t0,) = struct.unpack("<d", fh.read(8))
        (m,) = struct.unpack("<Q", fh.read(8))
        rec = np.frombuffer(fh.read(m * _record_dtype(d).itemsize),
                            dtype=_record_dtype(d))
        if rec.shape[0] != m:
            raise ValueError("truncated event block")
        config = ScalingConfig(d=d, epsilon=epsilon, mu=mu)
        initial = SystemState(x, v, t0)
        times = rec["t"].astype(np.float64)
        idx_i = rec["i"].astype(np.int32)
        idx_j = rec["j"].astype(np.int32)
        omegas = rec["om"].astype(np.float64).reshape(m, d)
        xf, vf = _k._replay(x, v, t0, times, idx_i, idx_j, omegas, horizon)
        traj = Trajectory(
            config=config, initial=initial, times=times, idx_i=idx_i,
            idx_j=idx_j, omegas=omegas, final=SystemState(xf, vf, horizon),
            n_transfers=0,
        )
        return traj, seed


def _record_dtype(d: int) -> np.dtype:
    return np.dtype([("t", "<f8"), ("i", "<u4"), ("j", "<u4"), ("om", "<f8", (d,))])
