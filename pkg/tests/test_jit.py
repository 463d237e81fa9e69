"""The compiled kernels and the pure-Python fallback must agree bit for bit:
both execute the same source, and no fast-math style reassociation is enabled.
"""

import json
import os
import subprocess
import sys

import numpy as np

import hsfluct as hs
from hsfluct import _jit

_SCRIPT = r"""
import json, sys
import numpy as np
import hsfluct as hs
from hsfluct import _jit

rng = np.random.default_rng(321)
g = 7
pts = np.stack(np.meshgrid(*(2 * [(np.arange(g) + 0.5) / g])), axis=-1).reshape(-1, 2)
x = pts[rng.choice(g * g, size=36, replace=False)]
v = rng.normal(size=(36, 2))
cfg = hs.ScalingConfig.from_mu(2, 50.0)
traj = hs.run(hs.SystemState(x, v), cfg, t_end=0.6)
out = {
    "jit": _jit.JIT_ENABLED,
    "times": traj.times.tolist(),
    "i": traj.idx_i.tolist(),
    "j": traj.idx_j.tolist(),
    "om": traj.omegas.ravel().tolist(),
    "x": traj.final.x.ravel().tolist(),
    "v": traj.final.v.ravel().tolist(),
}
json.dump(out, sys.stdout)
"""


def _run_mode(flag):
    env = dict(os.environ, HSFLUCT_NUMBA=flag)
    res = subprocess.run([sys.executable, "-c", _SCRIPT], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(res.stdout)


def test_flag_plumbing():
    assert _jit.JIT_REQUESTED in (True, False)
    # decorator must be usable bare and with arguments in either mode
    @_jit.njit
    def f(a):
        return a + 1

    @_jit.njit(cache=True)
    def g(a):
        return a * 2

    assert f(1) == 2
    assert g(3) == 6


def test_fallback_matches_jit_bitwise():
    on = _run_mode("1")
    off = _run_mode("0")
    assert on["jit"] or not off["jit"]  # sanity: flags took effect where possible
    assert not off["jit"]
    assert len(on["times"]) > 10
    for key in ("times", "i", "j", "om", "x", "v"):
        a = np.asarray(on[key])
        b = np.asarray(off[key])
        assert np.array_equal(a, b), f"mismatch in {key}"
