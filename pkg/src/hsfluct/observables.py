"""Test functions and path observables for ensemble statistics.

The admissible class is quadratic-growth-bounded: |h(x,v)| <= alpha0 +
quad * |v|^2.  Keeping every registered observable inside this class is
what makes exponential moments of the empirical measure finite for
Gaussian-dominated profiles, so the bound is validated, not assumed.
"""

from __future__ import annotations

import dataclasses
from typing import Callable, Sequence

import numpy as np


@dataclasses.dataclass(frozen=True)
class TestFunction:
    """Scalar observable h(x, v) with an explicit quadratic growth bound."""

    __test__ = False  # not a pytest case

    fn: Callable[[np.ndarray, np.ndarray], np.ndarray]
    alpha0: float
    quad: float
    name: str = "h"

    def __call__(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        return np.asarray(self.fn(np.asarray(x, float), np.asarray(v, float)),
                          dtype=float)

    def bound_ok(self, x: np.ndarray, v: np.ndarray) -> bool:
        h = np.abs(self(x, v))
        cap = self.alpha0 + self.quad * (np.asarray(v) ** 2).sum(axis=-1)
        return bool(np.all(h <= cap * (1 + 1e-12) + 1e-12))


def validate_family(family: Sequence[TestFunction], d: int,
                    n_points: int = 4000, v_scale: float = 4.0) -> None:
    rng = np.random.default_rng(97)
    x = rng.uniform(size=(n_points, d))
    v = rng.normal(scale=v_scale, size=(n_points, d))
    v[0] = 0.0
    for h in family:
        if not h.bound_ok(x, v):
            raise ValueError(f"observable {h.name!r} violates its growth bound")


@dataclasses.dataclass(frozen=True)
class PathObservable:
    """Sum of test functions sampled at fixed times along a trajectory."""

    times: tuple
    weights: tuple

    def __post_init__(self):
        times = tuple(float(t) for t in self.times)
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("times must be strictly increasing")
        if len(times) != len(self.weights):
            raise ValueError("one weight per time required")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "weights", tuple(self.weights))

    def check_span(self, t0: float, horizon: float) -> None:
        if self.times and (self.times[0] < t0 - 1e-12
                           or self.times[-1] > horizon + 1e-12):
            raise ValueError(
                f"observable times {self.times} outside [{t0}, {horizon}]")

    def particle_total(self, traj) -> float:
        """Sum over particles and times of h_p(z_i(theta_p))."""
        self.check_span(traj.initial.time, traj.final_time)
        total = 0.0
        for t, h in zip(self.times, self.weights):
            st = traj.state_at(t)
            total += float(h(st.x, st.v).sum())
        return total

    @classmethod
    def weighted(cls, h: TestFunction, times: Sequence[float],
                 coefficients: Sequence[float]) -> "PathObservable":
        """Single test function h sampled with scalar coefficients."""
        if len(times) != len(coefficients):
            raise ValueError("one coefficient per time required")
        funcs = []
        for c in coefficients:
            c = float(c)
            funcs.append(TestFunction(
                fn=lambda x, v, c=c: c * h(x, v),
                alpha0=abs(c) * h.alpha0, quad=abs(c) * h.quad,
                name=f"{c:g}*{h.name}"))
        return cls(times=tuple(times), weights=tuple(funcs))


# ------------------------------------------------------------ the family

def _hermite(v: np.ndarray, k: int, deg: int) -> np.ndarray:
    # orthonormal under the standard Gaussian: 1, v, (v^2 - 1)/sqrt(2)
    t = v[..., k]
    if deg == 0:
        return np.ones(t.shape)
    if deg == 1:
        return t
    return (t * t - 1.0) / np.sqrt(2.0)


def hermite_fourier_family(d: int, max_vdeg: int = 2,
                           x_modes: int = 1) -> list:
    """Tensor products of low Hermite velocity polynomials and Fourier
    position modes, all inside the quadratic growth class.

    Velocity factors run over products He_a(v_1) ... with total degree
    <= max_vdeg (<= 2 enforced); position factors over 1, cos/sin of the
    first x_modes frequencies of each coordinate.
    """
    if max_vdeg > 2:
        raise ValueError("degree > 2 leaves the admissible growth class")
    vparts = []  # (name, degrees tuple)
    if d == 2:
        degs = [(a, b) for a in range(3) for b in range(3) if a + b <= max_vdeg]
    else:
        degs = [(a, b, c) for a in range(3) for b in range(3) for c in range(3)
                if a + b + c <= max_vdeg]
    for tup in degs:
        nm = "*".join(f"He{g}(v{k+1})" for k, g in enumerate(tup) if g) or "1"
        vparts.append((nm, tup))

    xparts = [("1", None, None)]
    for k in range(d):
        for m in range(1, x_modes + 1):
            xparts.append((f"cos{m}x{k+1}", k, (m, np.cos)))
            xparts.append((f"sin{m}x{k+1}", k, (m, np.sin)))

    fam = []
    for xname, xk, xmode in xparts:
        for vname, tup in vparts:
            def fn(x, v, xk=xk, xmode=xmode, tup=tup):
                out = np.ones(np.asarray(v).shape[:-1])
                for k, g in enumerate(tup):
                    if g:
                        out = out * _hermite(np.asarray(v, float), k, g)
                if xk is not None:
                    m, trig = xmode
                    out = out * trig(2 * np.pi * m * np.asarray(x, float)[..., xk])
                return out
            # |He2| <= 1 + v^2 and products keep total degree <= 2, so
            # alpha0 = 1 + sum of constants, quad = 1 covers every member
            name = vname if xname == "1" else f"{xname}*{vname}"
            fam.append(TestFunction(fn=fn, alpha0=1.0 + sum(1 for g in tup if g == 2),
                                    quad=1.0, name=name))
    return fam


def collision_invariant(d: int, a: float = 0.0, b: Sequence[float] = (),
                        c: float = 0.0) -> TestFunction:
    """h(v) = a + b . v + c |v|^2, the conserved observables of a collision."""
    b = np.asarray(b if len(b) else np.zeros(d), dtype=float)

    def fn(x, v):
        v = np.asarray(v, float)
        return a + (v * b).sum(axis=-1) + c * (v * v).sum(axis=-1)

    alpha0 = abs(a) + 0.5 * float(b @ b)  # |b.v| <= |b|^2/2 + |v|^2/2
    quad = abs(c) + 0.5
    return TestFunction(fn=fn, alpha0=alpha0, quad=quad,
                        name=f"{a}+{b.tolist()}.v+{c}|v|^2")
