"""Ensemble statistics: empirical measures, fluctuation fields, factorial
moments, cumulants, and empirical cumulant generating functions.

Conventions.  With expected particle number mu, the empirical measure of
a state pairs with a test function as pi(h) = mu^{-1} sum_i h(z_i); the
fluctuation field rescales deviations by sqrt(mu).  Order-n moments are
averages of mu^{-n} sums over ordered tuples of *distinct* particles;
cumulants carry an extra mu^{n-1} so that they stay order one in the
low-density scaling.  The moment <-> cumulant maps are exact partition
sums (Moebius inversion on the partition lattice), not asymptotic.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Dict, Sequence

import numpy as np


# ------------------------------------------------------- partition algebra

def set_partitions(n: int) -> list:
    """All partitions of {0, ..., n-1} as tuples of sorted blocks."""
    if n == 0:
        return [()]
    parts = [((0,),)]
    for item in range(1, n):
        grown = []
        for p in parts:
            for b in range(len(p)):
                grown.append(p[:b] + (p[b] + (item,),) + p[b + 1:])
            grown.append(p + ((item,),))
        parts = grown
    return parts


_PARTITIONS = {n: set_partitions(n) for n in range(5)}


def distinct_tuple_sum(h_values: Sequence[np.ndarray]) -> float:
    """sum over ordered tuples of distinct indices of prod_k h_k[i_k].

    h_values holds the per-particle evaluations of each factor.  Uses the
    inclusion-exclusion identity over set partitions: a block B contributes
    (-1)^{|B|-1} (|B|-1)! sum_i prod_{k in B} h_k[i], which costs O(n! N)
    instead of O(N^n).
    """
    n = len(h_values)
    if n == 0:
        return 1.0
    total = 0.0
    for part in _PARTITIONS[n]:
        term = 1.0
        for block in part:
            prod = h_values[block[0]].astype(float, copy=True)
            for k in block[1:]:
                prod = prod * h_values[k]
            term *= (-1.0) ** (len(block) - 1) * math.factorial(len(block) - 1) \
                * float(prod.sum())
        total += term
    return total


# ---------------------------------------------------------------- tables

@dataclasses.dataclass
class MomentTable:
    """Diagonal factorial-moment estimates F_n(h x ... x h), n = 1..n_max."""

    mu: float
    values: Dict[int, float]

    @property
    def n_max(self) -> int:
        return max(self.values) if self.values else 0


@dataclasses.dataclass
class CumulantTable:
    """Rescaled cumulants f_n on the same diagonal test family."""

    mu: float
    values: Dict[int, float]

    @property
    def n_max(self) -> int:
        return max(self.values) if self.values else 0


def cumulants_from_moments(m: MomentTable) -> CumulantTable:
    """f_n = mu^{n-1} sum over partitions of (-1)^{s-1}(s-1)! prod F_{|B|}."""
    out = {}
    for n in sorted(m.values):
        if any(k not in m.values for k in range(1, n + 1)):
            raise ValueError(f"moment table missing orders below {n}")
        acc = 0.0
        for part in _PARTITIONS[n]:
            s = len(part)
            term = (-1.0) ** (s - 1) * math.factorial(s - 1)
            for block in part:
                term *= m.values[len(block)]
            acc += term
        out[n] = m.mu ** (n - 1) * acc
    return CumulantTable(mu=m.mu, values=out)


def moments_from_cumulants(c: CumulantTable) -> MomentTable:
    """F_n = sum over partitions of mu^{-(n-s)} prod f_{|B|}."""
    out = {}
    for n in sorted(c.values):
        if any(k not in c.values for k in range(1, n + 1)):
            raise ValueError(f"cumulant table missing orders below {n}")
        acc = 0.0
        for part in _PARTITIONS[n]:
            s = len(part)
            term = c.mu ** (-(n - s))
            for block in part:
                term *= c.values[len(block)]
            acc += term
        out[n] = acc
    return MomentTable(mu=c.mu, values=out)


# ------------------------------------------------------- point estimators

def empirical_measure(state, h, mu: float) -> float:
    """pi(h) = mu^{-1} sum_i h(z_i); 0 on an empty state."""
    if state.n == 0:
        return 0.0
    return float(h(state.x, state.v).sum()) / mu


def fluctuation_field(state, h, reference_mean: float, mu: float) -> float:
    """zeta(h) = sqrt(mu) (pi(h) - reference_mean)."""
    return math.sqrt(mu) * (empirical_measure(state, h, mu) - reference_mean)


def moment_estimate(states: Sequence, h_list: Sequence, mu: float) -> float:
    """Ensemble estimate of the order-n factorial moment F_n(h_1 x ... x h_n)."""
    n = len(h_list)
    if not 1 <= n <= 4:
        raise ValueError("moment order must be between 1 and 4")
    acc = 0.0
    for st in states:
        if st.n == 0:
            continue
        vals = [h(st.x, st.v) for h in h_list]
        acc += distinct_tuple_sum(vals)
    return acc / (len(states) * mu ** n)


def moment_table(states: Sequence, h, mu: float, n_max: int = 4) -> MomentTable:
    """Diagonal moment table for a single test function, orders 1..n_max."""
    if not 1 <= n_max <= 4:
        raise ValueError("moment order must be between 1 and 4")
    sums = {n: 0.0 for n in range(1, n_max + 1)}
    for st in states:
        if st.n == 0:
            continue
        vals = h(st.x, st.v)
        for n in range(1, n_max + 1):
            sums[n] += distinct_tuple_sum([vals] * n)
    r = len(states)
    return MomentTable(mu=mu, values={n: sums[n] / (r * mu ** n)
                                      for n in sums})


def variance_identity_check(states: Sequence, h, mu: float) -> float:
    """Relative residual between the direct variance of pi(h) and its
    factorial-moment decomposition mu^{-1} F_1(h^2) + F_2(h x h) - F_1(h)^2.

    Both sides are assembled from the same per-replica sums, so the
    residual is pure roundoff (the identity is algebraic, not statistical).
    """
    r = len(states)
    s1 = np.empty(r)
    s2 = np.empty(r)
    for k, st in enumerate(states):
        vals = h(st.x, st.v) if st.n else np.zeros(0)
        s1[k] = vals.sum()
        s2[k] = (vals * vals).sum()
    pi = s1 / mu
    direct = float(np.mean(pi * pi) - np.mean(pi) ** 2)
    f1_h = float(np.mean(s1)) / mu
    f1_h2 = float(np.mean(s2)) / mu
    f2_hh = float(np.mean(s1 * s1 - s2)) / mu ** 2
    decomposed = f1_h2 / mu + f2_hh - f1_h ** 2
    scale = max(abs(direct), abs(decomposed), 1e-300)
    return abs(direct - decomposed) / scale


# ------------------------------------------------------------------ CGF

def empirical_cgf_from_totals(totals, mu: float) -> float:
    """Lambda = mu^{-1} (logsumexp_r S_r - log R) for per-replica exponents S_r."""
    s = np.asarray(totals, dtype=float)
    if s.size == 0:
        raise ValueError("no replicas")
    if not np.all(np.isfinite(s)):
        raise ValueError("non-finite path-observable totals (exponential overflow)")
    m = s.max()
    lse = m + math.log(np.exp(s - m).sum())
    return (lse - math.log(s.size)) / mu


def empirical_cgf(trajectories: Sequence, path_obs, mu: float) -> float:
    """Empirical cumulant generating function of a path observable."""
    totals = [path_obs.particle_total(traj) for traj in trajectories]
    return empirical_cgf_from_totals(totals, mu)


# ---------------------------------------------------------- accumulation

def neumaier_sum(values: np.ndarray) -> np.ndarray:
    """Compensated (Neumaier) column sums; deterministic in input order."""
    values = np.atleast_2d(np.asarray(values, dtype=float))
    total = np.zeros(values.shape[1])
    comp = np.zeros(values.shape[1])
    for row in values:
        t = total + row
        swap = np.abs(total) >= np.abs(row)
        comp += np.where(swap, (total - t) + row, (row - t) + total)
        total = t
    return total + comp


class EnsembleAccumulator:
    """Mergeable per-replica statistics with deterministic reduction.

    Rows are stored keyed by replica index; reductions sort by index and
    use compensated summation, so any grouping of replicas across
    accumulators produces bit-identical results.
    """

    def __init__(self, width: int):
        self.width = int(width)
        self._rows: Dict[int, np.ndarray] = {}

    def add(self, index: int, values) -> None:
        values = np.asarray(values, dtype=float).reshape(-1)
        if values.shape != (self.width,):
            raise ValueError(f"expected {self.width} values, got {values.shape}")
        if index in self._rows:
            raise ValueError(f"replica {index} already accumulated")
        self._rows[int(index)] = values.copy()

    def merge(self, other: "EnsembleAccumulator") -> "EnsembleAccumulator":
        if other.width != self.width:
            raise ValueError("width mismatch")
        out = EnsembleAccumulator(self.width)
        out._rows = dict(self._rows)
        for idx, row in other._rows.items():
            if idx in out._rows:
                raise ValueError(f"replica {idx} present in both accumulators")
            out._rows[idx] = row.copy()
        return out

    @property
    def count(self) -> int:
        return len(self._rows)

    def _ordered(self) -> np.ndarray:
        idx = sorted(self._rows)
        return np.array([self._rows[i] for i in idx]).reshape(len(idx), self.width)

    def rows(self) -> np.ndarray:
        """Replica rows sorted by index, one row per replica."""
        return self._ordered()

    def sum(self) -> np.ndarray:
        return neumaier_sum(self._ordered())

    def mean(self) -> np.ndarray:
        return self.sum() / self.count

    def second_moment(self) -> np.ndarray:
        rows = self._ordered()
        return neumaier_sum(rows * rows) / self.count

    def variance(self) -> np.ndarray:
        m = self.mean()
        return self.second_moment() - m * m

    def standard_error(self) -> np.ndarray:
        r = self.count
        if r < 2:
            return np.full(self.width, np.nan)
        return np.sqrt(np.maximum(self.variance(), 0.0) * (r / (r - 1)) / r)

    def exp_moment(self) -> np.ndarray:
        """log of the mean of exp(row), computed overflow-safe per column."""
        rows = self._ordered()
        m = rows.max(axis=0)
        return m + np.log(np.exp(rows - m).mean(axis=0))
