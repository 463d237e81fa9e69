"""Uniform cell-centered velocity grids for the kinetic solvers.

Grid functions live on cell centers and are interpreted as densities per
velocity volume; pairings with test functions use the midpoint rule.
"""

import dataclasses

import numpy as np


@dataclasses.dataclass(frozen=True)
class VelocityGrid:
    """Cell-centered cube [-vmax, vmax]^d with m points per axis (m even)."""

    d: int
    m: int
    vmax: float

    def __post_init__(self):
        if self.d not in (2, 3):
            raise ValueError("d must be 2 or 3")
        if self.m < 4 or self.m % 2:
            raise ValueError("m must be even and at least 4")
        if not self.vmax > 0:
            raise ValueError("vmax must be positive")

    @property
    def dx(self) -> float:
        return 2.0 * self.vmax / self.m

    @property
    def n_nodes(self) -> int:
        return self.m ** self.d

    @property
    def cell_volume(self) -> float:
        return self.dx ** self.d

    def axis(self) -> np.ndarray:
        return -self.vmax + (np.arange(self.m) + 0.5) * self.dx

    def nodes(self) -> np.ndarray:
        """All cell centers, shape (m^d, d), row-major in the axis indices."""
        ax = self.axis()
        grids = np.meshgrid(*([ax] * self.d), indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    def integrate(self, values: np.ndarray) -> float:
        return float(np.asarray(values, float).sum() * self.cell_volume)

    def pair(self, density: np.ndarray, test_values: np.ndarray) -> float:
        """Midpoint pairing int f(v) phi(v) dv."""
        f = np.asarray(density, float)
        p = np.asarray(test_values, float)
        if f.shape != (self.n_nodes,) or p.shape != (self.n_nodes,):
            raise ValueError("values must be flat arrays on this grid")
        return float((f * p).sum() * self.cell_volume)

    def values_of(self, h) -> np.ndarray:
        """Evaluate an (x, v) test function at the nodes.

        Only position-independent functions make sense here; evaluation at
        two distinct positions guards against silent misuse.
        """
        nodes = self.nodes()
        xa = np.full_like(nodes, 0.25)
        xb = np.full_like(nodes, 0.75)
        va = np.asarray(h(xa, nodes), float)
        vb = np.asarray(h(xb, nodes), float)
        if not np.allclose(va, vb, rtol=1e-10, atol=1e-12):
            raise ValueError(
                "position-dependent test function on a velocity-only grid")
        return va

    def project(self, profile) -> np.ndarray:
        """Velocity density of a profile sampled at the nodes, renormalized
        to unit mass on the grid."""
        vals = np.asarray(profile.velocity_density(self.nodes()), float)
        mass = vals.sum() * self.cell_volume
        if not mass > 0:
            raise ValueError("profile carries no mass inside the grid box")
        return vals / mass

    def maxwellian(self, beta: float = 1.0) -> np.ndarray:
        nodes = self.nodes()
        vals = np.exp(-0.5 * beta * (nodes ** 2).sum(axis=1))
        return vals / (vals.sum() * self.cell_volume)

    def moment(self, values: np.ndarray, alpha) -> float:
        """int f(v) prod_k v_k^alpha_k dv on the grid."""
        alpha = np.asarray(alpha, int)
        if alpha.shape != (self.d,):
            raise ValueError("one exponent per axis required")
        mono = np.prod(self.nodes() ** alpha, axis=1)
        return self.pair(values, mono)
