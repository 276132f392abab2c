"""Closed-form test solutions built from products of plane-wave factors.

A factor is ``sin(k (a . x + c))`` or ``cos(k (a . x + c))``.  For a
product ``u = prod_i g_i`` the Laplacian follows from the product rule,

    lap u = sum_i lap(g_i) prod_{j != i} g_j
            + 2 sum_{i < j} grad(g_i) . grad(g_j) prod_{m != i, j} g_m,

with ``lap(g_i) = -k^2 |a_i|^2 g_i``, so ``f = lam u - lap u`` is exact to
roundoff without any numerical differentiation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TrigFactor:
    kind: str  # "sin" or "cos"
    a: tuple
    c: float = 0.0

    def __post_init__(self):
        if self.kind not in ("sin", "cos"):
            raise ValueError(f"unknown factor kind {self.kind!r}")

    def phase(self, k, x):
        return k * (self.a[0] * x[0] + self.a[1] * x[1] + self.a[2] * x[2] + self.c)

    def value(self, k, x):
        t = self.phase(k, x)
        return np.sin(t) if self.kind == "sin" else np.cos(t)

    def slope(self, k, x):
        """Derivative of the factor with respect to its phase, times ``k``."""
        t = self.phase(k, x)
        return k * (np.cos(t) if self.kind == "sin" else -np.sin(t))


@dataclass(frozen=True)
class TrigProduct:
    """``u(x) = prod_i factors[i](x)`` with common wavenumber ``k``."""

    factors: tuple
    k: float = 1.0

    def __call__(self, x1, x2, x3):
        x = (x1, x2, x3)
        out = 1.0
        for g in self.factors:
            out = out * g.value(self.k, x)
        return out

    def laplacian(self, x1, x2, x3):
        x = (x1, x2, x3)
        k = self.k
        vals = [g.value(k, x) for g in self.factors]
        slopes = [g.slope(k, x) for g in self.factors]
        n = len(self.factors)

        def prod_except(*skip):
            out = 1.0
            for j in range(n):
                if j not in skip:
                    out = out * vals[j]
            return out

        lap = 0.0
        for i, g in enumerate(self.factors):
            a2 = float(np.dot(g.a, g.a))
            lap = lap - k * k * a2 * vals[i] * prod_except(i)
        for i in range(n):
            for j in range(i + 1, n):
                ai, aj = self.factors[i].a, self.factors[j].a
                lap = lap + 2.0 * float(np.dot(ai, aj)) * slopes[i] * slopes[j] * prod_except(i, j)
        return lap

    def rhs(self, lam, x1, x2, x3):
        """``lam u - lap u``."""
        return lam * self(x1, x2, x3) - self.laplacian(x1, x2, x3)


def wave_product(k_wave: float = 5.0) -> TrigProduct:
    """Five-factor trigonometric test solution on ``(0, 2 pi)^3``."""
    if k_wave < 1:
        raise ValueError("wavenumber must be >= 1")
    return TrigProduct(
        factors=(
            TrigFactor("cos", (1.0, -3.0, 2.0)),
            TrigFactor("sin", (1.0, 0.0, 0.0), 1.0),
            TrigFactor("sin", (0.0, -1.0, 0.0), 1.0),
            TrigFactor("sin", (2.0, 1.0, 0.0)),
            TrigFactor("sin", (3.0, -2.0, 2.0)),
        ),
        k=float(k_wave),
    )


@dataclass(frozen=True)
class ManufacturedCase:
    solution: TrigProduct
    lam: float

    def exact(self, mesh):
        return self.solution(*mesh.coordinates())

    def load(self, mesh):
        """Pointwise ``f`` at the grid points."""
        return self.solution.rhs(self.lam, *mesh.coordinates())

    def discrete_rhs(self, mesh, mass):
        """Lumped-mass load vector ``M f`` with zeros on Dirichlet points."""
        F = mass * self.load(mesh)
        F[mesh.dirichlet_mask] = 0.0
        return F

    def initial_guess(self, mesh):
        """Zero field carrying the exact Dirichlet trace."""
        u = mesh.zeros()
        dm = mesh.dirichlet_mask
        u[dm] = self.exact(mesh)[dm]
        return u


def manufactured_case(k_wave: float = 5.0, lam: float = 0.0) -> ManufacturedCase:
    return ManufacturedCase(solution=wave_product(k_wave), lam=float(lam))
