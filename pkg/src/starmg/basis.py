"""One-dimensional spectral-element ingredients.

GLL nodes and weights, the lumped mass and dense stiffness matrices of the
reference element [-1, 1], Lagrange interpolation between nodal sets,
the generalized symmetric eigendecomposition used by fast diagonalization,
and the smoothstep-type weight polynomial of the Schwarz smoother.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import comb

import numpy as np
from numpy.polynomial import legendre


@dataclass(frozen=True)
class Basis1D:
    """Nodal GLL basis of degree ``p`` on the reference interval."""

    p: int
    nodes: np.ndarray
    weights: np.ndarray
    stiffness: np.ndarray
    derivative: np.ndarray

    @property
    def mass(self) -> np.ndarray:
        """Diagonal (GLL-lumped) mass matrix."""
        return np.diag(self.weights)

    @property
    def n(self) -> int:
        return self.p + 1


@dataclass(frozen=True)
class FastDiag1D:
    """Generalized eigenpairs with ``S.T @ K @ S = diag(lam)`` and ``S.T @ M @ S = I``."""

    S: np.ndarray
    lam: np.ndarray


@dataclass(frozen=True)
class Interp1D:
    p_coarse: int
    p_fine: int
    J: np.ndarray


def _gll_nodes(p: int, tol: float = 1e-15, maxiter: int = 100) -> np.ndarray:
    # Newton on (1 - x^2) P'_p(x), started from Chebyshev-Gauss-Lobatto points.
    x = -np.cos(np.pi * np.arange(p + 1) / p)
    if p == 1:
        return x
    xi = x[1:-1].copy()
    # interior roots of (1 - x^2) P'_p are the roots of P'_p
    dp = legendre.Legendre.basis(p).deriv()
    d2p = dp.deriv()
    for _ in range(maxiter):
        step = dp(xi) / d2p(xi)
        # safeguard: never jump more than halfway to the interval ends
        bound = 0.5 * (1.0 - np.abs(xi))
        step = np.clip(step, -bound, bound)
        xi -= step
        if np.max(np.abs(step)) < tol:
            break
    x[1:-1] = xi
    # enforce exact point symmetry
    x = 0.5 * (x - x[::-1])
    if p % 2 == 0:
        x[p // 2] = 0.0
    return x


def barycentric_weights(x: np.ndarray) -> np.ndarray:
    diff = x[:, None] - x[None, :]
    np.fill_diagonal(diff, 1.0)
    return 1.0 / np.prod(diff, axis=1)


def lagrange_matrix(x_nodes: np.ndarray, x_eval: np.ndarray) -> np.ndarray:
    """Values ``L[i, j] = l_j(x_eval[i])`` of the Lagrange basis on ``x_nodes``."""
    x_nodes = np.asarray(x_nodes, dtype=float)
    x_eval = np.asarray(x_eval, dtype=float)
    bw = barycentric_weights(x_nodes)
    diff = x_eval[:, None] - x_nodes[None, :]
    exact = diff == 0.0
    diff[exact] = 1.0
    terms = bw[None, :] / diff
    L = terms / terms.sum(axis=1, keepdims=True)
    rows = exact.any(axis=1)
    L[rows] = exact[rows].astype(float)
    return L


def derivative_matrix(x: np.ndarray) -> np.ndarray:
    """Collocation derivative ``D[i, j] = l_j'(x_i)``."""
    bw = barycentric_weights(x)
    diff = x[:, None] - x[None, :]
    np.fill_diagonal(diff, 1.0)
    D = (bw[None, :] / bw[:, None]) / diff
    np.fill_diagonal(D, 0.0)
    np.fill_diagonal(D, -D.sum(axis=1))
    return D


@lru_cache(maxsize=None)
def gll_basis(p: int) -> Basis1D:
    """GLL basis of degree ``p`` with lumped mass and exact-quadrature stiffness.

    The stiffness matrix is ``K[i, j] = sum_q w_q l_i'(x_q) l_j'(x_q)``,
    which integrates the degree ``2p - 2`` integrand exactly.
    """
    p = int(p)
    if p < 1:
        raise ValueError(f"polynomial degree must be >= 1, got {p}")
    x = _gll_nodes(p)
    Pp = legendre.legval(x, np.eye(p + 1)[p])
    w = 2.0 / (p * (p + 1) * Pp**2)
    D = derivative_matrix(x)
    K = D.T @ (w[:, None] * D)
    K = 0.5 * (K + K.T)
    for arr in (x, w, D, K):
        arr.setflags(write=False)
    return Basis1D(p=p, nodes=x, weights=w, stiffness=K, derivative=D)


def generalized_eigen(K: np.ndarray, M: np.ndarray) -> FastDiag1D:
    """Solve ``K s = lam M s`` for symmetric ``K`` and positive diagonal ``M``.

    ``M`` may be given as a diagonal matrix or as its diagonal.  Eigenvalues
    are ascending; each eigenvector is signed so that its largest-magnitude
    entry is positive.
    """
    K = np.asarray(K, dtype=float)
    m = np.asarray(M, dtype=float)
    if m.ndim == 2:
        m = np.diag(m)
    if np.any(m <= 0.0):
        raise ValueError("degenerate mass: diagonal entries must be positive")
    r = 1.0 / np.sqrt(m)
    A = r[:, None] * K * r[None, :]
    lam, Q = np.linalg.eigh(0.5 * (A + A.T))
    S = r[:, None] * Q
    idx = np.argmax(np.abs(S), axis=0)
    sign = np.sign(S[idx, np.arange(S.shape[1])])
    sign[sign == 0] = 1.0
    return FastDiag1D(S=S * sign, lam=lam)


def interpolation_matrix(b_coarse: Basis1D, b_fine: Basis1D) -> Interp1D:
    if b_fine.p < b_coarse.p:
        raise ValueError("interpolation requires p_fine >= p_coarse")
    J = lagrange_matrix(b_coarse.nodes, b_fine.nodes)
    return Interp1D(p_coarse=b_coarse.p, p_fine=b_fine.p, J=J)


def smoothstep(t, degree: int = 7):
    """Odd-degree Hermite smoothstep, 0 at t=0 and 1 at t=1."""
    n = (degree - 1) // 2
    t = np.asarray(t, dtype=float)
    s = np.zeros_like(t)
    for k in range(n + 1):
        s = s + comb(n + k, k) * (1.0 - t) ** k
    return t ** (n + 1) * s


def weight_poly(p_w: int, t):
    """Vertex weight ``w(t) = 1 - smoothstep(t)``; ``t = 0`` at the owning vertex.

    ``w(t) + w(1 - t) = 1`` holds for every odd ``p_w``, so the weights of
    the two vertices bounding an element form a partition of unity.
    """
    if p_w < 1 or p_w % 2 == 0:
        raise ValueError(f"weight degree must be odd and >= 1, got {p_w}")
    # 1 - s(t) == s(1 - t) by point symmetry; evaluating it this way keeps
    # w(t) + w(1 - t) = 1 to roundoff.
    return smoothstep(1.0 - np.asarray(t, dtype=float), p_w)
