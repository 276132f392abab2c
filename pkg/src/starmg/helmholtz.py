"""Helmholtz operators on a Cartesian spectral-element mesh.

The discrete operator is ``H = sum_e Q_e H_e Q_e^T`` with

    H_e = lam M3 x M2 x M1 + M3 x M2 x K1 + M3 x K2 x M1 + K3 x M2 x M1

where ``M_d = (h_d/2) M^`` and ``K_d = (2/h_d) K^`` carry the element width
along direction ``d``.  On a Cartesian grid the assembled operator keeps this
structure with globally assembled 1D factors, which is what ``HelmholtzOperator``
applies.  Static condensation eliminates element interiors; ``H_II`` is
block diagonal and inverted per element by fast diagonalization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import FastDiag1D, gll_basis, generalized_eigen
from .grid import CartesianMesh


# -- single element ----------------------------------------------------------

@dataclass(frozen=True)
class ElementOperator:
    """Reference-element Helmholtz operator with geometric coefficients ``g``."""

    p: int
    g: tuple

    @classmethod
    def from_widths(cls, p: int, h, lam: float) -> "ElementOperator":
        h1, h2, h3 = (float(v) for v in h)
        vol = h1 * h2 * h3 / 8.0
        g = (vol * lam, vol * 4.0 / h1**2, vol * 4.0 / h2**2, vol * 4.0 / h3**2)
        if g[0] < 0.0:
            raise ValueError("Helmholtz parameter must be non-negative")
        return cls(p=int(p), g=g)


def _along(A: np.ndarray, u: np.ndarray, axis: int) -> np.ndarray:
    """Apply matrix ``A`` along ``axis`` of a 3D array."""
    if axis == 0:
        return (A @ u.reshape(u.shape[0], -1)).reshape(A.shape[0], *u.shape[1:])
    if axis == 1:
        return np.matmul(A, u)
    return u @ A.T


def element_apply(op: ElementOperator, u_local: np.ndarray) -> np.ndarray:
    """Sum-factorized ``H_e u`` for one element; ``u_local[i1, i2, i3]``."""
    b = gll_basis(op.p)
    n = op.p + 1
    u = np.asarray(u_local, dtype=float)
    if u.shape != (n, n, n):
        raise ValueError(f"expected shape {(n, n, n)}, got {u.shape}")
    w = b.weights
    K = b.stiffness
    g0, g1, g2, g3 = op.g
    mmm = w[:, None, None] * w[None, :, None] * w[None, None, :]
    out = g0 * mmm * u
    out += g1 * (w[None, :, None] * w[None, None, :]) * _along(K, u, 0)
    out += g2 * (w[:, None, None] * w[None, None, :]) * _along(K, u, 1)
    out += g3 * (w[:, None, None] * w[None, :, None]) * _along(K, u, 2)
    return out


# -- batched per-element transforms ------------------------------------------

def _apply_local(A: np.ndarray, X: np.ndarray, axis: int) -> np.ndarray:
    """Apply per-element matrices along a local axis of ``(k0,k1,k2,n,n,n)`` data.

    ``A`` has shape ``(k_axis, m, n)``; element ``e`` along ``axis`` uses
    ``A[e]``.
    """
    k0, k1, k2, n0, n1, n2 = X.shape
    if axis == 0:
        B = A[:, None, None]
        Y = B @ X.reshape(k0, k1, k2, n0, n1 * n2)
        return Y.reshape(k0, k1, k2, A.shape[1], n1, n2)
    if axis == 1:
        B = A[None, :, None, None]
        return B @ X
    B = np.swapaxes(A, -1, -2)[None, None, :, None]
    return X @ B


def extract_interior(mesh: CartesianMesh, u: np.ndarray) -> np.ndarray:
    """Element interiors of a global field as ``(k0, k1, k2, p-1, p-1, p-1)``."""
    blk = mesh.interior_blocks(u)[:, 1:, :, 1:, :, 1:]
    return np.ascontiguousarray(blk.transpose(0, 2, 4, 1, 3, 5))


def insert_interior(mesh: CartesianMesh, u: np.ndarray, X: np.ndarray) -> None:
    if np.ndim(X) == 0:
        mesh.interior_blocks(u)[:, 1:, :, 1:, :, 1:] = X
    else:
        mesh.interior_blocks(u)[:, 1:, :, 1:, :, 1:] = X.transpose(0, 3, 1, 4, 2, 5)


class HelmholtzOperator:
    """Global and condensed Helmholtz operator for one mesh and ``lam``.

    All factorizations are built once in the constructor; the apply methods
    allocate only their outputs and temporaries.
    """

    def __init__(self, mesh: CartesianMesh, lam: float):
        if lam < 0.0:
            raise ValueError("Helmholtz parameter must be non-negative")
        self.mesh = mesh
        self.lam = float(lam)
        p = mesh.p
        b = gll_basis(p)
        self.basis = b
        # globally assembled 1D factors
        self.mass_1d = []
        self.stiff_1d = []
        for d in range(3):
            N = mesh.N[d]
            m = np.zeros(N)
            K = np.zeros((N, N))
            idx = mesh.element_indices_1d(d)
            for e, h in enumerate(mesh.widths[d]):
                ii = idx[e]
                m[ii] += 0.5 * h * b.weights
                K[np.ix_(ii, ii)] += (2.0 / h) * b.stiffness
            self.mass_1d.append(m)
            self.stiff_1d.append(K)
        m0, m1, m2 = self.mass_1d
        self._m12 = m1[:, None] * m2[None, :]
        self._m02 = (m0[:, None] * m2[None, :])[:, None, :]
        self._m01 = (m0[:, None] * m1[None, :])[:, :, None]
        self._mmm = m0[:, None, None] * self._m12[None]
        self._interior = self._build_interior() if p >= 2 else None
        self._diag = None

    # -- setup ---------------------------------------------------------------
    def _build_interior(self):
        p = self.mesh.p
        b = self.basis
        Khat = b.stiffness[1:p, 1:p]
        what = b.weights[1:p]
        S, lam = [], []
        for d in range(3):
            cache = {}
            Sd, Ld = [], []
            for h in self.mesh.widths[d]:
                key = float(h)
                if key not in cache:
                    cache[key] = generalized_eigen((2.0 / h) * Khat, (0.5 * h) * what)
                fd = cache[key]
                Sd.append(fd.S)
                Ld.append(fd.lam)
            S.append(np.array(Sd))
            lam.append(np.array(Ld))
        D = (
            self.lam
            + lam[0][:, None, None, :, None, None]
            + lam[1][None, :, None, None, :, None]
            + lam[2][None, None, :, None, None, :]
        )
        return {
            "S": S,
            "ST": [np.ascontiguousarray(np.swapaxes(s, 1, 2)) for s in S],
            "lam": lam,
            "Dinv": 1.0 / D,
        }

    def interior_fastdiag(self, d: int, e: int) -> FastDiag1D:
        it = self._require_interior()
        return FastDiag1D(S=it["S"][d][e], lam=it["lam"][d][e])

    def _require_interior(self):
        if self._interior is None:
            raise ValueError("no element-interior points for p < 2")
        return self._interior

    # -- full operator -------------------------------------------------------
    def apply_raw(self, u: np.ndarray) -> np.ndarray:
        """Assembled ``H u`` without any boundary-row modification."""
        K0, K1, K2 = self.stiff_1d
        out = _along(K0, u, 0)
        out *= self._m12[None]
        out += self._m02 * _along(K1, u, 1)
        out += self._m01 * _along(K2, u, 2)
        if self.lam != 0.0:
            out += self.lam * self._mmm * u
        return out

    def full_apply(self, u: np.ndarray) -> np.ndarray:
        """``H u`` with identity rows at Dirichlet points."""
        out = self.apply_raw(u)
        dm = self.mesh.dirichlet_mask
        out[dm] = u[dm]
        return out

    # -- interior solves -----------------------------------------------------
    def interior_solve(self, F_I: np.ndarray) -> np.ndarray:
        """``H_II^{-1} F_I`` for all elements, data shaped ``(k0,k1,k2,n,n,n)``."""
        it = self._require_interior()
        X = F_I
        for d in range(3):
            X = _apply_local(it["ST"][d], X, d)
        X = X * it["Dinv"]
        for d in range(3):
            X = _apply_local(it["S"][d], X, d)
        return X

    def interior_apply(self, u_I: np.ndarray) -> np.ndarray:
        """``H_II u_I`` per element (element interiors with zero boundary)."""
        self._require_interior()
        u = self.mesh.zeros()
        insert_interior(self.mesh, u, u_I)
        return extract_interior(self.mesh, self.apply_raw(u))

    # -- condensed system ----------------------------------------------------
    def _check_skeleton(self, u):
        if self.mesh.p >= 2 and np.any(self.mesh.interior_blocks(u)[:, 1:, :, 1:, :, 1:]):
            raise ValueError("condensed field has nonzero element-interior values")

    def condense_rhs(self, F: np.ndarray) -> np.ndarray:
        """``F_B - H_BI H_II^{-1} F_I`` on the skeleton, zero in element interiors."""
        mesh = self.mesh
        if mesh.p < 2:
            return F.copy()
        w = self.interior_solve(extract_interior(mesh, F))
        z = mesh.zeros()
        insert_interior(mesh, z, w)
        out = F - self.apply_raw(z)
        insert_interior(mesh, out, 0.0)
        return out

    def condensed_apply(self, u: np.ndarray, check: bool = True) -> np.ndarray:
        """Schur complement ``(H_BB - H_BI H_II^{-1} H_IB) u``.

        Dirichlet points pass through unchanged.  Two assembled applies and
        one batched interior solve, ``O(p^4)`` per element.
        """
        mesh = self.mesh
        if check:
            self._check_skeleton(u)
        if mesh.p < 2:
            return self.full_apply(u)
        t = self.apply_raw(u)
        u_I = self.interior_solve(extract_interior(mesh, t))
        v = u.copy()
        insert_interior(mesh, v, -u_I)
        out = self.apply_raw(v)
        insert_interior(mesh, out, 0.0)
        dm = mesh.dirichlet_mask
        out[dm] = u[dm]
        return out

    def recover_interior(self, u_hat: np.ndarray, F: np.ndarray) -> np.ndarray:
        """Full solution from skeleton values: ``u_I = H_II^{-1}(F_I - H_IB u_B)``."""
        mesh = self.mesh
        u = u_hat.copy()
        if mesh.p < 2:
            return u
        insert_interior(mesh, u, 0.0)
        t = self.apply_raw(u)
        u_I = self.interior_solve(extract_interior(mesh, F) - extract_interior(mesh, t))
        insert_interior(mesh, u, u_I)
        return u

    def condensed_diagonal(self) -> np.ndarray:
        """``diag(H^)`` on the skeleton; 1 at Dirichlet points, 0 in interiors.

        Only face-interior points couple to element interiors, and for
        those the Schur correction factorizes over the element's 1D
        eigenbases, so each face costs ``O(p^4)``.
        """
        if self._diag is not None:
            return self._diag
        mesh = self.mesh
        p = mesh.p
        m = self.mass_1d
        kd = [np.diag(K).copy() for K in self.stiff_1d]
        diag = self.lam * self._mmm
        diag = diag + kd[0][:, None, None] * self._m12[None]
        diag += self._m02 * kd[1][None, :, None]
        diag += self._m01 * kd[2][None, None, :]
        if p >= 2:
            it = self._interior
            b = self.basis
            Khat_IB = b.stiffness[1:p, :]
            what = b.weights[1:p]
            for d in range(3):
                o1, o2 = [a for a in range(3) if a != d]
                # Dinv with direction d first: (k_d, k_o1, k_o2, n_d, n_o1, n_o2)
                Dinv = np.transpose(it["Dinv"], (d, o1, o2, 3 + d, 3 + o1, 3 + o2))
                A = []
                for o in (o1, o2):
                    hm = 0.5 * mesh.widths[o][:, None] * what[None, :]
                    A.append((hm[:, :, None] * it["S"][o]) ** 2)
                for side in (0, p):
                    # q[e, m] = (S_e^T K_e[I, side])_m^2
                    col = (2.0 / mesh.widths[d])[:, None] * Khat_IB[None, :, side]
                    q = np.einsum("eim,ei->em", it["S"][d], col) ** 2
                    T = np.einsum("em,eabmxy->eabxy", q, Dinv)
                    c = A[0][None, :, None] @ T @ np.swapaxes(A[1], 1, 2)[None, None, :]
                    gd = (np.arange(mesh.k[d]) * p + side) % mesh.N[d]
                    g1 = (np.arange(mesh.k[o1])[:, None] * p + np.arange(1, p)[None, :])
                    g2 = (np.arange(mesh.k[o2])[:, None] * p + np.arange(1, p)[None, :])
                    index = [None, None, None]
                    index[d] = gd[:, None, None, None, None]
                    index[o1] = g1[None, :, None, :, None]
                    index[o2] = g2[None, None, :, None, :]
                    diag[tuple(index)] -= c
        diag[~mesh.skeleton_mask] = 0.0
        diag[mesh.dirichlet_mask] = 1.0
        diag.setflags(write=False)
        self._diag = diag
        return diag


def full_apply(mesh: CartesianMesh, lam: float, u: np.ndarray) -> np.ndarray:
    return HelmholtzOperator(mesh, lam).full_apply(u)


def condense_rhs(mesh: CartesianMesh, lam: float, F: np.ndarray) -> np.ndarray:
    return HelmholtzOperator(mesh, lam).condense_rhs(F)


def condensed_apply(mesh: CartesianMesh, lam: float, u: np.ndarray) -> np.ndarray:
    return HelmholtzOperator(mesh, lam).condensed_apply(u)


def recover_interior(mesh: CartesianMesh, lam: float, u_hat: np.ndarray, F: np.ndarray) -> np.ndarray:
    return HelmholtzOperator(mesh, lam).recover_interior(u_hat, F)


def condensed_diagonal(mesh: CartesianMesh, lam: float) -> np.ndarray:
    return HelmholtzOperator(mesh, lam).condensed_diagonal()
