"""Vertex-star Schwarz smoother for the statically condensed Helmholtz system.

A star is the 2x2x2 block of elements around a mesh vertex.  After
condensation only the three planes through the vertex carry unknowns,
``n_S = 2p - 1`` points per direction.  The condensed block inverse equals
the full block inverse restricted to those planes (the interiors only see
a zero right-hand side), so fast diagonalization of the full block can be
applied face by face in ``O(n_S^3)`` operations.

Data on the planes is stored as three arrays ``faces[d]`` of shape
``(..., P, n_S, n_S)``: ``faces[d][..., q, i, j]`` is the value on the
``q``-th plane perpendicular to ``x_{d+1}``, indexed by the two remaining
directions in increasing order.  A vertex star has ``P = 1`` plane per
direction; the element-centred 3x3x3 block has ``P = 2``.

Boundaries are handled by identity padding: points outside the domain (and
Dirichlet points) get identity rows in the 1D matrices, which decouples them
so one operator shape serves every vertex.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .basis import gll_basis, generalized_eigen, weight_poly
from .grid import BC, CartesianMesh


# -- 1D building blocks ------------------------------------------------------

@dataclass(frozen=True)
class Block1D:
    """Assembled 1D matrices of a block along one direction.

    ``S`` and ``lam`` diagonalize the active part; padded rows carry
    identity in ``M``, ``K`` and ``S`` and eigenvalue 1.
    """

    M: np.ndarray
    K: np.ndarray
    active: np.ndarray
    S: np.ndarray
    lam: np.ndarray
    index: np.ndarray  # global point index of each position (clipped)


def _assemble_1d(p, widths, present, n_nodes):
    b = gll_basis(p)
    M = np.zeros(n_nodes)
    K = np.zeros((n_nodes, n_nodes))
    for j, (h, ok) in enumerate(zip(widths, present)):
        if not ok:
            continue
        sl = slice(j * p, j * p + p + 1)
        M[sl] += 0.5 * h * b.weights
        K[sl, sl] += (2.0 / h) * b.stiffness
    return M[1:-1], K[1:-1, 1:-1]


def _pad_and_diagonalize(M, K, active):
    n = M.size
    a = np.flatnonzero(active)
    S = np.eye(n)
    lam = np.ones(n)
    Mp = np.ones(n)
    Kp = np.eye(n)
    if a.size:
        Mp[a] = M[a]
        Kp[np.ix_(a, a)] = K[np.ix_(a, a)]
        fd = generalized_eigen(K[np.ix_(a, a)], M[a])
        S[np.ix_(a, a)] = fd.S
        lam[a] = fd.lam
    return Mp, Kp, S, lam


def block_1d(mesh: CartesianMesh, d: int, first: int, n_elem: int) -> Block1D:
    """1D block of ``n_elem`` consecutive elements starting at element ``first``.

    Elements outside a non-periodic direction are ghosts: their nodes are
    decoupled.  A Dirichlet wall also decouples the wall node.
    """
    p, k, N = mesh.p, mesh.k[d], mesh.N[d]
    periodic = mesh.periodic(d)
    elems = np.arange(first, first + n_elem)
    present = (elems >= 0) & (elems < k) | periodic
    widths = [mesh.widths[d][e % k] if ok else 1.0 for e, ok in zip(elems, present)]
    n_nodes = n_elem * p + 1
    M, K = _assemble_1d(p, widths, present, n_nodes)
    local = np.arange(1, n_nodes - 1)
    nodes = first * p + local  # global node index per position
    # a node is coupled when it belongs to a present element and is not a
    # Dirichlet wall node
    owner = np.minimum(local // p, n_elem - 1)
    shared = (local % p == 0) & (local > 0)
    active = present[owner] | (shared & present[np.maximum(owner - 1, 0)])
    if not periodic:
        lo, hi = mesh.bc[d]
        if lo is BC.DIRICHLET:
            active &= nodes != 0
        if hi is BC.DIRICHLET:
            active &= nodes != N - 1
    Mp, Kp, S, lam = _pad_and_diagonalize(M, K, active)
    index = nodes % N if periodic else np.clip(nodes, 0, N - 1)
    return Block1D(M=Mp, K=Kp, active=active, S=S, lam=lam, index=index)


def vertex_positions(mesh: CartesianMesh, d: int) -> int:
    return mesh.k[d] if mesh.periodic(d) else mesh.k[d] + 1


def star_weights_1d(p: int, p_w: int = 7, n_elem: int = 2) -> np.ndarray:
    """1D weights at the star positions, 1 at the centre vertex."""
    xi = gll_basis(p).nodes
    left = weight_poly(p_w, 0.5 * (1.0 - xi[1:]))  # nodes 1..p of the left element
    right = weight_poly(p_w, 0.5 * (1.0 + xi[1:-1]))  # nodes 1..p-1 of the right one
    if n_elem != 2:
        raise ValueError("weights are defined for vertex stars only")
    return np.concatenate([left, right])


# -- block inverse kernels ---------------------------------------------------

def multiplicity(n: int, centers: Sequence[int]) -> np.ndarray:
    """Number of planes through each in-plane point, shape ``(n, n)``.

    Identical for all three plane directions since every direction uses the
    same plane positions.
    """
    on = np.zeros(n, dtype=float)
    on[list(centers)] = 1.0
    return 1.0 + on[:, None] + on[None, :]


def _t(A):
    return np.swapaxes(A, -1, -2)


def face_inverse(S, lam, lam0, faces, centers):
    """Fast-diagonalization inverse evaluated on planes only, ``O(n^3)``.

    Parameters
    ----------
    S, lam
        Per-direction transformation matrices ``(..., n, n)`` and
        eigenvalues ``(..., n)``, broadcastable over the batch.
    lam0
        Helmholtz parameter (mass coefficient).
    faces
        Three arrays ``(..., P, n, n)`` with the residual on the planes.
    centers
        Plane positions along each direction.

    Returns
    -------
    list of three arrays with the block solution on the planes.
    """
    centers = list(centers)
    n = faces[0].shape[-1]
    mult = multiplicity(n, centers)
    R = [S[d][..., centers, :] for d in range(3)]  # (..., P, n)
    Sx = [S[d][..., None, :, :] for d in range(3)]  # broadcast over planes
    P = len(centers)

    F0, F1, F2 = (f / mult for f in faces)
    batch = np.broadcast_shapes(F0.shape[:-3], F1.shape[:-3], F2.shape[:-3])

    # into eigenspace
    T0 = _t(Sx[1]) @ F0 @ Sx[2]  # (..., P, m1, m2)
    E = (_t(R[0]) @ T0.reshape(*T0.shape[:-3], P, n * n)).reshape(*batch, n, n, n)
    T1 = _t(Sx[0]) @ F1 @ Sx[2]  # (..., P, m0, m2)
    E += _t(R[1])[..., None, :, :] @ np.swapaxes(T1, -3, -2)
    T2 = _t(Sx[0]) @ F2 @ Sx[1]  # (..., P, m0, m1)
    T2 = np.moveaxis(T2, -3, -1).reshape(*T2.shape[:-3], n * n, P)
    E += (T2 @ R[2]).reshape(*batch, n, n, n)

    D = (
        lam0
        + lam[0][..., :, None, None]
        + lam[1][..., None, :, None]
        + lam[2][..., None, None, :]
    )
    U = E / D

    # back to the planes
    G0 = (R[0] @ U.reshape(*batch, n, n * n)).reshape(*batch, P, n, n)
    G1 = np.swapaxes(R[1][..., None, :, :] @ U, -3, -2)
    G2 = np.moveaxis((U.reshape(*batch, n * n, n) @ _t(R[2])).reshape(*batch, n, n, P), -1, -3)
    u0 = Sx[1] @ G0 @ _t(Sx[2])
    u1 = Sx[0] @ G1 @ _t(Sx[2])
    u2 = Sx[0] @ G2 @ _t(Sx[1])
    return [u0, u1, u2]


def faces_to_block(faces, centers, n):
    """Scatter multiplicity-corrected plane data into the full block."""
    mult = multiplicity(n, centers)
    batch = np.broadcast_shapes(*(f.shape[:-3] for f in faces))
    full = np.zeros((*batch, n, n, n))
    for q, c in enumerate(centers):
        full[..., c, :, :] += faces[0][..., q, :, :] / mult
        full[..., :, c, :] += faces[1][..., q, :, :] / mult
        full[..., :, :, c] += faces[2][..., q, :, :] / mult
    return full


def block_to_faces(full, centers):
    return [
        np.stack([full[..., c, :, :] for c in centers], axis=-3),
        np.stack([full[..., :, c, :] for c in centers], axis=-3),
        np.stack([full[..., :, :, c] for c in centers], axis=-3),
    ]


def _along_last3(A, X, axis):
    # A: (..., n, n) applied along axis in {-3, -2, -1} of X (..., n, n, n)
    n = X.shape[-1]
    if axis == -3:
        Y = A @ X.reshape(*X.shape[:-3], n, n * n)
        return Y.reshape(X.shape)
    if axis == -2:
        return A[..., None, :, :] @ X
    return X @ _t(A)[..., None, :, :]


def full_block_inverse(S, lam, lam0, full):
    """``(S x S x S) D^-1 (S^T x S^T x S^T)`` on a full block, ``O(n^4)``."""
    X = full
    for d, ax in enumerate((-3, -2, -1)):
        X = _along_last3(_t(S[d]), X, ax)
    D = lam0 + lam[0][..., :, None, None] + lam[1][..., None, :, None] + lam[2][..., None, None, :]
    X = X / D
    for d, ax in enumerate((-3, -2, -1)):
        X = _along_last3(S[d], X, ax)
    return X


# -- single block operators --------------------------------------------------

@dataclass
class StarOperator:
    """Condensed block operator of a vertex star or an element-centred block."""

    p: int
    lam0: float
    dirs: tuple
    centers: tuple

    @property
    def n(self) -> int:
        return self.dirs[0].M.size

    @property
    def S(self):
        return [b.S for b in self.dirs]

    @property
    def lam(self):
        return [b.lam for b in self.dirs]

    @property
    def D(self) -> np.ndarray:
        l0, l1, l2 = self.lam
        return self.lam0 + l0[:, None, None] + l1[None, :, None] + l2[None, None, :]

    def face_masks(self):
        """Active (coupled) points of each plane array, shape ``(P, n, n)``."""
        a = [b.active for b in self.dirs]
        out = []
        for d in range(3):
            o1, o2 = [x for x in range(3) if x != d]
            on = a[d][list(self.centers)].astype(float)
            out.append(on[:, None, None] * np.outer(a[o1], a[o2])[None])
        return out

    @property
    def is_active(self) -> bool:
        """False when every plane point is decoupled (correction is zero)."""
        return any(m.any() for m in self.face_masks())

    def _mask(self, faces):
        return [f * m for f, m in zip(faces, self.face_masks())]

    def inverse_tpc(self, faces):
        """Condensed block inverse evaluated face-wise, ``O(n^3)``."""
        faces = self._mask(faces)
        out = face_inverse(self.S, self.lam, self.lam0, faces, self.centers)
        return self._mask(out)

    def inverse_tpf(self, faces):
        """Reference: fast diagonalization of the full block, ``O(n^4)``."""
        faces = self._mask(faces)
        full = faces_to_block(faces, self.centers, self.n)
        out = block_to_faces(full_block_inverse(self.S, self.lam, self.lam0, full), self.centers)
        return self._mask(out)

    def full_matrix_1d(self):
        return [b.M for b in self.dirs], [b.K for b in self.dirs]

    def op_count(self) -> dict:
        n = self.n
        faces = 37 if len(self.centers) == 1 else 73
        return {"tpc": faces * n**3, "tpf": 12 * n**4, "mmc": 2 * (3 * n * n) ** 2}


def build_star(mesh: CartesianMesh, lam: float, vertex: Sequence[int]) -> StarOperator:
    """Star around the mesh vertex with element-corner indices ``vertex``."""
    dirs = []
    for d in range(3):
        v = int(vertex[d])
        if not 0 <= v < vertex_positions(mesh, d):
            raise IndexError(f"vertex {vertex} out of range")
        dirs.append(block_1d(mesh, d, v - 1, 2))
    return StarOperator(p=mesh.p, lam0=float(lam), dirs=tuple(dirs), centers=(mesh.p - 1,))


def build_element_block(mesh: CartesianMesh, lam: float, element: Sequence[int]) -> StarOperator:
    """Element-centred 3x3x3 block with full overlap, ``n = 3p - 1``."""
    dirs = []
    for d in range(3):
        e = int(element[d])
        if not 0 <= e < mesh.k[d]:
            raise IndexError(f"element {element} out of range")
        dirs.append(block_1d(mesh, d, e - 1, 3))
    p = mesh.p
    return StarOperator(p=p, lam0=float(lam), dirs=tuple(dirs), centers=(p - 1, 2 * p - 1))


def element_block_inverse(block: StarOperator, faces):
    return block.inverse_tpc(faces)


def star_inverse_tpc(star: StarOperator, faces):
    return star.inverse_tpc(faces)


def star_inverse_tpf(star: StarOperator, faces):
    return star.inverse_tpf(faces)


class MMCInverse:
    """Precomputed dense inverse of a condensed block on its unique plane points.

    The dense matrix is ``(H^-1)_{SS}``, the full block inverse restricted
    to the plane points, which is the inverse of the condensed operator.
    """

    def __init__(self, star: StarOperator, max_points: int = 12000):
        n, centers = star.n, list(star.centers)
        on = np.zeros(n, dtype=bool)
        on[centers] = True
        cube = on[:, None, None] | on[None, :, None] | on[None, None, :]
        pts = np.argwhere(cube)
        if pts.shape[0] > max_points:
            raise MemoryError(f"dense inverse with {pts.shape[0]} points exceeds the cap")
        S0, S1, S2 = star.S
        Dinv = 1.0 / star.D
        Z = np.zeros((pts.shape[0], pts.shape[0]))
        A1 = S1[pts[:, 1]]
        A2 = S2[pts[:, 2]]
        B12 = (A1[:, :, None] * A2[:, None, :]).reshape(pts.shape[0], n * n)
        for a in range(n):
            Fa = S0[pts[:, 0], a][:, None] * B12
            Z += (Fa * Dinv[a].ravel()[None, :]) @ Fa.T
        self.star = star
        self.points = pts
        self.matrix = Z
        self._cube_index = np.full((n, n, n), -1)
        self._cube_index[tuple(pts.T)] = np.arange(pts.shape[0])

    def __call__(self, faces):
        star = self.star
        n, centers = star.n, star.centers
        faces = star._mask(faces)
        full = faces_to_block(faces, centers, n)
        batch = full.shape[:-3]
        vec = full.reshape(*batch, n**3)[..., np.ravel_multi_index(tuple(self.points.T), (n, n, n))]
        sol = vec @ self.matrix.T
        out = np.zeros((*batch, n, n, n))
        out[(..., *self.points.T)] = sol
        return star._mask(block_to_faces(out, centers))


# -- the smoother ------------------------------------------------------------

class SchwarzSmoother:
    """Weighted additive Schwarz smoother over all vertex stars of a mesh.

    ``apply(r)`` returns ``sum_i W_i R_i^T H_i^-1 R_i r`` with the star
    inverses evaluated face-wise.  Stars are processed in batches; results
    are accumulated in a fixed order, so the output is deterministic.
    """

    def __init__(self, mesh: CartesianMesh, lam: float, p_w: int = 7, chunk_size: int | None = None):
        if mesh.p < 2:
            raise ValueError("the star smoother needs p >= 2")
        self.mesh = mesh
        self.lam0 = float(lam)
        p = mesh.p
        n = 2 * p - 1
        self.n = n
        self.c = p - 1
        V = tuple(vertex_positions(mesh, d) for d in range(3))
        self.V = V
        self.blocks = [[block_1d(mesh, d, v - 1, 2) for v in range(V[d])] for d in range(3)]
        self.S = [np.array([b.S for b in row]) for row in self.blocks]
        self.lam = [np.array([b.lam for b in row]) for row in self.blocks]
        act = [np.array([b.active for b in row]).astype(float) for row in self.blocks]
        gidx = [np.array([b.index for b in row]) for row in self.blocks]

        w = star_weights_1d(p, p_w)
        self.w1d = w
        c = self.c
        # per-face weights; lines shared with an earlier face are dropped so
        # each geometric point is written once per star
        W0 = np.outer(w, w)
        W1 = np.outer(w, w)
        W1[c, :] = 0.0
        W2 = np.outer(w, w)
        W2[c, :] = 0.0
        W2[:, c] = 0.0
        self.face_weights = (W0, W1, W2)

        N1, N2 = mesh.N[1], mesh.N[2]
        # flat global index and activity of every face entry, stored as
        # (n_stars, n, n) in star order (v0, v1, v2)
        self._flat = []
        self._act = []
        for d in range(3):
            o1, o2 = [x for x in range(3) if x != d]
            pos, acts = [None] * 3, [None] * 3
            for ax, slot in ((d, None), (o1, 3), (o2, 4)):
                shape = [1] * 5
                shape[ax] = V[ax]
                if slot is None:
                    pos[ax] = gidx[ax][:, c].reshape(shape)
                    acts[ax] = act[ax][:, c].reshape(shape)
                else:
                    shape[slot] = n
                    pos[ax] = gidx[ax].reshape(shape)
                    acts[ax] = act[ax].reshape(shape)
            flat = (pos[0] * N1 + pos[1]) * N2 + pos[2]
            self._flat.append(np.ascontiguousarray(np.broadcast_to(flat, (*V, n, n)).reshape(-1, n, n)))
            a = acts[0] * acts[1] * acts[2]
            self._act.append(np.ascontiguousarray(np.broadcast_to(a, (*V, n, n)).reshape(-1, n, n)))
        v0, v1, v2 = (np.arange(V[d]) for d in range(3))
        grid = np.meshgrid(v0, v1, v2, indexing="ij")
        self._star_v = [g.ravel() for g in grid]
        self.n_stars = int(np.prod(V))
        if chunk_size is None:
            chunk_size = max(1, int(2_000_000 // n**3))
        self.chunk_size = chunk_size

    def apply(self, r: np.ndarray) -> np.ndarray:
        """Weighted sum of star corrections for the condensed residual ``r``."""
        mesh = self.mesh
        flat_r = r.ravel()
        out_vals = [np.empty((self.n_stars, self.n, self.n)) for _ in range(3)]
        for start in range(0, self.n_stars, self.chunk_size):
            sl = slice(start, start + self.chunk_size)
            vs = [v[sl] for v in self._star_v]
            S = [self.S[d][vs[d]] for d in range(3)]
            lam = [self.lam[d][vs[d]] for d in range(3)]
            faces = [(flat_r[self._flat[d][sl]] * self._act[d][sl])[:, None] for d in range(3)]
            sol = face_inverse(S, lam, self.lam0, faces, [self.c])
            for d in range(3):
                out_vals[d][sl] = sol[d][:, 0] * self._act[d][sl] * self.face_weights[d]
        size = flat_r.size
        acc = np.zeros(size)
        for d in range(3):
            acc += np.bincount(self._flat[d].ravel(), weights=out_vals[d].ravel(), minlength=size)
        out = acc.reshape(mesh.N)
        out[~mesh.free_skeleton_mask] = 0.0
        return out

    __call__ = apply

    def weight_field(self) -> np.ndarray:
        """``sum_i W_i R_i^T R_i 1`` on the skeleton; 1 wherever stars reach."""
        size = int(np.prod(self.mesh.N))
        acc = np.zeros(size)
        for d in range(3):
            vals = self._act[d] * self.face_weights[d]
            acc += np.bincount(self._flat[d].ravel(), weights=vals.ravel(), minlength=size)
        return acc.reshape(self.mesh.N)


def smoother_apply(mesh: CartesianMesh, lam: float, r: np.ndarray, p_w: int = 7) -> np.ndarray:
    return SchwarzSmoother(mesh, lam, p_w).apply(r)
