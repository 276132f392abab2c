"""Structured Cartesian meshes of cuboidal spectral elements.

Fields live on the global tensor grid of GLL points (one value per geometric
point, lexicographic in ``(x1, x2, x3)``).  Element assembly is implicit:
element ``e`` along direction ``d`` owns global indices ``e*p ... e*p + p``
(wrapped for periodic directions).  Condensed (skeleton) vectors are full-size
arrays whose element-interior entries are ignored and kept at zero.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .basis import gll_basis


class BC(str, enum.Enum):
    DIRICHLET = "dirichlet"
    NEUMANN = "neumann"
    PERIODIC = "periodic"


class PointClass(enum.Enum):
    INTERIOR = "interior"
    SKELETON = "skeleton"
    DIRICHLET = "dirichlet"


def _as_bc(value) -> BC:
    return value if isinstance(value, BC) else BC(str(value).lower())


@dataclass(frozen=True, eq=False)
class CartesianMesh:
    """Tensor-product mesh with per-direction element widths.

    Parameters
    ----------
    widths
        Three sequences; ``widths[d][e]`` is the width of element ``e``
        along direction ``d``.
    p
        Polynomial degree.
    bc
        ``bc[d] = (low, high)`` boundary kinds.
    origin
        Coordinates of the low corner.
    """

    widths: tuple
    p: int
    bc: tuple = ((BC.DIRICHLET, BC.DIRICHLET),) * 3
    origin: tuple = (0.0, 0.0, 0.0)
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        widths = tuple(np.array(w, dtype=float).ravel() for w in self.widths)
        if len(widths) != 3:
            raise ValueError("widths must have three directions")
        for w in widths:
            if w.size < 1 or np.any(w <= 0.0):
                raise ValueError("element widths must be strictly positive")
            w.setflags(write=False)
        bc = tuple((_as_bc(lo), _as_bc(hi)) for lo, hi in self.bc)
        if len(bc) != 3:
            raise ValueError("bc must have three directions")
        for d, (lo, hi) in enumerate(bc):
            if (lo is BC.PERIODIC) != (hi is BC.PERIODIC):
                raise ValueError(f"direction {d}: periodic must be set on both faces")
            if lo is BC.PERIODIC and widths[d].size < 2:
                raise ValueError(f"direction {d}: periodic needs at least 2 elements")
        if int(self.p) < 1:
            raise ValueError("polynomial degree must be >= 1")
        object.__setattr__(self, "widths", widths)
        object.__setattr__(self, "bc", bc)
        object.__setattr__(self, "p", int(self.p))
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))

    # -- sizes ---------------------------------------------------------------
    @property
    def k(self) -> tuple:
        return tuple(w.size for w in self.widths)

    @property
    def n_elements(self) -> int:
        return int(np.prod(self.k))

    def periodic(self, d: int) -> bool:
        return self.bc[d][0] is BC.PERIODIC

    @property
    def N(self) -> tuple:
        """Number of global points per direction."""
        return tuple(
            k * self.p if self.periodic(d) else k * self.p + 1 for d, k in enumerate(self.k)
        )

    @property
    def shape(self) -> tuple:
        return self.N

    @property
    def extent(self) -> tuple:
        return tuple(float(w.sum()) for w in self.widths)

    def with_degree(self, p: int) -> "CartesianMesh":
        """Same elements and boundary conditions at another polynomial degree."""
        return CartesianMesh(self.widths, p, self.bc, self.origin)

    def zeros(self) -> np.ndarray:
        return np.zeros(self.N)

    # -- geometry ------------------------------------------------------------
    def coordinates_1d(self, d: int) -> np.ndarray:
        xi = gll_basis(self.p).nodes
        edges = self.origin[d] + np.concatenate([[0.0], np.cumsum(self.widths[d])])
        h = self.widths[d]
        x = edges[:-1, None] + 0.5 * h[:, None] * (xi[None, :-1] + 1.0)
        x = x.ravel()
        if not self.periodic(d):
            x = np.append(x, edges[-1])
        return x

    def coordinates(self) -> tuple:
        return np.meshgrid(*(self.coordinates_1d(d) for d in range(3)), indexing="ij")

    def aspect_ratios(self) -> np.ndarray:
        h = np.meshgrid(*self.widths, indexing="ij")
        stack = np.stack(h)
        return stack.max(axis=0) / stack.min(axis=0)

    # -- point classes -------------------------------------------------------
    def skeleton_1d(self, d: int) -> np.ndarray:
        return np.arange(self.N[d]) % self.p == 0

    def dirichlet_1d(self, d: int) -> np.ndarray:
        m = np.zeros(self.N[d], dtype=bool)
        if not self.periodic(d):
            m[0] = self.bc[d][0] is BC.DIRICHLET
            m[-1] = self.bc[d][1] is BC.DIRICHLET
        return m

    def _mask(self, name):
        if name not in self._cache:
            s = [self.skeleton_1d(d) for d in range(3)]
            dm = [self.dirichlet_1d(d) for d in range(3)]
            skel = s[0][:, None, None] | s[1][None, :, None] | s[2][None, None, :]
            diri = dm[0][:, None, None] | dm[1][None, :, None] | dm[2][None, None, :]
            self._cache["skeleton"] = skel
            self._cache["dirichlet"] = diri
            self._cache["free_skeleton"] = skel & ~diri
            self._cache["free"] = ~diri
            for m in ("skeleton", "dirichlet", "free_skeleton", "free"):
                self._cache[m].setflags(write=False)
        return self._cache[name]

    @property
    def skeleton_mask(self) -> np.ndarray:
        return self._mask("skeleton")

    @property
    def dirichlet_mask(self) -> np.ndarray:
        return self._mask("dirichlet")

    @property
    def free_skeleton_mask(self) -> np.ndarray:
        """Condensed unknowns: skeleton points not fixed by Dirichlet data."""
        return self._mask("free_skeleton")

    @property
    def free_mask(self) -> np.ndarray:
        return self._mask("free")

    def n_condensed(self) -> int:
        return int(self.free_skeleton_mask.sum())

    def n_free(self) -> int:
        return int(self.free_mask.sum())

    def has_dirichlet(self) -> bool:
        return any(b is BC.DIRICHLET for pair in self.bc for b in pair)

    def classify_point(self, i: Sequence[int]) -> PointClass:
        idx = []
        for d in range(3):
            j = int(i[d])
            if self.periodic(d):
                j %= self.N[d]
            elif not 0 <= j < self.N[d]:
                raise IndexError(f"point index {i} out of range")
            idx.append(j)
        if any(self.dirichlet_1d(d)[idx[d]] for d in range(3)):
            return PointClass.DIRICHLET
        if any(idx[d] % self.p == 0 for d in range(3)):
            return PointClass.SKELETON
        return PointClass.INTERIOR

    # -- element index helpers ----------------------------------------------
    def element_indices_1d(self, d: int) -> np.ndarray:
        """``(k_d, p+1)`` global indices of each element's nodes along ``d``."""
        k, p = self.k[d], self.p
        idx = np.arange(k)[:, None] * p + np.arange(p + 1)[None, :]
        return idx % self.N[d]

    def interior_blocks(self, u: np.ndarray) -> np.ndarray:
        """View of ``u`` as ``(k0, p, k1, p, k2, p)`` element blocks.

        Block ``[e0, i0, e1, i1, e2, i2]`` is the global point
        ``(e0*p + i0, e1*p + i1, e2*p + i2)``; ``i = 1..p-1`` selects element
        interiors.  The returned array is a view, so assignments write
        through.
        """
        k, p = self.k, self.p
        view = u[: k[0] * p, : k[1] * p, : k[2] * p]
        out = view.reshape(k[0], p, k[1], p, k[2], p)
        assert np.shares_memory(out, u)
        return out


def _check_counts(k, extent):
    k = tuple(int(v) for v in k)
    extent = tuple(float(v) for v in extent)
    if len(k) != 3 or any(v < 1 for v in k):
        raise ValueError("element counts must be >= 1 in each direction")
    if len(extent) != 3 or any(v <= 0.0 for v in extent):
        raise ValueError("domain extents must be positive")
    return k, extent


def make_mesh_homogeneous(k, extent, p, bc=None, origin=(0.0, 0.0, 0.0)) -> CartesianMesh:
    k, extent = _check_counts(k, extent)
    widths = tuple(np.full(k[d], extent[d] / k[d]) for d in range(3))
    return CartesianMesh(widths, p, bc or ((BC.DIRICHLET, BC.DIRICHLET),) * 3, origin)


def stretched_widths(k: int, extent: float, alpha: float, law: str = "geometric") -> np.ndarray:
    """Element widths with constant expansion factor ``alpha``.

    ``law="geometric"`` grows the widths from the low wall,
    ``h_e ~ alpha**e``, so the largest-to-smallest ratio is
    ``alpha**(k-1)``.  ``law="mirrored"`` grows from both walls toward the
    centre.
    """
    if alpha < 1.0:
        raise ValueError("expansion factor must be >= 1")
    if law == "geometric":
        w = alpha ** np.arange(k, dtype=float)
    elif law == "mirrored":
        half = alpha ** np.arange((k + 1) // 2, dtype=float)
        w = np.concatenate([half, half[: k // 2][::-1]])
    else:
        raise ValueError(f"unknown stretching law {law!r}")
    return w * (extent / w.sum())


def make_mesh_stretched(
    k, extent, p, bc=None, alpha: float = 1.0, law: str = "geometric", origin=(0.0, 0.0, 0.0)
) -> CartesianMesh:
    k, extent = _check_counts(k, extent)
    widths = tuple(stretched_widths(k[d], extent[d], alpha, law) for d in range(3))
    return CartesianMesh(widths, p, bc or ((BC.DIRICHLET, BC.DIRICHLET),) * 3, origin)


def aspect_ratio_domain(ar: float) -> tuple:
    """Box used for the anisotropic-element study."""
    return (2.0 * np.pi * ar, np.pi * np.ceil(ar / 2.0), 2.0 * np.pi)


# -- masked algebra ----------------------------------------------------------

def _check(u, v):
    if u.shape != v.shape:
        raise ValueError(f"field shape mismatch: {u.shape} vs {v.shape}")


def dot(u: np.ndarray, v: np.ndarray, mask: np.ndarray | None = None) -> float:
    _check(u, v)
    if mask is None:
        return float(np.vdot(u, v))
    return float(np.dot(u[mask], v[mask]))


def norm(u: np.ndarray, mask: np.ndarray | None = None) -> float:
    return float(np.sqrt(dot(u, u, mask)))


def axpy(a: float, x: np.ndarray, y: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """Return ``y + a*x`` on the masked points, ``y`` elsewhere."""
    _check(x, y)
    out = y.copy()
    if mask is None:
        out += a * x
    else:
        out[mask] += a * x[mask]
    return out
