"""p-multigrid for the statically condensed Helmholtz system.

Levels share the element mesh and differ in polynomial degree.  Grid
transfer is the tensor-product Lagrange interpolation restricted to the
skeleton; restriction is its exact transpose.  The smoother on every level
except the coarsest is the weighted vertex-star Schwarz method; the coarse
level is solved by diagonally preconditioned CG.

Solvers
-------
``solve_mg``
    Fixed-point iteration with V-cycles.
``solve_kmg``
    Inexact preconditioned CG with one V-cycle as preconditioner.
``solve_dcg``
    CG preconditioned with the inverse condensed diagonal.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .basis import gll_basis, interpolation_matrix
from .grid import BC, CartesianMesh
from .helmholtz import HelmholtzOperator, _along
from .schwarz import SchwarzSmoother

SCHEDULES = ("constant", "doubling")


class ConvergenceError(RuntimeError):
    """Raised when an inner solve exceeds its iteration budget."""


@dataclass
class MgConfig:
    """Multigrid and stopping parameters.

    ``schedule="constant"`` uses one pre- and one post-smoothing step on
    every level; ``"doubling"`` uses ``2**(L - l)`` on level ``l``.
    """

    schedule: str = "constant"
    tol: float = 1e-10
    max_iter: int = 1000
    coarse_tol: float = 1e-8
    coarse_max_iter: int = 100000
    p_w: int = 7
    absolute: bool = False

    def __post_init__(self):
        if self.schedule not in SCHEDULES:
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if not 0.0 < self.coarse_tol < 1.0:
            raise ValueError(f"coarse_tol must lie in (0, 1), got {self.coarse_tol}")
        if not (0.0 < self.tol and (self.absolute or self.tol < 1.0)):
            raise ValueError(f"tol must lie in (0, 1), got {self.tol}")
        if self.max_iter < 1 or self.coarse_max_iter < 1:
            raise ValueError("iteration limits must be >= 1")

    def smoothing_steps(self, level: int, n_levels: int) -> int:
        L = n_levels - 1
        return 1 if self.schedule == "constant" else 2 ** (L - level)


@dataclass
class SolverReport:
    solver: str
    iterations: int = 0
    history: list = field(default_factory=list)
    rho: float = float("nan")
    converged: bool = False
    failure: str | None = None
    times: dict = field(default_factory=dict)
    n_condensed: int = 0
    n_full: int = 0
    degrees: tuple = ()
    seed: int | None = None

    def finalize(self):
        h = self.history
        n = self.iterations
        if n > 0 and h[0] > 0.0:
            self.rho = (h[n] / h[0]) ** (1.0 / n)
        elif h and h[0] == 0.0:
            self.rho = 0.0
        return self


def level_degrees(p: int, p0: int = 2) -> tuple:
    """Degrees ``p0 * 2**l`` for ``l < L`` followed by ``p``."""
    p = int(p)
    if p < p0:
        raise ValueError(f"multigrid needs p >= {p0}, got {p}")
    L = math.ceil(math.log2(p / p0)) if p > p0 else 0
    return tuple(p0 * 2**l for l in range(L)) + (p,)


def interpolation_1d(coarse: CartesianMesh, fine: CartesianMesh, d: int) -> np.ndarray:
    """Global ``(N_fine, N_coarse)`` element-wise interpolation along ``d``."""
    J = interpolation_matrix(gll_basis(coarse.p), gll_basis(fine.p)).J
    G = np.zeros((fine.N[d], coarse.N[d]))
    ci = coarse.element_indices_1d(d)
    fi = fine.element_indices_1d(d)
    for e in range(coarse.k[d]):
        # endpoint rows of J are unit vectors, so neighbours agree on shared rows
        G[np.ix_(fi[e], ci[e])] = J
    return G


def is_singular(mesh: CartesianMesh, lam: float) -> bool:
    return lam == 0.0 and not mesh.has_dirichlet()


class Level:
    """Operator, smoother and transfer data for one polynomial degree."""

    def __init__(self, mesh: CartesianMesh, lam: float, coarse: "Level | None", p_w: int):
        self.mesh = mesh
        self.op = HelmholtzOperator(mesh, lam)
        self.free = mesh.free_skeleton_mask
        self.singular = is_singular(mesh, lam)
        if coarse is None:
            self.smoother = None
            self.G = None
            d = self.op.condensed_diagonal()
            self.dinv = np.where(self.free, 1.0 / np.where(self.free, d, 1.0), 0.0)
        else:
            self.smoother = SchwarzSmoother(mesh, lam, p_w)
            self.G = [interpolation_1d(coarse.mesh, mesh, d) for d in range(3)]

    def project(self, r: np.ndarray) -> np.ndarray:
        """Remove the constant nullspace component on singular problems."""
        if self.singular:
            r = r.copy()
            r[self.free] -= r[self.free].mean()
        return r

    def residual(self, F: np.ndarray, u: np.ndarray) -> np.ndarray:
        r = F - self.op.condensed_apply(u, check=False)
        r[~self.free] = 0.0
        return self.project(r)

    def smooth(self, u: np.ndarray, F: np.ndarray, steps: int) -> np.ndarray:
        for _ in range(steps):
            u = u + self.smoother(self.residual(F, u))
        return u


class LevelHierarchy:
    """Levels ``0..L`` of degrees ``level_degrees(p)`` on one element mesh."""

    def __init__(self, mesh: CartesianMesh, lam: float, config: MgConfig | None = None):
        self.config = config or MgConfig()
        self.lam = float(lam)
        self.degrees = level_degrees(mesh.p)
        self.levels = []
        coarse = None
        for p in self.degrees:
            coarse = Level(mesh.with_degree(p), lam, coarse, self.config.p_w)
            self.levels.append(coarse)

    @property
    def L(self) -> int:
        return len(self.levels) - 1

    @property
    def top(self) -> Level:
        return self.levels[-1]

    def _check(self, level):
        if not 1 <= level <= self.L:
            raise IndexError(f"transfer level must be in [1, {self.L}], got {level}")

    def prolongate(self, level: int, uc: np.ndarray) -> np.ndarray:
        """Interpolate a level ``level-1`` skeleton field to level ``level``."""
        self._check(level)
        fine = self.levels[level]
        u = uc * self.levels[level - 1].free
        for d in range(3):
            u = _along(fine.G[d], u, d)
        u[~fine.free] = 0.0
        return u

    def restrict(self, level: int, uf: np.ndarray) -> np.ndarray:
        """Transpose of ``prolongate(level, .)``."""
        self._check(level)
        fine = self.levels[level]
        r = uf * fine.free
        for d in range(3):
            r = _along(fine.G[d].T, r, d)
        r[~self.levels[level - 1].free] = 0.0
        return r

    def coarse_solve(self, F: np.ndarray) -> np.ndarray:
        lvl = self.levels[0]
        cfg = self.config
        u, hist, ok = pcg(
            lvl.op.condensed_apply,
            lambda r: lvl.dinv * r,
            lvl.project(F * lvl.free),
            lvl.free,
            cfg.coarse_tol,
            cfg.coarse_max_iter,
            project=lvl.project,
        )
        if not ok:
            raise ConvergenceError(
                f"coarse CG did not converge in {cfg.coarse_max_iter} iterations"
            )
        return u

    def v_cycle(self, u: np.ndarray, F: np.ndarray) -> np.ndarray:
        """One V-cycle for ``H^ u = F`` on the top level; returns the new iterate."""
        L = self.L
        n = L + 1
        us = [None] * n
        Fs = [None] * n
        us[L] = u
        Fs[L] = F
        for l in range(L, 0, -1):
            lvl = self.levels[l]
            if l != L:
                us[l] = lvl.mesh.zeros()
            us[l] = lvl.smooth(us[l], Fs[l], self.config.smoothing_steps(l, n))
            Fs[l - 1] = self.restrict(l, lvl.residual(Fs[l], us[l]))
        us[0] = self.coarse_solve(Fs[0])
        for l in range(1, L + 1):
            lvl = self.levels[l]
            us[l] = us[l] + self.prolongate(l, us[l - 1])
            us[l] = lvl.smooth(us[l], Fs[l], self.config.smoothing_steps(l, n))
        return us[L]


def build_hierarchy(mesh: CartesianMesh, lam: float, config: MgConfig | None = None) -> LevelHierarchy:
    return LevelHierarchy(mesh, lam, config)


def v_cycle(hierarchy: LevelHierarchy, u: np.ndarray, F: np.ndarray) -> np.ndarray:
    return hierarchy.v_cycle(u, F)


def pcg(apply, precond, b, mask, tol, max_iter, x0=None, project=None, history=None):
    """Preconditioned CG on the masked points; stops at ``||r|| <= tol*||r0||``.

    Returns ``(x, history, converged)``.
    """
    project = project or (lambda v: v)
    x = np.zeros_like(b) if x0 is None else x0.copy()
    r = b - apply(x) if x0 is not None else b.copy()
    r[~mask] = 0.0
    r = project(r)
    hist = [] if history is None else history
    rn = float(np.sqrt(np.vdot(r, r)))
    hist.append(rn)
    target = tol * rn
    if rn == 0.0:
        return x, hist, True
    z = project(precond(r))
    p = z.copy()
    gamma = float(np.vdot(z, r))
    for _ in range(max_iter):
        q = apply(p)
        q[~mask] = 0.0
        alpha = gamma / float(np.vdot(p, q))
        x += alpha * p
        r -= alpha * q
        rn = float(np.sqrt(np.vdot(r, r)))
        hist.append(rn)
        if rn <= target:
            return x, hist, True
        z = project(precond(r))
        gamma_new = float(np.vdot(z, r))
        p = z + (gamma_new / gamma) * p
        gamma = gamma_new
    return x, hist, False


def random_rhs(mesh: CartesianMesh, seed: int = 1) -> np.ndarray:
    """Uniform ``[-1, 1]`` values at the free points, zero on Dirichlet points."""
    rng = np.random.default_rng(seed)
    F = rng.uniform(-1.0, 1.0, size=mesh.N)
    F[mesh.dirichlet_mask] = 0.0
    return F


# -- solver drivers -----------------------------------------------------------

def _prepare(name, mesh, lam, u, F, config, hierarchy, need_mg=True):
    config = config or MgConfig()
    if u.shape != mesh.N or F.shape != mesh.N:
        raise ValueError("u and F must be full fields on the mesh")
    report = SolverReport(
        solver=name, n_condensed=mesh.n_condensed(), n_full=mesh.n_free()
    )
    t0 = time.perf_counter()
    if need_mg:
        if hierarchy is None:
            hierarchy = LevelHierarchy(mesh, lam, config)
        top = hierarchy.top
        report.degrees = hierarchy.degrees
    else:
        top = hierarchy or Level(mesh, lam, None, config.p_w)
    t1 = time.perf_counter()
    report.times["setup"] = t1 - t0
    F_hat = top.op.condense_rhs(F)
    F_hat = top.project(F_hat * top.free)
    u_hat = u.copy()
    u_hat[~mesh.skeleton_mask] = 0.0
    report.times["condense"] = time.perf_counter() - t1
    return config, report, hierarchy, top, u_hat, F_hat


def _finish(report, top, u_hat, F, t_start):
    t = time.perf_counter()
    report.times["cycles"] = t - t_start
    u = top.op.recover_interior(u_hat, F)
    report.times["recover"] = time.perf_counter() - t
    report.finalize()
    return u, report


def _converged(rn, r0, config):
    return rn <= (config.tol if config.absolute else config.tol * r0)


def solve_mg(mesh, lam, u, F, config: MgConfig | None = None, hierarchy=None):
    """V-cycle fixed-point iteration; returns ``(u, SolverReport)``."""
    config, rep, hier, top, u_hat, F_hat = _prepare("mg", mesh, lam, u, F, config, hierarchy)
    t = time.perf_counter()
    r = top.residual(F_hat, u_hat)
    r0 = float(np.linalg.norm(r))
    rep.history.append(r0)
    try:
        while not _converged(rep.history[-1], r0, config) and rep.iterations < config.max_iter:
            u_hat = hier.v_cycle(u_hat, F_hat)
            rep.iterations += 1
            rep.history.append(float(np.linalg.norm(top.residual(F_hat, u_hat))))
        rep.converged = _converged(rep.history[-1], r0, config)
        if not rep.converged:
            rep.failure = "max_iter"
    except ConvergenceError as exc:
        rep.failure = str(exc)
    return _finish(rep, top, u_hat, F, t)


def solve_kmg(mesh, lam, u, F, config: MgConfig | None = None, hierarchy=None):
    """Inexact preconditioned CG with a V-cycle preconditioner."""
    config, rep, hier, top, u_hat, F_hat = _prepare("kmg", mesh, lam, u, F, config, hierarchy)
    if config.schedule == "doubling":
        rep.solver = "kvmg"
    t = time.perf_counter()
    r = top.residual(F_hat, u_hat)
    s = r.copy()
    p = np.zeros_like(r)
    delta = 1.0
    r0 = float(np.linalg.norm(r))
    rep.history.append(r0)
    zero = mesh.zeros()
    try:
        while not _converged(rep.history[-1], r0, config) and rep.iterations < config.max_iter:
            z = top.project(hier.v_cycle(zero, r))
            gamma = float(np.vdot(z, r))
            gamma0 = float(np.vdot(z, s))
            beta = (gamma - gamma0) / delta
            delta = gamma
            p = beta * p + z
            q = top.op.condensed_apply(p, check=False)
            q[~top.free] = 0.0
            qp = float(np.vdot(q, p))
            if qp <= 0.0:
                rep.failure = "breakdown"
                break
            alpha = gamma / qp
            s = r.copy()
            u_hat += alpha * p
            r = r - alpha * q
            rep.iterations += 1
            rep.history.append(float(np.linalg.norm(r)))
        rep.converged = _converged(rep.history[-1], r0, config)
        if not rep.converged and rep.failure is None:
            rep.failure = "max_iter"
    except ConvergenceError as exc:
        rep.failure = str(exc)
    return _finish(rep, top, u_hat, F, t)


def solve_kvmg(mesh, lam, u, F, config: MgConfig | None = None, hierarchy=None):
    """``solve_kmg`` with the doubling smoothing schedule."""
    config = config or MgConfig()
    cfg = MgConfig(**{**config.__dict__, "schedule": "doubling"})
    if hierarchy is not None and hierarchy.config.schedule != "doubling":
        raise ValueError("hierarchy was built with a different schedule")
    return solve_kmg(mesh, lam, u, F, cfg, hierarchy)


def solve_dcg(mesh, lam, u, F, config: MgConfig | None = None, hierarchy=None):
    """CG preconditioned with the inverse condensed diagonal."""
    config, rep, _, top, u_hat, F_hat = _prepare(
        "dcg", mesh, lam, u, F, config, hierarchy, need_mg=False
    )
    t = time.perf_counter()
    # work on the correction so the Dirichlet lift stays fixed
    r = top.residual(F_hat, u_hat)
    tol = config.tol / max(float(np.linalg.norm(r)), 1e-300) if config.absolute else config.tol
    du, hist, ok = pcg(
        lambda v: top.op.condensed_apply(v, check=False),
        lambda v: top.dinv * v,
        r,
        top.free,
        min(tol, 1.0),
        config.max_iter,
        project=top.project,
        history=rep.history,
    )
    u_hat += du
    rep.iterations = len(hist) - 1
    rep.converged = ok
    if not ok:
        rep.failure = "max_iter"
    return _finish(rep, top, u_hat, F, t)


SOLVERS = {"dcg": solve_dcg, "mg": solve_mg, "kmg": solve_kmg, "kvmg": solve_kvmg}


def solve(name: str, mesh, lam, u, F, config: MgConfig | None = None, hierarchy=None):
    try:
        fn = SOLVERS[name]
    except KeyError:
        raise ValueError(f"unknown solver {name!r}") from None
    return fn(mesh, lam, u, F, config, hierarchy)
