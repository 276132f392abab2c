"""Experiment harness: case configuration, solver runs, block-inverse timings
and parameter sweeps, all reported as CSV rows.
"""

from __future__ import annotations

import csv
import json
import math
import os
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import yaml

from .grid import BC, CartesianMesh, aspect_ratio_domain, make_mesh_stretched
from .helmholtz import HelmholtzOperator
from .manufactured import manufactured_case
from .multigrid import SOLVERS, Level, LevelHierarchy, MgConfig, random_rhs, solve
from .schwarz import (
    MMCInverse,
    block_to_faces,
    build_star,
    face_inverse,
    faces_to_block,
    full_block_inverse,
)

SCHEMA = "starmg-bench/1"
TWO_PI = 2.0 * math.pi


class ConfigError(ValueError):
    """Invalid case configuration."""


# -- case configuration ------------------------------------------------------

@dataclass
class CaseConfig:
    """One solver run.

    ``extent`` defaults to the cube ``(0, 2 pi)^3``, or to the anisotropic
    box of ``aspect_ratio_domain(aspect)`` when ``aspect != 1``.
    """

    k: tuple = (8, 8, 8)
    p: int = 8
    lam: float = 0.0
    bc: tuple = (("dirichlet", "dirichlet"),) * 3
    extent: tuple | None = None
    alpha: float = 1.0
    law: str = "geometric"
    aspect: float = 1.0
    solver: str = "kmg"
    rhs: str = "random"
    seed: int = 1
    k_wave: float = 5.0
    tol: float = 1e-10
    max_iter: int = 1000
    p_w: int = 7

    def __post_init__(self):
        self.k = tuple(int(v) for v in self.k)
        self.bc = tuple(tuple(str(b).lower() for b in pair) for pair in self.bc)
        if self.extent is not None:
            self.extent = tuple(float(v) for v in self.extent)

    def validate(self) -> "CaseConfig":
        if len(self.k) != 3 or min(self.k) < 1:
            raise ConfigError("k needs three positive element counts")
        if self.p < 2:
            raise ConfigError("p must be >= 2")
        if self.lam < 0:
            raise ConfigError("lam must be non-negative")
        if self.solver not in SOLVERS:
            raise ConfigError(f"solver must be one of {sorted(SOLVERS)}")
        if self.rhs not in ("random", "manufactured"):
            raise ConfigError("rhs must be 'random' or 'manufactured'")
        if self.alpha < 1.0 or self.aspect < 1.0:
            raise ConfigError("alpha and aspect must be >= 1")
        if self.law not in ("geometric", "mirrored"):
            raise ConfigError("law must be 'geometric' or 'mirrored'")
        if not 0.0 < self.tol < 1.0 or self.max_iter < 1:
            raise ConfigError("tol must be in (0, 1) and max_iter >= 1")
        if self.p_w < 1 or self.p_w % 2 == 0:
            raise ConfigError("p_w must be odd")
        try:
            kinds = [BC(b) for pair in self.bc for b in pair]
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if len(kinds) != 6:
            raise ConfigError("bc needs a (low, high) pair per direction")
        try:
            self.mesh()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return self

    def domain(self) -> tuple:
        if self.extent is not None:
            return self.extent
        if self.aspect != 1.0:
            return aspect_ratio_domain(self.aspect)
        return (TWO_PI,) * 3

    def mesh(self) -> CartesianMesh:
        return make_mesh_stretched(self.k, self.domain(), self.p, self.bc, self.alpha, self.law)

    # -- serialization --------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "mesh": {
                "k": list(self.k),
                "p": self.p,
                "extent": None if self.extent is None else list(self.extent),
                "alpha": self.alpha,
                "law": self.law,
                "aspect": self.aspect,
                "bc": [list(pair) for pair in self.bc],
            },
            "problem": {
                "lam": self.lam,
                "rhs": self.rhs,
                "seed": self.seed,
                "k_wave": self.k_wave,
            },
            "solver": {
                "name": self.solver,
                "tol": self.tol,
                "max_iter": self.max_iter,
                "p_w": self.p_w,
            },
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CaseConfig":
        data = data or {}
        unknown = set(data) - {"mesh", "problem", "solver"}
        if unknown:
            raise ConfigError(f"unknown sections: {sorted(unknown)}")
        m = dict(data.get("mesh") or {})
        pr = dict(data.get("problem") or {})
        s = dict(data.get("solver") or {})
        kw = {}
        kw.update(m)
        kw.update(pr)
        if "name" in s:
            kw["solver"] = s.pop("name")
        kw.update(s)
        names = {f.name for f in fields(cls)}
        bad = set(kw) - names
        if bad:
            raise ConfigError(f"unknown keys: {sorted(bad)}")
        try:
            return cls(**kw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    @classmethod
    def from_yaml(cls, text: str) -> "CaseConfig":
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"malformed config: {exc}") from None
        if data is not None and not isinstance(data, dict):
            raise ConfigError("config must be a mapping")
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "CaseConfig":
        with open(path) as fh:
            return cls.from_yaml(fh.read())


# -- records -----------------------------------------------------------------

@dataclass
class BenchRecord:
    solver: str
    p: int
    k0: int
    k1: int
    k2: int
    alpha: float
    aspect: float
    dofs_condensed: int
    dofs_full: int
    n10: int
    rho: float
    t_setup_s: float
    t_solve_s: float
    t_per_dof_ns: float
    seed: int
    converged: bool
    failure: str = ""
    max_error: float = float("nan")


RECORD_FIELDS = [f.name for f in fields(BenchRecord)]


class CsvLog:
    """Appends rows to a CSV file, one flushed write per row.

    The first line is a ``# schema`` comment, followed by the header.
    """

    def __init__(self, path, columns):
        self.path = path
        self.columns = list(columns)
        d = os.path.dirname(os.path.abspath(path))
        os.makedirs(d, exist_ok=True)
        with open(path, "w", newline="") as fh:
            fh.write(f"# schema: {SCHEMA}\n")
            csv.writer(fh).writerow(self.columns)

    def write(self, row: dict):
        with open(self.path, "a", newline="") as fh:
            csv.DictWriter(fh, self.columns).writerow({c: row.get(c, "") for c in self.columns})
            fh.flush()
            os.fsync(fh.fileno())


def read_csv(path) -> list:
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


# -- running cases ------------------------------------------------------------

def _problem(cfg: CaseConfig, mesh: CartesianMesh):
    if cfg.rhs == "random":
        return mesh.zeros(), random_rhs(mesh, cfg.seed), None
    case = manufactured_case(cfg.k_wave, cfg.lam)
    op = HelmholtzOperator(mesh, cfg.lam)
    return case.initial_guess(mesh), case.discrete_rhs(mesh, op._mmm), case.exact(mesh)


def run_case(cfg: CaseConfig, repeats: int = 1):
    """Run one configuration; returns ``(BenchRecord, SolverReport, u)``.

    With ``repeats > 1`` the solve is repeated and the solve time is the
    mean of all runs but the first.
    """
    cfg.validate()
    mesh = cfg.mesh()
    t0 = time.perf_counter()
    mg_cfg = MgConfig(
        schedule="doubling" if cfg.solver == "kvmg" else "constant",
        tol=cfg.tol,
        max_iter=cfg.max_iter,
        p_w=cfg.p_w,
    )
    if cfg.solver == "dcg":
        hier = Level(mesh, cfg.lam, None, cfg.p_w)
    else:
        hier = LevelHierarchy(mesh, cfg.lam, mg_cfg)
    t_setup = time.perf_counter() - t0
    u0, F, exact = _problem(cfg, mesh)
    times = []
    for _ in range(max(1, repeats)):
        t = time.perf_counter()
        u, rep = solve(cfg.solver, mesh, cfg.lam, u0, F, mg_cfg, hier)
        times.append(time.perf_counter() - t)
    t_solve = float(np.mean(times[1:])) if len(times) > 1 else times[0]
    rep.seed = cfg.seed
    rep.times["setup"] = t_setup
    err = float(np.abs(u - exact).max()) if exact is not None else float("nan")
    rec = BenchRecord(
        solver=cfg.solver,
        p=cfg.p,
        k0=mesh.k[0],
        k1=mesh.k[1],
        k2=mesh.k[2],
        alpha=cfg.alpha,
        aspect=cfg.aspect,
        dofs_condensed=mesh.n_condensed(),
        dofs_full=mesh.n_free(),
        n10=rep.iterations,
        rho=rep.rho,
        t_setup_s=t_setup,
        t_solve_s=t_solve,
        t_per_dof_ns=1e9 * t_solve / mesh.n_free(),
        seed=cfg.seed,
        converged=rep.converged,
        failure=rep.failure or "",
        max_error=err,
    )
    return rec, rep, u


# -- block inverse benchmark --------------------------------------------------

INVERSE_FIELDS = [
    "variant", "p", "n_s", "n_stars", "repeats", "t_rep_s", "t_per_star_s",
    "t_per_dof_ns", "op_count", "skipped",
]


def _benchmark_star(p: int, lam: float = 0.0):
    mesh = make_mesh_stretched((2, 2, 2), (2.0, 2.0, 2.0), p)
    return build_star(mesh, lam, (1, 1, 1))


def _inverse_kernels(star, mmc):
    S, lam, lam0, c, n = star.S, star.lam, star.lam0, star.centers, star.n
    kernels = {
        "tpc": lambda faces: face_inverse(S, lam, lam0, faces, c),
        "tpf": lambda faces: block_to_faces(
            full_block_inverse(S, lam, lam0, faces_to_block(faces, c, n)), c
        ),
    }
    if mmc is not None:
        kernels["mmc"] = mmc
    return kernels


def _consistent_faces(rng, n_stars, n, centers):
    full = rng.uniform(-1.0, 1.0, size=(n_stars, n, n, n))
    return block_to_faces(full, centers)


def bench_inverse(
    p_values,
    n_stars: int = 500,
    variants=("tpc", "tpf", "mmc"),
    repeats: int = 101,
    mmc_max_p: int = 12,
    seed: int = 0,
    log=None,
    notice=print,
) -> list:
    """Time the block-inverse variants on ``n_stars`` identical stars.

    The first repetition is a warm-up; the rest are averaged.  Before
    timing, all requested variants are checked against each other on the
    same input.
    """
    for v in variants:
        if v not in ("tpc", "tpf", "mmc"):
            raise ValueError(f"unknown variant {v!r}")
    if n_stars < 1 or repeats < 1:
        raise ValueError("n_stars and repeats must be >= 1")
    rng = np.random.default_rng(seed)
    rows = []
    for p in p_values:
        star = _benchmark_star(int(p))
        n = star.n
        mmc = None
        if "mmc" in variants:
            if p <= mmc_max_p:
                mmc = MMCInverse(star)
            elif notice is not None:
                notice(f"mmc skipped at p={p} (above the cap p={mmc_max_p})")
        kernels = _inverse_kernels(star, mmc)
        faces = _consistent_faces(rng, n_stars, n, star.centers)
        gate = [f[: min(4, n_stars)] for f in faces]
        outs = {v: kernels[v](gate) for v in variants if v in kernels}
        ref = next(iter(outs.values()))
        scale = max(np.abs(f).max() for f in ref)
        for v, o in outs.items():
            diff = max(np.abs(a - b).max() for a, b in zip(o, ref)) / scale
            if diff > 1e-9:
                raise RuntimeError(f"variant {v} disagrees at p={p}: {diff:.2e}")
        counts = star.op_count()
        for v in variants:
            row = {"variant": v, "p": p, "n_s": n, "n_stars": n_stars, "repeats": repeats,
                   "op_count": counts[v]}
            if v not in kernels:
                row.update(skipped=True)
                rows.append(row)
                if log is not None:
                    log.write(row)
                continue
            fn = kernels[v]
            ts = []
            for _ in range(repeats):
                t = time.perf_counter()
                fn(faces)
                ts.append(time.perf_counter() - t)
            t_rep = float(np.mean(ts[1:])) if repeats > 1 else ts[0]
            row.update(
                t_rep_s=t_rep,
                t_per_star_s=t_rep / n_stars,
                t_per_dof_ns=1e9 * t_rep / (n_stars * n**3),
                skipped=False,
            )
            rows.append(row)
            if log is not None:
                log.write(row)
    return rows


def doubling_exponents(rows, variant: str) -> list:
    """``log2(t(2p) / t(p))`` for consecutive doublings present in ``rows``."""
    t = {int(r["p"]): float(r["t_per_star_s"]) for r in rows
         if r["variant"] == variant and not _truthy(r.get("skipped"))}
    return [math.log2(t[2 * p] / t[p]) for p in sorted(t) if 2 * p in t]


def _truthy(v):
    return v is True or str(v).lower() == "true"


# -- sweeps --------------------------------------------------------------------

SUITES = ("poly", "elements", "aspect", "stretch")
SOLVER_ORDER = ("dcg", "mg", "kmg", "kvmg")


def suite_cases(suite: str, full: bool = False, seed: int = 1) -> list:
    """Parameter grid of a suite; desk scale unless ``full``."""
    if suite == "poly":
        ps = [3, 4, 5, 6, 8, 10, 12, 16, 20, 24, 28, 32] if full else [3, 4, 6, 8, 12, 16]
        grid = [dict(p=p) for p in ps]
    elif suite == "elements":
        ks = [4, 6, 8, 12, 16, 20, 24, 28] if full else [4, 6, 8]
        grid = [dict(p=16, k=(k, k, k)) for k in ks]
    elif suite == "aspect":
        ars = [1, 2, 4, 8, 16, 32, 48] if full else [1, 4, 16, 48]
        grid = [dict(p=16 if full else 8, aspect=float(a)) for a in ars]
    elif suite == "stretch":
        ps = [4, 8, 16, 32] if full else [4, 8, 16]
        grid = [dict(p=p, alpha=a) for a in (1.0, 1.5, 2.0) for p in ps]
    else:
        raise ValueError(f"unknown suite {suite!r}; choose from {SUITES}")
    return [CaseConfig(solver=s, seed=seed, **g) for g in grid for s in SOLVER_ORDER]


def sweep(suite: str, out_dir, full: bool = False, seed: int = 1, repeats: int = 1,
          history: bool = False, progress=None) -> tuple:
    """Run a suite and write ``<out_dir>/<suite>.csv``; returns ``(path, records)``."""
    cases = suite_cases(suite, full, seed)
    path = os.path.join(out_dir, f"{suite}.csv")
    log = CsvLog(path, RECORD_FIELDS)
    records = []
    for cfg in cases:
        try:
            rec, rep, _ = run_case(cfg, repeats)
        except Exception as exc:  # recorded, the sweep continues
            rec = BenchRecord(
                solver=cfg.solver, p=cfg.p, k0=cfg.k[0], k1=cfg.k[1], k2=cfg.k[2],
                alpha=cfg.alpha, aspect=cfg.aspect, dofs_condensed=0, dofs_full=0,
                n10=-1, rho=float("nan"), t_setup_s=0.0, t_solve_s=0.0,
                t_per_dof_ns=float("nan"), seed=seed, converged=False,
                failure=f"error: {exc}",
            )
            rep = None
        log.write(asdict(rec))
        if history and rep is not None:
            write_history(out_dir, suite, cfg, rep)
        records.append(rec)
        if progress is not None:
            progress(rec)
    return path, records


def write_history(out_dir, tag, cfg: CaseConfig, rep) -> str:
    name = f"{tag}_{cfg.solver}_p{cfg.p}_k{'x'.join(map(str, cfg.k))}_a{cfg.alpha}_ar{cfg.aspect}.json"
    path = os.path.join(out_dir, name)
    with open(path, "w") as fh:
        json.dump({"config": cfg.to_dict(), "history": rep.history, "rho": rep.rho,
                   "iterations": rep.iterations}, fh, indent=1)
    return path
