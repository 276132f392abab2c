import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import schur, smoother_dense, star_full_matrix, star_mask
from starmg.basis import gll_basis
from starmg.grid import BC, CartesianMesh, make_mesh_homogeneous
from starmg.helmholtz import HelmholtzOperator
from starmg.schwarz import (
    MMCInverse,
    SchwarzSmoother,
    block_1d,
    block_to_faces,
    build_element_block,
    build_star,
    faces_to_block,
    multiplicity,
    star_weights_1d,
)

DIR = (BC.DIRICHLET, BC.DIRICHLET)
NEU = (BC.NEUMANN, BC.NEUMANN)
PER = (BC.PERIODIC, BC.PERIODIC)
MIXED = ((BC.DIRICHLET, BC.NEUMANN), PER, (BC.NEUMANN, BC.DIRICHLET))


def _block_dense(star):
    """Dense condensed block matrix from the star's padded 1D factors."""
    Ms, Ks = star.full_matrix_1d()
    Ms = [np.diag(m) for m in Ms]
    kron3 = lambda a, b, c: np.kron(np.kron(a, b), c)
    H = (
        star.lam0 * kron3(*Ms)
        + kron3(Ks[0], Ms[1], Ms[2])
        + kron3(Ms[0], Ks[1], Ms[2])
        + kron3(Ms[0], Ms[1], Ks[2])
    )
    mask = star_mask(star.n, star.centers).ravel()
    return schur(H, mask), mask


def _active_cube(star):
    return np.einsum("i,j,k->ijk", *[b.active for b in star.dirs])


def _random_faces(rng, star):
    n = star.n
    full = rng.standard_normal((n, n, n)) * star_mask(n, star.centers)
    return block_to_faces(full, star.centers)


def _roundtrip_errors(star, rng):
    """Solve S x = f for random active x with every variant; max relative error."""
    n, cen = star.n, star.centers
    Sh, mask = _block_dense(star)
    x = rng.standard_normal(mask.sum()) * _active_cube(star).ravel()[mask]
    f = np.zeros(n**3)
    f[mask] = Sh @ x
    faces = block_to_faces(f.reshape(n, n, n), cen)
    xs = np.zeros(n**3)
    xs[mask] = x
    ref = block_to_faces(xs.reshape(n, n, n), cen)
    outs = {"tpc": star.inverse_tpc(faces), "tpf": star.inverse_tpf(faces), "mmc": MMCInverse(star)(faces)}
    scale = np.abs(x).max()
    return {k: max(np.abs(a - b).max() for a, b in zip(v, ref)) / scale for k, v in outs.items()}


def test_star_1d_p2_example():
    # two elements of width 2, p = 2: assembled star matrices with ends removed
    mesh = make_mesh_homogeneous((2, 2, 2), (4.0, 4.0, 4.0), 2)
    b = block_1d(mesh, 0, 0, 2)
    np.testing.assert_allclose(b.M, [4 / 3, 2 / 3, 4 / 3], atol=1e-15)
    K = [[8 / 3, -4 / 3, 0], [-4 / 3, 7 / 3, -4 / 3], [0, -4 / 3, 8 / 3]]
    np.testing.assert_allclose(b.K, K, atol=1e-14)
    assert b.active.all()
    np.testing.assert_array_equal(b.index, [1, 2, 3])
    np.testing.assert_allclose(b.S.T @ b.K @ b.S, np.diag(b.lam), atol=1e-13)
    np.testing.assert_allclose(b.S.T @ np.diag(b.M) @ b.S, np.eye(3), atol=1e-14)


def test_block_1d_padding_at_dirichlet_wall():
    mesh = make_mesh_homogeneous((2, 2, 2), (4.0, 4.0, 4.0), 3)
    b = block_1d(mesh, 0, -1, 2)  # star at the low wall
    # ghost element nodes and the wall node are decoupled
    np.testing.assert_array_equal(b.active, [False, False, False, True, True])
    np.testing.assert_array_equal(b.M[:3], 1.0)
    np.testing.assert_array_equal(b.K[:3, :3], np.eye(3))
    assert not b.K[:3, 3:].any()
    np.testing.assert_array_equal(b.S[:3, :3], np.eye(3))


def test_block_1d_neumann_wall_node_active():
    mesh = make_mesh_homogeneous((2, 2, 2), (4.0, 4.0, 4.0), 3, bc=(NEU,) * 3)
    b = block_1d(mesh, 0, -1, 2)
    np.testing.assert_array_equal(b.active, [False, False, True, True, True])


def test_block_1d_periodic_wraps():
    mesh = CartesianMesh(([1.0, 2.0, 3.0], [1.0], [1.0]), 2, (PER, DIR, DIR))
    b = block_1d(mesh, 0, -1, 2)
    assert b.active.all()
    np.testing.assert_array_equal(b.index, [5, 0, 1])
    np.testing.assert_allclose(b.M[0], 0.5 * 3.0 * 4 / 3)


def test_star_matches_direct_assembly():
    rng = np.random.default_rng(0)
    widths = [rng.uniform(0.1, 10, 2) for _ in range(3)]
    mesh = CartesianMesh(widths, 3, (NEU,) * 3)
    star = build_star(mesh, 2.0, (1, 1, 1))
    Ms, Ks = star.full_matrix_1d()
    H = star_full_matrix(3, [tuple(w) for w in widths], 2.0)
    kron3 = lambda a, b, c: np.kron(np.kron(a, b), c)
    Md = [np.diag(m) for m in Ms]
    H2 = 2.0 * kron3(*Md) + kron3(Ks[0], Md[1], Md[2]) + kron3(Md[0], Ks[1], Md[2]) + kron3(Md[0], Md[1], Ks[2])
    np.testing.assert_allclose(H2, H, atol=1e-12 * np.abs(H).max())


@pytest.mark.parametrize("p", [2, 3, 4, 5])
@pytest.mark.parametrize("lam", [0.0, 1.0, 100.0])
def test_star_inverse_oracle(p, lam):
    rng = np.random.default_rng(100 * p + int(lam))
    for _ in range(3):
        widths = tuple(rng.uniform(0.1, 10, 3) for _ in range(3))
        mesh = CartesianMesh(widths, p, MIXED)
        for v in [(1, 1, 1), (0, 0, 0), (3, 2, 3), (0, 1, 2), (2, 0, 1)]:
            err = _roundtrip_errors(build_star(mesh, lam, v), rng)
            assert max(err.values()) < 1e-9, (v, err)


@pytest.mark.parametrize("p", [2, 3, 4, 5])
def test_star_variants_pairwise(p):
    rng = np.random.default_rng(p)
    mesh = CartesianMesh(tuple(rng.uniform(0.1, 10, 2) for _ in range(3)), p, (NEU,) * 3)
    star = build_star(mesh, 1.0, (1, 1, 1))
    faces = _random_faces(rng, star)
    a, b, c = star.inverse_tpc(faces), star.inverse_tpf(faces), MMCInverse(star)(faces)
    scale = max(np.abs(x).max() for x in a)
    for x, y, z in zip(a, b, c):
        assert np.abs(x - y).max() < 1e-9 * scale
        assert np.abs(x - z).max() < 1e-9 * scale


@pytest.mark.parametrize("p", [2, 3])
def test_element_block_oracle(p):
    rng = np.random.default_rng(p)
    widths = tuple(rng.uniform(0.1, 10, 3) for _ in range(3))
    mesh = CartesianMesh(widths, p, MIXED)
    for e in [(1, 1, 1), (0, 0, 0), (2, 2, 2), (0, 2, 1)]:
        block = build_element_block(mesh, 1.0, e)
        assert block.n == 3 * p - 1
        assert block.centers == (p - 1, 2 * p - 1)
        err = _roundtrip_errors(block, rng)
        assert max(err.values()) < 1e-9, (e, err)


def test_op_counts_and_crossover():
    def first_cheaper(builder):
        for p in range(2, 10):
            mesh = make_mesh_homogeneous((3, 3, 3), (1.0,) * 3, p)
            c = builder(mesh, 0.0, (1, 1, 1)).op_count()
            if c["tpc"] < c["tpf"]:
                return p

    mesh = make_mesh_homogeneous((3, 3, 3), (1.0,) * 3, 4)
    assert build_star(mesh, 0.0, (1, 1, 1)).op_count()["tpc"] == 37 * 7**3
    assert build_element_block(mesh, 0.0, (1, 1, 1)).op_count()["tpc"] == 73 * 11**3
    assert build_element_block(mesh, 0.0, (1, 1, 1)).op_count()["tpf"] == 12 * 11**4
    # 73 n^3 < 12 n^4 once n > 6.08; n = 3p - 1 reaches 8 at p = 3
    assert first_cheaper(build_element_block) == 3
    assert first_cheaper(build_star) == 3


def test_inverse_zero_in_zero_out():
    mesh = make_mesh_homogeneous((2, 2, 2), (1.0,) * 3, 4)
    for star in (build_star(mesh, 0.0, (1, 1, 1)), build_element_block(mesh, 0.0, (0, 1, 1))):
        zero = block_to_faces(np.zeros((star.n,) * 3), star.centers)
        for out in (star.inverse_tpc(zero), star.inverse_tpf(zero), MMCInverse(star)(zero)):
            assert all(not f.any() for f in out)


def test_padding_outputs_zero():
    rng = np.random.default_rng(1)
    mesh = make_mesh_homogeneous((2, 2, 2), (1.0,) * 3, 4)
    star = build_star(mesh, 0.0, (0, 1, 2))
    faces = [f + 1.0 for f in _random_faces(rng, star)]
    masks = star.face_masks()
    for out in (star.inverse_tpc(faces), star.inverse_tpf(faces), MMCInverse(star)(faces)):
        for f, m in zip(out, masks):
            assert not f[m == 0].any()


def test_corner_star_of_dirichlet_box_inactive():
    mesh = make_mesh_homogeneous((2, 2, 2), (1.0,) * 3, 3)
    assert not build_star(mesh, 0.0, (0, 0, 0)).is_active
    assert build_star(mesh, 0.0, (0, 1, 1)).is_active
    assert build_star(mesh, 0.0, (1, 1, 1)).is_active


def test_build_star_out_of_range():
    mesh = make_mesh_homogeneous((2, 2, 2), (1.0,) * 3, 3)
    with pytest.raises(IndexError):
        build_star(mesh, 0.0, (3, 0, 0))
    with pytest.raises(IndexError):
        build_element_block(mesh, 0.0, (0, 2, 0))


def test_multiplicity_values():
    m = multiplicity(5, [2])
    assert m[2, 2] == 3 and m[2, 0] == 2 and m[0, 2] == 2 and m[0, 0] == 1
    m2 = multiplicity(8, [2, 5])
    assert m2[2, 5] == 3 and m2[5, 5] == 3 and m2[2, 0] == 2 and m2[0, 7] == 1


@settings(max_examples=30, deadline=None)
@given(p=st.integers(2, 6), two=st.booleans(), seed=st.integers(0, 10**6))
def test_multiplicity_roundtrip(p, two, seed):
    n = 3 * p - 1 if two else 2 * p - 1
    centers = (p - 1, 2 * p - 1) if two else (p - 1,)
    rng = np.random.default_rng(seed)
    full = rng.standard_normal((n, n, n)) * star_mask(n, centers)
    back = faces_to_block(block_to_faces(full, centers), centers, n)
    np.testing.assert_allclose(back, full, rtol=1e-15, atol=0)


def test_star_weights_1d():
    p = 4
    w = star_weights_1d(p, 7)
    assert w.size == 2 * p - 1
    assert w[p - 1] == 1.0
    np.testing.assert_allclose(w, w[::-1], atol=1e-15)
    # the left element's nodes and the right element's mirrored nodes sum to 1
    xi = gll_basis(p).nodes
    from starmg.basis import weight_poly
    np.testing.assert_allclose(w[:p - 1], weight_poly(7, 0.5 * (1 - xi[1:p])), atol=1e-15)
    assert np.all((w >= 0) & (w <= 1))


@pytest.mark.parametrize("p", [2, 3, 4])
@pytest.mark.parametrize(
    "bc,uniform",
    [((DIR,) * 3, True), ((DIR,) * 3, False), (MIXED, True), (MIXED, False), ((PER,) * 3, True)],
    ids=["dir-uniform", "dir-random", "mixed-uniform", "mixed-random", "per-uniform"],
)
def test_smoother_matches_dense(p, bc, uniform):
    rng = np.random.default_rng(p)
    k = (3, 2, 3)
    if uniform:
        mesh = make_mesh_homogeneous(k, (1.0, 1.0, 1.0), p, bc=bc)
    else:
        mesh = CartesianMesh(tuple(rng.uniform(0.3, 3.0, kk) for kk in k), p, bc)
    lam = 0.5
    r = rng.standard_normal(mesh.N) * mesh.free_skeleton_mask
    ref = smoother_dense(mesh, lam, r)
    out = SchwarzSmoother(mesh, lam).apply(r)
    np.testing.assert_allclose(out, ref, atol=1e-11 * np.abs(ref).max())


def test_smoother_chunking_invariant():
    rng = np.random.default_rng(3)
    mesh = make_mesh_homogeneous((3, 3, 3), (1.0,) * 3, 4)
    r = rng.standard_normal(mesh.N) * mesh.free_skeleton_mask
    a = SchwarzSmoother(mesh, 0.0).apply(r)
    b = SchwarzSmoother(mesh, 0.0, chunk_size=5).apply(r)
    np.testing.assert_allclose(a, b, rtol=1e-14, atol=1e-14)


@pytest.mark.parametrize("bc", [(DIR,) * 3, MIXED, (PER,) * 3, (NEU,) * 3], ids=["dir", "mixed", "per", "neu"])
@pytest.mark.parametrize("p_w", [1, 3, 7])
def test_smoother_partition_of_unity(bc, p_w):
    rng = np.random.default_rng(0)
    mesh = CartesianMesh(tuple(rng.uniform(0.5, 2.0, 3) for _ in range(3)), 5, bc)
    W = SchwarzSmoother(mesh, 0.0, p_w=p_w).weight_field()
    free = mesh.free_skeleton_mask
    np.testing.assert_allclose(W[free], 1.0, atol=1e-12)
    assert not W[~mesh.skeleton_mask].any()


def test_lone_interior_star_exact():
    # 2^3 Dirichlet box: the centre star inverse solves its own block exactly
    rng = np.random.default_rng(5)
    mesh = make_mesh_homogeneous((2, 2, 2), (2.0, 2.0, 2.0), 4)
    star = build_star(mesh, 0.0, (1, 1, 1))
    op = HelmholtzOperator(mesh, 0.0)
    n, c = star.n, star.centers[0]
    x = np.zeros(mesh.N)
    planes = star_mask(n, star.centers)
    x[1:-1, 1:-1, 1:-1] = rng.standard_normal((n, n, n)) * planes
    r = op.condensed_apply(x)
    # restriction of the global residual to the star equals the block residual
    faces = block_to_faces(r[1:-1, 1:-1, 1:-1], star.centers)
    got = star.inverse_tpc(faces)
    want = block_to_faces(x[1:-1, 1:-1, 1:-1], star.centers)
    for g, w in zip(got, want):
        np.testing.assert_allclose(g, w, atol=1e-10 * np.abs(x).max())
    assert c == 3


def test_smoother_zero_in_zero_out():
    mesh = make_mesh_homogeneous((3, 3, 3), (1.0,) * 3, 3)
    assert not SchwarzSmoother(mesh, 1.0).apply(mesh.zeros()).any()


def test_smoother_rejects_p1():
    with pytest.raises(ValueError):
        SchwarzSmoother(make_mesh_homogeneous((2, 2, 2), (1.0,) * 3, 1), 0.0)


def test_smoother_output_zero_off_free_skeleton():
    rng = np.random.default_rng(2)
    mesh = make_mesh_homogeneous((3, 3, 3), (1.0,) * 3, 4)
    out = SchwarzSmoother(mesh, 0.0).apply(rng.standard_normal(mesh.N) * mesh.free_skeleton_mask)
    assert not out[~mesh.free_skeleton_mask].any()


def test_smoother_iteration_monotone():
    # fixed-point iteration without relaxation, homogeneous 4^3 box, p = 8
    mesh = make_mesh_homogeneous((4, 4, 4), (2 * np.pi,) * 3, 8)
    op = HelmholtzOperator(mesh, 0.0)
    sm = SchwarzSmoother(mesh, 0.0)
    free = mesh.free_skeleton_mask
    F = np.random.default_rng(1).uniform(-1, 1, mesh.N) * free
    u = mesh.zeros()
    norms = []
    for _ in range(12):
        r = (F - op.condensed_apply(u)) * free
        norms.append(np.linalg.norm(r))
        u = u + sm.apply(r)
    assert all(b < a for a, b in zip(norms[3:], norms[4:])), norms
    assert norms[-1] < 1e-2 * norms[0]
