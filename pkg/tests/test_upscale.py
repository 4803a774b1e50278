import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import identity, random_spd
from metric_upscaling.errors import EmptySubmesh, UnadaptedMesh
from metric_upscaling.fem import assemble_stiffness, solve_dirichlet
from metric_upscaling.harmonic import HarmonicMap, compute_harmonic_coordinates
from metric_upscaling.media import CoefficientField, MediumSpec, generate
from metric_upscaling.mesh import TriMesh, build_disk_mesh, build_square_hierarchy
from metric_upscaling.upscale import (METHODS, build_fvm_scheme, build_lfem_scheme,
                                      build_scheme, interpolate_Ih, interpolate_Jh,
                                      jump_rates, locate_prolongation, make_context,
                                      mbfem_matrices, sandwich_check, stability_constants,
                                      standard_coarse_fem, upscale_operator,
                                      xi_element_matrices)


@pytest.fixture(scope="module")
def identity_models(disk4):
    ctx = make_context(disk4, identity(disk4[4]), 1.0, coarse_level=2)
    return ctx, {m: build_scheme(m, ctx) for m in METHODS}


@pytest.fixture(scope="module")
def trig_models(trig5):
    hier, a = trig5
    ctx = make_context(hier, a, 1.0, coarse_level=2)
    return ctx, {m: build_scheme(m, ctx) for m in METHODS}


@pytest.mark.parametrize("method", METHODS)
def test_identity_medium_gives_standard_fem(identity_models, method):
    ctx, models = identity_models
    ref = standard_coarse_fem(ctx.coarse, ctx.coarse_hat_load, tol=1e-12)
    got = models[method].coarse_values
    assert np.abs(got - ref).max() <= 10 * 1e-10 * np.abs(ref).max()


def test_identity_medium_fine_solution_is_interpolant(identity_models):
    ctx, models = identity_models
    u = models["FEM_psi"].fine_solution
    lifted = interpolate_Ih(ctx.coarse, models["FEM_psi"].coarse_values, ctx.fine.nodes)
    assert np.abs(u - lifted).max() < 1e-12


def test_psi_system_spd(trig_models):
    _, models = trig_models
    A = models["FEM_psi"].system.reduced().toarray()
    np.linalg.cholesky(A)
    assert np.abs(A - A.T).max() <= 1e-13 * np.abs(A).max()


def test_mbfem_per_K_rebuild(trig_models):
    ctx, models = trig_models
    m = models["MBFEM"]
    rebuilt = np.array([m.avg_flux[k] @ np.linalg.inv(m.gradF[k]) for k in range(len(m.gradF))])
    np.testing.assert_allclose(m.per_K, rebuilt, rtol=1e-12, atol=1e-12 * np.abs(rebuilt).max())


def test_xi_per_K_symmetric_spd(trig_models):
    _, models = trig_models
    M = models["FEM_xi"].per_K
    np.testing.assert_allclose(M, np.swapaxes(M, 1, 2), atol=1e-12 * np.abs(M).max())
    assert np.all(np.linalg.eigvalsh(M) > 0)


def test_xi_element_single_triangle():
    # F maps the unit right triangle to a sheared image; constant sigma
    G = np.array([[2.0, 0.5], [0.0, 1.0]])  # columns are grad F1, grad F2
    sigma = np.array([[3.0, 1.0], [1.0, 2.0]])
    Ginv = np.array([[0.5, -0.25], [0.0, 1.0]])
    expected = Ginv.T @ sigma @ Ginv
    np.testing.assert_allclose(xi_element_matrices(G[None], sigma[None])[0], expected,
                               atol=1e-15)


def test_fvm_conservation_and_antisymmetry(trig_models):
    _, models = trig_models
    gamma = jump_rates(models["FVM"])
    scale = abs(gamma).max()
    assert np.abs(gamma @ np.ones(gamma.shape[1])).max() <= 1e-10 * scale
    # each segment flux enters row i with one sign and row j with the other
    assert np.abs(np.ones(gamma.shape[0]) @ gamma).max() <= 1e-10 * scale


def test_fvm_square_identity_matches_oracle():
    hier = build_square_hierarchy(5)
    ctx = make_context(hier, identity(hier[5]), 1.0, coarse_level=3)
    model = build_fvm_scheme(context=ctx)
    coarse = hier[3]
    # oracle: two-point fluxes with the cotangent weights of the P1 Laplacian
    # (equal to the barycentric-dual fluxes) and control-volume areas
    n = coarse.n_nodes
    A = np.zeros((n, n))
    vol = np.zeros(n)
    for tri in coarse.triangles:
        p = coarse.nodes[tri]
        for k in range(3):
            i, j, o = tri[(k + 1) % 3], tri[(k + 2) % 3], tri[k]
            u = coarse.nodes[i] - coarse.nodes[o]
            v = coarse.nodes[j] - coarse.nodes[o]
            w = 0.5 * (u @ v) / abs(u[0] * v[1] - u[1] * v[0])
            A[i, j] -= w
            A[j, i] -= w
            A[i, i] += w
            A[j, j] += w
        e1, e2 = p[1] - p[0], p[2] - p[0]
        vol[tri] += 0.5 * abs(e1[0] * e2[1] - e1[1] * e2[0]) / 3
    inner = coarse.interior
    ref = np.zeros(n)
    ref[inner] = np.linalg.solve(A[np.ix_(inner, inner)], vol[inner])
    np.testing.assert_allclose(model.load[inner], vol[inner], rtol=1e-12)
    assert np.abs(model.coarse_values - ref).max() <= 1e-9 * np.abs(ref).max()


def test_mbfem_equals_xi_for_constant_anisotropic_medium(disk4):
    A = np.array([[2.0, 0.7], [0.7, 1.0]])
    a = CoefficientField(np.broadcast_to(A, (disk4[4].n_triangles, 2, 2)).copy())
    ctx = make_context(disk4, a, 1.0, coarse_level=2)
    mb = build_scheme("MBFEM", ctx)
    xi = build_scheme("FEM_xi", ctx)
    np.testing.assert_allclose(mb.per_K, xi.per_K, atol=1e-9)
    assert np.abs(mb.coarse_values - xi.coarse_values).max() <= 10 * 1e-10 * 10


def test_unadapted_mesh_detected(disk4):
    mesh = disk4[4]
    F = mesh.nodes.copy()
    F[0] = [0.9, 0.0]  # drag the centre far enough to flip coarse images
    hm = HarmonicMap.from_nodal(mesh, F)
    ctx = make_context(disk4, identity(mesh), 1.0, coarse_level=1, hmap=hm)
    with pytest.raises(UnadaptedMesh):
        build_scheme("FEM_xi", ctx)


def test_lfem_empty_submesh(disk4):
    ctx = make_context(disk4, identity(disk4[4]), 1.0, coarse_level=3)
    with pytest.raises(EmptySubmesh):
        build_lfem_scheme(context=ctx)


def test_psi_prolongation_partition_of_unity(trig_models):
    ctx, _ = trig_models
    open_coarse = TriMesh(ctx.coarse.nodes, ctx.coarse.triangles, boundary=np.zeros(0, int))
    P = locate_prolongation(open_coarse, ctx.hmap.F_nodal, tol=1e-8)
    np.testing.assert_allclose(np.asarray(P.sum(axis=1)).ravel(), 1.0, atol=1e-12)


def test_Ih_linear_delta_and_oracle(disk4):
    coarse, fine = disk4[2], disk4[4]
    lin = coarse.nodes @ np.array([1.5, -2.0]) + 0.25
    pts = fine.nodes
    np.testing.assert_allclose(interpolate_Ih(coarse, lin, pts), pts @ [1.5, -2.0] + 0.25,
                               atol=1e-12)
    delta = np.zeros(coarse.n_nodes)
    delta[5] = 1.0
    hat = interpolate_Ih(coarse, delta, coarse.nodes)
    np.testing.assert_array_equal(hat, delta)
    rng = np.random.default_rng(0)
    vals = rng.standard_normal(coarse.n_nodes)
    # oracle: brute-force search of the containing triangle
    got = interpolate_Ih(coarse, vals, pts[:200])
    for p, v in zip(pts[:200], got):
        for tri in coarse.triangles:
            M = np.vstack([coarse.nodes[tri].T, np.ones(3)])
            lam = np.linalg.solve(M, [p[0], p[1], 1.0])
            if lam.min() >= -1e-12:
                assert abs(lam @ vals[tri] - v) < 1e-12
                break


def test_Jh_identity_and_F_linear(trig_models, disk4):
    ctx, _ = trig_models
    coarse = ctx.coarse
    vals = np.random.default_rng(1).standard_normal(coarse.n_nodes)
    pts = disk4[4].nodes
    ident = interpolate_Jh(disk4[2], pts, disk4[2].nodes, vals)
    np.testing.assert_allclose(ident.values, interpolate_Ih(disk4[2], vals, pts), atol=1e-12)
    F = ctx.hmap.F_nodal
    target = 0.7 * F[:, 0] - 1.3 * F[:, 1] + 0.2
    lift = interpolate_Jh(coarse, F, ctx.F_coarse, target[:coarse.n_nodes])
    assert lift.fallbacks == 0
    assert np.abs(lift.values - target).max() < 1e-9


def test_stability_positive(identity_models, trig_models):
    for _, models in (identity_models, trig_models):
        for m in METHODS:
            rep = stability_constants(models[m])
            S = rep.S_v if m == "FVM" else rep.S_m
            assert S > 0 and rep.condition_number >= 1


def test_stability_percolation_mbfem():
    hier = build_disk_mesh(5, project_levels=2)
    a = generate(hier[5], MediumSpec("percolation", seed=0))
    ctx = make_context(hier, a, 1.0, coarse_level=2)
    rep = stability_constants(build_scheme("MBFEM", ctx))
    assert np.isfinite(rep.S_m) and rep.S_m > 0


@pytest.mark.parametrize("level", [1, 2, 3])
def test_sandwich(disk4, level):
    ratios, lo, hi = sandwich_check(disk4[level], n_samples=100, seed=level)
    assert np.all(ratios >= lo) and np.all(ratios <= hi)


def test_upscale_identity_level(trig5):
    hier, a = trig5
    np.testing.assert_array_equal(upscale_operator(a, hier, 5, 5), a.per_triangle)


@given(st.integers(0, 2 ** 31))
def test_upscale_constant_invariant(seed):
    hier = _small_hier()
    A = random_spd(np.random.default_rng(seed), 1)[0]
    B = np.broadcast_to(A, (hier[3].n_triangles, 2, 2)).copy()
    out = upscale_operator(B, hier, 1, 3)
    np.testing.assert_allclose(out, np.broadcast_to(A, out.shape), atol=1e-10 * np.abs(A).max())


def _small_hier():
    if not hasattr(_small_hier, "h"):
        _small_hier.h = build_disk_mesh(3, project_levels=1)
    return _small_hier.h


def test_upscale_semigroup():
    hier = build_disk_mesh(5, project_levels=1)
    a = generate(hier[5], MediumSpec("trigonometric"))
    direct = upscale_operator(a, hier, 1, 5)
    staged = upscale_operator(upscale_operator(a, hier, 3, 5), hier, 1, 3)
    scale = np.abs(a.per_triangle).max()
    assert np.abs(direct - staged).max() <= 1e-6 * scale


def test_laminar_homogenization():
    hier = build_square_hierarchy(7)
    fine = hier[7]
    n = 2 ** 7
    col = np.floor(fine.barycenters[:, 0] * n).astype(int)
    vals = np.where(col % 2 == 0, 1.0, 9.0)  # period of two fine columns
    a = CoefficientField.scalar(vals)
    ctx = make_context(hier, a, 1.0, coarse_level=2)
    harmonic = 2 / (1 + 1 / 9)
    arithmetic = 5.0
    flux = ctx.avg_flux
    # coarse triangles away from the top and bottom sides
    y = hier[2].barycenters[:, 1]
    inner = (y > 0.25) & (y < 0.75)
    np.testing.assert_allclose(flux[inner, 0, 0], harmonic, rtol=0.05)
    np.testing.assert_allclose(flux[inner, 1, 1], arithmetic, rtol=0.05)
    assert np.abs(flux[inner, 0, 1]).max() < 0.05 * harmonic
    M = mbfem_matrices(ctx.avg_flux, ctx.gradF_coarse)
    np.testing.assert_allclose(M[inner, 0, 0], harmonic, rtol=0.05)


def test_coarse_model_json(trig_models, tmp_path):
    import scipy.io, io
    _, models = trig_models
    m = models["MBFEM"]
    m.to_json(tmp_path / "m.json")
    data = json.loads((tmp_path / "m.json").read_text())
    assert data["method"] == "MBFEM"
    np.testing.assert_array_equal(np.array(data["per_K"]), m.per_K)
    A = scipy.io.mmread(io.StringIO(data["system_matrix_market"]))
    np.testing.assert_array_equal(A.toarray(), m.system.full.toarray())


def test_solution_shapes(trig_models):
    ctx, models = trig_models
    for m in METHODS:
        assert models[m].coarse_values.shape == (ctx.coarse.n_nodes,)
        np.testing.assert_array_equal(models[m].coarse_values[ctx.coarse.boundary], 0.0)
