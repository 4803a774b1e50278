"""Coarse schemes built from a-harmonic coordinates.

Five schemes map a fine-scale problem ``-div(a grad u) = g`` (``u = 0`` on
the boundary) to a system on the nodes of a coarse mesh of the same
hierarchy:

``FEM_psi``
    Galerkin on the composed elements ``phi_i o F`` (global fine ``F``).
``FEM_xi``
    Galerkin on elements that are linear in ``F`` on each coarse triangle.
``MBFEM``
    P1 elements with the compressed per-triangle tensor
    ``<a grad F>_K (grad F(K))^-1``.
``FVM``
    Control-volume fluxes of the ``F``-linear elements.
``LFEM``
    Local harmonic coordinates computed independently in each coarse
    triangle (no oversampling).

Per-triangle averages ``<X>_K`` are volume averages over the fine
descendants of ``K``.
"""

import io
import json
from dataclasses import dataclass, field

import numpy as np
import scipy.io
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (EmptySubmesh, PointLocationFailure, SegmentWalkFailure,
                     SingularOperator, SingularUpscaledOperator, UnadaptedMesh)
from .fem import (SparseOperator, assemble_load, assemble_operator,
                  assemble_stiffness, scatter,
                  element_gradients, element_stiffness, gradient_field,
                  solve_dirichlet, condition_number)
from .fileio import atomic_write
from .geometry import (TriangleLocator, barycentric, clip_halfplane,
                       polygon_area_centroid, segment_triangle_overlap)
from .harmonic import compute_harmonic_coordinates, image_edge_matrices
from .mesh import build_dual, eta_max as mesh_eta_max, deformed_quality

METHODS = ("FEM_psi", "FEM_xi", "MBFEM", "FVM", "LFEM")


def inverse_2x2(M):
    det = M[..., 0, 0] * M[..., 1, 1] - M[..., 0, 1] * M[..., 1, 0]
    inv = np.empty_like(M)
    inv[..., 0, 0] = M[..., 1, 1]
    inv[..., 0, 1] = -M[..., 0, 1]
    inv[..., 1, 0] = -M[..., 1, 0]
    inv[..., 1, 1] = M[..., 0, 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        return inv / det[..., None, None]


# -- shared data -------------------------------------------------------------

@dataclass(eq=False)
class SchemeContext:
    """Everything the coarse schemes share for one (medium, coarse level)."""

    hier: object
    coarse_level: int
    fine_level: int
    a: object
    g: object
    hmap: object
    fine_operator: SparseOperator
    fine_load: np.ndarray
    tol: float = 1e-10
    solver: str = "direct"
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def coarse(self):
        return self.hier[self.coarse_level]

    @property
    def fine(self):
        return self.hier[self.fine_level]

    @property
    def depth(self):
        return self.fine_level - self.coarse_level

    @property
    def ancestors(self):
        return self._memo("anc", lambda: self.hier.ancestors(self.coarse_level,
                                                             self.fine_level))

    @property
    def children(self):
        return self._memo("children", lambda: self.hier.descendants(
            self.coarse_level, self.fine_level))

    @property
    def F_coarse(self):
        """F at the coarse nodes (coarse node i is fine node i)."""
        return self.hmap.F_nodal[:self.coarse.n_nodes]

    @property
    def gradF_coarse(self):
        """grad F(K): gradient of the P1 interpolant of F on each coarse K."""
        return self._memo("gradF_K", lambda: gradient_field(self.coarse, self.F_coarse))

    def average(self, X):
        """Volume average of a per-fine-triangle array over each coarse K."""
        vol = self.fine.areas
        ch = self.children
        w = vol[ch]
        X = np.asarray(X)
        num = np.einsum("kc,kc...->k...", w, X[ch])
        return num / w.sum(axis=1).reshape((-1,) + (1,) * (X.ndim - 1))

    @property
    def avg_flux(self):
        """<a grad F>_K."""
        def compute():
            A = self.a.per_triangle
            return self.average(np.einsum("tij,tjk->tik", A, self.hmap.gradF))
        return self._memo("avg_flux", compute)

    @property
    def avg_sigma(self):
        """<grad F^T a grad F>_K."""
        def compute():
            G = self.hmap.gradF
            S = np.einsum("tki,tkl,tlj->tij", G, self.a.per_triangle, G)
            return self.average(S)
        return self._memo("avg_sigma", compute)

    @property
    def hat_prolongation(self):
        """Plain coarse hats at the fine nodes, (N_fine, N_coarse)."""
        return self._memo("hat_P", lambda: locate_prolongation(
            self.coarse, self.fine.nodes, self.fine.boundary, self.location_tol))

    @property
    def coarse_hat_load(self):
        """(phi_i, g) for the coarse hats, integrated on the fine mesh."""
        return self._memo("hat_load", lambda: self.hat_prolongation.T @ self.fine_load)

    @property
    def location_tol(self):
        nested = self.hier.is_nested(self.coarse_level, self.fine_level)
        return 1e-8 if nested else np.inf

    def check_adapted(self):
        E = image_edge_matrices(self.coarse.triangles, self.F_coarse)
        det = E[:, 0, 0] * E[:, 1, 1] - E[:, 0, 1] * E[:, 1, 0]
        bad = np.flatnonzero(det <= 0)
        if len(bad):
            raise UnadaptedMesh(
                f"{len(bad)} coarse triangles have det grad F(K) <= 0", triangles=bad)

    def _memo(self, key, fn):
        if key not in self._cache:
            self._cache[key] = fn()
        return self._cache[key]


def make_context(hier, a, g=1.0, coarse_level=0, fine_level=None, hmap=None,
                 tol=1e-10, solver="direct"):
    """Assemble the fine operator and load and (unless given) the harmonic
    coordinates on the fine level."""
    fine_level = len(hier) - 1 if fine_level is None else fine_level
    if fine_level < 0:
        fine_level += len(hier)
    if not 0 <= coarse_level < fine_level:
        raise ValueError("coarse level must be below the fine level")
    fine = hier[fine_level]
    if hmap is None:
        hmap = compute_harmonic_coordinates(fine, a, tol=tol, method=solver)
    A = hmap.operator
    if A is None or not A.symmetric:
        A = assemble_stiffness(fine, a)
    b = assemble_load(fine, g)
    return SchemeContext(hier, coarse_level, fine_level, a, g, hmap, A, b, tol, solver)


def _resolve(ctx, hier, hmap, a, g, coarse_level, fine_level, tol, solver):
    if ctx is not None:
        return ctx
    return make_context(hier, a, g, coarse_level, fine_level, hmap, tol, solver)


# -- model -------------------------------------------------------------------

@dataclass(eq=False)
class CoarseModel:
    method: str
    coarse_mesh: object
    F_coarse: np.ndarray
    gradF: np.ndarray
    avg_sigma: np.ndarray
    avg_flux: np.ndarray
    per_K: np.ndarray
    system: SparseOperator
    load: np.ndarray
    solution: np.ndarray
    prolongation: object = None
    fine_solution: np.ndarray = None
    extras: dict = field(default_factory=dict)
    report: object = None

    @property
    def coarse_values(self):
        """Approximation at the coarse nodes."""
        return self.solution if self.fine_solution is None else \
            self.fine_solution[:self.coarse_mesh.n_nodes]

    def to_json(self, path=None):
        """Compressed operator: per-K matrices, F at the coarse nodes and the
        assembled system in MatrixMarket form."""
        buf = io.BytesIO()
        scipy.io.mmwrite(buf, sp.coo_matrix(self.system.full), precision=17)
        data = {
            "method": self.method,
            "coarse_nodes": self.coarse_mesh.nodes.tolist(),
            "coarse_triangles": self.coarse_mesh.triangles.tolist(),
            "boundary": self.coarse_mesh.boundary.tolist(),
            "F_at_coarse_nodes": self.F_coarse.tolist(),
            "gradF": self.gradF.tolist(),
            "avg_a_gradF": self.avg_flux.tolist(),
            "avg_sigma": self.avg_sigma.tolist(),
            "per_K": None if self.per_K is None else self.per_K.tolist(),
            "load": self.load.tolist(),
            "solution": self.coarse_values.tolist(),
            "system_matrix_market": buf.getvalue().decode("ascii"),
        }
        text = json.dumps(data)
        if path is not None:
            atomic_write(path, text)
        return text


def _solve(ctx, system, load):
    try:
        u, report = solve_dirichlet(system, load, ctx.tol, method=ctx.solver)
    except SingularOperator as exc:
        raise SingularUpscaledOperator(str(exc)) from exc
    return np.asarray(u.values), report


def _model(ctx, method, per_K, system, load, solution, report, **kw):
    return CoarseModel(method, ctx.coarse, ctx.F_coarse, ctx.gradF_coarse,
                       ctx.avg_sigma, ctx.avg_flux, per_K, system, load, solution,
                       report=report, **kw)


# -- prolongations ------------------------------------------------------------

def locate_prolongation(coarse, points, zero_rows=None, tol=1e-8):
    """Sparse matrix of the coarse hats evaluated at ``points``.

    Points outside the coarse mesh by more than ``tol`` (barycentric units)
    raise :class:`PointLocationFailure`; smaller excursions are clamped.
    Pass ``tol=inf`` when the fine mesh is not nested in the coarse one
    (curved boundary), so that points beyond the coarse chords are clamped.
    Columns of coarse boundary nodes and rows in ``zero_rows`` are zeroed.
    """
    loc = TriangleLocator(coarse.nodes, coarse.triangles)
    tri, bary, _ = loc.locate(points)
    worst = bary.min(axis=1)
    if zero_rows is not None and len(zero_rows):
        worst[zero_rows] = 0.0
    if np.any(worst < -tol):
        raise PointLocationFailure(
            f"{int((worst < -tol).sum())} points lie outside the coarse mesh "
            f"(worst barycentric {worst.min():.3e})")
    bary = np.clip(bary, 0.0, None)
    bary /= bary.sum(axis=1, keepdims=True)
    rows = np.repeat(np.arange(len(points)), 3)
    cols = coarse.triangles[tri].ravel()
    vals = bary.ravel()
    keep = ~coarse.boundary_mask[cols]
    P = sp.coo_matrix((vals[keep], (rows[keep], cols[keep])),
                      shape=(len(points), coarse.n_nodes)).tocsr()
    if zero_rows is not None and len(zero_rows):
        D = np.ones(len(points))
        D[zero_rows] = 0.0
        P = sp.diags(D) @ P
    P = sp.csr_matrix(P)
    P.eliminate_zeros()
    return P


def _galerkin(ctx, P):
    A = ctx.fine_operator.full
    Ac = sp.csr_matrix(P.T @ A @ P)
    load = P.T @ ctx.fine_load
    return SparseOperator.from_full(Ac, ctx.coarse.boundary, symmetric=True), load


# -- FEM_psi -----------------------------------------------------------------

def build_psi_scheme(hier=None, hmap=None, a=None, g=1.0, coarse_level=0,
                     fine_level=None, tol=1e-10, solver="direct", context=None):
    """Galerkin scheme on ``psi_i = phi_i o F``.

    Returns the model; ``model.fine_solution`` is ``u_h`` on the fine mesh.
    """
    ctx = _resolve(context, hier, hmap, a, g, coarse_level, fine_level, tol, solver)
    P = locate_prolongation(ctx.coarse, ctx.hmap.F_nodal, ctx.fine.boundary,
                            ctx.location_tol)
    system, load = _galerkin(ctx, P)
    c, report = _solve(ctx, system, load)
    return _model(ctx, "FEM_psi", None, system, load, c, report,
                  prolongation=P, fine_solution=P @ c)


# -- FEM_xi ------------------------------------------------------------------

def xi_element_matrices(gradF_K, avg_sigma):
    """Per-K matrices (grad F(K))^-T <sigma>_K (grad F(K))^-1."""
    Ginv = inverse_2x2(gradF_K)
    M = np.einsum("kji,kjl,klm->kim", Ginv, avg_sigma, Ginv)
    return 0.5 * (M + np.swapaxes(M, 1, 2))


def xi_values_at_fine_vertices(ctx):
    """Values of the three F-linear elements of each coarse K at the
    vertices of its fine descendants, shape (T_fine, 3 fine vertices,
    3 coarse vertices)."""
    C = ctx.coarse
    anc = ctx.ancestors
    img = ctx.F_coarse[C.triangles][anc]            # (T, 3, 2) image triangle
    Fv = ctx.hmap.F_nodal[ctx.fine.triangles]        # (T, 3, 2)
    nt = len(anc)
    pts = Fv.reshape(-1, 2)
    corners = np.repeat(img, 3, axis=0)
    return barycentric(pts, corners).reshape(nt, 3, 3)


def _xi_load(ctx):
    """(xi_i, g) integrated exactly on the fine descendants."""
    fine = ctx.fine
    vals = xi_values_at_fine_vertices(ctx)          # (T, v, i)
    g = np.asarray(ctx.g, dtype=float)
    vol = fine.areas
    if g.ndim == 0:
        local = vol[:, None] * vals.mean(axis=1) * float(g)
    else:
        gv = g[fine.triangles]                      # (T, v)
        mass = (np.ones((3, 3)) + np.eye(3)) / 12.0
        local = vol[:, None] * np.einsum("tv,vw,twi->ti", gv, mass, vals)
    b = np.zeros(ctx.coarse.n_nodes)
    np.add.at(b, ctx.coarse.triangles[ctx.ancestors].ravel(), local.ravel())
    return b


def build_xi_scheme(hier=None, hmap=None, a=None, g=1.0, coarse_level=0,
                    fine_level=None, tol=1e-10, solver="direct", context=None):
    """Galerkin scheme on elements linear in F within each coarse triangle."""
    ctx = _resolve(context, hier, hmap, a, g, coarse_level, fine_level, tol, solver)
    ctx.check_adapted()
    M = xi_element_matrices(ctx.gradF_coarse, ctx.avg_sigma)
    full = scatter(ctx.coarse, element_stiffness(ctx.coarse, M))
    system = SparseOperator.from_full(full, ctx.coarse.boundary, symmetric=True)
    load = _xi_load(ctx)
    c, report = _solve(ctx, system, load)
    return _model(ctx, "FEM_xi", M, system, load, c, report)


# -- MBFEM -------------------------------------------------------------------

def mbfem_matrices(avg_flux, gradF_K):
    """Compressed tensor <a grad F>_K (grad F(K))^-1 per coarse triangle."""
    return np.einsum("kij,kjl->kil", avg_flux, inverse_2x2(gradF_K))


def build_mbfem_scheme(hier=None, hmap=None, a=None, g=1.0, coarse_level=0,
                       fine_level=None, tol=1e-10, solver="direct", context=None):
    """P1 scheme with the compressed (generally nonsymmetric) operator."""
    ctx = _resolve(context, hier, hmap, a, g, coarse_level, fine_level, tol, solver)
    ctx.check_adapted()
    M = mbfem_matrices(ctx.avg_flux, ctx.gradF_coarse)
    system = assemble_operator(ctx.coarse, M)
    load = ctx.coarse_hat_load
    c, report = _solve(ctx, system, load)
    return _model(ctx, "MBFEM", M, system, load, c, report)


# -- FVM ---------------------------------------------------------------------

def dual_edge_weights(ctx, dual):
    """Integral of n^T a grad F along each dual-edge segment, (S, 2).

    The segment of coarse triangle K is intersected with every fine
    descendant of K; the integrand is constant on each of them.
    """
    ch = ctx.children                                # (K, c)
    nseg = len(dual.tri)
    seg_children = ch[dual.tri]                      # (S, c)
    nc = seg_children.shape[1]
    fine = ctx.fine
    aG = np.einsum("tij,tjk->tik", ctx.a.per_triangle, ctx.hmap.gradF)  # (T,2,2)
    weights = np.zeros((nseg, 2))
    covered = np.zeros(nseg)
    chunk = max(1, 200000 // nc)
    for s0 in range(0, nseg, chunk):
        sl = slice(s0, min(s0 + chunk, nseg))
        kids = seg_children[sl].ravel()
        p = np.repeat(dual.start[sl], nc, axis=0)
        q = np.repeat(dual.end[sl], nc, axis=0)
        ln = segment_triangle_overlap(p, q, fine.corners[kids]).reshape(-1, nc)
        nrm = dual.normal[sl]
        row = np.einsum("si,scij->scj", nrm, aG[seg_children[sl]])
        weights[sl] = np.einsum("sc,scj->sj", ln, row)
        covered[sl] = ln.sum(axis=1)
    gap = np.abs(covered - dual.length) / dual.length
    if np.any(gap > 1e-8):
        raise SegmentWalkFailure(
            f"{int((gap > 1e-8).sum())} dual segments are not covered by the fine "
            f"descendants of their coarse triangle (worst gap {gap.max():.2e})")
    return weights


def control_volume_load(ctx, dual):
    """Integral of g over each control volume, by clipping the fine
    descendants of each coarse triangle against the two half-planes that
    cut out the piece of each coarse vertex."""
    C = ctx.coarse
    fine = ctx.fine
    anc = ctx.ancestors
    nt = fine.n_triangles
    normals = np.empty((C.n_triangles, 3, 2, 2))
    offsets = np.empty((C.n_triangles, 3, 2))
    for k in range(3):
        s_next = 3 * np.arange(C.n_triangles) + k
        s_prev = 3 * np.arange(C.n_triangles) + (k - 1) % 3
        normals[:, k, 0] = dual.normal[s_next]
        offsets[:, k, 0] = -np.einsum("ij,ij->i", dual.normal[s_next], dual.start[s_next])
        normals[:, k, 1] = -dual.normal[s_prev]
        offsets[:, k, 1] = np.einsum("ij,ij->i", dual.normal[s_prev], dual.start[s_prev])
    g = np.asarray(ctx.g, dtype=float)
    out = np.zeros(C.n_nodes)
    for k in range(3):
        poly = np.zeros((nt, 3, 2))
        poly[:] = fine.corners
        count = np.full(nt, 3)
        poly, count = clip_halfplane(poly, count, normals[anc, k, 0], offsets[anc, k, 0])
        poly, count = clip_halfplane(poly, count, normals[anc, k, 1], offsets[anc, k, 1])
        area, cent = polygon_area_centroid(poly, count)
        area = np.where(count >= 3, area, 0.0)
        if g.ndim == 0:
            contrib = area * float(g)
        else:
            safe = np.where((area > 0)[:, None], cent, fine.barycenters)
            lam = barycentric(safe, fine.corners)
            gval = np.einsum("ti,ti->t", lam, g[fine.triangles])
            contrib = np.where(area > 0, area * gval, 0.0)
        np.add.at(out, C.triangles[anc, k], contrib)
    return out


def build_fvm_scheme(hier=None, hmap=None, a=None, g=1.0, coarse_level=0,
                     fine_level=None, tol=1e-10, solver="direct", context=None,
                     dual=None, center_rule="barycenter"):
    """Finite-volume scheme on the dual mesh of the coarse triangulation.

    Row ``i`` balances the flux of the F-linear elements through the
    boundary of the control volume ``V_i`` against the integral of ``g``
    over ``V_i``.  ``model.extras["gamma"]`` holds the jump rates (the full
    matrix, boundary columns included).
    """
    ctx = _resolve(context, hier, hmap, a, g, coarse_level, fine_level, tol, solver)
    ctx.check_adapted()
    C = ctx.coarse
    dual = build_dual(C, center_rule) if dual is None else dual
    w = dual_edge_weights(ctx, dual)                  # (S, 2)
    Ginv = inverse_2x2(ctx.gradF_coarse)              # (K, 2, 2)
    grads = element_gradients(C)                      # (K, 3, 2)
    # flux of xi_j through segment s: w_s . G^-1 grad phi_j(K)
    coef = np.einsum("sd,sde,sje->sj", w, Ginv[dual.tri], grads[dual.tri])  # (S, 3)
    cols = C.triangles[dual.tri]                      # (S, 3)
    rows_i = np.repeat(dual.i, 3)
    rows_j = np.repeat(dual.j, 3)
    data = np.concatenate([-coef.ravel(), coef.ravel()])
    rows = np.concatenate([rows_i, rows_j])
    cc = np.concatenate([cols.ravel(), cols.ravel()])
    full = sp.coo_matrix((data, (rows, cc)), shape=(C.n_nodes, C.n_nodes)).tocsr()
    full.sum_duplicates()
    full.sort_indices()
    system = SparseOperator.from_full(full, C.boundary, symmetric=False)
    load = control_volume_load(ctx, dual)
    c, report = _solve(ctx, system, load)
    return _model(ctx, "FVM", None, system, load, c, report,
                  extras={"gamma": full, "segment_weights": w,
                          "segment_flux": coef, "dual": dual})


def jump_rates(model):
    """Jump rates gamma_ij of a finite-volume model (CSR, all columns)."""
    return model.extras["gamma"]


# -- LFEM --------------------------------------------------------------------

def _local_pattern(fine_tris_blocks):
    """Common local numbering of the fine descendants of every coarse
    triangle; returns (global ids (K, n_loc), local triangles) or None if
    the blocks do not share one pattern."""
    B = fine_tris_blocks.reshape(len(fine_tris_blocks), -1)
    _, first = np.unique(B[0], return_index=True)
    order = np.sort(first)
    gid0 = B[0, order]
    lookup = {g: i for i, g in enumerate(gid0)}
    loc = np.array([lookup[g] for g in B[0]]).reshape(-1, 3)
    gids = B[:, order]
    if not np.array_equal(gids[:, loc.ravel()], B):
        return None
    return gids, loc


def build_lfem_scheme(hier=None, hmap=None, a=None, g=1.0, coarse_level=0,
                      fine_level=None, tol=1e-10, solver="direct", context=None,
                      dense_limit=400):
    """Multiscale elements from harmonic coordinates solved separately in
    each coarse triangle with ``F = x`` on its boundary."""
    if context is None:
        fine_level = len(hier) - 1 if fine_level is None else fine_level
        if hmap is None:
            from .harmonic import identity_map
            hmap = identity_map(hier[fine_level])
    ctx = _resolve(context, hier, hmap, a, g, coarse_level, fine_level, tol, solver)
    C = ctx.coarse
    fine = ctx.fine
    ch = ctx.children
    blocks = fine.triangles[ch]                       # (K, c, 3)
    pattern = _local_pattern(blocks)
    if pattern is None:
        raise NotImplementedError("coarse triangles with differing refinement patterns")
    gids, loc = pattern
    nloc = gids.shape[1]
    edges = np.sort(np.concatenate([loc[:, [0, 1]], loc[:, [1, 2]], loc[:, [2, 0]]]), axis=1)
    uniq, counts = np.unique(edges, axis=0, return_counts=True)
    on_bnd = np.zeros(nloc, dtype=bool)
    on_bnd[uniq[counts == 1].ravel()] = True
    inner = np.flatnonzero(~on_bnd)
    outer = np.flatnonzero(on_bnd)
    if len(inner) == 0:
        raise EmptySubmesh("coarse triangles contain no interior fine node; "
                           "the fine level must be at least two refinements finer")

    Ke = element_stiffness(fine, ctx.a)[ch]          # (K, c, 3, 3)
    Floc = np.empty((C.n_triangles, nloc, 2))
    xloc = fine.nodes[gids]                           # (K, n_loc, 2)
    Floc[:] = xloc
    r = np.repeat(loc, 3, axis=1).ravel()
    cidx = np.tile(loc, (1, 3)).ravel()
    if len(inner) <= dense_limit:
        chunk = max(1, int(2e7 // (nloc * nloc)))
        for k0 in range(0, C.n_triangles, chunk):
            ks = slice(k0, min(k0 + chunk, C.n_triangles))
            nk = ks.stop - ks.start
            flat = r * nloc + cidx
            vals = Ke[ks].reshape(nk, -1)
            A = _batched_scatter(vals, flat, nloc * nloc).reshape(nk, nloc, nloc)
            Aii = A[:, inner][:, :, inner]
            Aib = A[:, inner][:, :, outer]
            rhs = -np.einsum("kij,kjd->kid", Aib, xloc[ks][:, outer])
            Floc[ks, inner] = np.linalg.solve(Aii, rhs)
    else:
        for k in range(C.n_triangles):
            A = sp.coo_matrix((Ke[k].ravel(), (r, cidx)), shape=(nloc, nloc)).tocsc()
            Aii = A[inner][:, inner]
            Aib = A[inner][:, outer]
            rhs = -(Aib @ xloc[k][outer])
            Floc[k, inner] = spla.splu(sp.csc_matrix(Aii)).solve(rhs)

    # basis values: barycentric coordinates of F_loc in the straight K
    corners = C.corners                               # (K, 3, 2)
    lam = barycentric(Floc.reshape(-1, 2),
                      np.repeat(corners, nloc, axis=0)).reshape(C.n_triangles, nloc, 3)
    # each fine node is taken from the first coarse triangle that contains it
    flat_gid = gids.ravel()
    _, first = np.unique(flat_gid, return_index=True)
    node = flat_gid[first]
    kk = first // nloc
    vals = lam.reshape(-1, 3)[first]
    rows = np.repeat(node, 3)
    cols = C.triangles[kk].ravel()
    v = vals.ravel()
    keep = ~C.boundary_mask[cols] & ~fine.boundary_mask[rows]
    P = sp.coo_matrix((v[keep], (rows[keep], cols[keep])),
                      shape=(fine.n_nodes, C.n_nodes)).tocsr()
    P.eliminate_zeros()
    system, load = _galerkin(ctx, P)
    c, report = _solve(ctx, system, load)
    return _model(ctx, "LFEM", None, system, load, c, report,
                  prolongation=P, fine_solution=P @ c,
                  extras={"F_local": Floc, "local_ids": gids})


def _batched_scatter(vals, flat, size):
    """Sum ``vals[:, e]`` into column ``flat[e]`` of a (n, size) array."""
    order = np.argsort(flat, kind="stable")
    f = flat[order]
    starts = np.flatnonzero(np.r_[True, f[1:] != f[:-1]])
    sums = np.add.reduceat(vals[:, order], starts, axis=1)
    out = np.zeros((vals.shape[0], size))
    out[:, f[starts]] = sums
    return out


BUILDERS = {
    "FEM_psi": build_psi_scheme,
    "FEM_xi": build_xi_scheme,
    "MBFEM": build_mbfem_scheme,
    "FVM": build_fvm_scheme,
    "LFEM": build_lfem_scheme,
}


def build_scheme(method, context, **kw):
    return BUILDERS[method](context=context, **kw)


def standard_coarse_fem(coarse, load, a_coarse=None, tol=1e-10):
    """Plain P1 Galerkin on the coarse mesh (``a = Id`` unless given)."""
    from .media import CoefficientField
    if a_coarse is None:
        a_coarse = CoefficientField.scalar(np.ones(coarse.n_triangles))
    A = assemble_stiffness(coarse, a_coarse)
    u, _ = solve_dirichlet(A, load, tol, method="direct")
    return np.asarray(u.values)


# -- interpolation -----------------------------------------------------------

def interpolate_Ih(coarse, values, points):
    """P1 interpolant of coarse nodal ``values`` on the straight coarse mesh,
    evaluated at ``points``."""
    values = np.asarray(values, dtype=float)
    loc = TriangleLocator(coarse.nodes, coarse.triangles)
    tri, bary, _ = loc.locate(points)
    bary = np.clip(bary, 0.0, None)
    bary /= bary.sum(axis=1, keepdims=True)
    return np.einsum("pi,pi->p", bary, values[coarse.triangles[tri]])


@dataclass(frozen=True)
class LiftResult:
    values: np.ndarray
    fallbacks: int


def interpolate_Jh(coarse, F_fine, F_coarse, values, tol=1e-10):
    """Lift coarse nodal ``values`` to the fine nodes through the deformed
    coarse mesh: each ``F(x_f)`` is located in the triangulation with nodes
    ``F(x_i)`` and the deformed hats are evaluated there.  Points outside
    every deformed triangle are extrapolated linearly from the nearest one
    and counted in ``fallbacks``."""
    values = np.asarray(values, dtype=float)
    F_coarse = np.asarray(F_coarse, dtype=float)
    loc = TriangleLocator(F_coarse, coarse.triangles)
    tri, bary, inside = loc.locate(np.asarray(F_fine, dtype=float), tol=tol)
    out = np.einsum("pi,pi->p", bary, values[coarse.triangles[tri]])
    return LiftResult(out, int((~inside).sum()))


# -- stability ---------------------------------------------------------------

@dataclass(frozen=True)
class StabilityReport:
    S_m: float
    S_v: float
    eta_max: float
    eta_star_min: float
    condition_number: float


def energy_laplacian(coarse):
    """Graph Laplacian of sum_{i~j} |v_i - v_j|^2 restricted to interior
    nodes (boundary values fixed at zero)."""
    e = coarse.edges
    n = coarse.n_nodes
    rows = np.concatenate([e[:, 0], e[:, 1], e[:, 0], e[:, 1]])
    cols = np.concatenate([e[:, 0], e[:, 1], e[:, 1], e[:, 0]])
    vals = np.concatenate([np.ones(2 * len(e)), -np.ones(2 * len(e))])
    L = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    idx = coarse.interior
    return sp.csr_matrix(L[idx][:, idx])


def inf_sup_constant(A, L):
    """Smallest singular value of L^-1/2 A L^-1/2 (dense)."""
    A = A.toarray() if sp.issparse(A) else np.asarray(A)
    L = L.toarray() if sp.issparse(L) else np.asarray(L)
    w, V = np.linalg.eigh(L)
    Lmh = (V / np.sqrt(w)) @ V.T
    s = np.linalg.svd(Lmh @ A @ Lmh, compute_uv=False)
    return float(s[-1])


def stability_constants(model, eta_star_min=None):
    """Inf-sup constant of the coarse system with respect to the graph
    energy; reported as ``S_v`` for the finite-volume scheme and ``S_m``
    otherwise (the other entry is NaN)."""
    C = model.coarse_mesh
    A = model.system.reduced()
    S = inf_sup_constant(A, energy_laplacian(C))
    if eta_star_min is None:
        eta_star_min = deformed_quality(C, model.F_coarse).eta_star_min
    cond = condition_number(model.system)
    if model.method == "FVM":
        return StabilityReport(float("nan"), S, mesh_eta_max(C.corners),
                               eta_star_min, cond)
    return StabilityReport(S, float("nan"), mesh_eta_max(C.corners), eta_star_min, cond)


def sandwich_check(coarse, n_samples=100, seed=0):
    """Ratios ||grad v||^2 / E_h[v] for random interior fields ``v``, with
    the bounds 1/(4 eta_max) and eta_max; returns (ratios, lower, upper)."""
    from .media import CoefficientField
    eta = mesh_eta_max(coarse.corners)
    K = assemble_stiffness(coarse, CoefficientField.scalar(
        np.ones(coarse.n_triangles))).reduced()
    L = energy_laplacian(coarse)
    rng = np.random.Generator(np.random.Philox(seed))
    V = rng.standard_normal((K.shape[0], n_samples))
    num = np.einsum("ik,ik->k", V, K @ V)
    den = np.einsum("ik,ik->k", V, L @ V)
    return num / den, 1.0 / (4.0 * eta), eta


# -- multi-resolution operator ---------------------------------------------

def upscale_operator(B, hier, k, p, tol=1e-12, solver="direct"):
    """Compress the level-``p`` matrix field ``B`` to level ``k``: solve the
    level-``p`` problem ``B[v, F] = 0``, ``F = x`` on the boundary, and
    return ``<B grad F>_K (grad F(K))^-1`` for each level-``k`` triangle."""
    if k > p:
        raise ValueError("k must not exceed p")
    B = np.asarray(getattr(B, "per_triangle", B), dtype=float)
    if k == p:
        return B.copy()
    fine = hier[p]
    hmap = compute_harmonic_coordinates(fine, B, tol=tol, method=solver)
    ch = hier.descendants(k, p)
    vol = fine.areas[ch]
    flux = np.einsum("tij,tjk->tik", B, hmap.gradF)
    avg = np.einsum("kc,kcij->kij", vol, flux[ch]) / vol.sum(axis=1)[:, None, None]
    coarse = hier[k]
    G = gradient_field(coarse, hmap.F_nodal[:coarse.n_nodes])
    return np.einsum("kij,kjl->kil", avg, inverse_2x2(G))
