"""a-harmonic coordinates, the compensation tensor and metric gradients.

The harmonic coordinates ``F = (F1, F2)`` solve ``div(a grad F) = 0`` with
``F = x`` on the boundary.  ``grad F`` is stored per triangle as the matrix
whose column ``j`` is ``grad F_j``.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateMetric, UnadaptedTriangle
from .fem import assemble_operator, assemble_stiffness, gradient_field, solve_dirichlet
from .fileio import write_csv


@dataclass(frozen=True, eq=False)
class HarmonicMap:
    mesh: object
    F_nodal: np.ndarray
    gradF: np.ndarray
    detF: np.ndarray
    report: object = None
    operator: object = field(default=None, repr=False)

    @classmethod
    def from_nodal(cls, mesh, F_nodal, report=None, operator=None):
        F_nodal = np.asarray(F_nodal, dtype=float)
        G = gradient_field(mesh, F_nodal)
        det = G[:, 0, 0] * G[:, 1, 1] - G[:, 0, 1] * G[:, 1, 0]
        return cls(mesh, F_nodal, G, det, report, operator)

    @property
    def flagged(self):
        """Fine triangles on which det grad F <= 0."""
        return np.flatnonzero(self.detF <= 0)

    @property
    def image_areas(self):
        """Areas of the images F(T) of the fine triangles."""
        return self.mesh.areas * self.detF

    def to_csv(self, node_path, triangle_path):
        F = self.F_nodal
        write_csv(node_path, ["node_index", "F1", "F2"],
                  ((i, float(F[i, 0]), float(F[i, 1])) for i in range(len(F))))
        G = self.gradF
        write_csv(triangle_path,
                  ["triangle_index", "dF1_dx", "dF1_dy", "dF2_dx", "dF2_dy", "det"],
                  ((t, float(G[t, 0, 0]), float(G[t, 1, 0]), float(G[t, 0, 1]),
                    float(G[t, 1, 1]), float(self.detF[t])) for t in range(len(G))))


def compute_harmonic_coordinates(mesh, a, tol=1e-10, method="direct",
                                 boundary_values=None):
    """Solve for the harmonic coordinates of ``a`` on ``mesh``.

    ``a`` is a :class:`CoefficientField` or any per-triangle (T, 2, 2) matrix
    field (nonsymmetric fields give a nonsymmetric system).
    ``boundary_values`` (N_boundary, 2) replaces the default trace ``x``.
    """
    if hasattr(a, "validate"):
        A = assemble_stiffness(mesh, a)
    else:
        A = assemble_operator(mesh, a)
    bnd = mesh.boundary
    trace = mesh.nodes[bnd] if boundary_values is None else np.asarray(boundary_values)
    b = np.zeros((mesh.n_nodes, 2))
    if method == "auto":
        method = "cg" if A.symmetric else "bicgstab"
    F, report = solve_dirichlet(A, b, tol, method=method, boundary_values=trace)
    F = np.array(F.values)
    F[bnd] = trace
    return HarmonicMap.from_nodal(mesh, F, report, A)


def identity_map(mesh):
    return HarmonicMap.from_nodal(mesh, mesh.nodes.copy())


@dataclass(frozen=True, eq=False)
class SigmaField:
    sigma: np.ndarray
    mu_sigma: float
    beta_sigma: float
    trace_integrability: float
    mu_per_triangle: np.ndarray = field(repr=False)
    beta_per_triangle: np.ndarray = field(repr=False)
    flagged: np.ndarray = field(repr=False)
    epsilon: float = 0.1


def compensation_tensor(gradF, a):
    A = getattr(a, "per_triangle", a)
    return np.einsum("tki,tkl,tlj->tij", gradF, A, gradF)


def sigma_stats(hmap, a, epsilon=0.1):
    """Compensation tensor and its anisotropy diagnostics.

    Triangles with ``det grad F <= 0`` or a singular tensor are flagged and
    contribute ``inf`` to the per-triangle diagnostics.
    """
    S = compensation_tensor(hmap.gradF, a)
    S = 0.5 * (S + np.swapaxes(S, 1, 2))
    tr = S[:, 0, 0] + S[:, 1, 1]
    det = S[:, 0, 0] * S[:, 1, 1] - S[:, 0, 1] ** 2
    disc = np.hypot(0.5 * (S[:, 0, 0] - S[:, 1, 1]), S[:, 0, 1])
    lmax = 0.5 * tr + disc
    lmin = det / np.where(lmax > 0, lmax, 1.0)
    frob2 = (S ** 2).sum(axis=(1, 2))
    flagged = (hmap.detF <= 0) | (lmin <= 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        mu = np.where(flagged, np.inf, lmax / lmin)
        beta = np.where(flagged, np.inf, 2.0 - tr ** 2 / frob2)
        trace_int = np.where(tr > 0, tr ** (-1.0 - epsilon), np.inf)
    beta = np.where(flagged, beta, np.clip(beta, 0.0, None))
    return SigmaField(
        sigma=S,
        mu_sigma=float(mu.max()),
        beta_sigma=float(beta.max()),
        trace_integrability=float((hmap.mesh.areas * trace_int).sum()),
        mu_per_triangle=mu,
        beta_per_triangle=beta,
        flagged=np.flatnonzero(flagged),
        epsilon=epsilon,
    )


def _inverse_2x2(M):
    det = M[..., 0, 0] * M[..., 1, 1] - M[..., 0, 1] * M[..., 1, 0]
    inv = np.empty_like(M)
    inv[..., 0, 0] = M[..., 1, 1]
    inv[..., 0, 1] = -M[..., 0, 1]
    inv[..., 1, 0] = -M[..., 1, 0]
    inv[..., 1, 1] = M[..., 0, 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        inv /= det[..., None, None]
    return inv, det


def metric_gradient(hmap, v):
    """``(grad F)^-1 grad v`` per fine triangle."""
    inv, det = _inverse_2x2(hmap.gradF)
    if np.any(det == 0):
        raise DegenerateMetric(f"{int((det == 0).sum())} triangles have singular grad F")
    g = gradient_field(hmap.mesh, v)
    return np.einsum("tij,tj->ti", inv, g)


def image_edge_matrices(triangles, F_nodal):
    """Rows F(b) - F(a) and F(c) - F(a) for each triangle, (K, 2, 2)."""
    Fa = F_nodal[triangles[..., 0]]
    return np.stack([F_nodal[triangles[..., 1]] - Fa,
                     F_nodal[triangles[..., 2]] - Fa], axis=-2)


def coarse_metric_gradient(K_nodes, F_nodal, v):
    """Gradient of ``v`` on the coarse triangle(s) ``K_nodes`` with respect
    to the metric induced by ``F``: solves
    ``(F(b) - F(a); F(c) - F(a)) g = (v(b) - v(a); v(c) - v(a))``.

    ``K_nodes`` is (3,) or (K, 3); ``F_nodal`` and ``v`` are indexed by node.
    """
    K_nodes = np.asarray(K_nodes)
    single = K_nodes.ndim == 1
    K = np.atleast_2d(K_nodes)
    F_nodal = np.asarray(F_nodal, dtype=float)
    v = np.asarray(v, dtype=float)
    E = image_edge_matrices(K, F_nodal)
    det = E[:, 0, 0] * E[:, 1, 1] - E[:, 0, 1] * E[:, 1, 0]
    if np.any(det <= 0):
        raise UnadaptedTriangle(
            f"{int((det <= 0).sum())} coarse triangles have non-positive image orientation")
    d = np.stack([v[K[:, 1]] - v[K[:, 0]], v[K[:, 2]] - v[K[:, 0]]], axis=1)
    inv, _ = _inverse_2x2(E)
    g = np.einsum("kij,kj...->ki...", inv, d)
    return g[0] if single else g


def oscillation(points, values, radius, centers=None):
    """Mean oscillation of a vector field over balls of the given radius.

    ``values`` (P, d) sit at ``points`` (P, 2).  For each ball centred at one
    of ``centers`` (indices into ``points``, all by default) the oscillation
    is the Euclidean norm of the componentwise range over the ball.  The
    result is normalised by the root-mean-square magnitude of the field so
    that fields of different scale are comparable.
    """
    values = np.asarray(values, dtype=float).reshape(len(points), -1)
    if centers is None:
        centers = np.arange(len(points))
    tree = cKDTree(points)
    balls = tree.query_ball_point(points[centers], radius)
    osc = np.empty(len(centers))
    for k, idx in enumerate(balls):
        vals = values[idx]
        osc[k] = np.linalg.norm(vals.max(axis=0) - vals.min(axis=0))
    rms = np.sqrt((values ** 2).sum(axis=1).mean())
    return float(osc.mean() / rms)


def compensation_ratio(hmap, u, radius=None, n_centers=4000):
    """Oscillation of ``grad_F u`` over oscillation of ``grad u``, both
    measured on the same balls (radius ``4 h`` of the fine mesh by default)."""
    mesh = hmap.mesh
    radius = 4.0 * mesh.h if radius is None else radius
    pts = mesh.barycenters
    stride = max(len(pts) // n_centers, 1)
    centers = np.arange(0, len(pts), stride)
    grad = gradient_field(mesh, u)
    mgrad = metric_gradient(hmap, u)
    o_plain = oscillation(pts, grad, radius, centers)
    o_metric = oscillation(pts, mgrad, radius, centers)
    return o_metric / o_plain, o_metric, o_plain
