"""Conforming triangulations of the unit disk and the unit square, their
uniform refinement hierarchies, dual control-volume meshes and quality
measures (including quality in the metric induced by a nodal map)."""

import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import CircumcenterOutsideTriangle, DegenerateImageTriangle
from .geometry import barycentric, interior_angles, signed_areas


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Triangulation with counterclockwise triangles.

    ``boundary`` is derived from the edge structure when not given.
    """

    nodes: np.ndarray
    triangles: np.ndarray
    boundary: np.ndarray = None

    def __post_init__(self):
        nodes = np.ascontiguousarray(self.nodes, dtype=float)
        tris = np.ascontiguousarray(self.triangles, dtype=np.int64)
        if nodes.ndim != 2 or nodes.shape[1] != 2:
            raise ValueError("nodes must have shape (N, 2)")
        if tris.ndim != 2 or tris.shape[1] != 3:
            raise ValueError("triangles must have shape (T, 3)")
        area = signed_areas(nodes[tris[:, 0]], nodes[tris[:, 1]], nodes[tris[:, 2]])
        flip = area < 0
        if flip.any():
            tris = tris.copy()
            tris[flip] = tris[flip][:, [0, 2, 1]]
        nodes.setflags(write=False)
        tris.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "triangles", tris)
        if self.boundary is None:
            bnd = self._boundary_from_edges()
        else:
            bnd = np.unique(np.asarray(self.boundary, dtype=np.int64))
        bnd.setflags(write=False)
        object.__setattr__(self, "boundary", bnd)

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @cached_property
    def corners(self):
        """Triangle vertex coordinates, shape (T, 3, 2)."""
        return self.nodes[self.triangles]

    @cached_property
    def areas(self):
        c = self.corners
        return signed_areas(c[:, 0], c[:, 1], c[:, 2])

    @cached_property
    def barycenters(self):
        return self.corners.mean(axis=1)

    @cached_property
    def _edge_data(self):
        tris = self.triangles
        local = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
        key = np.sort(local, axis=1)
        edges, inverse, counts = np.unique(key, axis=0, return_inverse=True,
                                           return_counts=True)
        inverse = inverse.ravel()
        nt = len(tris)
        tri_of = np.tile(np.arange(nt), 3)
        tri_edges = inverse.reshape(3, nt).T
        edge_tris = np.full((len(edges), 2), -1, dtype=np.int64)
        order = np.argsort(inverse, kind="stable")
        first = np.ones(len(order), dtype=bool)
        first[1:] = inverse[order][1:] != inverse[order][:-1]
        edge_tris[inverse[order][first], 0] = tri_of[order][first]
        second = ~first
        edge_tris[inverse[order][second], 1] = tri_of[order][second]
        return edges, tri_edges, edge_tris, counts

    @property
    def edges(self):
        """Unique edges as sorted node pairs, shape (E, 2)."""
        return self._edge_data[0]

    @property
    def triangle_edges(self):
        """Edge index of local edge k = (tri[k], tri[k+1]), shape (T, 3)."""
        return self._edge_data[1]

    @property
    def edge_triangles(self):
        """The one or two triangles incident to each edge (-1 if absent)."""
        return self._edge_data[2]

    def _boundary_from_edges(self):
        edges, _, _, counts = self._edge_data
        return np.unique(edges[counts == 1])

    @cached_property
    def interior(self):
        mask = np.ones(self.n_nodes, dtype=bool)
        mask[self.boundary] = False
        return np.flatnonzero(mask)

    @cached_property
    def boundary_mask(self):
        mask = np.zeros(self.n_nodes, dtype=bool)
        mask[self.boundary] = True
        return mask

    @cached_property
    def node_volumes(self):
        """Lumped nodal volumes: a third of the incident triangle areas."""
        vol = np.zeros(self.n_nodes)
        np.add.at(vol, self.triangles.ravel(), np.repeat(self.areas / 3.0, 3))
        return vol

    @property
    def h(self):
        """Maximal edge length."""
        e = self.nodes[self.edges[:, 1]] - self.nodes[self.edges[:, 0]]
        return float(np.sqrt((e ** 2).sum(axis=1)).max())

    def is_conforming(self):
        counts = self._edge_data[3]
        if counts.max() > 2:
            return False
        edges = self.edges
        on_bnd = np.unique(edges[counts == 1])
        return bool(np.array_equal(on_bnd, self.boundary)) and bool((self.areas > 0).all())

    def to_json(self):
        return json.dumps({
            "nodes": self.nodes.tolist(),
            "triangles": self.triangles.tolist(),
            "boundary": self.boundary.tolist(),
        })

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        return cls(np.array(data["nodes"], dtype=float),
                   np.array(data["triangles"], dtype=np.int64),
                   np.array(data["boundary"], dtype=np.int64))


def refine(mesh, project=None):
    """Uniform 1-to-4 refinement.

    Existing nodes keep their indices; edge midpoints are appended in edge
    order.  Child ``4*t + j`` of triangle ``t`` is the corner child at local
    vertex ``j`` for ``j < 3`` and the middle child for ``j == 3``.  If
    ``project`` is given it maps the midpoints of boundary edges onto the
    curved boundary.
    """
    edges = mesh.edges
    mid = 0.5 * (mesh.nodes[edges[:, 0]] + mesh.nodes[edges[:, 1]])
    on_bnd = mesh.edge_triangles[:, 1] < 0
    if project is not None and on_bnd.any():
        mid[on_bnd] = project(mid[on_bnd])
    nn = mesh.n_nodes
    nodes = np.vstack([mesh.nodes, mid])
    te = mesh.triangle_edges + nn
    a, b, c = mesh.triangles.T
    m_ab, m_bc, m_ca = te[:, 0], te[:, 1], te[:, 2]
    children = np.stack([
        np.stack([a, m_ab, m_ca], axis=1),
        np.stack([m_ab, b, m_bc], axis=1),
        np.stack([m_ca, m_bc, c], axis=1),
        np.stack([m_ab, m_bc, m_ca], axis=1),
    ], axis=1).reshape(-1, 3)
    boundary = np.concatenate([mesh.boundary, nn + np.flatnonzero(on_bnd)])
    return TriMesh(nodes, children, boundary)


def project_to_unit_circle(points):
    return points / np.linalg.norm(points, axis=1, keepdims=True)


@dataclass(frozen=True, eq=False)
class MeshHierarchy:
    """Nested uniform refinements, coarsest first.

    Triangle ``t`` of level ``k`` owns the contiguous block
    ``[t * 4**d, (t + 1) * 4**d)`` of level ``k + d`` triangles, and node
    ``i`` of level ``k`` is node ``i`` at every finer level.
    """

    levels: tuple
    projected: tuple = field(default=())

    def __len__(self):
        return len(self.levels)

    def __getitem__(self, k):
        return self.levels[k]

    @property
    def finest(self):
        return self.levels[-1]

    def ancestors(self, k, n):
        """Level-``k`` ancestor of every level-``n`` triangle."""
        if k > n:
            raise ValueError("k must not exceed n")
        return np.arange(self.levels[n].n_triangles) // 4 ** (n - k)

    def descendants(self, k, n):
        """Level-``n`` descendants of every level-``k`` triangle, shape
        (T_k, 4**(n-k))."""
        return np.arange(self.levels[n].n_triangles).reshape(
            self.levels[k].n_triangles, 4 ** (n - k))

    def is_nested(self, k, n):
        """True when no boundary projection happened between levels k and n,
        i.e. level-k triangles are exact unions of their descendants."""
        return not any(self.projected[k + 1:n + 1])

    def parent_map(self, k):
        """Parent of each level-``k`` triangle on level ``k - 1``."""
        return self.ancestors(k - 1, k)


def build_hierarchy(base, levels, project=None, project_levels=None):
    """Refine ``base`` ``levels`` times; ``project`` is applied on the
    refinement steps ``1..project_levels`` (all steps by default)."""
    if levels < 0:
        raise ValueError("levels must be >= 0")
    if project_levels is None:
        project_levels = levels
    meshes = [base]
    projected = [False]
    for step in range(1, levels + 1):
        use = project if (project is not None and step <= project_levels) else None
        meshes.append(refine(meshes[-1], use))
        projected.append(use is not None)
    return MeshHierarchy(tuple(meshes), tuple(projected))


def disk_base_mesh():
    """Eight triangles fanned around the centre of the unit disk."""
    theta = 2.0 * np.pi * np.arange(8) / 8.0
    nodes = np.vstack([[0.0, 0.0], np.stack([np.cos(theta), np.sin(theta)], axis=1)])
    tris = np.array([[0, 1 + j, 1 + (j + 1) % 8] for j in range(8)])
    return TriMesh(nodes, tris)


def build_disk_mesh(levels, project_levels=None):
    """Hierarchy of disk meshes; level ``L`` has ``8 * 4**L`` triangles.

    Boundary midpoints are projected radially onto the unit circle on the
    first ``project_levels`` refinements (all of them by default).  Stopping
    the projection at a coarse level keeps the finer levels exact
    refinements of that coarse polygon.
    """
    if levels < 1:
        raise ValueError("levels must be >= 1")
    return build_hierarchy(disk_base_mesh(), levels, project_to_unit_circle,
                           project_levels)


def build_square_mesh(n, origin=(0.0, 0.0), size=1.0):
    """Uniform ``n x n`` grid of the square, each cell cut along the
    diagonal from its lower-left corner."""
    if n < 1:
        raise ValueError("n must be >= 1")
    x = origin[0] + size * np.arange(n + 1) / n
    y = origin[1] + size * np.arange(n + 1) / n
    X, Y = np.meshgrid(x, y)
    nodes = np.stack([X.ravel(), Y.ravel()], axis=1)
    i, j = np.meshgrid(np.arange(n), np.arange(n))
    i = i.ravel()
    j = j.ravel()
    p00 = j * (n + 1) + i
    p10 = p00 + 1
    p01 = p00 + n + 1
    p11 = p01 + 1
    tris = np.concatenate([np.stack([p00, p10, p11], axis=1),
                           np.stack([p00, p11, p01], axis=1)])
    return TriMesh(nodes, tris)


def build_square_hierarchy(levels):
    """Nested hierarchy of the unit square starting from two triangles."""
    return build_hierarchy(build_square_mesh(1), levels)


# -- dual mesh -----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DualMesh:
    """Control volumes built from edge midpoints and one centre per triangle.

    Dual edge ``s`` is the segment ``start[s] -> end[s]`` inside triangle
    ``tri[s]`` separating the control volumes of nodes ``i[s]`` and
    ``j[s]``; ``normal[s]`` is the unit normal pointing out of ``V_i``.
    ``pieces[t, k]`` is the quadrilateral of triangle ``t`` belonging to its
    local vertex ``k``.
    """

    mesh: TriMesh
    rule: str
    centers: np.ndarray
    tri: np.ndarray
    i: np.ndarray
    j: np.ndarray
    start: np.ndarray
    end: np.ndarray
    normal: np.ndarray
    length: np.ndarray
    pieces: np.ndarray
    volumes: np.ndarray

    def control_volume(self, node):
        """Quadrilaterals whose union is the control volume of ``node``."""
        t, k = np.nonzero(self.mesh.triangles == node)
        return self.pieces[t, k]

    def region_halfplanes(self, t):
        """Half-planes ``n . x + c <= 0`` (two per local vertex) cutting the
        piece of each local vertex out of triangle ``t``; arrays (3, 2, 2)
        and (3, 2)."""
        normals = np.empty((3, 2, 2))
        offsets = np.empty((3, 2))
        for k in range(3):
            s_next = 3 * t + k            # separates k and k+1, normal out of k
            s_prev = 3 * t + (k - 1) % 3  # separates k-1 and k, normal out of k-1
            normals[k, 0] = self.normal[s_next]
            offsets[k, 0] = -self.normal[s_next] @ self.start[s_next]
            normals[k, 1] = -self.normal[s_prev]
            offsets[k, 1] = self.normal[s_prev] @ self.start[s_prev]
        return normals, offsets


def circumcenters(corners):
    a, b, c = corners[:, 0], corners[:, 1], corners[:, 2]
    b = b - a
    c = c - a
    d = 2.0 * (b[:, 0] * c[:, 1] - b[:, 1] * c[:, 0])
    bb = (b ** 2).sum(axis=1)
    cc = (c ** 2).sum(axis=1)
    ux = (c[:, 1] * bb - b[:, 1] * cc) / d
    uy = (b[:, 0] * cc - c[:, 0] * bb) / d
    return a + np.stack([ux, uy], axis=1)


def build_dual(mesh, center_rule="barycenter"):
    """Dual (control-volume) mesh with barycentric or circumcentric centres."""
    corners = mesh.corners
    if center_rule == "barycenter":
        centers = corners.mean(axis=1)
    elif center_rule == "circumcenter":
        centers = circumcenters(corners)
        lam = barycentric(centers, corners)
        bad = np.flatnonzero(lam.min(axis=1) < -1e-12)
        if len(bad):
            raise CircumcenterOutsideTriangle(
                f"{len(bad)} triangles have their circumcenter outside "
                f"(first: {bad[0]})")
    else:
        raise ValueError(f"unknown center rule {center_rule!r}")

    nt = mesh.n_triangles
    tris = mesh.triangles
    mids = 0.5 * (corners + np.roll(corners, -1, axis=1))  # mid of (k, k+1)
    start = mids.reshape(-1, 2)
    end = np.repeat(centers, 3, axis=0)
    i = tris.ravel()
    j = np.roll(tris, -1, axis=1).ravel()
    d = end - start
    length = np.linalg.norm(d, axis=1)
    # zero-length segments (circumcentre on an edge) get a zero normal
    safe = np.where(length > 0, length, 1.0)
    normal = np.stack([d[:, 1], -d[:, 0]], axis=1) / safe[:, None]
    toward = mesh.nodes[j] - mesh.nodes[i]
    flip = np.einsum("ij,ij->i", normal, toward) < 0
    normal[flip] *= -1.0

    pieces = np.empty((nt, 3, 4, 2))
    for k in range(3):
        pieces[:, k, 0] = corners[:, k]
        pieces[:, k, 1] = mids[:, k]
        pieces[:, k, 2] = centers
        pieces[:, k, 3] = mids[:, (k - 1) % 3]
    p = pieces
    quad_area = (signed_areas(p[..., 0, :], p[..., 1, :], p[..., 2, :])
                 + signed_areas(p[..., 0, :], p[..., 2, :], p[..., 3, :]))
    volumes = np.zeros(mesh.n_nodes)
    np.add.at(volumes, tris.ravel(), quad_area.ravel())
    return DualMesh(mesh, center_rule, centers, np.repeat(np.arange(nt), 3),
                    i, j, start, end, normal, length, pieces, volumes)


# -- quality -------------------------------------------------------------------

@dataclass(frozen=True)
class MeshQuality:
    gamma: float
    eta_max: float
    eta_star_min: float
    eta_star_max: float
    nu_star: float
    unadapted: bool
    n_degenerate: int = 0
    eta_min_per_triangle: np.ndarray = field(default=None, repr=False)


def _enclosing_over_inscribed(corners):
    e = np.stack([corners[:, (k + 1) % 3] - corners[:, k] for k in range(3)], axis=1)
    lengths = np.linalg.norm(e, axis=2)
    area = np.abs(signed_areas(corners[:, 0], corners[:, 1], corners[:, 2]))
    r_in = 2.0 * area / lengths.sum(axis=1)
    r_circ = lengths.prod(axis=1) / (4.0 * area)
    angles = interior_angles(corners)
    obtuse = angles.max(axis=1) >= np.pi / 2
    r_enc = np.where(obtuse, 0.5 * lengths.max(axis=1), r_circ)
    return r_enc / r_in


def eta_max(corners):
    """1/sin of the angle closest to 0 or pi over all triangles."""
    s = np.sin(interior_angles(corners))
    return float((1.0 / s.min(axis=1)).max())


def deformed_quality(mesh, F_nodal, image_volumes=None, strict=False):
    """Quality of ``mesh`` in the metric induced by the nodal map ``F_nodal``.

    The deformed triangulation keeps the connectivity of ``mesh`` and moves
    node ``i`` to ``F_nodal[i]``.  ``image_volumes`` are the areas of the
    images ``F(K)`` (for a fine-scale ``F``); when omitted ``F`` is taken to
    be piecewise linear on ``mesh`` itself.
    """
    F_nodal = np.asarray(F_nodal, dtype=float)
    img = F_nodal[mesh.triangles]
    img_area = signed_areas(img[:, 0], img[:, 1], img[:, 2])
    scale = np.max(np.abs(img - img.mean(axis=1, keepdims=True)), axis=(1, 2)) ** 2
    degenerate = np.abs(img_area) <= 1e-14 * np.maximum(scale, 1e-300)
    if strict and degenerate.any():
        raise DegenerateImageTriangle(
            f"{int(degenerate.sum())} image triangles are collinear")
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.sin(interior_angles(img))
        eta_min_k = 1.0 / s.max(axis=1)
        eta_star_max = float(np.max(1.0 / s.min(axis=1)))
    eta_min_k[degenerate] = np.inf
    if degenerate.any():
        eta_star_max = np.inf
    if image_volumes is None:
        nu = np.ones(mesh.n_triangles)
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            nu = np.abs(img_area) / np.abs(np.asarray(image_volumes, dtype=float))
    return MeshQuality(
        gamma=float(_enclosing_over_inscribed(mesh.corners).max()),
        eta_max=eta_max(mesh.corners),
        eta_star_min=float(eta_min_k.max()),
        eta_star_max=eta_star_max,
        nu_star=float(np.max(nu)),
        unadapted=bool((img_area <= 0).any()),
        n_degenerate=int(degenerate.sum()),
        eta_min_per_triangle=eta_min_k,
    )
