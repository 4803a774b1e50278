"""Vectorised planar geometry helpers: barycentric coordinates, point
location, half-plane clipping and segment/triangle overlaps."""

import numpy as np
from scipy.spatial import cKDTree


def signed_areas(p0, p1, p2):
    """Signed area of the triangles (p0, p1, p2); arrays of shape (..., 2)."""
    e1 = p1 - p0
    e2 = p2 - p0
    return 0.5 * (e1[..., 0] * e2[..., 1] - e1[..., 1] * e2[..., 0])


def barycentric(points, corners):
    """Barycentric coordinates of ``points`` (P, 2) with respect to the
    triangles ``corners`` (P, 3, 2), matched row by row."""
    a, b, c = corners[:, 0], corners[:, 1], corners[:, 2]
    det = signed_areas(a, b, c)
    with np.errstate(divide="ignore", invalid="ignore"):
        l1 = signed_areas(points, b, c) / det
        l2 = signed_areas(a, points, c) / det
    return np.stack([l1, l2, 1.0 - l1 - l2], axis=-1)


def interior_angles(corners):
    """Interior angles (T, 3) of triangles given as (T, 3, 2); angle k sits at
    corner k."""
    out = np.empty(corners.shape[:-1])
    for k in range(3):
        u = corners[:, (k + 1) % 3] - corners[:, k]
        v = corners[:, (k - 1) % 3] - corners[:, k]
        cross = np.abs(u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0])
        dot = np.einsum("ij,ij->i", u, v)
        out[:, k] = np.arctan2(cross, dot)
    return out


class TriangleLocator:
    """Locate points in a (possibly distorted) triangulation.

    Candidates come from a KD-tree on triangle centroids; points that are not
    found among them fall back to a brute-force scan.  Points outside every
    triangle are attributed to the triangle with the least negative
    barycentric coordinate.
    """

    def __init__(self, nodes, triangles, n_candidates=12):
        self.nodes = np.asarray(nodes, dtype=float)
        self.triangles = np.asarray(triangles)
        self.corners = self.nodes[self.triangles]
        self.tree = cKDTree(self.corners.mean(axis=1))
        self.n_candidates = min(n_candidates, len(self.triangles))

    def locate(self, points, tol=1e-12):
        """Return ``(tri, bary, inside)`` for each point.

        ``bary`` are the (unclamped) barycentric coordinates in ``tri``;
        ``inside`` is False when the point lies outside the triangulation by
        more than ``tol`` in barycentric units.
        """
        points = np.asarray(points, dtype=float)
        npts = len(points)
        best_tri = np.full(npts, -1)
        best_score = np.full(npts, -np.inf)
        best_bary = np.zeros((npts, 3))

        _, cand = self.tree.query(points, k=self.n_candidates)
        cand = np.atleast_2d(cand).reshape(npts, -1)
        for col in range(cand.shape[1]):
            tri = cand[:, col]
            bary = barycentric(points, self.corners[tri])
            score = bary.min(axis=1)
            better = score > best_score
            best_tri[better] = tri[better]
            best_score[better] = score[better]
            best_bary[better] = bary[better]

        missing = np.flatnonzero(best_score < -tol)
        if len(missing):
            for start in range(0, len(missing), 256):
                idx = missing[start:start + 256]
                p = points[idx][:, None, :]
                c = self.corners[None, :, :, :]
                a, b, cc = c[..., 0, :], c[..., 1, :], c[..., 2, :]
                det = signed_areas(a, b, cc)
                with np.errstate(divide="ignore", invalid="ignore"):
                    l1 = signed_areas(p, b, cc) / det
                    l2 = signed_areas(a, p, cc) / det
                score = np.minimum(np.minimum(l1, l2), 1.0 - l1 - l2)
                score = np.where(np.isfinite(score), score, -np.inf)
                j = np.argmax(score, axis=1)
                s = score[np.arange(len(idx)), j]
                better = s > best_score[idx]
                sel = idx[better]
                best_tri[sel] = j[better]
                best_score[sel] = s[better]
                best_bary[sel] = barycentric(points[sel], self.corners[j[better]])
        return best_tri, best_bary, best_score >= -tol


def clip_halfplane(poly, count, normal, offset):
    """Clip convex polygons by the half-planes ``normal . x + offset <= 0``.

    ``poly`` is (B, M, 2) with ``count`` (B,) valid vertices per row; the
    result has room for ``M + 1`` vertices.
    """
    nb, m, _ = poly.shape
    out = np.zeros((nb, m + 1, 2))
    out_count = np.zeros(nb, dtype=int)
    rows = np.arange(nb)
    s = np.einsum("bmk,bk->bm", poly, normal) + offset[:, None]
    for k in range(m):
        active = k < count
        nxt = np.where(k + 1 < count, k + 1, 0)
        p = poly[:, k]
        q = poly[rows, nxt]
        sp = s[:, k]
        sq = s[rows, nxt]
        keep = active & (sp <= 0)
        out[rows[keep], out_count[keep]] = p[keep]
        out_count += keep
        cross = active & ((sp <= 0) != (sq <= 0))
        with np.errstate(divide="ignore", invalid="ignore"):
            t = sp / (sp - sq)
            x = p + t[:, None] * (q - p)
        out[rows[cross], out_count[cross]] = x[cross]
        out_count += cross
    return out, out_count


def polygon_area_centroid(poly, count):
    """Area and centroid of padded polygons (B, M, 2)."""
    nb, m, _ = poly.shape
    rows = np.arange(nb)
    area = np.zeros(nb)
    cx = np.zeros(nb)
    cy = np.zeros(nb)
    for k in range(m):
        active = k < count
        nxt = np.where(k + 1 < count, k + 1, 0)
        p = poly[:, k]
        q = poly[rows, nxt]
        cr = np.where(active, p[:, 0] * q[:, 1] - q[:, 0] * p[:, 1], 0.0)
        area += cr
        cx += (p[:, 0] + q[:, 0]) * cr
        cy += (p[:, 1] + q[:, 1]) * cr
    area *= 0.5
    with np.errstate(divide="ignore", invalid="ignore"):
        cent = np.stack([cx, cy], axis=1) / (6.0 * area[:, None])
    cent[count < 3] = np.nan
    return area, cent


def segment_triangle_overlap(p, q, corners):
    """Length of the part of the segments ``p -> q`` (B, 2) lying inside the
    triangles ``corners`` (B, 3, 2) (CCW), matched row by row."""
    d = q - p
    t0 = np.zeros(len(p))
    t1 = np.ones(len(p))
    for k in range(3):
        a = corners[:, k]
        b = corners[:, (k + 1) % 3]
        e = b - a
        # inward normal of a CCW triangle edge
        n = np.stack([-e[:, 1], e[:, 0]], axis=1)
        num = np.einsum("ij,ij->i", n, p - a)
        den = np.einsum("ij,ij->i", n, d)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = -num / den
        entering = den > 0
        leaving = den < 0
        t0 = np.where(entering, np.maximum(t0, t), t0)
        t1 = np.where(leaving, np.minimum(t1, t), t1)
        parallel_out = (den == 0) & (num < 0)
        t1 = np.where(parallel_out, -1.0, t1)
    seg_len = np.linalg.norm(d, axis=1)
    return np.clip(t1 - t0, 0.0, None) * seg_len
