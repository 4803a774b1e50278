"""P1 finite elements: assembly of stiffness and load, Dirichlet
elimination, sparse solvers and spectral diagnostics."""

import io
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.io
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (DegenerateTriangle, NoConvergence, NonSPDCoefficient,
                     SingularOperator)
from .fileio import atomic_write, write_csv

DENSE_LIMIT = 2000


@dataclass(frozen=True, eq=False)
class NodalField:
    """One value (or one row of values) per mesh node."""

    values: np.ndarray
    mesh: object = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if self.mesh is not None and len(values) != self.mesh.n_nodes:
            raise ValueError("length of values must equal the node count")
        object.__setattr__(self, "values", values)

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def __len__(self):
        return len(self.values)

    def to_csv(self, path):
        return write_nodal_csv(path, self.values)


@dataclass(frozen=True)
class SolveReport:
    iterations: int
    residual: float
    wall_time: float
    method: str = "cg"


@dataclass(frozen=True, eq=False)
class SparseOperator:
    """Square CSR operator with Dirichlet elimination.

    ``matrix`` has the rows and columns of the ``boundary`` unknowns replaced
    by the identity; ``full`` is the matrix before elimination.
    """

    matrix: sp.csr_matrix
    full: sp.csr_matrix
    symmetric: bool
    boundary: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @classmethod
    def from_full(cls, full, boundary, symmetric):
        full = sp.csr_matrix(full)
        full.sum_duplicates()
        n = full.shape[0]
        boundary = np.unique(np.asarray(boundary, dtype=np.int64))
        keep = np.ones(n)
        keep[boundary] = 0.0
        D = sp.diags(keep)
        eliminated = D @ full @ D + sp.diags(1.0 - keep)
        eliminated = sp.csr_matrix(eliminated)
        eliminated.eliminate_zeros()
        eliminated.sort_indices()
        return cls(eliminated, full, bool(symmetric), boundary)

    @property
    def dimension(self):
        return self.matrix.shape[0]

    @property
    def indptr(self):
        return self.matrix.indptr

    @property
    def indices(self):
        return self.matrix.indices

    @property
    def data(self):
        return self.matrix.data

    @property
    def interior(self):
        mask = np.ones(self.dimension, dtype=bool)
        mask[self.boundary] = False
        return np.flatnonzero(mask)

    def reduced(self):
        """Interior block of the operator."""
        idx = self.interior
        return sp.csr_matrix(self.full[idx][:, idx])

    def symmetry_defect(self):
        A = self.matrix
        d = abs(A - A.T)
        return float(d.max()) / max(float(abs(A).max()), 1e-300) if d.nnz else 0.0

    def rhs(self, b, boundary_values=None):
        """Right-hand side of the eliminated system for load ``b`` and
        Dirichlet data ``boundary_values`` on the boundary unknowns."""
        b = np.array(b, dtype=float, copy=True)
        if boundary_values is None:
            b[self.boundary] = 0.0
            return b
        g = np.zeros((self.dimension,) + b.shape[1:])
        g[self.boundary] = np.asarray(boundary_values, dtype=float)
        b -= self.full @ g
        b[self.boundary] = g[self.boundary]
        return b

    def to_matrix_market(self, path, eliminated=True):
        return write_matrix_market(path, self.matrix if eliminated else self.full)


# -- element level -----------------------------------------------------------

def element_gradients(mesh):
    """Gradients of the three hat functions on each triangle, (T, 3, 2)."""
    c = mesh.corners
    E = np.stack([c[:, 1] - c[:, 0], c[:, 2] - c[:, 0]], axis=1)
    det = E[:, 0, 0] * E[:, 1, 1] - E[:, 0, 1] * E[:, 1, 0]
    if np.any(det == 0):
        raise DegenerateTriangle(f"{int((det == 0).sum())} triangles have zero area")
    inv = np.empty_like(E)
    inv[:, 0, 0] = E[:, 1, 1] / det
    inv[:, 0, 1] = -E[:, 0, 1] / det
    inv[:, 1, 0] = -E[:, 1, 0] / det
    inv[:, 1, 1] = E[:, 0, 0] / det
    # grad v = E^-1 (v_b - v_a, v_c - v_a): columns of E^-1 are grad(phi_b), grad(phi_c)
    g1 = inv[:, :, 0]
    g2 = inv[:, :, 1]
    return np.stack([-g1 - g2, g1, g2], axis=1)


def element_stiffness(mesh, a):
    """Element matrices Vol(K) grad(phi_i)^T a_K grad(phi_j), (T, 3, 3)."""
    G = element_gradients(mesh)
    A = a.per_triangle if hasattr(a, "per_triangle") else np.asarray(a)
    return mesh.areas[:, None, None] * np.einsum("tik,tkl,tjl->tij", G, A, G)


def scatter(mesh, local):
    """Sum element matrices (T, 3, 3) into a global CSR matrix, in triangle
    order."""
    tris = mesh.triangles
    rows = np.repeat(tris, 3, axis=1).ravel()
    cols = np.tile(tris, (1, 3)).ravel()
    n = mesh.n_nodes
    A = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return A


def assemble_stiffness(mesh, a, boundary=None):
    """P1 stiffness of ``a`` with Dirichlet elimination on ``boundary``
    (the mesh boundary by default)."""
    if len(a) != mesh.n_triangles:
        raise ValueError("coefficient field and mesh triangle counts differ")
    if hasattr(a, "validate"):
        a.validate()
    elif not np.all(np.linalg.eigvalsh(np.asarray(a)) > 0):
        raise NonSPDCoefficient("coefficient tensor not SPD")
    full = scatter(mesh, element_stiffness(mesh, a))
    boundary = mesh.boundary if boundary is None else boundary
    return SparseOperator.from_full(full, boundary, symmetric=True)


def assemble_operator(mesh, B, boundary=None):
    """P1 operator of a general (possibly nonsymmetric) per-triangle matrix
    field: entry (i, j) is sum_K Vol(K) grad(phi_i)^T B_K grad(phi_j)."""
    B = np.asarray(getattr(B, "per_triangle", B), dtype=float)
    if len(B) != mesh.n_triangles:
        raise ValueError("matrix field and mesh triangle counts differ")
    symmetric = bool(np.array_equal(B, np.swapaxes(B, 1, 2)))
    full = scatter(mesh, element_stiffness(mesh, B))
    boundary = mesh.boundary if boundary is None else boundary
    return SparseOperator.from_full(full, boundary, symmetric=symmetric)


def mass_matrix(mesh):
    """Consistent P1 mass matrix."""
    local = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0
    return scatter(mesh, mesh.areas[:, None, None] * local[None])


def assemble_load(mesh, g=1.0, per_triangle=False):
    """Load vector (phi_i, g).

    ``g`` is a constant, nodal values (integrated exactly as a P1 function)
    or, with ``per_triangle``, one constant per triangle.
    """
    g_arr = np.asarray(g, dtype=float)
    if per_triangle or g_arr.ndim == 0:
        gt = np.broadcast_to(g_arr, (mesh.n_triangles,))
        b = np.zeros(mesh.n_nodes)
        np.add.at(b, mesh.triangles.ravel(), np.repeat(mesh.areas * gt / 3.0, 3))
        return b
    if len(g_arr) != mesh.n_nodes:
        raise ValueError("nodal g must have one value per node")
    return mass_matrix(mesh) @ g_arr


def gradient_field(mesh, v):
    """Per-triangle gradient of the P1 interpolant of ``v``; (T, 2) for
    scalar nodal values, (T, 2, k) for ``k`` columns."""
    v = np.asarray(v, dtype=float)
    G = element_gradients(mesh)
    vals = v[mesh.triangles]
    if v.ndim == 1:
        return np.einsum("tkd,tk->td", G, vals)
    return np.einsum("tkd,tkc->tdc", G, vals)


# -- solvers -----------------------------------------------------------------

def default_maxiter(n):
    return int(20 * np.sqrt(n) + 1000)


def pcg(A, b, tol, maxiter=None, x0=None):
    """Jacobi-preconditioned conjugate gradients; returns (x, it, relres)."""
    n = A.shape[0]
    maxiter = default_maxiter(n) if maxiter is None else maxiter
    diag = A.diagonal()
    if np.any(diag <= 0):
        raise SingularOperator("non-positive diagonal in a symmetric system")
    inv_d = 1.0 / diag
    bnorm = np.linalg.norm(b)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    if bnorm == 0.0:
        return np.zeros(n), 0, 0.0
    r = b - A @ x
    z = inv_d * r
    p = z.copy()
    rz = r @ z
    res = np.linalg.norm(r) / bnorm
    it = 0
    while res > tol:
        if it >= maxiter:
            raise NoConvergence(
                f"CG did not converge in {maxiter} iterations (residual {res:.3e})",
                residual=res, iterations=it)
        Ap = A @ p
        pAp = p @ Ap
        if pAp <= 0:
            raise SingularOperator("CG breakdown: operator not positive definite")
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        z = inv_d * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
        it += 1
        res = np.linalg.norm(r) / bnorm
    res = np.linalg.norm(b - A @ x) / bnorm
    return x, it, res


def bicgstab(A, b, tol, maxiter=None):
    """Jacobi-preconditioned BiCGStab (scipy) with a true-residual check."""
    n = A.shape[0]
    maxiter = default_maxiter(n) if maxiter is None else maxiter
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), 0, 0.0
    diag = A.diagonal()
    if np.any(diag == 0):
        raise SingularOperator("zero diagonal entry")
    M = sp.diags(1.0 / diag)
    count = [0]

    def cb(_):
        count[0] += 1

    x, info = spla.bicgstab(A, b, rtol=tol, atol=0.0, maxiter=maxiter, M=M,
                            callback=cb)
    res = np.linalg.norm(b - A @ x) / bnorm
    if info != 0 or res > tol * 1.0001 or not np.isfinite(res):
        raise NoConvergence(
            f"BiCGStab did not converge (info {info}, residual {res:.3e})",
            residual=res, iterations=count[0])
    return x, count[0], res


def direct_solve(A, b):
    A = sp.csc_matrix(A)
    try:
        if A.shape[0] <= DENSE_LIMIT // 4:
            x = scipy.linalg.solve(A.toarray(), b)
        else:
            x = spla.splu(A).solve(b)
    except (RuntimeError, scipy.linalg.LinAlgError) as exc:
        raise SingularOperator(f"direct factorisation failed: {exc}") from exc
    if not np.all(np.isfinite(x)):
        raise SingularOperator("direct solve produced non-finite values")
    return x


def solve_dirichlet(A, b, tol=1e-10, method="auto", boundary_values=None,
                    maxiter=None, mesh=None):
    """Solve the Dirichlet-eliminated system ``A`` for load ``b``.

    ``method`` is ``cg``, ``bicgstab``, ``direct`` or ``auto`` (CG for
    symmetric and BiCGStab for nonsymmetric operators).  ``b`` may have
    several columns.  Boundary unknowns receive ``boundary_values`` (zero by
    default) exactly.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    t0 = time.perf_counter()
    rhs = A.rhs(b, boundary_values)
    if method == "auto":
        method = "cg" if A.symmetric else "bicgstab"
    cols = rhs.reshape(rhs.shape[0], -1)
    idx = A.interior
    K = A.matrix[idx][:, idx] if len(A.boundary) else A.matrix
    out = cols.copy()
    its = []
    resid = []
    if method == "direct":
        if len(idx):
            out[idx] = direct_solve(K, cols[idx]).reshape(len(idx), -1)
        its = [0]
        full_res = A.matrix @ out - cols
        denom = np.maximum(np.linalg.norm(cols, axis=0), 1e-300)
        resid = list(np.linalg.norm(full_res, axis=0) / denom)
        resid = [r if np.linalg.norm(cols[:, c]) > 0 else 0.0
                 for c, r in enumerate(resid)]
    else:
        solver = {"cg": pcg, "bicgstab": bicgstab}.get(method)
        if solver is None:
            raise ValueError(f"unknown method {method!r}")
        for c in range(cols.shape[1]):
            if len(idx):
                x, it, _ = solver(K, cols[idx, c], tol, maxiter)
                out[idx, c] = x
            else:
                it = 0
            its.append(it)
            bn = np.linalg.norm(cols[:, c])
            resid.append(float(np.linalg.norm(A.matrix @ out[:, c] - cols[:, c]) / bn)
                         if bn > 0 else 0.0)
    x = out.reshape(rhs.shape)
    report = SolveReport(int(max(its)), float(max(resid)),
                         time.perf_counter() - t0, method)
    return NodalField(x, mesh if x.ndim == 1 else None), report


# -- spectra -----------------------------------------------------------------

def _as_matrix(A):
    if isinstance(A, SparseOperator):
        return A.reduced(), A.symmetric
    M = sp.csr_matrix(A) if sp.issparse(A) else np.asarray(A, dtype=float)
    sym = (abs(M - M.T).max() <= 1e-13 * abs(M).max()) if M.shape[0] else True
    return M, bool(sym)


def condition_number(A, dense_limit=DENSE_LIMIT):
    """Spectral condition number: eigenvalue ratio for symmetric operators,
    singular-value ratio otherwise.  Operators carrying a Dirichlet
    elimination are measured on their interior block."""
    M, sym = _as_matrix(A)
    n = M.shape[0]
    if n == 0:
        return 1.0
    if n <= dense_limit:
        D = M.toarray() if sp.issparse(M) else M
        s = np.linalg.eigvalsh(0.5 * (D + D.T)) if sym else np.linalg.svd(D, compute_uv=False)
        lo = s.min() if sym else s[-1]
        hi = np.abs(s).max()
        if sym and lo <= 0 or lo <= hi * 1e-15:
            raise SingularOperator(f"operator is singular (smallest value {lo:.3e})")
        return float(hi / lo)
    M = sp.csc_matrix(M)
    v0 = np.ones(n) / np.sqrt(n)
    try:
        if sym:
            hi = spla.eigsh(M, k=1, which="LA", return_eigenvectors=False,
                            v0=v0, tol=1e-6)[0]
            lo = spla.eigsh(M, k=1, sigma=0.0, which="LM",
                            return_eigenvectors=False, v0=v0, tol=1e-6)[0]
        else:
            hi = spla.svds(M, k=1, which="LM", return_singular_vectors=False,
                           v0=v0, tol=1e-6)[0]
            lu = spla.splu(M)
            op = spla.LinearOperator((n, n), matvec=lu.solve,
                                     rmatvec=lambda y: lu.solve(y, trans="T"))
            lo = 1.0 / spla.svds(op, k=1, which="LM", return_singular_vectors=False,
                                 v0=v0, tol=1e-6)[0]
    except (RuntimeError, spla.ArpackNoConvergence) as exc:
        raise SingularOperator(f"spectral estimate failed: {exc}") from exc
    if lo <= 0:
        raise SingularOperator(f"operator is singular (smallest value {lo:.3e})")
    return float(hi / lo)


# -- export ------------------------------------------------------------------

def write_matrix_market(path, A):
    buf = io.BytesIO()
    scipy.io.mmwrite(buf, sp.coo_matrix(A), precision=17)
    return atomic_write(path, buf.getvalue())


def write_nodal_csv(path, values):
    values = np.asarray(values, dtype=float)
    return write_csv(path, ["node_index", "value"],
                     ((i, float(v)) for i, v in enumerate(values)))
