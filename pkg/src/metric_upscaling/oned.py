"""One-dimensional laminar media.

For a potential ``V`` on (0, 1) the operator
``-1/2 e^{2V} (e^{-2V} w')' = f`` with ``w(0) = w(1) = 0`` is solved in
closed form.  Cascades ``V_n(x) = sum_p U(rho^p x mod 1)`` produce the
binomial multifractal measures analysed by the spectrum functions below.
Every integral is an exact sum over piecewise-constant cells.
"""

from dataclasses import dataclass
from math import comb

import numpy as np

from .errors import GridIncompatible


@dataclass(frozen=True, eq=False)
class Grid1D:
    """Piecewise-constant values on ``m`` equal cells of (0, 1)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.atleast_1d(np.asarray(self.values, dtype=float))
        if v.ndim != 1 or len(v) < 1:
            raise ValueError("a grid needs at least one cell")
        object.__setattr__(self, "values", v)

    @property
    def m(self):
        return len(self.values)

    @property
    def edges(self):
        return np.linspace(0.0, 1.0, self.m + 1)

    def refine(self, factor):
        return Grid1D(np.repeat(self.values, factor))


def _as_grid(v, m=None):
    if isinstance(v, Grid1D):
        return v
    v = np.asarray(v, dtype=float)
    if v.ndim == 0:
        return Grid1D(np.full(m or 1, float(v)))
    return Grid1D(v)


@dataclass(frozen=True, eq=False)
class DyadicMeasure:
    """Probability masses of the equal cells of (0, 1)."""

    masses: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.masses, dtype=float)
        if np.any(w < 0):
            raise ValueError("masses must be nonnegative")
        object.__setattr__(self, "masses", w)

    @property
    def depth(self):
        n = int(round(np.log2(len(self.masses))))
        return n if 2 ** n == len(self.masses) else None

    def cdf(self):
        """CDF at the cell edges (starts at 0, ends at the total mass)."""
        return np.concatenate([[0.0], np.cumsum(self.masses)])

    def coarsen(self, depth):
        """Masses of the dyadic cells of a coarser depth."""
        n = self.depth
        if n is None or depth > n:
            raise GridIncompatible("cannot coarsen to a finer depth")
        return DyadicMeasure(self.masses.reshape(2 ** depth, -1).sum(axis=1))


def measures(V):
    """``mu_plus``, ``mu_minus`` (densities proportional to e^{2V}, e^{-2V})
    and ``D = 1 / (int e^{2V} int e^{-2V})``."""
    V = _as_grid(V)
    # shift for overflow safety: D and the normalised measures are invariant
    v = V.values - 0.5 * (V.values.max() + V.values.min())
    ep = np.exp(2.0 * v)
    em = np.exp(-2.0 * v)
    D = 1.0 / (ep.mean() * em.mean())
    return DyadicMeasure(ep / ep.sum()), DyadicMeasure(em / em.sum()), float(D)


@dataclass(frozen=True)
class ExplicitSolution:
    x: np.ndarray
    w: np.ndarray
    flux: float


def solve_explicit(V, f=1.0):
    """Exact solution at the cell edges.

    With ``e^{-2V} w' = c - 2 int_0^x f e^{-2V}`` the cell integrals are
    closed form, and ``c`` follows from ``w(1) = 0``.
    """
    V = _as_grid(V)
    f = _as_grid(f, V.m)
    if f.m != V.m:
        if f.m == 1:
            f = Grid1D(np.full(V.m, f.values[0]))
        elif f.m % V.m == 0:
            V = V.refine(f.m // V.m)
        elif V.m % f.m == 0:
            f = f.refine(V.m // f.m)
        else:
            raise GridIncompatible("V and f grids do not align")
    m = V.m
    dx = 1.0 / m
    ep = np.exp(2.0 * V.values)
    em = np.exp(-2.0 * V.values)
    fv = f.values
    phi = np.concatenate([[0.0], np.cumsum(fv * em * dx)])[:-1]  # int_0^{x_k} f e^{-2V}
    A = ep * dx
    B = 2.0 * ep * phi * dx + fv * dx ** 2
    c = B.sum() / A.sum()
    incr = c * A - B
    w = np.concatenate([[0.0], np.cumsum(incr)])
    w[-1] = 0.0 if abs(w[-1]) < 1e-12 * max(np.abs(w).max(), 1e-300) else w[-1]
    return ExplicitSolution(V.edges, w, float(c))


def cascade(U, rho=2, n=1, cells=None):
    """``V_n(x) = sum_{p < n} U(rho^p x mod 1)`` on ``rho^(n-1) m`` cells (or
    on ``cells`` cells, which must be a multiple of that count)."""
    U = _as_grid(U)
    if int(rho) != rho or rho < 2:
        raise GridIncompatible("rho must be an integer >= 2")
    if n < 1:
        raise GridIncompatible("depth must be >= 1")
    rho = int(rho)
    N = rho ** (n - 1) * U.m
    j = np.arange(N)
    V = np.zeros(N)
    for p in range(n):
        V += U.values[(j // rho ** (n - 1 - p)) % U.m]
    if cells is not None:
        if cells % N:
            raise GridIncompatible(f"{cells} cells do not refine the {N}-cell cascade grid")
        V = np.repeat(V, cells // N)
    return Grid1D(V)


def binomial_measure(m0, n):
    """Cylinder of digits ``x_1 ... x_n`` gets mass ``prod m_{x_i}``."""
    if not 0.0 < m0 < 1.0:
        raise ValueError("m0 must lie in (0, 1)")
    w = np.ones(1)
    pair = np.array([m0, 1.0 - m0])
    for _ in range(n):
        w = np.kron(w, pair)
    return DyadicMeasure(w)


def self_similarity_residual(measure, m0):
    """Max residual of ``mu(I) = m0 mu(2I) + m1 mu(2I - 1)`` over the cells
    of depth ``n`` (one of the two images lies outside (0, 1) and has no
    mass)."""
    w = measure.masses
    n = measure.depth
    if n is None or n < 1:
        raise GridIncompatible("need a dyadic measure of depth >= 1")
    sub = measure.coarsen(n - 1).masses  # 2I is a depth n-1 cell
    rhs = np.concatenate([m0 * sub, (1.0 - m0) * sub])
    return float(np.abs(w - rhs).max())


def holder_exponents(measure, xs):
    """``-ln mu(I_n(x)) / (n ln 2)`` for the depth-n cylinder of each x."""
    n = measure.depth
    xs = np.asarray(xs, dtype=float)
    idx = np.clip((xs * 2 ** n).astype(np.int64), 0, 2 ** n - 1)
    return -np.log(measure.masses[idx]) / (n * np.log(2.0))


@dataclass(frozen=True)
class SpectrumTable:
    q: np.ndarray
    c: np.ndarray
    alpha: np.ndarray
    c_star: np.ndarray

    def rows(self):
        out = [("c", float(q), float(v)) for q, v in zip(self.q, self.c)]
        out += [("c_star", float(a), float(v)) for a, v in zip(self.alpha, self.c_star)]
        return out


def c_function(m0, q):
    q = np.asarray(q, dtype=float)
    return 1.0 - np.log2(m0 ** q + (1.0 - m0) ** q)


def spectrum(m0, q_grid, alpha_grid):
    """``c(q) = 1 - log2(m0^q + m1^q)`` and its Legendre transform
    ``c*(alpha) = min_q (q alpha - c(q))`` over ``q_grid``.  Exponents
    outside ``[-log2 max(m), -log2 min(m)]`` carry ``-inf``."""
    q = np.asarray(q_grid, dtype=float)
    alpha = np.asarray(alpha_grid, dtype=float)
    c = c_function(m0, q)
    c_star = np.min(q[None, :] * alpha[:, None] - c[None, :], axis=1)
    m1 = 1.0 - m0
    lo = -np.log2(max(m0, m1))
    hi = -np.log2(min(m0, m1))
    tol = 1e-12
    c_star = np.where((alpha < lo - tol) | (alpha > hi + tol), -np.inf, c_star)
    return SpectrumTable(q, c, alpha, c_star)


def legendre_exact(m0, alpha):
    """Closed form of ``c*``: for ``alpha`` attained by a fraction ``t`` of
    ones, ``c* = H(t) - 1`` with ``H`` the binary entropy in bits."""
    m1 = 1.0 - m0
    a0 = -np.log2(m0)
    a1 = -np.log2(m1)
    alpha = np.asarray(alpha, dtype=float)
    t = (alpha - a0) / (a1 - a0)
    with np.errstate(divide="ignore", invalid="ignore"):
        H = -(t * np.log2(t) + (1 - t) * np.log2(1 - t))
    H = np.where((t == 0) | (t == 1), 0.0, H)
    return np.where((t < 0) | (t > 1), -np.inf, H - 1.0)


def large_deviation_rate(m0, n, alpha, eps):
    """``(1/n) log2 P(|alpha_n(x) - alpha| < eps)`` for uniform ``x``, computed
    exactly by counting the cylinders with ``l`` ones."""
    m1 = 1.0 - m0
    ell = np.arange(n + 1)
    a_n = -((n - ell) * np.log2(m0) + ell * np.log2(m1)) / n
    sel = np.abs(a_n - alpha) < eps
    if not sel.any():
        return -np.inf
    logs = np.array([np.log2(float(comb(n, int(k)))) for k in ell[sel]]) - n
    top = logs.max()
    return float((top + np.log2(np.sum(2.0 ** (logs - top)))) / n)


def measure_coordinate_solve(mu_plus, mu_minus, f=1.0):
    """Solve ``-1/2 d/dmu_- d/dmu_+ psi = f`` with ``psi(0) = psi(1) = 0`` for
    measures with uniform density inside each cell; values at the cell
    edges."""
    p = mu_plus.masses
    q = mu_minus.masses
    f = _as_grid(f, len(p)).values
    if len(f) != len(p):
        f = np.repeat(f, len(p) // len(f))
    phi = np.concatenate([[0.0], np.cumsum(f * q)])[:-1]
    B = p * (2.0 * phi + f * q)
    c = B.sum() / p.sum()
    psi = np.concatenate([[0.0], np.cumsum(c * p - B)])
    return psi


def convergence_experiment(U, rho=2, f=1.0, n_list=(4, 8, 12), n_ref=None):
    """Sup distance at the cell edges of each ``V_n`` between ``D(V_n) w(V_n)``
    and the solution ``psi`` of the limit problem in the measures of
    ``V_{n_ref}``."""
    U = _as_grid(U)
    n_ref = max(n_list) + 4 if n_ref is None else n_ref
    if n_ref <= max(n_list):
        raise ValueError("n_ref must exceed every depth in n_list")
    V_ref = cascade(U, rho, n_ref)
    mp, mm, _ = measures(V_ref)
    psi = measure_coordinate_solve(mp, mm, f)
    rows = []
    for n in n_list:
        V = cascade(U, rho, n)
        sol = solve_explicit(V, f)
        _, _, D = measures(V)
        stride = (len(psi) - 1) // V.m
        dist = np.abs(D * sol.w - psi[::stride]).max()
        rows.append((n, float(dist)))
    return rows


def cdf_distance(mu, nu):
    """Sup distance between two CDFs on a common dyadic refinement."""
    a = mu.cdf()
    b = nu.cdf()
    if len(a) > len(b):
        a, b = b, a
    stride = (len(b) - 1) // (len(a) - 1)
    return float(np.abs(a - b[::stride]).max())
