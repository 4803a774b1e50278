"""Piecewise-constant conductivity fields on a triangulation.

Every generator samples its medium at the fine-triangle barycenters and
returns a :class:`CoefficientField` holding one symmetric 2x2 tensor per
triangle.  Random media draw from a counter-based generator (Philox) keyed
by the seed; each random table (layer, lattice, mode set) has its own
stream and entry ``i`` of a table is the ``i``-th draw of that stream, so a
table can be regenerated in any order or in pieces.
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import ConfigError, NonSPDCoefficient
from .fileio import write_csv

KINDS = ("trigonometric", "channel", "fourier", "fractal", "percolation",
         "raster", "constant", "laminar")

TRIG_SCALES = (1 / 5, 1 / 13, 1 / 17, 1 / 31, 1 / 65)

DEFAULTS = {
    "trigonometric": {"scales": TRIG_SCALES},
    "channel": {"conductivity": 100.0, "background": (0.5, 2.0),
                "width": None, "width_layers": 2, "band": 0.5},
    "fourier": {"R": 6, "amplitude": 0.3, "norm": "max", "symmetric_pairs": False},
    "fractal": {"n": 5, "gamma": 2.0},
    "percolation": {"gamma": 4.0, "sites": 64},
    "raster": {"path": None, "extent": None},
    "constant": {"value": 1.0},
    "laminar": {"values": (1.0, 4.0), "period": 1.0 / 32, "axis": 0},
}


@dataclass(frozen=True, eq=False)
class CoefficientField:
    """One symmetric positive definite 2x2 tensor per triangle."""

    per_triangle: np.ndarray

    def __post_init__(self):
        A = np.ascontiguousarray(self.per_triangle, dtype=float)
        if A.ndim != 3 or A.shape[1:] != (2, 2):
            raise ValueError("per_triangle must have shape (T, 2, 2)")
        A.setflags(write=False)
        object.__setattr__(self, "per_triangle", A)

    @classmethod
    def scalar(cls, values):
        values = np.asarray(values, dtype=float)
        A = np.zeros((len(values), 2, 2))
        A[:, 0, 0] = values
        A[:, 1, 1] = values
        return cls(A)

    def __len__(self):
        return len(self.per_triangle)

    @cached_property
    def eigenvalues(self):
        """Ascending eigenvalues per triangle, shape (T, 2)."""
        A = self.per_triangle
        tr = A[:, 0, 0] + A[:, 1, 1]
        det = A[:, 0, 0] * A[:, 1, 1] - A[:, 0, 1] * A[:, 1, 0]
        disc = np.hypot(0.5 * (A[:, 0, 0] - A[:, 1, 1]), 0.5 * (A[:, 0, 1] + A[:, 1, 0]))
        hi = 0.5 * tr + disc
        # the product form avoids cancellation in the small eigenvalue
        lo = np.where(hi > 0, det / np.where(hi > 0, hi, 1.0), 0.5 * tr - disc)
        return np.stack([lo, hi], axis=1)

    @property
    def lambda_min(self):
        return float(self.eigenvalues[:, 0].min())

    @property
    def lambda_max(self):
        return float(self.eigenvalues[:, 1].max())

    @cached_property
    def is_isotropic(self):
        A = self.per_triangle
        return bool(np.all(A[:, 0, 1] == 0) and np.all(A[:, 1, 0] == 0)
                    and np.all(A[:, 0, 0] == A[:, 1, 1]))

    @property
    def scalar_values(self):
        if not self.is_isotropic:
            raise ValueError("field is not scalar")
        return self.per_triangle[:, 0, 0]

    def validate(self, rtol=1e-13):
        """Raise :class:`NonSPDCoefficient` unless every tensor is SPD."""
        A = self.per_triangle
        scale = np.abs(A).max(axis=(1, 2))
        asym = np.abs(A[:, 0, 1] - A[:, 1, 0]) > rtol * np.maximum(scale, 1e-300)
        bad = asym | ~np.isfinite(A).all(axis=(1, 2)) | (self.eigenvalues[:, 0] <= 0)
        if bad.any():
            raise NonSPDCoefficient(
                f"{int(bad.sum())} triangles carry a non-SPD tensor "
                f"(first: {int(np.flatnonzero(bad)[0])})")
        return self

    def to_csv(self, path):
        A = self.per_triangle
        rows = ((t, float(A[t, 0, 0]), float(A[t, 0, 1]), float(A[t, 1, 1]))
                for t in range(len(A)))
        return write_csv(path, ["triangle_index", "a11", "a12", "a22"], rows)


@dataclass(frozen=True)
class MediumSpec:
    kind: str
    parameters: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown medium kind {self.kind!r}")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        unknown = set(self.parameters) - set(DEFAULTS[self.kind])
        if unknown:
            raise ConfigError(f"unknown parameters for {self.kind}: {sorted(unknown)}")

    def param(self, name):
        return self.parameters.get(name, DEFAULTS[self.kind][name])


def uniform_table(seed, stream_id, size, low, high, start=0):
    """Entries ``start .. start + size`` of a uniform table; entry ``i`` does
    not depend on how the table is split."""
    bitgen = np.random.Philox(key=np.array([int(seed) % 2 ** 64, int(stream_id)],
                                           dtype=np.uint64))
    # one 64-bit draw per double; a Philox block holds four
    bitgen.advance(start // 4)
    gen = np.random.Generator(bitgen)
    skip = start % 4
    u = gen.random(size + skip)[skip:]
    return low + (high - low) * u


# -- deterministic media -----------------------------------------------------

def trigonometric_value(x, y, scales=TRIG_SCALES):
    """Quasi-periodic multiscale conductivity (five scales)."""
    e1, e2, e3, e4, e5 = scales
    tp = 2.0 * np.pi
    s = ((1.1 + np.sin(tp * x / e1)) / (1.1 + np.sin(tp * y / e1))
         + (1.1 + np.sin(tp * y / e2)) / (1.1 + np.cos(tp * x / e2))
         + (1.1 + np.cos(tp * x / e3)) / (1.1 + np.sin(tp * y / e3))
         + (1.1 + np.sin(tp * y / e4)) / (1.1 + np.cos(tp * x / e4))
         + (1.1 + np.cos(tp * x / e5)) / (1.1 + np.sin(tp * y / e5))
         + np.sin(4.0 * x ** 2 * y ** 2) + 1.0)
    return s / 6.0


def gen_trigonometric(mesh, spec=None):
    scales = TRIG_SCALES if spec is None else spec.param("scales")
    c = mesh.barycenters
    return CoefficientField.scalar(trigonometric_value(c[:, 0], c[:, 1], scales))


def gen_constant(mesh, spec=None):
    value = 1.0 if spec is None else float(spec.param("value"))
    return CoefficientField.scalar(np.full(mesh.n_triangles, value))


def gen_laminar(mesh, spec=None, profile=None):
    """Layered medium varying along one axis only.

    With ``profile`` (a vectorised function of the coordinate) the field is
    ``profile(x_axis)``; otherwise it alternates between ``values`` with the
    given ``period``, each value occupying half a period.
    """
    axis = 0 if spec is None else int(spec.param("axis"))
    s = mesh.barycenters[:, axis]
    if profile is not None:
        return CoefficientField.scalar(profile(s))
    lo, hi = (1.0, 4.0) if spec is None else spec.param("values")
    period = 1.0 / 32 if spec is None else float(spec.param("period"))
    phase = np.mod(s / period, 1.0)
    return CoefficientField.scalar(np.where(phase < 0.5, lo, hi))


# -- random media ------------------------------------------------------------

def channel_cells(seed, n_cols, n_rows, band_rows):
    """Rows visited by a left-to-right lattice path, one list per column.

    The path moves by at most one row between columns; the cells between
    consecutive rows are included so the channel stays connected.
    """
    steps = uniform_table(seed, 1, n_cols, 0.0, 3.0)
    start = uniform_table(seed, 2, 1, 0.0, 1.0)[0]
    lo = (n_rows - band_rows) // 2
    hi = lo + band_rows - 1
    row = lo + int(start * band_rows)
    rows = []
    for c in range(n_cols):
        step = int(steps[c]) - 1
        nxt = min(max(row + step, lo), hi)
        rows.append((min(row, nxt), max(row, nxt)))
        row = nxt
    return rows


def gen_channel(mesh, spec):
    """High-conductivity channel crossing the disk from left to right.

    The channel is a monotone lattice path on a square grid over
    [-1, 1]^2 whose pitch is the channel width (by default ``width_layers``
    times the fine mesh size); the background is i.i.d. uniform per fine
    triangle.
    """
    _check_kind(spec, "channel")
    width = spec.param("width")
    if width is None:
        width = spec.param("width_layers") * mesh.h
    n = max(int(np.ceil(2.0 / width)), 1)
    band = max(int(round(spec.param("band") * n)), 1)
    rows = channel_cells(spec.seed, n, n, band)
    inside = np.zeros((n, n), dtype=bool)
    for c, (r0, r1) in enumerate(rows):
        inside[r0:r1 + 1, c] = True
    lo, hi = spec.param("background")
    a = uniform_table(spec.seed, 0, mesh.n_triangles, lo, hi)
    ix, iy = _lattice_index(mesh.barycenters, n, -1.0, 2.0)
    a = np.where(inside[iy, ix], float(spec.param("conductivity")), a)
    return CoefficientField.scalar(a)


def fourier_modes(R, norm="max", symmetric_pairs=False):
    """Integer wave vectors with ``0 < |k| <= R`` in the max or Euclidean
    norm.  Only one of ``k, -k`` is kept (both give the same real modes)
    unless ``symmetric_pairs``."""
    k1, k2 = np.meshgrid(np.arange(-R, R + 1), np.arange(-R, R + 1), indexing="ij")
    k = np.stack([k1.ravel(), k2.ravel()], axis=1)
    if norm == "euclidean":
        keep = (k ** 2).sum(axis=1) <= R * R
    elif norm == "max":
        keep = np.ones(len(k), dtype=bool)
    else:
        raise ConfigError(f"unknown mode norm {norm!r}")
    upper = (k[:, 0] > 0) | ((k[:, 0] == 0) & (k[:, 1] > 0))
    if symmetric_pairs:
        upper = np.any(k != 0, axis=1)
    return k[keep & upper]


def gen_fourier(mesh, spec, coefficients=None):
    """``exp(h)`` with ``h`` a random trigonometric polynomial, modes
    ``0 < |k| <= R``.  ``coefficients`` overrides the random (a_k, b_k)."""
    _check_kind(spec, "fourier")
    R = int(spec.param("R"))
    amp = float(spec.param("amplitude"))
    k = fourier_modes(R, spec.param("norm"), bool(spec.param("symmetric_pairs")))
    if coefficients is None:
        ab = uniform_table(spec.seed, 0, 2 * len(k), -amp, amp)
        a_k, b_k = ab[0::2], ab[1::2]
    else:
        a_k, b_k = (np.asarray(c, dtype=float) for c in coefficients)
    phase = 2.0 * np.pi * (mesh.barycenters @ k.T.astype(float))
    h = np.sin(phase) @ a_k + np.cos(phase) @ b_k
    return CoefficientField.scalar(np.exp(h))


def gen_fractal(mesh, spec, cell_values=None):
    """Product of ``n`` random layers constant on dyadic cells of size 2^-i.

    Cells are those of [0, 1]^2 in the rescaled coordinates (x + 1) / 2.
    ``cell_values`` optionally supplies the layer tables (list of 2^i x 2^i
    arrays indexed [p, q]).
    """
    _check_kind(spec, "fractal")
    n = int(spec.param("n"))
    gamma = float(spec.param("gamma"))
    if gamma < 1:
        raise ConfigError("gamma must be >= 1")
    z = 0.5 * (mesh.barycenters + 1.0)
    a = np.ones(mesh.n_triangles)
    for i in range(1, n + 1):
        m = 2 ** i
        if cell_values is None:
            c = uniform_table(spec.seed, i, m * m, 1.0 / gamma, gamma).reshape(m, m)
        else:
            c = np.asarray(cell_values[i - 1], dtype=float)
        p, q = _lattice_index(z, m, 0.0, 1.0)
        a *= c[p, q]
    return CoefficientField.scalar(a)


def percolation_sites(seed, sites, gamma):
    u = uniform_table(seed, 0, sites * sites, 0.0, 1.0).reshape(sites, sites)
    return np.where(u < 0.5, gamma, 1.0 / gamma)


def gen_percolation(mesh, spec):
    """Site lattice on [-1, 1]^2 with conductivity gamma or 1/gamma, each
    with probability 1/2."""
    _check_kind(spec, "percolation")
    sites = int(spec.param("sites"))
    gamma = float(spec.param("gamma"))
    table = percolation_sites(spec.seed, sites, gamma)
    ix, iy = _lattice_index(mesh.barycenters, sites, -1.0, 2.0)
    return CoefficientField.scalar(table[iy, ix])


# -- rasters -----------------------------------------------------------------

def read_raster(path):
    """Scalar grid from a PGM (P2 or P5) or CSV file; row 0 is the top."""
    path = str(path)
    if path.lower().endswith(".pgm"):
        return _read_pgm(path)
    return np.loadtxt(path, delimiter=",", ndmin=2)


def _read_pgm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    magic = data[:2]
    if magic not in (b"P2", b"P5"):
        raise ValueError(f"{path}: not a PGM file")
    tokens = []
    pos = 2
    while len(tokens) < 3:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while end < len(data) and not data[end:end + 1].isspace():
            end += 1
        tokens.append(int(data[pos:end]))
        pos = end
    width, height, maxval = tokens
    if magic == b"P2":
        body = data[pos:].decode("ascii").split("\n")
        values = [int(v) for line in body for v in line.split("#")[0].split()]
        img = np.array(values, dtype=float)
    else:
        dtype = ">u2" if maxval > 255 else "u1"
        img = np.frombuffer(data[pos + 1:], dtype=dtype,
                            count=width * height).astype(float)
    return img.reshape(height, width)


def gen_raster(mesh, spec=None, grid=None, extent=None):
    """Nearest-neighbour sampling of a scalar raster at the barycenters.

    ``extent`` is (xmin, xmax, ymin, ymax); it defaults to the mesh bounding
    box.
    """
    if grid is None:
        grid = read_raster(spec.param("path"))
        extent = spec.param("extent") if extent is None else extent
    grid = np.asarray(grid, dtype=float)
    if extent is None:
        lo = mesh.nodes.min(axis=0)
        hi = mesh.nodes.max(axis=0)
        extent = (lo[0], hi[0], lo[1], hi[1])
    xmin, xmax, ymin, ymax = extent
    ny, nx = grid.shape
    c = mesh.barycenters
    ix = np.clip(((c[:, 0] - xmin) / (xmax - xmin) * nx).astype(int), 0, nx - 1)
    iy = np.clip(((ymax - c[:, 1]) / (ymax - ymin) * ny).astype(int), 0, ny - 1)
    return CoefficientField.scalar(grid[iy, ix])


GENERATORS = {
    "trigonometric": gen_trigonometric,
    "channel": gen_channel,
    "fourier": gen_fourier,
    "fractal": gen_fractal,
    "percolation": gen_percolation,
    "raster": gen_raster,
    "constant": gen_constant,
    "laminar": gen_laminar,
}


def generate(mesh, spec):
    """Dispatch on ``spec.kind`` and validate the result."""
    return GENERATORS[spec.kind](mesh, spec).validate()


def _check_kind(spec, kind):
    if spec.kind != kind:
        raise ConfigError(f"expected a {kind} medium, got {spec.kind}")


def _lattice_index(points, n, origin, size):
    idx = np.floor((points - origin) / size * n).astype(int)
    idx = np.clip(idx, 0, n - 1)
    return idx[:, 0], idx[:, 1]
