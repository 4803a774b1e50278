"""Error norms, convergence-rate fits and table/figure output."""

import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DegenerateFit
from .fem import gradient_field
from .fileio import atomic_write, csv_text

NORMS = ("L1", "L2", "Linf", "H1")
DISK_VIEWBOX = (-1.05, -1.05, 2.1, 2.1)


@dataclass
class ErrorRow:
    method: str
    scope: str
    L1: float
    L2: float
    Linf: float
    H1: float

    def values(self):
        return {n: getattr(self, n) for n in NORMS}


@dataclass
class ErrorTable:
    rows: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    def add(self, row):
        self.rows.append(row)
        return row

    def get(self, method, scope="coarse"):
        for r in self.rows:
            if r.method == method and r.scope == scope:
                return r
        raise KeyError((method, scope))

    def records(self):
        """Long-format records ``(method, norm, scope, value)``."""
        out = []
        for r in self.rows:
            for n in NORMS:
                out.append((r.method, n, r.scope, float(getattr(r, n))))
        return out

    def to_csv(self, path=None):
        text = csv_text(["method", "norm", "scope", "value"], self.records())
        if path is not None:
            atomic_write(path, text)
        return text

    def to_json(self, path=None):
        text = json.dumps({"rows": [asdict(r) for r in self.rows],
                           "diagnostics": self.diagnostics}, indent=1, sort_keys=True)
        if path is not None:
            atomic_write(path, text)
        return text

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        return cls([ErrorRow(**r) for r in data["rows"]], data.get("diagnostics", {}))


def _relative_norms(mesh, ref, err, volumes):
    ref = np.asarray(ref, dtype=float)
    err = np.asarray(err, dtype=float)

    def ratio(num, den):
        return float(num / den) if den > 0 else (0.0 if num == 0 else float("inf"))

    L1 = ratio((volumes * np.abs(err)).sum(), (volumes * np.abs(ref)).sum())
    L2 = ratio(np.sqrt((volumes * err ** 2).sum()), np.sqrt((volumes * ref ** 2).sum()))
    Linf = ratio(np.abs(err).max(), np.abs(ref).max())
    ge = gradient_field(mesh, err)
    gr = gradient_field(mesh, ref)
    H1 = ratio(np.sqrt((mesh.areas * (ge ** 2).sum(axis=1)).sum()),
               np.sqrt((mesh.areas * (gr ** 2).sum(axis=1)).sum()))
    return L1, L2, Linf, H1


def coarse_errors(u_ref_fine, values, coarse, method=""):
    """Relative errors at the coarse nodes (coarse node ``i`` is fine node
    ``i``): lumped-volume nodal norms and the H1 seminorm of the P1
    interpolants on the coarse mesh."""
    ref = np.asarray(u_ref_fine, dtype=float)[:coarse.n_nodes]
    err = ref - np.asarray(values, dtype=float)
    return ErrorRow(method, "coarse", *_relative_norms(coarse, ref, err,
                                                       coarse.node_volumes))


def fine_errors(u_ref_fine, lifted, fine, method=""):
    """Relative errors of a fine nodal field against the reference."""
    ref = np.asarray(u_ref_fine, dtype=float)
    err = ref - np.asarray(lifted, dtype=float)
    return ErrorRow(method, "fine", *_relative_norms(fine, ref, err, fine.node_volumes))


@dataclass
class RateFit:
    alpha: dict
    residual: dict


def fit_slope(h, err):
    """Least-squares slope of log2(err) against log2(h); (slope, rms residual)."""
    h = np.asarray(h, dtype=float)
    err = np.asarray(err, dtype=float)
    if len(np.unique(h)) < 2:
        raise DegenerateFit("need at least two distinct mesh sizes")
    if np.any(err <= 0) or np.any(h <= 0):
        raise DegenerateFit("errors and mesh sizes must be positive")
    x = np.log2(h)
    y = np.log2(err)
    coef, *_ = np.linalg.lstsq(np.stack([x, np.ones_like(x)], axis=1), y, rcond=None)
    res = y - (coef[0] * x + coef[1])
    return float(coef[0]), float(np.sqrt(np.mean(res ** 2)))


def rate_fit(h_list, error_lists):
    """Fitted exponents for each named error sequence."""
    alpha = {}
    residual = {}
    for name, errs in error_lists.items():
        alpha[name], residual[name] = fit_slope(h_list, errs)
    return RateFit(alpha, residual)


# -- SVG -----------------------------------------------------------------------

def _svg_header(viewbox, size=600):
    x, y, w, h = viewbox
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" '
            f'height="{size * h / w:.0f}" viewBox="{x} {y} {w} {h}">\n'
            f'<g transform="matrix(1 0 0 -1 0 {2 * y + h})">\n')


def _viewbox_for(nodes):
    lo = nodes.min(axis=0)
    hi = nodes.max(axis=0)
    if np.all(lo >= -1.0 - 1e-9) and np.all(hi <= 1.0 + 1e-9) and np.all(lo < -0.5):
        return DISK_VIEWBOX
    span = max(hi - lo) * 1.05
    mid = 0.5 * (lo + hi)
    return (mid[0] - span / 2, mid[1] - span / 2, span, span)


def mesh_svg(mesh, nodes=None, path=None, stroke="#000000", viewbox=None):
    """Edges of ``mesh`` drawn as straight 1px lines; ``nodes`` replaces the
    node positions (for instance by F to draw the deformed mesh)."""
    pts = mesh.nodes if nodes is None else np.asarray(nodes, dtype=float)
    viewbox = _viewbox_for(mesh.nodes) if viewbox is None else viewbox
    out = [_svg_header(viewbox)]
    out.append(f'<path fill="none" stroke="{stroke}" stroke-width="1" '
               f'vector-effect="non-scaling-stroke" d="')
    for i, j in mesh.edges:
        out.append(f"M{pts[i, 0]:.6f} {pts[i, 1]:.6f}L{pts[j, 0]:.6f} {pts[j, 1]:.6f}")
    out.append('"/>\n</g>\n</svg>\n')
    text = "".join(out)
    if path is not None:
        atomic_write(path, text)
    return text


def field_svg(mesh, values, path=None, cmap="viridis", log=False, viewbox=None):
    """Colour-mapped piecewise-constant field (one value per triangle)."""
    from matplotlib import colormaps
    v = np.asarray(values, dtype=float)
    if log:
        v = np.log(v)
    lo, hi = float(v.min()), float(v.max())
    t = (v - lo) / (hi - lo) if hi > lo else np.zeros_like(v)
    rgba = colormaps[cmap](t)
    viewbox = _viewbox_for(mesh.nodes) if viewbox is None else viewbox
    out = [_svg_header(viewbox)]
    c = mesh.corners
    for k in range(mesh.n_triangles):
        r, g, b = (int(round(255 * x)) for x in rgba[k, :3])
        pts = " ".join(f"{c[k, i, 0]:.6f},{c[k, i, 1]:.6f}" for i in range(3))
        out.append(f'<polygon points="{pts}" fill="#{r:02x}{g:02x}{b:02x}" '
                   f'stroke="none"/>\n')
    out.append("</g>\n</svg>\n")
    text = "".join(out)
    if path is not None:
        atomic_write(path, text)
    return text


def loglog_svg(x, curves, path=None, xlabel="-log2 h", ylabel="", title=""):
    """Curves (name -> y values) against ``x`` on a logarithmic y axis."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    with matplotlib.rc_context({"svg.hashsalt": "metric-upscaling",
                                "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(5, 4))
        for name, y in curves.items():
            ax.semilogy(x, y, marker="o", label=name)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        ax.legend()
        fig.tight_layout()
        buf = io.StringIO()
        fig.savefig(buf, format="svg", metadata={"Date": None})
        plt.close(fig)
    text = buf.getvalue()
    if path is not None:
        atomic_write(path, text)
    return text


def emit(obj, path, fmt=None):
    """Write a table (CSV or JSON, by extension or ``fmt``)."""
    fmt = fmt or str(path).rsplit(".", 1)[-1]
    if fmt == "csv":
        return obj.to_csv(path)
    if fmt == "json":
        return obj.to_json(path)
    raise ValueError(f"unsupported format {fmt!r}")
