"""Configuration-driven experiment workflows.

A configuration is a TOML document::

    name = "trigonometric"

    [medium]
    kind = "trigonometric"
    seed = 0
    [medium.parameters]          # optional, see ``media.DEFAULTS``

    [mesh]
    domain = "disk"              # or "square"
    fine_level = 7
    coarse_level = 3
    coarse_levels = [1, 2, 3, 4] # used by ``sweep``
    project_levels = "coarse"    # or an integer

    [problem]
    g = 1.0                      # or { raster = "g.pgm", extent = [...] }
    methods = ["FEM_psi", "FEM_xi", "MBFEM", "FVM", "LFEM"]

    [solver]
    tol = 1e-10
    method = "direct"

    [output]
    dir = "out/trigonometric"
    figures = true

Every workflow collects its files in memory and writes them only once the
computation has succeeded, each through an atomic rename.
"""

import json
import logging
import os
import sys
from dataclasses import dataclass, field, replace

import numpy as np

from . import oned
from .errors import ConfigError
from .fem import assemble_load, condition_number, solve_dirichlet
from .fileio import atomic_write, csv_text
from .harmonic import compensation_ratio, compute_harmonic_coordinates, sigma_stats
from .media import KINDS, MediumSpec, gen_raster, generate
from .mesh import build_disk_mesh, build_square_hierarchy, deformed_quality
from .report import (ErrorTable, coarse_errors, fine_errors, field_svg, loglog_svg,
                     mesh_svg, rate_fit)
from .upscale import (BUILDERS, METHODS, interpolate_Jh, make_context,
                      stability_constants)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)

SOLVERS = ("direct", "cg", "bicgstab", "auto")


# -- configuration -----------------------------------------------------------

@dataclass
class ExperimentConfig:
    name: str
    medium: MediumSpec
    domain: str = "disk"
    fine_level: int = 7
    coarse_level: int = 3
    coarse_levels: tuple = ()
    project_levels: object = "coarse"
    g: object = 1.0
    methods: tuple = METHODS
    tol: float = 1e-10
    solver: str = "direct"
    out: str = "out"
    figures: bool = True
    oned: dict = field(default_factory=dict)

    def validate(self):
        if self.domain not in ("disk", "square"):
            raise ConfigError(f"unknown domain {self.domain!r}")
        if not 0.0 < self.tol < 1e-2:
            raise ConfigError("solver tol must lie in (0, 1e-2)")
        if self.solver not in SOLVERS:
            raise ConfigError(f"unknown solver {self.solver!r}")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ConfigError(f"unknown methods {bad}; choose from {list(METHODS)}")
        levels = (self.coarse_level,) + tuple(self.coarse_levels)
        if min(levels) < 0:
            raise ConfigError("coarse levels must be nonnegative")
        if self.fine_level <= max(levels):
            raise ConfigError("fine_level must exceed every coarse level")
        if self.project_levels != "coarse" and not isinstance(self.project_levels, int):
            raise ConfigError("project_levels must be 'coarse' or an integer")
        if not isinstance(self.g, (int, float)) and not (
                isinstance(self.g, dict) and "raster" in self.g):
            raise ConfigError("g must be a number or a table with a 'raster' path")
        return self


def _get(table, key, kind, default):
    value = table.get(key, default)
    if value is default:
        return value
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if not isinstance(value, kind) or isinstance(value, bool) and kind is not bool:
        raise ConfigError(f"{key!r} must be of type {kind.__name__}")
    return value


def parse_config(data, base_dir="."):
    """Build an :class:`ExperimentConfig` from a parsed TOML mapping."""
    try:
        med = data.get("medium", {})
        kind = med.get("kind", "constant")
        if kind not in KINDS:
            raise ConfigError(f"unknown medium kind {kind!r}")
        params = dict(med.get("parameters", {}))
        if kind == "raster" and "path" in params:
            params["path"] = os.path.join(base_dir, params["path"])
        for key, value in params.items():
            if isinstance(value, list):
                params[key] = tuple(value)
        medium = MediumSpec(kind, params, int(med.get("seed", 0)))
        mesh = data.get("mesh", {})
        prob = data.get("problem", {})
        solv = data.get("solver", {})
        outp = data.get("output", {})
        g = prob.get("g", 1.0)
        if isinstance(g, dict) and "raster" in g:
            g = dict(g, raster=os.path.join(base_dir, g["raster"]))
        cfg = ExperimentConfig(
            name=_get(data, "name", str, "experiment"),
            medium=medium,
            domain=_get(mesh, "domain", str, "disk"),
            fine_level=_get(mesh, "fine_level", int, 7),
            coarse_level=_get(mesh, "coarse_level", int, 3),
            coarse_levels=tuple(_get(mesh, "coarse_levels", list, [])),
            project_levels=mesh.get("project_levels", "coarse"),
            g=g,
            methods=tuple(_get(prob, "methods", list, list(METHODS))),
            tol=_get(solv, "tol", float, 1e-10),
            solver=_get(solv, "method", str, "direct"),
            out=_get(outp, "dir", str, "out"),
            figures=_get(outp, "figures", bool, True),
            oned=dict(data.get("oned", {})),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    return cfg.validate()


def load_config(path, seed=None, tol=None, out=None):
    """Read a TOML file and apply command-line overrides."""
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
    cfg = parse_config(data, os.path.dirname(os.path.abspath(path)))
    if seed is not None:
        cfg = replace(cfg, medium=replace(cfg.medium, seed=int(seed)))
    if tol is not None:
        cfg = replace(cfg, tol=float(tol))
    if out is not None:
        cfg = replace(cfg, out=out)
    return cfg.validate()


# -- output staging ------------------------------------------------------------

class Outputs:
    """Files held in memory until :meth:`commit`."""

    def __init__(self, directory):
        self.directory = directory
        self.files = {}

    def add(self, name, text):
        self.files[name] = text
        return name

    def commit(self):
        paths = []
        for name in sorted(self.files):
            paths.append(atomic_write(os.path.join(self.directory, name), self.files[name]))
        return paths


# -- shared setup --------------------------------------------------------------

@dataclass(eq=False)
class Problem:
    """Hierarchy, medium, load and reference solution for one coarse level."""

    config: ExperimentConfig
    hier: object
    coarse_level: int
    a: object
    g: object
    hmap: object
    u_ref: np.ndarray
    context: object

    @property
    def fine(self):
        return self.hier[self.config.fine_level]

    @property
    def coarse(self):
        return self.hier[self.coarse_level]


def build_hierarchy_for(config, coarse_level):
    if config.domain == "square":
        return build_square_hierarchy(config.fine_level)
    proj = coarse_level if config.project_levels == "coarse" else config.project_levels
    return build_disk_mesh(config.fine_level, project_levels=proj)


def load_values(config, mesh):
    """``g`` as a constant or per-triangle values."""
    if isinstance(config.g, dict):
        extent = config.g.get("extent")
        spec = MediumSpec("raster", {"path": config.g["raster"],
                                     "extent": None if extent is None else tuple(extent)})
        return gen_raster(mesh, spec).scalar_values, True
    return float(config.g), False


def setup_problem(config, coarse_level=None, hier=None):
    coarse_level = config.coarse_level if coarse_level is None else coarse_level
    hier = build_hierarchy_for(config, coarse_level) if hier is None else hier
    fine = hier[config.fine_level]
    a = generate(fine, config.medium)
    g, per_triangle = load_values(config, fine)
    hmap = compute_harmonic_coordinates(fine, a, tol=config.tol, method=config.solver)
    ctx = make_context(hier, a, g if not per_triangle else 1.0, coarse_level,
                       config.fine_level, hmap, config.tol, config.solver)
    if per_triangle:
        ctx.fine_load = assemble_load(fine, g, per_triangle=True)
    u, _ = solve_dirichlet(ctx.fine_operator, ctx.fine_load, config.tol,
                           method=config.solver)
    return Problem(config, hier, coarse_level, a, g, hmap, np.asarray(u.values), ctx)


def run_methods(problem, methods=None):
    """Build and solve every requested coarse scheme."""
    models = {}
    for m in methods or problem.config.methods:
        log.info("building %s at coarse level %d", m, problem.coarse_level)
        models[m] = BUILDERS[m](context=problem.context)
    return models


def lifted_solution(problem, model):
    """Fine nodal field obtained by lifting the coarse values through the
    deformed coarse mesh."""
    return interpolate_Jh(problem.coarse, problem.hmap.F_nodal, model.F_coarse,
                          model.coarse_values)


def error_table(problem, models):
    table = ErrorTable()
    fallbacks = {}
    for m, model in models.items():
        table.add(coarse_errors(problem.u_ref, model.coarse_values, problem.coarse, m))
        lift = lifted_solution(problem, model)
        fallbacks[m] = lift.fallbacks
        table.add(fine_errors(problem.u_ref, lift.values, problem.fine, m))
    table.diagnostics["lift_fallbacks"] = fallbacks
    return table


# -- workflows -------------------------------------------------------------------

def _medium_diagnostics(problem):
    q = deformed_quality(problem.coarse, problem.hmap.F_nodal[:problem.coarse.n_nodes])
    s = sigma_stats(problem.hmap, problem.a)
    ratio, o_metric, o_plain = compensation_ratio(problem.hmap, problem.u_ref)
    return {
        "eta_max": q.eta_max,
        "eta_star_min": q.eta_star_min,
        "eta_star_max": q.eta_star_max,
        "unadapted": q.unadapted,
        "mu_sigma": s.mu_sigma,
        "beta_sigma": s.beta_sigma,
        "flagged_fine_triangles": int(len(s.flagged)),
        "compensation_ratio": ratio,
        "oscillation_metric_gradient": o_metric,
        "oscillation_gradient": o_plain,
        "fine_h": problem.fine.h,
        "coarse_h": problem.coarse.h,
    }


def stability_rows(models, eta_star_min):
    rows = []
    for m, model in models.items():
        r = stability_constants(model, eta_star_min)
        rows.append((m, r.S_m, r.S_v, r.eta_max, r.eta_star_min, r.condition_number))
    return rows


STABILITY_HEADER = ["method", "S_m", "S_v", "eta_max", "eta_star_min", "condition_number"]


def _json(obj):
    return json.dumps(obj, indent=1, sort_keys=True, default=float) + "\n"


def run_compare(config, write=True):
    """Fine reference, harmonic coordinates, every requested scheme, both
    error tables, stability report and figures."""
    problem = setup_problem(config)
    models = run_methods(problem)
    table = error_table(problem, models)
    diag = _medium_diagnostics(problem)
    table.diagnostics.update(diag)
    stab = stability_rows(models, diag["eta_star_min"])
    out = Outputs(config.out)
    out.add("errors.csv", table.to_csv())
    out.add("errors.json", table.to_json())
    out.add("stability.csv", csv_text(STABILITY_HEADER, stab))
    out.add("diagnostics.json", _json(diag))
    if config.figures:
        C = problem.coarse
        out.add("coarse_mesh.svg", mesh_svg(C))
        out.add("deformed_coarse_mesh.svg",
                mesh_svg(C, nodes=problem.hmap.F_nodal[:C.n_nodes]))
        out.add("medium.svg", field_svg(problem.fine, problem.a.scalar_values, log=True))
    if write:
        out.commit()
    return table, stab, problem, models, out


def run_sweep(config, coarse_levels=None, write=True):
    """Errors, fitted rates and condition numbers over several coarse
    levels."""
    levels = tuple(coarse_levels or config.coarse_levels)
    if len(levels) < 3:
        raise ConfigError("a sweep needs at least 3 coarse levels")
    if config.fine_level <= max(levels):
        raise ConfigError("fine_level must exceed every coarse level")
    records = []
    h = []
    coarse_L1 = {m: [] for m in config.methods}
    fine_H1 = {m: [] for m in config.methods}
    cond = {m: [] for m in config.methods}
    hier = None
    for lev in levels:
        if config.project_levels != "coarse" or config.domain == "square":
            hier = hier or build_hierarchy_for(config, lev)
            problem = setup_problem(config, lev, hier)
        else:
            problem = setup_problem(config, lev)
        models = run_methods(problem)
        table = error_table(problem, models)
        h.append(problem.coarse.h)
        for row in table.rows:
            for norm in ("L1", "L2", "Linf", "H1"):
                records.append((lev, row.method, norm, row.scope, float(getattr(row, norm))))
        for m, model in models.items():
            coarse_L1[m].append(table.get(m, "coarse").L1)
            fine_H1[m].append(table.get(m, "fine").H1)
            cond[m].append(condition_number(model.system))
    fits = {}
    for name, series in (("coarse_L1", coarse_L1), ("fine_H1", fine_H1)):
        fit = rate_fit(h, series)
        for m in config.methods:
            fits[(name, m)] = (fit.alpha[m], fit.residual[m])
    out = Outputs(config.out)
    out.add("sweep_errors.csv", csv_text(["level", "method", "norm", "scope", "value"], records))
    out.add("rates.csv", csv_text(["quantity", "method", "alpha", "residual"],
                                  [(q, m, a, r) for (q, m), (a, r) in fits.items()]))
    out.add("condition.csv", csv_text(["level", "h", "method", "condition_number"],
                                      [(lev, hh, m, cond[m][i]) for m in config.methods
                                       for i, (lev, hh) in enumerate(zip(levels, h))]))
    if config.figures:
        x = -np.log2(np.asarray(h))
        out.add("coarse_L1.svg", loglog_svg(x, coarse_L1, ylabel="coarse L1 error"))
        out.add("condition.svg", loglog_svg(x, cond, ylabel="condition number"))
    if write:
        out.commit()
    return {"levels": levels, "h": h, "coarse_L1": coarse_L1, "fine_H1": fine_H1,
            "condition": cond, "rates": fits}, out


def run_solve(config, write=True):
    """Fine reference solution and harmonic coordinates only."""
    problem = setup_problem(config)
    out = Outputs(config.out)
    fine = problem.fine
    out.add("solution.csv", csv_text(["node_index", "value"],
                                     ((i, float(v)) for i, v in enumerate(problem.u_ref))))
    F = problem.hmap.F_nodal
    out.add("harmonic_nodes.csv", csv_text(["node_index", "F1", "F2"],
                                           ((i, float(F[i, 0]), float(F[i, 1]))
                                            for i in range(len(F)))))
    A = problem.a.per_triangle
    out.add("medium.csv", csv_text(["triangle_index", "a11", "a12", "a22"],
                                   ((t, float(A[t, 0, 0]), float(A[t, 0, 1]),
                                     float(A[t, 1, 1])) for t in range(len(A)))))
    out.add("mesh.json", fine.to_json())
    out.add("diagnostics.json", _json(_medium_diagnostics(problem)))
    if write:
        out.commit()
    return problem, out


def run_export(config, write=True):
    """Compressed coarse operators of every requested scheme."""
    problem = setup_problem(config)
    models = run_methods(problem)
    out = Outputs(config.out)
    for m, model in models.items():
        out.add(f"coarse_model_{m}.json", model.to_json())
    if write:
        out.commit()
    return models, out


# -- 1D ------------------------------------------------------------------------------

ONED_DEFAULTS = {
    "a": 0.6, "b": -0.6, "rho": 2, "f": 1.0, "depth": 12,
    "n_list": [4, 8, 12], "n_ref": None,
    "holder_depth": 20, "holder_points": 10000,
    "q_min": -20.0, "q_max": 20.0, "q_num": 4001,
    "alpha_num": 41, "ldp_depths": [50, 100, 200, 400], "ldp_eps": 0.02,
}


def oned_params(config):
    p = dict(ONED_DEFAULTS)
    unknown = set(config.oned) - set(p) - {"U"}
    if unknown:
        raise ConfigError(f"unknown [oned] keys {sorted(unknown)}")
    p.update(config.oned)
    if "U" in p:
        U = np.asarray(p["U"], dtype=float)
    else:
        U = 0.5 * np.array([p["a"], p["b"]], dtype=float)
    if U.ndim != 1 or len(U) < 1:
        raise ConfigError("U must be a nonempty list")
    p["U"] = U
    return p


def run_oned(config, write=True):
    """Cascade, measures, explicit solve, spectrum and convergence table."""
    p = oned_params(config)
    U = p["U"]
    rng = np.random.Generator(np.random.Philox(config.medium.seed))
    V = oned.cascade(U, p["rho"], p["depth"])
    mu_p, mu_m, D = oned.measures(V)
    sol = oned.solve_explicit(V, p["f"])
    psi = oned.measure_coordinate_solve(mu_p, mu_m, p["f"])
    out = Outputs(config.out)
    out.add("solution.csv", csv_text(
        ["x", "w", "D_times_w", "psi", "mu_plus_cdf", "mu_minus_cdf"],
        zip(sol.x.tolist(), sol.w.tolist(), (D * sol.w).tolist(), psi.tolist(),
            mu_p.cdf().tolist(), mu_m.cdf().tolist())))
    summary = {"D": D, "flux_constant": sol.flux, "cells": int(V.m)}

    binomial = len(U) == 2 and p["rho"] == 2
    if binomial:
        m0 = float(np.exp(2 * U[0]) / (np.exp(2 * U[0]) + np.exp(2 * U[1])))
        m1 = 1.0 - m0
        q = np.linspace(p["q_min"], p["q_max"], p["q_num"])
        lo, hi = -np.log2(max(m0, m1)), -np.log2(min(m0, m1))
        alpha = np.linspace(lo, hi, p["alpha_num"]) if hi > lo else np.array([lo])
        table = oned.spectrum(m0, q, alpha)
        out.add("spectrum.csv", csv_text(["kind", "x", "value"], table.rows()))
        meas = oned.binomial_measure(m0, p["holder_depth"])
        xs = rng.random(p["holder_points"])
        a_n = oned.holder_exponents(meas, xs)
        target = -0.5 * np.log2(m0 * m1)
        ldp = []
        for n in p["ldp_depths"]:
            for al in alpha:
                ldp.append((int(n), float(al),
                            oned.large_deviation_rate(m0, int(n), al, p["ldp_eps"]),
                            float(oned.legendre_exact(m0, al))))
        out.add("large_deviations.csv",
                csv_text(["n", "alpha", "log2_probability_over_n", "c_star"], ldp))
        summary.update({
            "m0": m0,
            "mean_holder_exponent": float(a_n.mean()),
            "expected_holder_exponent": float(target),
            "holder_relative_deviation": float(abs(a_n.mean() - target) / target),
            "self_similarity_residual": oned.self_similarity_residual(
                oned.binomial_measure(m0, p["depth"]), m0),
            "cdf_distance_to_binomial": oned.cdf_distance(
                oned.binomial_measure(m0, p["depth"]), mu_p) if mu_p.depth else None,
            "c_at_0": float(oned.c_function(m0, 0.0)),
            "c_at_1": float(oned.c_function(m0, 1.0)),
        })
        if config.figures:
            out.add("spectrum.svg", _spectrum_svg(table))
    conv = oned.convergence_experiment(U, p["rho"], p["f"], tuple(p["n_list"]), p["n_ref"])
    out.add("convergence.csv", csv_text(["n", "sup_distance"], conv))
    out.add("summary.json", _json(summary))
    if config.figures:
        out.add("cdf.svg", _cdf_svg(mu_p, mu_m))
    if write:
        out.commit()
    return summary, conv, out


def _plain_svg(draw):
    import io
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    with matplotlib.rc_context({"svg.hashsalt": "metric-upscaling",
                                "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(5, 4))
        draw(ax)
        fig.tight_layout()
        buf = io.StringIO()
        fig.savefig(buf, format="svg", metadata={"Date": None})
        plt.close(fig)
    return buf.getvalue()


def _cdf_svg(mu_p, mu_m):
    x = np.linspace(0.0, 1.0, len(mu_p.masses) + 1)

    def draw(ax):
        ax.plot(x, mu_p.cdf(), label="mu_plus")
        ax.plot(x, mu_m.cdf(), label="mu_minus")
        ax.set_xlabel("x")
        ax.legend()
    return _plain_svg(draw)


def _spectrum_svg(table):
    finite = np.isfinite(table.c_star)

    def draw(ax):
        ax.plot(table.alpha[finite], table.c_star[finite], marker=".")
        ax.set_xlabel("alpha")
        ax.set_ylabel("c*(alpha)")
    return _plain_svg(draw)
