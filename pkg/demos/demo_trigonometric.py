"""Compare the five coarse schemes on the trigonometric medium.

Runs at a reduced fine level so it finishes in a few seconds; the full
resolution lives in ``configs/example1_trigonometric.toml``.

    python demos/demo_trigonometric.py
"""

from dataclasses import replace
from pathlib import Path

import numpy as np

from metric_upscaling.experiments import (error_table, load_config, run_methods,
                                          setup_problem, stability_rows)
from metric_upscaling.harmonic import sigma_stats
from metric_upscaling.mesh import deformed_quality

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "example1_trigonometric.toml"


def main(fine_level=6, coarse_level=3):
    config = replace(load_config(CONFIG), fine_level=fine_level, coarse_level=coarse_level)
    problem = setup_problem(config)

    # distortion of the coarse triangles under the harmonic map
    coarse = problem.coarse
    q = deformed_quality(coarse, problem.hmap.F_nodal[:coarse.n_nodes])
    s = sigma_stats(problem.hmap, problem.a)
    print(f"eta*_min = {q.eta_star_min:.4f}   mu_sigma = {s.mu_sigma:.3f}")

    models = run_methods(problem)
    table = error_table(problem, models)
    print(f"\n{'method':8s} {'coarse L1':>10s} {'coarse H1':>10s} {'fine H1':>10s}")
    for m in models:
        c = table.get(m, "coarse")
        f = table.get(m, "fine")
        print(f"{m:8s} {c.L1:10.4f} {c.H1:10.4f} {f.H1:10.4f}")

    # FVM is a Petrov-Galerkin scheme and reports S_v instead of S_m
    print("\ninf-sup constants")
    for m, s_m, s_v, *_ in stability_rows(models, q.eta_star_min):
        label, value = ("S_v", s_v) if np.isnan(s_m) else ("S_m", s_m)
        print(f"  {m:8s} {label} = {value:.3e}")


if __name__ == "__main__":
    main()
