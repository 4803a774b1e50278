import json
import subprocess
import sys
from pathlib import Path

import pytest

from metric_upscaling.cli import main

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

SMALL = """
name = "small"
[medium]
kind = "{kind}"
seed = 3
[mesh]
domain = "disk"
fine_level = {fine}
coarse_level = {coarse}
coarse_levels = [1, 2, 3]
[problem]
g = 1.0
methods = {methods}
[solver]
tol = {tol}
[output]
dir = "unused"
figures = true
"""


def write_config(tmp_path, kind="trigonometric", fine=5, coarse=2, tol="1e-10",
                 methods='["FEM_psi", "FEM_xi", "MBFEM", "FVM", "LFEM"]'):
    path = tmp_path / "cfg.toml"
    path.write_text(SMALL.format(kind=kind, fine=fine, coarse=coarse, tol=tol,
                                 methods=methods))
    return path


def files(directory):
    return {p.name: p.read_bytes() for p in sorted(Path(directory).iterdir())}


def test_compare_deterministic(tmp_path):
    cfg = write_config(tmp_path)
    assert main(["compare", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
    assert main(["compare", "--config", str(cfg), "--out", str(tmp_path / "b")]) == 0
    a, b = files(tmp_path / "a"), files(tmp_path / "b")
    assert a == b
    assert {"errors.csv", "errors.json", "stability.csv", "diagnostics.json",
            "deformed_coarse_mesh.svg"} <= set(a)
    header = a["errors.csv"].decode().splitlines()[0]
    assert header == "method,norm,scope,value"
    assert not any(name.startswith(".tmp") for name in a)


def test_seed_flag_changes_random_medium(tmp_path):
    cfg = write_config(tmp_path, kind="percolation", methods='["FEM_psi"]')
    main(["solve", "--config", str(cfg), "--out", str(tmp_path / "a"), "--seed", "1"])
    main(["solve", "--config", str(cfg), "--out", str(tmp_path / "b"), "--seed", "2"])
    assert files(tmp_path / "a")["medium.csv"] != files(tmp_path / "b")["medium.csv"]


def test_constant_medium_compare(tmp_path):
    assert main(["compare", "--config", str(CONFIGS / "constant.toml"),
                 "--out", str(tmp_path)]) == 0
    data = json.loads((tmp_path / "errors.json").read_text())
    assert {r["method"] for r in data["rows"]} == {"FEM_psi", "FEM_xi", "MBFEM", "FVM", "LFEM"}
    # every scheme reduces to the same coarse P1 solution, so the errors coincide
    coarse = [r["L1"] for r in data["rows"] if r["scope"] == "coarse"]
    assert max(coarse) - min(coarse) < 1e-9 * max(coarse)
    assert abs(data["diagnostics"]["mu_sigma"] - 1) < 1e-9


def test_sweep_and_export(tmp_path):
    cfg = write_config(tmp_path, kind="constant")
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "s")]) == 0
    out = files(tmp_path / "s")
    assert {"sweep_errors.csv", "rates.csv", "condition.csv"} <= set(out)
    assert main(["export-coarse-model", "--config", str(cfg),
                 "--out", str(tmp_path / "e")]) == 0
    exported = files(tmp_path / "e")
    model = json.loads(exported["coarse_model_MBFEM.json"])
    assert model["method"] == "MBFEM" and model["per_K"] is not None


def test_oned_command(tmp_path):
    out = tmp_path / "o"
    assert main(["oned", "--config", str(CONFIGS / "oned_binomial.toml"),
                 "--out", str(out)]) == 0
    first = files(out)
    assert {"spectrum.csv", "convergence.csv", "summary.json"} <= set(first)
    assert main(["oned", "--config", str(CONFIGS / "oned_binomial.toml"),
                 "--out", str(tmp_path / "p")]) == 0
    assert files(tmp_path / "p") == first


@pytest.mark.parametrize("args", [
    ["compare", "--config", "/nonexistent/cfg.toml"],
    ["compare"],
    ["frobnicate", "--config", "x.toml"],
])
def test_config_errors_exit_1(args):
    assert main(args) == 1


def test_invalid_values_exit_1(tmp_path):
    cfg = write_config(tmp_path, tol="0.5")
    assert main(["compare", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    cfg = write_config(tmp_path, fine=3, coarse=3)
    assert main(["compare", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    cfg = write_config(tmp_path, kind="marble")
    assert main(["compare", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    bad = tmp_path / "bad.toml"
    bad.write_text("name = [unclosed")
    assert main(["compare", "--config", str(bad), "--out", str(tmp_path / "o")]) == 1
    cfg = write_config(tmp_path)
    assert main(["compare", "--config", str(cfg), "--tol", "-1",
                 "--out", str(tmp_path / "o")]) == 1
    assert not (tmp_path / "o").exists()


def test_numerical_failure_exit_2_leaves_no_output(tmp_path):
    # one refinement between the levels leaves no interior fine node per coarse triangle
    cfg = write_config(tmp_path, fine=4, coarse=3, methods='["FEM_psi", "LFEM"]')
    out = tmp_path / "o"
    assert main(["compare", "--config", str(cfg), "--out", str(out)]) == 2
    assert not out.exists() or not any(out.iterdir())


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "metric_upscaling.cli", "compare",
                           "--config", str(tmp_path / "missing.toml")],
                          capture_output=True, text=True)
    assert proc.returncode == 1 and "error" in proc.stderr
