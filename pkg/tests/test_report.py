import numpy as np
import pytest
from hypothesis import given, strategies as st

from metric_upscaling.errors import DegenerateFit
from metric_upscaling.report import (ErrorRow, ErrorTable, coarse_errors, emit,
                                     fine_errors, loglog_svg, mesh_svg, rate_fit,
                                     field_svg)


def test_zero_errors(disk4):
    fine, coarse = disk4[4], disk4[2]
    u = 1 - (fine.nodes ** 2).sum(axis=1)
    row = coarse_errors(u, u[:coarse.n_nodes], coarse, "ref")
    assert row.values() == {"L1": 0.0, "L2": 0.0, "Linf": 0.0, "H1": 0.0}
    row = fine_errors(u, u, fine)
    assert all(v == 0.0 for v in row.values().values())


def test_shift_linf(disk4):
    coarse = disk4[2]
    x = coarse.nodes[:, 0]
    h = coarse.h
    row = coarse_errors(np.concatenate([x, np.zeros(5)]), x + h, coarse)
    assert row.Linf == pytest.approx(h / np.abs(x).max(), rel=1e-12)
    assert row.H1 < 1e-14


@given(st.floats(1e-3, 1e3), st.integers(0, 1000))
def test_homogeneity(c, seed):
    fine = _mesh()
    rng = np.random.default_rng(seed)
    u, v = rng.standard_normal((2, fine.n_nodes))
    r1 = fine_errors(u, v, fine).values()
    r2 = fine_errors(c * u, c * v, fine).values()
    for k in r1:
        assert r2[k] == pytest.approx(r1[k], rel=1e-12)


def _mesh():
    from metric_upscaling.mesh import build_disk_mesh
    if not hasattr(_mesh, "m"):
        _mesh.m = build_disk_mesh(3)[3]
    return _mesh.m


@given(st.integers(0, 10000))
def test_triangle_inequality(seed):
    fine = _mesh()
    rng = np.random.default_rng(seed)
    a, b, c = rng.standard_normal((3, fine.n_nodes))
    # all three errors are relative to the same reference ``a``
    ab = fine_errors(a, b, fine).L2
    ac = fine_errors(a, c, fine).L2
    bc = fine_errors(a, a + (b - c), fine).L2
    assert ac <= ab + bc + 1e-12


def test_rate_fit_exact_power_laws():
    h = 2.0 ** -np.arange(1, 6)
    fit = rate_fit(h, {"sq": 3.0 * h ** 2, "lin": 0.5 * h})
    assert fit.alpha["sq"] == pytest.approx(2.0, abs=1e-10)
    assert fit.alpha["lin"] == pytest.approx(1.0, abs=1e-10)
    assert fit.residual["sq"] < 1e-10


def test_rate_fit_degenerate():
    with pytest.raises(DegenerateFit):
        rate_fit([0.5, 0.5, 0.5], {"e": [1.0, 2.0, 3.0]})
    with pytest.raises(DegenerateFit):
        rate_fit([0.5, 0.25], {"e": [1.0, 0.0]})


def test_empty_table_csv(tmp_path):
    text = ErrorTable().to_csv(tmp_path / "e.csv")
    assert text == "method,norm,scope,value\n"
    assert (tmp_path / "e.csv").read_text() == text


def test_table_json_roundtrip(tmp_path):
    t = ErrorTable([ErrorRow("FEM_psi", "coarse", 0.1, 0.2, 0.3, 0.4),
                    ErrorRow("MBFEM", "fine", 1e-3, 2e-3, 3e-3, 4e-3)],
                   {"eta_star_min": 1.12})
    emit(t, tmp_path / "t.json")
    back = ErrorTable.from_json((tmp_path / "t.json").read_text())
    assert back.rows == t.rows and back.diagnostics == t.diagnostics
    assert back.get("MBFEM", "fine").H1 == 4e-3
    lines = emit(t, tmp_path / "t.csv").splitlines()
    assert lines[1] == "FEM_psi,L1,coarse,0.1" and len(lines) == 9
    with pytest.raises(ValueError):
        emit(t, tmp_path / "t.xml")


def test_svg_outputs(tmp_path, disk4):
    mesh = disk4[2]
    text = mesh_svg(mesh, path=tmp_path / "m.svg")
    assert 'viewBox="-1.05 -1.05 2.1 2.1"' in text
    assert text.count("M") >= len(mesh.edges)
    f = field_svg(mesh, np.arange(mesh.n_triangles) + 1.0, log=True)
    assert f.count("<polygon") == mesh.n_triangles
    a = loglog_svg([1, 2, 3], {"e": [1.0, 0.5, 0.25]})
    b = loglog_svg([1, 2, 3], {"e": [1.0, 0.5, 0.25]})
    assert a == b and a.lstrip().startswith("<?xml")
