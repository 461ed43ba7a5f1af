import csv
import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from forced_mcf.analysis import (VARIABLES, EocTable, ErrorRecord, RunResult, asymptotic_eoc, eoc,
                                 error_tracker, h1_error, lifted_h1_error_sphere, lifted_state_errors,
                                 run_cell, state_errors)
from forced_mcf.flow_solver import SolverConfig, exact_state
from forced_mcf.problems import manufactured_problem
from forced_mcf.surface_mesh import SurfaceGeometry, make_sphere_mesh


@pytest.fixture(scope="module")
def problem():
    return manufactured_problem()


@pytest.mark.parametrize("scheme", ["coupled", "conservative"])
@pytest.mark.parametrize("t", [0.0, 0.3, 1.0])
def test_exact_interpolant_has_zero_error(sphere2, problem, scheme, t):
    mesh, p0 = sphere2
    state = exact_state(problem, mesh, p0, t, SolverConfig(tau=0.1, T=1.0, scheme=scheme))
    errs = state_errors(state, problem, mesh, p0)
    assert set(errs) == set(VARIABLES)
    assert max(errs.values()) < 1e-13


def test_tracker_skips_velocity_at_start(sphere2, problem):
    mesh, p0 = sphere2
    cfg = SolverConfig(tau=0.1, T=1.0)
    record = ErrorRecord()
    track = error_tracker(problem, mesh, p0, record)
    for n, t in enumerate((0.0, 0.1)):
        track(n, exact_state(problem, mesh, p0, t, cfg))
    assert "v" not in record.steps[0] and "v" in record.steps[1]
    assert record.times == [0.0, 0.1]
    assert all(record.maxima[v] < 1e-13 for v in VARIABLES)


def test_constant_offset_error_is_offset_times_sqrt_area(sphere2, rng):
    mesh, x = sphere2
    geom = SurfaceGeometry(mesh, x)
    area = geom.mass_matrix.sum()
    f = rng.standard_normal(mesh.n_nodes)
    assert h1_error(f + 0.3, f, mesh, x) == pytest.approx(0.3 * math.sqrt(area), rel=1e-12)
    c = np.array([0.1, -0.2, 0.2])
    g = rng.standard_normal((mesh.n_nodes, 3))
    assert h1_error(g + c, g, mesh, x) == pytest.approx(np.linalg.norm(c) * math.sqrt(area), rel=1e-12)


def test_error_is_invariant_under_rotation(sphere2, rng):
    mesh, x = sphere2
    Q = Rotation.from_rotvec([0.3, -1.1, 0.7]).as_matrix()
    exact = x[:, 0] * x[:, 1] + np.sin(x[:, 2])
    approx = exact + 0.01 * rng.standard_normal(mesh.n_nodes)
    vec = np.cross(x, [0.2, 0.5, -0.1])
    vec_h = vec + 0.01 * rng.standard_normal(vec.shape)
    xr = x @ Q.T
    assert h1_error(approx, exact, mesh, xr) == pytest.approx(h1_error(approx, exact, mesh, x), rel=1e-12)
    assert h1_error(vec_h @ Q.T, vec @ Q.T, mesh, xr) == pytest.approx(
        h1_error(vec_h, vec, mesh, x), rel=1e-12)


def test_dimension_mismatch_rejected(sphere2):
    mesh, x = sphere2
    with pytest.raises(ValueError, match="dimension"):
        h1_error(np.zeros(mesh.n_nodes), np.zeros(mesh.n_nodes - 1), mesh, x)


def test_eoc_hand_computed():
    # log2(0.1 / 0.025) = 2 and log2(0.025 / 0.003125) = 3
    assert eoc([0.1, 0.025, 0.003125], [0.2, 0.1, 0.05]) == pytest.approx([2.0, 3.0], abs=1e-14)
    # h ratio 3/2: log(2.25) / log(1.5) = 2
    assert eoc([9.0, 4.0], [3.0, 2.0]) == pytest.approx([2.0], abs=1e-14)
    assert eoc([1.0, 0.5], [1.0, 0.5]) == pytest.approx([1.0])
    rates = eoc([1.0, 0.0, float("nan"), 0.1], [1, 0.5, 0.25, 0.125])
    assert all(math.isnan(r) for r in rates)


def test_asymptotic_eoc_drops_flat_tail():
    assert asymptotic_eoc([0.9, 1.4, 1.9, 0.3, 0.05]) == 1.9
    assert asymptotic_eoc([0.9, 1.4, 1.9]) == 1.9
    assert asymptotic_eoc([1.9, float("nan")]) == 1.9
    assert asymptotic_eoc([0.6, 0.1]) == 0.6
    assert math.isnan(asymptotic_eoc([0.2, 0.1]))
    assert math.isnan(asymptotic_eoc([]))


def _synthetic_table():
    """errors = h^2 + tau^2 on a 2 x 3 grid."""
    results = []
    for f, h in ((4, 0.4), (8, 0.2)):
        for tau in (0.2, 0.1, 0.05):
            e = {v: h**2 + tau**2 for v in VARIABLES}
            results.append(RunResult(f, h, tau, e, e, 0.0))
    return EocTable(results)


def test_eoc_table_sweeps():
    table = _synthetic_table()
    taus, errs, rates = table.temporal(8, "u")
    assert taus == [0.2, 0.1, 0.05]
    assert errs == pytest.approx([0.08, 0.05, 0.0425])
    assert rates == pytest.approx([math.log2(0.08 / 0.05), math.log2(0.05 / 0.0425)])
    taus, _, rates = table.temporal(8, "u", taus=[0.2, 0.1])
    assert taus == [0.2, 0.1] and len(rates) == 1
    hs, errs, rates = table.spatial(0.05, "x")
    assert hs == [0.4, 0.2]
    assert rates == pytest.approx([math.log2(0.1625 / 0.0425)])
    assert table.cell(4, 0.1).h == 0.4
    with pytest.raises(KeyError):
        table.cell(6, 0.1)
    assert table.norms() == ["interpolant"]
    with pytest.raises(ValueError):
        table.results[0].norm("bogus")


def test_eoc_csv_long_format(tmp_path):
    table = _synthetic_table()
    path = tmp_path / "eoc.csv"
    table.write_csv(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["sweep", "norm", "h", "tau", "variable", "error", "eoc"]
    body = rows[1:]
    # temporal: 2 meshes x 5 variables x 3 steps; spatial: 3 steps x 5 variables x 2 meshes
    assert len(body) == 30 + 30
    first = body[0]
    assert first[:2] == ["time", "interpolant"] and first[4] == "x" and first[6] == "nan"
    assert float(body[1][5]) == pytest.approx(0.16 + 0.01)
    assert float(body[1][6]) == pytest.approx(math.log2(0.2 / 0.17))
    assert {r[0] for r in body} == {"time", "space"}


def test_lifted_error_of_constant_offset_uses_exact_area(problem):
    mesh, x = make_sphere_mesh(frequency=6, radius=1.5)
    f = np.full(mesh.n_nodes, 0.7)
    err = lifted_h1_error_sphere(f, lambda a: np.full(a.shape[:-1], 0.5),
                                 lambda a: np.zeros(a.shape), mesh, x, 1.5)
    # exact up to quadrature of the lifted area element
    assert err == pytest.approx(0.2 * math.sqrt(4 * math.pi * 1.5**2), rel=1e-9)


def test_lifted_interpolation_error_orders(problem):
    """Lifted errors of exact interpolants: constants exact, u second order."""
    cfg = SolverConfig(tau=0.1, T=1.0)
    errs, hs = [], []
    for f in (6, 8, 11):
        mesh, p0 = make_sphere_mesh(frequency=f)
        state = exact_state(problem, mesh, p0, 0.5, cfg)
        errs.append(lifted_state_errors(state, problem, mesh, p0))
        hs.append(max(np.linalg.norm(p0[mesh.corners[:, i]] - p0[mesh.corners[:, j]], axis=1).max()
                      for i, j in ((0, 1), (1, 2), (0, 2))))
    assert max(e["H"] for e in errs) < 1e-12
    rates = eoc([e["u"] for e in errs], hs)
    assert all(1.8 < r < 2.3 for r in rates)
    for var in ("x", "v", "nu"):
        assert all(r > 1.8 for r in eoc([e[var] for e in errs], hs))


def test_run_cell_smoke(problem):
    r = run_cell(problem, 2, 0.1, 0.2)
    assert not r.failed and r.h > 0 and r.seconds > 0
    assert set(r.errors) == set(VARIABLES) == set(r.lifted)
    assert all(np.isfinite(list(r.errors.values())))
    assert r.norm("lifted") is r.lifted
