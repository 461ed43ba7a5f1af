import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from forced_mcf.ref_element import quadrature, shape_functions
from forced_mcf.surface_mesh import (
    MeshBreakdownError,
    SurfaceGeometry,
    SurfaceMesh,
    element_frame,
    make_sphere_mesh,
    mesh_width,
    quality_report,
    read_mesh,
    read_vtk,
    sphere_frequency_for_nodes,
    write_mesh,
    write_vtk,
)


def flat_triangle(degree=1):
    x = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]])
    if degree == 1:
        return SurfaceMesh(np.array([[0, 1, 2]]), 3, 1), x
    mid = np.array([[0.5, 0.5, 0], [0, 0.5, 0], [0.5, 0, 0]])
    return SurfaceMesh(np.array([[0, 1, 2, 3, 4, 5]]), 6, 2), np.vstack([x, mid])


def test_icosahedron_counts():
    mesh, x = make_sphere_mesh(0, degree=1)
    assert (mesh.n_nodes, mesh.n_elements) == (12, 20)


@pytest.mark.parametrize("level", range(4))
def test_vertex_count_recursion(level):
    # subdividing every edge adds one vertex per edge: V' = V + E
    coarse, _ = make_sphere_mesh(level, degree=1)
    fine, _ = make_sphere_mesh(level + 1, degree=1)
    assert fine.n_nodes == coarse.n_nodes + len(coarse.edges[0])
    assert fine.n_elements == 4 * coarse.n_elements


def test_level2_linear_has_162_vertices():
    mesh, _ = make_sphere_mesh(2, degree=1)
    assert mesh.n_nodes == 162


@pytest.mark.parametrize("level,degree", [(0, 1), (2, 1), (1, 2), (3, 2)])
def test_closed_genus_zero(level, degree):
    mesh, _ = make_sphere_mesh(level, degree=degree)
    assert mesh.boundary_edge_count() == 0
    assert mesh.euler_characteristic() == 2


@pytest.mark.parametrize("radius", [1.0, 2.5])
def test_nodes_on_sphere(radius):
    for level in range(3):
        _, x = make_sphere_mesh(level, radius=radius, degree=2)
        assert np.max(np.abs(np.linalg.norm(x, axis=1) - radius)) < 1e-14 * max(radius, 1)


def test_quadratic_node_count():
    for n in (1, 2, 3, 10):
        mesh, _ = make_sphere_mesh(frequency=n, degree=2)
        assert mesh.n_nodes == 40 * n * n + 2
    assert sphere_frequency_for_nodes(3882) == 10


def test_area_level3_fourth_order_close():
    mesh, x = make_sphere_mesh(3, degree=2)
    area = np.ones(mesh.n_nodes) @ SurfaceGeometry(mesh, x).mass_matrix @ np.ones(mesh.n_nodes)
    h = mesh_width(mesh, x)
    assert abs(area - 4 * np.pi) < 0.5 * h**4


def test_area_convergence_slope():
    errs, hs = [], []
    for level in (1, 2, 3):
        mesh, x = make_sphere_mesh(level, degree=2)
        errs.append(abs(SurfaceGeometry(mesh, x).area() - 4 * np.pi))
        hs.append(mesh_width(mesh, x))
    slopes = np.log(np.array(errs[:-1]) / errs[1:]) / np.log(np.array(hs[:-1]) / hs[1:])
    # quadratic interpolation of the sphere: area error converges like h^4
    assert np.all(slopes >= 2.5)


def test_flat_reference_frame():
    mesh, x = flat_triangle()
    fr = element_frame(mesh, x, 0, quadrature(2))
    assert np.allclose(fr.area_element, 1.0)
    ref = np.array([[0.3, -0.7]] * 3)
    assert np.allclose(fr.tangential_gradient(ref), [[0.3, -0.7, 0.0]] * 3)


def test_tangential_gradient_is_tangent(sphere2):
    mesh, x = sphere2
    geom = SurfaceGeometry(mesh, x)
    grad = geom.gradient(x[:, 0])  # (E, nq, 3)
    J = geom.jacobian
    normal = np.cross(J[..., 0], J[..., 1])
    normal /= np.linalg.norm(normal, axis=-1, keepdims=True)
    assert np.max(np.abs(np.sum(grad * normal, axis=-1))) < 1e-12


def test_scaling_law(sphere2):
    mesh, x = sphere2
    g1 = SurfaceGeometry(mesh, x)
    g2 = SurfaceGeometry(mesh, 2 * x)
    assert np.allclose(g2.area_element, 4 * g1.area_element, rtol=1e-13)
    f = x[:, 0] * x[:, 1]
    # f scaled with the surface: f2(2y) = f(y), so gradients halve
    assert np.allclose(g2.gradient(f), 0.5 * g1.gradient(f), atol=1e-13)


def test_mesh_width():
    s = 1.7
    x = np.array([[0, 0, 0], [s, 0, 0], [s / 2, s * np.sqrt(3) / 2, 0]])
    assert mesh_width(SurfaceMesh(np.array([[0, 1, 2]]), 3, 1), x) == pytest.approx(s)
    hs = [mesh_width(*make_sphere_mesh(level, degree=2)) for level in (1, 2, 3)]
    assert all(abs(b / a - 0.5) < 0.1 for a, b in zip(hs[1:], hs[2:]))
    # coarsest mesh of a sweep close to h0 = 0.5 (frequency 3)
    assert abs(mesh_width(*make_sphere_mesh(frequency=3)) - 0.5) < 0.1


def test_degenerate_element_raises():
    mesh = SurfaceMesh(np.array([[0, 1, 2]]), 3, 1)
    x = np.array([[0.0, 0, 0], [1, 0, 0], [2, 1e-9, 0]])
    with pytest.raises(MeshBreakdownError):
        SurfaceGeometry(mesh, x)


def test_invalid_meshes():
    with pytest.raises(ValueError):
        SurfaceMesh(np.array([[0, 1, 3]]), 3, 1)
    with pytest.raises(ValueError):
        SurfaceMesh(np.array([[0, 1, 2]]), 3, 2)
    mesh, x = flat_triangle()
    with pytest.raises(ValueError):
        SurfaceGeometry(mesh, x[:2])


def test_load_vectors_against_matrices(sphere2, rng):
    mesh, x = sphere2
    geom = SurfaceGeometry(mesh, x)
    f = rng.standard_normal(mesh.n_nodes)
    g = rng.standard_normal((mesh.n_nodes, 2))
    assert np.allclose(geom.load(geom.values(f)), geom.mass_matrix @ f, atol=1e-13)
    assert np.allclose(geom.load(geom.values(g)), geom.mass_matrix @ g, atol=1e-13)
    assert np.allclose(geom.load_grad(geom.gradient(f)), geom.stiffness_matrix @ f, atol=1e-12)
    assert np.allclose(geom.load_grad(geom.gradient(g)), geom.stiffness_matrix @ g, atol=1e-12)


def test_mesh_file_round_trip(tmp_path, sphere2):
    mesh, x = sphere2
    write_mesh(tmp_path / "m.txt", mesh, x)
    mesh2, x2 = read_mesh(tmp_path / "m.txt")
    assert np.array_equal(mesh2.elements, mesh.elements) and mesh2.degree == 2
    assert np.array_equal(x2, x)


@pytest.mark.parametrize("degree", [1, 2])
def test_vtk_round_trip(tmp_path, degree):
    mesh, x = make_sphere_mesh(0, degree=degree)
    fields = {"u": np.zeros(mesh.n_nodes), "nu": x / np.linalg.norm(x, axis=1)[:, None]}
    write_vtk(tmp_path / "s.vtk", mesh, x, fields)
    mesh2, x2, f2 = read_vtk(tmp_path / "s.vtk")
    assert np.array_equal(x2, x)
    assert np.array_equal(mesh2.elements, mesh.elements)
    assert set(f2) == {"u", "nu"} and np.array_equal(f2["nu"], fields["nu"])


def test_vtk_geometry_only(tmp_path):
    mesh, x = make_sphere_mesh(0, degree=2)
    write_vtk(tmp_path / "g.vtk", mesh, x)
    text = (tmp_path / "g.vtk").read_text()
    assert "POINT_DATA" not in text and "CELL_TYPES 20" in text
    assert read_vtk(tmp_path / "g.vtk")[2] == {}


def test_vtk_rejects_bad_field(tmp_path):
    mesh, x = make_sphere_mesh(0, degree=1)
    with pytest.raises(ValueError):
        write_vtk(tmp_path / "b.vtk", mesh, x, {"u": np.zeros(5)})


def test_quality_report(sphere2):
    rep = quality_report(*sphere2)
    assert rep["boundary_edges"] == 0 and rep["min_gram_det"] > 0
    assert 40 < rep["min_angle_deg"] <= 60 <= rep["max_angle_deg"] < 80


@settings(max_examples=20, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5))
def test_translation_invariance(a, b, c):
    mesh, x = make_sphere_mesh(1, degree=2)
    g0 = SurfaceGeometry(mesh, x)
    g1 = SurfaceGeometry(mesh, x + [a, b, c])
    assert abs(g0.mass_matrix - g1.mass_matrix).max() < 1e-12
    assert abs(g0.stiffness_matrix - g1.stiffness_matrix).max() < 1e-11


def test_shape_function_tables_shape():
    sf = shape_functions(2, quadrature(6))
    assert sf.values.shape == (12, 6) and sf.grads.shape == (12, 6, 2)
