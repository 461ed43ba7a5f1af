from math import factorial

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from forced_mcf.ref_element import (
    MAX_QUADRATURE_DEGREE,
    eval_basis,
    eval_basis_grad,
    local_nodes,
    monomial_integral,
    quadrature,
)


def bary_from_ref(xi):
    return np.array([1 - xi[0] - xi[1], xi[0], xi[1]])


def oracle_monomial(a, b, c):
    return factorial(a) * factorial(b) * factorial(c) / factorial(a + b + c + 2)


def test_vertex_is_nodal():
    assert np.allclose(eval_basis(2, (1, 0, 0)), [1, 0, 0, 0, 0, 0], atol=0)


def test_centroid_partition_of_unity():
    vals = eval_basis(2, (1 / 3, 1 / 3, 1 / 3))
    assert vals.shape == (6,)
    assert abs(vals.sum() - 1) < 1e-15


def test_midedge_basis():
    # lambda = (1/2, 1/2, 0) is the midpoint of edge (0, 1): local node 5
    vals = eval_basis(2, (0.5, 0.5, 0.0))
    expected = np.zeros(6)
    expected[5] = 1.0
    assert np.allclose(vals, expected, atol=1e-15)


@pytest.mark.parametrize("k", [1, 2])
def test_lagrange_delta_property(k):
    nodes = local_nodes(k)
    vals = eval_basis(k, nodes)
    assert np.allclose(vals, np.eye(len(nodes)), atol=1e-15)


@pytest.mark.parametrize("k", [1, 2])
def test_partition_of_unity_random(k, rng):
    lam = rng.dirichlet(np.ones(3), size=100)
    assert np.allclose(eval_basis(k, lam).sum(axis=1), 1.0, atol=1e-13)
    assert np.allclose(eval_basis_grad(k, lam).sum(axis=1), 0.0, atol=1e-13)


def test_linear_gradients_constant(rng):
    g = eval_basis_grad(1, rng.dirichlet(np.ones(3), size=5))
    assert np.allclose(g, [[-1, -1], [1, 0], [0, 1]])


@pytest.mark.parametrize("lam", [(1.0, 0.0, 0.0), (0.2, 0.3, 0.5)])
def test_quadratic_gradients_match_finite_differences(lam):
    xi = np.array(lam[1:])
    h = 1e-6
    fd = np.empty((6, 2))
    for d in range(2):
        e = np.zeros(2)
        e[d] = h
        fd[:, d] = (eval_basis(2, bary_from_ref(xi + e)) - eval_basis(2, bary_from_ref(xi - e))) / (2 * h)
    assert np.allclose(eval_basis_grad(2, lam), fd, atol=1e-8)


def test_centroid_rule():
    r = quadrature(1)
    assert r.points.shape == (1, 3)
    assert np.allclose(r.points[0], 1 / 3)
    assert np.allclose(r.weights, [0.5])


@pytest.mark.parametrize("degree", range(1, MAX_QUADRATURE_DEGREE + 1))
def test_weights_sum_to_reference_area(degree):
    assert abs(quadrature(degree).weights.sum() - 0.5) < 1e-15


@pytest.mark.parametrize("degree", range(1, MAX_QUADRATURE_DEGREE + 1))
def test_exactness_all_monomials(degree):
    r = quadrature(degree)
    for a in range(degree + 1):
        for b in range(degree + 1 - a):
            for c in range(degree + 1 - a - b):
                val = np.sum(r.weights * np.prod(r.points ** [a, b, c], axis=1))
                assert abs(val - oracle_monomial(a, b, c)) < 1e-15


def test_degree_six_l1_cubed_l2_cubed():
    r = quadrature(6)
    val = np.sum(r.weights * r.points[:, 0] ** 3 * r.points[:, 1] ** 3)
    assert abs(val - factorial(3) ** 2 / factorial(8)) < 1e-16


def test_monomial_integral_helper():
    assert monomial_integral(0, 0, 0) == pytest.approx(0.5)
    assert monomial_integral(2, 1, 0) == pytest.approx(oracle_monomial(2, 1, 0))


def test_unsupported_requests():
    with pytest.raises(ValueError):
        quadrature(MAX_QUADRATURE_DEGREE + 1)
    with pytest.raises(ValueError):
        eval_basis(3, (1, 0, 0))


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1))
def test_quadratic_reproduces_quadratics(s, t):
    # interpolation of p(xi) = xi1^2 - 3 xi1 xi2 + 2 is exact for k = 2
    if s + t > 1:
        s, t = 1 - s, 1 - t
    nodes = local_nodes(2)
    p = lambda lam: lam[..., 1] ** 2 - 3 * lam[..., 1] * lam[..., 2] + 2
    lam = np.array([1 - s - t, s, t])
    assert eval_basis(2, lam) @ p(nodes) == pytest.approx(p(lam), abs=1e-13)
