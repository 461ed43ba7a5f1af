"""Lagrange shape functions and quadrature on the reference triangle.

Points are given in barycentric coordinates ``(l0, l1, l2)``; the reference
coordinates are ``xi = l1`` and ``eta = l2``, so the reference triangle is
``{xi >= 0, eta >= 0, xi + eta <= 1}`` with area 1/2.

Local node ordering for quadratic elements: the three vertices, then the
three mid-edge nodes, where node ``3 + i`` sits on the edge opposite
vertex ``i``::

    node 3: midpoint of (1, 2)
    node 4: midpoint of (2, 0)
    node 5: midpoint of (0, 1)
"""
from dataclasses import dataclass
from math import factorial

import numpy as np

SUPPORTED_DEGREES = (1, 2)

# d(lambda_i)/d(xi, eta)
_DLAMBDA = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])

# vertex pairs carrying the mid-edge nodes 3, 4, 5
QUADRATIC_EDGES = ((1, 2), (2, 0), (0, 1))


def n_local(k):
    return (k + 1) * (k + 2) // 2


def _check_degree(k):
    if k not in SUPPORTED_DEGREES:
        raise ValueError(f"unsupported element degree {k}; only 1 and 2 are implemented")


def local_nodes(k):
    """Barycentric coordinates of the local Lagrange nodes, shape (n_loc, 3)."""
    _check_degree(k)
    nodes = list(np.eye(3))
    if k == 2:
        for a, b in QUADRATIC_EDGES:
            p = np.zeros(3)
            p[a] = p[b] = 0.5
            nodes.append(p)
    return np.array(nodes)


def eval_basis(k, lam):
    """Basis values at barycentric point(s) ``lam``.

    ``lam`` has shape (3,) or (n, 3); the result has shape (n_loc,) or
    (n, n_loc) accordingly.
    """
    _check_degree(k)
    lam = np.asarray(lam, dtype=float)
    single = lam.ndim == 1
    lam = np.atleast_2d(lam)
    if k == 1:
        vals = lam.copy()
    else:
        l0, l1, l2 = lam.T
        vals = np.column_stack([
            l0 * (2 * l0 - 1),
            l1 * (2 * l1 - 1),
            l2 * (2 * l2 - 1),
            4 * l1 * l2,
            4 * l2 * l0,
            4 * l0 * l1,
        ])
    return vals[0] if single else vals


def eval_basis_grad(k, lam):
    """Gradients w.r.t. the reference coordinates ``(xi, eta)``.

    Shape (n_loc, 2) for a single point, (n, n_loc, 2) otherwise.
    """
    _check_degree(k)
    lam = np.asarray(lam, dtype=float)
    single = lam.ndim == 1
    lam = np.atleast_2d(lam)
    n = lam.shape[0]
    if k == 1:
        grads = np.broadcast_to(_DLAMBDA, (n, 3, 2)).copy()
    else:
        d = _DLAMBDA
        grads = np.empty((n, 6, 2))
        for i in range(3):
            grads[:, i, :] = (4 * lam[:, i] - 1)[:, None] * d[i]
        for node, (a, b) in enumerate(QUADRATIC_EDGES, start=3):
            grads[:, node, :] = 4 * (lam[:, a, None] * d[b] + lam[:, b, None] * d[a])
    return grads[0] if single else grads


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray  # (nq, 3) barycentric
    weights: np.ndarray  # (nq,), sum 1/2
    degree: int

    def __len__(self):
        return len(self.weights)


def _orbit_s3(a, w):
    """Permutations of (1 - 2a, a, a) with a common weight."""
    b = 1.0 - 2.0 * a
    pts = [(b, a, a), (a, b, a), (a, a, b)]
    return pts, [w] * 3


def _orbit_s111(a, b, w):
    c = 1.0 - a - b
    pts = [(a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)]
    return pts, [w] * 6


def _build(orbits, degree, centroid_weight=None):
    pts, wts = [], []
    if centroid_weight is not None:
        pts.append((1 / 3, 1 / 3, 1 / 3))
        wts.append(centroid_weight)
    for p, w in orbits:
        pts.extend(p)
        wts.extend(w)
    # tables are normalised to area 1
    return QuadratureRule(np.array(pts), 0.5 * np.array(wts), degree)


def _rules():
    s15 = np.sqrt(15.0)
    rules = {
        1: _build([], 1, centroid_weight=1.0),
        2: _build([_orbit_s3(1 / 6, 1 / 3)], 2),
        4: _build([
            _orbit_s3(0.445948490915964886318329253883051, 0.223381589678011465694999008433156),
            _orbit_s3(0.091576213509770743459571463402202, 0.109951743655321867638306324900214),
        ], 4),
        5: _build([
            _orbit_s3((6 - s15) / 21, (155 - s15) / 1200),
            _orbit_s3((6 + s15) / 21, (155 + s15) / 1200),
        ], 5, centroid_weight=9 / 40),
        6: _build([
            _orbit_s3(0.249286745170910421291638553107019, 0.116786275726379366030690538513226),
            _orbit_s3(0.063089014491502228340331602870819, 0.050844906370206816920936809106869),
            _orbit_s111(0.053145049844816947353249671631398, 0.310352451033784405416607733956552,
                        0.082851075618373575193553456420442),
        ], 6),
    }
    rules[3] = rules[4]
    return rules


_RULES = _rules()
MAX_QUADRATURE_DEGREE = max(_RULES)
DEFAULT_QUADRATURE_DEGREE = 6


def quadrature(exactness_degree):
    """Symmetric rule with positive weights exact up to ``exactness_degree``."""
    d = max(int(exactness_degree), 1)
    if d > MAX_QUADRATURE_DEGREE:
        raise ValueError(f"no quadrature rule of degree {exactness_degree} (max {MAX_QUADRATURE_DEGREE})")
    return _RULES[d]


def monomial_integral(a, b, c=0):
    """Exact integral of l0^c * l1^a * l2^b over the reference triangle."""
    return factorial(a) * factorial(b) * factorial(c) / factorial(a + b + c + 2)


@dataclass(frozen=True)
class ShapeFunctionSet:
    """Basis values and reference gradients tabulated at a rule's points."""

    degree: int
    rule: QuadratureRule
    values: np.ndarray  # (nq, n_loc)
    grads: np.ndarray  # (nq, n_loc, 2)

    @property
    def n_loc(self):
        return n_local(self.degree)


def shape_functions(k, rule=None):
    if rule is None:
        rule = quadrature(DEFAULT_QUADRATURE_DEGREE)
    return ShapeFunctionSet(k, rule, eval_basis(k, rule.points), eval_basis_grad(k, rule.points))


__all__ = [
    "QuadratureRule",
    "ShapeFunctionSet",
    "eval_basis",
    "eval_basis_grad",
    "local_nodes",
    "monomial_integral",
    "n_local",
    "quadrature",
    "shape_functions",
]
