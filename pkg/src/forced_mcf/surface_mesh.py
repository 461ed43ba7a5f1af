"""Closed triangulated surfaces with (possibly curved) Lagrange elements.

Node positions are kept apart from connectivity as an ``(N, 3)`` array, so
the same :class:`SurfaceMesh` serves every time level of a moving surface.
"""
from dataclasses import dataclass
from functools import cached_property
from itertools import combinations

import numpy as np
from scipy import sparse

from .ref_element import QUADRATIC_EDGES, n_local, quadrature, shape_functions, DEFAULT_QUADRATURE_DEGREE

DEGENERACY_TOL = 1e-14

# our local ordering -> VTK_QUADRATIC_TRIANGLE ordering (corners, then edges 01, 12, 20)
_VTK_ORDER = {1: [0, 1, 2], 2: [0, 1, 2, 5, 3, 4]}
_VTK_CELL_TYPE = {1: 5, 2: 22}


class MeshBreakdownError(RuntimeError):
    """Raised when an element's Gram determinant falls below tolerance."""


@dataclass(frozen=True)
class SurfaceMesh:
    elements: np.ndarray  # (E, n_loc) node indices
    n_nodes: int
    degree: int

    def __post_init__(self):
        el = np.ascontiguousarray(self.elements, dtype=np.int64)
        object.__setattr__(self, "elements", el)
        if el.ndim != 2 or el.shape[1] != n_local(self.degree):
            raise ValueError(f"elements must have {n_local(self.degree)} columns for degree {self.degree}")
        if el.size and (el.min() < 0 or el.max() >= self.n_nodes):
            raise ValueError("element node index out of range")

    @property
    def n_elements(self):
        return self.elements.shape[0]

    @property
    def corners(self):
        return self.elements[:, :3]

    @cached_property
    def edges(self):
        """Unique corner-to-corner edges as sorted pairs, plus per-edge element counts."""
        c = self.corners
        e = np.concatenate([c[:, [1, 2]], c[:, [2, 0]], c[:, [0, 1]]])
        e.sort(axis=1)
        uniq, counts = np.unique(e, axis=0, return_counts=True)
        return uniq, counts

    def boundary_edge_count(self):
        _, counts = self.edges
        return int(np.sum(counts != 2))

    def euler_characteristic(self):
        n_vertices = np.unique(self.corners).size
        return n_vertices - len(self.edges[0]) + self.n_elements


@dataclass(frozen=True)
class ElementFrame:
    """Per-quadrature-point geometry of one element."""

    jacobian: np.ndarray  # (nq, 3, 2)
    area_element: np.ndarray  # (nq,)
    pinv: np.ndarray  # (nq, 2, 3), (J^T J)^{-1} J^T

    def tangential_gradient(self, ref_grad):
        """Map reference gradients (..., 2) at each point to surface gradients (..., 3)."""
        return np.einsum("qdc,q...d->q...c", self.pinv, ref_grad)


class SurfaceGeometry:
    """All element frames of ``Gamma_h[x]`` evaluated at once.

    Holds tabulated basis data and offers interpolation, tangential gradients
    and load-vector integration for finite element fields on the surface.
    Field arrays are nodal, shaped ``(N,)`` or ``(N, c)``.
    """

    def __init__(self, mesh, x, rule=None, degeneracy_tol=DEGENERACY_TOL):
        x = np.asarray(x, dtype=float)
        if x.shape != (mesh.n_nodes, 3):
            raise ValueError(f"positions must have shape ({mesh.n_nodes}, 3), got {x.shape}")
        if rule is None:
            rule = quadrature(DEFAULT_QUADRATURE_DEGREE)
        self.mesh = mesh
        self.x = x
        self.rule = rule
        sf = shape_functions(mesh.degree, rule)
        self.phi = sf.values  # (nq, nloc)
        xe = x[mesh.elements]  # (E, nloc, 3)
        # (E, 1, 3, nloc) @ (nq, nloc, 2) -> (E, nq, 3, 2)
        self.jacobian = np.matmul(xe.transpose(0, 2, 1)[:, None], sf.grads)
        gram = np.matmul(self.jacobian.transpose(0, 1, 3, 2), self.jacobian)
        det = gram[..., 0, 0] * gram[..., 1, 1] - gram[..., 0, 1] * gram[..., 1, 0]
        self.gram_det = det
        diam = _element_diameters(x, mesh.corners)
        bad = det < degeneracy_tol * diam[:, None] ** 4
        if bad.any():
            e = int(np.nonzero(bad.any(axis=1))[0][0])
            raise MeshBreakdownError(f"degenerate element {e}: Gram determinant {det[e].min():.3e}")
        inv = np.empty_like(gram)
        inv[..., 0, 0] = gram[..., 1, 1]
        inv[..., 1, 1] = gram[..., 0, 0]
        inv[..., 0, 1] = -gram[..., 0, 1]
        inv[..., 1, 0] = -gram[..., 1, 0]
        inv /= det[..., None, None]
        self.gram_inv = inv
        self.area_element = np.sqrt(det)
        self.dA = self.area_element * rule.weights  # (E, nq)
        jg = np.matmul(self.jacobian, inv)  # J G^{-1}, (E, nq, 3, 2)
        self.grad_phi = np.matmul(sf.grads, jg.transpose(0, 1, 3, 2))  # (E, nq, nloc, 3)
        self.points = np.matmul(self.phi, xe)  # (E, nq, 3)

    @property
    def min_gram_det(self):
        return float(self.gram_det.min())

    def frame(self, element):
        jac = self.jacobian[element]
        pinv = np.einsum("qdf,qcf->qdc", self.gram_inv[element], jac)
        return ElementFrame(jac, self.area_element[element], pinv)

    def area(self):
        return float(self.dA.sum())

    # -- evaluation of FE fields at quadrature points -------------------
    def values(self, f):
        fe = np.asarray(f, dtype=float)[self.mesh.elements]  # (E, nloc, ...)
        if fe.ndim == 2:
            return fe @ self.phi.T
        return np.matmul(self.phi, fe)

    def gradient(self, f):
        """Broken tangential gradient, shape (E, nq, 3) or (E, nq, c, 3)."""
        fe = np.asarray(f, dtype=float)[self.mesh.elements]
        if fe.ndim == 2:
            return np.matmul(fe[:, None, None, :], self.grad_phi)[:, :, 0, :]
        return np.matmul(fe.transpose(0, 2, 1)[:, None], self.grad_phi)

    # -- load vectors ----------------------------------------------------
    def _scatter(self, local):
        """Sum element contributions (E, nloc, ...) into nodal vectors."""
        idx = self.mesh.elements.ravel()
        n = self.mesh.n_nodes
        if local.ndim == 2:
            return np.bincount(idx, weights=local.ravel(), minlength=n)
        flat = local.reshape(idx.size, -1)
        out = np.column_stack([np.bincount(idx, weights=flat[:, c], minlength=n)
                               for c in range(flat.shape[1])])
        return out.reshape((n,) + local.shape[2:])

    def load(self, vals):
        """Entries ``int vals * phi_j`` for qp values (E, nq) or (E, nq, c)."""
        vals = np.asarray(vals, dtype=float)
        if vals.ndim == 2:
            local = (self.dA * vals) @ self.phi
        else:
            local = np.matmul(self.phi.T, self.dA[..., None] * vals)
        return self._scatter(local)

    def load_grad(self, vecs):
        """Entries ``int vecs . grad phi_j`` for qp vectors (E, nq, 3) or (E, nq, c, 3)."""
        vecs = np.asarray(vecs, dtype=float)
        E, nq, nloc, _ = self.grad_phi.shape
        single = vecs.ndim == 3
        if single:
            vecs = vecs[:, :, None, :]
        w = self.dA[..., None, None] * vecs  # (E, nq, c, 3)
        B = self.grad_phi.transpose(0, 2, 1, 3).reshape(E, nloc, nq * 3)
        W = w.transpose(0, 1, 3, 2).reshape(E, nq * 3, -1)
        local = np.matmul(B, W)
        return self._scatter(local[..., 0] if single else local)

    # -- matrices --------------------------------------------------------
    def _assemble(self, local):
        el = self.mesh.elements
        nloc = el.shape[1]
        rows = np.repeat(el, nloc, axis=1).ravel()
        cols = np.tile(el, (1, nloc)).ravel()
        n = self.mesh.n_nodes
        mat = sparse.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()
        mat.sum_duplicates()
        # duplicates of (i, j) and (j, i) are summed in different orders
        return ((mat + mat.T) * 0.5).tocsr()

    @cached_property
    def mass_matrix(self):
        local = np.matmul((self.dA[:, :, None] * self.phi).transpose(0, 2, 1), self.phi)
        return self._assemble(local)

    @cached_property
    def stiffness_matrix(self):
        E, nq, nloc, _ = self.grad_phi.shape
        B = self.grad_phi.transpose(0, 2, 1, 3).reshape(E, nloc, nq * 3)
        w = np.repeat(self.dA, 3, axis=1)[:, None, :]
        local = np.matmul(B * w, B.transpose(0, 2, 1))
        return self._assemble(local)


def element_frame(mesh, x, element, rule=None):
    """Jacobian, area element and pseudo-inverse factor of one element."""
    sub = SurfaceMesh(mesh.elements[[element]], mesh.n_nodes, mesh.degree)
    return SurfaceGeometry(sub, x, rule).frame(0)


def _element_diameters(x, corners):
    p = x[corners]
    d = [np.linalg.norm(p[:, a] - p[:, b], axis=1) for a, b in ((0, 1), (1, 2), (2, 0))]
    return np.max(d, axis=0)


def mesh_width(mesh, x):
    """Maximal element diameter (largest corner-to-corner distance)."""
    return float(_element_diameters(np.asarray(x), mesh.corners).max())


def quality_report(mesh, x):
    """Shape-regularity summary of the corner triangles."""
    x = np.asarray(x)
    p = x[mesh.corners]
    a = np.linalg.norm(p[:, 1] - p[:, 2], axis=1)
    b = np.linalg.norm(p[:, 2] - p[:, 0], axis=1)
    c = np.linalg.norm(p[:, 0] - p[:, 1], axis=1)
    area = 0.5 * np.linalg.norm(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1)
    inradius = 2 * area / (a + b + c)
    diam = np.max([a, b, c], axis=0)
    cos_angles = np.array([
        (b**2 + c**2 - a**2) / (2 * b * c),
        (c**2 + a**2 - b**2) / (2 * c * a),
        (a**2 + b**2 - c**2) / (2 * a * b),
    ])
    angles = np.degrees(np.arccos(np.clip(cos_angles, -1, 1)))
    geom = SurfaceGeometry(mesh, x)
    return {
        "nodes": mesh.n_nodes,
        "elements": mesh.n_elements,
        "degree": mesh.degree,
        "h": float(diam.max()),
        "h_min": float(diam.min()),
        "max_diameter_over_inradius": float((diam / inradius).max()),
        "min_angle_deg": float(angles.min()),
        "max_angle_deg": float(angles.max()),
        "area": geom.area(),
        "min_gram_det": geom.min_gram_det,
        "boundary_edges": mesh.boundary_edge_count(),
    }


# -- mesh generation --------------------------------------------------------

def _icosahedron():
    phi = (1 + np.sqrt(5.0)) / 2
    v = []
    for s1 in (-1, 1):
        for s2 in (-1, 1):
            v.append((0, s1, s2 * phi))
            v.append((s1, s2 * phi, 0))
            v.append((s2 * phi, 0, s1))
    v = np.array(v, dtype=float)
    faces = []
    for tri in combinations(range(12), 3):
        p = v[list(tri)]
        if all(abs(np.linalg.norm(p[i] - p[j]) - 2.0) < 1e-9 for i, j in ((0, 1), (1, 2), (0, 2))):
            n = np.cross(p[1] - p[0], p[2] - p[0])
            faces.append(tri if n @ p.sum(axis=0) > 0 else (tri[0], tri[2], tri[1]))
    assert len(faces) == 20
    return v, np.array(faces)


def add_quadratic_nodes(corners, x, project=None):
    """Append one node per edge of a linear triangulation.

    Returns the (E, 6) connectivity and extended positions. ``project`` maps
    chord midpoints onto the exact surface.
    """
    edge_index = {}
    new_points = []
    n = len(x)
    elements = np.empty((len(corners), 6), dtype=np.int64)
    elements[:, :3] = corners
    for e, tri in enumerate(corners):
        for slot, (a, b) in enumerate(QUADRATIC_EDGES, start=3):
            key = (min(tri[a], tri[b]), max(tri[a], tri[b]))
            if key not in edge_index:
                edge_index[key] = n + len(new_points)
                new_points.append(0.5 * (x[key[0]] + x[key[1]]))
            elements[e, slot] = edge_index[key]
    mid = np.array(new_points).reshape(-1, 3)
    if project is not None and len(mid):
        mid = project(mid)
    return elements, np.vstack([x, mid])


def subdivide_icosahedron(frequency):
    """Unit-sphere vertices and triangles of a frequency-``n`` geodesic icosphere."""
    if frequency < 1:
        raise ValueError("frequency must be >= 1")
    n = frequency
    v0, faces = _icosahedron()
    index = {(i,): i for i in range(12)}
    points = [p for p in v0]
    tris = []
    for face in faces:
        local = {}
        for i in range(n + 1):
            for j in range(n + 1 - i):
                weights = {face[0]: n - i - j, face[1]: i, face[2]: j}
                key = tuple(sorted((vi, w) for vi, w in weights.items() if w > 0))
                if len(key) == 1:
                    key = (key[0][0],)
                if key not in index:
                    index[key] = len(points)
                    points.append(sum(w * v0[vi] for vi, w in weights.items()) / n)
                local[i, j] = index[key]
        for i in range(n):
            for j in range(n - i):
                tris.append((local[i, j], local[i + 1, j], local[i, j + 1]))
                if i + j < n - 1:
                    tris.append((local[i + 1, j], local[i + 1, j + 1], local[i, j + 1]))
    pts = np.array(points)
    pts /= np.linalg.norm(pts, axis=1)[:, None]
    return pts, np.array(tris, dtype=np.int64)


def jitter_vertices(pts, tris, amount, seed=0):
    """Move unit-sphere vertices tangentially by up to ``amount`` times the
    shortest incident edge (seeded), then project back to the sphere."""
    rng = np.random.default_rng(seed)
    e = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    lengths = np.linalg.norm(pts[e[:, 0]] - pts[e[:, 1]], axis=1)
    shortest = np.full(len(pts), np.inf)
    np.minimum.at(shortest, e[:, 0], lengths)
    np.minimum.at(shortest, e[:, 1], lengths)
    d = rng.uniform(-1.0, 1.0, size=pts.shape)
    d -= np.sum(d * pts, axis=1)[:, None] * pts  # tangential part
    d /= np.maximum(np.linalg.norm(d, axis=1), 1.0)[:, None]
    moved = pts + amount * shortest[:, None] * d
    return moved / np.linalg.norm(moved, axis=1)[:, None]


def make_sphere_mesh(refinement_level=0, radius=1.0, degree=2, frequency=None, jitter=0.0, seed=0):
    """Icosahedral sphere mesh with every node on the sphere.

    ``refinement_level`` l gives subdivision frequency 2**l (edge halving);
    an explicit ``frequency`` allows intermediate resolutions. A positive
    ``jitter`` perturbs the vertices (see :func:`jitter_vertices`) to break
    the symmetry of the subdivision.
    Returns ``(mesh, x)`` with ``x`` of shape (N, 3).
    """
    if frequency is None:
        if refinement_level < 0:
            raise ValueError("refinement_level must be >= 0")
        frequency = 2 ** int(refinement_level)
    if not 0 <= jitter < 0.5:
        raise ValueError("jitter must lie in [0, 0.5)")
    pts, tris = subdivide_icosahedron(int(frequency))
    if jitter > 0:
        pts = jitter_vertices(pts, tris, jitter, seed)

    def project(p):
        return radius * p / np.linalg.norm(p, axis=1)[:, None]

    x = radius * pts
    if degree == 1:
        elements = tris
    elif degree == 2:
        elements, x = add_quadratic_nodes(tris, x, project)
    else:
        raise ValueError(f"unsupported element degree {degree}")
    x = project(x)
    return SurfaceMesh(elements, len(x), degree), x


def sphere_frequency_for_nodes(target_nodes, degree=2):
    """Subdivision frequency whose node count is closest to ``target_nodes``."""
    # linear icosphere: 10 n^2 + 2 vertices; quadratic doubles the frequency
    per = 10 * (2 if degree == 2 else 1) ** 2
    n = max(1, int(round(np.sqrt(max(target_nodes - 2, 0) / per))))
    return min((m for m in (n - 1, n, n + 1) if m >= 1), key=lambda m: abs(per * m * m + 2 - target_nodes))


# -- I/O ----------------------------------------------------------------------

def write_mesh(path, mesh, x):
    """Plain text: header ``N E k``, N coordinate lines, E connectivity lines."""
    x = np.asarray(x)
    with open(path, "w") as fh:
        fh.write(f"{mesh.n_nodes} {mesh.n_elements} {mesh.degree}\n")
        np.savetxt(fh, x, fmt="%.17g")
        np.savetxt(fh, mesh.elements, fmt="%d")


def read_mesh(path):
    with open(path) as fh:
        n, e, k = (int(t) for t in fh.readline().split())
        x = np.loadtxt(fh, max_rows=n, ndmin=2)
        elements = np.loadtxt(fh, max_rows=e, dtype=np.int64, ndmin=2)
    return SurfaceMesh(elements, n, k), x


def write_vtk(path, mesh, x, fields=None, title="forced mean curvature flow"):
    """Legacy ASCII VTK unstructured grid with nodal scalar/vector fields.

    ``fields`` maps names to arrays of shape (N,) or (N, 3).
    """
    x = np.asarray(x, dtype=float)
    fields = fields or {}
    n = mesh.n_nodes
    for name, f in fields.items():
        f = np.asarray(f)
        if f.shape not in ((n,), (n, 3)):
            raise ValueError(f"field {name!r} has shape {f.shape}; expected ({n},) or ({n}, 3)")
    order = _VTK_ORDER[mesh.degree]
    nloc = len(order)
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write(title.replace("\n", " ")[:255] + "\n")
        fh.write("ASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {n} double\n")
        np.savetxt(fh, x, fmt="%.17g")
        fh.write(f"CELLS {mesh.n_elements} {mesh.n_elements * (nloc + 1)}\n")
        cells = np.column_stack([np.full(mesh.n_elements, nloc), mesh.elements[:, order]])
        np.savetxt(fh, cells, fmt="%d")
        fh.write(f"CELL_TYPES {mesh.n_elements}\n")
        np.savetxt(fh, np.full(mesh.n_elements, _VTK_CELL_TYPE[mesh.degree]), fmt="%d")
        if fields:
            fh.write(f"POINT_DATA {n}\n")
            for name, f in fields.items():
                f = np.asarray(f, dtype=float)
                if f.ndim == 1:
                    fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                else:
                    fh.write(f"VECTORS {name} double\n")
                np.savetxt(fh, f.reshape(n, -1), fmt="%.17g")


def read_vtk(path):
    """Read back a file produced by :func:`write_vtk`.

    Returns ``(mesh, x, fields)``.
    """
    with open(path) as fh:
        tokens = fh.read().split("\n")
    pos = 0

    def next_line():
        nonlocal pos
        while not tokens[pos].strip():
            pos += 1
        line = tokens[pos]
        pos += 1
        return line

    def read_numbers(count, dtype=float):
        vals = []
        while len(vals) < count:
            vals.extend(next_line().split())
        return np.array(vals[:count], dtype=dtype)

    for _ in range(4):
        next_line()
    _, n, _ = next_line().split()
    n = int(n)
    x = read_numbers(3 * n).reshape(n, 3)
    _, ne, total = next_line().split()
    ne, total = int(ne), int(total)
    cells = read_numbers(total, int).reshape(ne, -1)
    next_line()
    types = read_numbers(ne, int)
    degree = 2 if types[0] == 22 else 1
    inverse = np.argsort(_VTK_ORDER[degree])
    elements = cells[:, 1:][:, inverse]
    fields = {}
    while pos < len(tokens) and any(t.strip() for t in tokens[pos:]):
        header = next_line().split()
        if header[0] == "POINT_DATA":
            continue
        if header[0] == "SCALARS":
            next_line()  # lookup table
            fields[header[1]] = read_numbers(n)
        elif header[0] == "VECTORS":
            fields[header[1]] = read_numbers(3 * n).reshape(n, 3)
    return SurfaceMesh(elements, n, degree), x, fields
