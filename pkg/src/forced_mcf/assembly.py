"""Surface-dependent matrices and nonlinear load vectors.

Everything is integrated on ``Gamma_h[x]`` through a
:class:`~forced_mcf.surface_mesh.SurfaceGeometry`. Nodal fields use the
shapes ``nu: (N, 3)``, ``H: (N,)``, ``u: (N, m)``; the blocked vector
layout ``j + l N`` used in the matrix-vector formulation is recovered with
:func:`blocked` / :func:`unblocked`.
"""
import numpy as np
from scipy import sparse

from .surface_mesh import SurfaceGeometry


def blocked(field):
    """(N, d) array -> length d N vector, component blocks stacked."""
    field = np.asarray(field)
    return field.T.ravel() if field.ndim == 2 else field.copy()


def unblocked(vec, d):
    return np.asarray(vec).reshape(d, -1).T


def mass_matrix(mesh, x, rule=None):
    return SurfaceGeometry(mesh, x, rule).mass_matrix


def stiffness_matrix(mesh, x, rule=None):
    return SurfaceGeometry(mesh, x, rule).stiffness_matrix


def lifted_matrix(mat, d):
    """Block-identity lift ``I_d (x) mat``."""
    if d == 1:
        return mat
    return sparse.kron(sparse.identity(d, format="csr"), mat, format="csr")


class FieldsAtQuadrature:
    """Values and broken gradients of ``(nu, H, u)`` at quadrature points."""

    def __init__(self, geom, nu, H, u):
        u = np.asarray(u, dtype=float)
        if u.ndim == 1:
            u = u[:, None]
        self.nu = geom.values(nu)  # (E, nq, 3)
        self.H = geom.values(H)  # (E, nq)
        self.u = geom.values(u)  # (E, nq, m)
        self.grad_nu = geom.gradient(nu)  # (E, nq, 3, 3)
        self.grad_u = geom.gradient(u)  # (E, nq, m, 3)
        self.alpha2 = np.sum(self.grad_nu**2, axis=(-2, -1))


def _forcing_terms(problem, q):
    g = problem.forcing(q.u)
    grad_g = np.einsum("eqi,eqic->eqc", problem.forcing_grad(q.u), q.grad_u)
    return g, grad_g


def normal_velocity(problem, q, t=None, points=None, include_rho2=False):
    """``V_h = -eps H_h + g(u_h)``, optionally plus ``rho2 . nu_h``."""
    g, _ = _forcing_terms(problem, q)
    V = -problem.eps * q.H + g
    if include_rho2 and problem.rho2 is not None:
        V = V + np.sum(problem.rho2(points, t) * q.nu, axis=-1)
    return V


def vec_g(geom, nu, H, u, problem, t=0.0, gradient_mode="interpolate"):
    """Right-hand side of the velocity equation ``K(x) v = g``, shape (N, 3).

    Entry (j, l) is ``int W_l phi_j + int grad(W_l) . grad phi_j`` with
    ``W = V_h nu_h (+ rho2)``. In ``"interpolate"`` mode the gradient acts on
    the degree-k interpolant of W; ``"product"`` uses the product rule at
    quadrature points instead.
    """
    u = np.asarray(u, dtype=float)
    if u.ndim == 1:
        u = u[:, None]
    q = FieldsAtQuadrature(geom, nu, H, u)
    g_q, grad_g = _forcing_terms(problem, q)
    V = -problem.eps * q.H + g_q
    W = V[..., None] * q.nu
    if problem.rho2 is not None:
        W = W + problem.rho2(geom.points, t)
    out = geom.load(W)

    if gradient_mode == "interpolate":
        Vn = -problem.eps * np.asarray(H) + problem.forcing(u)
        Wn = Vn[:, None] * np.asarray(nu)
        if problem.rho2 is not None:
            Wn = Wn + problem.rho2(geom.x, t)
        out += geom.stiffness_matrix @ Wn
    elif gradient_mode == "product":
        grad_V = -problem.eps * geom.gradient(H) + grad_g  # (E, nq, 3)
        grad_W = q.nu[..., :, None] * grad_V[..., None, :] + V[..., None, None] * q.grad_nu
        out += geom.load_grad(grad_W)
        if problem.rho2 is not None:
            out += geom.stiffness_matrix @ problem.rho2(geom.x, t)
    else:
        raise ValueError(f"unknown gradient mode {gradient_mode!r}")
    return out


def vec_f(geom, nu, H, u, problem, t=0.0, split_linear=True):
    """Nonlinear right-hand sides ``(f_nu (N,3), f_H (N,), f_u (N,m))``.

    f_nu = eps int a2 nu phi - int grad g(u) phi (+ int rho3 phi)
    f_H  = -int a2 V phi + int grad g(u) . grad phi (+ int rho4 phi)
    f_u  = int (F - V_full H u (+ rho1)) phi

    with ``a2 = |grad nu_h|^2``, ``V = -eps H_h + g(u_h)`` and
    ``V_full = V + rho2 . nu_h``, the normal velocity entering ``div v``.
    With ``split_linear`` the declared linear part of F is left out (it is
    handled implicitly by the caller).
    """
    u = np.asarray(u, dtype=float)
    if u.ndim == 1:
        u = u[:, None]
    q = FieldsAtQuadrature(geom, nu, H, u)
    g_q, grad_g = _forcing_terms(problem, q)
    V = -problem.eps * q.H + g_q
    pts = geom.points

    f_nu_q = problem.eps * q.alpha2[..., None] * q.nu - grad_g
    f_H_q = -q.alpha2 * V
    if problem.rho3 is not None:
        f_nu_q = f_nu_q + problem.rho3(pts, t)
    if problem.rho4 is not None:
        f_H_q = f_H_q + problem.rho4(pts, t)
    f_nu = geom.load(f_nu_q)
    f_H = geom.load(f_H_q) + geom.load_grad(grad_g)

    V_full = V
    if problem.rho2 is not None:
        V_full = V + np.sum(problem.rho2(pts, t) * q.nu, axis=-1)
    f_u_q = problem.kinetics_explicit(q.u, q.grad_u, pts, t, split_linear)
    f_u_q = f_u_q - (V_full * q.H)[..., None] * q.u
    if problem.rho1 is not None:
        f_u_q = f_u_q + problem.rho1(pts, t)
    _check_finite(f_u_q, "kinetics")
    f_u = geom.load(f_u_q)
    return f_nu, f_H, f_u


def vec_F(geom, u, problem, t=0.0, split_linear=True):
    """Load vector ``int (F(u_h, grad u_h) + rho1) phi_j``, shape (N, m)."""
    u = np.asarray(u, dtype=float)
    if u.ndim == 1:
        u = u[:, None]
    uq = geom.values(u)
    grad_u = geom.gradient(u)
    F = problem.kinetics_explicit(uq, grad_u, geom.points, t, split_linear)
    if problem.rho1 is not None:
        F = F + problem.rho1(geom.points, t)
    _check_finite(F, "kinetics")
    return geom.load(F)


def _check_finite(arr, what):
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite {what} evaluation")
