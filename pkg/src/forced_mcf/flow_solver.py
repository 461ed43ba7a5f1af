"""Linearly implicit BDF time stepping of forced mean curvature flow.

Two schemes are provided. ``"coupled"`` evolves ``w = (nu, H, u)`` with one
mass/stiffness pair and the non-divergence form of the surface PDE.
``"conservative"`` evolves ``u`` through the discrete time derivative of
``M(x) u`` and so needs past mass-weighted products.

All matrices of step n are assembled on the extrapolated surface
``Gamma_h[x~^n]``; the new positions follow from ``BDF(x)^n = v^n``.
"""
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.sparse.linalg import factorized

from . import bdf
from .assembly import vec_F, vec_f, vec_g
from .linalg import solve_spd
from .ref_element import quadrature, shape_functions
from .surface_mesh import DEGENERACY_TOL, MeshBreakdownError, SurfaceGeometry

log = logging.getLogger(__name__)

SCHEMES = ("coupled", "conservative")


@dataclass
class FlowState:
    t: float
    x: np.ndarray  # (N, 3)
    v: np.ndarray  # (N, 3)
    nu: np.ndarray  # (N, 3)
    H: np.ndarray  # (N,)
    u: np.ndarray  # (N, m)
    # M(x~) u stored for the conservative scheme
    mass_u: Optional[np.ndarray] = None

    def check_finite(self):
        for name in ("x", "v", "nu", "H", "u"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise FloatingPointError(f"non-finite {name} at t={self.t:g}")


@dataclass(frozen=True)
class SolverConfig:
    tau: float
    T: float
    q: int = 2
    scheme: str = "coupled"
    tol: float = 1e-10
    maxiter: Optional[int] = None
    degeneracy_tol: float = DEGENERACY_TOL
    output_every: int = 1
    startup: str = "cascade"
    split_linear: bool = True
    gradient_mode: str = "interpolate"
    quadrature_degree: int = 6
    t0: float = 0.0
    allow_order_6: bool = False
    startup_substeps: int = 16

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.T - self.t0 < self.tau * (1 - 1e-9):
            raise ValueError("final time must be at least one step after t0")
        if not 0 < self.tol < 1:
            raise ValueError("linear solver tolerance must lie in (0, 1)")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if self.startup not in ("cascade", "exact"):
            raise ValueError("startup must be 'cascade' or 'exact'")
        if self.startup_substeps < 1:
            raise ValueError("startup_substeps must be >= 1")
        if self.output_every < 1:
            raise ValueError("output cadence must be >= 1")
        bdf.coefficients(self.q, self.allow_order_6)

    @property
    def n_steps(self):
        return int(round((self.T - self.t0) / self.tau))


@dataclass
class StepDiagnostics:
    t: float
    iterations_v: int
    iterations_w: int
    iterations_u: int
    residual: float
    condition_estimate: float
    min_gram_det: float
    position_identity: float
    norm_H: float
    norm_u: float
    mean_radius: float

    CSV_HEADER = ("t,iterations_v,iterations_w,iterations_u,residual,condition_estimate,"
                  "min_gram_det,position_identity,norm_H,norm_u,mean_radius")

    def csv_row(self):
        return ",".join(repr(float(getattr(self, f))) if isinstance(getattr(self, f), float)
                        else str(getattr(self, f)) for f in self.__dataclass_fields__)


@dataclass
class Trajectory:
    initial: FlowState
    states: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)

    @property
    def final(self):
        return self.states[-1] if self.states else self.initial


class FlowBreakdown(RuntimeError):
    """A step failed; ``result`` holds everything computed before it."""

    def __init__(self, msg, result):
        super().__init__(msg)
        self.result = result


def min_gram_determinant(mesh, x, rule=None):
    rule = rule or quadrature(6)
    sf = shape_functions(mesh.degree, rule)
    J = np.matmul(np.asarray(x)[mesh.elements].transpose(0, 2, 1)[:, None], sf.grads)
    G = np.matmul(J.transpose(0, 1, 3, 2), J)
    return float((G[..., 0, 0] * G[..., 1, 1] - G[..., 0, 1] ** 2).min())


def _u2d(u):
    u = np.asarray(u, dtype=float)
    return u[:, None] if u.ndim == 1 else u


def step(past, order, tau, problem, mesh, config):
    """Advance one step of size ``tau`` with the BDF method of ``order``.

    ``past`` lists at least ``order`` FlowStates, oldest first, equally
    spaced by ``tau``. Returns the new state and its diagnostics.
    """
    delta, gamma = bdf.coefficients(order, config.allow_order_6)
    past = list(past)[-order:]
    if len(past) < order:
        raise ValueError(f"BDF{order} needs {order} past states, got {len(past)}")
    d0 = delta[0]
    t = past[-1].t + tau

    def ext(attr):
        return bdf.extrapolate([getattr(s, attr) for s in past], gamma)

    def hist(attr):
        return bdf.history_sum([getattr(s, attr) for s in past], delta)

    xt, nut, Ht, ut = ext("x"), ext("nu"), ext("H"), ext("u")
    geom = SurfaceGeometry(mesh, xt, quadrature(config.quadrature_degree), config.degeneracy_tol)
    M, A = geom.mass_matrix, geom.stiffness_matrix
    solve = dict(tol=config.tol, maxiter=config.maxiter)

    # velocity: K(x~) v = g(x~, w~), three columns share one preconditioner
    rhs_v = vec_g(geom, nut, Ht, ut, problem, t, config.gradient_mode)
    v, rep_v = solve_spd((M + A).tocsr(), rhs_v, x0=past[-1].v, **solve)

    # geometric unknowns (nu, H): (d0/tau M + eps A) z = -(1/tau) M sum_j d_j z^{n-j} + f
    f_nu, f_H, f_u = vec_f(geom, nut, Ht, ut, problem, t, config.split_linear)
    S = (d0 / tau) * M + problem.eps * A
    z_hist = np.column_stack([hist("nu"), hist("H")])
    rhs_z = -(M @ z_hist) / tau + np.column_stack([f_nu, f_H])
    z, rep_z = solve_spd(S.tocsr(), rhs_z, x0=np.column_stack([nut, Ht]), **solve)
    nu, H = z[:, :3], z[:, 3]

    # surface PDE, one system per component
    m = problem.m
    c_lin = problem.kinetics_linear if config.split_linear else (0.0,) * m
    if config.scheme == "coupled":
        rhs_u = -(M @ hist("u")) / tau + f_u
    else:
        if any(s.mass_u is None for s in past):
            raise ValueError("conservative scheme needs stored M(x~)u products in the history")
        F = vec_F(geom, ut, problem, t, config.split_linear)
        rhs_u = -bdf.history_sum([s.mass_u for s in past], delta) / tau + F
    u = np.empty_like(ut)
    it_u, res = 0, max(rep_v.residual, rep_z.residual)
    for i in range(m):
        Su = ((d0 / tau) + c_lin[i]) * M + problem.diffusivities[i] * A
        u[:, i], rep = solve_spd(Su.tocsr(), rhs_u[:, i], x0=ut[:, i], **solve)
        it_u += rep.iterations
        res = max(res, rep.residual)
    mass_u = M @ u if config.scheme == "conservative" else None

    # positions: (1/tau) sum_j d_j x^{n-j} = v^n
    x = (tau * v - hist("x")) / d0
    state = FlowState(t, x, v, nu, H, u, mass_u)
    state.check_finite()
    identity = (d0 * x + hist("x")) / tau - v
    diag = StepDiagnostics(
        t=t,
        iterations_v=rep_v.iterations,
        iterations_w=rep_z.iterations,
        iterations_u=it_u,
        residual=res,
        condition_estimate=rep_v.condition_estimate,
        min_gram_det=min_gram_determinant(mesh, x, geom.rule),
        position_identity=float(np.abs(identity).max()),
        norm_H=float(np.abs(H).max()),
        norm_u=float(np.abs(u).max()),
        mean_radius=float(np.linalg.norm(x, axis=1).mean()),
    )
    if diag.min_gram_det <= 0:
        raise MeshBreakdownError(f"surface degenerated at t={t:g}")
    return state, diag


def initial_state(problem, mesh, x0, config, u0=None, nu0=None, H0=None):
    """Interpolated initial data; ``v`` from the velocity equation on ``Gamma_h[x0]``."""
    t0 = config.t0
    x0 = np.asarray(x0, dtype=float)
    if nu0 is None or H0 is None or u0 is None:
        nu_e, H_e, u_e = problem.initial_fields(x0, t0)
        nu0 = nu_e if nu0 is None else nu0
        H0 = H_e if H0 is None else H0
        u0 = u_e if u0 is None else u0
    u0 = _u2d(u0).copy()
    if u0.shape[1] != problem.m:
        raise ValueError(f"initial u has {u0.shape[1]} components, problem expects {problem.m}")
    geom = SurfaceGeometry(mesh, x0, quadrature(config.quadrature_degree), config.degeneracy_tol)
    rhs = vec_g(geom, nu0, H0, u0, problem, t0, config.gradient_mode)
    v0, _ = solve_spd((geom.mass_matrix + geom.stiffness_matrix).tocsr(), rhs, tol=config.tol)
    mass_u = geom.mass_matrix @ u0 if config.scheme == "conservative" else None
    return FlowState(t0, x0.copy(), v0, np.array(nu0, dtype=float), np.array(H0, dtype=float), u0, mass_u)


def exact_state(problem, mesh, p0, t, config):
    """Nodal interpolant of the exact solution at time ``t`` (nodes start at ``p0``)."""
    ex = problem.exact
    if ex is None:
        raise ValueError("exact startup needs an exact solution")
    x = ex.flow_map(p0, t)
    state = FlowState(t, x, ex.v(x, t), ex.nu(x, t), ex.H(x, t), ex.u(x, t)[:, None])
    if config.scheme == "conservative":
        geom = SurfaceGeometry(mesh, x, quadrature(config.quadrature_degree))
        state.mass_u = geom.mass_matrix @ state.u
    return state


def startup_cascade(problem, mesh, s0, config):
    """Starting states at ``t_1, ..., t_{q-1}`` from lower-order steps.

    Runs on a fine grid of step ``tau / S`` with ``S = config.startup_substeps``:
    fine step k uses the BDF method of order ``min(k, q)``, drawing its
    history from the earlier fine states. Returns ``(states, diagnostics)``
    at the coarse grid points.
    """
    q, tau = config.q, config.tau
    if q == 1:
        return [], []
    S = config.startup_substeps
    h = tau / S
    fine = [s0]
    coarse, diags = [], []
    for k in range(1, (q - 1) * S + 1):
        order = min(k, q)
        new, d = step(fine[-order:], order, h, problem, mesh, config)
        fine.append(new)
        fine = fine[-q:]
        if k % S == 0:
            new.t = config.t0 + (k // S) * tau
            coarse.append(new)
            diags.append(d)
    return coarse, diags


def _refresh_mass_products(states, mesh, config):
    # startup states: x~^i := x^i
    rule = quadrature(config.quadrature_degree)
    for s in states:
        s.mass_u = SurfaceGeometry(mesh, s.x, rule).mass_matrix @ s.u


def run(problem, mesh, x0, config, u0=None, nu0=None, H0=None, on_step=None):
    """Integrate from ``config.t0`` to ``config.T``.

    ``on_step(n, state)`` is called for every accepted state, including
    the initial one (n = 0) and the startup states. Output states are kept
    every ``config.output_every`` steps and at the final time.
    """
    s0 = initial_state(problem, mesh, x0, config, u0, nu0, H0)
    traj = Trajectory(initial=s0)
    n_steps = config.n_steps
    q = config.q
    if on_step:
        on_step(0, s0)

    def accept(n, state, diag):
        if diag is not None:
            traj.diagnostics.append(diag)
        if n % config.output_every == 0 or n == n_steps:
            traj.states.append(state)
        if on_step:
            on_step(n, state)

    try:
        if config.startup == "exact":
            starts = [exact_state(problem, mesh, x0, config.t0 + i * config.tau, config) for i in range(1, q)]
            sdiags = [None] * len(starts)
        else:
            starts, sdiags = startup_cascade(problem, mesh, s0, config)
        if config.scheme == "conservative":
            _refresh_mass_products(starts, mesh, config)
        window = bdf.History(q)
        window.push(s0)
        for i, (s, d) in enumerate(zip(starts, sdiags), start=1):
            if i > n_steps:
                break
            window.push(s)
            accept(i, s, d)
        for n in range(q, n_steps + 1):
            state, diag = step(list(window), q, config.tau, problem, mesh, config)
            window.push(state)
            accept(n, state, diag)
            log.debug("step %d t=%.6g it(v,w,u)=(%d,%d,%d)", n, state.t,
                      diag.iterations_v, diag.iterations_w, diag.iterations_u)
    except Exception as exc:  # noqa: BLE001 - re-raised with partial result
        raise FlowBreakdown(f"{type(exc).__name__}: {exc}", traj) from exc
    return traj


def integrate_fixed_surface(problem, mesh, x, u0, t0, T, tau, q=2, split_linear=True, rule=None,
                            startup_substeps=16):
    """Conservative u-scheme on a stationary surface, nu/H/v ignored.

    The system matrices are constant, so each component is factorised once.
    """
    rule = rule or quadrature(6)
    geom = SurfaceGeometry(mesh, x, rule)
    M, A = geom.mass_matrix, geom.stiffness_matrix
    u = _u2d(u0).astype(float)
    m = problem.m
    c_lin = problem.kinetics_linear if split_linear else (0.0,) * m
    n_steps = int(round((T - t0) / tau))

    solvers = {}

    def solver(order, h, i):
        key = (order, h, i)
        if key not in solvers:
            d0 = bdf.coefficients(order)[0][0]
            solvers[key] = factorized((((d0 / h) + c_lin[i]) * M + problem.diffusivities[i] * A).tocsc())
        return solvers[key]

    def advance(past, order, h, t):
        delta, gamma = bdf.coefficients(order)
        ut = bdf.extrapolate(past, gamma)
        F = vec_F(geom, ut, problem, t, split_linear)
        rhs = -(M @ bdf.history_sum(past, delta)) / h + F
        new = np.column_stack([solver(order, h, i)(rhs[:, i]) for i in range(m)])
        if not np.all(np.isfinite(new)):
            raise FloatingPointError(f"non-finite u at t={t:g}")
        return new

    # order ramp on the fine startup grid, then the q-step method
    S = startup_substeps
    h = tau / S
    fine = [u]
    hist = [u]
    for k in range(1, min(q - 1, n_steps) * S + 1):
        order = min(k, q)
        fine.append(advance(fine[-order:], order, h, t0 + k * h))
        fine = fine[-q:]
        if k % S == 0:
            hist.append(fine[-1])
    for n in range(q, n_steps + 1):
        hist.append(advance(hist[-q:], q, tau, t0 + n * tau))
        hist = hist[-q:]
    return hist[-1]


__all__ = [
    "FlowBreakdown",
    "FlowState",
    "SolverConfig",
    "StepDiagnostics",
    "Trajectory",
    "exact_state",
    "initial_state",
    "integrate_fixed_surface",
    "min_gram_determinant",
    "run",
    "startup_cascade",
    "step",
]
