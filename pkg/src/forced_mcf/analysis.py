"""Error norms, experimental orders of convergence and convergence studies.

Errors are measured on the interpolated surface ``Gamma_h[x*]`` whose nodes
``x*_j = X(p_j, t)`` lie on the exact surface: a finite element function is
compared with the nodal interpolant of the exact field in the norm
``sqrt(e^T (M(x*) + A(x*)) e)``.
"""
import csv
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .flow_solver import FlowBreakdown, SolverConfig, run
from .ref_element import quadrature, shape_functions
from .surface_mesh import SurfaceGeometry, make_sphere_mesh, mesh_width

log = logging.getLogger(__name__)

VARIABLES = ("x", "v", "nu", "H", "u")
NORMS = ("interpolant", "lifted")


def _h1(geom, e):
    e = np.asarray(e, dtype=float)
    if e.ndim == 1:
        e = e[:, None]
    K = geom.mass_matrix + geom.stiffness_matrix
    return float(np.sqrt(max(np.einsum("ij,ij->", e, K @ e), 0.0)))


def h1_error(field_h, exact_nodal, mesh, x_star, geom=None):
    """H1 norm on ``Gamma_h[x*]`` of ``field_h - I_h(exact)``."""
    field_h = np.asarray(field_h, dtype=float)
    exact_nodal = np.asarray(exact_nodal, dtype=float)
    if field_h.shape != exact_nodal.shape or field_h.shape[0] != mesh.n_nodes:
        raise ValueError(f"dimension mismatch: {field_h.shape} vs {exact_nodal.shape}")
    geom = geom or SurfaceGeometry(mesh, x_star)
    return _h1(geom, field_h - exact_nodal)


def position_error(x, x_star, mesh, geom=None):
    """H1 norm of ``x - x*`` on ``Gamma_h[x*]`` (all three components)."""
    return h1_error(x, x_star, mesh, x_star, geom)


def state_errors(state, problem, mesh, p0, geom=None):
    """Errors of all five variables of one FlowState against the exact solution."""
    ex = problem.exact
    t = state.t
    x_star = ex.flow_map(p0, t)
    geom = geom or SurfaceGeometry(mesh, x_star)
    nu, H, u, v, _ = ex.fields(x_star, t)
    return {
        "x": _h1(geom, state.x - x_star),
        "v": _h1(geom, state.v - v),
        "nu": _h1(geom, state.nu - nu),
        "H": _h1(geom, state.H - H),
        "u": _h1(geom, state.u - u.reshape(state.u.shape)),
    }


@dataclass
class ErrorRecord:
    """Per-step errors and their running maxima (L-infinity in time)."""

    times: list = field(default_factory=list)
    steps: list = field(default_factory=list)

    def add(self, t, errs):
        self.times.append(t)
        self.steps.append(errs)

    def linf(self, var):
        vals = [e[var] for e in self.steps if var in e]
        return max(vals) if vals else float("nan")

    @property
    def maxima(self):
        return {var: self.linf(var) for var in VARIABLES}

    @property
    def final(self):
        return self.steps[-1] if self.steps else {}


def error_tracker(problem, mesh, p0, record, lifted_record=None):
    """``on_step`` callback filling ``record`` (velocity skipped at n = 0).

    With ``lifted_record`` the radially lifted errors are tracked as well
    (sphere exact solutions only).
    """
    def on_step(n, state):
        geom = SurfaceGeometry(mesh, problem.exact.flow_map(p0, state.t))
        pairs = [(record, state_errors)]
        if lifted_record is not None:
            pairs.append((lifted_record, lifted_state_errors))
        for rec, fn in pairs:
            errs = fn(state, problem, mesh, p0, geom)
            if n == 0:
                errs.pop("v")
            rec.add(state.t, errs)
    return on_step


def eoc(errors, params):
    """``log(e_i / e_{i+1}) / log(p_i / p_{i+1})`` for consecutive entries."""
    out = []
    for (e0, e1), (p0, p1) in zip(zip(errors, errors[1:]), zip(params, params[1:])):
        if e0 > 0 and e1 > 0 and np.isfinite(e0) and np.isfinite(e1):
            out.append(math.log(e0 / e1) / math.log(p0 / p1))
        else:
            out.append(float("nan"))
    return out


FLAT_EOC = 0.5


def asymptotic_eoc(rates, flat=FLAT_EOC):
    """Last finite EOC before the flattening tail (rates below ``flat``).

    Flattening marks the regime where the other discretization error
    dominates; nan if every rate is flat or undefined.
    """
    rates = [r for r in rates if np.isfinite(r)]
    while rates and rates[-1] < flat:
        rates.pop()
    return rates[-1] if rates else float("nan")


@dataclass
class RunResult:
    frequency: int
    h: float
    tau: float
    errors: dict
    final_errors: dict
    seconds: float
    failed: str = ""
    lifted: dict = field(default_factory=dict)
    lifted_final: dict = field(default_factory=dict)

    def norm(self, name):
        if name not in NORMS:
            raise ValueError(f"unknown error norm {name!r}")
        return self.errors if name == "interpolant" else self.lifted


@dataclass
class EocTable:
    """Grid of L-infinity(H1) errors, one RunResult per (h, tau) cell."""

    results: list
    scheme: str = "coupled"

    def cell(self, frequency, tau):
        for r in self.results:
            if r.frequency == frequency and math.isclose(r.tau, tau):
                return r
        raise KeyError((frequency, tau))

    def temporal(self, frequency, var, norm="interpolant", taus=None):
        """(taus, errors, eocs) at a fixed mesh, coarsest step first.

        ``taus`` restricts the sweep to those steps.
        """
        rs = [r for r in self.results if r.frequency == frequency
              and (taus is None or any(math.isclose(r.tau, t) for t in taus))]
        rs = sorted(rs, key=lambda r: -r.tau)
        taus = [r.tau for r in rs]
        errs = [r.norm(norm).get(var, float("nan")) for r in rs]
        return taus, errs, eoc(errs, taus)

    def spatial(self, tau, var, norm="interpolant"):
        """(hs, errors, eocs) at a fixed step, coarsest mesh first."""
        rs = sorted((r for r in self.results if math.isclose(r.tau, tau)), key=lambda r: -r.h)
        hs = [r.h for r in rs]
        errs = [r.norm(norm).get(var, float("nan")) for r in rs]
        return hs, errs, eoc(errs, hs)

    def norms(self):
        return [n for n in NORMS if all(r.norm(n) for r in self.results if not r.failed)]

    def rows(self):
        """Long format rows ``(sweep, norm, h, tau, variable, error, eoc)``."""
        rows = []
        freqs = sorted({r.frequency for r in self.results})
        taus = sorted({r.tau for r in self.results}, reverse=True)
        for norm in self.norms():
            for f in freqs:
                h = next(r.h for r in self.results if r.frequency == f)
                for var in VARIABLES:
                    ts, es, rates = self.temporal(f, var, norm)
                    for i, (t, e) in enumerate(zip(ts, es)):
                        rows.append(("time", norm, h, t, var, e, rates[i - 1] if i else float("nan")))
            for t in taus:
                for var in VARIABLES:
                    hs, es, rates = self.spatial(t, var, norm)
                    for i, (h, e) in enumerate(zip(hs, es)):
                        rows.append(("space", norm, h, t, var, e, rates[i - 1] if i else float("nan")))
        return rows

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sweep", "norm", "h", "tau", "variable", "error", "eoc"])
            for row in self.rows():
                w.writerow([row[0], row[1], repr(row[2]), repr(row[3]), row[4], repr(row[5]), repr(row[6])])


def run_cell(problem, frequency, tau, T, scheme="coupled", q=2, degree=2, lifted=True, jitter=0.0, seed=0,
             **config_kw):
    """One (mesh, step size) cell of a convergence study."""
    R0 = problem.exact.R0
    mesh, p0 = make_sphere_mesh(radius=R0, degree=degree, frequency=frequency, jitter=jitter, seed=seed)
    cfg = SolverConfig(tau=tau, T=T, q=q, scheme=scheme, **config_kw)
    record = ErrorRecord()
    lifted_record = ErrorRecord() if lifted else None
    start = time.perf_counter()
    failed = ""
    try:
        run(problem, mesh, p0, cfg, on_step=error_tracker(problem, mesh, p0, record, lifted_record))
    except FlowBreakdown as exc:
        failed = str(exc)
        log.warning("cell (n=%d, tau=%g) failed: %s", frequency, tau, exc)
    nan = {v: float("nan") for v in VARIABLES}
    maxima = record.maxima if not failed else nan
    lifted_max = {} if lifted_record is None else (lifted_record.maxima if not failed else nan)
    return RunResult(frequency, mesh_width(mesh, p0), tau, maxima, record.final,
                     time.perf_counter() - start, failed, lifted_max,
                     lifted_record.final if lifted_record else {})


def convergence_study(problem, frequencies, taus, T=1.0, scheme="coupled", q=2, cells=None, **config_kw):
    """Run the (h, tau) grid; ``cells`` restricts it to selected pairs."""
    results = []
    pairs = cells if cells is not None else [(f, t) for f in frequencies for t in taus]
    for f, t in pairs:
        r = run_cell(problem, f, t, T, scheme, q, **config_kw)
        log.info("n=%d h=%.4f tau=%.5g %.1fs %s", f, r.h, t, r.seconds,
                 " ".join(f"{k}={v:.3e}" for k, v in r.errors.items()))
        results.append(r)
    return EocTable(results, scheme)


def _sphere_lift(geom, radius):
    """Radially lifted points, element Jacobians and metric data at qps."""
    y = geom.points  # (E, nq, 3)
    r = np.linalg.norm(y, axis=-1, keepdims=True)
    n = y / r
    a = radius * n
    # derivative of y -> radius y / |y|
    Da = (radius / r)[..., None] * (np.eye(3) - n[..., :, None] * n[..., None, :])
    J = np.matmul(Da, geom.jacobian)
    G = np.matmul(J.transpose(0, 1, 3, 2), J)
    det = G[..., 0, 0] * G[..., 1, 1] - G[..., 0, 1] * G[..., 1, 0]
    Ginv = np.stack([np.stack([G[..., 1, 1], -G[..., 0, 1]], -1),
                     np.stack([-G[..., 1, 0], G[..., 0, 0]], -1)], -2) / det[..., None, None]
    dA = np.sqrt(det) * geom.rule.weights
    pinv_t = np.matmul(J, Ginv)  # maps reference gradients to surface gradients
    return a, dA, pinv_t


def lifted_h1_error_sphere(field_h, exact_value, exact_grad, mesh, x_star, radius, rule=None, geom=None):
    """H1 error on the exact sphere through the radial lift.

    The finite element function with nodal values ``field_h`` on
    ``Gamma_h[x*]`` is lifted by ``y -> radius y / |y|``. ``exact_value(a)``
    and ``exact_grad(a)`` give the exact field, shape (...,) or (..., c),
    and its tangential gradient, (..., 3) or (..., c, 3), at sphere points.
    """
    geom = geom or SurfaceGeometry(mesh, x_star, rule or quadrature(6))
    a, dA, pinv_t = _sphere_lift(geom, radius)
    sf = shape_functions(mesh.degree, geom.rule)
    f = np.asarray(field_h, dtype=float)
    scalar = f.ndim == 1
    fe = (f[:, None] if scalar else f)[mesh.elements]  # (E, nloc, c)
    val = np.matmul(sf.values, fe)  # (E, nq, c)
    ref_grad = np.matmul(fe.transpose(0, 2, 1)[:, None], sf.grads)  # (E, nq, c, 2)
    grad = np.matmul(ref_grad, pinv_t.transpose(0, 1, 3, 2))  # (E, nq, c, 3)
    ev = exact_value(a)
    eg = exact_grad(a)
    if scalar:
        ev, eg = ev[..., None], eg[..., None, :]
    err = np.sum((val - ev) ** 2, axis=-1) + np.sum((grad - eg) ** 2, axis=(-2, -1))
    return float(np.sqrt(np.sum(dA * err)))


def lifted_state_errors(state, problem, mesh, p0, geom=None):
    """Errors of all five variables after radial lift to the exact sphere."""
    ex = problem.exact
    t = state.t
    x_star = ex.flow_map(p0, t)
    geom = geom or SurfaceGeometry(mesh, x_star)
    R = float(ex.radius(t))
    rate = float(ex.radius.derivative(t)) / R

    def proj(a):
        n = a / np.linalg.norm(a, axis=-1, keepdims=True)
        return np.eye(3) - n[..., :, None] * n[..., None, :]

    zero = lambda a: np.zeros(a.shape[:-1] + (3,))
    u_h = state.u[:, 0]
    return {
        "x": lifted_h1_error_sphere(state.x, lambda a: a, proj, mesh, x_star, R, geom=geom),
        "v": lifted_h1_error_sphere(state.v, lambda a: rate * a, lambda a: rate * proj(a),
                                    mesh, x_star, R, geom=geom),
        "nu": lifted_h1_error_sphere(state.nu, lambda a: a / R, lambda a: proj(a) / R,
                                     mesh, x_star, R, geom=geom),
        "H": lifted_h1_error_sphere(state.H, lambda a: np.full(a.shape[:-1], 2 / R), zero,
                                    mesh, x_star, R, geom=geom),
        "u": lifted_h1_error_sphere(u_h, lambda a: ex.u(a, t), lambda a: ex.grad_u(a, t),
                                    mesh, x_star, R, geom=geom),
    }
