"""Problem instances for forced mean curvature flow.

Every problem solves the forced system

    d*u  = -u div v + D lap u + F(u, grad u) + rho1
    v    = (-eps H + g(u)) nu + rho2
    d*nu = eps lap nu + eps |A|^2 nu - grad g(u) + rho3
    d*H  = eps lap H + eps |A|^2 H - lap g(u) - |A|^2 g(u) + rho4

on a moving closed surface, where ``d*`` is the material derivative. The
inhomogeneities ``rho_i`` vanish unless an exact solution is attached.

Arrays of points have shape ``(..., 3)``; multi-component fields ``u``
carry the component axis last, ``(..., m)``.
"""
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .flow_solver import integrate_fixed_surface


def _unit(x):
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def _tangential(x, vec):
    n = _unit(x)
    return vec - np.sum(vec * n, axis=-1, keepdims=True) * n


# -- radius laws ----------------------------------------------------------------

def exact_radius(t, R0=1.0, R1=2.0):
    """Logistic radius ``R0 R1 / (R0 (1 - e^-t) + R1 e^-t)``."""
    if not (R1 >= R0 > 0):
        raise ValueError("need R1 >= R0 > 0")
    e = np.exp(-np.asarray(t, dtype=float))
    return R0 * R1 / (R0 * (1 - e) + R1 * e)


@dataclass(frozen=True)
class LogisticRadius:
    R0: float = 1.0
    R1: float = 2.0

    def __call__(self, t):
        return exact_radius(t, self.R0, self.R1)

    def derivative(self, t):
        R = self(t)
        return (1 - R / self.R1) * R


@dataclass(frozen=True)
class ShrinkingRadius:
    """Pure mean curvature flow of a sphere: R' = -2 / R."""

    R0: float = 1.0

    def __call__(self, t):
        r2 = self.R0**2 - 4 * np.asarray(t, dtype=float)
        if np.any(r2 <= 0):
            raise ValueError("sphere has collapsed")
        return np.sqrt(r2)

    def derivative(self, t):
        return -2.0 / self(t)


# -- exact solutions on dilating spheres ---------------------------------------

@dataclass(frozen=True)
class ExactSolution:
    """Sphere ``X(p, t) = R(t) p / R0`` carrying ``u = e^{-t} x1 x2`` (or ``u = 0``).

    Off the sphere the fields are extended radially through ``nu = x / |x|``.
    """

    radius: object
    with_u: bool = True

    @property
    def R0(self):
        return self.radius.R0

    def flow_map(self, p, t):
        return np.asarray(p) * (self.radius(t) / self.R0)

    def u(self, x, t):
        x = np.asarray(x)
        if not self.with_u:
            return np.zeros(x.shape[:-1])
        return np.exp(-t) * x[..., 0] * x[..., 1]

    def grad_u(self, x, t):
        """Tangential gradient of ``u`` at points of the sphere."""
        x = np.asarray(x)
        if not self.with_u:
            return np.zeros_like(x)
        amb = np.exp(-t) * np.stack([x[..., 1], x[..., 0], np.zeros(x.shape[:-1])], axis=-1)
        return _tangential(x, amb)

    def lap_u(self, x, t):
        # x1 x2 restricted to a sphere is a degree-2 spherical harmonic
        return -6.0 * self.u(x, t) / self.radius(t) ** 2

    def material_derivative_u(self, x, t):
        R, dR = self.radius(t), self.radius.derivative(t)
        return self.u(x, t) * (2 * dR / R - 1)

    def nu(self, x, t):
        return _unit(np.asarray(x, dtype=float))

    def H(self, x, t):
        return np.full(np.shape(x)[:-1], 2.0 / self.radius(t))

    def A2(self, x, t):
        return np.full(np.shape(x)[:-1], 2.0 / self.radius(t) ** 2)

    def v(self, x, t):
        return (self.radius.derivative(t) / self.radius(t)) * np.asarray(x)

    def div_v(self, x, t):
        return np.full(np.shape(x)[:-1], 2 * self.radius.derivative(t) / self.radius(t))

    def fields(self, x, t, tol=1e-8):
        """``(nu, H, u, v, |A|^2)`` at points on the exact sphere."""
        x = np.asarray(x, dtype=float)
        r = np.linalg.norm(x, axis=-1)
        if np.any(np.abs(r - self.radius(t)) > tol * max(1.0, self.radius(t))):
            raise ValueError("point is not on the exact surface")
        return self.nu(x, t), self.H(x, t), self.u(x, t), self.v(x, t), self.A2(x, t)


# -- problem definition --------------------------------------------------------

def _zero_forcing(u):
    return np.zeros(u.shape[:-1])


def _zero_kinetics(u, grad_u, x, t):
    return np.zeros_like(u)


@dataclass
class ProblemDefinition:
    """Parameters and nonlinearities of one forced-flow problem.

    ``kinetics(u, grad_u, x, t)`` returns F with the component axis last.
    ``kinetics_linear[i] = c_i`` declares ``F_i = -c_i u_i + (rest)``; the
    ``-c_i u_i`` part is treated implicitly when splitting is enabled.
    ``forcing(u)`` is the scalar velocity forcing g, ``forcing_grad(u)``
    its partial derivatives (..., m) and ``forcing_hess`` its second
    derivatives (..., m, m).
    """

    name: str
    eps: float = 1.0
    diffusivities: tuple = (1.0,)
    kinetics: Callable = _zero_kinetics
    kinetics_linear: tuple = (0.0,)
    forcing: Callable = _zero_forcing
    forcing_grad: Optional[Callable] = None
    forcing_hess: Optional[Callable] = None
    rho1: Optional[Callable] = None
    rho2: Optional[Callable] = None
    rho3: Optional[Callable] = None
    rho4: Optional[Callable] = None
    exact: Optional[ExactSolution] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.diffusivities = tuple(float(d) for d in self.diffusivities)
        self.kinetics_linear = tuple(float(c) for c in self.kinetics_linear)
        if self.m < 1:
            raise ValueError("need at least one u component")
        if len(self.kinetics_linear) != self.m:
            raise ValueError("kinetics_linear must have one entry per component")
        if self.eps <= 0 or min(self.diffusivities) <= 0:
            raise ValueError("eps and diffusivities must be positive")
        has_rho = any(r is not None for r in (self.rho1, self.rho2, self.rho3, self.rho4))
        if has_rho and self.exact is None:
            raise ValueError("inhomogeneities require an attached exact solution")
        if self.forcing_grad is None:
            self.forcing_grad = lambda u: np.zeros_like(u)

    @property
    def m(self):
        return len(self.diffusivities)

    def kinetics_explicit(self, u, grad_u, x, t, split=True):
        """F minus its declared implicit linear part (or F itself)."""
        F = self.kinetics(u, grad_u, x, t)
        if split:
            F = F + np.asarray(self.kinetics_linear) * u
        return F

    def initial_fields(self, x, t0=0.0):
        """Nodal ``(nu, H, u)`` by interpolation of the exact data."""
        if self.exact is None:
            raise ValueError(f"problem {self.name!r} has no exact initial data; supply it explicitly")
        ex = self.exact
        return ex.nu(x, t0), ex.H(x, t0), ex.u(x, t0)[..., None]


# -- manufactured sphere problems ---------------------------------------------

_FORCINGS = {
    # name: (g, g', g'')
    "zero": (lambda u: 0 * u, lambda u: 0 * u, lambda u: 0 * u),
    "linear": (lambda u: u, lambda u: np.ones_like(u), lambda u: 0 * u),
    "half_square": (lambda u: 0.5 * u * u, lambda u: u, lambda u: np.ones_like(u)),
}


def inhomogeneities(x, t, problem):
    """``(rho1, rho2, rho3, rho4)`` of ``problem`` at points ``x``."""
    if problem.exact is None:
        raise ValueError("inhomogeneities need an exact solution")
    return tuple(
        (r(x, t) if r is not None else None) for r in (problem.rho1, problem.rho2, problem.rho3, problem.rho4)
    )


def manufactured_problem(forcing="linear", eps=1.0, R0=1.0, R1=2.0, reaction="square", name=None):
    """Dilating logistic sphere carrying ``u = e^{-t} x1 x2``.

    ``forcing`` selects g(u) in {"linear", "half_square"}; ``reaction`` is
    "square" (F = u^2) or "zero".
    """
    if forcing not in ("linear", "half_square"):
        raise ValueError(f"unknown forcing {forcing!r}")
    g, dg, d2g = _FORCINGS[forcing]
    ex = ExactSolution(LogisticRadius(R0, R1))
    if reaction == "square":
        def F_scalar(u):
            return u * u
    elif reaction == "zero":
        def F_scalar(u):
            return 0 * u
    else:
        raise ValueError(f"unknown reaction {reaction!r}")

    def rho1(x, t):
        R, dR = ex.radius(t), ex.radius.derivative(t)
        u = ex.u(x, t)
        return (u * (2 * dR / R - 1) + 2 * u * dR / R + 6 * u / R**2 - F_scalar(u))[..., None]

    def rho2(x, t):
        R, dR = ex.radius(t), ex.radius.derivative(t)
        u = ex.u(x, t)
        nu = ex.nu(x, t)
        return (dR / R) * x + ((2 * eps / R) - g(u))[..., None] * nu

    def rho3(x, t):
        return dg(ex.u(x, t))[..., None] * ex.grad_u(x, t)

    def rho4(x, t):
        R, dR = ex.radius(t), ex.radius.derivative(t)
        u = ex.u(x, t)
        grad = ex.grad_u(x, t)
        lap_g = dg(u) * ex.lap_u(x, t) + d2g(u) * np.sum(grad * grad, axis=-1)
        return -2 * dR / R**2 - 4 * eps / R**3 + lap_g + 2 * g(u) / R**2

    return ProblemDefinition(
        name=name or f"manufactured_sphere_{forcing}",
        eps=eps,
        diffusivities=(1.0,),
        kinetics=lambda u, grad_u, x, t: F_scalar(u),
        kinetics_linear=(0.0,),
        forcing=lambda u: g(u[..., 0]),
        forcing_grad=lambda u: dg(u),
        forcing_hess=lambda u: d2g(u)[..., None],
        rho1=rho1, rho2=rho2, rho3=rho3, rho4=rho4,
        exact=ex,
        params={"R0": R0, "R1": R1, "forcing": forcing, "reaction": reaction},
    )


def pure_mcf_problem(R0=1.0):
    """Unforced mean curvature flow (eps = 1, u = 0) of a shrinking sphere."""
    return ProblemDefinition(
        name="pure_mcf_sphere",
        eps=1.0,
        exact=ExactSolution(ShrinkingRadius(R0), with_u=False),
        params={"R0": R0},
    )


# -- tumour growth --------------------------------------------------------------

@dataclass(frozen=True)
class TumourParams:
    gamma: float = 30.0
    d: float = 10.0
    a: float = 0.1
    b: float = 0.9
    delta: float = 0.1
    eps: float = 0.01
    amplitude: float = 1e-2
    seed: int = 0

    def __post_init__(self):
        for name in ("gamma", "d", "a", "b", "delta", "eps"):
            if getattr(self, name) <= 0:
                raise ValueError(f"tumour parameter {name} must be positive")
        if self.amplitude < 0:
            raise ValueError("perturbation amplitude must be non-negative")

    @property
    def steady_state(self):
        s = self.a + self.b
        return np.array([s, self.b / s**2])


def tumour_problem(params=TumourParams()):
    """Activator-depleted kinetics forcing the flow through ``g(u) = delta u1``."""
    p = params

    def F(u, grad_u, x, t):
        u1, u2 = u[..., 0], u[..., 1]
        r = u1 * u1 * u2
        return p.gamma * np.stack([p.a - u1 + r, p.b - r], axis=-1)

    def dg(u):
        out = np.zeros_like(u)
        out[..., 0] = p.delta
        return out

    return ProblemDefinition(
        name=f"tumour_gamma{p.gamma:g}",
        eps=p.eps,
        diffusivities=(1.0, p.d),
        kinetics=F,
        kinetics_linear=(p.gamma, 0.0),
        forcing=lambda u: p.delta * u[..., 0],
        forcing_grad=dg,
        forcing_hess=lambda u: np.zeros(u.shape + (u.shape[-1],)),
        params={k: getattr(p, k) for k in ("gamma", "d", "a", "b", "delta", "eps", "amplitude", "seed")},
    )


def tumour_perturbed_steady_state(n_nodes, params):
    """Steady state plus seeded uniform noise in [-amp, amp], shape (N, 2)."""
    rng = np.random.default_rng(params.seed)
    noise = rng.uniform(-params.amplitude, params.amplitude, size=(n_nodes, 2))
    return params.steady_state[None, :] + noise


def sphere_initial_geometry(x, radius=1.0):
    """Interpolated normal and mean curvature of a sphere at nodes ``x``."""
    x = np.asarray(x, dtype=float)
    return _unit(x), np.full(len(x), 2.0 / radius)


def tumour_initial_data(mesh, x, params=TumourParams(), tau=0.0015625, T_pre=5.0, q=2):
    """Pattern at ``t = T_pre`` grown on the fixed unit sphere.

    Starts from the seeded perturbed steady state and integrates the
    reaction-diffusion system with the surface frozen. Returns
    ``(u, nu, H)`` with ``nu, H`` those of the unit sphere.
    """
    problem = tumour_problem(params)
    u0 = tumour_perturbed_steady_state(mesh.n_nodes, params)
    u = integrate_fixed_surface(problem, mesh, x, u0, 0.0, T_pre, tau, q=q)
    nu, H = sphere_initial_geometry(x, 1.0)
    return u, nu, H
