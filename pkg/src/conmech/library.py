"""Builtin systems referenced by name from scenario files."""

from __future__ import annotations

import inspect
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np
from scipy.linalg import expm

from . import affine_body as ab
from .constraints import HolonomicConstraints, PfaffianConstraints, lift_holonomic_to_pfaffian
from .dynamics import DissipativeForce, LagrangianSystem, NaturalSystemSpec, build_natural_lagrangian
from .errors import ConfigurationError
from .manifold import MetricField
from .solver import Embedding


@dataclass
class Case:
    """A system with default initial data and the constraint sets it exports."""

    name: str
    system: LagrangianSystem
    q0: np.ndarray
    v0: np.ndarray
    constraint_sets: Dict[str, object] = field(default_factory=dict)
    default_constraints: List[str] = field(default_factory=list)
    dissipation: Optional[DissipativeForce] = None
    embedding: Optional[Embedding] = None
    chart: Optional[Callable] = None  # (q, v) -> (y, ydot) for the embedding
    affine: Optional[tuple] = None  # (model, variant, state)
    params: Dict[str, float] = field(default_factory=dict)


def _skew(w):
    return np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])


def free_particle(mass=1.0, dim=2, slope=0.5, offset=1.0, x0=0.0, vx0=1.0):
    """Free particle; exports the straight line q2 = slope*q1 + offset (linear holonomic constraint)."""
    k = int(dim)
    if k < 2:
        raise ConfigurationError("free_particle needs dim >= 2")
    sys = build_natural_lagrangian(NaturalSystemSpec(MetricField.constant(mass * np.eye(k))))
    n = np.zeros(k)
    n[0], n[1] = -slope, 1.0
    line = HolonomicConstraints(1, k, lambda q: np.array([n @ q - offset]), lambda q: n[None, :],
                                lambda q: np.zeros((1, k, k)), names=["line"])
    q0 = np.zeros(k)
    q0[0], q0[1] = x0, slope * x0 + offset
    v0 = np.zeros(k)
    v0[0], v0[1] = vx0, slope * vx0
    return Case("free_particle", sys, q0, v0, {"line": line}, ["line"])


def pendulum_circle(mass=1.0, length=1.0, gravity=9.81, theta0=1.2, omega0=0.0):
    """Planar point mass on the circle x^2 + y^2 = length^2 under V = m g y."""
    m, l, g = mass, length, gravity
    spec = NaturalSystemSpec(MetricField.constant(m * np.eye(2)),
                             potential=lambda q: m * g * q[1],
                             potential_gradient=lambda q: np.array([0.0, m * g]))
    sys = build_natural_lagrangian(spec, labels=["x", "y"])
    hess = 2.0 * np.eye(2)[None]
    circle = HolonomicConstraints(1, 2, lambda q: np.array([q @ q - l * l]), lambda q: 2.0 * q[None, :],
                                  lambda q: hess, names=["circle"])
    emb = Embedding(2, 1,
                    lambda y: np.array([l * np.sin(y[0]), -l * np.cos(y[0])]),
                    lambda y: np.array([[l * np.cos(y[0])], [l * np.sin(y[0])]]),
                    lambda y: np.array([[[-l * np.sin(y[0])]], [[l * np.cos(y[0])]]]))

    def chart(q, v):
        th = np.arctan2(q[0], -q[1])
        return np.array([th]), np.array([(q[0] * v[1] - q[1] * v[0]) / (q @ q)])

    q0 = emb.map([theta0])
    v0 = emb.jacobian([theta0])[:, 0] * omega0
    return Case("pendulum_circle", sys, q0, v0,
                {"circle": circle, "circle_lifted": lift_holonomic_to_pfaffian(circle)}, ["circle"],
                embedding=emb, chart=chart)


def knife_edge(mass=1.0, inertia=1.0, speed=1.0, spin=0.5, heading=0.0):
    """Knife edge / skate in the plane: q = (x, y, theta), x' sin(theta) - y' cos(theta) = 0."""
    G = np.diag([mass, mass, inertia])
    sys = build_natural_lagrangian(NaturalSystemSpec(MetricField.constant(G)), labels=["x", "y", "theta"])

    def omega(q):
        return np.array([[np.sin(q[2]), -np.cos(q[2]), 0.0]])

    def domega(q):
        d = np.zeros((1, 3, 3))
        d[0, 0, 2] = np.cos(q[2])
        d[0, 1, 2] = np.sin(q[2])
        return d

    knife = PfaffianConstraints(1, 3, omega, None, domega, names=["knife"])
    q0 = np.array([0.0, 0.0, heading])
    v0 = np.array([speed * np.cos(heading), speed * np.sin(heading), spin])
    return Case("knife_edge", sys, q0, v0, {"knife": knife}, ["knife"])


def charged_particle_uniform_field(mass=1.0, field=1.0, coupling=1.0, radius=1.0):
    """Charged particle in a uniform field along q3, A = (-B q2/2, B q1/2, 0), held in the plane q3 = 0."""
    B = field
    spec = NaturalSystemSpec(MetricField.constant(mass * np.eye(3)),
                             covector=lambda q: np.array([-0.5 * B * q[1], 0.5 * B * q[0], 0.0]),
                             covector_jacobian=lambda q: np.array([[0.0, -0.5 * B, 0.0], [0.5 * B, 0.0, 0.0],
                                                                   [0.0, 0.0, 0.0]]),
                             coupling=coupling)
    sys = build_natural_lagrangian(spec)
    plane = HolonomicConstraints(1, 3, lambda q: np.array([q[2]]), lambda q: np.array([[0.0, 0.0, 1.0]]),
                                 lambda q: np.zeros((1, 3, 3)), names=["plane"])
    # circular orbit of radius `radius` has speed |eps B| radius / m
    speed = abs(coupling * B) * radius / mass
    q0 = np.array([radius, 0.0, 0.0])
    v0 = np.array([0.0, -np.sign(coupling * B) * speed if coupling * B else 1.0, 0.0])
    return Case("charged_particle_uniform_field", sys, q0, v0, {"plane": plane}, ["plane"])


# ---------------------------------------------------------------- affine bodies

def elastic_potential(model_n: int, stiffness: float, gravity: float, mass: float, g=None, eta=None):
    """V = (c/4) |phi^T g phi - eta|^2 + M grav r_n and its gradient (dV/dr, dV/dphi)."""
    g = np.eye(model_n) if g is None else np.asarray(g, dtype=float)
    eta = np.eye(model_n) if eta is None else np.asarray(eta, dtype=float)
    c = stiffness

    def V(r, phi):
        E = phi.T @ g @ phi - eta
        return 0.25 * c * np.sum(E * E) + mass * gravity * r[-1]

    def dV(r, phi):
        E = phi.T @ g @ phi - eta
        dr = np.zeros(model_n)
        dr[-1] = mass * gravity
        return dr, c * g @ phi @ E

    return V, dV


def _affine_case(name, variant, phi0, phidot0, n=3, mass=1.0, J=(1.0, 2.0, 3.0), stiffness=0.0, gravity=0.0,
                 r0=None, rdot0=None):
    Jm = np.diag(np.asarray(J, dtype=float)[:n])
    V, dV = elastic_potential(n, stiffness, gravity, mass) if (stiffness or gravity) else (None, None)
    model = ab.AffineBodyModel(n, mass, Jm, potential=V, potential_gradient=dV)
    r0 = np.zeros(n) if r0 is None else np.asarray(r0, dtype=float)
    rdot0 = np.full(n, 0.1) if rdot0 is None else np.asarray(rdot0, dtype=float)
    state = ab.AffineBodyState(r0, rdot0, phi0, phidot0)
    variant = ab.ConstraintVariant.parse(variant)
    det0 = float(np.linalg.det(phi0)) if variant is ab.ConstraintVariant.ISOCHORIC else None
    C = ab.generic_constraints(model, variant, det0)
    sets = {} if C is None else {variant.value: C}
    q0, v0 = state.to_generic()
    return Case(name, ab.generic_system(model), q0, v0, sets, list(sets), ab.generic_force(model),
                affine=(model, variant, state))


def _rotation(w):
    return expm(_skew(np.asarray(w, dtype=float)))


def affine_free(stiffness=0.0, gravity=0.0, mass=1.0):
    phi0 = np.eye(3) + 0.1 * np.array([[0.0, 1.0, 0.0], [0.5, 0.0, 0.2], [0.0, -0.3, 0.1]])
    phidot0 = np.array([[0.1, -0.2, 0.05], [0.3, 0.0, -0.1], [0.0, 0.15, -0.05]])
    return _affine_case("affine_free", "unconstrained", phi0, phidot0, mass=mass, stiffness=stiffness, gravity=gravity)


def affine_rigid(wx=0.3, wy=-0.5, wz=1.0, stiffness=0.0, gravity=0.0, mass=1.0):
    R0 = _rotation([0.1, 0.4, -0.2])
    W = _skew([wx, wy, wz])
    return _affine_case("affine_rigid", "rigid", R0, W @ R0, mass=mass, stiffness=stiffness, gravity=gravity)


def affine_isochoric(stretch=1.2, rate=0.2, stiffness=1.0, gravity=0.0, mass=1.0):
    phi0 = np.diag([stretch, 1.0 / stretch, 1.0]) @ _rotation([0.2, 0.0, 0.3])
    A = _skew([0.2, -0.1, 0.4]) + rate * np.diag([1.0, -0.5, -0.5])
    return _affine_case("affine_isochoric", "isochoric", phi0, A @ phi0, mass=mass, stiffness=stiffness,
                        gravity=gravity)


def affine_conformal(scale=1.1, rate=0.1, stiffness=1.0, gravity=0.0, mass=1.0):
    phi0 = scale * _rotation([0.0, 0.3, 0.1])
    A = _skew([0.5, 0.2, -0.3]) + rate * np.eye(3)
    return _affine_case("affine_conformal", "conformal", phi0, A @ phi0, mass=mass, stiffness=stiffness,
                        gravity=gravity)


def affine_rotationfree(rate=0.2, stiffness=1.0, gravity=0.0, mass=1.0):
    phi0 = np.eye(3) + np.array([[0.1, 0.05, 0.0], [0.05, -0.1, 0.02], [0.0, 0.02, 0.05]])
    S = rate * np.array([[1.0, 0.3, 0.0], [0.3, -0.5, 0.2], [0.0, 0.2, -0.2]])
    return _affine_case("affine_rotationfree", "rotation_free", phi0, S @ phi0, mass=mass, stiffness=stiffness,
                        gravity=gravity)


BUILTINS: Dict[str, Callable[..., Case]] = {
    "free_particle": free_particle,
    "pendulum_circle": pendulum_circle,
    "knife_edge": knife_edge,
    "charged_particle_uniform_field": charged_particle_uniform_field,
    "affine_free": affine_free,
    "affine_rigid": affine_rigid,
    "affine_isochoric": affine_isochoric,
    "affine_conformal": affine_conformal,
    "affine_rotationfree": affine_rotationfree,
}


def build(name: str, params: Optional[dict] = None) -> Case:
    try:
        ctor = BUILTINS[name]
    except KeyError:
        raise ConfigurationError(f"unknown builtin {name!r}; available: {', '.join(sorted(BUILTINS))}") from None
    params = dict(params or {})
    accepted = inspect.signature(ctor).parameters
    unknown = sorted(set(params) - set(accepted))
    if unknown:
        raise ConfigurationError(f"builtin {name!r} has no parameter(s) {unknown}; accepted: {list(accepted)}")
    case = ctor(**params)
    case.params = {k: (v.default if v.default is not inspect.Parameter.empty else None)
                   for k, v in accepted.items()} | params
    return case
