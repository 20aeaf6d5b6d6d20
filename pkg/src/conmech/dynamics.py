"""Lagrangian systems, dissipative forces and unconstrained equations of motion."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import _fd
from .errors import ConfigurationError, DynamicsError
from .manifold import MetricField


def _pair(q, v):
    return np.asarray(q, dtype=float), np.asarray(v, dtype=float)


class LagrangianSystem:
    """A Lagrangian L(q, v) on a k-dimensional configuration space.

    Only ``lagrangian`` is required. Missing partials are produced by central
    differences: first partials with step 1e-6, the mass matrix and mixed
    partials by differencing the first partials (nested differencing uses 1e-4).

    Conventions: ``mass_matrix(q, v)[i, j] = d2L/dv^i dv^j`` and
    ``mixed(q, v)[i, j] = d2L/dv^i dq^j``.
    """

    def __init__(
        self,
        dimension: int,
        lagrangian: Callable,
        dL_dq: Optional[Callable] = None,
        dL_dv: Optional[Callable] = None,
        mass_matrix: Optional[Callable] = None,
        mixed: Optional[Callable] = None,
        labels=None,
    ):
        if dimension < 1:
            raise ConfigurationError("dimension must be >= 1")
        self.dimension = dimension
        self.labels = tuple(labels) if labels else tuple(f"q{i + 1}" for i in range(dimension))
        self._L = lagrangian
        self._dL_dq = dL_dq
        self._dL_dv = dL_dv
        self._mass = mass_matrix
        self._mixed = mixed

    @property
    def provenance(self) -> dict:
        names = ("dL_dq", "dL_dv", "mass_matrix", "mixed")
        given = (self._dL_dq, self._dL_dv, self._mass, self._mixed)
        return {n: ("analytic" if f is not None else "finite-difference") for n, f in zip(names, given)}

    def lagrangian(self, q, v) -> float:
        return float(self._L(*_pair(q, v)))

    def dL_dq(self, q, v) -> np.ndarray:
        q, v = _pair(q, v)
        if self._dL_dq is not None:
            return np.asarray(self._dL_dq(q, v), dtype=float)
        return _fd.gradient(lambda x: self._L(x, v), q)

    def dL_dv(self, q, v) -> np.ndarray:
        q, v = _pair(q, v)
        if self._dL_dv is not None:
            return np.asarray(self._dL_dv(q, v), dtype=float)
        return _fd.gradient(lambda x: self._L(q, x), v)

    def _momentum_step(self):
        return _fd.BASE_STEP if self._dL_dv is not None else _fd.NESTED_STEP

    def mass_matrix(self, q, v) -> np.ndarray:
        q, v = _pair(q, v)
        if self._mass is not None:
            return np.asarray(self._mass(q, v), dtype=float)
        if self._dL_dv is None:
            p = lambda x: _fd.gradient(lambda y: self._L(q, y), x, _fd.NESTED_STEP)
        else:
            p = lambda x: self.dL_dv(q, x)
        M = _fd.jacobian(p, np.asarray(v, dtype=float), self._momentum_step())
        return 0.5 * (M + M.T)

    def mixed(self, q, v) -> np.ndarray:
        q, v = _pair(q, v)
        if self._mixed is not None:
            return np.asarray(self._mixed(q, v), dtype=float)
        if self._dL_dv is None:
            p = lambda x: _fd.gradient(lambda y: self._L(x, y), v, _fd.NESTED_STEP)
        else:
            p = lambda x: self.dL_dv(x, v)
        return _fd.jacobian(p, np.asarray(q, dtype=float), self._momentum_step())

    def energy(self, q, v) -> float:
        """(dL/dv) . v - L."""
        return float(self.dL_dv(q, v) @ np.asarray(v, dtype=float)) - self.lagrangian(q, v)

    def generalized_force(self, q, v, dissipation=None) -> np.ndarray:
        """Right-hand side Q of M a = Q for the unconstrained system."""
        Q = self.dL_dq(q, v) - self.mixed(q, v) @ np.asarray(v, dtype=float)
        if dissipation is not None:
            Q = Q + dissipation(q, v)
        return Q


@dataclass
class NaturalSystemSpec:
    """Kinetic metric, optional covector ("magnetic") potential and scalar potential.

    ``covector_jacobian(q)[i, j] = dA_i/dq^j``.
    """

    metric: MetricField
    potential: Optional[Callable] = None
    potential_gradient: Optional[Callable] = None
    covector: Optional[Callable] = None
    covector_jacobian: Optional[Callable] = None
    coupling: float = 1.0

    def __post_init__(self):
        if self.potential is not None and self.potential_gradient is None:
            raise ConfigurationError("scalar potential supplied without its gradient")
        if self.covector is not None and self.covector_jacobian is None:
            A = self.covector
            self.covector_jacobian = lambda q: _fd.jacobian(A, q)


def build_natural_lagrangian(spec: NaturalSystemSpec, labels=None) -> LagrangianSystem:
    """L = 1/2 G_ij v^i v^j + eps A_i v^i - V with analytic partials.

    The scalar potential enters with a minus sign (L = T - V).
    """
    G = spec.metric
    eps = spec.coupling
    V = spec.potential
    dV = spec.potential_gradient
    A = spec.covector
    dA = spec.covector_jacobian

    def L(q, v):
        out = 0.5 * v @ G(q) @ v
        if A is not None:
            out += eps * (np.asarray(A(q)) @ v)
        if V is not None:
            out -= V(q)
        return out

    flat = G.is_constant
    zero = np.zeros(G.dimension)
    zero2 = np.zeros((G.dimension, G.dimension))

    def dL_dq(q, v):
        out = zero if flat else 0.5 * np.einsum("a,b,abi->i", v, v, G.derivative(q))
        if A is not None:
            out = out + eps * (v @ dA(q))
        if V is not None:
            out = out - np.asarray(dV(q), dtype=float)
        return out

    def dL_dv(q, v):
        out = G(q) @ v
        if A is not None:
            out = out + eps * np.asarray(A(q), dtype=float)
        return out

    def mass(q, v):
        return G(q)

    def mixed(q, v):
        out = zero2 if flat else np.einsum("iaj,a->ij", G.derivative(q), v)
        if A is not None:
            out = out + eps * dA(q)
        return out

    return LagrangianSystem(G.dimension, L, dL_dq, dL_dv, mass, mixed, labels=labels)


def lorentz_two_form(spec: NaturalSystemSpec, q) -> np.ndarray:
    """F_kj = dA_j/dq^k - dA_k/dq^j."""
    if spec.covector is None:
        raise ConfigurationError("no covector potential in this system")
    dA = np.asarray(spec.covector_jacobian(np.asarray(q, dtype=float)), dtype=float)
    return dA.T - dA


class DissipativeForce:
    """Non-Lagrangian generalized force D_i(q, v)."""

    def __init__(self, evaluate: Callable, coefficients: Optional[Callable] = None):
        self._evaluate = evaluate
        self.coefficients = coefficients

    def __call__(self, q, v) -> np.ndarray:
        return np.asarray(self._evaluate(q, v), dtype=float)

    @classmethod
    def zero(cls, k: int) -> "DissipativeForce":
        z = np.zeros(k)
        return cls(lambda q, v: z)

    @classmethod
    def linear_viscous(cls, d) -> "DissipativeForce":
        """D_i = -d_ij v^j with d symmetric positive definite (a matrix or a callable of (q, v))."""
        if callable(d):
            coeff = d
        else:
            dmat = np.array(d, dtype=float)
            _check_spd(dmat)
            coeff = lambda q, v: dmat

        def evaluate(q, v):
            return -np.asarray(coeff(q, v), dtype=float) @ np.asarray(v, dtype=float)

        return cls(evaluate, coeff)


def _check_spd(d):
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise ConfigurationError(f"damping matrix must be square, got {d.shape}")
    if np.max(np.abs(d - d.T), initial=0.0) > 1e-12 * max(1.0, np.max(np.abs(d))):
        raise ConfigurationError("damping matrix must be symmetric")
    try:
        np.linalg.cholesky(d)
    except np.linalg.LinAlgError as exc:
        raise ConfigurationError("damping matrix must be positive definite") from exc


def unconstrained_accel(sys: LagrangianSystem, D: Optional[DissipativeForce], q, v) -> np.ndarray:
    """Solve M a = dL/dq - (d2L/dv dq) v + D."""
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    M = sys.mass_matrix(q, v)
    Q = sys.generalized_force(q, v, D)
    try:
        a = np.linalg.solve(M, Q)
    except np.linalg.LinAlgError as exc:
        raise DynamicsError(f"singular mass matrix at q={q}", point=q) from exc
    if not np.all(np.isfinite(a)):
        raise DynamicsError(f"singular mass matrix at q={q}", point=q)
    return a


def euler_lagrange_residual(sys: LagrangianSystem, D: Optional[DissipativeForce], q, v, a) -> np.ndarray:
    """E_i = d/dt(dL/dv^i) - dL/dq^i - D_i along (q, v, a); zero for unconstrained motion."""
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    a = np.asarray(a, dtype=float)
    return sys.mass_matrix(q, v) @ a - sys.generalized_force(q, v, D)
