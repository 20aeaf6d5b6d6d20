"""The three constraint families and their calculus.

Array conventions (m constraints, k coordinates):

* holonomic: ``jacobian(q)[a, i] = dF_a/dq^i``, ``hessian(q)[a, i, j] = d2F_a/dq^i dq^j``
* Pfaffian: ``omega(q)[a, i]``, ``inhomogeneity(q)[a]``,
  ``omega_derivative(q)[a, i, j] = d omega_ai / dq^j``, ``inhomogeneity_gradient(q)[a, j]``
* velocity: ``Fq[a, i] = dF_a/dq^i``, ``Fv[a, i] = dF_a/dv^i``,
  ``Fvq[a, i, j] = d2F_a/dv^i dq^j``, ``Fvv[a, i, j] = d2F_a/dv^i dv^j``
"""

from __future__ import annotations

import itertools
from typing import Callable, Optional, Sequence, Union

import numpy as np

from . import _fd
from .errors import ConfigurationError, DegenerateConstraintError, UnsupportedDiagnosticError

RANK_TOL = 1e-10
BRACKET_STEP = 1e-5


def _check_counts(m, k):
    if not 1 <= m < k:
        raise ConfigurationError(f"need 1 <= m < k constraints, got m={m}, k={k}")


def _names(names, m, prefix):
    if names:
        if len(names) != m:
            raise ConfigurationError(f"{len(names)} names given for {m} constraints")
        return tuple(names)
    return tuple(f"{prefix}{a + 1}" for a in range(m))


class HolonomicConstraints:
    """F_a(q) = 0."""

    family = "holonomic"

    def __init__(self, m: int, k: int, F: Callable, jacobian: Optional[Callable] = None,
                 hessian: Optional[Callable] = None, names: Optional[Sequence[str]] = None):
        _check_counts(m, k)
        self.m, self.k = m, k
        self._F = F
        self._jac = jacobian
        self._hess = hessian
        self.names = _names(names, m, "F")

    @property
    def provenance(self):
        return {"jacobian": "analytic" if self._jac else "finite-difference",
                "hessian": "analytic" if self._hess else "finite-difference"}

    def value(self, q) -> np.ndarray:
        return np.atleast_1d(np.asarray(self._F(np.asarray(q, dtype=float)), dtype=float))

    def jacobian(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        if self._jac is not None:
            return np.asarray(self._jac(q), dtype=float).reshape(self.m, self.k)
        return _fd.jacobian(self.value, q)

    def hessian(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        if self._hess is not None:
            return np.asarray(self._hess(q), dtype=float).reshape(self.m, self.k, self.k)
        if self._jac is not None:
            H = _fd.jacobian(self.jacobian, q)
        else:
            H = _fd.jacobian(lambda x: _fd.jacobian(self.value, x, _fd.NESTED_STEP), q, _fd.NESTED_STEP)
        return 0.5 * (H + np.transpose(H, (0, 2, 1)))


class PfaffianConstraints:
    """omega_ai(q) v^i + f_a(q) = 0."""

    family = "pfaffian"

    def __init__(self, m: int, k: int, omega: Callable, inhomogeneity: Optional[Callable] = None,
                 omega_derivative: Optional[Callable] = None, inhomogeneity_gradient: Optional[Callable] = None,
                 names: Optional[Sequence[str]] = None):
        _check_counts(m, k)
        self.m, self.k = m, k
        self._omega = omega
        self._f = inhomogeneity
        self._domega = omega_derivative
        self._df = inhomogeneity_gradient
        self.names = _names(names, m, "w")

    @property
    def homogeneous(self) -> bool:
        return self._f is None

    def omega(self, q) -> np.ndarray:
        return np.asarray(self._omega(np.asarray(q, dtype=float)), dtype=float).reshape(self.m, self.k)

    def inhomogeneity(self, q) -> np.ndarray:
        if self._f is None:
            return np.zeros(self.m)
        return np.atleast_1d(np.asarray(self._f(np.asarray(q, dtype=float)), dtype=float))

    def omega_derivative(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        if self._domega is not None:
            return np.asarray(self._domega(q), dtype=float).reshape(self.m, self.k, self.k)
        return _fd.jacobian(self.omega, q)

    def inhomogeneity_gradient(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        if self._f is None:
            return np.zeros((self.m, self.k))
        if self._df is not None:
            return np.asarray(self._df(q), dtype=float).reshape(self.m, self.k)
        return _fd.jacobian(self.inhomogeneity, q)

    def value(self, q, v) -> np.ndarray:
        return self.omega(q) @ np.asarray(v, dtype=float) + self.inhomogeneity(q)


class VelocityConstraints:
    """F_a(q, v) = 0, possibly nonlinear in v."""

    family = "velocity"

    def __init__(self, m: int, k: int, F: Callable, Fq: Optional[Callable] = None, Fv: Optional[Callable] = None,
                 Fvq: Optional[Callable] = None, Fvv: Optional[Callable] = None,
                 names: Optional[Sequence[str]] = None):
        _check_counts(m, k)
        self.m, self.k = m, k
        self._F = F
        self._Fq, self._Fv, self._Fvq, self._Fvv = Fq, Fv, Fvq, Fvv
        self.names = _names(names, m, "C")

    @property
    def has_second_partials(self) -> bool:
        return self._Fvq is not None and self._Fvv is not None

    def value(self, q, v) -> np.ndarray:
        return np.atleast_1d(np.asarray(self._F(np.asarray(q, dtype=float), np.asarray(v, dtype=float)), dtype=float))

    def Fq(self, q, v) -> np.ndarray:
        if self._Fq is not None:
            return np.asarray(self._Fq(q, v), dtype=float).reshape(self.m, self.k)
        return _fd.jacobian(lambda x: self.value(x, v), q)

    def Fv(self, q, v) -> np.ndarray:
        if self._Fv is not None:
            return np.asarray(self._Fv(q, v), dtype=float).reshape(self.m, self.k)
        return _fd.jacobian(lambda x: self.value(q, x), v)

    def _nested_Fv(self, q, v):
        if self._Fv is not None:
            return self.Fv(q, v)
        return _fd.jacobian(lambda x: self.value(q, x), v, _fd.NESTED_STEP)

    def _outer_step(self):
        return _fd.BASE_STEP if self._Fv is not None else _fd.NESTED_STEP

    def Fvq(self, q, v) -> np.ndarray:
        if self._Fvq is not None:
            return np.asarray(self._Fvq(q, v), dtype=float).reshape(self.m, self.k, self.k)
        return _fd.jacobian(lambda x: self._nested_Fv(x, v), np.asarray(q, dtype=float), self._outer_step())

    def Fvv(self, q, v) -> np.ndarray:
        if self._Fvv is not None:
            return np.asarray(self._Fvv(q, v), dtype=float).reshape(self.m, self.k, self.k)
        H = _fd.jacobian(lambda x: self._nested_Fv(q, x), np.asarray(v, dtype=float), self._outer_step())
        return 0.5 * (H + np.transpose(H, (0, 2, 1)))


ConstraintSet = Union[HolonomicConstraints, PfaffianConstraints, VelocityConstraints]


def lift_holonomic_to_pfaffian(H: HolonomicConstraints) -> PfaffianConstraints:
    """omega = dF/dq, f = 0, with d omega / dq wired from the constraint Hessian."""
    return PfaffianConstraints(H.m, H.k, H.jacobian, None, H.hessian, names=H.names)


def pfaffian_as_velocity(P: PfaffianConstraints) -> VelocityConstraints:
    """View omega v + f = 0 as a general velocity constraint with exact partials."""
    m, k = P.m, P.k
    zeros = np.zeros((m, k, k))

    def Fq(q, v):
        return np.einsum("aij,i->aj", P.omega_derivative(q), v) + P.inhomogeneity_gradient(q)

    return VelocityConstraints(
        m, k,
        F=P.value,
        Fq=Fq,
        Fv=lambda q, v: P.omega(q),
        Fvq=lambda q, v: P.omega_derivative(q),
        Fvv=lambda q, v: zeros,
        names=P.names,
    )


def as_velocity(C: ConstraintSet) -> VelocityConstraints:
    if isinstance(C, VelocityConstraints):
        return C
    if isinstance(C, HolonomicConstraints):
        C = lift_holonomic_to_pfaffian(C)
    return pfaffian_as_velocity(C)


def as_pfaffian(C: ConstraintSet) -> PfaffianConstraints:
    if isinstance(C, PfaffianConstraints):
        return C
    if isinstance(C, HolonomicConstraints):
        return lift_holonomic_to_pfaffian(C)
    raise ConfigurationError("velocity-nonlinear constraints have no Pfaffian form")


def residual(C: ConstraintSet, q, v=None) -> np.ndarray:
    """F(q) for holonomic sets (v ignored); omega v + f or F(q, v) otherwise."""
    if isinstance(C, HolonomicConstraints):
        return C.value(q)
    return C.value(q, v)


def velocity_residual(C: ConstraintSet, q, v) -> np.ndarray:
    """Velocity-level residual: dF/dq v for holonomic sets, the residual itself otherwise."""
    if isinstance(C, HolonomicConstraints):
        return C.jacobian(q) @ np.asarray(v, dtype=float)
    return C.value(q, v)


def velocity_gradient(C: ConstraintSet, q, v) -> np.ndarray:
    """d(velocity_residual)/dv."""
    if isinstance(C, HolonomicConstraints):
        return C.jacobian(q)
    if isinstance(C, PfaffianConstraints):
        return C.omega(q)
    return C.Fv(q, v)


def check_rank(A: np.ndarray, names=None) -> None:
    """Raise DegenerateConstraintError unless A has full row rank (relative tolerance 1e-10)."""
    if A.shape[0] == 0:
        return
    s = np.linalg.svd(A, compute_uv=False)
    if s.size < A.shape[0] or s[-1] < RANK_TOL * s[0] or s[0] == 0.0:
        row = dependent_row(A)
        label = names[row] if names is not None and row is not None else row
        cond = np.inf if s[-1] == 0 else s[0] / s[-1]
        raise DegenerateConstraintError(
            f"constraint rows are not independent (condition {cond:.3g}); dependent row: {label}",
            condition=cond, row=row,
        )


def dependent_row(A: np.ndarray) -> Optional[int]:
    """Index of the first row lying in the span of the rows above it."""
    for r in range(A.shape[0]):
        s = np.linalg.svd(A[: r + 1], compute_uv=False)
        if s[0] == 0.0 or s[-1] < RANK_TOL * s[0]:
            return r
    return None


def differentiated_form(C: ConstraintSet, q, v, check: bool = True):
    """(A, b) with admissible accelerations satisfying A a = b.

    Holonomic sets are differentiated twice, velocity-level sets once.
    """
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    if isinstance(C, HolonomicConstraints):
        A = C.jacobian(q)
        b = -np.einsum("aij,i,j->a", C.hessian(q), v, v)
    elif isinstance(C, PfaffianConstraints):
        A = C.omega(q)
        b = -(np.einsum("aij,i,j->a", C.omega_derivative(q), v, v) + C.inhomogeneity_gradient(q) @ v)
    else:
        A = C.Fv(q, v)
        b = -(C.Fq(q, v) @ v)
    if check:
        check_rank(A, C.names)
    return A, b


def _normal_projector(omega):
    # orthonormal basis of the row space of omega
    _, s, Vt = np.linalg.svd(omega)
    rank = int(np.sum(s > RANK_TOL * s[0]))
    N = Vt[:rank]
    return N, Vt[rank:]


def involutivity_defect(P: PfaffianConstraints, q, step: float = BRACKET_STEP) -> float:
    """Pointwise non-integrability measure of the distribution ker omega(q).

    Kernel fields are X_alpha(q') = P(q') u_alpha, with u_alpha an orthonormal
    basis of ker omega(q) and P(q') the orthogonal projector onto ker omega(q').
    Returns the largest norm of the component of [X_alpha, X_beta](q) normal to
    the kernel. The value is unchanged by rescaling the constraint rows.
    """
    if isinstance(P, HolonomicConstraints):
        P = lift_holonomic_to_pfaffian(P)
    if not isinstance(P, PfaffianConstraints):
        raise UnsupportedDiagnosticError("involutivity defect needs Pfaffian constraints")
    if not P.homogeneous:
        raise UnsupportedDiagnosticError("involutivity defect is defined for homogeneous Pfaffian constraints only")
    q = np.asarray(q, dtype=float)
    normal, kernel = _normal_projector(P.omega(q))

    def field(u):
        def X(x):
            Nx, _ = _normal_projector(P.omega(x))
            return u - Nx.T @ (Nx @ u)
        return X

    fields = [field(u) for u in kernel]
    worst = 0.0
    for (ia, Xa), (ib, Xb) in itertools.combinations(enumerate(fields), 2):
        ua, ub = kernel[ia], kernel[ib]
        dXb_Xa = (Xb(q + step * ua) - Xb(q - step * ua)) / (2 * step)
        dXa_Xb = (Xa(q + step * ub) - Xa(q - step * ub)) / (2 * step)
        bracket = dXb_Xa - dXa_Xb
        worst = max(worst, float(np.linalg.norm(normal @ bracket)))
    return worst
