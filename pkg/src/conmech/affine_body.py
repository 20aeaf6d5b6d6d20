"""Affinely rigid (homogeneously deformable) bodies.

Configuration x = r + phi a: centre of mass r (n-vector) and internal
configuration phi (n x n). Matrix conventions used throughout:

* K = phi J phidot^T          (affine spin, K^{ij} = phi^i_K phidot^j_L J^{KL})
* Omega = phidot phi^-1,  Omega_hat = phi^-1 phidot
* the internal equation of motion is phi J phiddot^T = N
* generic coordinates are q = (r, phi.ravel()) with row-major flattening
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .constraints import HolonomicConstraints, PfaffianConstraints
from .dynamics import DissipativeForce, LagrangianSystem
from .errors import AdmissionError, ConfigurationError, StateError
from .solver import ConstraintBlock, IntegratorConfig, Scenario, newton_project

ADMISSION_TOL = 1e-9


class ConstraintVariant(enum.Enum):
    UNCONSTRAINED = "unconstrained"
    RIGID = "rigid"
    ISOCHORIC = "isochoric"
    CONFORMAL = "conformal"
    ROTATION_FREE = "rotation_free"

    @classmethod
    def parse(cls, name) -> "ConstraintVariant":
        if isinstance(name, cls):
            return name
        key = str(name).strip().lower().replace("-", "_")
        aliases = {"free": cls.UNCONSTRAINED, "rotationfree": cls.ROTATION_FREE, "rotation_free": cls.ROTATION_FREE}
        if key in aliases:
            return aliases[key]
        try:
            return cls(key)
        except ValueError:
            raise ConfigurationError(f"unknown affine constraint variant {name!r}") from None


def _spd(name, X, n):
    X = np.array(X, dtype=float)
    if X.shape != (n, n):
        raise ConfigurationError(f"{name} must be {n}x{n}, got {X.shape}")
    if np.max(np.abs(X - X.T)) > 1e-12 * max(1.0, np.max(np.abs(X))):
        raise ConfigurationError(f"{name} must be symmetric")
    try:
        np.linalg.cholesky(X)
    except np.linalg.LinAlgError:
        raise ConfigurationError(f"{name} must be positive definite") from None
    return X


@dataclass
class AffineBodyModel:
    """Total mass, co-moving inertia J^{KL}, spatial metric g, material metric eta and loads.

    ``potential(r, phi)`` with ``potential_gradient(r, phi) -> (dV/dr, dV/dphi)``
    where ``dV/dphi[i, A] = dV/dphi^i_A``; and/or ``force_law(state) -> (F, N)``
    giving a direct total force and dipole moment. Both contributions add.
    """

    n: int
    mass: float
    inertia: np.ndarray
    g: Optional[np.ndarray] = None
    eta: Optional[np.ndarray] = None
    potential: Optional[Callable] = None
    potential_gradient: Optional[Callable] = None
    force_law: Optional[Callable] = None

    def __post_init__(self):
        n = self.n
        if n < 1:
            raise ConfigurationError("spatial dimension must be >= 1")
        if not self.mass > 0:
            raise ConfigurationError("total mass must be positive")
        self.inertia = _spd("inertia J", self.inertia, n)
        self.g = _spd("spatial metric g", np.eye(n) if self.g is None else self.g, n)
        self.eta = _spd("material metric eta", np.eye(n) if self.eta is None else self.eta, n)
        if self.potential is not None and self.potential_gradient is None:
            raise ConfigurationError("potential supplied without its gradient")
        self.inertia_inv = np.linalg.inv(self.inertia)
        self.g_inv = np.linalg.inv(self.g)

    def loads(self, state: "AffineBodyState"):
        """Total (F, N) from the potential and the direct force law."""
        F = np.zeros(self.n)
        N = np.zeros((self.n, self.n))
        if self.potential_gradient is not None:
            F, N = potential_forces(self, state)
        if self.force_law is not None:
            F2, N2 = self.force_law(state)
            F = F + np.asarray(F2, dtype=float)
            N = N + np.asarray(N2, dtype=float)
        return F, N

    def energy(self, state: "AffineBodyState") -> float:
        T = sum(kinetic_energy(self, state))
        V = self.potential(state.r, state.phi) if self.potential is not None else 0.0
        return float(T + V)


@dataclass
class AffineBodyState:
    r: np.ndarray
    rdot: np.ndarray
    phi: np.ndarray
    phidot: np.ndarray

    def __post_init__(self):
        self.r = np.asarray(self.r, dtype=float)
        self.rdot = np.asarray(self.rdot, dtype=float)
        self.phi = np.asarray(self.phi, dtype=float)
        self.phidot = np.asarray(self.phidot, dtype=float)
        n = self.r.shape[0]
        if self.rdot.shape != (n,) or self.phi.shape != (n, n) or self.phidot.shape != (n, n):
            raise StateError("inconsistent affine state block shapes")
        if abs(np.linalg.det(self.phi)) <= 1e-12:
            raise StateError("internal configuration phi is singular")

    @property
    def n(self) -> int:
        return self.r.shape[0]

    def to_generic(self):
        return (np.concatenate([self.r, self.phi.ravel()]), np.concatenate([self.rdot, self.phidot.ravel()]))

    @classmethod
    def from_generic(cls, n: int, q, v) -> "AffineBodyState":
        q = np.asarray(q, dtype=float)
        v = np.asarray(v, dtype=float)
        return cls(q[:n], v[:n], q[n:].reshape(n, n), v[n:].reshape(n, n))


def gyration(state: AffineBodyState):
    """(Omega, Omega_hat) = (phidot phi^-1, phi^-1 phidot)."""
    phi_inv = np.linalg.inv(state.phi)
    return state.phidot @ phi_inv, phi_inv @ state.phidot


def momenta(model: AffineBodyModel, state: AffineBodyState):
    """Translational momentum p, affine spin K and spin S = K - K^T."""
    p = model.mass * state.rdot
    K = state.phi @ model.inertia @ state.phidot.T
    return p, K, K - K.T


def kinetic_energy(model: AffineBodyModel, state: AffineBodyState):
    T_tr = 0.5 * model.mass * state.rdot @ model.g @ state.rdot
    T_int = 0.5 * np.trace(model.g @ state.phidot @ model.inertia @ state.phidot.T)
    return float(T_tr), float(T_int)


def potential_forces(model: AffineBodyModel, state: AffineBodyState):
    """F^i = -g^{ij} dV/dr^j and N^{ij} = -phi^i_A (dV/dphi^k_A) g^{kj}."""
    if model.potential_gradient is None:
        raise ConfigurationError("model has no potential gradient")
    dV_dr, dV_dphi = model.potential_gradient(state.r, state.phi)
    F = -model.g_inv @ np.asarray(dV_dr, dtype=float)
    N = -state.phi @ np.asarray(dV_dphi, dtype=float).T @ model.g_inv
    return F, N


def unconstrained_rhs(model: AffineBodyModel, state: AffineBodyState, F, N):
    """r'' = F / M and phi'' solving phi J phi''^T = N."""
    phi_inv = np.linalg.inv(state.phi)
    rdd = np.asarray(F, dtype=float) / model.mass
    phidd = np.asarray(N, dtype=float).T @ phi_inv.T @ model.inertia_inv
    return rdd, phidd


def dipole_from_acceleration(model: AffineBodyModel, state: AffineBodyState, phidd) -> np.ndarray:
    """phi J phi''^T: the dipole moment that produces the given internal acceleration."""
    return state.phi @ model.inertia @ np.asarray(phidd).T


# ---------------------------------------------------------------- variant geometry

def _sym_pairs(n):
    return [(a, b) for a in range(n) for b in range(a, n)]


def _orthonormal_span(mats):
    """Orthonormal (Frobenius) basis of the span of the given matrices."""
    n = mats[0].shape[0]
    V = np.array([m.ravel() for m in mats])
    _, s, Vt = np.linalg.svd(V, full_matrices=False)
    rank = int(np.sum(s > 1e-12 * s[0]))
    return [row.reshape(n, n) for row in Vt[:rank]]


class VariantGeometry:
    """Constraint functions of one variant in terms of phi (flattened row-major where noted).

    Holonomic variants provide ``config`` / ``config_jacobian`` / ``config_hessian``;
    every constrained variant provides ``velocity_coefficients`` (rows acting on
    phidot.ravel()) and the reaction-subspace basis with its acceleration drift.
    """

    def __init__(self, model: AffineBodyModel, variant: ConstraintVariant, det0: Optional[float] = None):
        self.model = model
        self.variant = ConstraintVariant.parse(variant)
        n = model.n
        self.n = n
        g = model.g
        E = np.eye(n)
        unit = lambda a, b: np.outer(E[a], E[b])
        v = self.variant
        if v is ConstraintVariant.RIGID:
            span = [unit(a, b) + unit(b, a) for a, b in _sym_pairs(n)]
            self.rows = _sym_pairs(n)
        elif v is ConstraintVariant.ISOCHORIC:
            span = [model.g_inv]
            self.rows = [None]
        elif v is ConstraintVariant.CONFORMAL:
            span = []
            for a, b in _sym_pairs(n):
                S = unit(a, b) + unit(b, a)
                span.append(S - np.trace(S @ g) / n * model.g_inv)
            self.rows = _sym_pairs(n)[:-1]
        elif v is ConstraintVariant.ROTATION_FREE:
            span = [unit(a, b) - unit(b, a) for a, b in itertools.combinations(range(n), 2)]
            self.rows = list(itertools.combinations(range(n), 2))
        else:
            span = []
            self.rows = []
        self.basis = _orthonormal_span(span) if span else []
        self.B = np.array(self.basis).reshape(len(self.basis), n, n)
        self.m = len(self.rows)
        self.det0 = det0
        pairs = [rc for rc in self.rows if rc is not None]
        self._ia = np.array([a for a, _ in pairs], dtype=int)
        self._ib = np.array([b for _, b in pairs], dtype=int)
        self._E = E
        self._hess_const = None
        if v is not ConstraintVariant.UNCONSTRAINED and self.m != len(self.basis):
            raise ConfigurationError(f"{v.value}: {self.m} constraint rows but {len(self.basis)} reaction directions")
        if v is not ConstraintVariant.UNCONSTRAINED and self.m == 0:
            raise ConfigurationError(f"{v.value} constraints are empty for n={n}")

    @property
    def holonomic(self) -> bool:
        return self.variant in (ConstraintVariant.RIGID, ConstraintVariant.ISOCHORIC, ConstraintVariant.CONFORMAL)

    def names(self):
        v = self.variant
        if v is ConstraintVariant.ISOCHORIC:
            return ["det"]
        tag = {"rigid": "iso", "conformal": "conf", "rotation_free": "rot"}[v.value]
        return [f"{tag}{a + 1}{b + 1}" for a, b in self.rows]

    # -- configuration level
    def config(self, phi) -> np.ndarray:
        g, eta, n = self.model.g, self.model.eta, self.n
        v = self.variant
        if v is ConstraintVariant.RIGID:
            P = phi.T @ g @ phi - eta
        elif v is ConstraintVariant.CONFORMAL:
            P = phi.T @ g @ phi
            P = P - np.trace(np.linalg.solve(eta, P)) / n * eta
        elif v is ConstraintVariant.ISOCHORIC:
            det0 = self.det0 if self.det0 is not None else np.linalg.det(phi)
            return np.array([np.linalg.det(phi) - det0])
        else:
            raise ConfigurationError("rotation-free constraints have no configuration form")
        return P[self._ia, self._ib]

    def _gram_jacobian(self, phi):
        # dP[A, B, p, Q] = d(phi^T g phi)_AB / d phi_pQ
        n = self.n
        gphi = self.model.g @ phi
        E = self._E
        return np.einsum("QA,pB->ABpQ", E, gphi) + np.einsum("QB,pA->ABpQ", E, gphi)

    def _gram_hessian(self):
        n = self.n
        E = np.eye(n)
        g = self.model.g
        return np.einsum("ps,QA,RB->ABpQsR", g, E, E) + np.einsum("ps,QB,RA->ABpQsR", g, E, E)

    def config_jacobian(self, phi) -> np.ndarray:
        n = self.n
        v = self.variant
        if v is ConstraintVariant.ISOCHORIC:
            return (np.linalg.det(phi) * np.linalg.inv(phi).T).reshape(1, n * n)
        dP = self._gram_jacobian(phi)
        if v is ConstraintVariant.CONFORMAL:
            eta_inv = np.linalg.inv(self.model.eta)
            dtr = 2.0 * self.model.g @ phi @ eta_inv
            dP = dP - np.einsum("AB,pQ->ABpQ", self.model.eta, dtr) / n
        return dP[self._ia, self._ib].reshape(self.m, n * n)

    def config_hessian(self, phi) -> np.ndarray:
        n = self.n
        v = self.variant
        if v is ConstraintVariant.ISOCHORIC:
            inv = np.linalg.inv(phi)
            H = np.linalg.det(phi) * (np.einsum("Qp,Rs->pQsR", inv, inv) - np.einsum("Qs,Rp->pQsR", inv, inv))
            return H.reshape(1, n * n, n * n)
        if self._hess_const is None:
            # constant in phi for the Gram-matrix based variants
            H = self._gram_hessian()
            if v is ConstraintVariant.CONFORMAL:
                eta_inv = np.linalg.inv(self.model.eta)
                d2tr = 2.0 * np.einsum("ps,RQ->pQsR", self.model.g, eta_inv)
                H = H - np.einsum("AB,pQsR->ABpQsR", self.model.eta, d2tr) / n
            self._hess_const = H[self._ia, self._ib].reshape(self.m, n * n, n * n)
        return self._hess_const

    # -- velocity level (rows act on phidot.ravel())
    def velocity_coefficients(self, phi) -> np.ndarray:
        if self.holonomic:
            return self.config_jacobian(phi)
        n = self.n
        g = self.model.g
        inv = np.linalg.inv(phi)
        # W[i, j, k, L] = d(g phidot phi^-1 - (g phidot phi^-1)^T)_ij / d phidot_kL
        W = np.einsum("ik,Lj->ijkL", g, inv) - np.einsum("jk,Li->ijkL", g, inv)
        return W[self._ia, self._ib].reshape(self.m, n * n)

    def velocity_coefficients_derivative(self, phi) -> np.ndarray:
        """d(velocity row)_{kL} / d phi_pQ for the rotation-free variant."""
        n = self.n
        g = self.model.g
        inv = np.linalg.inv(phi)
        dW = (-np.einsum("ik,Lp,Qj->ijkLpQ", g, inv, inv) + np.einsum("jk,Lp,Qi->ijkLpQ", g, inv, inv))
        return dW[self._ia, self._ib].reshape(self.m, n * n, n * n)

    def velocity(self, phi, phidot) -> np.ndarray:
        return self.velocity_coefficients(phi) @ np.asarray(phidot).ravel()

    # -- reaction structure
    def drift(self, Omega) -> np.ndarray:
        """Right sides c_k of tr(B_k g phi'' phi^-1) = c_k over the reaction basis B_k."""
        g = self.model.g
        v = self.variant
        if v in (ConstraintVariant.RIGID, ConstraintVariant.CONFORMAL):
            return -np.einsum("kij,ji->k", self.B, Omega.T @ g @ Omega)
        gO2 = g @ Omega @ Omega
        if v is ConstraintVariant.ISOCHORIC:
            return np.einsum("kij,ji->k", self.B, gO2) - np.trace(Omega) ** 2
        return np.einsum("kij,ji->k", self.B, gO2)


def constrained_rhs(model: AffineBodyModel, state: AffineBodyState, variant, F, N,
                    check: bool = True, geometry: Optional[VariantGeometry] = None):
    """Accelerations under a symmetry-group constraint and the reaction dipole N_R.

    N_R is sought in the variant's reaction subspace (symmetric, pure trace,
    symmetric g-traceless, antisymmetric) such that phi J phi''^T = N + N_R
    together with the twice-differentiated constraint.
    """
    variant = ConstraintVariant.parse(variant)
    F = np.asarray(F, dtype=float)
    N = np.asarray(N, dtype=float)
    if variant is ConstraintVariant.UNCONSTRAINED:
        rdd, phidd = unconstrained_rhs(model, state, F, N)
        return rdd, phidd, np.zeros_like(N)
    geo = geometry if geometry is not None else VariantGeometry(model, variant)
    if check:
        admit(geo, state)
    phi_inv = np.linalg.inv(state.phi)
    Omega = state.phidot @ phi_inv
    g = model.g
    # phi'' phi^-1 = X^T Jsp_inv for X = phi J phi''^T
    Jsp_inv = phi_inv.T @ model.inertia_inv @ phi_inv
    B = geo.B
    Bg = B @ g
    # G_kl = tr(B_k g B_l^T Jsp_inv), rhs_k = c_k - tr(B_k g N^T Jsp_inv)
    G = np.einsum("kij,lij->kl", Jsp_inv @ Bg, B)
    rhs = geo.drift(Omega) - np.einsum("kij,ji->k", Bg, N.T @ Jsp_inv)
    sigma = np.linalg.solve(G, rhs)
    N_R = np.einsum("l,lij->ij", sigma, B)
    rdd, phidd = unconstrained_rhs(model, state, F, N + N_R)
    return rdd, phidd, N_R


def admit(geo: VariantGeometry, state: AffineBodyState, tol: float = ADMISSION_TOL) -> None:
    """Raise AdmissionError when the state violates the variant constraint beyond ``tol``."""
    names = geo.names()
    checks = []
    if geo.holonomic and not (geo.variant is ConstraintVariant.ISOCHORIC and geo.det0 is None):
        checks.append(("configuration", geo.config(state.phi)))
    checks.append(("velocity", geo.velocity(state.phi, state.phidot)))
    for level, r in checks:
        bad = np.flatnonzero(np.abs(r) > tol)
        if bad.size:
            i = int(bad[0])
            raise AdmissionError(
                f"{geo.variant.value}: {level}-level constraint {names[i]} violated ({r[i]:.3e})",
                constraint=names[i], value=float(r[i]),
            )


def effective_equation_defects(model: AffineBodyModel, state: AffineBodyState, variant, phidd, N) -> dict:
    """Residuals of the reaction-free tensor parts of phi J phi''^T = N for each variant."""
    variant = ConstraintVariant.parse(variant)
    X = dipole_from_acceleration(model, state, phidd)
    D = X - np.asarray(N)
    g = model.g
    n = model.n
    out = {}
    if variant in (ConstraintVariant.RIGID, ConstraintVariant.CONFORMAL):
        out["skew"] = float(np.max(np.abs(D - D.T)))
    if variant is ConstraintVariant.CONFORMAL:
        out["trace"] = float(abs(np.trace(g @ D)))
    if variant is ConstraintVariant.ISOCHORIC:
        out["traceless"] = float(np.max(np.abs(D - np.trace(g @ D) / n * model.g_inv)))
    if variant is ConstraintVariant.ROTATION_FREE:
        out["symmetric"] = float(np.max(np.abs(D + D.T)))
    if variant is ConstraintVariant.UNCONSTRAINED:
        out["full"] = float(np.max(np.abs(D)))
    return out


def isochoric_multiplier(model: AffineBodyModel, N_R) -> float:
    """lambda = (1/n) g_ij N_R^{ij}."""
    return float(np.trace(model.g @ N_R) / model.n)


def conformal_scale(model: AffineBodyModel, phi) -> float:
    """lambda with g phi^T phi = lambda eta (eta-trace average)."""
    P = phi.T @ model.g @ phi
    return float(np.trace(np.linalg.solve(model.eta, P)) / model.n)


# ---------------------------------------------------------------- specialised integration

@dataclass
class AffineTrajectory:
    t: np.ndarray
    r: np.ndarray
    rdot: np.ndarray
    phi: np.ndarray
    phidot: np.ndarray
    phiddot: np.ndarray
    F: np.ndarray
    N: np.ndarray
    N_R: np.ndarray

    def state(self, i: int) -> AffineBodyState:
        return AffineBodyState(self.r[i], self.rdot[i], self.phi[i], self.phidot[i])

    def generic_q(self) -> np.ndarray:
        return np.hstack([self.r, self.phi.reshape(len(self.t), -1)])


def _rhs_factory(model, variant, geo, force_law):
    def rhs(state):
        F, N = model.loads(state) if force_law is None else force_law(state)
        rdd, phidd, N_R = constrained_rhs(model, state, variant, F, N, check=False, geometry=geo)
        return rdd, phidd, F, N, N_R
    return rhs


def _rk4_affine(rhs, s: AffineBodyState, h: float, d1=None) -> AffineBodyState:
    def deriv(st):
        rdd, phidd = rhs(st)[:2]
        return st.rdot, rdd, st.phidot, phidd

    def shift(c, d):
        return AffineBodyState(s.r + c * h * d[0], s.rdot + c * h * d[1], s.phi + c * h * d[2], s.phidot + c * h * d[3])

    k1 = deriv(s) if d1 is None else d1
    k2 = deriv(shift(0.5, k1))
    k3 = deriv(shift(0.5, k2))
    k4 = deriv(shift(1.0, k3))
    comb = [h / 6.0 * (a + 2 * b + 2 * c + d) for a, b, c, d in zip(k1, k2, k3, k4)]
    return AffineBodyState(s.r + comb[0], s.rdot + comb[1], s.phi + comb[2], s.phidot + comb[3])


def project_affine(model: AffineBodyModel, geo: VariantGeometry, state: AffineBodyState,
                   tol: float = 1e-12, max_iter: int = 20) -> AffineBodyState:
    """Inertia-metric projection of (phi, phidot) back onto the variant constraint."""
    n = model.n
    W_inv = np.kron(model.g_inv, model.inertia_inv)
    phi = state.phi
    if geo.holonomic:
        x = newton_project(lambda x: geo.config(x.reshape(n, n)),
                           lambda x: geo.config_jacobian(x.reshape(n, n)),
                           phi.ravel(), W_inv, tol, max_iter, "configuration")
        phi = x.reshape(n, n)
    Wv = geo.velocity_coefficients(phi)
    u = newton_project(lambda y: Wv @ y, lambda y: Wv, state.phidot.ravel(), W_inv, tol, max_iter, "velocity")
    return AffineBodyState(state.r, state.rdot, phi, u.reshape(n, n))


def integrate_variant(model: AffineBodyModel, state: AffineBodyState, variant, t_end: float, h: float,
                      force_law: Optional[Callable] = None, projection: bool = True, tol: float = 1e-12,
                      stride: int = 1) -> AffineTrajectory:
    """Fixed-step RK4 of the specialised constrained equations (with optional projection)."""
    variant = ConstraintVariant.parse(variant)
    det0 = float(np.linalg.det(state.phi)) if variant is ConstraintVariant.ISOCHORIC else None
    geo = VariantGeometry(model, variant, det0=det0)
    if variant is not ConstraintVariant.UNCONSTRAINED:
        admit(geo, state)
    rhs = _rhs_factory(model, variant, geo, force_law)
    n_steps = int(round(t_end / h))
    out = {k: [] for k in ("t", "r", "rdot", "phi", "phidot", "phiddot", "F", "N", "N_R")}

    def record(t, st, ev):
        rdd, phidd, F, N, N_R = ev
        for key, val in (("t", t), ("r", st.r), ("rdot", st.rdot), ("phi", st.phi), ("phidot", st.phidot),
                         ("phiddot", phidd), ("F", F), ("N", N), ("N_R", N_R)):
            out[key].append(val)

    ev = rhs(state)
    record(0.0, state, ev)
    for i in range(1, n_steps + 1):
        state = _rk4_affine(rhs, state, h, (state.rdot, ev[0], state.phidot, ev[1]))
        if projection and variant is not ConstraintVariant.UNCONSTRAINED:
            state = project_affine(model, geo, state, tol)
        ev = rhs(state)
        if i % stride == 0 or i == n_steps:
            record(i * h, state, ev)
    return AffineTrajectory(**{k: np.array(v) for k, v in out.items()})


# ---------------------------------------------------------------- balance laws

def comoving(model: AffineBodyModel, state: AffineBodyState, F, N) -> dict:
    """Co-moving components p_hat, K_hat, v_hat, Omega_hat, F_hat, N_hat."""
    inv = np.linalg.inv(state.phi)
    p, K, _ = momenta(model, state)
    return {
        "p": inv @ p,
        "K": inv @ K @ inv.T,
        "v": inv @ state.rdot,
        "Omega": inv @ state.phidot,
        "F": inv @ np.asarray(F),
        "N": inv @ np.asarray(N) @ inv.T,
    }


def balance_laws(model: AffineBodyModel, state: AffineBodyState, variant=ConstraintVariant.UNCONSTRAINED,
                 force_law: Optional[Callable] = None, fd_step: float = 1e-4) -> dict:
    """Finite-difference defects of the balance laws at ``state``.

    The neighbouring states at t +- fd_step are produced by one RK4 step of the
    (constrained) equations of motion; the dipole N on the right-hand sides is
    the total one, applied plus reaction.
    """
    variant = ConstraintVariant.parse(variant)
    geo = VariantGeometry(model, variant)
    rhs = _rhs_factory(model, variant, geo, force_law)
    fwd = _rk4_affine(rhs, state, fd_step)
    bwd = _rk4_affine(rhs, state, -fd_step)
    _, phidd, F, N_app, N_R = rhs(state)
    N = N_app + N_R
    d = lambda f: (f(fwd) - f(bwd)) / (2.0 * fd_step)

    J = model.inertia
    Jinv = model.inertia_inv
    p, K, S = momenta(model, state)
    Omega, _ = gyration(state)
    pd = state.phidot
    _, T_int = kinetic_energy(model, state)
    dTint_dg = 0.5 * pd @ J @ pd.T
    cm = comoving(model, state, F, N)
    cm_d = lambda key: d(lambda s: comoving(model, s, F, N)[key])

    defects = {
        "linear_momentum": d(lambda s: momenta(model, s)[0]) - F,
        "affine_spin": d(lambda s: momenta(model, s)[1]) - (pd @ J @ pd.T + N),
        "spin": d(lambda s: momenta(model, s)[2]) - (N - N.T),
        "affine_spin_metric": d(lambda s: momenta(model, s)[1]) - (N + 2.0 * dTint_dg),
        "comoving_momentum": cm_d("p") - (-(cm["K"].T @ Jinv @ cm["p"]) + cm["F"]),
        "comoving_spin": cm_d("K") - (-(cm["K"] @ Jinv @ cm["K"]) + cm["N"]),
        "comoving_velocity": model.mass * cm_d("v") - (-model.mass * cm["Omega"] @ cm["v"] + cm["F"]),
        "comoving_gyration": cm_d("Omega") @ J - (-(cm["Omega"] @ cm["Omega"] @ J) + cm["N"].T),
    }
    if np.max(np.abs(N)) == 0.0:
        defects["gyration_spin"] = d(lambda s: momenta(model, s)[1]) - Omega @ K
    return {key: float(np.max(np.abs(val))) for key, val in defects.items()}


def reaction_moment(model: AffineBodyModel, state: AffineBodyState, R) -> np.ndarray:
    """Reaction dipole N_R from a generic reaction covector R on q = (r, phi.ravel())."""
    n = model.n
    R_phi = np.asarray(R, dtype=float)[n:].reshape(n, n)
    return state.phi @ R_phi.T @ model.g_inv


def reaction_force(model: AffineBodyModel, R) -> np.ndarray:
    return model.g_inv @ np.asarray(R, dtype=float)[: model.n]


# ---------------------------------------------------------------- bridge to the generic solver

def generic_system(model: AffineBodyModel) -> LagrangianSystem:
    """The k = n + n^2 Lagrangian L = T - V with constant block mass matrix."""
    n = model.n
    k = n + n * n
    Mmat = np.zeros((k, k))
    Mmat[:n, :n] = model.mass * model.g
    Mmat[n:, n:] = np.kron(model.g, model.inertia)
    zero_mixed = np.zeros((k, k))
    V = model.potential
    dV = model.potential_gradient

    def split(q):
        return q[:n], q[n:].reshape(n, n)

    def L(q, v):
        out = 0.5 * v @ Mmat @ v
        if V is not None:
            out -= V(*split(q))
        return out

    def dL_dq(q, v):
        if dV is None:
            return np.zeros(k)
        dr, dphi = dV(*split(q))
        return -np.concatenate([np.asarray(dr, dtype=float), np.asarray(dphi, dtype=float).ravel()])

    labels = [f"r{i + 1}" for i in range(n)] + [f"phi{i + 1}{a + 1}" for i in range(n) for a in range(n)]
    return LagrangianSystem(k, L, dL_dq, lambda q, v: Mmat @ v, lambda q, v: Mmat, lambda q, v: zero_mixed,
                            labels=labels)


def generic_force(model: AffineBodyModel) -> Optional[DissipativeForce]:
    """Direct force laws as a generalized force covector (g F, g N^T phi^-T)."""
    if model.force_law is None:
        return None
    n = model.n

    def evaluate(q, v):
        st = AffineBodyState.from_generic(n, q, v)
        F, N = model.force_law(st)
        P = model.g @ np.asarray(N, dtype=float).T @ np.linalg.inv(st.phi).T
        return np.concatenate([model.g @ np.asarray(F, dtype=float), P.ravel()])

    return DissipativeForce(evaluate)


def generic_constraints(model: AffineBodyModel, variant, det0: Optional[float] = None):
    """The variant's constraints on q = (r, phi.ravel()), or None when unconstrained."""
    variant = ConstraintVariant.parse(variant)
    if variant is ConstraintVariant.UNCONSTRAINED:
        return None
    geo = VariantGeometry(model, variant, det0=det0)
    n = model.n
    k = n + n * n
    m = geo.m

    def pad(rows):
        out = np.zeros((m, k))
        out[:, n:] = rows
        return out

    def pad3(H):
        out = np.zeros((m, k, k))
        out[:, n:, n:] = H
        return out

    phi_of = lambda q: q[n:].reshape(n, n)
    if geo.holonomic:
        return HolonomicConstraints(
            m, k,
            lambda q: geo.config(phi_of(q)),
            lambda q: pad(geo.config_jacobian(phi_of(q))),
            lambda q: pad3(geo.config_hessian(phi_of(q))),
            names=geo.names(),
        )
    return PfaffianConstraints(
        m, k,
        lambda q: pad(geo.velocity_coefficients(phi_of(q))),
        None,
        lambda q: pad3(geo.velocity_coefficients_derivative(phi_of(q))),
        names=geo.names(),
    )


def to_generic_scenario(model: AffineBodyModel, variant, state: AffineBodyState, t_end: float = 10.0,
                        config: Optional[IntegratorConfig] = None, name: str = "") -> Scenario:
    """Express the affine body and its variant constraint as a generic ideal-constraint scenario."""
    variant = ConstraintVariant.parse(variant)
    det0 = float(np.linalg.det(state.phi)) if variant is ConstraintVariant.ISOCHORIC else None
    C = generic_constraints(model, variant, det0)
    blocks = [] if C is None else [ConstraintBlock(C, "ideal", name=variant.value)]
    q0, v0 = state.to_generic()
    return Scenario(generic_system(model), q0, v0, blocks, generic_force(model), t_end,
                    config or IntegratorConfig(), name or f"affine_{variant.value}")
