"""Closure of the constrained equations of motion, time stepping and trajectory diagnostics.

Ideal d'Alembert and Appell-Chetaev blocks contribute algebraic multipliers
lambda; vakonomic blocks contribute a multiplier state mu that is integrated
alongside (q, v), with its rate mudot returned by the closure.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from . import _fd
from .constraints import (
    ConstraintSet,
    HolonomicConstraints,
    as_velocity,
    check_rank,
    differentiated_form,
    residual,
    velocity_gradient,
    velocity_residual,
)
from .dynamics import DissipativeForce, LagrangianSystem, euler_lagrange_residual
from .errors import (
    AdmissionError,
    ChartDegeneracyError,
    ConfigurationError,
    DegenerateConstraintError,
    StepFailure,
)
from .reactions import ReactionModel

@dataclass
class ConstraintBlock:
    """One constraint set together with the reaction law that maintains it."""

    constraints: ConstraintSet
    model: ReactionModel = ReactionModel.IDEAL_DALEMBERT
    mu0: Optional[np.ndarray] = None
    name: str = ""

    def __post_init__(self):
        self.model = ReactionModel.parse(self.model)
        if not self.model.accepts(self.constraints):
            raise ConfigurationError(
                f"{self.model.value} reactions do not apply to {self.constraints.family} constraints"
            )
        if not self.name:
            self.name = self.constraints.family
        self.m = self.constraints.m
        if self.model is ReactionModel.VAKONOMIC:
            self.mu0 = np.zeros(self.m) if self.mu0 is None else np.atleast_1d(np.asarray(self.mu0, dtype=float))
            if self.mu0.shape != (self.m,):
                raise ConfigurationError(f"mu0 for block {self.name!r} must have length {self.m}")
            self._velocity = as_velocity(self.constraints)
        else:
            self._velocity = None

    @property
    def vakonomic(self) -> bool:
        return self.model is ReactionModel.VAKONOMIC

    def labels(self) -> List[str]:
        return [f"{self.name}.{n}" for n in self.constraints.names]


@dataclass
class IntegratorConfig:
    h: float = 1e-3
    method: str = "rk4"
    baumgarte: bool = False
    alpha: float = 10.0
    beta: float = 10.0
    projection: bool = True
    projection_tol: float = 1e-12
    admission_tol: float = 1e-9
    max_projection_iter: int = 20
    stride: int = 1

    def __post_init__(self):
        if not self.h > 0:
            raise ConfigurationError("step size must be positive")
        if self.method not in ("rk4", "euler"):
            raise ConfigurationError(f"unknown integration method {self.method!r}")
        if self.alpha < 0 or self.beta < 0:
            raise ConfigurationError("Baumgarte coefficients must be non-negative")
        if not (self.projection_tol > 0 and self.admission_tol > 0):
            raise ConfigurationError("tolerances must be positive")
        if self.stride < 1:
            raise ConfigurationError("output stride must be >= 1")


@dataclass
class Scenario:
    system: LagrangianSystem
    q0: np.ndarray
    v0: np.ndarray
    constraints: List[ConstraintBlock] = field(default_factory=list)
    dissipation: Optional[DissipativeForce] = None
    t_end: float = 1.0
    config: IntegratorConfig = field(default_factory=IntegratorConfig)
    name: str = "scenario"

    def __post_init__(self):
        self.q0 = np.asarray(self.q0, dtype=float)
        self.v0 = np.asarray(self.v0, dtype=float)
        k = self.system.dimension
        if self.q0.shape != (k,) or self.v0.shape != (k,):
            raise ConfigurationError(f"initial state must have {k} coordinates")
        for blk in self.constraints:
            if blk.constraints.k != k:
                raise ConfigurationError(f"constraint block {blk.name!r} is for k={blk.constraints.k}, system has k={k}")
        if not self.t_end > 0:
            raise ConfigurationError("time span must be positive")

    @property
    def row_labels(self) -> List[str]:
        key = tuple(id(blk) for blk in self.constraints)
        if getattr(self, "_labels_key", None) != key:
            self._labels = [lbl for blk in self.constraints for lbl in blk.labels()]
            self._labels_key = key
        return self._labels

    @property
    def mu0(self) -> np.ndarray:
        parts = [blk.mu0 for blk in self.constraints if blk.vakonomic]
        return np.concatenate(parts) if parts else np.zeros(0)

    def initial_state(self) -> "State":
        return State(0.0, self.q0.copy(), self.v0.copy(), self.mu0.copy())

    def multiplier_labels(self):
        lam, mu = [], []
        for blk in self.constraints:
            (mu if blk.vakonomic else lam).extend(blk.labels())
        return lam, mu


@dataclass
class State:
    t: float
    q: np.ndarray
    v: np.ndarray
    mu: np.ndarray


@dataclass
class Closure:
    """Accelerations and multipliers at one state."""

    a: np.ndarray
    lam: np.ndarray
    mudot: np.ndarray
    reaction: np.ndarray
    block_reactions: List[np.ndarray]


def _baumgarte_rhs(blk: ConstraintBlock, q, v, b, cfg: IntegratorConfig):
    C = blk.constraints
    if isinstance(C, HolonomicConstraints):
        return b - 2.0 * cfg.alpha * (C.jacobian(q) @ v) - cfg.beta ** 2 * C.value(q)
    return b - 2.0 * cfg.alpha * residual(C, q, v)


def assemble_closure(scenario: Scenario, state: State, stabilize: Optional[bool] = None,
                     check: bool = True) -> Closure:
    """Solve the saddle system for accelerations and multipliers.

    Ideal and Appell-Chetaev blocks: [M, -B^T; A, 0] [a; lambda] = [Q; b] with
    B = A the constraint gradient (dF/dq, omega or dF/dv), so that the reaction
    is R = lambda^a B_a. Vakonomic blocks: the reaction formula is substituted
    into M a - Q = R, leaving a linear system in (a, mudot). ``check=False``
    skips the SVD rank test (a singular system is still reported by the solve).
    """
    sys = scenario.system
    cfg = scenario.config
    stabilize = cfg.baumgarte if stabilize is None else stabilize
    q, v, mu = state.q, state.v, state.mu
    k = sys.dimension

    M = sys.mass_matrix(q, v)
    Q = sys.generalized_force(q, v, scenario.dissipation)
    if not scenario.constraints:
        try:
            a = np.linalg.solve(M, Q)
        except np.linalg.LinAlgError as exc:
            raise DegenerateConstraintError(f"singular mass matrix at t={state.t}", condition=np.inf) from exc
        return Closure(a, np.zeros(0), np.zeros(0), np.zeros(k), [])

    K = M.copy()
    rhs = Q.copy()
    cols, rows, bs = [], [], []
    vak_terms = []
    off = 0
    for blk in scenario.constraints:
        if blk.vakonomic:
            Cv = blk._velocity
            mu_b = mu[off:off + blk.m]
            off += blk.m
            Fv = Cv.Fv(q, v)
            Fq = Cv.Fq(q, v)
            Fvq = Cv.Fvq(q, v)
            Fvv = Cv.Fvv(q, v)
            K += np.einsum("a,aij->ij", mu_b, Fvv)
            static = mu_b @ Fq - np.einsum("a,aij,j->i", mu_b, Fvq, v)
            rhs += static
            A, b = Fv, -(Fq @ v)
            cols.append(Fv.T)
            vak_terms.append((mu_b, Fv, Fvv, static))
        else:
            A, b = differentiated_form(blk.constraints, q, v, check=False)
            cols.append(-A.T)
        if stabilize:
            b = _baumgarte_rhs(blk, q, v, b, cfg)
        rows.append(A)
        bs.append(b)

    A = rows[0] if len(rows) == 1 else np.vstack(rows)
    if check:
        check_rank(A, scenario.row_labels)
    m = A.shape[0]
    S = np.zeros((k + m, k + m))
    S[:k, :k] = K
    S[:k, k:] = np.hstack(cols)
    S[k:, :k] = A
    try:
        x = np.linalg.solve(S, np.concatenate([rhs, np.concatenate(bs)]))
    except np.linalg.LinAlgError as exc:
        cond = np.linalg.cond(S)
        raise DegenerateConstraintError(f"singular saddle system at t={state.t} (condition {cond:.3g})",
                                        condition=cond) from exc
    if not np.all(np.isfinite(x)):
        raise DegenerateConstraintError(f"singular saddle system at t={state.t}", condition=np.inf)
    a = x[:k]
    nu = x[k:]

    lam, mudot, block_R = [], [], []
    pos = 0
    vi = 0
    for blk, A_b in zip(scenario.constraints, rows):
        nb = nu[pos:pos + blk.m]
        pos += blk.m
        if blk.vakonomic:
            mu_b, Fv, Fvv, static = vak_terms[vi]
            vi += 1
            mudot.append(nb)
            block_R.append(static - nb @ Fv - np.einsum("a,aij,j->i", mu_b, Fvv, a))
        else:
            lam.append(nb)
            block_R.append(nb @ A_b)
    lam = np.concatenate(lam) if lam else np.zeros(0)
    mudot = np.concatenate(mudot) if mudot else np.zeros(0)
    return Closure(a, lam, mudot, np.sum(block_R, axis=0), block_R)


def _inverse_mass(M):
    try:
        return np.linalg.inv(M)
    except np.linalg.LinAlgError as exc:
        raise StepFailure("singular mass matrix during projection") from exc


def newton_project(fun: Callable, jac: Callable, x, W_inv, tol: float, max_iter: int, what: str = "state"):
    """Minimum-norm (in the metric W) Newton correction of x onto fun(x) = 0."""
    x = np.array(x, dtype=float)
    for it in range(max_iter + 1):
        r = fun(x)
        if r.size == 0 or np.max(np.abs(r)) <= tol:
            return x
        if it == max_iter:
            break
        J = jac(x)
        WJt = W_inv @ J.T
        try:
            x = x - WJt @ np.linalg.solve(J @ WJt, r)
        except np.linalg.LinAlgError as exc:
            raise StepFailure(f"{what} projection hit a singular constraint Jacobian") from exc
    raise StepFailure(
        f"{what} projection did not converge in {max_iter} iterations (residual {np.max(np.abs(r)):.3e})"
    )


def project_state(scenario: Scenario, state: State) -> State:
    """Position projection onto the holonomic sets, then velocity projection onto all sets.

    Both corrections are orthogonal in the mass-matrix metric.
    """
    cfg = scenario.config
    sys = scenario.system
    q, v = state.q, state.v
    hol = [blk.constraints for blk in scenario.constraints if isinstance(blk.constraints, HolonomicConstraints)]
    try:
        W_inv = _inverse_mass(sys.mass_matrix(q, v))
        if hol:
            q = newton_project(
                lambda x: np.concatenate([C.value(x) for C in hol]),
                lambda x: np.vstack([C.jacobian(x) for C in hol]),
                q, W_inv, cfg.projection_tol, cfg.max_projection_iter, "position",
            )
        sets = [blk.constraints for blk in scenario.constraints]
        v = newton_project(
            lambda u: np.concatenate([velocity_residual(C, q, u) for C in sets]),
            lambda u: np.vstack([velocity_gradient(C, q, u) for C in sets]),
            v, W_inv, cfg.projection_tol, cfg.max_projection_iter, "velocity",
        )
    except StepFailure as exc:
        exc.time = state.t
        raise
    return State(state.t, q, v, state.mu)


def _derivative(scenario, state, closure=None):
    c = closure if closure is not None else assemble_closure(scenario, state, check=False)
    return state.v, c.a, c.mudot


def step(scenario: Scenario, state: State, k1=None) -> State:
    """Advance one step of size h; ``k1`` may carry the closure already evaluated at ``state``."""
    cfg = scenario.config
    h = cfg.h
    t, q, v, mu = state.t, state.q, state.v, state.mu
    try:
        d1 = _derivative(scenario, state, k1)
        if cfg.method == "euler":
            new = State(t + h, q + h * d1[0], v + h * d1[1], mu + h * d1[2])
        else:
            def shifted(c, d):
                return State(t + c * h, q + c * h * d[0], v + c * h * d[1], mu + c * h * d[2])
            d2 = _derivative(scenario, shifted(0.5, d1))
            d3 = _derivative(scenario, shifted(0.5, d2))
            d4 = _derivative(scenario, shifted(1.0, d3))
            w = h / 6.0
            new = State(
                t + h,
                q + w * (d1[0] + 2 * d2[0] + 2 * d3[0] + d4[0]),
                v + w * (d1[1] + 2 * d2[1] + 2 * d3[1] + d4[1]),
                mu + w * (d1[2] + 2 * d2[2] + 2 * d3[2] + d4[2]),
            )
    except DegenerateConstraintError as exc:
        raise StepFailure(f"step from t={t:.6g} failed: {exc}", time=t) from exc
    if cfg.projection and scenario.constraints:
        new = project_state(scenario, new)
    return new


def check_admission(scenario: Scenario, state: Optional[State] = None) -> None:
    """Raise AdmissionError naming the first constraint row violated beyond the admission tolerance."""
    state = state or scenario.initial_state()
    tol = scenario.config.admission_tol
    for blk in scenario.constraints:
        C = blk.constraints
        checks = [("position", C.value(state.q))] if isinstance(C, HolonomicConstraints) else []
        checks.append(("velocity", velocity_residual(C, state.q, state.v)))
        for level, r in checks:
            bad = np.flatnonzero(np.abs(r) > tol)
            if bad.size:
                row = int(bad[0])
                label = f"{blk.name}.{C.names[row]}"
                raise AdmissionError(
                    f"initial state violates {level}-level constraint {label} (residual {r[row]:.3e} > {tol:g})",
                    constraint=label, value=float(r[row]),
                )
    if scenario.constraints:
        A = np.vstack([velocity_gradient(blk.constraints, state.q, state.v) for blk in scenario.constraints])
        check_rank(A, [lbl for blk in scenario.constraints for lbl in blk.labels()])


@dataclass
class TrajectoryRecord:
    t: np.ndarray
    q: np.ndarray
    v: np.ndarray
    a: np.ndarray
    lam: np.ndarray
    mu: np.ndarray
    mudot: np.ndarray
    reaction: np.ndarray
    energy: np.ndarray
    c_res: np.ndarray
    v_res: np.ndarray
    r_power: np.ndarray
    r_norm: np.ndarray
    lam_labels: List[str] = field(default_factory=list)
    mu_labels: List[str] = field(default_factory=list)

    def __post_init__(self):
        n = len(self.t)
        for name in ("q", "v", "a", "lam", "mu", "mudot", "reaction", "energy", "c_res", "v_res", "r_power", "r_norm"):
            if len(getattr(self, name)) != n:
                raise ConfigurationError(f"trajectory field {name} has {len(getattr(self, name))} samples, expected {n}")
        if n > 1 and np.any(np.diff(self.t) <= 0):
            raise ConfigurationError("sample times must be strictly increasing")

    def __len__(self):
        return len(self.t)

    def summary(self) -> dict:
        E0 = self.energy[0]
        drift = float(np.max(np.abs(self.energy - E0)))
        return {
            "samples": int(len(self.t)),
            "t_final": float(self.t[-1]),
            "max_residual": float(np.max(self.c_res)) if self.c_res.size else 0.0,
            "max_velocity_residual": float(np.max(self.v_res)) if self.v_res.size else 0.0,
            "energy_initial": float(E0),
            "energy_drift_abs": drift,
            "energy_drift_rel": drift / abs(E0) if E0 != 0 else (0.0 if drift == 0 else float("inf")),
            "max_reaction_power": float(np.max(np.abs(self.r_power))),
            "max_reaction_norm": float(np.max(self.r_norm)),
        }


def _diagnostics(scenario, state, closure):
    q, v = state.q, state.v
    res, vres = [0.0], [0.0]
    for blk in scenario.constraints:
        res.append(np.max(np.abs(residual(blk.constraints, q, v))))
        vres.append(np.max(np.abs(velocity_residual(blk.constraints, q, v))))
    R = closure.reaction
    return (scenario.system.energy(q, v), max(res), max(vres), float(R @ v), float(np.linalg.norm(R)))


def simulate(scenario: Scenario, on_sample: Optional[Callable] = None) -> TrajectoryRecord:
    """Integrate over [0, t_end], recording state, multipliers and diagnostics every ``stride`` steps."""
    cfg = scenario.config
    state = scenario.initial_state()
    check_admission(scenario, state)
    n_steps = int(round(scenario.t_end / cfg.h))
    if n_steps < 1:
        raise ConfigurationError("time span shorter than one step")
    lam_labels, mu_labels = scenario.multiplier_labels()

    cols = {key: [] for key in ("t", "q", "v", "a", "lam", "mu", "mudot", "reaction", "energy", "c_res",
                                "v_res", "r_power", "r_norm")}

    def record(st, cl):
        E, cres, vres, P, Rn = _diagnostics(scenario, st, cl)
        for key, val in (("t", st.t), ("q", st.q), ("v", st.v), ("a", cl.a), ("lam", cl.lam), ("mu", st.mu),
                         ("mudot", cl.mudot), ("reaction", cl.reaction), ("energy", E), ("c_res", cres),
                         ("v_res", vres), ("r_power", P), ("r_norm", Rn)):
            cols[key].append(val)
        if on_sample is not None:
            on_sample(st, cl)

    closure = assemble_closure(scenario, state)
    record(state, closure)
    for i in range(1, n_steps + 1):
        try:
            state = step(scenario, state, closure)
            state.t = i * cfg.h
            closure = assemble_closure(scenario, state)
        except DegenerateConstraintError as exc:
            raise StepFailure(f"closure failed at t={state.t:.6g}: {exc}", time=state.t) from exc
        except StepFailure as exc:
            if exc.time is None:
                exc.time = state.t
            raise
        if not (np.all(np.isfinite(state.q)) and np.all(np.isfinite(state.v))):
            raise StepFailure(f"non-finite state at t={state.t:.6g}", time=state.t)
        if i % cfg.stride == 0 or i == n_steps:
            record(state, closure)

    arrays = {key: np.array(val, dtype=float) for key, val in cols.items()}
    k = scenario.system.dimension
    for key, width in (("lam", len(lam_labels)), ("mu", len(mu_labels)), ("mudot", len(mu_labels))):
        arrays[key] = arrays[key].reshape(len(arrays["t"]), width)
    for key in ("q", "v", "a", "reaction"):
        arrays[key] = arrays[key].reshape(len(arrays["t"]), k)
    return TrajectoryRecord(**arrays, lam_labels=lam_labels, mu_labels=mu_labels)


# ---------------------------------------------------------------- parametric reduction

@dataclass
class Embedding:
    """Parametrization q = phi(y) of the constraint manifold.

    ``jacobian(y)[i, mu] = d phi^i / dy^mu``; ``second(y)[i, mu, nu]`` the
    second derivatives (finite differences of the Jacobian when omitted).
    """

    dimension: int
    codimension_free: int
    map: Callable
    jacobian: Callable
    second: Optional[Callable] = None

    def hessian(self, y) -> np.ndarray:
        if self.second is not None:
            return np.asarray(self.second(y), dtype=float)
        H = _fd.jacobian(lambda x: np.asarray(self.jacobian(x), dtype=float), y)
        return 0.5 * (H + np.transpose(H, (0, 2, 1)))

    def checked_jacobian(self, y) -> np.ndarray:
        Phi = np.asarray(self.jacobian(y), dtype=float).reshape(self.dimension, self.codimension_free)
        s = np.linalg.svd(Phi, compute_uv=False)
        if s[0] == 0.0 or s[-1] < 1e-10 * s[0]:
            raise ChartDegeneracyError(f"embedding Jacobian loses rank at y={np.asarray(y)}")
        return Phi


def reduce_parametric(sys: LagrangianSystem, D: Optional[DissipativeForce], embedding: Embedding):
    """Restrict L to the parametrized manifold and pull D back along the embedding."""
    emb = embedding

    def lift(y, yd):
        y = np.asarray(y, dtype=float)
        yd = np.asarray(yd, dtype=float)
        Phi = emb.checked_jacobian(y)
        return np.asarray(emb.map(y), dtype=float), Phi @ yd, Phi

    def L(y, yd):
        q, v, _ = lift(y, yd)
        return sys.lagrangian(q, v)

    def dL_dv(y, yd):
        q, v, Phi = lift(y, yd)
        return Phi.T @ sys.dL_dv(q, v)

    def dL_dq(y, yd):
        q, v, Phi = lift(y, yd)
        H = emb.hessian(np.asarray(y, dtype=float))
        return Phi.T @ sys.dL_dq(q, v) + np.einsum("i,inm,n->m", sys.dL_dv(q, v), H, yd)

    def mass(y, yd):
        q, v, Phi = lift(y, yd)
        return Phi.T @ sys.mass_matrix(q, v) @ Phi

    def mixed(y, yd):
        q, v, Phi = lift(y, yd)
        H = emb.hessian(np.asarray(y, dtype=float))
        p = sys.dL_dv(q, v)
        dv_dy = np.einsum("jrn,r->jn", H, yd)
        return (np.einsum("imn,i->mn", H, p)
                + Phi.T @ (sys.mixed(q, v) @ Phi + sys.mass_matrix(q, v) @ dv_dy))

    reduced = LagrangianSystem(emb.codimension_free, L, dL_dq, dL_dv, mass, mixed,
                               labels=[f"y{i + 1}" for i in range(emb.codimension_free)])
    if D is None:
        return reduced, None

    def pulled_back(y, yd):
        q, v, Phi = lift(y, yd)
        return Phi.T @ D(q, v)

    return reduced, DissipativeForce(pulled_back)


# ---------------------------------------------------------------- Procedure 1 check

@dataclass
class Procedure1Report:
    el_residual: np.ndarray
    el_defect: np.ndarray
    constraint_defect: np.ndarray
    tol: float

    @property
    def max_el_defect(self) -> float:
        return float(np.max(self.el_defect))

    @property
    def max_constraint_defect(self) -> float:
        return float(np.max(self.constraint_defect)) if self.constraint_defect.size else 0.0

    @property
    def is_special_solution(self) -> bool:
        """True when the samples solve the unconstrained equations and satisfy the constraints."""
        return self.max_el_defect <= self.tol and self.max_constraint_defect <= self.tol

    def as_dict(self) -> dict:
        return {
            "max_el_defect": self.max_el_defect,
            "max_constraint_defect": self.max_constraint_defect,
            "is_special_solution": self.is_special_solution,
        }


def check_procedure1(sys: LagrangianSystem, D: Optional[DissipativeForce], samples,
                     constraint_sets: Sequence[ConstraintSet] = (), tol: float = 1e-10) -> Procedure1Report:
    """Test whether a trajectory is a special solution of the reaction-free equations.

    ``samples`` is a TrajectoryRecord or a (q, v, a) triple of arrays. The
    Euler-Lagrange defect is evaluated with zero reaction; constraint defects
    combine position- and velocity-level residuals.
    """
    if isinstance(samples, TrajectoryRecord):
        Qs, Vs, As = samples.q, samples.v, samples.a
    else:
        Qs, Vs, As = (np.atleast_2d(np.asarray(x, dtype=float)) for x in samples)
    el = np.array([euler_lagrange_residual(sys, D, q, v, a) for q, v, a in zip(Qs, Vs, As)])
    cdef = []
    for q, v in zip(Qs, Vs):
        worst = 0.0
        for C in constraint_sets:
            worst = max(worst, np.max(np.abs(residual(C, q, v))), np.max(np.abs(velocity_residual(C, q, v))))
        cdef.append(worst)
    return Procedure1Report(el, np.linalg.norm(el, axis=1), np.array(cdef), tol)
