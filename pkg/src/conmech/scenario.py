"""Scenario files: YAML documents describing a system, its constraints and a run.

Parse and schema errors carry the line/column of the offending node.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import yaml

from . import affine_body as ab
from . import library
from .constraints import (
    HolonomicConstraints,
    PfaffianConstraints,
    VelocityConstraints,
    lift_holonomic_to_pfaffian,
)
from .dynamics import DissipativeForce, NaturalSystemSpec, build_natural_lagrangian
from .errors import ConfigurationError
from .expr import Expression, ExpressionError, ExpressionVector, constant, indexed_names, matrix_names, parameter_table
from .manifold import MetricField
from .reactions import ReactionModel
from .solver import ConstraintBlock, IntegratorConfig, Scenario

TOP_LEVEL = {"name", "description", "system", "affine_body", "constraints", "initial", "integrator", "output"}


class ScenarioError(ConfigurationError):
    def __init__(self, message, line=None, column=None, source=None):
        where = ""
        if line is not None:
            where = f"{source or '<scenario>'}:{line}:{column}: "
        super().__init__(where + message)
        self.line = line
        self.column = column


# ---------------------------------------------------------------- YAML with positions

class MarkedDict(dict):
    mark = None
    key_marks: Dict[str, Any]


class MarkedList(list):
    mark = None
    item_marks: List[Any]


class _Loader(yaml.SafeLoader):
    pass


def _construct_mapping(loader, node):
    loader.flatten_mapping(node)
    out = MarkedDict()
    out.mark = node.start_mark
    out.key_marks = {}
    for key_node, value_node in node.value:
        key = loader.construct_object(key_node, deep=True)
        if key in out:
            raise ScenarioError(f"duplicate key {key!r}", key_node.start_mark.line + 1, key_node.start_mark.column + 1)
        out[key] = loader.construct_object(value_node, deep=True)
        out.key_marks[key] = value_node.start_mark
    return out


def _construct_sequence(loader, node):
    out = MarkedList(loader.construct_object(child, deep=True) for child in node.value)
    out.mark = node.start_mark
    out.item_marks = [child.start_mark for child in node.value]
    return out


_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_mapping)
_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_SEQUENCE_TAG, _construct_sequence)


def _plain(obj):
    """Strip position bookkeeping (for echoing the configuration)."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_plain(v) for v in obj]
    return obj


class _Ctx:
    """Error reporting relative to the node currently being interpreted."""

    def __init__(self, source):
        self.source = source

    def error(self, msg, mark=None):
        if mark is None:
            raise ScenarioError(msg, source=self.source)
        raise ScenarioError(msg, mark.line + 1, mark.column + 1, self.source)

    def mark_of(self, parent, key):
        if isinstance(parent, MarkedDict) and key in parent.key_marks:
            return parent.key_marks[key]
        if isinstance(parent, MarkedList) and isinstance(key, int) and key < len(parent.item_marks):
            return parent.item_marks[key]
        return getattr(parent, "mark", None)

    def section(self, parent, key, required=True, kind=dict):
        if key not in parent:
            if required:
                self.error(f"missing required section {key!r}", getattr(parent, "mark", None))
            return None
        val = parent[key]
        if kind is not None and not isinstance(val, kind):
            self.error(f"{key!r} must be a {'mapping' if kind is dict else 'list'}", self.mark_of(parent, key))
        return val

    def check_keys(self, node, allowed, where):
        for key in node:
            if key not in allowed:
                self.error(f"unknown key {key!r} in {where}; allowed: {sorted(allowed)}", self.mark_of(node, key))

    def wrap(self, parent, key, fn):
        """Run fn(), turning configuration errors into positioned scenario errors."""
        try:
            return fn()
        except ScenarioError:
            raise
        except ConfigurationError as exc:
            self.error(str(exc), self.mark_of(parent, key))

    def number(self, parent, key, params=None, default=None):
        if key not in parent:
            if default is None:
                self.error(f"missing {key!r}", getattr(parent, "mark", None))
            return default
        return self.wrap(parent, key, lambda: constant(parent[key], params))

    def vector(self, parent, key, length=None, params=None):
        val = parent[key]
        if not isinstance(val, list):
            self.error(f"{key!r} must be a list", self.mark_of(parent, key))
        out = self.wrap(parent, key, lambda: np.array([constant(x, params) for x in val], dtype=float))
        if length is not None and out.shape != (length,):
            self.error(f"{key!r} must have {length} entries, got {len(out)}", self.mark_of(parent, key))
        return out

    def matrix(self, parent, key, n, params=None, allow_diagonal=True):
        val = parent[key]
        if isinstance(val, list) and val and all(not isinstance(x, list) for x in val) and allow_diagonal:
            d = self.vector(parent, key, n, params)
            return np.diag(d)
        if not (isinstance(val, list) and len(val) == n and all(isinstance(r, list) and len(r) == n for r in val)):
            self.error(f"{key!r} must be an {n}x{n} matrix (list of rows)", self.mark_of(parent, key))
        return self.wrap(parent, key, lambda: np.array([[constant(x, params) for x in r] for r in val], dtype=float))


# ---------------------------------------------------------------- loaded scenario

@dataclass
class BlockSpec:
    constraints: object
    model: ReactionModel
    mu0: Optional[np.ndarray]
    name: str


@dataclass
class ScenarioSpec:
    name: str
    source: str
    raw: dict
    case: library.Case
    blocks: List[BlockSpec]
    q0: np.ndarray
    v0: np.ndarray
    mu0: Optional[np.ndarray]
    t_end: float
    config: IntegratorConfig
    output: Dict[str, Any] = field(default_factory=dict)

    def echo(self) -> dict:
        return _plain(self.raw)

    def vakonomic_count(self, model_override=None) -> int:
        return sum(b.constraints.m for b in self.blocks
                   if (ReactionModel.parse(model_override) if model_override else b.model) is ReactionModel.VAKONOMIC)

    def build(self, model_override=None) -> Scenario:
        """Assemble a solver Scenario, optionally forcing every block onto one reaction model."""
        blocks = []
        pooled = self.mu0
        offset = 0
        for b in self.blocks:
            model = ReactionModel.parse(model_override) if model_override else b.model
            mu0 = b.mu0
            if model is ReactionModel.VAKONOMIC and mu0 is None and pooled is not None:
                mu0 = pooled[offset:offset + b.constraints.m]
                if len(mu0) != b.constraints.m:
                    raise ConfigurationError("initial.mu0 is shorter than the number of vakonomic constraints")
            if model is ReactionModel.VAKONOMIC:
                offset += b.constraints.m
            blocks.append(ConstraintBlock(b.constraints, model, mu0 if model is ReactionModel.VAKONOMIC else None,
                                          b.name))
        if pooled is not None and offset and offset != len(pooled):
            raise ConfigurationError(f"initial.mu0 has {len(pooled)} entries, vakonomic constraints need {offset}")
        return Scenario(self.case.system, self.q0, self.v0, blocks, self.case.dissipation, self.t_end,
                        self.config, self.name)


def load(path) -> ScenarioSpec:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario file: {exc}") from None
    return loads(text, str(path))


def loads(text: str, source: str = "<scenario>") -> ScenarioSpec:
    ctx = _Ctx(source)
    try:
        doc = yaml.load(text, Loader=_Loader)
    except yaml.MarkedYAMLError as exc:
        m = exc.problem_mark or exc.context_mark
        raise ScenarioError(f"YAML syntax error: {exc.problem}", m.line + 1 if m else None,
                            m.column + 1 if m else None, source) from None
    except yaml.YAMLError as exc:
        raise ScenarioError(f"YAML error: {exc}", source=source) from None
    if not isinstance(doc, dict):
        raise ScenarioError("scenario must be a mapping at top level", 1, 1, source)
    ctx.check_keys(doc, TOP_LEVEL, "scenario")
    has_sys, has_aff = "system" in doc, "affine_body" in doc
    if has_sys == has_aff:
        ctx.error("exactly one of 'system' or 'affine_body' must be present", doc.mark)
    ctx.section(doc, "initial", kind=None)

    if has_sys:
        case, params = _system(ctx, doc)
    else:
        case, params = _affine(ctx, doc)
    blocks = _constraints(ctx, doc, case, params)
    q0, v0, mu0 = _initial(ctx, doc, case, params)
    if case.affine is not None:
        blocks = [BlockSpec(C, ReactionModel.IDEAL_DALEMBERT, None, key) for key, C in case.constraint_sets.items()]
    t_end, config = _integrator(ctx, doc)
    output = _output(ctx, doc)
    if "stride" in output:
        config.stride = output["stride"]
    name = str(doc.get("name") or case.name)
    return ScenarioSpec(name, source, doc, case, blocks, q0, v0, mu0, t_end, config, output)


# ---------------------------------------------------------------- sections

def _system(ctx, doc):
    sec = ctx.section(doc, "system")
    if "builtin" in sec:
        ctx.check_keys(sec, {"builtin", "params"}, "system")
        raw_params = ctx.section(sec, "params", required=False) or {}
        params = ctx.wrap(sec, "params", lambda: parameter_table(raw_params))
        case = ctx.wrap(sec, "builtin", lambda: library.build(str(sec["builtin"]), params))
        if case.affine is not None:
            ctx.error("affine builtins belong in an 'affine_body' section", ctx.mark_of(sec, "builtin"))
        return case, params

    ctx.check_keys(sec, {"dimension", "labels", "metric", "potential", "covector", "coupling", "damping", "params"},
                   "system")
    raw_params = ctx.section(sec, "params", required=False) or {}
    params = ctx.wrap(sec, "params", lambda: parameter_table(raw_params))
    if "dimension" not in sec:
        ctx.error("natural system needs 'dimension'", sec.mark)
    k = int(ctx.number(sec, "dimension"))
    if k < 1:
        ctx.error("dimension must be >= 1", ctx.mark_of(sec, "dimension"))
    qn = indexed_names("q", k)
    metric = _metric(ctx, sec, k, qn, params)
    V = dV = A = None
    if "potential" in sec:
        e = ctx.wrap(sec, "potential", lambda: Expression(sec["potential"], qn, params))
        V, dV = e, e.gradient
    if "covector" in sec:
        vec = ctx.wrap(sec, "covector", lambda: ExpressionVector(sec["covector"], qn, params))
        if len(vec) != k:
            ctx.error(f"covector needs {k} components", ctx.mark_of(sec, "covector"))
        A = vec
    coupling = ctx.number(sec, "coupling", params, default=1.0)
    spec = NaturalSystemSpec(metric, V, dV, A, A.jacobian if A is not None else None, coupling)
    labels = sec.get("labels")
    system = ctx.wrap(sec, "labels", lambda: build_natural_lagrangian(spec, labels=labels))
    D = None
    if "damping" in sec:
        raw = sec["damping"]
        d = (np.eye(k) * ctx.number(sec, "damping", params) if not isinstance(raw, list)
             else ctx.matrix(sec, "damping", k, params))
        D = ctx.wrap(sec, "damping", lambda: DissipativeForce.linear_viscous(d))
    case = library.Case("natural", system, np.zeros(k), np.zeros(k), dissipation=D, params=params)
    return case, params


def _metric(ctx, sec, k, qn, params):
    raw = sec.get("metric", "identity")
    if raw == "identity":
        return MetricField.constant(np.eye(k))
    if isinstance(raw, list) and raw and not isinstance(raw[0], list):
        return ctx.wrap(sec, "metric", lambda: MetricField.constant(np.diag(ctx.vector(sec, "metric", k, params))))
    if not (isinstance(raw, list) and len(raw) == k and all(isinstance(r, list) and len(r) == k for r in raw)):
        ctx.error(f"metric must be 'identity', a diagonal list or a {k}x{k} matrix", ctx.mark_of(sec, "metric"))
    entries = ctx.wrap(sec, "metric", lambda: [[Expression(x, qn, params) for x in r] for r in raw])
    if all(not e.names_used & set(qn) for r in entries for e in r):
        const = np.array([[e(np.zeros(k)) for e in r] for r in entries])
        return ctx.wrap(sec, "metric", lambda: MetricField.constant(const))
    return MetricField(k, lambda q: np.array([[e(q) for e in r] for r in entries]))


def _affine(ctx, doc):
    sec = ctx.section(doc, "affine_body")
    if "builtin" in sec:
        ctx.check_keys(sec, {"builtin", "params"}, "affine_body")
        raw_params = ctx.section(sec, "params", required=False) or {}
        params = ctx.wrap(sec, "params", lambda: parameter_table(raw_params))
        name = str(sec["builtin"])
        if not name.startswith("affine_"):
            ctx.error(f"{name!r} is not an affine-body builtin", ctx.mark_of(sec, "builtin"))
        case = ctx.wrap(sec, "builtin", lambda: library.build(name, params))
        return case, params

    ctx.check_keys(sec, {"n", "M", "J", "g", "eta", "potential", "variant", "params"}, "affine_body")
    raw_params = ctx.section(sec, "params", required=False) or {}
    params = ctx.wrap(sec, "params", lambda: parameter_table(raw_params))
    for key in ("n", "M", "J", "variant"):
        if key not in sec:
            ctx.error(f"affine_body needs {key!r}", sec.mark)
    n = int(ctx.number(sec, "n"))
    if n < 1:
        ctx.error("n must be >= 1", ctx.mark_of(sec, "n"))
    M = ctx.number(sec, "M", params)
    J = ctx.matrix(sec, "J", n, params)
    g = ctx.matrix(sec, "g", n, params) if "g" in sec else None
    eta = ctx.matrix(sec, "eta", n, params) if "eta" in sec else None
    V = dV = None
    if "potential" in sec:
        names = indexed_names("r", n) + matrix_names("phi", n)
        e = ctx.wrap(sec, "potential", lambda: Expression(sec["potential"], names, params))

        def V(r, phi):
            return e(np.concatenate([r, phi.ravel()]))

        def dV(r, phi):
            grad = e.gradient(np.concatenate([r, phi.ravel()]))
            return grad[:n], grad[n:].reshape(n, n)

    model = ctx.wrap(sec, "J", lambda: ab.AffineBodyModel(n, M, J, g, eta, V, dV))
    variant = ctx.wrap(sec, "variant", lambda: ab.ConstraintVariant.parse(sec["variant"]))
    case = library.Case(f"affine_{variant.value}", ab.generic_system(model), np.zeros(n + n * n),
                        np.zeros(n + n * n), affine=(model, variant, None), params=params)
    return case, params


def _constraints(ctx, doc, case, params):
    k = case.system.dimension
    if case.affine is not None:
        if "constraints" in doc:
            ctx.error("affine bodies take their constraint from 'variant'; remove 'constraints'",
                      ctx.mark_of(doc, "constraints"))
        return []  # filled in by _initial once the state (and det phi0) is known
    if "constraints" not in doc:
        return [BlockSpec(case.constraint_sets[n], ReactionModel.IDEAL_DALEMBERT, None, n)
                for n in case.default_constraints]
    entries = ctx.section(doc, "constraints", kind=list)
    qn, vn = indexed_names("q", k), indexed_names("v", k)
    blocks = []
    for idx, ent in enumerate(entries):
        mark = ctx.mark_of(entries, idx)
        if not isinstance(ent, dict):
            ctx.error("each constraint entry must be a mapping", mark)
        ctx.check_keys(ent, {"builtin", "family", "expressions", "omega", "inhomogeneity", "model", "mu0", "name",
                             "lift"}, "constraint entry")
        model = ctx.wrap(ent, "model", lambda: ReactionModel.parse(ent.get("model", "ideal")))
        if "builtin" in ent:
            key = str(ent["builtin"])
            if key not in case.constraint_sets:
                ctx.error(f"system exports no constraint set {key!r}; available: {sorted(case.constraint_sets)}",
                          ctx.mark_of(ent, "builtin"))
            C = case.constraint_sets[key]
            name = str(ent.get("name", key))
        else:
            if "family" not in ent:
                ctx.error("constraint entry needs 'builtin' or 'family'", mark)
            family = str(ent["family"]).lower()
            name = str(ent.get("name", f"c{idx + 1}"))
            C = ctx.wrap(ent, "family", lambda: _expression_constraints(ctx, ent, family, k, qn, vn, params))
        if ent.get("lift"):
            if not isinstance(C, HolonomicConstraints):
                ctx.error("'lift' applies to holonomic constraints only", ctx.mark_of(ent, "lift"))
            C = lift_holonomic_to_pfaffian(C)
        mu0 = ctx.vector(ent, "mu0", C.m, params) if "mu0" in ent else None
        try:
            ConstraintBlock(C, model, mu0, name)
        except ConfigurationError as exc:
            ctx.error(str(exc), ctx.mark_of(ent, "model"))
        blocks.append(BlockSpec(C, model, mu0, name))
    return blocks


def _expression_constraints(ctx, ent, family, k, qn, vn, params):
    if family == "holonomic":
        F = ExpressionVector(_required(ctx, ent, "expressions"), qn, params)
        return HolonomicConstraints(len(F), k, F, F.jacobian)
    if family == "pfaffian":
        rows = _required(ctx, ent, "omega")
        if not isinstance(rows, list) or not all(isinstance(r, list) and len(r) == k for r in rows):
            ctx.error(f"omega must be a list of rows with {k} entries", ctx.mark_of(ent, "omega"))
        W = [ExpressionVector(r, qn, params) for r in rows]
        f = ExpressionVector(ent["inhomogeneity"], qn, params) if "inhomogeneity" in ent else None
        if f is not None and len(f) != len(W):
            ctx.error("inhomogeneity needs one entry per omega row", ctx.mark_of(ent, "inhomogeneity"))
        return PfaffianConstraints(len(W), k, lambda q: np.array([w(q) for w in W]), f)
    if family == "velocity":
        F = ExpressionVector(_required(ctx, ent, "expressions"), qn + vn, params)
        return VelocityConstraints(len(F), k, lambda q, v: F(np.concatenate([q, v])))
    raise ConfigurationError(f"unknown constraint family {family!r} (holonomic, pfaffian, velocity)")


def _required(ctx, ent, key):
    if key not in ent:
        ctx.error(f"constraint entry needs {key!r}", ent.mark)
    return ent[key]


def _initial(ctx, doc, case, params):
    sec = doc["initial"]
    use_default = sec == "default" or (isinstance(sec, dict) and sec.get("default") is True)
    if not (use_default or isinstance(sec, dict)):
        ctx.error("'initial' must be a mapping or the word 'default'", ctx.mark_of(doc, "initial"))
    mu0 = None
    if isinstance(sec, dict) and "mu0" in sec:
        mu0 = ctx.vector(sec, "mu0", None, params)

    if case.affine is not None:
        model, variant, state = case.affine
        n = model.n
        if use_default:
            if state is None:
                ctx.error("explicit affine bodies need explicit initial data", ctx.mark_of(doc, "initial"))
        else:
            ctx.check_keys(sec, {"r", "rdot", "phi", "phidot"}, "initial")
            for key in ("r", "rdot", "phi", "phidot"):
                if key not in sec:
                    ctx.error(f"initial needs {key!r} for an affine body", sec.mark)
            state = ctx.wrap(sec, "phi", lambda: ab.AffineBodyState(
                ctx.vector(sec, "r", n, params), ctx.vector(sec, "rdot", n, params),
                ctx.matrix(sec, "phi", n, params, allow_diagonal=False),
                ctx.matrix(sec, "phidot", n, params, allow_diagonal=False)))
        det0 = float(np.linalg.det(state.phi)) if variant is ab.ConstraintVariant.ISOCHORIC else None
        C = ab.generic_constraints(model, variant, det0)
        case.constraint_sets = {} if C is None else {variant.value: C}
        case.default_constraints = list(case.constraint_sets)
        case.dissipation = ab.generic_force(model)
        case.affine = (model, variant, state)
        case.q0, case.v0 = state.to_generic()
        return case.q0, case.v0, mu0

    k = case.system.dimension
    if use_default:
        if case.name == "natural":
            ctx.error("natural systems need explicit initial q and v", ctx.mark_of(doc, "initial"))
        return case.q0.copy(), case.v0.copy(), mu0
    ctx.check_keys(sec, {"q", "v", "mu0"}, "initial")
    for key in ("q", "v"):
        if key not in sec:
            ctx.error(f"initial needs {key!r}", sec.mark)
    return ctx.vector(sec, "q", k, params), ctx.vector(sec, "v", k, params), mu0


def _integrator(ctx, doc):
    sec = ctx.section(doc, "integrator", required=False) or MarkedDict()
    allowed = {"h", "t_end", "method", "baumgarte", "alpha", "beta", "projection", "projection_tol",
               "admission_tol", "max_projection_iter"}
    ctx.check_keys(sec, allowed, "integrator")
    t_end = ctx.number(sec, "t_end", default=10.0)
    kwargs = {}
    for key in ("h", "alpha", "beta", "projection_tol", "admission_tol"):
        if key in sec:
            kwargs[key] = ctx.number(sec, key)
    for key in ("baumgarte", "projection"):
        if key in sec:
            if not isinstance(sec[key], bool):
                ctx.error(f"{key!r} must be true or false", ctx.mark_of(sec, key))
            kwargs[key] = sec[key]
    if "method" in sec:
        kwargs["method"] = str(sec["method"]).lower()
    if "max_projection_iter" in sec:
        kwargs["max_projection_iter"] = int(ctx.number(sec, "max_projection_iter"))
    config = ctx.wrap(sec, "h", lambda: IntegratorConfig(**kwargs))
    if not t_end > 0:
        ctx.error("t_end must be positive", ctx.mark_of(sec, "t_end"))
    return t_end, config


def _output(ctx, doc):
    sec = ctx.section(doc, "output", required=False) or MarkedDict()
    ctx.check_keys(sec, {"stride", "trajectory", "summary"}, "output")
    out = {"trajectory": str(sec.get("trajectory", "trajectory.csv")),
           "summary": str(sec.get("summary", "summary.yaml"))}
    for key in ("trajectory", "summary"):
        if Path(out[key]).name != out[key]:
            ctx.error(f"output.{key} must be a bare file name", ctx.mark_of(sec, key))
    if "stride" in sec:
        stride = sec["stride"]
        if not isinstance(stride, int) or isinstance(stride, bool) or stride < 1:
            ctx.error("output.stride must be a positive integer", ctx.mark_of(sec, "stride"))
        out["stride"] = stride
    return out


__all__ = ["ScenarioError", "ScenarioSpec", "BlockSpec", "load", "loads", "ExpressionError"]
