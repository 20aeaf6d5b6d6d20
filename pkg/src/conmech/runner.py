"""Run, compare and validate loaded scenarios; trajectory and summary writers."""

from __future__ import annotations

import io
import os
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import yaml

from .constraints import (
    HolonomicConstraints,
    PfaffianConstraints,
    VelocityConstraints,
    as_pfaffian,
    check_rank,
    involutivity_defect,
    residual,
    velocity_gradient,
    velocity_residual,
)
from .errors import ConfigurationError
from .reactions import ReactionModel
from .scenario import ScenarioSpec
from .solver import Scenario, TrajectoryRecord, check_admission, reduce_parametric, simulate

PARAMETRIC = "parametric"
MODEL_NAMES = ("ideal", "appell_chetaev", "vakonomic", PARAMETRIC)
INTEGRABLE_TOL = 1e-6


def _fmt(x) -> str:
    return format(float(x), ".17g")


def trajectory_columns(rec: TrajectoryRecord) -> List[str]:
    k = rec.q.shape[1]
    cols = ["t"] + [f"q{i + 1}" for i in range(k)] + [f"v{i + 1}" for i in range(k)]
    cols += [f"lam{i + 1}" for i in range(rec.lam.shape[1])]
    cols += [f"mu{i + 1}" for i in range(rec.mu.shape[1])]
    cols += [f"mudot{i + 1}" for i in range(rec.mudot.shape[1])]
    return cols + ["E", "c_res", "r_power"]


def trajectory_text(rec: TrajectoryRecord) -> str:
    buf = io.StringIO()
    buf.write(",".join(trajectory_columns(rec)) + "\n")
    for i in range(len(rec)):
        row = [rec.t[i], *rec.q[i], *rec.v[i], *rec.lam[i], *rec.mu[i], *rec.mudot[i],
               rec.energy[i], rec.c_res[i], rec.r_power[i]]
        buf.write(",".join(_fmt(x) for x in row) + "\n")
    return buf.getvalue()


def metrics(rec: TrajectoryRecord) -> Dict[str, object]:
    out = {key: (float(val) if not isinstance(val, int) else val) for key, val in rec.summary().items()}
    out["final_q"] = [float(x) for x in rec.q[-1]]
    out["final_v"] = [float(x) for x in rec.v[-1]]
    return out


def multiplier_map(rec: TrajectoryRecord) -> Dict[str, str]:
    out = {f"lam{i + 1}": lbl for i, lbl in enumerate(rec.lam_labels)}
    out.update({f"mu{i + 1}": lbl for i, lbl in enumerate(rec.mu_labels)})
    return out


# ---------------------------------------------------------------- running

def run_record(spec: ScenarioSpec, model: Optional[str] = None) -> TrajectoryRecord:
    """Simulate the scenario; ``model`` overrides the reaction model of every block ('parametric' reduces)."""
    if model is not None and str(model).lower() == PARAMETRIC:
        return run_parametric(spec)
    return simulate(spec.build(model))


def run_parametric(spec: ScenarioSpec) -> TrajectoryRecord:
    """Integrate the reduced (irredundant-coordinate) system and lift the trace back to q."""
    case = spec.case
    if case.embedding is None or case.chart is None:
        raise ConfigurationError(f"system {case.name!r} provides no parametrization for the parametric path")
    full = spec.build()  # validates the initial state against the constrained system
    check_admission(full)
    emb = case.embedding
    reduced, D_red = reduce_parametric(case.system, case.dissipation, emb)
    y0, yd0 = case.chart(spec.q0, spec.v0)
    rec = simulate(Scenario(reduced, y0, yd0, [], D_red, spec.t_end, spec.config, spec.name + "/parametric"))

    sys = case.system
    n = len(rec)
    q = np.array([emb.map(y) for y in rec.q])
    Phis = [emb.checked_jacobian(y) for y in rec.q]
    v = np.array([P @ yd for P, yd in zip(Phis, rec.v)])
    a = np.array([P @ ydd + np.einsum("imn,m,n->i", emb.hessian(y), yd, yd)
                  for P, y, yd, ydd in zip(Phis, rec.q, rec.v, rec.a)])
    R = np.array([sys.mass_matrix(qi, vi) @ ai - sys.generalized_force(qi, vi, case.dissipation)
                  for qi, vi, ai in zip(q, v, a)])
    c_res = np.array([max([0.0] + [float(np.max(np.abs(residual(b.constraints, qi, vi)))) for b in full.constraints])
                      for qi, vi in zip(q, v)])
    v_res = np.array([max([0.0] + [float(np.max(np.abs(velocity_residual(b.constraints, qi, vi))))
                                   for b in full.constraints]) for qi, vi in zip(q, v)])
    empty = np.zeros((n, 0))
    return TrajectoryRecord(rec.t, q, v, a, empty, empty, empty, R,
                            np.array([sys.energy(qi, vi) for qi, vi in zip(q, v)]), c_res, v_res,
                            np.einsum("ij,ij->i", R, v), np.linalg.norm(R, axis=1))


def _atomic_write(directory: Path, files: Dict[str, str]) -> None:
    """Write all files or none: stage in a temporary directory, then move into place."""
    directory.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory(dir=directory, prefix=".staging-") as tmp:
        for name, text in files.items():
            (Path(tmp) / name).write_text(text)
        for name in files:
            os.replace(Path(tmp) / name, directory / name)


def _models_of(spec: ScenarioSpec, model: Optional[str]):
    if model is not None:
        return str(model)
    return {b.name: b.model.value for b in spec.blocks}


def summary_document(spec: ScenarioSpec, rec: TrajectoryRecord, wall: float, model=None) -> dict:
    return {
        "scenario": spec.name,
        "source": Path(spec.source).name,
        "reaction_models": _models_of(spec, model),
        "multipliers": multiplier_map(rec),
        "metrics": metrics(rec),
        "wall_time_s": float(wall),
        "config": spec.echo(),
    }


def dump_yaml(doc) -> str:
    return yaml.safe_dump(doc, sort_keys=False, default_flow_style=None, width=120)


def run(spec: ScenarioSpec, out_dir, model: Optional[str] = None) -> dict:
    t0 = time.perf_counter()
    rec = run_record(spec, model)
    wall = time.perf_counter() - t0
    if len(rec) == 0:
        raise ConfigurationError("simulation produced no samples")
    doc = summary_document(spec, rec, wall, model)
    _atomic_write(Path(out_dir), {spec.output["trajectory"]: trajectory_text(rec), spec.output["summary"]: dump_yaml(doc)})
    return doc


# ---------------------------------------------------------------- comparison

@dataclass
class Comparison:
    model_a: str
    model_b: str
    a: TrajectoryRecord
    b: TrajectoryRecord

    @property
    def divergence(self) -> np.ndarray:
        return np.linalg.norm(self.a.q - self.b.q, axis=1)

    def table(self) -> str:
        k = self.a.q.shape[1]
        cols = (["t", "q_div"] + [f"RA{i + 1}" for i in range(k)] + [f"RB{i + 1}" for i in range(k)]
                + ["RA_power", "RB_power"])
        buf = io.StringIO()
        buf.write(",".join(cols) + "\n")
        div = self.divergence
        for i in range(len(self.a)):
            row = [self.a.t[i], div[i], *self.a.reaction[i], *self.b.reaction[i], self.a.r_power[i], self.b.r_power[i]]
            buf.write(",".join(_fmt(x) for x in row) + "\n")
        return buf.getvalue()

    def report(self) -> dict:
        div = self.divergence
        return {
            "model_a": self.model_a,
            "model_b": self.model_b,
            "final_divergence": float(div[-1]),
            "max_divergence": float(np.max(div)),
            "metrics_a": metrics(self.a),
            "metrics_b": metrics(self.b),
        }


def compare_records(spec: ScenarioSpec, model_a: str, model_b: str) -> Comparison:
    for m in (model_a, model_b):
        if str(m).lower() != PARAMETRIC:
            ReactionModel.parse(m)
    a = run_record(spec, model_a)
    b = run_record(spec, model_b)
    if len(a) != len(b) or np.max(np.abs(a.t - b.t)) > 1e-12:
        raise ConfigurationError("the two runs sampled different times")
    return Comparison(str(model_a), str(model_b), a, b)


def compare(spec: ScenarioSpec, model_a: str, model_b: str, out_dir) -> dict:
    cmp = compare_records(spec, model_a, model_b)
    rep = cmp.report()
    rep["scenario"] = spec.name
    rep["config"] = spec.echo()
    _atomic_write(Path(out_dir), {
        "divergence.csv": cmp.table(),
        "trajectory_a.csv": trajectory_text(cmp.a),
        "trajectory_b.csv": trajectory_text(cmp.b),
        "compare.yaml": dump_yaml(rep),
    })
    return rep


# ---------------------------------------------------------------- validation

def classify(C, q) -> str:
    if isinstance(C, HolonomicConstraints):
        return "holonomic"
    if isinstance(C, PfaffianConstraints):
        if not C.homogeneous:
            return "pfaffian (inhomogeneous; involutivity not evaluated)"
        d = involutivity_defect(C, q)
        if d <= INTEGRABLE_TOL:
            return f"integrable (defect {d:.3g} <= {INTEGRABLE_TOL:g})"
        return f"nonholonomic (defect ~ {d:.6g})"
    return "velocity-level (nonlinear in v)"


def validate(spec: ScenarioSpec) -> List[str]:
    """Static checks at the initial state. Raises on inadmissible or degenerate data."""
    scen = spec.build()
    lines = [f"scenario: {spec.name}", f"coordinates: {scen.system.dimension}",
             f"constraint blocks: {len(scen.constraints)}"]
    check_admission(scen)
    if scen.constraints:
        A = np.vstack([velocity_gradient(b.constraints, scen.q0, scen.v0) for b in scen.constraints])
        check_rank(A, scen.row_labels)
    for blk in scen.constraints:
        C = blk.constraints
        lines.append(f"  {blk.name}: {C.family}, m={C.m}, reaction={blk.model.value}: {classify(C, scen.q0)}")
    lines.append("admission: ok (initial state satisfies all constraints)")
    lines.append("rank: ok")
    return lines
