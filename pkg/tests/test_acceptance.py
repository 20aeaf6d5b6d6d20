"""Acceptance suite: one marked test group per criterion, plus golden summaries.

Run ``pytest tests/test_acceptance.py -v``; the terminal summary lists
PASS/FAIL for every criterion. ``REGEN_GOLDEN=1`` rewrites the golden
summaries under scenarios/golden/.
"""

from __future__ import annotations

import csv
import dataclasses
import os

import numpy as np
import pytest
import yaml

from conmech import affine_body as ab
from conmech import library, runner, solver
from conmech.affine_body import ConstraintVariant
from conmech.reactions import pfaffian_vakonomic_reaction, vakonomic_reaction
from conmech.constraints import PfaffianConstraints, pfaffian_as_velocity

from conftest import AFFINE_VARIANTS, SCENARIO_DIR, max_abs
from oracles import free_rigid_body, pendulum_angle, rigid_principal_moments

criterion = pytest.mark.criterion
CONSTRAINED = ("pendulum_circle", "free_particle", "knife_edge", "charged_particle_uniform_field",
               "affine_rigid", "affine_isochoric", "affine_conformal", "affine_rotationfree")


def _ideality_bound(rec):
    return 1e-9 * (1.0 + rec.r_norm * np.linalg.norm(rec.v, axis=1))


@criterion(1, "reaction power of ideal constraints vanishes (pendulum, affine rigid)")
@pytest.mark.parametrize("name", ["pendulum_circle", "affine_rigid"])
def test_c01_ideal_reaction_power(runs, name):
    rec = runs.record(name)
    assert rec.t[-1] == pytest.approx(10.0)
    assert np.all(np.abs(rec.r_power) <= _ideality_bound(rec))


@criterion(2, "multiplier method equals parametric reduction on the pendulum")
def test_c02_multiplier_vs_reduction(runs):
    mult = runs.record("pendulum_circle")
    red = runs.record("pendulum_circle", "parametric")
    np.testing.assert_allclose(mult.t, red.t, atol=1e-12)
    assert max_abs(mult.q - red.q) <= 1e-6


@criterion(2, "multiplier method equals parametric reduction on the pendulum")
def test_c02_multiplier_vs_angle_oracle(runs):
    mult = runs.record("pendulum_circle")
    p = runs.spec("pendulum_circle").case.params
    _, pts = pendulum_angle(p["theta0"], p["omega0"], p["gravity"], p["length"], 10.0, 1e-3, stride=10)
    assert max_abs(mult.q - pts) <= 1e-6


@criterion(3, "straight lines solve the reaction-free equations; rotation does not")
def test_c03_free_line_is_special_solution(runs):
    spec = runs.spec("free_particle")
    rec = runs.record("free_particle")
    rep = solver.check_procedure1(spec.case.system, None, rec, [spec.case.constraint_sets["line"]])
    assert rep.max_el_defect <= 1e-10
    assert rep.max_constraint_defect <= 1e-10
    assert rep.is_special_solution


@criterion(3, "straight lines solve the reaction-free equations; rotation does not")
def test_c03_rotating_rigid_defect_is_reaction(runs):
    spec = runs.spec("affine_rigid")
    rec = runs.record("affine_rigid")
    rep = solver.check_procedure1(spec.case.system, spec.case.dissipation, rec, [])
    assert np.min(rep.el_defect) > 1e-2
    assert max_abs(rep.el_defect - rec.r_norm) <= 1e-8
    assert max_abs(rep.el_residual - rec.reaction) <= 1e-8
    assert not rep.is_special_solution


def _curl_form(omega, domega, q, v, mu, mudot):
    """R_i = mu^a (d_i omega_aj - d_j omega_ai) v^j - mudot^a omega_ai, written out by index."""
    W, dW = omega(q), domega(q)
    m, k = W.shape
    R = np.zeros(k)
    for a in range(m):
        for i in range(k):
            R[i] -= mudot[a] * W[a, i]
            for j in range(k):
                R[i] += mu[a] * (dW[a, j, i] - dW[a, i, j]) * v[j]
    return R


def _pfaffian_examples():
    def w1(q):
        return np.array([[np.sin(q[2]), -np.cos(q[2]), 0.0], [q[1], q[0] ** 2, 1.0]])

    def dw1(q):
        d = np.zeros((2, 3, 3))
        d[0, 0, 2], d[0, 1, 2] = np.cos(q[2]), np.sin(q[2])
        d[1, 0, 1], d[1, 1, 0] = 1.0, 2.0 * q[0]
        return d

    def w2(q):
        return np.array([[-q[1], 0.0, 1.0, np.exp(q[3])]])

    def dw2(q):
        d = np.zeros((1, 3 + 1, 3 + 1))
        d[0, 0, 1] = -1.0
        d[0, 3, 3] = np.exp(q[3])
        return d

    return [(w1, dw1, 2, 3), (w2, dw2, 1, 4)]


@criterion(4, "vakonomic reaction reduces to the curl form on Pfaffian constraints")
@pytest.mark.parametrize("example", range(2))
def test_c04_vakonomic_specialization(example):
    omega, domega, m, k = _pfaffian_examples()[example]
    P = PfaffianConstraints(m, k, omega, None, domega)
    lifted = pfaffian_as_velocity(P)
    rng = np.random.default_rng(20240 + example)
    worst = 0.0
    for _ in range(1000):
        q, v, a = rng.normal(size=(3, k))
        mu, mudot = rng.normal(size=(2, m))
        oracle = _curl_form(omega, domega, q, v, mu, mudot)
        scale = 1.0 + np.max(np.abs(oracle))
        worst = max(worst, max_abs(vakonomic_reaction(lifted, q, v, a, mu, mudot) - oracle) / scale,
                    max_abs(pfaffian_vakonomic_reaction(P, q, v, mu, mudot) - oracle) / scale)
    assert worst <= 1e-12


@criterion(5, "d'Alembert and vakonomic knife-edge motions separate")
def test_c05_knife_divergence(runs, tmp_path):
    rep = runner.compare(runs.spec("knife_edge"), "ideal", "vakonomic", tmp_path)
    with open(tmp_path / "divergence.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert float(rows[-1]["t"]) == pytest.approx(5.0)
    assert float(rows[-1]["q_div"]) > 1e-2
    assert rep["final_divergence"] == pytest.approx(float(rows[-1]["q_div"]), rel=1e-15)
    assert {"RA1", "RB3", "RA_power", "RB_power"} <= set(rows[0])


@criterion(6, "projection keeps constraint residuals small; unstabilized drift grows")
@pytest.mark.parametrize("name", CONSTRAINED)
def test_c06_residuals_with_projection(runs, name):
    rec = runs.record(name)
    assert np.max(rec.c_res) <= 1e-8
    assert np.max(rec.v_res) <= 1e-8


@criterion(6, "projection keeps constraint residuals small; unstabilized drift grows")
@pytest.mark.parametrize("variant", ["rigid", "isochoric", "conformal", "rotationfree"])
def test_c06_specialized_residuals(runs, variant):
    model, var, state = runs.affine_case(variant).affine
    tr = runs.specialized(variant)
    geo = ab.VariantGeometry(model, var, det0=float(np.linalg.det(state.phi)))
    for i in range(len(tr.t)):
        if geo.holonomic:
            assert max_abs(geo.config(tr.phi[i])) <= 1e-8
        assert max_abs(geo.velocity(tr.phi[i], tr.phidot[i])) <= 1e-8


@criterion(6, "projection keeps constraint residuals small; unstabilized drift grows")
def test_c06_unstabilized_drift_grows(runs):
    scen = runs.spec("pendulum_circle").build()
    scen.config = solver.IntegratorConfig(h=1e-2, projection=False, baumgarte=False)
    scen.t_end = 10.0
    rec = solver.simulate(scen)
    drift = rec.c_res[1:]
    assert np.all(np.diff(drift) > 0)
    assert drift[-1] > 1e-6


@criterion(7, "energy is conserved by conservative ideal-constraint runs")
@pytest.mark.parametrize("name", ["pendulum_circle", "affine_rigid", "charged_particle_uniform_field"])
def test_c07_energy(runs, name):
    rec = runs.record(name)
    assert rec.t[-1] == pytest.approx(10.0)
    assert rec.summary()["energy_drift_rel"] <= 1e-6


@criterion(8, "free affine motion is linear in time")
def test_c08_free_affine_motion(runs):
    model, var, state = runs.affine_case("free").affine
    assert model.potential is None and model.force_law is None
    cfg = solver.IntegratorConfig(h=1e-3)
    rec = solver.simulate(ab.to_generic_scenario(model, var, state, t_end=1.0, config=cfg))
    n = model.n
    exact = state.phi.ravel() + rec.t[:, None] * state.phidot.ravel()
    assert max_abs(rec.q[:, n:] - exact) <= 1e-9
    tr = ab.integrate_variant(model, state, var, 1.0, 1e-3)
    assert max_abs(tr.phi - (state.phi + tr.t[:, None, None] * state.phidot)) <= 1e-9


def _antisymmetric_kick(state):
    n = state.n
    return np.zeros(n), np.array([[0.0, 0.3, -0.1], [-0.3, 0.0, 0.2], [0.1, -0.2, 0.0]])[:n, :n]


@criterion(9, "spin is conserved under symmetric dipoles and driven by the antisymmetric part")
def test_c09_spin_law():
    case = library.affine_free(stiffness=1.0)
    model, var, state = case.affine
    tr = ab.integrate_variant(model, state, var, 10.0, 1e-3, stride=10)
    S = np.array([ab.momenta(model, tr.state(i))[2] for i in range(len(tr.t))])
    assert max_abs(tr.N - np.transpose(tr.N, (0, 2, 1))) <= 1e-12
    assert max_abs(S - S[0]) <= 1e-6

    driven = dataclasses.replace(model, force_law=_antisymmetric_kick)
    tr = ab.integrate_variant(driven, state, var, 10.0, 1e-3, stride=100)
    for i in range(len(tr.t)):
        d = ab.balance_laws(driven, tr.state(i), var, fd_step=1e-4)
        assert d["spin"] <= 1e-6
    S = np.array([ab.momenta(driven, tr.state(i))[2] for i in range(len(tr.t))])
    assert max_abs(S[-1] - S[0]) > 1.0


@criterion(10, "variant constraints hold and reactions have the mandated structure")
def test_c10_rigid(runs):
    model, _, _ = runs.affine_case("rigid").affine
    tr = runs.specialized("rigid")
    g, eta = model.g, model.eta
    for phi, NR in zip(tr.phi, tr.N_R):
        assert max_abs(phi.T @ g @ phi - eta) <= 1e-8
        assert max_abs(NR - NR.T) <= 1e-10


@criterion(10, "variant constraints hold and reactions have the mandated structure")
def test_c10_isochoric(runs):
    model, var, state = runs.affine_case("isochoric").affine
    tr = runs.specialized("isochoric")
    det0 = np.linalg.det(state.phi)
    assert max_abs(np.linalg.det(tr.phi) - det0) <= 1e-8
    assert max_abs(tr.N_R) > 1e-3
    for i in range(0, len(tr.t), 50):
        NR = tr.N_R[i]
        lam = ab.isochoric_multiplier(model, NR)
        assert max_abs(NR - lam * model.g_inv) <= 1e-10
        # the generic solver's multiplier of det(phi) = const gives N_R = lambda_gen det(phi) g^-1
        scen = ab.to_generic_scenario(model, var, tr.state(i))
        cl = solver.assemble_closure(scen, scen.initial_state(), stabilize=False)
        assert abs(lam - cl.lam[0] * np.linalg.det(tr.phi[i])) <= 1e-10 * max(1.0, abs(lam))


@criterion(10, "variant constraints hold and reactions have the mandated structure")
def test_c10_rotationfree(runs):
    model, _, _ = runs.affine_case("rotationfree").affine
    tr = runs.specialized("rotationfree")
    g = model.g
    assert max_abs(tr.N_R) > 1e-3
    for phi, phidot, NR in zip(tr.phi, tr.phidot, tr.N_R):
        gO = g @ phidot @ np.linalg.inv(phi)
        assert max_abs(gO - gO.T) <= 1e-8
        assert max_abs(NR + NR.T) <= 1e-10


@criterion(10, "variant constraints hold and reactions have the mandated structure")
def test_c10_conformal(runs):
    model, var, _ = runs.affine_case("conformal").affine
    tr = runs.specialized("conformal")
    for i in range(len(tr.t)):
        assert ab.conformal_scale(model, tr.phi[i]) > 0
        d = ab.effective_equation_defects(model, tr.state(i), var, tr.phiddot[i], tr.N[i])
        assert d["trace"] <= 1e-9
        assert d["skew"] <= 1e-9


@criterion(11, "generic solver and specialized affine equations agree for every variant")
@pytest.mark.parametrize("variant", AFFINE_VARIANTS)
def test_c11_generic_vs_specialized(runs, variant):
    gen = runs.record(f"affine_{variant}")
    spec = runs.specialized(variant)
    np.testing.assert_allclose(gen.t, spec.t, atol=1e-12)
    assert gen.t[-1] == pytest.approx(10.0)
    assert max_abs(gen.q - spec.generic_q()) <= 1e-6


@criterion(12, "rigid variant matches a rotation-group reference integrator")
def test_c12_rigid_body_oracle(runs):
    model, _, state = runs.affine_case("rigid").affine
    assert model.potential is None and model.force_law is None
    Omega = state.phidot @ np.linalg.inv(state.phi)
    w = np.array([Omega[2, 1], Omega[0, 2], Omega[1, 0]])
    principal = rigid_principal_moments(np.diag(model.inertia))
    t_ref, R_ref = free_rigid_body(state.phi, w, principal, 10.0, h=1e-5, stride=1000)
    tr = runs.specialized("rigid")
    np.testing.assert_allclose(tr.t, t_ref, atol=1e-9)
    assert max_abs(tr.phi - R_ref) <= 1e-5
    S = np.array([ab.momenta(model, tr.state(i))[2] for i in range(len(tr.t))])
    assert max_abs(S - S[0]) <= 1e-8
    # the generic-solver run of the same body
    gen = runs.record("affine_rigid")
    n = model.n
    S_gen = np.array([ab.momenta(model, ab.AffineBodyState.from_generic(n, q, v))[2] for q, v in zip(gen.q, gen.v)])
    assert max_abs(S_gen - S[0]) <= 1e-8


def _final_state(spec, h, t_end):
    scen = spec.build()
    scen.config = dataclasses.replace(spec.config, h=h, stride=10 ** 9)
    scen.t_end = t_end
    rec = solver.simulate(scen)
    assert rec.t[-1] == pytest.approx(t_end)
    return np.concatenate([rec.q[-1], rec.v[-1]])


@criterion(13, "integrator error shrinks at fourth order on the pendulum")
def test_c13_order(runs):
    spec = runs.spec("pendulum_circle")
    ref = _final_state(spec, 1e-5, 1.0)
    e_coarse = np.linalg.norm(_final_state(spec, 2e-3, 1.0) - ref)
    e_fine = np.linalg.norm(_final_state(spec, 1e-3, 1.0) - ref)
    assert e_coarse / e_fine >= 12.0


@criterion(14, "co-moving balances and the metric form of the affine spin law")
@pytest.mark.parametrize("variant", AFFINE_VARIANTS)
def test_c14_comoving_balances(runs, variant):
    model, var, _ = runs.affine_case(variant).affine
    tr = runs.specialized(variant)
    keys = ("comoving_momentum", "comoving_spin", "comoving_velocity", "comoving_gyration", "affine_spin_metric")
    for i in range(0, len(tr.t), 100):
        d = ab.balance_laws(model, tr.state(i), var, fd_step=1e-4)
        for key in keys:
            assert d[key] <= 1e-6, (key, tr.t[i], d[key])


# ---------------------------------------------------------------- golden summaries

GOLDEN_DIR = SCENARIO_DIR / "golden"
SHIPPED = sorted(p.stem for p in SCENARIO_DIR.glob("*.yaml"))


def _compare_metrics(got, want, path=""):
    if isinstance(want, dict):
        assert set(got) == set(want), path
        for key in want:
            _compare_metrics(got[key], want[key], f"{path}.{key}")
    elif isinstance(want, list):
        assert len(got) == len(want), path
        for i, (a, b) in enumerate(zip(got, want)):
            _compare_metrics(a, b, f"{path}[{i}]")
    elif isinstance(want, int) and not isinstance(want, bool):
        assert got == want, path
    else:
        assert got == pytest.approx(want, rel=1e-6, abs=1e-8), path


@pytest.mark.parametrize("name", SHIPPED)
def test_golden_summary(runs, name):
    got = {"scenario": name, "metrics": runner.metrics(runs.record(name))}
    path = GOLDEN_DIR / f"{name}.yaml"
    if os.environ.get("REGEN_GOLDEN") == "1":
        GOLDEN_DIR.mkdir(exist_ok=True)
        path.write_text(runner.dump_yaml(got))
    assert path.exists(), f"missing golden summary {path}; run with REGEN_GOLDEN=1"
    want = yaml.safe_load(path.read_text())
    _compare_metrics(got, want)
