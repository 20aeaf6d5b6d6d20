import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conmech import library, solver
from conmech.constraints import (
    HolonomicConstraints,
    PfaffianConstraints,
    VelocityConstraints,
    as_pfaffian,
    check_rank,
    differentiated_form,
    involutivity_defect,
    lift_holonomic_to_pfaffian,
    residual,
    velocity_residual,
)
from conmech.errors import ConfigurationError, DegenerateConstraintError, UnsupportedDiagnosticError


def unit_circle(with_derivatives=True):
    if with_derivatives:
        return HolonomicConstraints(1, 2, lambda q: np.array([q @ q - 1.0]), lambda q: 2.0 * q[None, :],
                                    lambda q: 2.0 * np.eye(2)[None])
    return HolonomicConstraints(1, 2, lambda q: np.array([q @ q - 1.0]))


def knife():
    return library.knife_edge().constraint_sets["knife"]


def contact_form():
    # dz - y dx
    return PfaffianConstraints(1, 3, lambda q: np.array([[-q[1], 0.0, 1.0]]))


def test_counts_validated():
    with pytest.raises(ConfigurationError):
        HolonomicConstraints(3, 3, lambda q: q)
    with pytest.raises(ConfigurationError):
        PfaffianConstraints(0, 2, lambda q: np.zeros((0, 2)))


def test_lift_of_circle():
    P = lift_holonomic_to_pfaffian(unit_circle())
    np.testing.assert_array_equal(P.omega([0.6, 0.8]), [[1.2, 1.6]])
    assert P.homogeneous
    np.testing.assert_array_equal(P.inhomogeneity([0.6, 0.8]), [0.0])


def test_lift_of_linear_constraints():
    C = np.array([[1.0, 2.0, 0.0], [0.0, -1.0, 3.0]])
    H = HolonomicConstraints(2, 3, lambda q: C @ q)
    np.testing.assert_allclose(lift_holonomic_to_pfaffian(H).omega([5.0, -2.0, 1.0]), C, atol=1e-9)
    assert involutivity_defect(lift_holonomic_to_pfaffian(H), [5.0, -2.0, 1.0]) <= 1e-6


def test_residual_examples():
    C = unit_circle()
    assert residual(C, [1.0, 0.0])[0] == 0.0
    assert residual(C, [2.0, 0.0])[0] == 3.0
    assert residual(knife(), [0.3, -0.2, 0.0], [0.0, 1.0, 0.0])[0] == -1.0


def test_velocity_family_residual():
    C = VelocityConstraints(1, 2, lambda q, v: np.array([0.5 * (v @ v - 4.0)]))
    assert residual(C, [0.0, 0.0], [2.0, 0.0])[0] == 0.0
    assert velocity_residual(C, [0.0, 0.0], [0.0, 1.0])[0] == -1.5
    with pytest.raises(ConfigurationError):
        as_pfaffian(C)


def test_differentiated_form_of_circle():
    A, b = differentiated_form(unit_circle(), [1.0, 0.0], [0.0, 1.0])
    np.testing.assert_array_equal(A, [[2.0, 0.0]])
    np.testing.assert_array_equal(b, [-2.0])


def test_differentiated_form_circle_from_finite_differences():
    A, b = differentiated_form(unit_circle(with_derivatives=False), [1.0, 0.0], [0.0, 1.0])
    np.testing.assert_allclose(A, [[2.0, 0.0]], atol=1e-8)
    np.testing.assert_allclose(b, [-2.0], atol=1e-6)


def test_differentiated_form_of_linear_holonomic():
    c = np.array([1.0, -2.0, 0.5])
    A, b = differentiated_form(HolonomicConstraints(1, 3, lambda q: np.array([c @ q]), lambda q: c[None, :],
                                                    lambda q: np.zeros((1, 3, 3))), np.ones(3), [2.0, 1.0, 0.0])
    np.testing.assert_array_equal(A, [c])
    np.testing.assert_array_equal(b, [0.0])


@pytest.mark.parametrize("wz", [0.5, -1.3])
def test_differentiated_form_of_knife(wz):
    A, b = differentiated_form(knife(), [0.0, 0.0, 0.0], [1.0, 0.0, wz])
    np.testing.assert_allclose(A, [[0.0, -1.0, 0.0]], atol=0)
    assert b[0] == pytest.approx(-wz, abs=1e-15)


def test_differentiated_form_rank_check():
    F = lambda q: np.array([q @ q - 1.0, 2.0 * (q @ q - 1.0)])
    with pytest.raises(DegenerateConstraintError) as info:
        differentiated_form(HolonomicConstraints(2, 3, F), [1.0, 0.0, 0.0], [0.0, 1.0, 0.0])
    assert info.value.row == 1


def test_check_rank_names_row():
    with pytest.raises(DegenerateConstraintError, match="b"):
        check_rank(np.array([[1.0, 0.0], [2.0, 0.0]]), ["a", "b"])
    check_rank(np.eye(2))


def test_involutivity_of_lifted_holonomic():
    assert involutivity_defect(lift_holonomic_to_pfaffian(unit_circle()), [0.6, 0.8]) <= 1e-6
    assert involutivity_defect(unit_circle(), [0.6, 0.8]) <= 1e-6


def test_knife_is_nonholonomic():
    assert involutivity_defect(knife(), [0.3, -0.4, 0.7]) > 0.1


def test_contact_form_is_nonholonomic():
    assert involutivity_defect(contact_form(), [0.0, 0.0, 0.0]) > 0.1


def test_involutivity_rejects_inhomogeneous_and_velocity_sets():
    P = PfaffianConstraints(1, 2, lambda q: np.array([[1.0, 0.0]]), lambda q: np.array([1.0]))
    with pytest.raises(UnsupportedDiagnosticError):
        involutivity_defect(P, [0.0, 0.0])
    with pytest.raises(UnsupportedDiagnosticError):
        involutivity_defect(VelocityConstraints(1, 2, lambda q, v: v[:1]), [0.0, 0.0])


def test_finite_difference_omega_derivative_matches_analytic():
    q = np.array([0.2, 0.1, 0.9])
    exact = knife().omega_derivative(q)
    fd = PfaffianConstraints(1, 3, knife().omega).omega_derivative(q)
    np.testing.assert_allclose(fd, exact, atol=1e-8)


coords = st.floats(-1.5, 1.5, allow_nan=False)


def _surface():
    # two independent holonomic constraints in R^4
    def F(q):
        return np.array([q[0] ** 2 + np.sin(q[1]) - q[3], q[2] * q[0] + np.exp(0.3 * q[3])])
    return HolonomicConstraints(2, 4, F)


@settings(max_examples=40, deadline=None)
@given(st.lists(coords, min_size=4, max_size=4), st.lists(coords, min_size=4, max_size=4))
def test_lifted_residual_is_time_derivative(q, v):
    H = _surface()
    q, v = np.array(q), np.array(v)
    P = lift_holonomic_to_pfaffian(H)
    dt = 1e-5
    # curve q(t) = q + t v + t^2 w through (q, v)
    w = np.array([0.3, -0.2, 0.1, 0.4])
    curve = lambda t: q + t * v + t * t * w
    ddt = (H.value(curve(dt)) - H.value(curve(-dt))) / (2 * dt)
    got = residual(P, q, v)
    assert np.all(np.abs(got - ddt) <= 1e-5 * np.maximum(1.0, np.abs(ddt)))


@settings(max_examples=25, deadline=None)
@given(coords, coords, coords)
def test_involutivity_invariant_under_rescaling(x, y, th):
    q = np.array([x, y, th])
    K = knife()
    K2 = PfaffianConstraints(1, 3, lambda q: 2.0 * K.omega(q), None, lambda q: 2.0 * K.omega_derivative(q))
    assert abs(involutivity_defect(K, q) - involutivity_defect(K2, q)) <= 1e-6
    H = _surface()
    H2 = HolonomicConstraints(2, 4, lambda p: 2.0 * H.value(p))
    p = np.array([x, y, th, 0.1])
    assert abs(involutivity_defect(H, p) - involutivity_defect(H2, p)) <= 1e-6


@pytest.mark.parametrize("name,block", [("pendulum_circle", "circle"), ("knife_edge", "knife")])
def test_differentiated_form_holds_along_solver_runs(name, block):
    case = library.build(name)
    C = case.constraint_sets[block]
    scen = solver.Scenario(case.system, case.q0, case.v0, [solver.ConstraintBlock(C, "ideal")], t_end=2.0,
                           config=solver.IntegratorConfig(stride=20))
    rec = solver.simulate(scen)
    for q, v, a in zip(rec.q, rec.v, rec.a):
        A, b = differentiated_form(C, q, v)
        assert np.max(np.abs(A @ a - b)) <= 1e-7
