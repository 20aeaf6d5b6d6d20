import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conmech import library, solver
from conmech.dynamics import (
    DissipativeForce,
    LagrangianSystem,
    NaturalSystemSpec,
    build_natural_lagrangian,
    euler_lagrange_residual,
    lorentz_two_form,
    unconstrained_accel,
)
from conmech.errors import ConfigurationError, DynamicsError
from conmech.manifold import MetricField


def magnetic_spec(B=1.0):
    return NaturalSystemSpec(MetricField.constant(np.eye(2)),
                             covector=lambda q: np.array([-0.5 * B * q[1], 0.5 * B * q[0]]),
                             covector_jacobian=lambda q: np.array([[0.0, -0.5 * B], [0.5 * B, 0.0]]))


def test_pure_kinetic_lagrangian():
    sys = build_natural_lagrangian(NaturalSystemSpec(MetricField.constant(np.eye(2))))
    assert sys.lagrangian([0.0, 0.0], [3.0, 4.0]) == 12.5


def test_magnetic_lagrangian_value():
    sys = build_natural_lagrangian(magnetic_spec())
    # kinetic 1/2 |v|^2 = 0.5, covector term A.v = x/2 = 0.5
    assert sys.lagrangian([1.0, 0.0], [0.0, 1.0]) == pytest.approx(1.0, abs=1e-15)
    assert sys.lagrangian([1.0, 0.0], [1.0, 0.0]) == pytest.approx(0.5, abs=1e-15)
    assert sys.lagrangian([0.0, 2.0], [1.0, 0.0]) == pytest.approx(-0.5, abs=1e-15)


def test_potential_enters_with_minus_sign():
    spec = NaturalSystemSpec(MetricField.constant(np.eye(2)), potential=lambda q: q[0],
                             potential_gradient=lambda q: np.array([1.0, 0.0]))
    assert build_natural_lagrangian(spec).lagrangian([2.5, 1.0], [0.0, 0.0]) == -2.5


def test_potential_without_gradient_rejected():
    with pytest.raises(ConfigurationError):
        NaturalSystemSpec(MetricField.constant(np.eye(1)), potential=lambda q: q[0])


def test_lorentz_two_form_uniform_field():
    np.testing.assert_array_equal(lorentz_two_form(magnetic_spec(), [0.3, 0.4]), [[0.0, 1.0], [-1.0, 0.0]])


def test_lorentz_two_form_of_constant_and_gradient_covectors():
    const = NaturalSystemSpec(MetricField.constant(np.eye(2)), covector=lambda q: np.array([1.0, 2.0]),
                              covector_jacobian=lambda q: np.zeros((2, 2)))
    assert np.all(lorentz_two_form(const, [1.0, 1.0]) == 0.0)
    # A = grad(x^2 y), Jacobian by finite differences
    grad = NaturalSystemSpec(MetricField.constant(np.eye(2)),
                             covector=lambda q: np.array([2 * q[0] * q[1], q[0] ** 2]))
    assert np.max(np.abs(lorentz_two_form(grad, [0.7, -1.2]))) <= 1e-8


def test_lorentz_two_form_requires_covector():
    with pytest.raises(ConfigurationError):
        lorentz_two_form(NaturalSystemSpec(MetricField.constant(np.eye(2))), [0.0, 0.0])


def test_free_particle_does_not_accelerate():
    sys = build_natural_lagrangian(NaturalSystemSpec(MetricField.constant(np.eye(3))))
    assert np.all(unconstrained_accel(sys, None, np.ones(3), [1.0, -2.0, 0.5]) == 0.0)


def test_magnetic_acceleration():
    sys = build_natural_lagrangian(magnetic_spec())
    np.testing.assert_allclose(unconstrained_accel(sys, None, [0.2, -0.3], [1.0, 0.0]), [0.0, -1.0], atol=1e-15)


def test_magnetic_acceleration_from_lagrangian_alone():
    # only L is given: every partial comes from finite differences
    full = build_natural_lagrangian(magnetic_spec())
    bare = LagrangianSystem(2, full.lagrangian)
    np.testing.assert_allclose(unconstrained_accel(bare, None, [0.2, -0.3], [1.0, 0.0]), [0.0, -1.0], atol=1e-6)
    assert set(bare.provenance.values()) == {"finite-difference"}


def test_linear_drag():
    sys = build_natural_lagrangian(NaturalSystemSpec(MetricField.constant(np.eye(2))))
    gamma = 0.35
    D = DissipativeForce.linear_viscous(gamma * np.eye(2))
    np.testing.assert_allclose(unconstrained_accel(sys, D, [0.0, 0.0], [1.0, 0.0]), [-gamma, 0.0], atol=1e-15)


@pytest.mark.parametrize("d", [np.array([[1.0, 2.0], [0.0, 1.0]]), -np.eye(2), np.ones((2, 3))])
def test_bad_damping_rejected(d):
    with pytest.raises(ConfigurationError):
        DissipativeForce.linear_viscous(d)


def test_singular_mass_matrix():
    sys = LagrangianSystem(2, lambda q, v: 0.5 * v[0] ** 2)
    with pytest.raises(DynamicsError) as info:
        unconstrained_accel(sys, None, [1.0, 2.0], [0.0, 0.0])
    np.testing.assert_array_equal(info.value.point, [1.0, 2.0])


def test_residual_of_free_particle_is_mass_times_acceleration():
    sys = build_natural_lagrangian(NaturalSystemSpec(MetricField.constant(np.eye(2))))
    np.testing.assert_array_equal(euler_lagrange_residual(sys, None, [0.0, 0.0], [0.0, 0.0], [1.0, 0.0]), [1.0, 0.0])


def test_pendulum_trajectory_in_free_equations_gives_reaction():
    case = library.pendulum_circle()
    scen = solver.Scenario(case.system, case.q0, case.v0,
                           [solver.ConstraintBlock(case.constraint_sets["circle"], "ideal")], t_end=1.0,
                           config=solver.IntegratorConfig(stride=50))
    rec = solver.simulate(scen)
    for q, v, a, lam in zip(rec.q, rec.v, rec.a, rec.lam):
        E = euler_lagrange_residual(case.system, None, q, v, a)
        # E = lambda dF/dq; the reaction needed to hold the motion on the circle
        np.testing.assert_allclose(E, lam[0] * 2.0 * q, atol=1e-9)
        assert np.linalg.norm(E) > 1.0


def _random_system(c):
    """Natural system with a position-dependent metric, a covector and a potential."""
    def G(q):
        return np.array([[2.0 + np.sin(c * q[0]), 0.3 * q[1]], [0.3 * q[1], 1.0 + q[0] ** 2]])

    spec = NaturalSystemSpec(MetricField(2, G),
                             potential=lambda q: c * q[0] * q[1] + np.cos(q[1]),
                             potential_gradient=lambda q: np.array([c * q[1], c * q[0] - np.sin(q[1])]),
                             covector=lambda q: np.array([q[1] ** 2, -c * q[0]]), coupling=0.7)
    return build_natural_lagrangian(spec)


finite = st.floats(-1.0, 1.0, allow_nan=False)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.1, 2.0), st.tuples(finite, finite), st.tuples(finite, finite))
def test_accel_then_residual_vanishes(c, q, v):
    sys = _random_system(c)
    D = DissipativeForce.linear_viscous([[0.5, 0.1], [0.1, 0.2]])
    a = unconstrained_accel(sys, D, q, v)
    assert np.max(np.abs(euler_lagrange_residual(sys, D, q, v, a))) <= 1e-9


def test_energy_conserved_without_dissipation():
    sys = _random_system(0.8)
    rec = solver.simulate(solver.Scenario(sys, [0.2, -0.1], [0.5, 0.3], t_end=5.0))
    assert rec.summary()["energy_drift_rel"] <= 1e-6
