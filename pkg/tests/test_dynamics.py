"""Arm dynamics: closed forms, independent oracles, and structural invariants."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from braceplan import dynamics as dyn
from braceplan import geometry as geo
from braceplan import contact as vc
from braceplan import simulate as sim


def make_model(**kw):
    defaults = dict(
        link_lengths=(1.0, 0.8),
        link_masses=(2.0, 1.5),
        torque_limits=(50.0, 50.0),
        velocity_limits=(10.0, 10.0),
        acceleration_limits=(100.0, 100.0),
        joint_angle_limits=((-6.3, 6.3), (-6.3, 6.3)),
    )
    defaults.update(kw)
    return dyn.ArmModel(**defaults)


def make_pendulum(L=1.0, m=2.0, **kw):
    defaults = dict(
        link_lengths=(L,),
        link_masses=(m,),
        torque_limits=(500.0,),
        velocity_limits=(50.0,),
        acceleration_limits=(500.0,),
        joint_angle_limits=((-10.0, 10.0),),
    )
    defaults.update(kw)
    return dyn.ArmModel(**defaults)


EMPTY_WORLD = geo.World()
NO_CONTACT = vc.ContactParams()


class TestMassMatrix:
    def test_one_link_rod_closed_form(self):
        # uniform rod pivoted at its end: M = m L^2 / 3, independent of q
        m, L = 2.0, 1.3
        model = make_pendulum(L=L, m=m)
        for q in (-1.2, 0.0, 0.4, 2.8):
            M = dyn.mass_matrix(model, [q])
            assert M.shape == (1, 1)
            assert M[0, 0] == pytest.approx(m * L * L / 3.0, abs=1e-14)

    def test_two_link_point_mass_vs_symbolic_lagrangian(self):
        # independent oracle: symbolic Euler-Lagrange kinetic energy Hessian
        sympy = pytest.importorskip("sympy")
        L1, L2, m1, m2 = 1.0, 0.8, 2.0, 1.5
        q1, q2, d1, d2 = sympy.symbols("q1 q2 d1 d2")
        p1 = sympy.Matrix([L1 * sympy.cos(q1), L1 * sympy.sin(q1)])
        p2 = p1 + sympy.Matrix([L2 * sympy.cos(q1 + q2), L2 * sympy.sin(q1 + q2)])
        v1 = p1.jacobian([q1, q2]) * sympy.Matrix([d1, d2])
        v2 = p2.jacobian([q1, q2]) * sympy.Matrix([d1, d2])
        T = sympy.Rational(1, 2) * (m1 * v1.dot(v1) + m2 * v2.dot(v2))
        M_sym = sympy.hessian(T, [d1, d2])

        model = make_model(link_masses=(m1, m2), mass_model="point")
        for q in ([0.0, 0.0], [0.7, -1.1], [2.0, 0.3]):
            expected = np.array(
                M_sym.subs({q1: q[0], q2: q[1]}).evalf().tolist(), dtype=float
            )
            np.testing.assert_allclose(dyn.mass_matrix(model, q), expected, atol=1e-10)

    def test_symmetry_and_positive_definite_random(self):
        model = make_model(payload_mass=0.7)
        rng = np.random.default_rng(42)
        for _ in range(1000):
            q = rng.uniform(-np.pi, np.pi, 2)
            M = dyn.mass_matrix(model, q)
            assert np.max(np.abs(M - M.T)) < 1e-12
            np.linalg.cholesky(M)  # raises if not PD

    def test_dimension_mismatch(self):
        model = make_model()
        with pytest.raises(dyn.DimensionError):
            dyn.mass_matrix(model, [0.1, 0.2, 0.3])


class TestBiasAndGravity:
    def test_zero_velocity_gives_zero_coriolis(self):
        model = make_model()
        cqd, _ = dyn.bias_and_gravity(model, dyn.JointState([0.9, -0.4], [0.0, 0.0]))
        assert np.all(cqd == 0.0)

    def test_hanging_pendulum_equilibrium(self):
        model = make_pendulum()
        _, G = dyn.bias_and_gravity(model, dyn.JointState([-np.pi / 2], [0.0]))
        assert abs(G[0]) < 1e-12

    def test_gravity_matches_potential_gradient(self):
        model = make_model(payload_mass=0.5)
        rng = np.random.default_rng(7)
        eps = 1e-6
        for _ in range(20):
            q = rng.uniform(-2.0, 2.0, 2)
            G = dyn.gravity_torque(model, q)
            fd = np.zeros(2)
            for i in range(2):
                dq = np.zeros(2)
                dq[i] = eps
                ep = dyn.total_energy(model, dyn.JointState(q + dq, np.zeros(2)))
                em = dyn.total_energy(model, dyn.JointState(q - dq, np.zeros(2)))
                fd[i] = (ep - em) / (2 * eps)
            assert np.max(np.abs(G - fd)) / max(np.max(np.abs(G)), 1.0) < 1e-6

    def test_mdot_minus_2c_skew_symmetric(self):
        model = make_model(payload_mass=0.5)
        rng = np.random.default_rng(11)
        d = 1e-6
        for _ in range(50):
            q = rng.uniform(-np.pi, np.pi, 2)
            qd = rng.uniform(-2.0, 2.0, 2)
            dMdt = (dyn.mass_matrix(model, q + d * qd) - dyn.mass_matrix(model, q - d * qd)) / (
                2 * d
            )
            S = dMdt - 2.0 * dyn.coriolis_matrix(model, q, qd)
            assert np.max(np.abs(S + S.T)) < 1e-8


class TestForwardInverseDynamics:
    def test_equilibrium_no_motion(self):
        model = make_model(gravity=(0.0, 0.0))
        qdd = dyn.forward_dynamics(
            model,
            dyn.JointState([0.3, -0.8], [0.0, 0.0]),
            dyn.GeneralizedForces(np.zeros(2)),
        )
        assert np.max(np.abs(qdd)) < 1e-14

    def test_pendulum_closed_form(self):
        # uniform rod under gravity: qdd = -(3 g / 2 L) sin(s), s from hanging
        g, L = 9.81, 1.7
        model = make_pendulum(L=L, m=1.3)
        for s in np.linspace(-2.5, 2.5, 11):
            q = -np.pi / 2 + s
            qdd = dyn.forward_dynamics(
                model, dyn.JointState([q], [0.0]), dyn.GeneralizedForces(np.zeros(1))
            )
            assert qdd[0] == pytest.approx(-(3 * g / (2 * L)) * np.sin(s), abs=1e-12)

    def test_roundtrip_identity(self):
        model = make_model(payload_mass=0.4, joint_damping=(0.1, 0.05))
        rng = np.random.default_rng(3)
        for _ in range(50):
            q = rng.uniform(-2, 2, 2)
            qd = rng.uniform(-3, 3, 2)
            tau = rng.uniform(-10, 10, 2)
            ext = (dyn.ContactForce(force=tuple(rng.uniform(-5, 5, 2)), link=1, arc=0.3),)
            qdd = dyn.forward_dynamics(
                model, dyn.JointState(q, qd), dyn.GeneralizedForces(tau, ext)
            )
            tau_back = dyn.inverse_dynamics(model, q, qd, qdd, ext)
            assert np.max(np.abs(tau - tau_back)) / max(np.max(np.abs(tau)), 1e-9) < 1e-10

    def test_static_pose_returns_gravity(self):
        model = make_model(payload_mass=1.0)
        q = np.array([0.4, 0.9])
        tau = dyn.inverse_dynamics(model, q, np.zeros(2), np.zeros(2))
        np.testing.assert_allclose(tau, dyn.gravity_torque(model, q), atol=1e-12)

    def test_rejects_non_finite(self):
        model = make_model()
        with pytest.raises(dyn.NonFiniteError):
            dyn.JointState([np.nan, 0.0], [0.0, 0.0])


class TestStep:
    def test_free_drift(self):
        model = make_pendulum(gravity=(0.0, 0.0))
        x = dyn.JointState([0.1], [0.4])
        x2 = sim.step(model, x, [0.0], EMPTY_WORLD, NO_CONTACT, 1e-3)
        assert x2.q[0] == pytest.approx(0.1 + 1e-3 * 0.4, abs=1e-15)
        assert x2.qdot[0] == pytest.approx(0.4, abs=1e-15)

    def test_pendulum_energy_drift_below_tenth_percent(self):
        # long slow pendulum keeps dt*omega small enough for the 0.1% budget
        model = make_pendulum(L=8.0, m=1.5)
        q = np.array([-np.pi / 2 + 0.15])
        qd = np.zeros(1)
        e0 = dyn.total_energy(model, dyn.JointState(q, qd))
        worst = 0.0
        for _ in range(1000):
            q, qd, _ = sim.step_arrays(model, EMPTY_WORLD, NO_CONTACT, q, qd, np.zeros(1), 1e-3)
            e = dyn.total_energy(model, dyn.JointState(q, qd))
            worst = max(worst, abs(e - e0) / abs(e0))
        assert worst < 1e-3

    def test_energy_non_increasing_with_damping(self):
        model = make_model(joint_damping=(0.4, 0.3))
        q = np.array([0.6, -0.4])
        qd = np.array([1.5, -2.0])
        prev = dyn.total_energy(model, dyn.JointState(q, qd))
        for _ in range(2000):
            q, qd, _ = sim.step_arrays(model, EMPTY_WORLD, NO_CONTACT, q, qd, np.zeros(2), 1e-3)
            e = dyn.total_energy(model, dyn.JointState(q, qd))
            assert e <= prev + 1e-9
            prev = e

    def test_settles_on_floor_within_band(self):
        model = make_model(payload_mass=0.5)
        floor = geo.ConvexPolygon.box(-2.0, -3.0, 2.0, -1.4)
        world = geo.World(
            obstacles=(floor,),
            contact_pairs=((1, 0), (geo.PAYLOAD_BODY, 0)),
            surface_band=1e-2,
            hard_stiffness=1e4,
            hard_damping=100.0,
        )
        q = np.array([-1.2, -0.2])
        qd = np.zeros(2)
        for _ in range(6000):
            q, qd, rec = sim.step_arrays(model, world, NO_CONTACT.zeros(2), q, qd, np.zeros(2), 2e-3)
        assert rec.min_gap < 0.0  # resting in contact
        assert rec.min_gap > -1e-2  # but within the band, not sunk through
        assert np.max(np.abs(qd)) < 0.05

    def test_divergence_guard(self):
        model = make_pendulum()
        x = dyn.JointState([0.0], [0.0])
        with pytest.raises(dyn.DivergedError):
            sim.step(model, x, [0.0], EMPTY_WORLD, NO_CONTACT, 1e-3, blow_up=1e-6)

    def test_control_saturation(self):
        model = make_pendulum(gravity=(0.0, 0.0), torque_limits=(1.0,))
        x = dyn.JointState([0.0], [0.0])
        big = sim.step(model, x, [1000.0], EMPTY_WORLD, NO_CONTACT, 1e-3)
        capped = sim.step(model, x, [1.0], EMPTY_WORLD, NO_CONTACT, 1e-3)
        assert big.qdot[0] == pytest.approx(capped.qdot[0], abs=1e-15)


class TestTotalEnergy:
    def test_zero_at_reference(self):
        model = make_pendulum()
        assert dyn.total_energy(model, dyn.JointState([-np.pi / 2], [0.0])) == pytest.approx(
            0.0, abs=1e-12
        )

    def test_one_link_closed_form(self):
        m, L, g = 2.0, 1.4, 9.81
        model = make_pendulum(L=L, m=m)
        for s in (0.0, 0.5, 1.2, np.pi):
            x = dyn.JointState([-np.pi / 2 + s], [0.0])
            expected = m * g * (L / 2) * (1 - np.cos(s))
            assert dyn.total_energy(model, x) == pytest.approx(expected, abs=1e-10)


class TestModelValidation:
    def test_rejects_nonpositive_lengths(self):
        with pytest.raises(ValueError):
            make_model(link_lengths=(1.0, 0.0))

    def test_rejects_negative_mass(self):
        with pytest.raises(ValueError):
            make_model(link_masses=(1.0, -0.1))

    def test_rejects_bad_limits(self):
        with pytest.raises(ValueError):
            make_model(joint_angle_limits=((1.0, -1.0), (-6.3, 6.3)))


@settings(max_examples=40, deadline=None)
@given(
    q1=st.floats(-3.0, 3.0),
    q2=st.floats(-3.0, 3.0),
    d1=st.floats(-2.0, 2.0),
    d2=st.floats(-2.0, 2.0),
)
def test_energy_decomposition_consistent(q1, q2, d1, d2):
    """Kinetic part equals the quadratic form of the mass matrix."""
    model = make_model()
    x = dyn.JointState([q1, q2], [d1, d2])
    rest = dyn.JointState([q1, q2], [0.0, 0.0])
    kinetic = dyn.total_energy(model, x) - dyn.total_energy(model, rest)
    M = dyn.mass_matrix(model, x.q)
    assert kinetic == pytest.approx(0.5 * x.qdot @ M @ x.qdot, abs=1e-9)
