"""Obstacle geometry: signed gaps, classification bands, and projection."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from braceplan import dynamics as dyn
from braceplan import geometry as geo


def make_model(**kw):
    defaults = dict(
        link_lengths=(1.0, 0.8),
        link_masses=(2.0, 1.5),
        torque_limits=(50.0, 50.0),
        velocity_limits=(10.0, 10.0),
        acceleration_limits=(100.0, 100.0),
        joint_angle_limits=((-6.3, 6.3), (-6.3, 6.3)),
        link_radii=(0.02, 0.02),
    )
    defaults.update(kw)
    return dyn.ArmModel(**defaults)


BOX = geo.ConvexPolygon.box(1.0, -0.5, 2.0, 0.5)


class TestPolygon:
    def test_box_constructor(self):
        assert BOX.vertices == ((1.0, -0.5), (2.0, -0.5), (2.0, 0.5), (1.0, 0.5))

    def test_rejects_clockwise(self):
        with pytest.raises(ValueError):
            geo.ConvexPolygon(((0, 0), (0, 1), (1, 1), (1, 0)))

    def test_rejects_nonconvex(self):
        with pytest.raises(ValueError):
            geo.ConvexPolygon(((0, 0), (2, 0), (1, 0.2), (0, 2)))

    def test_normals_point_outward(self):
        n = BOX.normals
        np.testing.assert_allclose(n, [[0, -1], [1, 0], [0, 1], [-1, 0]], atol=1e-12)


class TestCapsuleGap:
    def test_separated_plain_clearance(self):
        psi, t, pt, n, _ = geo.capsule_polygon_gap((0, 0), (0.5, 0), 0.1, BOX)
        assert psi == pytest.approx(0.4, abs=1e-12)
        assert t == 1.0
        np.testing.assert_allclose(n, [-1.0, 0.0], atol=1e-12)

    def test_tangent_face(self):
        psi, _, _, _, _ = geo.capsule_polygon_gap((0.5, 0.6), (1.5, 0.6), 0.1, BOX)
        assert psi == pytest.approx(0.0, abs=1e-9)

    def test_endpoint_penetration(self):
        psi, t, _, n, _ = geo.capsule_polygon_gap((0.8, 0), (1.4, 0), 0.05, BOX)
        assert psi == pytest.approx(-(0.4 + 0.05), abs=1e-12)
        assert t == 1.0
        np.testing.assert_allclose(n, [-1.0, 0.0], atol=1e-12)

    def test_interior_deepest_point(self):
        psi, t, pt, _, _ = geo.capsule_polygon_gap((1.2, 0.0), (1.6, 0.0), 0.0, BOX)
        assert psi == pytest.approx(-0.5, abs=1e-12)
        assert pt[0] == pytest.approx(1.5, abs=1e-9)

    def test_vertex_closest_feature(self):
        psi, _, _, n, _ = geo.capsule_polygon_gap((0.5, 1.0), (0.9, 1.0), 0.0, BOX)
        expected = np.hypot(0.1, 0.5)
        assert psi == pytest.approx(expected, abs=1e-12)
        assert np.linalg.norm(n) == pytest.approx(1.0, abs=1e-12)

    def test_degenerate_point_capsule(self):
        psi, _, _, n, _ = geo.capsule_polygon_gap((1.5, 0.8), (1.5, 0.8), 0.05, BOX)
        assert psi == pytest.approx(0.25, abs=1e-12)
        np.testing.assert_allclose(n, [0.0, 1.0], atol=1e-12)


class TestContactQueries:
    def setup_method(self):
        self.model = make_model(payload_mass=0.5)
        self.world = geo.World(
            obstacles=(BOX,),
            contact_pairs=((0, 0), (1, 0), (geo.PAYLOAD_BODY, 0)),
        )

    def test_far_pose_positive_gaps(self):
        x = dyn.JointState([np.pi / 2, 0.2], [0.0, 0.0])
        for c in geo.query_contacts(self.model, self.world, x):
            assert c.psi > 0.5

    def test_normals_are_unit(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            x = dyn.JointState(rng.uniform(-1.5, 1.5, 2), rng.uniform(-2, 2, 2))
            for c in geo.query_contacts(self.model, self.world, x):
                assert abs(np.linalg.norm(c.normal) - 1.0) < 1e-9

    def test_psidot_matches_flow_finite_difference(self):
        rng = np.random.default_rng(19)
        eps = 1e-7
        worst = 0.0
        for _ in range(300):
            q = rng.uniform(-1.5, 1.5, 2)
            qd = rng.uniform(-2.0, 2.0, 2)
            x = dyn.JointState(q, qd)
            x2 = dyn.JointState(q + eps * qd, qd)
            c1 = geo.query_contacts(self.model, self.world, x)
            c2 = geo.query_contacts(self.model, self.world, x2)
            for a, b in zip(c1, c2):
                worst = max(worst, abs((b.psi - a.psi) / eps - a.psidot))
        assert worst < 1e-4


class TestClassify:
    def setup_method(self):
        self.model = make_model()
        self.world = geo.World(obstacles=(BOX,), contact_pairs=((1, 0),), surface_band=5e-3)

    def test_far_is_free(self):
        x = dyn.JointState([np.pi / 2, 0.0], [0.0, 0.0])
        assert geo.classify(self.model, self.world, x) is geo.Classification.FREE

    def test_partition_is_exhaustive(self):
        rng = np.random.default_rng(23)
        for _ in range(300):
            x = dyn.JointState(rng.uniform(-2, 2, 2), np.zeros(2))
            label = geo.classify(self.model, self.world, x)
            gap = geo.min_gap(self.model, self.world, x.q)
            beta = self.world.surface_band
            if gap > beta:
                assert label is geo.Classification.FREE
            elif gap >= -beta:
                assert label is geo.Classification.SURFACE
            else:
                assert label is geo.Classification.DEEP_COLLISION

    def test_deep_threshold(self):
        # no contact pairs at all -> everything is free
        empty = geo.World(obstacles=(BOX,), contact_pairs=())
        x = dyn.JointState([0.0, 0.0], [0.0, 0.0])
        assert geo.classify(self.model, empty, x) is geo.Classification.FREE


class TestProjection:
    def setup_method(self):
        self.model = make_model()
        self.world = geo.World(obstacles=(BOX,), contact_pairs=((0, 0), (1, 0)))

    def _colliding_state(self):
        rng = np.random.default_rng(31)
        for _ in range(500):
            q = rng.uniform(-1.0, 1.0, 2)
            if geo.classify_q(self.model, self.world, q) is geo.Classification.DEEP_COLLISION:
                return dyn.JointState(q, rng.uniform(-1, 1, 2))
        raise RuntimeError("could not sample a colliding state")

    def test_noop_when_already_valid(self):
        x = dyn.JointState([np.pi / 2, 0.0], [0.3, -0.2])
        out = geo.project_to_surface(self.model, self.world, x)
        np.testing.assert_array_equal(out.q, x.q)
        np.testing.assert_array_equal(out.qdot, x.qdot)

    def test_projection_reaches_surface(self):
        x = self._colliding_state()
        out = geo.project_to_surface(self.model, self.world, x)
        assert geo.classify(self.model, self.world, out) is geo.Classification.SURFACE

    def test_tip_backoff_matches_wall_normal_geometry(self):
        # bent arm poking 2*beta into a flat vertical wall: back-off must
        # land the tip gap inside the band, moving along the wall normal
        beta = self.world.surface_band
        x = dyn.JointState([0.3, -0.2], [0.0, 0.0])
        tip = dyn.Chain(self.model, x.q).point(1, self.model.link_lengths[1])
        radius = self.model.link_radii[1]
        # place the face so the capsule surface sits exactly 2*beta deep
        face = tip[0] + radius - 2 * beta
        wall = geo.ConvexPolygon.box(face, -2.0, face + 1.0, 2.0)
        world = geo.World(obstacles=(wall,), contact_pairs=((1, 0),), surface_band=beta)
        assert geo.min_gap(self.model, world, x.q) == pytest.approx(-2 * beta, abs=1e-12)
        assert geo.classify(self.model, world, x) is geo.Classification.DEEP_COLLISION
        out = geo.project_to_surface(self.model, world, x)
        gap = geo.min_gap(self.model, world, out.q)
        assert -beta <= gap <= beta
        # the independent back-off oracle: shifting the tip out along the
        # wall normal by (2*beta - beta) must produce a surface state too
        assert dyn.Chain(self.model, out.q).point(1, self.model.link_lengths[1])[0] < tip[0]

    def test_straight_poke_is_degenerate(self):
        # fully stretched arm normal to the wall has a singular gap gradient;
        # projection must report failure rather than loop
        wall = geo.ConvexPolygon.box(1.78, -2.0, 3.0, 2.0)
        world = geo.World(obstacles=(wall,), contact_pairs=((1, 0),))
        x = dyn.JointState([0.0, 0.0], [0.0, 0.0])
        with pytest.raises(geo.ProjectionFailure):
            geo.project_to_surface(self.model, world, x)

    def test_normal_velocity_removed(self):
        x = self._colliding_state()
        out = geo.project_to_surface(self.model, self.world, x)
        for c in geo.query_contacts(self.model, self.world, out):
            if abs(c.psi) <= self.world.surface_band:
                assert abs(c.psidot) < 1e-9

    def test_unreachable_projection_fails(self):
        # arm base enclosed by the obstacle: no way out
        cage = geo.ConvexPolygon.box(-5.0, -5.0, 5.0, 5.0)
        world = geo.World(obstacles=(cage,), contact_pairs=((0, 0), (1, 0)))
        x = dyn.JointState([0.3, 0.1], [0.0, 0.0])
        with pytest.raises(geo.ProjectionFailure):
            geo.project_to_surface(self.model, world, x)


class TestTrajectoryValidity:
    def setup_method(self):
        self.model = make_model()
        self.world = geo.World(obstacles=(BOX,), contact_pairs=((1, 0),))

    class _Path:
        def __init__(self, qs, qds):
            self.qs = np.asarray(qs)
            self.qds = np.asarray(qds)
            self.min_gaps = None

    def test_free_straight_line_valid(self):
        qs = np.linspace([np.pi / 2, 0.0], [np.pi / 2 + 0.5, 0.3], 20)
        traj = self._Path(qs, np.zeros_like(qs))
        assert geo.trajectory_is_valid(self.model, self.world, traj)

    def test_single_deep_sample_invalid(self):
        qs = np.full((5, 2), [np.pi / 2, 0.0])
        qs[3] = [0.0, 0.0]  # straight into the box
        traj = self._Path(qs, np.zeros_like(qs))
        assert not geo.trajectory_is_valid(self.model, self.world, traj)

    def test_velocity_limit_violation_invalid(self):
        qs = np.full((5, 2), [np.pi / 2, 0.0])
        qds = np.zeros_like(qs)
        qds[2, 0] = 99.0
        assert not geo.trajectory_is_valid(self.model, self.world, self._Path(qs, qds))

    def test_surface_sliding_is_valid(self):
        # hold poses whose gap sits inside the band: permitted contact
        beta = self.world.surface_band
        qs = []
        rng = np.random.default_rng(17)
        for _ in range(2000):
            q = rng.uniform(-1.0, 1.0, 2)
            if abs(geo.min_gap(self.model, self.world, q)) <= beta:
                qs.append(q)
            if len(qs) == 5:
                break
        assert len(qs) >= 1
        qs = np.array(qs)
        traj = self._Path(qs, np.zeros_like(qs))
        assert geo.trajectory_is_valid(self.model, self.world, traj)


@settings(max_examples=60, deadline=None)
@given(
    px=st.floats(-3, 3),
    py=st.floats(-3, 3),
    qx=st.floats(-3, 3),
    qy=st.floats(-3, 3),
    r=st.floats(0.0, 0.3),
)
def test_gap_is_lipschitz_in_endpoints(px, py, qx, qy, r):
    """Moving one endpoint by d changes the gap by at most d."""
    psi1 = geo.capsule_polygon_gap((px, py), (qx, qy), r, BOX)[0]
    d = 0.05
    psi2 = geo.capsule_polygon_gap((px + d, py), (qx + d, qy), r, BOX)[0]
    assert abs(psi2 - psi1) <= d + 1e-9
