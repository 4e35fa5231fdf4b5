"""Planar N-link revolute arm dynamics.

All links are serial, actuated at every joint, and move in a vertical plane.
The model follows the standard manipulator form

    M(q) qdd + C(q, qd) qd + G(q) + D qd = tau + sum_c J_c(q)^T f_c

with M assembled from per-body COM Jacobians, C built from the Christoffel
symbols of M (which makes dM/dt - 2C skew-symmetric), and G the gradient of
gravitational potential. External point forces f_c act on link-frame points
and are mapped through their contact Jacobians J_c.

Links are either uniform rods (inertia m*L^2/12 about the COM) or point
masses at the COM offset. An optional point payload hangs at the tip of the
last link.

The inner kernels run on plain Python floats: at N <= 3 joints the numpy
per-call overhead dominates actual arithmetic, and these routines sit inside
integration and finite-difference loops.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np


class DimensionError(ValueError):
    """An input vector does not match the model's joint count."""


class NonFiniteError(ValueError):
    """An input contains NaN or infinite entries."""


class DivergedError(RuntimeError):
    """Integration blew past the configured state-magnitude bound."""


def _as_floats(values, name):
    out = tuple(float(v) for v in values)
    if not all(math.isfinite(v) for v in out):
        raise NonFiniteError(f"{name} must be finite")
    return out


@dataclass(frozen=True)
class ArmModel:
    """Kinematic and inertial description of a planar serial arm.

    Attributes:
        link_lengths: length of each link [m].
        link_masses: mass of each link [kg].
        mass_model: "rod" for uniform rods, "point" for point masses at the
            COM offset.
        link_com_offsets: COM distance from the proximal joint along each
            link [m]; defaults to L/2 for rods and L for point masses.
        gravity: gravitational acceleration vector [m/s^2].
        joint_damping: viscous damping per joint [N*m*s/rad].
        torque_limits: symmetric actuator torque bound per joint [N*m].
        velocity_limits: symmetric joint speed bound per joint [rad/s].
        acceleration_limits: symmetric joint acceleration bound [rad/s^2].
        joint_angle_limits: (lower, upper) per joint [rad].
        payload_mass: point mass attached at the tip of the last link [kg].
        payload_radius: collision radius of the payload disc [m].
        link_radii: capsule collision radius per link [m].
    """

    link_lengths: tuple
    link_masses: tuple
    torque_limits: tuple
    velocity_limits: tuple
    acceleration_limits: tuple
    joint_angle_limits: tuple
    mass_model: str = "rod"
    link_com_offsets: tuple | None = None
    gravity: tuple = (0.0, -9.81)
    joint_damping: tuple | None = None
    payload_mass: float = 0.0
    payload_radius: float = 0.05
    link_radii: tuple | None = None

    def __post_init__(self):
        n = len(self.link_lengths)
        if n < 1:
            raise ValueError("need at least one link")
        if self.mass_model not in ("rod", "point"):
            raise ValueError("mass_model must be 'rod' or 'point'")
        object.__setattr__(self, "link_lengths", _as_floats(self.link_lengths, "link_lengths"))
        object.__setattr__(self, "link_masses", _as_floats(self.link_masses, "link_masses"))
        if any(v <= 0 for v in self.link_lengths):
            raise ValueError("link_lengths must be strictly positive")
        if any(v <= 0 for v in self.link_masses):
            raise ValueError("link_masses must be strictly positive")
        if len(self.link_masses) != n:
            raise DimensionError("link_masses length mismatch")
        if self.link_com_offsets is None:
            frac = 0.5 if self.mass_model == "rod" else 1.0
            object.__setattr__(
                self, "link_com_offsets", tuple(frac * L for L in self.link_lengths)
            )
        object.__setattr__(
            self, "link_com_offsets", _as_floats(self.link_com_offsets, "link_com_offsets")
        )
        if len(self.link_com_offsets) != n:
            raise DimensionError("link_com_offsets length mismatch")
        if any(not (0.0 < c <= L) for c, L in zip(self.link_com_offsets, self.link_lengths)):
            raise ValueError("link_com_offsets must lie in (0, L]")
        if self.joint_damping is None:
            object.__setattr__(self, "joint_damping", (0.0,) * n)
        object.__setattr__(self, "joint_damping", _as_floats(self.joint_damping, "joint_damping"))
        if any(v < 0 for v in self.joint_damping):
            raise ValueError("joint_damping must be non-negative")
        if self.link_radii is None:
            object.__setattr__(self, "link_radii", (0.02,) * n)
        object.__setattr__(self, "link_radii", _as_floats(self.link_radii, "link_radii"))
        for name in ("torque_limits", "velocity_limits", "acceleration_limits"):
            vals = _as_floats(getattr(self, name), name)
            object.__setattr__(self, name, vals)
            if len(vals) != n:
                raise DimensionError(f"{name} length mismatch")
            if any(v <= 0 for v in vals):
                raise ValueError(f"{name} must be strictly positive")
        lims = tuple((float(lo), float(hi)) for lo, hi in self.joint_angle_limits)
        object.__setattr__(self, "joint_angle_limits", lims)
        if len(lims) != n:
            raise DimensionError("joint_angle_limits length mismatch")
        if any(lo >= hi for lo, hi in lims):
            raise ValueError("joint_angle_limits must satisfy lower < upper")
        object.__setattr__(self, "gravity", _as_floats(self.gravity, "gravity"))
        if len(self.gravity) != 2:
            raise DimensionError("gravity must be a 2-vector")
        if self.payload_mass < 0:
            raise ValueError("payload_mass must be non-negative")

    @property
    def n_joints(self) -> int:
        return len(self.link_lengths)

    @cached_property
    def lengths(self) -> np.ndarray:
        return np.array(self.link_lengths)

    @cached_property
    def damping(self) -> np.ndarray:
        return np.array(self.joint_damping)

    @cached_property
    def u_lim(self) -> np.ndarray:
        return np.array(self.torque_limits)

    @cached_property
    def qd_lim(self) -> np.ndarray:
        return np.array(self.velocity_limits)

    @cached_property
    def qdd_lim(self) -> np.ndarray:
        return np.array(self.acceleration_limits)

    @cached_property
    def q_lower(self) -> np.ndarray:
        return np.array([lo for lo, _ in self.joint_angle_limits])

    @cached_property
    def q_upper(self) -> np.ndarray:
        return np.array([hi for _, hi in self.joint_angle_limits])

    @cached_property
    def gravity_vec(self) -> np.ndarray:
        return np.array(self.gravity)

    @cached_property
    def _bodies(self):
        """Per-body (link index, COM offset, mass, COM inertia) tuples.

        Links come first; a payload body at the last link tip is appended
        when payload_mass > 0.
        """
        n = self.n_joints
        idx = list(range(n))
        offs = list(self.link_com_offsets)
        mass = list(self.link_masses)
        if self.mass_model == "rod":
            inertia = [m * L * L / 12.0 for m, L in zip(mass, self.link_lengths)]
        else:
            inertia = [0.0] * n
        if self.payload_mass > 0.0:
            idx.append(n - 1)
            offs.append(self.link_lengths[-1])
            mass.append(self.payload_mass)
            inertia.append(0.0)
        return tuple(idx), tuple(offs), tuple(mass), tuple(inertia)

    def in_joint_limits(self, q: np.ndarray, margin: float = 0.0) -> bool:
        return bool(np.all(q >= self.q_lower - margin) and np.all(q <= self.q_upper + margin))


@dataclass
class JointState:
    """Full planning state [q, qd] of the arm."""

    q: np.ndarray
    qdot: np.ndarray

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float).reshape(-1)
        self.qdot = np.asarray(self.qdot, dtype=float).reshape(-1)
        if self.q.shape != self.qdot.shape:
            raise DimensionError("q and qdot must have equal length")
        if not (np.all(np.isfinite(self.q)) and np.all(np.isfinite(self.qdot))):
            raise NonFiniteError("JointState entries must be finite")

    @property
    def n(self) -> int:
        return self.q.shape[0]

    def copy(self) -> "JointState":
        return JointState(self.q.copy(), self.qdot.copy())

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.q, self.qdot])

    @staticmethod
    def from_vector(x: np.ndarray) -> "JointState":
        x = np.asarray(x, dtype=float)
        n = x.shape[0] // 2
        return JointState(x[:n], x[n:])


@dataclass(frozen=True)
class ContactForce:
    """World-frame point force applied on a link-frame point.

    arc is the distance of the application point from the link's proximal
    joint, measured along the link axis.
    """

    force: tuple
    link: int
    arc: float


@dataclass
class GeneralizedForces:
    """Joint torques plus external contact point forces."""

    tau: np.ndarray
    external_contact: tuple = ()

    def __post_init__(self):
        self.tau = np.asarray(self.tau, dtype=float).reshape(-1)
        if not np.all(np.isfinite(self.tau)):
            raise NonFiniteError("tau must be finite")


class Chain:
    """Kinematic scratchpad for one (model, q) pair.

    Holds absolute link angles, joint positions, and the suffix sums that
    Jacobian rows are made of:

        A[b][k] = S[k] - S[ib] + c_b * ep[ib]   (COM Jacobian of body b)

    where S[k] = sum_{j>=k} L_j * ep_j and ep_j is the link axis rotated a
    quarter turn. Everything is kept as float tuples; see module docstring.
    """

    __slots__ = ("model", "q", "theta", "exv", "epv", "joints", "S", "V", "A")

    def __init__(self, model: ArmModel, q):
        n = model.n_joints
        if len(q) != n:
            raise DimensionError(f"q must have length {n}")
        self.model = model
        qf = [float(v) for v in q]
        if not all(math.isfinite(v) for v in qf):
            raise NonFiniteError("q must be finite")
        self.q = qf
        L = model.link_lengths
        theta = []
        acc = 0.0
        for v in qf:
            acc += v
            theta.append(acc)
        self.theta = theta
        exv = [(math.cos(t), math.sin(t)) for t in theta]
        epv = [(-e[1], e[0]) for e in exv]
        self.exv = exv
        self.epv = epv
        joints = [(0.0, 0.0)]
        jx = jy = 0.0
        for i in range(n):
            jx += L[i] * exv[i][0]
            jy += L[i] * exv[i][1]
            joints.append((jx, jy))
        self.joints = joints
        S = [(0.0, 0.0)] * (n + 1)
        V = [(0.0, 0.0)] * (n + 1)
        sx = sy = vx = vy = 0.0
        for i in range(n - 1, -1, -1):
            sx += L[i] * epv[i][0]
            sy += L[i] * epv[i][1]
            vx -= L[i] * exv[i][0]
            vy -= L[i] * exv[i][1]
            S[i] = (sx, sy)
            V[i] = (vx, vy)
        self.S = S
        self.V = V
        ib, cb, _, _ = model._bodies
        A = []
        for b, i in enumerate(ib):
            si, c = S[i], cb[b]
            row = [
                (S[k][0] - si[0] + c * epv[i][0], S[k][1] - si[1] + c * epv[i][1])
                for k in range(i + 1)
            ]
            A.append(row)
        self.A = A

    def point(self, link: int, arc: float) -> np.ndarray:
        """World position of the point `arc` metres along `link`."""
        j = self.joints[link]
        e = self.exv[link]
        return np.array([j[0] + arc * e[0], j[1] + arc * e[1]])

    def point_jac_rows(self, link: int, arc: float):
        """Jacobian of a link point as two float rows (d px/d q, d py/d q)."""
        n = self.model.n_joints
        S, ep = self.S, self.epv[link]
        si = S[link]
        rx = [0.0] * n
        ry = [0.0] * n
        for k in range(link + 1):
            rx[k] = S[k][0] - si[0] + arc * ep[0]
            ry[k] = S[k][1] - si[1] + arc * ep[1]
        return rx, ry

    def point_jacobian(self, link: int, arc: float) -> np.ndarray:
        """2xN Jacobian of a link-frame point's world position."""
        rx, ry = self.point_jac_rows(link, arc)
        return np.array([rx, ry])


def _chain(model: ArmModel, q) -> Chain:
    return Chain(model, q)


def _mass_lists(model: ArmModel, ch: Chain):
    """M(q) as nested lists."""
    n = model.n_joints
    ib, _, mb, Ib = model._bodies
    M = [[0.0] * n for _ in range(n)]
    for b, i in enumerate(ib):
        m = mb[b]
        A = ch.A[b]
        for k in range(i + 1):
            ak = A[k]
            row = M[k]
            for l in range(k, i + 1):
                al = A[l]
                row[l] += m * (ak[0] * al[0] + ak[1] * al[1])
        Ii = Ib[b]
        if Ii != 0.0:
            for k in range(i + 1):
                row = M[k]
                for l in range(k, i + 1):
                    row[l] += Ii
    for k in range(n):
        for l in range(k):
            M[k][l] = M[l][k]
    return M


def _mass_from_chain(model: ArmModel, ch: Chain) -> np.ndarray:
    return np.array(_mass_lists(model, ch))


def _dA_entry(ch: Chain, i: int, c: float, m: int, k: int):
    """d A[b][k] / d q_m for a body on link i with COM offset c (k <= i)."""
    V = ch.V
    a = V[k if k > m else m]
    b = V[i if i > m else m]
    dx = a[0] - b[0]
    dy = a[1] - b[1]
    if m <= i:
        e = ch.exv[i]
        dx -= c * e[0]
        dy -= c * e[1]
    return dx, dy


def _mass_gradient_lists(model: ArmModel, ch: Chain):
    """dM/dq as nested lists dM[m][k][l]."""
    n = model.n_joints
    ib, cb, mb, _ = model._bodies
    dM = [[[0.0] * n for _ in range(n)] for _ in range(n)]
    for b, i in enumerate(ib):
        m_b = mb[b]
        c = cb[b]
        A = ch.A[b]
        for m in range(n):
            dAm = [_dA_entry(ch, i, c, m, k) for k in range(i + 1)]
            tab = dM[m]
            for k in range(i + 1):
                dk = dAm[k]
                ak = A[k]
                row = tab[k]
                for l in range(k, i + 1):
                    al = A[l]
                    dl = dAm[l]
                    row[l] += m_b * (dk[0] * al[0] + dk[1] * al[1] + ak[0] * dl[0] + ak[1] * dl[1])
    for m in range(n):
        tab = dM[m]
        for k in range(n):
            for l in range(k):
                tab[k][l] = tab[l][k]
    return dM


def _gravity_list(model: ArmModel, ch: Chain):
    n = model.n_joints
    ib, _, mb, _ = model._bodies
    gx, gy = model.gravity
    G = [0.0] * n
    for b, i in enumerate(ib):
        m = mb[b]
        A = ch.A[b]
        for k in range(i + 1):
            a = A[k]
            G[k] -= m * (gx * a[0] + gy * a[1])
    return G


def _gravity_from_chain(model: ArmModel, ch: Chain) -> np.ndarray:
    return np.array(_gravity_list(model, ch))


def _coriolis_lists(model: ArmModel, ch: Chain, qd):
    """C(q, qd) from Christoffel symbols, as nested lists."""
    n = model.n_joints
    dM = _mass_gradient_lists(model, ch)
    C = [[0.0] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            acc = 0.0
            for k in range(n):
                acc += (dM[k][i][j] + dM[j][i][k] - dM[i][j][k]) * qd[k]
            C[i][j] = 0.5 * acc
    return C


def _coriolis_qd_from_dM(n: int, dM, qd) -> np.ndarray:
    """C(q, qd) qd given a precomputed dM/dq table."""
    out = np.empty(n)
    for i in range(n):
        acc = 0.0
        for j in range(n):
            qdj = qd[j]
            if qdj == 0.0:
                continue
            inner = 0.0
            for k in range(n):
                inner += (dM[k][i][j] + dM[j][i][k] - dM[i][j][k]) * qd[k]
            acc += 0.5 * inner * qdj
        out[i] = acc
    return out


def _coriolis_times_qd(model: ArmModel, ch: Chain, qd) -> np.ndarray:
    return _coriolis_qd_from_dM(model.n_joints, _mass_gradient_lists(model, ch), qd)


def mass_matrix(model: ArmModel, q) -> np.ndarray:
    """Joint-space inertia matrix M(q), symmetric positive definite."""
    return _mass_from_chain(model, _chain(model, q))


def coriolis_matrix(model: ArmModel, q, qd) -> np.ndarray:
    """C(q, qd) built from the Christoffel symbols of the inertia matrix."""
    qd = np.asarray(qd, dtype=float)
    return np.array(_coriolis_lists(model, _chain(model, q), qd))


def gravity_torque(model: ArmModel, q) -> np.ndarray:
    """G(q) = dV/dq, the static gravity-compensation torque."""
    return _gravity_from_chain(model, _chain(model, q))


def bias_and_gravity(model: ArmModel, x: JointState):
    """Return (C(q,qd) qd, G(q))."""
    ch = _chain(model, x.q)
    return _coriolis_times_qd(model, ch, x.qdot), _gravity_from_chain(model, ch)


def _external_torque(model: ArmModel, ch: Chain, external_contact) -> np.ndarray:
    tau = np.zeros(model.n_joints)
    for cf in external_contact:
        fx, fy = float(cf.force[0]), float(cf.force[1])
        rx, ry = ch.point_jac_rows(cf.link, cf.arc)
        for k in range(model.n_joints):
            tau[k] += rx[k] * fx + ry[k] * fy
    return tau


def forward_dynamics(model: ArmModel, x: JointState, forces: GeneralizedForces) -> np.ndarray:
    """Joint accelerations under applied torques and external point forces."""
    if forces.tau.shape != (model.n_joints,):
        raise DimensionError("tau length mismatch")
    ch = _chain(model, x.q)
    rhs = (
        forces.tau
        + _external_torque(model, ch, forces.external_contact)
        - _coriolis_times_qd(model, ch, x.qdot)
        - _gravity_from_chain(model, ch)
        - model.damping * x.qdot
    )
    return np.linalg.solve(_mass_from_chain(model, ch), rhs)


def inverse_dynamics(model: ArmModel, q, qdot, qddot, external_contact=()) -> np.ndarray:
    """Torque required to realize qddot at (q, qdot) given the contact forces."""
    q = np.asarray(q, dtype=float)
    qdot = np.asarray(qdot, dtype=float)
    qddot = np.asarray(qddot, dtype=float)
    n = model.n_joints
    if not (q.shape == qdot.shape == qddot.shape == (n,)):
        raise DimensionError("q, qdot, qddot must all have the model's joint count")
    ch = _chain(model, q)
    return (
        _mass_from_chain(model, ch) @ qddot
        + _coriolis_times_qd(model, ch, qdot)
        + _gravity_from_chain(model, ch)
        + model.damping * qdot
        - _external_torque(model, ch, external_contact)
    )


def total_energy(model: ArmModel, x: JointState) -> float:
    """Kinetic plus gravitational potential energy.

    The potential reference is the all-links-aligned-with-gravity pose, so
    the result is zero at rest in the hanging configuration and non-negative
    everywhere when gravity is nonzero.
    """
    ch = _chain(model, x.q)
    kinetic = 0.5 * x.qdot @ _mass_from_chain(model, ch) @ x.qdot
    ib, cb, mb, _ = model._bodies
    gx, gy = model.gravity
    potential = 0.0
    for b, i in enumerate(ib):
        j = ch.joints[i]
        e = ch.exv[i]
        cx = j[0] + cb[b] * e[0]
        cy = j[1] + cb[b] * e[1]
        potential -= mb[b] * (gx * cx + gy * cy)
    gnorm = math.hypot(gx, gy)
    if gnorm > 0.0:
        # shift so the lowest-potential (fully hanging) pose reads zero
        L = model.link_lengths
        for b, i in enumerate(ib):
            potential += mb[b] * (sum(L[:i]) + cb[b]) * gnorm
    return float(kinetic + potential)


def link_segments(model: ArmModel, q):
    """Per-link (start, end) world points of the capsule axes."""
    ch = _chain(model, q)
    return [
        (np.array(ch.joints[i]), np.array(ch.joints[i + 1])) for i in range(model.n_joints)
    ]


def point_jacobian(model: ArmModel, q, link: int, arc: float) -> np.ndarray:
    return _chain(model, q).point_jacobian(link, arc)
