"""Fixed-step integration of the arm with contact.

Each step assembles three torque sources on top of the applied (saturated)
joint input:

  * hard contact: a stiff spring-damper penalty with Coulomb friction that
    plays the role of the physics engine and keeps bodies from sinking
    through obstacles,
  * virtual contact: the tunable smooth model that lets the optimizer feel
    surfaces from a distance,
  * joint damping.

Integration is semi-implicit Euler (velocity first), which stays stable
against the stiff penalty terms at the default step sizes.

The linearization helper exploits the structure of the step map: the
control enters only through M(q)^-1, and velocity perturbations leave all
configuration-dependent geometry untouched, so only the q-direction needs
full finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import contact as vc
from . import geometry as geo
from .dynamics import (
    ArmModel,
    Chain,
    DivergedError,
    JointState,
    _coriolis_qd_from_dM,
    _coriolis_times_qd,
    _gravity_from_chain,
    _mass_from_chain,
    _mass_gradient_lists,
)


@dataclass
class StepRecord:
    """Per-step contact bookkeeping for export, metrics, and validity."""

    u_applied: np.ndarray
    psi: np.ndarray
    psidot: np.ndarray
    omega: np.ndarray          # engine force vectors, (P, 2)
    gamma: np.ndarray          # virtual force vectors, (P, 2)
    tau_engine: np.ndarray     # J^T omega summed over pairs
    tau_virtual: np.ndarray    # J^T gamma summed over pairs
    min_gap: float


def _empty_record(model: ArmModel, world: geo.World, u: np.ndarray) -> StepRecord:
    p = world.n_pairs
    n = model.n_joints
    return StepRecord(
        u_applied=u,
        psi=np.full(p, np.inf),
        psidot=np.zeros(p),
        omega=np.zeros((p, 2)),
        gamma=np.zeros((p, 2)),
        tau_engine=np.zeros(n),
        tau_virtual=np.zeros(n),
        min_gap=np.inf,
    )


class _PairGeom:
    """Configuration-dependent contact geometry, reusable across velocities."""

    __slots__ = ("psi", "J", "grad_row", "normal", "k", "b", "mu")

    def __init__(self, psi, J, grad_row, normal, k, b, mu):
        self.psi = psi
        self.J = J
        self.grad_row = grad_row
        self.normal = normal
        self.k = k
        self.b = b
        self.mu = mu


def _pair_geometry(model: ArmModel, world: geo.World, params: vc.ContactParams, chain: Chain):
    geoms = []
    for idx, (body, obs) in enumerate(world.contact_pairs):
        a, b, radius, link, arc_of = geo._body_capsule(model, chain, body)
        psi, t, _, normal, grad_n = geo.capsule_polygon_gap(a, b, radius, world.obstacles[obs])
        J = chain.point_jacobian(link, arc_of(t))
        geoms.append(
            _PairGeom(psi, J, grad_n @ J, normal, params.k[idx], params.b[idx], params.mu[idx])
        )
    return geoms


def _contact_torque(
    model: ArmModel,
    world: geo.World,
    params: vc.ContactParams,
    geoms,
    qd: np.ndarray,
    record: StepRecord | None = None,
):
    """Total joint torque from engine + virtual forces at velocity qd."""
    n = model.n_joints
    tau = np.zeros(n)
    min_gap = np.inf
    for i, pg in enumerate(geoms):
        psi = pg.psi
        if psi < min_gap:
            min_gap = psi
        nx, ny = pg.normal[0], pg.normal[1]
        J = pg.J
        psidot = 0.0
        vx = vy = 0.0
        for j in range(n):
            psidot += pg.grad_row[j] * qd[j]
            vx += J[0, j] * qd[j]
            vy += J[1, j] * qd[j]
        vn = nx * vx + ny * vy
        vtx, vty = vx - vn * nx, vy - vn * ny
        speed = (vtx * vtx + vty * vty) ** 0.5

        ox = oy = 0.0
        omega_n = 0.0
        if psi < 0.0:
            omega_n = -world.hard_stiffness * psi - world.hard_damping * psidot
            if omega_n < 0.0:
                omega_n = 0.0
            ox, oy = omega_n * nx, omega_n * ny
            if omega_n > 0.0 and speed > 1e-12:
                if speed > world.slide_velocity:
                    f_t = params.mu_k * omega_n
                else:
                    f_t = min(world.stiction_viscosity * speed, params.mu_s * omega_n)
                ox -= f_t * vtx / speed
                oy -= f_t * vty / speed

        gx = gy = 0.0
        if pg.k > 0.0 or pg.b > 0.0 or pg.mu > 0.0:
            gamma_n = vc.virtual_normal_force(psi, psidot, pg.k, pg.b, params)
            gx, gy = gamma_n * nx, gamma_n * ny
            if pg.mu > 0.0:
                tdx = tdy = None
                if speed >= vc.STICTION_SPEED:
                    tdx, tdy = -vtx / speed, -vty / speed
                else:
                    # oppose the engine's stiction force instead
                    on = nx * ox + ny * oy
                    fex, fey = ox - on * nx, oy - on * ny
                    mag = (fex * fex + fey * fey) ** 0.5
                    if mag > 1e-12:
                        tdx, tdy = -fex / mag, -fey / mag
                if tdx is not None:
                    mu_n = min(vc.virtual_friction_coeff(psidot, params), pg.mu)
                    f = mu_n * (gamma_n + omega_n)
                    gx += f * tdx
                    gy += f * tdy

        fx, fy = ox + gx, oy + gy
        for j in range(n):
            tau[j] += J[0, j] * fx + J[1, j] * fy
        if record is not None:
            record.psi[i] = psi
            record.psidot[i] = psidot
            record.omega[i, 0] = ox
            record.omega[i, 1] = oy
            record.gamma[i, 0] = gx
            record.gamma[i, 1] = gy
            for j in range(n):
                record.tau_engine[j] += J[0, j] * ox + J[1, j] * oy
                record.tau_virtual[j] += J[0, j] * gx + J[1, j] * gy
    if record is not None:
        record.min_gap = float(min_gap)
    return tau


def clamp_controls(model: ArmModel, u: np.ndarray) -> np.ndarray:
    return np.clip(u, -model.u_lim, model.u_lim)


def step_arrays(
    model: ArmModel,
    world: geo.World,
    params: vc.ContactParams,
    q: np.ndarray,
    qd: np.ndarray,
    u: np.ndarray,
    dt: float,
    blow_up: float = 1e6,
):
    """One semi-implicit Euler step on raw arrays. Returns (q+, qd+, record)."""
    u_app = clamp_controls(model, u)
    chain = Chain(model, q)
    record = _empty_record(model, world, u_app)
    tau_c = np.zeros(model.n_joints)
    if world.n_pairs:
        geoms = _pair_geometry(model, world, params, chain)
        tau_c = _contact_torque(model, world, params, geoms, qd, record)
    rhs = (
        u_app
        + tau_c
        - _coriolis_times_qd(model, chain, qd)
        - _gravity_from_chain(model, chain)
        - model.damping * qd
    )
    qdd = np.linalg.solve(_mass_from_chain(model, chain), rhs)
    qd_next = qd + dt * qdd
    q_next = q + dt * qd_next
    if not (np.all(np.isfinite(q_next)) and np.all(np.isfinite(qd_next))):
        raise DivergedError("non-finite state after step")
    if np.max(np.abs(q_next)) > blow_up or np.max(np.abs(qd_next)) > blow_up:
        raise DivergedError("state magnitude exceeded blow-up bound")
    return q_next, qd_next, record


def step(
    model: ArmModel,
    x: JointState,
    u,
    world: geo.World,
    contact_params: vc.ContactParams,
    dt: float,
    blow_up: float = 1e6,
) -> JointState:
    """Advance the full contact dynamics by one step of size dt."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    u = np.asarray(u, dtype=float).reshape(-1)
    if u.shape != (model.n_joints,) or not np.all(np.isfinite(u)):
        raise ValueError("u must be a finite N-vector")
    q_next, qd_next, _ = step_arrays(model, world, contact_params, x.q, x.qdot, u, dt, blow_up)
    return JointState(q_next, qd_next)


def _accel(model, world, params, q, qd, u_app):
    chain = Chain(model, q)
    tau_c = np.zeros(model.n_joints)
    if world.n_pairs:
        geoms = _pair_geometry(model, world, params, chain)
        tau_c = _contact_torque(model, world, params, geoms, qd)
    rhs = (
        u_app
        + tau_c
        - _coriolis_times_qd(model, chain, qd)
        - _gravity_from_chain(model, chain)
        - model.damping * qd
    )
    M = _mass_from_chain(model, chain)
    return np.linalg.solve(M, rhs), chain, M


def linearize_step(
    model: ArmModel,
    world: geo.World,
    params: vc.ContactParams,
    q: np.ndarray,
    qd: np.ndarray,
    u: np.ndarray,
    dt: float,
    eps_q: float = 1e-6,
    eps_qd: float = 1e-6,
):
    """Jacobians (fx, fu) of the step map at (q, qd, u).

    fu uses the exact relation d qdd / d u = M(q)^-1; d qdd / d qd reuses
    the configuration geometry (only Coriolis, damping, and contact-force
    velocity terms move); d qdd / d q is full central finite differences.
    """
    n = model.n_joints
    u_app = clamp_controls(model, u)
    chain = Chain(model, q)
    M = _mass_from_chain(model, chain)
    geoms = _pair_geometry(model, world, params, chain) if world.n_pairs else []
    dM = _mass_gradient_lists(model, chain)
    G = _gravity_from_chain(model, chain)

    def accel_fixed_geom(qd_):
        Cqd = _coriolis_qd_from_dM(n, dM, qd_)
        tau_c = _contact_torque(model, world, params, geoms, qd_) if geoms else 0.0
        return np.linalg.solve(M, u_app + tau_c - Cqd - G - model.damping * qd_)

    da_dqd = np.zeros((n, n))
    for j in range(n):
        dv = np.zeros(n)
        dv[j] = eps_qd
        da_dqd[:, j] = (accel_fixed_geom(qd + dv) - accel_fixed_geom(qd - dv)) / (2 * eps_qd)

    da_dq = np.zeros((n, n))
    for j in range(n):
        dv = np.zeros(n)
        dv[j] = eps_q
        ap, _, _ = _accel(model, world, params, q + dv, qd, u_app)
        am, _, _ = _accel(model, world, params, q - dv, qd, u_app)
        da_dq[:, j] = (ap - am) / (2 * eps_q)

    da_du = np.linalg.solve(M, np.eye(n))
    # saturation: no authority through clamped channels
    saturated = np.abs(u) > model.u_lim
    if np.any(saturated):
        da_du[:, saturated] = 0.0

    I = np.eye(n)
    fx = np.zeros((2 * n, 2 * n))
    fx[:n, :n] = I + dt * dt * da_dq
    fx[:n, n:] = dt * I + dt * dt * da_dqd
    fx[n:, :n] = dt * da_dq
    fx[n:, n:] = I + dt * da_dqd
    fu = np.zeros((2 * n, n))
    fu[:n, :] = dt * dt * da_du
    fu[n:, :] = dt * da_du
    return fx, fu
