"""Tunable smooth virtual contact forces.

These forces act at a distance and are differentiable through the moment of
contact, which lets a gradient-based trajectory optimizer discover where and
when to touch the environment. Per contact pair the model has three tunable
parameters: a normal stiffness k, a normal damping b, and a friction bound
mu. The optimizer treats them as decision variables and drives them toward
zero, so converged trajectories carry (almost) no fictitious force.

Normal force:      k * exp(-alpha_k * psi) + b * sig(-alpha_b * psi) * psidot
                   clamped below at zero (no adhesion),
Friction coeff:    a logistic bump in the normal approach rate, peaking at
                   (mu_s + mu_k)/2 at rest and decaying to ~rho at the
                   stiction-breaking rate psidot_thres,
Friction force:    mu_n * (virtual normal + engine normal), opposing the
                   tangential slide (or the engine's stiction force when
                   effectively at rest).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .dynamics import ArmModel, Chain, JointState

STICTION_SPEED = 1e-6  # tangential speeds below this count as rest [m/s]


@dataclass(frozen=True)
class ContactParams:
    """Per-pair tunable force parameters plus shared shape constants.

    k, b, mu are tuples with one entry per contact pair; they are the
    decision variables of the trajectory optimizer. The remaining fields
    shape the force profiles and stay fixed.
    """

    k: tuple = ()
    b: tuple = ()
    mu: tuple = ()
    alpha_k: float = 50.0
    alpha_b: float = 100.0
    mu_s: float = 0.8
    mu_k: float = 0.6
    psidot_thres: float = 0.05
    rho: float = 1e-3

    def __post_init__(self):
        object.__setattr__(self, "k", tuple(float(v) for v in self.k))
        object.__setattr__(self, "b", tuple(float(v) for v in self.b))
        object.__setattr__(self, "mu", tuple(float(v) for v in self.mu))
        if not (len(self.k) == len(self.b) == len(self.mu)):
            raise ValueError("k, b, mu must have one entry per contact pair")
        if any(v < 0 for v in self.k + self.b + self.mu):
            raise ValueError("k, b, mu must be non-negative")
        if self.mu_k > self.mu_s:
            raise ValueError("kinetic friction must not exceed static friction")
        if self.psidot_thres <= 0:
            raise ValueError("psidot_thres must be positive")
        mu_bar = 0.5 * (self.mu_s + self.mu_k)
        if not (0.0 < self.rho < 2.0 * mu_bar):
            raise ValueError("rho must lie in (0, mu_s + mu_k)")

    @property
    def n_pairs(self) -> int:
        return len(self.k)

    @property
    def mu_bar(self) -> float:
        return 0.5 * (self.mu_s + self.mu_k)

    def with_values(self, k=None, b=None, mu=None) -> "ContactParams":
        return replace(
            self,
            k=tuple(k) if k is not None else self.k,
            b=tuple(b) if b is not None else self.b,
            mu=tuple(mu) if mu is not None else self.mu,
        )

    @staticmethod
    def zeros(n_pairs: int, **kwargs) -> "ContactParams":
        z = (0.0,) * n_pairs
        return ContactParams(k=z, b=z, mu=z, **kwargs)


def _sig(z: float) -> float:
    # logistic, evaluated on the stable side
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    ez = math.exp(z)
    return ez / (1.0 + ez)


def virtual_normal_force(psi: float, psidot: float, k: float, b: float, p: ContactParams) -> float:
    """Nonlinear spring-damper normal force magnitude, >= 0.

    The spring decays exponentially with separation; the damper fades in
    through a logistic gate as the gap closes. Negative (adhesive) totals
    are clamped to zero.
    """
    val = k * math.exp(-p.alpha_k * psi) + b * _sig(-p.alpha_b * psi) * psidot
    return max(val, 0.0)


def virtual_friction_coeff(psidot: float, p: ContactParams) -> float:
    """Velocity-shaped virtual friction coefficient.

    Peaks at (mu_s + mu_k)/2 when the contact is at rest normal-wise, drops
    to rho at |psidot| = psidot_thres, and decays to zero beyond; even in
    psidot.
    """
    mu_bar = p.mu_bar
    alpha_mu = p.psidot_thres / math.log(p.rho / (2.0 * mu_bar - p.rho))
    z = psidot / alpha_mu
    if z >= 0:
        bump = 2.0 * mu_bar * math.exp(-z) / (1.0 + math.exp(-z))
    else:
        bump = 2.0 * mu_bar / (1.0 + math.exp(z))
    return mu_bar - abs(bump - mu_bar)


def virtual_friction_force(
    gamma_n: float, omega_n: float, mu_n: float, tangential_dir: np.ndarray
) -> np.ndarray:
    """Friction force vector mu_n * (gamma_n + omega_n) along tangential_dir."""
    return mu_n * (gamma_n + omega_n) * np.asarray(tangential_dir, dtype=float)


def generalized_virtual_torque(
    model: ArmModel,
    x: JointState,
    contacts,
    params: ContactParams,
    omega_normals=None,
    engine_frictions=None,
    chain: Chain | None = None,
) -> np.ndarray:
    """Joint torque produced on the arm by all virtual contact forces.

    Sums J^T (Gamma_n * normal + friction) over the contact pairs. The
    friction opposes the tangential witness velocity; below the stiction
    speed it instead opposes the engine's static friction force (zero when
    no engine force is supplied).

    Args:
        contacts: ContactQuery list from the geometry module.
        omega_normals: per-pair engine normal force magnitudes, if any.
        engine_frictions: per-pair engine friction force vectors, if any.
    """
    n = model.n_joints
    tau = np.zeros(n)
    if not contacts:
        return tau
    if chain is None:
        chain = Chain(model, x.q)
    for c in contacts:
        i = c.pair_index
        k, b, mu = params.k[i], params.b[i], params.mu[i]
        if k == 0.0 and b == 0.0 and mu == 0.0:
            continue
        omega_n = 0.0 if omega_normals is None else float(omega_normals[i])
        gamma_n = virtual_normal_force(c.psi, c.psidot, k, b, params)
        J = chain.point_jacobian(c.link, c.arc)
        force = gamma_n * c.normal
        if mu > 0.0:
            v = J @ x.qdot
            v_t = v - (c.normal @ v) * c.normal
            speed = float(np.linalg.norm(v_t))
            if speed >= STICTION_SPEED:
                t_dir = -v_t / speed
            elif engine_frictions is not None:
                f_eng = np.asarray(engine_frictions[i], dtype=float)
                mag = float(np.linalg.norm(f_eng))
                t_dir = -f_eng / mag if mag > 1e-12 else None
            else:
                t_dir = None
            if t_dir is not None:
                # the per-pair decision variable bounds the shaped coefficient
                mu_n = min(virtual_friction_coeff(c.psidot, params), mu)
                force = force + virtual_friction_force(gamma_n, omega_n, mu_n, t_dir)
        tau += J.T @ force
    return tau
