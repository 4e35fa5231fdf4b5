"""Risk-sensitive iLQR over the contact dynamics.

The per-step cost is a weighted sum of residual norms

    l(x, u) = w_goal ||q_T - q_goal|| (terminal)
            + w_effort ||u|| + w_velocity ||qd||
            + w_stiffness ||k|| + w_damping ||b|| + w_friction ||mu||

passed through the exponential risk transform c = (exp(R*l) - 1) / R. The
contact-model parameters (k, b, mu) are decision variables alongside the
control tape: the iLQR inner loop optimizes the controls, and an outer
coordinate-descent loop shrinks the contact parameters between iLQR passes.

Controls are spline-parameterized: the optimizer works on the per-step tape
and the returned trajectory is the exact rollout of the fitted spline, so a
returned Trajectory is always dynamically feasible and reproducible
bit-for-bit from its own spline.

The backward pass uses Levenberg regularization on the action block and a
clamping treatment of actuator saturation; the forward pass line-searches
the feedback policy u = u_bar + K (x - x_bar) + alpha * k over a fixed
geometric step grid, accepting the lowest-cost candidate (ties favor the
largest step).
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize_scalar

from . import simulate as sim
from .contact import ContactParams
from .dynamics import ArmModel, DivergedError, JointState
from .geometry import World

log = logging.getLogger(__name__)

NORM_SMOOTHING = 1e-8       # sqrt(||r||^2 + eps^2) so derivatives exist at r = 0
RISK_SATURATION = 500.0     # R*l beyond this is treated as saturated
_EXP_CLIP = 709.0           # largest exponent representable in float64


class SolveDiverged(RuntimeError):
    """The rollout of the initial control tape blew up; edge is infeasible."""


@dataclass(frozen=True)
class CostWeights:
    """Non-negative weights of the trajectory cost terms plus risk parameter."""

    w_goal: float = 10.0
    w_effort: float = 1e-3
    w_velocity: float = 1e-3
    w_stiffness: float = 1e-3
    w_damping: float = 1e-3
    w_friction: float = 1e-3
    risk: float = 0.0

    def __post_init__(self):
        ws = (
            self.w_goal,
            self.w_effort,
            self.w_velocity,
            self.w_stiffness,
            self.w_damping,
            self.w_friction,
        )
        if any(w < 0 for w in ws):
            raise ValueError("cost weights must be non-negative")
        if self.w_goal <= 0 and self.w_effort <= 0 and self.w_velocity <= 0:
            raise ValueError("at least one motion weight must be positive")


def risk_transform(l: float, R: float) -> float:
    """Exponential risk transform c = (exp(R*l) - 1) / R.

    Risk-neutral (R ~ 0) reduces to the identity. Zero is a fixed point and
    the slope at zero is one for every R; for R < 0 the output saturates at
    -1/R. Overflowing arguments are clipped to the float64 exponent range
    and flagged with a warning.
    """
    if l < 0:
        raise ValueError("risk transform expects a non-negative cost")
    if abs(R) < 1e-12:
        return float(l)
    z = R * l
    if z > RISK_SATURATION:
        warnings.warn("risk transform saturated (R*l > %g)" % RISK_SATURATION, RuntimeWarning)
        z = min(z, _EXP_CLIP)
    return float(math.expm1(z) / R)


@dataclass
class ResidualTerm:
    """One weighted norm term of the cost, w * ||r||, with its Jacobians."""

    weight: float
    value: np.ndarray
    jac_x: np.ndarray | None = None
    jac_u: np.ndarray | None = None


def base_cost(terms) -> float:
    return float(sum(t.weight * np.linalg.norm(t.value) for t in terms))


def risk_cost(terms, R: float) -> float:
    return risk_transform(base_cost(terms), R)


def _smoothed(norm: float) -> float:
    return math.sqrt(norm * norm + NORM_SMOOTHING * NORM_SMOOTHING)


def risk_gradient(terms, R: float, nx: int, nu: int):
    """(dc/dx, dc/du) of the risk-transformed cost at one step."""
    gx = np.zeros(nx)
    gu = np.zeros(nu)
    l = 0.0
    for t in terms:
        norm = float(np.linalg.norm(t.value))
        l += t.weight * norm
        scale = t.weight / _smoothed(norm)
        if t.jac_x is not None:
            gx += scale * (t.value @ t.jac_x)
        if t.jac_u is not None:
            gu += scale * (t.value @ t.jac_u)
    factor = math.exp(min(R * l, _EXP_CLIP))
    return factor * gx, factor * gu


def risk_hessian_gn(terms, R: float, nx: int, nu: int, curvature_floor: float = 0.0):
    """Gauss-Newton blocks (d2c/dx2, d2c/du2, d2c/dxdu).

    Residual curvature is dropped; each term contributes its norm-projection
    J^T (I/||r|| - r r^T/||r||^3) J plus the rank-one risk term
    R * (dl)^T (dl). curvature_floor bounds the 1/||r|| blow-up near r = 0
    (zero keeps the exact smoothed formula).
    """
    Hxx = np.zeros((nx, nx))
    Huu = np.zeros((nu, nu))
    Hxu = np.zeros((nx, nu))
    gx = np.zeros(nx)
    gu = np.zeros(nu)
    l = 0.0
    for t in terms:
        norm = float(np.linalg.norm(t.value))
        l += t.weight * norm
        s = max(_smoothed(norm), curvature_floor)
        r = t.value
        P = np.eye(r.shape[0]) / s - np.outer(r, r) / s**3
        scale = t.weight / _smoothed(norm)
        if t.jac_x is not None:
            Hxx += t.weight * t.jac_x.T @ P @ t.jac_x
            gx += scale * (r @ t.jac_x)
        if t.jac_u is not None:
            Huu += t.weight * t.jac_u.T @ P @ t.jac_u
            gu += scale * (r @ t.jac_u)
    factor = math.exp(min(R * l, _EXP_CLIP))
    Hxx = factor * (Hxx + R * np.outer(gx, gx))
    Huu = factor * (Huu + R * np.outer(gu, gu))
    Hxu = factor * (Hxu + R * np.outer(gx, gu))
    return Hxx, Huu, Hxu


class RiskNormCost:
    """Production cost model: risk-transformed residual norms."""

    def __init__(
        self,
        weights: CostWeights,
        n_joints: int,
        target_q: np.ndarray,
        contact_params: ContactParams,
        curvature_floor: float = 1e-2,
    ):
        self.weights = weights
        self.n = n_joints
        self.target_q = np.asarray(target_q, dtype=float)
        self.curvature_floor = curvature_floor
        self.set_contact_params(contact_params)
        n = n_joints
        self._ju = np.eye(n)
        self._jx_vel = np.hstack([np.zeros((n, n)), np.eye(n)])
        self._jx_pos = np.hstack([np.eye(n), np.zeros((n, n))])

    def set_contact_params(self, params: ContactParams):
        self.contact_params = params
        w = self.weights
        self._param_cost = (
            w.w_stiffness * float(np.linalg.norm(params.k))
            + w.w_damping * float(np.linalg.norm(params.b))
            + w.w_friction * float(np.linalg.norm(params.mu))
        )

    def _stage_terms(self, x, u, with_jac: bool):
        n = self.n
        w = self.weights
        terms = []
        if w.w_effort > 0:
            terms.append(ResidualTerm(w.w_effort, u, jac_u=self._ju if with_jac else None))
        if w.w_velocity > 0:
            terms.append(
                ResidualTerm(w.w_velocity, x[n:], jac_x=self._jx_vel if with_jac else None)
            )
        return terms

    def stage_cost(self, x, u, i) -> float:
        l = base_cost(self._stage_terms(x, u, False)) + self._param_cost
        return risk_transform(l, self.weights.risk)

    def terminal_cost(self, x) -> float:
        l = self.weights.w_goal * float(np.linalg.norm(x[: self.n] - self.target_q))
        return risk_transform(l, self.weights.risk)

    def stage_derivs(self, x, u, i):
        terms = self._stage_terms(x, u, True)
        R = self.weights.risk
        nx, nu = 2 * self.n, self.n
        # the constant contact-parameter cost shifts l, scaling the factor
        l_shift = self._param_cost
        gx, gu = risk_gradient(terms, R, nx, nu)
        Hxx, Huu, Hxu = risk_hessian_gn(terms, R, nx, nu, self.curvature_floor)
        if R != 0.0 and l_shift > 0.0:
            boost = math.exp(min(R * l_shift, _EXP_CLIP))
            gx, gu = boost * gx, boost * gu
            Hxx, Huu, Hxu = boost * Hxx, boost * Huu, boost * Hxu
        return gx, gu, Hxx, Huu, Hxu

    def terminal_derivs(self, x):
        term = ResidualTerm(
            self.weights.w_goal, x[: self.n] - self.target_q, jac_x=self._jx_pos
        )
        R = self.weights.risk
        gx, _ = risk_gradient([term], R, 2 * self.n, self.n)
        Hxx, _, _ = risk_hessian_gn([term], R, 2 * self.n, self.n, self.curvature_floor)
        return gx, Hxx


class QuadraticCost:
    """Plain quadratic cost model, used by surrogate and harness problems."""

    def __init__(self, Q, Ru, Qf, x_ref):
        self.Q = np.asarray(Q, dtype=float)
        self.Ru = np.asarray(Ru, dtype=float)
        self.Qf = np.asarray(Qf, dtype=float)
        self.x_ref = np.asarray(x_ref, dtype=float)
        self.contact_params = ContactParams()

    def set_contact_params(self, params):
        self.contact_params = params

    def stage_cost(self, x, u, i) -> float:
        dx = x - self.x_ref
        return 0.5 * float(dx @ self.Q @ dx + u @ self.Ru @ u)

    def terminal_cost(self, x) -> float:
        dx = x - self.x_ref
        return 0.5 * float(dx @ self.Qf @ dx)

    def stage_derivs(self, x, u, i):
        dx = x - self.x_ref
        return self.Q @ dx, self.Ru @ u, self.Q.copy(), self.Ru.copy(), np.zeros(
            (self.Q.shape[0], self.Ru.shape[0])
        )

    def terminal_derivs(self, x):
        dx = x - self.x_ref
        return self.Qf @ dx, self.Qf.copy()


@dataclass
class ControlSpline:
    """Piecewise control signal defined by knots; bounded iff knots are."""

    knot_times: np.ndarray
    knot_values: np.ndarray  # (K, N)
    kind: str = "linear"

    def __post_init__(self):
        self.knot_times = np.asarray(self.knot_times, dtype=float).reshape(-1)
        self.knot_values = np.atleast_2d(np.asarray(self.knot_values, dtype=float))
        if self.knot_times.shape[0] != self.knot_values.shape[0]:
            raise ValueError("knot count mismatch")
        if self.knot_times.shape[0] >= 2 and np.any(np.diff(self.knot_times) <= 0):
            raise ValueError("knot times must be strictly increasing")
        if self.kind not in ("zero", "linear", "cubic"):
            raise ValueError("interpolation must be zero | linear | cubic")

    @property
    def n_controls(self) -> int:
        return self.knot_values.shape[1]

    def eval_many(self, ts) -> np.ndarray:
        ts = np.asarray(ts, dtype=float)
        K = self.knot_times.shape[0]
        if K == 0:
            return np.zeros((ts.shape[0], self.n_controls))
        if K == 1 or self.kind == "zero":
            if K == 1:
                return np.repeat(self.knot_values[:1], ts.shape[0], axis=0)
            idx = np.clip(
                np.searchsorted(self.knot_times, ts, side="right") - 1, 0, K - 1
            )
            return self.knot_values[idx]
        if self.kind == "linear":
            out = np.empty((ts.shape[0], self.n_controls))
            for j in range(self.n_controls):
                out[:, j] = np.interp(ts, self.knot_times, self.knot_values[:, j])
            return out
        from scipy.interpolate import CubicSpline

        cs = CubicSpline(self.knot_times, self.knot_values, axis=0, bc_type="natural")
        tt = np.clip(ts, self.knot_times[0], self.knot_times[-1])
        return cs(tt)

    def eval(self, t: float) -> np.ndarray:
        return self.eval_many(np.array([t]))[0]

    def shifted(self, offset: float) -> "ControlSpline":
        return ControlSpline(self.knot_times + offset, self.knot_values.copy(), self.kind)

    @staticmethod
    def from_tape(times, tape, n_knots, kind="linear") -> "ControlSpline":
        """Sample a per-step control tape at n_knots evenly spread steps."""
        times = np.asarray(times, dtype=float)
        tape = np.atleast_2d(np.asarray(tape, dtype=float))
        T = tape.shape[0]
        if T == 0:
            return ControlSpline(np.array([0.0]), np.zeros((1, tape.shape[1] or 1)), kind)
        if n_knots is None or n_knots >= T:
            idx = np.arange(T)
        else:
            idx = np.unique(np.round(np.linspace(0, T - 1, max(2, n_knots))).astype(int))
        return ControlSpline(times[idx], tape[idx], kind)


@dataclass
class Trajectory:
    """Rollout-consistent state/control trajectory with cost accounting.

    states satisfy qs[i+1], qds[i+1] = step(qs[i], qds[i], spline(times[i])):
    re-simulating the spline from the first state reproduces the arrays
    exactly.
    """

    times: np.ndarray
    qs: np.ndarray
    qds: np.ndarray
    us: np.ndarray
    spline: ControlSpline
    contact_params: ContactParams
    total_cost: float
    converged: bool
    target_q: np.ndarray | None = None
    cell_center: np.ndarray | None = None
    half_width: float | None = None
    min_gaps: np.ndarray | None = None
    iterations: int = 0
    cost_trace: tuple = ()

    @property
    def n_steps(self) -> int:
        return self.us.shape[0]

    @property
    def duration(self) -> float:
        return float(self.times[-1] - self.times[0])

    @property
    def initial_state(self) -> JointState:
        return JointState(self.qs[0].copy(), self.qds[0].copy())

    @property
    def terminal_state(self) -> JointState:
        return JointState(self.qs[-1].copy(), self.qds[-1].copy())

    def state(self, i: int) -> JointState:
        return JointState(self.qs[i].copy(), self.qds[i].copy())

    @staticmethod
    def empty(x: JointState, contact_params: ContactParams) -> "Trajectory":
        n = x.n
        return Trajectory(
            times=np.zeros(1),
            qs=x.q[None, :].copy(),
            qds=x.qdot[None, :].copy(),
            us=np.zeros((0, n)),
            spline=ControlSpline(np.array([0.0]), np.zeros((1, n))),
            contact_params=contact_params,
            total_cost=0.0,
            converged=True,
            target_q=x.q.copy(),
            min_gaps=None,
        )


@dataclass(frozen=True)
class SolveSettings:
    """Optimizer configuration.

    horizon/dt fix the per-edge grid; cell tolerance is half the lattice
    cell width and decides the converged flag. n_knots=None keeps one knot
    per step (exact tape).
    """

    dt: float = 1e-3
    horizon: float = 0.5
    max_iterations: int = 30
    alpha_min: float = 1.0 / 64.0
    reg_init: float = 1e-6
    reg_growth: float = 10.0
    reg_shrink: float = 0.5
    reg_max: float = 1e8
    tol_cost: float = 1e-7
    cell_tolerance: float = 0.05
    n_knots: int | None = 11
    spline_kind: str = "linear"
    linearize_every: int = 1
    curvature_floor: float = 1e-2
    outer_rounds: int = 2
    contact_sweeps: int = 3
    optimize_contact: bool = True
    blow_up: float = 1e6

    def __post_init__(self):
        if self.horizon <= 0 or self.dt <= 0:
            raise ValueError("horizon and dt must be positive")
        if not (0.0 < self.alpha_min <= 1.0):
            raise ValueError("alpha_min must be in (0, 1]")

    def steps(self, horizon: float | None = None) -> int:
        h = self.horizon if horizon is None else horizon
        return max(1, int(round(h / self.dt)))

    def alphas(self) -> np.ndarray:
        out = []
        a = 1.0
        while a >= self.alpha_min * (1 - 1e-12):
            out.append(a)
            a *= 0.5
        return np.array(out)


class _Ilqr:
    """One boundary-value solve: state shared across passes."""

    def __init__(self, model, world, x_start, cost, settings, n_steps):
        self.model = model
        self.world = world
        self.x0 = x_start
        self.cost = cost
        self.s = settings
        self.T = n_steps
        self.n = model.n_joints

    def rollout_tape(self, tape):
        """Open-loop rollout; returns (qs, qds, us, gaps, cost) or None on blow-up."""
        T, n = self.T, self.n
        qs = np.empty((T + 1, n))
        qds = np.empty((T + 1, n))
        us = np.empty((T, n))
        gaps = np.empty(T + 1)
        qs[0], qds[0] = self.x0.q, self.x0.qdot
        gaps[0] = np.inf
        total = 0.0
        q, qd = qs[0], qds[0]
        params = self.cost.contact_params
        for i in range(T):
            u = sim.clamp_controls(self.model, tape[i])
            us[i] = u
            total += self.cost.stage_cost(np.concatenate([q, qd]), u, i)
            try:
                q, qd, rec = sim.step_arrays(
                    self.model, self.world, params, q, qd, u, self.s.dt, self.s.blow_up
                )
            except DivergedError:
                return None
            qs[i + 1], qds[i + 1] = q, qd
            gaps[i + 1] = rec.min_gap
        total += self.cost.terminal_cost(np.concatenate([q, qd]))
        return qs, qds, us, gaps, total

    def rollout_policy(self, nom_qs, nom_qds, nom_us, k, K, alpha):
        """Closed-loop rollout of the backward-pass policy."""
        T, n = self.T, self.n
        qs = np.empty((T + 1, n))
        qds = np.empty((T + 1, n))
        us = np.empty((T, n))
        gaps = np.empty(T + 1)
        qs[0], qds[0] = self.x0.q, self.x0.qdot
        gaps[0] = np.inf
        total = 0.0
        q, qd = qs[0], qds[0]
        params = self.cost.contact_params
        for i in range(T):
            dx = np.concatenate([q - nom_qs[i], qd - nom_qds[i]])
            u = sim.clamp_controls(self.model, nom_us[i] + alpha * k[i] + K[i] @ dx)
            us[i] = u
            total += self.cost.stage_cost(np.concatenate([q, qd]), u, i)
            try:
                q, qd, rec = sim.step_arrays(
                    self.model, self.world, params, q, qd, u, self.s.dt, self.s.blow_up
                )
            except DivergedError:
                return None
            qs[i + 1], qds[i + 1] = q, qd
            gaps[i + 1] = rec.min_gap
        total += self.cost.terminal_cost(np.concatenate([q, qd]))
        return qs, qds, us, gaps, total

    def linearize(self, qs, qds, us):
        T, n = self.T, self.n
        fx = np.empty((T, 2 * n, 2 * n))
        fu = np.empty((T, 2 * n, n))
        every = max(1, self.s.linearize_every)
        keypoints = sorted(set(range(0, T, every)) | {T - 1})
        params = self.cost.contact_params
        for i in keypoints:
            fx[i], fu[i] = sim.linearize_step(
                self.model, self.world, params, qs[i], qds[i], us[i], self.s.dt
            )
        for a, b in zip(keypoints, keypoints[1:]):
            for i in range(a + 1, b):
                w = (i - a) / (b - a)
                fx[i] = (1 - w) * fx[a] + w * fx[b]
                fu[i] = (1 - w) * fu[a] + w * fu[b]
        return fx, fu

    def backward(self, qs, qds, us, fx, fu, reg):
        T, n = self.T, self.n
        k = np.empty((T, n))
        K = np.empty((T, n, 2 * n))
        xT = np.concatenate([qs[T], qds[T]])
        Vx, Vxx = self.cost.terminal_derivs(xT)
        u_lim = self.model.u_lim
        for i in range(T - 1, -1, -1):
            x = np.concatenate([qs[i], qds[i]])
            lx, lu, lxx, luu, lxu = self.cost.stage_derivs(x, us[i], i)
            Qx = lx + fx[i].T @ Vx
            Qu = lu + fu[i].T @ Vx
            Qxx = lxx + fx[i].T @ Vxx @ fx[i]
            Quu = luu + fu[i].T @ Vxx @ fu[i]
            Qux = lxu.T + fu[i].T @ Vxx @ fx[i]
            Quu_reg = Quu + reg * np.eye(n)
            try:
                cho = np.linalg.cholesky(Quu_reg)
            except np.linalg.LinAlgError:
                return None
            rhs = np.column_stack([Qu, Qux])
            sol = np.linalg.solve(cho.T, np.linalg.solve(cho, rhs))
            ki = -sol[:, 0]
            Ki = -sol[:, 1:]
            # actuator saturation: clamp the feedforward update, mute
            # feedback on saturated channels
            lo = -u_lim - us[i]
            hi = u_lim - us[i]
            clamped = np.clip(ki, lo, hi)
            saturated = np.abs(clamped - ki) > 1e-12
            ki = clamped
            if np.any(saturated):
                Ki[saturated, :] = 0.0
            k[i] = ki
            K[i] = Ki
            Vx = Qx + Ki.T @ Quu @ ki + Ki.T @ Qu + Qux.T @ ki
            Vxx = Qxx + Ki.T @ Quu @ Ki + Ki.T @ Qux + Qux.T @ Ki
            Vxx = 0.5 * (Vxx + Vxx.T)
        return k, K

    def optimize_tape(self, tape, max_iterations=None):
        """Run iLQR from a control tape. Returns (qs, qds, us, gaps, cost, trace)."""
        nominal = self.rollout_tape(tape)
        if nominal is None:
            raise SolveDiverged("initial rollout diverged")
        qs, qds, us, gaps, cost = nominal
        trace = [cost]
        reg = self.s.reg_init
        alphas = self.s.alphas()
        iters = max_iterations if max_iterations is not None else self.s.max_iterations
        for it in range(iters):
            fx, fu = self.linearize(qs, qds, us)
            bp = None
            while bp is None and reg <= self.s.reg_max:
                bp = self.backward(qs, qds, us, fx, fu, reg)
                if bp is None:
                    reg *= self.s.reg_growth
            if bp is None:
                break
            k, K = bp
            best = None
            for alpha in alphas:
                cand = self.rollout_policy(qs, qds, us, k, K, alpha)
                if cand is None:
                    continue
                if best is None or cand[4] < best[4]:
                    best = cand
            if best is not None and best[4] < cost - 1e-15:
                improvement = cost - best[4]
                qs, qds, us, gaps, cost = best
                trace.append(cost)
                reg = max(reg * self.s.reg_shrink, 1e-10)
                if improvement < self.s.tol_cost * max(1.0, abs(cost)):
                    break
            else:
                reg *= self.s.reg_growth
                if reg > self.s.reg_max:
                    break
        return qs, qds, us, gaps, cost, trace


def _gravity_comp_tape(model, x_start, T):
    from .dynamics import gravity_torque

    g = sim.clamp_controls(model, gravity_torque(model, x_start.q))
    return np.tile(g, (T, 1))


def _descend_contact_params(solver: _Ilqr, tape, params: ContactParams, sweeps: int):
    """Coordinate descent on (k, b, mu) against the fixed control tape.

    Bounded scalar minimization per parameter, biased toward zero by the
    parameter-norm cost terms. Returns the best parameters found.
    """
    if params.n_pairs == 0 or sweeps <= 0:
        return params
    best = params

    def cost_with(p: ContactParams) -> float:
        solver.cost.set_contact_params(p)
        out = solver.rollout_tape(tape)
        return np.inf if out is None else out[4]

    base = cost_with(best)
    bounds = {
        "k": tuple(max(v * 2.0, 1e-6) for v in params.k),
        "b": tuple(max(v * 2.0, 1e-6) for v in params.b),
        "mu": tuple(max(v * 2.0, 1e-6) for v in params.mu),
    }
    for _ in range(sweeps):
        improved = False
        for field_name in ("k", "b", "mu"):
            vals = list(getattr(best, field_name))
            for j in range(len(vals)):
                if getattr(params, field_name)[j] == 0.0:
                    continue  # never introduce force the scenario disabled
                hi = bounds[field_name][j]

                def fun(v):
                    trial = list(vals)
                    trial[j] = v
                    return cost_with(best.with_values(**{field_name: trial}))

                res = minimize_scalar(
                    fun,
                    bounds=(0.0, hi),
                    method="bounded",
                    options={"xatol": max(hi * 1e-2, 1e-9), "maxiter": 18},
                )
                if res.fun < base - 1e-12:
                    vals[j] = float(res.x)
                    best = best.with_values(**{field_name: vals})
                    base = res.fun
                    improved = True
        if not improved:
            break
    solver.cost.set_contact_params(best)
    return best


def solve(
    model: ArmModel,
    world: World,
    x_start: JointState,
    weights: CostWeights,
    contact_params: ContactParams,
    settings: SolveSettings,
    target_q,
    cell_center=None,
    init_controls=None,
    horizon: float | None = None,
    cost_model=None,
) -> Trajectory:
    """Solve the boundary-value problem from x_start toward target_q.

    Returns the best trajectory found whether or not the terminal cell was
    reached; `converged` reflects the cell test. The trajectory is the exact
    rollout of its own control spline.

    Raises:
        SolveDiverged: the initial guess cannot even be simulated.
    """
    target_q = np.asarray(target_q, dtype=float)
    T = settings.steps(horizon)
    if cost_model is None:
        cost_model = RiskNormCost(
            weights, model.n_joints, target_q, contact_params, settings.curvature_floor
        )
    else:
        cost_model.set_contact_params(contact_params)
    solver = _Ilqr(model, world, x_start, cost_model, settings, T)

    if init_controls is None:
        tape = _gravity_comp_tape(model, x_start, T)
    else:
        tape = np.atleast_2d(np.asarray(init_controls, dtype=float))
        if tape.shape[0] < T:  # pad with the last control
            pad = np.tile(tape[-1] if tape.size else np.zeros(model.n_joints), (T - tape.shape[0], 1))
            tape = np.vstack([tape, pad]) if tape.size else pad
        elif tape.shape[0] > T:
            tape = tape[:T]

    params = contact_params
    qs = qds = us = gaps = None
    cost = np.inf
    trace = []
    total_iters = 0
    rounds = settings.outer_rounds if (
        settings.optimize_contact and params.n_pairs > 0 and any(v > 0 for v in params.k + params.b + params.mu)
    ) else 1
    for rnd in range(max(rounds, 1)):
        qs, qds, us, gaps, cost, tr = solver.optimize_tape(tape)
        trace.extend(tr)
        total_iters += len(tr) - 1
        tape = us
        if rnd < rounds - 1:
            new_params = _descend_contact_params(solver, tape, params, settings.contact_sweeps)
            if new_params == params:
                break
            params = new_params

    # project onto the spline basis and re-roll for exact reproducibility
    times = np.arange(T + 1) * settings.dt
    spline = ControlSpline.from_tape(times[:T], us, settings.n_knots, settings.spline_kind)
    final_tape = sim.clamp_controls(model, spline.eval_many(times[:T]))
    final = solver.rollout_tape(final_tape)
    if final is None:
        raise SolveDiverged("spline projection rollout diverged")
    qs, qds, us, gaps, cost = final

    center = np.asarray(cell_center, dtype=float) if cell_center is not None else target_q
    converged = bool(
        np.all(np.abs(qs[-1] - center) <= settings.cell_tolerance * (1 + 1e-9) + 1e-12)
    )
    return Trajectory(
        times=times,
        qs=qs,
        qds=qds,
        us=us,
        spline=spline,
        contact_params=params,
        total_cost=float(cost),
        converged=converged,
        target_q=target_q,
        cell_center=center,
        half_width=settings.cell_tolerance,
        min_gaps=gaps,
        iterations=total_iters,
        cost_trace=tuple(trace),
    )


def warm_start_solve(
    model: ArmModel,
    world: World,
    prefix: Trajectory,
    suffix: Trajectory,
    weights: CostWeights,
    settings: SolveSettings,
    cost_model=None,
) -> Trajectory:
    """Re-optimize the concatenation of a start-rooted prefix and a new tail.

    The seam state and all intermediate waypoints are relaxed; only the
    suffix's terminal target is kept. The concatenated control tape seeds
    the optimization and the horizon is the combined duration.
    """
    if suffix.n_steps == 0:
        target_q = prefix.target_q if prefix.target_q is not None else prefix.qs[-1]
        return solve(
            model,
            world,
            prefix.initial_state,
            weights,
            suffix.contact_params,
            settings,
            target_q=target_q,
            cell_center=prefix.cell_center,
            init_controls=prefix.us,
            horizon=prefix.n_steps * settings.dt,
            cost_model=cost_model,
        )
    tape = np.vstack([prefix.us, suffix.us]) if prefix.n_steps else suffix.us
    horizon = tape.shape[0] * settings.dt
    return solve(
        model,
        world,
        prefix.initial_state,
        weights,
        suffix.contact_params,
        settings,
        target_q=suffix.target_q if suffix.target_q is not None else suffix.qs[-1],
        cell_center=suffix.cell_center,
        init_controls=tape,
        horizon=horizon,
        cost_model=cost_model,
    )
