"""World geometry: convex obstacles, signed-gap contact queries, and the
contact-surface band.

The signed gap psi of a (link capsule, obstacle) pair is positive when
separated and negative when penetrating; the band |psi| <= surface_band is
the sliver of near-touching states where sustained contact is permitted.
States deeper than the band are collisions, which the planner either rejects
or projects back out to the band along the penetration gradient.

Capsule-vs-convex-polygon distance is exact: the separated branch minimises
over segment/edge feature pairs, the penetrating branch maximises the
concave piecewise-linear interior depth along the capsule axis by
enumerating its breakpoints.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .dynamics import ArmModel, Chain, JointState


class ProjectionFailure(RuntimeError):
    """Surface projection exceeded its iteration budget."""


class Classification(enum.Enum):
    FREE = "free"
    SURFACE = "surface"
    DEEP_COLLISION = "deep_collision"


@dataclass(frozen=True)
class ConvexPolygon:
    """Convex obstacle with CCW-ordered vertices in the world frame."""

    vertices: tuple

    def __post_init__(self):
        verts = tuple((float(x), float(y)) for x, y in self.vertices)
        object.__setattr__(self, "vertices", verts)
        if len(verts) < 3:
            raise ValueError("polygon needs at least 3 vertices")
        v = np.array(verts)
        e = np.roll(v, -1, axis=0) - v
        cross = e[:, 0] * np.roll(e, -1, axis=0)[:, 1] - e[:, 1] * np.roll(e, -1, axis=0)[:, 0]
        area2 = float(np.sum(v[:, 0] * np.roll(v[:, 1], -1) - np.roll(v[:, 0], -1) * v[:, 1]))
        if area2 <= 1e-12:
            raise ValueError("polygon must be CCW and non-degenerate")
        if np.any(cross < -1e-12):
            raise ValueError("polygon must be convex")
        if np.any(np.hypot(e[:, 0], e[:, 1]) < 1e-12):
            raise ValueError("polygon has a zero-length edge")

    @staticmethod
    def box(xmin: float, ymin: float, xmax: float, ymax: float) -> "ConvexPolygon":
        if not (xmax > xmin and ymax > ymin):
            raise ValueError("box must have positive extent")
        return ConvexPolygon(((xmin, ymin), (xmax, ymin), (xmax, ymax), (xmin, ymax)))

    @cached_property
    def verts(self) -> np.ndarray:
        return np.array(self.vertices)

    @cached_property
    def edge_starts(self) -> np.ndarray:
        return self.verts

    @cached_property
    def edge_ends(self) -> np.ndarray:
        return np.roll(self.verts, -1, axis=0)

    @cached_property
    def edge_vecs(self) -> np.ndarray:
        return self.edge_ends - self.edge_starts

    @cached_property
    def normals(self) -> np.ndarray:
        """Unit outward edge normals (CCW winding)."""
        e = self.edge_vecs
        n = np.stack([e[:, 1], -e[:, 0]], axis=-1)
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    @cached_property
    def _scalar(self):
        """Plain-float edge tables for the scalar distance kernel."""
        vx = tuple(v[0] for v in self.vertices)
        vy = tuple(v[1] for v in self.vertices)
        E = len(self.vertices)
        ex, ey, elen2, nx, ny = [], [], [], [], []
        for i in range(E):
            j = (i + 1) % E
            dx, dy = vx[j] - vx[i], vy[j] - vy[i]
            ex.append(dx)
            ey.append(dy)
            elen2.append(dx * dx + dy * dy)
            ln = (dx * dx + dy * dy) ** 0.5
            nx.append(dy / ln)
            ny.append(-dx / ln)
        return vx, vy, tuple(ex), tuple(ey), tuple(elen2), tuple(nx), tuple(ny)


PAYLOAD_BODY = -1  # sentinel: contact body is the payload disc at the arm tip


@dataclass(frozen=True)
class World:
    """Immutable obstacle set plus contact bookkeeping.

    contact_pairs lists (body, obstacle_index) pairs eligible for contact,
    where body is a link index or PAYLOAD_BODY. The hard contact engine
    (spring-damper penalty with Coulomb friction) uses hard_stiffness /
    hard_damping; these are deliberately much stiffer than the tunable
    virtual contact model.
    """

    obstacles: tuple = ()
    contact_pairs: tuple = ()
    surface_band: float = 5e-3
    hard_stiffness: float = 2.0e4
    hard_damping: float = 2.0e2
    stiction_viscosity: float = 1.0e3
    slide_velocity: float = 1e-3

    def __post_init__(self):
        if self.surface_band <= 0:
            raise ValueError("surface_band must be positive")
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        pairs = tuple((int(b), int(o)) for b, o in self.contact_pairs)
        object.__setattr__(self, "contact_pairs", pairs)
        for b, o in pairs:
            if not (0 <= o < len(self.obstacles)):
                raise ValueError(f"contact pair references missing obstacle {o}")
            if b < PAYLOAD_BODY:
                raise ValueError(f"bad contact body {b}")

    @property
    def n_pairs(self) -> int:
        return len(self.contact_pairs)


@dataclass
class ContactQuery:
    """Signed gap state of one contact pair at one configuration."""

    pair_index: int
    psi: float
    psidot: float
    witness_point: np.ndarray
    normal: np.ndarray
    link: int
    arc: float





def capsule_polygon_gap(a, b, radius: float, poly: ConvexPolygon):
    """Signed gap between a capsule (segment a->b, radius) and a polygon.

    Returns (psi, t, axis_point, normal, grad_normal): the gap [m], the
    segment parameter of the closest/deepest axis point, that point, the
    unit normal pointing from the obstacle toward free space, and the
    (possibly non-unit) direction such that d psi / d q = grad_normal^T J.
    The two differ only when the deepest point of a penetrating axis sits
    on a kink between two edge-depth planes, where the gap gradient is the
    dual-weighted blend of the active edge normals.
    """
    ax, ay = float(a[0]), float(a[1])
    bx, by = float(b[0]), float(b[1])
    vx, vy, ex, ey, elen2, nx, ny = poly._scalar
    E = len(vx)

    def inside(px, py):
        for i in range(E):
            if ex[i] * (py - vy[i]) - ey[i] * (px - vx[i]) < -1e-12:
                return False
        return True

    intersecting = inside(ax, ay) or inside(bx, by)
    if not intersecting:
        dx, dy = bx - ax, by - ay
        for i in range(E):
            r1 = dx * (vy[i] - ay) - dy * (vx[i] - ax)
            j = (i + 1) % E
            r2 = dx * (vy[j] - ay) - dy * (vx[j] - ax)
            s1 = ex[i] * (ay - vy[i]) - ey[i] * (ax - vx[i])
            s2 = ex[i] * (by - vy[i]) - ey[i] * (bx - vx[i])
            if r1 * r2 < 0.0 and s1 * s2 < 0.0:
                intersecting = True
                break

    if not intersecting:
        # closest feature pair: capsule endpoints vs edges, vertices vs axis
        best_d2 = np.inf
        best = None  # (t_ab, axis_x, axis_y, poly_x, poly_y)
        for px, py, t_ab in ((ax, ay, 0.0), (bx, by, 1.0)):
            for i in range(E):
                t = ((px - vx[i]) * ex[i] + (py - vy[i]) * ey[i]) / elen2[i]
                t = 0.0 if t < 0.0 else (1.0 if t > 1.0 else t)
                cx, cy = vx[i] + t * ex[i], vy[i] + t * ey[i]
                d2 = (px - cx) ** 2 + (py - cy) ** 2
                if d2 < best_d2:
                    best_d2 = d2
                    best = (t_ab, px, py, cx, cy)
        dx, dy = bx - ax, by - ay
        dd = dx * dx + dy * dy
        for i in range(E):
            if dd > 1e-18:
                t = ((vx[i] - ax) * dx + (vy[i] - ay) * dy) / dd
                t = 0.0 if t < 0.0 else (1.0 if t > 1.0 else t)
            else:
                t = 0.0
            cx, cy = ax + t * dx, ay + t * dy
            d2 = (vx[i] - cx) ** 2 + (vy[i] - cy) ** 2
            if d2 < best_d2:
                best_d2 = d2
                best = (t, cx, cy, vx[i], vy[i])
        t_ab, axx, axy, pxx, pxy = best
        dist = best_d2 ** 0.5
        if dist > 1e-12:
            normal = np.array([(axx - pxx) / dist, (axy - pxy) / dist])
        else:
            # touching: fall back to the nearest edge's outward normal
            i = min(range(E), key=lambda i_: abs((axx - vx[i_]) * nx[i_] + (axy - vy[i_]) * ny[i_]))
            normal = np.array([nx[i], ny[i]])
        return dist - radius, t_ab, np.array([axx, axy]), normal, normal

    # Penetrating: maximise the interior depth min_e(-n_e . (p(t) - v_e)),
    # a concave piecewise-linear function of t whose maximum sits at t=0,
    # t=1, or a crossing of two edge-depth lines.
    dx, dy = bx - ax, by - ay
    c = [nx[i] * (vx[i] - ax) + ny[i] * (vy[i] - ay) for i in range(E)]
    g = [-(nx[i] * dx + ny[i] * dy) for i in range(E)]
    cands = [0.0, 1.0]
    for i in range(E):
        for j in range(i + 1, E):
            dg = g[i] - g[j]
            if abs(dg) > 1e-14:
                t = (c[j] - c[i]) / dg
                if 0.0 < t < 1.0:
                    cands.append(t)
    depth = -np.inf
    t_ab = 0.0
    e_star = 0
    for t in cands:
        dmin = np.inf
        emin = 0
        for i in range(E):
            d = c[i] + t * g[i]
            if d < dmin:
                dmin = d
                emin = i
        if dmin > depth:
            depth = dmin
            t_ab = t
            e_star = emin
    depth = max(depth, 0.0)
    axis_pt = np.array([ax + t_ab * dx, ay + t_ab * dy])
    unit_normal = np.array([nx[e_star], ny[e_star]])
    grad_normal = unit_normal
    if 1e-12 < t_ab < 1.0 - 1e-12:
        active = [i for i in range(E) if c[i] + t_ab * g[i] <= depth + 1e-9]
        if len(active) >= 2:
            ga = max(active, key=lambda i_: g[i_])
            gb = min(active, key=lambda i_: g[i_])
            if g[ga] > 0.0 > g[gb]:
                lam = -g[gb] / (g[ga] - g[gb])
                grad_normal = np.array(
                    [lam * nx[ga] + (1.0 - lam) * nx[gb], lam * ny[ga] + (1.0 - lam) * ny[gb]]
                )
    return -depth - radius, t_ab, axis_pt, unit_normal, grad_normal



def _body_capsule(model: ArmModel, chain: Chain, body: int):
    """(a, b, radius, link, arc_of(t)) for a contact body."""
    n = model.n_joints
    if body == PAYLOAD_BODY:
        tip = chain.joints[n]
        return tip, tip, model.payload_radius, n - 1, lambda t: model.link_lengths[n - 1]
    if not (0 <= body < n):
        raise ValueError(f"bad contact body {body}")
    L = model.link_lengths[body]
    return chain.joints[body], chain.joints[body + 1], model.link_radii[body], body, lambda t: t * L


def query_contacts(model: ArmModel, world: World, x: JointState, chain: Chain | None = None):
    """Evaluate every contact pair at x. Returns a list of ContactQuery."""
    if chain is None:
        chain = Chain(model, x.q)
    out = []
    for idx, (body, obs) in enumerate(world.contact_pairs):
        a, b, radius, link, arc_of = _body_capsule(model, chain, body)
        psi, t, axis_pt, normal, grad_n = capsule_polygon_gap(a, b, radius, world.obstacles[obs])
        arc = arc_of(t)
        J = chain.point_jacobian(link, arc)
        psidot = float(grad_n @ (J @ x.qdot))
        out.append(
            ContactQuery(
                pair_index=idx,
                psi=float(psi),
                psidot=psidot,
                witness_point=axis_pt - radius * normal,
                normal=normal,
                link=link,
                arc=arc,
            )
        )
    return out


def min_gap(model: ArmModel, world: World, q: np.ndarray, chain: Chain | None = None) -> float:
    """Smallest signed gap over all contact pairs (inf when no pairs)."""
    if world.n_pairs == 0:
        return np.inf
    if chain is None:
        chain = Chain(model, np.asarray(q, dtype=float))
    best = np.inf
    for body, obs in world.contact_pairs:
        a, b, radius, _, _ = _body_capsule(model, chain, body)
        psi = capsule_polygon_gap(a, b, radius, world.obstacles[obs])[0]
        if psi < best:
            best = psi
    return float(best)


def classify(model: ArmModel, world: World, x: JointState) -> Classification:
    """Partition a state into free / surface-band / deep collision."""
    return classify_q(model, world, x.q)


def classify_q(model: ArmModel, world: World, q) -> Classification:
    gap = min_gap(model, world, np.asarray(q, dtype=float))
    beta = world.surface_band
    if gap > beta:
        return Classification.FREE
    if gap >= -beta:
        return Classification.SURFACE
    return Classification.DEEP_COLLISION


def project_to_surface(
    model: ArmModel,
    world: World,
    x: JointState,
    max_iters: int = 200,
    step_scale: float = 0.25,
) -> JointState:
    """Push a colliding configuration out to the surface band.

    Walks q along the penetration gradient of the deepest pair until the
    state classifies as Surface (already-Surface/Free inputs are returned
    unchanged). Velocities are preserved except that the normal-direction
    component of each active contact is removed.

    Raises:
        ProjectionFailure: no surface state reached within max_iters.
    """
    q = x.q.copy()
    label = classify_q(model, world, q)
    if label is not Classification.DEEP_COLLISION:
        return x.copy()
    beta = world.surface_band
    for _ in range(max_iters):
        chain = Chain(model, q)
        deepest = None
        for idx, (body, obs) in enumerate(world.contact_pairs):
            a, b, radius, link, arc_of = _body_capsule(model, chain, body)
            psi, t, _, _, grad_n = capsule_polygon_gap(a, b, radius, world.obstacles[obs])
            if deepest is None or psi < deepest[0]:
                deepest = (psi, grad_n, link, arc_of(t))
        psi, normal, link, arc = deepest
        if psi >= -beta:
            break
        J = chain.point_jacobian(link, arc)
        grad = J.T @ normal  # d psi / d q
        denom = float(grad @ grad)
        if denom < 1e-14:
            raise ProjectionFailure("degenerate penetration gradient")
        q = q - step_scale * psi * grad / denom
        q = np.clip(q, model.q_lower, model.q_upper)
    else:
        raise ProjectionFailure(f"no surface state within {max_iters} iterations")
    if classify_q(model, world, q) is not Classification.SURFACE:
        raise ProjectionFailure("projection exited the collision but missed the band")
    qd = x.qdot.copy()
    chain = Chain(model, q)
    for idx, (body, obs) in enumerate(world.contact_pairs):
        a, b, radius, link, arc_of = _body_capsule(model, chain, body)
        psi, t, _, _, grad_n = capsule_polygon_gap(a, b, radius, world.obstacles[obs])
        if abs(psi) <= beta:
            grad = chain.point_jacobian(link, arc_of(t)).T @ grad_n
            denom = float(grad @ grad)
            if denom > 1e-14:
                qd = qd - grad * float(grad @ qd) / denom
    return JointState(q, qd)


def trajectory_is_valid(model: ArmModel, world: World, traj) -> bool:
    """True iff every sample is within limits and never deeper than the band.

    Surface-band contact counts as valid. Uses the per-sample minimum gaps
    recorded at rollout time when the trajectory carries them, recomputing
    otherwise.
    """
    qs = np.asarray(traj.qs)
    qds = np.asarray(traj.qds)
    if qs.size == 0:
        raise ValueError("empty trajectory")
    if np.any(qs < model.q_lower - 1e-9) or np.any(qs > model.q_upper + 1e-9):
        return False
    if np.any(np.abs(qds) > model.qd_lim + 1e-9):
        return False
    beta = world.surface_band
    gaps = getattr(traj, "min_gaps", None)
    if gaps is not None:
        return bool(np.all(np.asarray(gaps) >= -beta))
    return all(min_gap(model, world, q) >= -beta for q in qs)


def segment_is_traversable(
    model: ArmModel, world: World, qa, qb, sample_step: float
) -> bool:
    """Straight joint-space segment check: no sample may be a deep collision."""
    qa = np.asarray(qa, dtype=float)
    qb = np.asarray(qb, dtype=float)
    dist = float(np.linalg.norm(qb - qa))
    n = max(2, int(np.ceil(dist / max(sample_step, 1e-9))) + 1)
    beta = world.surface_band
    for t in np.linspace(0.0, 1.0, n):
        q = qa + t * (qb - qa)
        if not model.in_joint_limits(q, margin=1e-12):
            return False
        if min_gap(model, world, q) < -beta:
            return False
    return True
