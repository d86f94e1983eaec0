"""RRT* fingertip trajectory sampling and multi-finger grasp assembly.

Per finger: sample a collision-free Cartesian path from the start pose to a
pre-contact standoff (the seed target backed off by the clearance along the
approach), pick the waypoint closest to the segmented cloud, snap it to the
surface for the contact target, score it, and solve IK. The hand-level pass
then enforces inter-finger separation and the box-overlap consistency rule,
demoting lower-scored candidates (and re-sampling when a finger runs out)
until the hypothesis is clean or the round budget is exhausted.

Collision semantics: a path sample collides when any object point lies
within the fingertip radius, or the sample is inside an obstacle box. The
consistency pass uses the literal box form: fingertip point-boxes inflated
by the radius versus the object BVH and each other.

Determinism: every random draw flows from rng_seed (per finger and
re-sample round via SeedSequence), so results are bit-for-bit reproducible
whenever max_samples, not the wall clock, is the binding sampling limit.
"""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Sequence

import numpy as np

from .errors import NoCandidatesError, NoTrajectoryFoundError
from .geometry import (Aabb, Ray, RigidTransform, aabb_from_points,
                       aabb_overlap, ray_aabb)
from .kinematics import (HandModel, IkResult, IkSettings, dls_ik,
                         open_hand_configuration)
from .perception import Bvh, NormalField


@dataclass(frozen=True)
class GraspSeed:
    """Candidate contact position plus unit approach direction (palm frame)."""

    t: np.ndarray
    approach: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float).reshape(3)
        a = np.asarray(self.approach, dtype=float).reshape(3)
        if abs(np.linalg.norm(a) - 1.0) > 1e-9:
            raise ValueError("approach direction must be unit length")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "approach", a)


@dataclass(frozen=True)
class PlannerWeights:
    alpha: float = 1.0
    beta: float = 0.5
    gamma: float = 0.5

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or self.gamma < 0:
            raise ValueError("weights must be >= 0")
        if self.alpha == self.beta == self.gamma == 0:
            raise ValueError("at least one weight must be positive")


@dataclass(frozen=True)
class RrtConfig:
    """Sampler knobs. Distances in meters, time budget in milliseconds.

    The loop stops at max_samples or time_budget_ms, whichever comes first;
    results are bit-for-bit reproducible when max_samples binds (the default
    sizing on desk hardware).
    """

    step: float = 0.02
    goal_bias: float = 0.2
    rewire_radius: float = 0.05
    max_samples: int = 500
    time_budget_ms: float = 2000.0
    goal_tolerance: float = 0.01
    collision_check_resolution: float = 0.004
    fingertip_radius: float = 0.008
    clearance: float = 0.012
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("step", "rewire_radius", "time_budget_ms", "goal_tolerance",
                     "collision_check_resolution", "fingertip_radius", "clearance"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if self.max_samples < 1:
            raise ValueError("max_samples must be >= 1")
        if not 0.0 <= self.goal_bias <= 1.0:
            raise ValueError("goal_bias must be within [0, 1]")


@dataclass(frozen=True)
class FingerTrajectory:
    """Waypoint polyline for one fingertip; cost is the path length."""

    waypoints: np.ndarray
    cost: float
    finger_id: int = 0

    def __post_init__(self):
        w = np.asarray(self.waypoints, dtype=float)
        object.__setattr__(self, "waypoints", w)


@dataclass(frozen=True)
class CandidateEndpoint:
    """Scored contact pose; score == -alpha*d_min + beta*phi - gamma*kappa."""

    position: np.ndarray
    rotation: np.ndarray
    d_min: float
    phi: float
    kappa: float
    score: float
    weights: PlannerWeights


class EndpointSelection(NamedTuple):
    trajectory_index: int
    waypoint_index: int
    point: np.ndarray
    distance: float


@dataclass(frozen=True)
class FingerPlan:
    finger_id: int
    trajectory: FingerTrajectory | None
    standoff: np.ndarray | None
    endpoint: CandidateEndpoint | None
    ik: IkResult | None
    converged: bool
    failure: str | None = None
    ik_ms: float = 0.0
    plan_ms: float = 0.0


@dataclass(frozen=True)
class HandPlanRequest:
    seeds: tuple[GraspSeed, ...]
    starts: tuple[np.ndarray, ...]
    bvh: Bvh
    normals: NormalField
    hand: HandModel
    weights: PlannerWeights
    cfg: RrtConfig
    min_sep: float
    max_resample: int
    ik_settings: IkSettings
    obstacles: tuple[Aabb, ...]
    q_starts: tuple[np.ndarray, ...] | None
    parallel: bool


@dataclass(frozen=True)
class GraspHypothesis:
    fingers: tuple[FingerPlan, ...]
    aggregate_score: float
    feasible: bool
    failure_stage: str | None = None
    request: HandPlanRequest | None = None
    relaxations_applied: tuple[str, ...] = ()


# -- collision predicate ------------------------------------------------------

class _CollisionChecker:
    """Sphere-fingertip clearance against the cloud plus obstacle boxes.

    The working radius is padded by half the check resolution: the distance
    field is 1-Lipschitz, so clearing radius + res/2 at samples spaced res
    apart guarantees clearance > radius everywhere along the segment.
    """

    def __init__(self, bvh: Bvh, obstacles: Sequence[Aabb], radius: float,
                 resolution: float):
        self.bvh = bvh
        self.obstacles = list(obstacles)
        self.radius = radius + 0.5 * resolution
        self.resolution = resolution

    def points_free(self, pts: np.ndarray) -> bool:
        pts = np.atleast_2d(pts)
        for box in self.obstacles:
            if box.contains_points(pts).any():
                return False
        return not self.bvh.any_within_radius(pts, self.radius).any()

    def segment_free(self, a: np.ndarray, b: np.ndarray) -> bool:
        length = float(np.linalg.norm(b - a))
        steps = max(2, int(np.ceil(length / self.resolution)) + 1)
        pts = a[None, :] + np.linspace(0.0, 1.0, steps)[:, None] * (b - a)[None, :]
        return self.points_free(pts)


class _RrtStar:
    """Single-finger RRT* in Cartesian fingertip space."""

    def __init__(self, start, goal, object_bvh: Bvh, obstacles: Sequence[Aabb],
                 cfg: RrtConfig, rng: np.random.Generator,
                 workspace: Aabb | None = None, audit: bool = False):
        self.start = np.asarray(start, dtype=float).reshape(3)
        self.goal = np.asarray(goal, dtype=float).reshape(3)
        self.cfg = cfg
        self.rng = rng
        self.checker = _CollisionChecker(object_bvh, obstacles,
                                         cfg.fingertip_radius,
                                         cfg.collision_check_resolution)
        if not self.checker.points_free(self.start):
            raise ValueError("start position violates the inflated-object / obstacle precondition")
        if workspace is None:
            anchors = np.vstack([self.start, self.goal,
                                 object_bvh.node_min[0], object_bvh.node_max[0]])
            workspace = aabb_from_points(anchors).inflated(max(4 * cfg.step, 0.06))
        self.workspace = workspace
        cap = cfg.max_samples + 64
        self.pos = np.empty((cap, 3))
        self.parent = np.full(cap, -1, dtype=int)
        self.cost = np.full(cap, np.inf)
        self.children: list[list[int]] = []
        self.n = 0
        self.goal_nodes: list[int] = []
        self.audit = audit
        self.cost_snapshots: list[np.ndarray] = []
        self._add_node(self.start, -1, 0.0)

    def _add_node(self, p: np.ndarray, parent: int, cost: float) -> int:
        if self.n >= len(self.pos):
            self.pos = np.vstack([self.pos, np.empty_like(self.pos)])
            self.parent = np.concatenate([self.parent, np.full(len(self.parent), -1, int)])
            self.cost = np.concatenate([self.cost, np.full(len(self.cost), np.inf)])
        i = self.n
        self.pos[i] = p
        self.parent[i] = parent
        self.cost[i] = cost
        self.children.append([])
        if parent >= 0:
            self.children[parent].append(i)
        self.n += 1
        if np.linalg.norm(p - self.goal) <= self.cfg.goal_tolerance:
            self.goal_nodes.append(i)
        return i

    def _reparent(self, node: int, new_parent: int, new_cost: float) -> None:
        old = self.parent[node]
        if old >= 0:
            self.children[old].remove(node)
        self.parent[node] = new_parent
        self.children[new_parent].append(node)
        delta = new_cost - self.cost[node]
        # propagate the improvement to the whole subtree
        stack = [node]
        while stack:
            i = stack.pop()
            self.cost[i] += delta
            stack.extend(self.children[i])

    def _seed_polyline(self, pts: np.ndarray) -> None:
        """Insert a collision-free polyline from the start as a node chain."""
        for a, b in zip(pts[:-1], pts[1:]):
            if not self.checker.segment_free(a, b):
                return
        parent = 0
        acc = 0.0
        for p in pts[1:]:
            acc = self.cost[parent] + float(np.linalg.norm(p - self.pos[parent]))
            parent = self._add_node(p, parent, acc)

    def _subdivided(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        length = float(np.linalg.norm(b - a))
        pieces = max(1, int(np.ceil(length / self.cfg.step)))
        return a[None, :] + np.linspace(0.0, 1.0, pieces + 1)[:, None] * (b - a)[None, :]

    def _seed_primitives(self) -> None:
        # straight-line approach
        self._seed_polyline(self._subdivided(self.start, self.goal))
        # one lateral arc (quadratic bezier) to step around small occluders
        d = self.goal - self.start
        dist = np.linalg.norm(d)
        if dist > 1e-9:
            ref = np.array([0.0, 0.0, 1.0])
            if abs(np.dot(d / dist, ref)) > 0.95:
                ref = np.array([1.0, 0.0, 0.0])
            lateral = np.cross(d / dist, ref)
            lateral /= np.linalg.norm(lateral)
            ctrl = self.start + 0.5 * d + 0.45 * dist * lateral
            s = np.linspace(0.0, 1.0, max(4, int(np.ceil(1.6 * dist / self.cfg.step)) + 1))[:, None]
            arc = ((1 - s) ** 2) * self.start + 2 * s * (1 - s) * ctrl + (s ** 2) * self.goal
            self._seed_polyline(arc)

    def plan(self, explore: bool = False) -> list[np.ndarray]:
        """Grow the tree; with explore=True the near-optimal early exit is
        disabled so re-sampling rounds actually diversify the candidates."""
        cfg = self.cfg
        t0 = time.perf_counter()
        budget = cfg.time_budget_ms / 1000.0
        self._seed_primitives()
        straight = float(np.linalg.norm(self.goal - self.start))

        for _ in range(cfg.max_samples):
            if time.perf_counter() - t0 > budget:
                break
            if (not explore and self.goal_nodes
                    and min(self.cost[g] for g in self.goal_nodes) <= 1.02 * straight):
                break  # already essentially optimal
            if self.audit:
                self.cost_snapshots.append(self.cost[:self.n].copy())

            if self.rng.random() < cfg.goal_bias:
                sample = self.goal
            else:
                sample = self.rng.uniform(self.workspace.min, self.workspace.max)
            diff = self.pos[:self.n] - sample
            d2 = np.einsum("ij,ij->i", diff, diff)
            nearest = int(np.argmin(d2))
            direction = sample - self.pos[nearest]
            dist = float(np.linalg.norm(direction))
            if dist < 1e-12:
                continue
            new = self.pos[nearest] + direction * min(1.0, cfg.step / dist)
            if not self.checker.segment_free(self.pos[nearest], new):
                continue

            # choose best parent among near neighbors
            diff = self.pos[:self.n] - new
            nd2 = np.einsum("ij,ij->i", diff, diff)
            near = np.flatnonzero(nd2 <= cfg.rewire_radius ** 2)
            if len(near) > 8:
                near = near[np.argsort(nd2[near], kind="stable")[:8]]
            best_parent, best_cost = nearest, self.cost[nearest] + float(np.sqrt(nd2[nearest]))
            for i in near:
                c = self.cost[i] + float(np.sqrt(nd2[i]))
                if c < best_cost and self.checker.segment_free(self.pos[i], new):
                    best_parent, best_cost = int(i), c
            node = self._add_node(new, best_parent, best_cost)

            # rewire neighbors through the new node when it shortens them
            for i in near:
                if i == best_parent:
                    continue
                c = best_cost + float(np.sqrt(nd2[i]))
                if c < self.cost[i] and self.checker.segment_free(new, self.pos[i]):
                    self._reparent(int(i), node, c)

            # opportunistic exact-goal connection
            gd = float(np.linalg.norm(self.goal - new))
            if 0 < gd <= cfg.step and self.checker.segment_free(new, self.goal):
                self._add_node(self.goal, node, best_cost + gd)

        paths = []
        for g in sorted(self.goal_nodes, key=lambda i: (self.cost[i], i)):
            chain = []
            i = g
            while i >= 0:
                chain.append(self.pos[i].copy())
                i = self.parent[i]
            chain.reverse()
            pts = [chain[0]]
            for a, b in zip(chain[:-1], chain[1:]):
                pts.extend(self._subdivided(a, b)[1:])
            paths.append(np.array(pts))
        return paths


def _path_cost(waypoints: np.ndarray) -> float:
    return float(np.linalg.norm(np.diff(waypoints, axis=0), axis=1).sum())


def rrt_star(start, seed: GraspSeed, object_bvh: Bvh, obstacles: Sequence[Aabb],
             cfg: RrtConfig, finger_id: int = 0,
             rng: np.random.Generator | None = None,
             audit: bool = False, max_paths: int = 8,
             explore: bool = False) -> list[FingerTrajectory]:
    """Sample collision-free fingertip trajectories toward the standoff goal.

    The goal is seed.t backed off by the configured clearance along the
    approach direction; returned trajectories end within goal_tolerance of
    it and are sorted by path length. Raises NoTrajectoryFoundError when the
    budget expires without reaching the goal region.
    """
    if rng is None:
        rng = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence([cfg.rng_seed, finger_id])))
    goal = seed.t - cfg.clearance * seed.approach
    tree = _RrtStar(start, goal, object_bvh, obstacles, cfg, rng, audit=audit)
    paths = tree.plan(explore=explore)
    if not paths:
        raise NoTrajectoryFoundError(
            f"no collision-free trajectory within {cfg.max_samples} samples / "
            f"{cfg.time_budget_ms} ms")
    out = [FingerTrajectory(waypoints=p, cost=_path_cost(p), finger_id=finger_id)
           for p in paths[:max_paths]]
    out.sort(key=lambda t: t.cost)
    return out


def approach_frame(approach, up=(0.0, 0.0, 1.0), fallback=(1.0, 0.0, 0.0)) -> np.ndarray:
    """Right-handed fingertip frame with the z axis along -approach.

    The x axis is the up-vector Gram-Schmidt-projected into the contact
    plane; a degenerate alignment (approach parallel to up) falls back to
    the fallback axis. Pass a finger-specific up-vector (see
    curl_plane_up_hint) so the roll of the target stays reachable for
    obliquely mounted digits like the thumb.
    """
    a = np.asarray(approach, dtype=float)
    a = a / np.linalg.norm(a)
    z = -a
    u = np.asarray(up, dtype=float)
    x = u - np.dot(u, z) * z
    if np.linalg.norm(x) < 1e-6:
        u = np.asarray(fallback, dtype=float)
        x = u - np.dot(u, z) * z
    x = x / np.linalg.norm(x)
    y = np.cross(z, x)
    return np.column_stack([x, y, z])


def flexion_axis_world(chain) -> np.ndarray:
    """World direction of the chain's first flexion axis at rest.

    The first joint whose axis is not near the palm z (abduction) axis
    defines the curl plane; its normal is the only roll the fingertip can
    actually present, so endpoint frames are built against it.
    """
    q0 = np.zeros(chain.dof)
    frames = chain.joint_frames(q0)
    palm_z = np.array([0.0, 0.0, 1.0])
    for frame, joint in zip(frames, chain.joints):
        axis_w = frame.rotation @ joint.axis
        if abs(float(axis_w @ palm_z)) < 0.9:
            return axis_w
    return frames[-1].rotation @ chain.joints[-1].axis


def curl_plane_up_hint(chain, approach) -> np.ndarray:
    """Up-vector for approach_frame that keeps the roll in the curl plane."""
    a = np.asarray(approach, dtype=float)
    a = a / np.linalg.norm(a)
    hint = np.cross(flexion_axis_world(chain), -a)
    norm = np.linalg.norm(hint)
    if norm < 1e-6:
        return np.array([0.0, 0.0, 1.0])
    return hint / norm


def score_endpoint(t, approach, bvh: Bvh, normals: NormalField,
                   weights: PlannerWeights, clearance: float,
                   patch_radius: float = 0.016, up=(0.0, 0.0, 1.0)) -> CandidateEndpoint:
    """Composite contact score: -alpha*d_min + beta*|n.a| - gamma*kappa.

    d_min is the distance to the nearest cloud point, phi the absolute
    cosine between that point's normal and the approach, and kappa a
    clearance penalty max(0, 1 - c/clearance) where c is the distance from t
    to the nearest point OUTSIDE the contact's own surface patch (points
    within patch_radius of the nearest point). kappa is 0 when no such
    point exists.
    """
    t = np.asarray(t, dtype=float).reshape(3)
    a = np.asarray(approach, dtype=float)
    a = a / np.linalg.norm(a)
    idx, d_min = bvh.nearest(t)
    n_hat = normals.normals[idx]
    phi = float(abs(np.dot(n_hat, a)))
    p_star = bvh.points[idx]
    patch = bvh.within_radius_union(p_star[None, :], patch_radius)
    mask = np.ones(len(bvh.points), dtype=bool)
    mask[patch] = False
    if mask.any():
        rest = bvh.points[mask] - t
        c = float(np.sqrt(np.einsum("ij,ij->i", rest, rest).min()))
        kappa = max(0.0, 1.0 - c / clearance)
    else:
        kappa = 0.0
    score = -weights.alpha * d_min + weights.beta * phi - weights.gamma * kappa
    return CandidateEndpoint(position=t, rotation=approach_frame(a, up),
                             d_min=float(d_min), phi=phi, kappa=float(kappa),
                             score=float(score), weights=weights)


def visibility_check(camera, t, occluder_boxes: Sequence[Aabb]) -> bool:
    """True iff no occluder box intersects the camera->t ray before t."""
    camera = np.asarray(camera, dtype=float).reshape(3)
    t = np.asarray(t, dtype=float).reshape(3)
    d = t - camera
    dist = float(np.linalg.norm(d))
    if dist == 0.0:
        raise ValueError("camera and target coincide")
    ray = Ray(camera, d / dist)
    for box in occluder_boxes:
        hit = ray_aabb(ray, box)
        if hit is not None and hit.t_enter < dist:
            return False
    return True


def rank_endpoints(trajectories: Sequence[FingerTrajectory], bvh: Bvh,
                   limit: int | None = None) -> list[EndpointSelection]:
    """All (trajectory, waypoint) pairs ordered by distance-to-cloud.

    Order is the exact lexicographic key (distance, trajectory cost,
    trajectory index, waypoint index); entries whose nearest cloud point
    duplicates an earlier entry's are dropped, so the list is a ladder of
    distinct contact candidates.
    """
    if not trajectories:
        raise NoCandidatesError("no candidate trajectories to select from")
    rows = []
    offsets = []
    for ti, traj in enumerate(trajectories):
        offsets.append((ti, len(traj.waypoints)))
        rows.append(traj.waypoints)
    allw = np.vstack(rows)
    nearest_idx, dists = bvh.nearest_batch(allw)
    entries = []
    pos = 0
    for ti, count in offsets:
        cost = trajectories[ti].cost
        for wi in range(count):
            entries.append((dists[pos], cost, ti, wi, nearest_idx[pos]))
            pos += 1
    entries.sort(key=lambda e: (e[0], e[1], e[2], e[3]))
    out = []
    seen_contacts = set()
    for dist, _cost, ti, wi, contact in entries:
        if contact in seen_contacts:
            continue
        seen_contacts.add(int(contact))
        out.append(EndpointSelection(ti, wi, trajectories[ti].waypoints[wi].copy(),
                                     float(dist)))
        if limit is not None and len(out) >= limit:
            break
    return out


def select_endpoint(trajectories: Sequence[FingerTrajectory], bvh: Bvh) -> EndpointSelection:
    """The (trajectory, waypoint) pair closest to the cloud.

    Ties break lexicographically: lower trajectory cost, then lower
    trajectory index, then lower waypoint index.
    """
    if not trajectories:
        raise NoCandidatesError("no candidate trajectories to select from")
    rows = np.vstack([t.waypoints for t in trajectories])
    _, dists = bvh.nearest_batch(rows)
    best = None
    pos = 0
    for ti, traj in enumerate(trajectories):
        for wi in range(len(traj.waypoints)):
            key = (dists[pos], traj.cost, ti, wi)
            if best is None or key < best:
                best = key
            pos += 1
    dist, _cost, ti, wi = best
    return EndpointSelection(ti, wi, trajectories[ti].waypoints[wi].copy(), float(dist))


def _refine_contact(bvh: Bvh, normals: NormalField, waypoint: np.ndarray,
                    patch_radius: float) -> tuple[np.ndarray, int]:
    """Project a waypoint onto the local surface patch near its closest point.

    The patch plane comes from the covariance of all points within
    patch_radius of the nearest point, which keeps a single noisy straggler
    from defining the contact; tiny patches fall back to the stored normal.
    """
    idx, _ = bvh.nearest(waypoint)
    p_star = bvh.points[idx]
    patch = bvh.within_radius_union(p_star[None, :], patch_radius)
    pts = bvh.points[patch]
    mu = pts.mean(axis=0)
    if len(pts) >= 8:
        centered = pts - mu
        _, vecs = np.linalg.eigh(centered.T @ centered)
        n_hat = vecs[:, 0]
    else:
        n_hat = normals.normals[idx]
    contact = waypoint - n_hat * float(np.dot(n_hat, waypoint - mu))
    return contact, int(idx)


@dataclass
class _FingerState:
    plan_ms: float = 0.0
    trajectories: list[FingerTrajectory] = field(default_factory=list)
    candidates: list[EndpointSelection] = field(default_factory=list)
    rank: int = 0
    rounds_used: int = 0
    failure: str | None = None

    @property
    def current(self) -> EndpointSelection | None:
        if self.rank < len(self.candidates):
            return self.candidates[self.rank]
        return None


def _plan_single_finger(fi: int, seed: GraspSeed, start: np.ndarray, bvh: Bvh,
                        cfg: RrtConfig, obstacles, round_id: int) -> _FingerState:
    state = _FingerState()
    rng = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence([cfg.rng_seed, fi, round_id])))
    t0 = time.perf_counter()
    try:
        state.trajectories = rrt_star(start, seed, bvh, obstacles, cfg,
                                      finger_id=fi, rng=rng,
                                      explore=round_id > 0)
        state.candidates = rank_endpoints(state.trajectories, bvh, limit=12)
    except NoTrajectoryFoundError:
        state.failure = "no_trajectory"
    except ValueError:
        state.failure = "start_in_collision"
    state.plan_ms = (time.perf_counter() - t0) * 1000.0
    return state


def plan_hand(seeds: Sequence[GraspSeed], starts, bvh: Bvh, normals: NormalField,
              hand: HandModel, weights: PlannerWeights, cfg: RrtConfig,
              min_sep: float = 0.015, max_resample: int = 2,
              ik_settings: IkSettings | None = None,
              obstacles: Sequence[Aabb] = (),
              q_starts: Sequence[np.ndarray] | None = None,
              parallel: bool = True) -> GraspHypothesis:
    """Plan all five fingers jointly and validate the combined hypothesis.

    Stages: per-finger RRT* + endpoint ranking (independent, parallelizable),
    pairwise contact separation >= min_sep (demote the lower-scored finger of
    a violating pair), the standoff consistency pass (radius-inflated
    fingertip boxes vs the object BVH and vs each other), and per-finger DLS
    IK warm-started through the standoff. Conflicts demote candidates; an
    exhausted finger re-samples fresh trajectories up to max_resample rounds.
    """
    if len(seeds) != 5:
        raise ValueError(f"expected 5 seeds, got {len(seeds)}")
    starts = [np.asarray(s, dtype=float).reshape(3) for s in starts]
    if len(starts) != 5:
        raise ValueError(f"expected 5 start positions, got {len(starts)}")
    ik_settings = ik_settings or IkSettings()
    obstacles = tuple(obstacles)
    request = HandPlanRequest(seeds=tuple(seeds), starts=tuple(starts), bvh=bvh,
                              normals=normals, hand=hand, weights=weights, cfg=cfg,
                              min_sep=min_sep, max_resample=max_resample,
                              ik_settings=ik_settings, obstacles=obstacles,
                              q_starts=tuple(q_starts) if q_starts is not None else None,
                              parallel=parallel)

    def run_round(fi: int, round_id: int) -> _FingerState:
        return _plan_single_finger(fi, seeds[fi], starts[fi], bvh, cfg,
                                   obstacles, round_id)

    if parallel:
        with ThreadPoolExecutor(max_workers=5) as pool:
            states = list(pool.map(run_round, range(5), [0] * 5))
    else:
        states = [run_round(fi, 0) for fi in range(5)]

    patch_radius = 2.0 * cfg.fingertip_radius
    endpoint_cache: dict[tuple, tuple[CandidateEndpoint, np.ndarray]] = {}
    ik_cache: dict[tuple, tuple[IkResult, float]] = {}

    def endpoint_of(fi: int) -> tuple[CandidateEndpoint, np.ndarray] | None:
        sel = states[fi].current
        if sel is None:
            return None
        key = (fi, states[fi].rounds_used, states[fi].rank)
        if key not in endpoint_cache:
            contact, _ = _refine_contact(bvh, normals, sel.point, patch_radius)
            up = curl_plane_up_hint(hand.fingers[fi], seeds[fi].approach)
            ep = score_endpoint(contact, seeds[fi].approach, bvh, normals,
                                weights, cfg.clearance, patch_radius, up=up)
            endpoint_cache[key] = (ep, sel.point)
        return endpoint_cache[key]

    def ik_of(fi: int) -> tuple[IkResult, float] | None:
        """Warm-started IK for the finger's current candidate, cached."""
        entry = endpoint_of(fi)
        if entry is None:
            return None
        key = (fi, states[fi].rounds_used, states[fi].rank)
        if key not in ik_cache:
            ep, standoff = entry
            chain = hand.fingers[fi]
            if q_starts is not None:
                q0 = np.asarray(q_starts[fi], dtype=float)
            else:
                q0 = open_hand_configuration(hand)[fi]
            t0 = time.perf_counter()
            warm = dls_ik(chain, RigidTransform(ep.rotation, standoff), ik_settings, q0)
            res = dls_ik(chain, RigidTransform(ep.rotation, ep.position),
                         ik_settings, warm.q)
            ik_cache[key] = (res, (time.perf_counter() - t0) * 1000.0)
        return ik_cache[key]

    def demote(fi: int) -> bool:
        """Advance to the next candidate, re-sampling when exhausted.

        On failure the rank is rolled back so the finger keeps its last
        valid candidate (the conflict partner gets demoted instead).
        """
        prev_rank = states[fi].rank
        states[fi].rank += 1
        if states[fi].current is not None:
            return True
        while states[fi].rounds_used < max_resample:
            states[fi].rounds_used += 1
            fresh = run_round(fi, states[fi].rounds_used)
            if fresh.failure is None and fresh.candidates:
                fresh.rounds_used = states[fi].rounds_used
                states[fi] = fresh
                return True
        states[fi].rank = prev_rank
        return False

    failure_stage = None
    if any(s.failure is not None for s in states):
        failure_stage = "no_trajectory"
    else:
        # IK feasibility + separation + consistency, iterated to a fixed point
        for _ in range(200):
            eps = [endpoint_of(fi) for fi in range(5)]
            if any(e is None for e in eps):
                failure_stage = "consistency"
                break
            conflict = None
            for fi in range(5):
                if not ik_of(fi)[0].converged:
                    conflict = ("ik", fi, None)
                    break
            if conflict is None:
                # pairwise contact separation
                for i in range(5):
                    for j in range(i + 1, 5):
                        d = np.linalg.norm(eps[i][0].position - eps[j][0].position)
                        if d < min_sep:
                            loser = i if eps[i][0].score <= eps[j][0].score else j
                            conflict = ("separation", loser, i + j - loser)
                            break
                    if conflict:
                        break
            if conflict is None:
                # standoff boxes vs object and vs each other
                boxes = [Aabb.from_center_half_extents(eps[i][1],
                                                       np.full(3, cfg.fingertip_radius))
                         for i in range(5)]
                for i in range(5):
                    if bvh.collides_box(boxes[i]):
                        conflict = ("consistency", i, None)
                        break
                if conflict is None:
                    for i in range(5):
                        for j in range(i + 1, 5):
                            if aabb_overlap(boxes[i], boxes[j]):
                                loser = i if eps[i][0].score <= eps[j][0].score else j
                                conflict = ("consistency", loser, i + j - loser)
                                break
                        if conflict:
                            break
            if conflict is None:
                break
            stage, loser, other = conflict
            # demote the lower-scored finger; if its ladder is spent the
            # other finger of the pair moves instead
            if not demote(loser) and (other is None or not demote(other)):
                failure_stage = stage
                break
        else:
            failure_stage = "consistency"

    # assemble per-finger reports from the surviving candidates
    plans = []
    all_converged = True
    for fi in range(5):
        state = states[fi]
        if state.failure is not None or state.current is None:
            plans.append(FingerPlan(finger_id=fi, trajectory=None, standoff=None,
                                    endpoint=None, ik=None, converged=False,
                                    failure=state.failure or "no_candidates",
                                    plan_ms=state.plan_ms))
            all_converged = False
            continue
        ep, standoff = endpoint_of(fi)
        res, ik_ms = ik_of(fi)
        sel = state.current
        traj = state.trajectories[sel.trajectory_index]
        converged = bool(res.converged)
        all_converged = all_converged and converged
        plans.append(FingerPlan(finger_id=fi, trajectory=traj, standoff=standoff,
                                endpoint=ep, ik=res, converged=converged,
                                failure=None if converged else "ik_not_converged",
                                ik_ms=ik_ms, plan_ms=state.plan_ms))
    if failure_stage is None and not all_converged:
        failure_stage = "ik"

    scores = [p.endpoint.score for p in plans if p.endpoint is not None]
    aggregate = float(np.mean(scores)) if scores else -np.inf
    return GraspHypothesis(fingers=tuple(plans), aggregate_score=aggregate,
                           feasible=failure_stage is None,
                           failure_stage=failure_stage, request=request)


_RELAXATION_ORDER = ("goal_tolerance", "time_budget", "drop_kappa")


def replan_relaxed(previous: GraspHypothesis) -> GraspHypothesis:
    """Retry an infeasible hypothesis with progressively relaxed constraints.

    Relaxations apply cumulatively in order: goal tolerance x2, time budget
    x2, then dropping the kappa term. Returns the first feasible hypothesis
    (tagged with the relaxations used) or the final infeasible report.
    """
    if previous.feasible:
        raise ValueError("replan_relaxed requires an infeasible hypothesis")
    if previous.request is None:
        raise ValueError("hypothesis carries no planning request to relax")
    req = previous.request
    last = previous
    for k in range(1, len(_RELAXATION_ORDER) + 1):
        applied = _RELAXATION_ORDER[:k]
        cfg = req.cfg
        weights = req.weights
        if "goal_tolerance" in applied:
            cfg = replace(cfg, goal_tolerance=cfg.goal_tolerance * 2)
        if "time_budget" in applied:
            cfg = replace(cfg, time_budget_ms=cfg.time_budget_ms * 2)
        if "drop_kappa" in applied:
            weights = PlannerWeights(weights.alpha, weights.beta, 0.0)
        hyp = plan_hand(req.seeds, req.starts, req.bvh, req.normals, req.hand,
                        weights, cfg, req.min_sep, req.max_resample,
                        req.ik_settings, req.obstacles, req.q_starts, req.parallel)
        hyp = replace(hyp, relaxations_applied=applied)
        last = hyp
        if hyp.feasible:
            return hyp
    return last
