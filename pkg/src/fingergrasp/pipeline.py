"""End-to-end grasp trials on synthetic scenes with analytic ground truth.

A scene is an object (cylinder or block) resting on an optional table plane,
observed from one camera position: surface samples survive only if the
analytic first intersection of the camera ray is the sample itself, then
Gaussian noise and uniform clutter are added. The pipeline chains
preprocessing, seeded region growing, BVH construction, per-finger RRT*
planning with DLS IK, trajectory post-processing, and contact verification
against the analytic surface, producing one PipelineResult per trial.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import InvalidSceneError
from .geometry import (Aabb, PointCloud, RigidTransform, aabb_from_points,
                       empty_space_ratio, rotation_from_axis_angle)
from .kinematics import (HandModel, IkSettings, default_hand_model, dls_ik,
                         open_hand_configuration)
from .perception import (Bvh, PreprocessConfig, build_bvh, estimate_normals,
                         preprocess, segment_region_growing,
                         segmentation_accuracy)
from .planner import (GraspSeed, PlannerWeights, RrtConfig, plan_hand,
                      replan_relaxed)

LABEL_OBJECT = 1
LABEL_PLANE = 2
LABEL_OUTLIER = 3

# Elevated oblique camera placements; each sees the object top plus one cap
# or face pair, mirroring the hand-mounted viewpoints of the experiments.
CAMERA_PLACEMENTS = {
    "front": np.array([0.42, 0.18, 0.30]),
    "wrist": np.array([-0.08, 0.22, 0.28]),
    "top": np.array([0.12, 0.15, 0.55]),
    "experimental": np.array([0.40, 0.0, 0.70]),
}


# -- analytic objects ---------------------------------------------------------

@dataclass(frozen=True)
class Cylinder:
    """Cylinder centered at its centroid, axis along local z."""

    radius: float
    height: float

    kind = "cylinder"

    def __post_init__(self):
        if self.radius <= 0 or self.height <= 0:
            raise ValueError("cylinder dimensions must be > 0")

    def sample_surface(self, n: int, rng: np.random.Generator) -> np.ndarray:
        side_area = 2 * np.pi * self.radius * self.height
        cap_area = np.pi * self.radius ** 2
        total = side_area + 2 * cap_area
        n_side = int(round(n * side_area / total))
        n_cap = (n - n_side) // 2
        theta = rng.uniform(0, 2 * np.pi, n_side)
        z = rng.uniform(-self.height / 2, self.height / 2, n_side)
        side = np.column_stack([self.radius * np.cos(theta),
                                self.radius * np.sin(theta), z])
        parts = [side]
        for sign in (-1.0, 1.0):
            r = self.radius * np.sqrt(rng.uniform(0, 1, n_cap))
            a = rng.uniform(0, 2 * np.pi, n_cap)
            parts.append(np.column_stack([r * np.cos(a), r * np.sin(a),
                                          np.full(n_cap, sign * self.height / 2)]))
        return np.vstack(parts)

    def signed_distance(self, pts: np.ndarray) -> np.ndarray:
        """Negative inside the solid, positive outside."""
        pts = np.atleast_2d(pts)
        d_rad = np.hypot(pts[:, 0], pts[:, 1]) - self.radius
        d_cap = np.abs(pts[:, 2]) - self.height / 2
        outside = np.hypot(np.clip(d_rad, 0, None), np.clip(d_cap, 0, None))
        inside = np.minimum(np.maximum(d_rad, d_cap), 0.0)
        return outside + inside

    def ray_first_hit(self, origin: np.ndarray, direction: np.ndarray) -> float:
        """Smallest t >= 0 where origin + t*direction meets the surface; inf if none."""
        ox, oy, oz = origin
        dx, dy, dz = direction
        hits = []
        a = dx * dx + dy * dy
        if a > 1e-18:
            b = 2 * (ox * dx + oy * dy)
            c = ox * ox + oy * oy - self.radius ** 2
            disc = b * b - 4 * a * c
            if disc >= 0:
                sq = np.sqrt(disc)
                for t in ((-b - sq) / (2 * a), (-b + sq) / (2 * a)):
                    if t >= 0 and abs(oz + t * dz) <= self.height / 2 + 1e-12:
                        hits.append(t)
        if abs(dz) > 1e-18:
            for zc in (-self.height / 2, self.height / 2):
                t = (zc - oz) / dz
                if t >= 0:
                    x, y = ox + t * dx, oy + t * dy
                    if x * x + y * y <= self.radius ** 2 + 1e-12:
                        hits.append(t)
        return min(hits) if hits else np.inf


@dataclass(frozen=True)
class Block:
    """Rectangular block centered at its centroid, faces axis-aligned locally."""

    lx: float
    ly: float
    lz: float

    kind = "block"

    def __post_init__(self):
        if min(self.lx, self.ly, self.lz) <= 0:
            raise ValueError("block dimensions must be > 0")

    @property
    def half(self) -> np.ndarray:
        return np.array([self.lx, self.ly, self.lz]) / 2.0

    def sample_surface(self, n: int, rng: np.random.Generator) -> np.ndarray:
        h = self.half
        areas = np.array([self.ly * self.lz, self.ly * self.lz,
                          self.lx * self.lz, self.lx * self.lz,
                          self.lx * self.ly, self.lx * self.ly])
        counts = np.floor(n * areas / areas.sum()).astype(int)
        counts[0] += n - counts.sum()
        parts = []
        for face, count in enumerate(counts):
            axis = face // 2
            sign = 1.0 if face % 2 else -1.0
            u_axes = [a for a in range(3) if a != axis]
            pts = np.empty((count, 3))
            pts[:, axis] = sign * h[axis]
            for ua in u_axes:
                pts[:, ua] = rng.uniform(-h[ua], h[ua], count)
            parts.append(pts)
        return np.vstack(parts)

    def signed_distance(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        q = np.abs(pts) - self.half
        outside = np.linalg.norm(np.clip(q, 0, None), axis=1)
        inside = np.clip(q.max(axis=1), None, 0.0)
        return outside + inside

    def ray_first_hit(self, origin: np.ndarray, direction: np.ndarray) -> float:
        h = self.half
        t_lo, t_hi = -np.inf, np.inf
        for axis in range(3):
            if direction[axis] == 0.0:
                if abs(origin[axis]) > h[axis]:
                    return np.inf
                continue
            t1 = (-h[axis] - origin[axis]) / direction[axis]
            t2 = (h[axis] - origin[axis]) / direction[axis]
            if t1 > t2:
                t1, t2 = t2, t1
            t_lo = max(t_lo, t1)
            t_hi = min(t_hi, t2)
        if t_lo > t_hi or t_hi < 0:
            return np.inf
        return t_lo if t_lo >= 0 else t_hi


@dataclass(frozen=True)
class SceneConfig:
    object: Cylinder | Block
    object_pose: RigidTransform
    camera_position: np.ndarray
    camera_samples: int = 9000
    noise_sigma: float = 0.002
    outlier_fraction: float = 0.01
    plane: bool = True
    rng_seed: int = 0
    placement: str = ""
    plane_half_extent: float = 0.18

    def __post_init__(self):
        object.__setattr__(self, "camera_position",
                           np.asarray(self.camera_position, dtype=float).reshape(3))
        if not 0.0 <= self.outlier_fraction < 0.5:
            raise ValueError("outlier_fraction must be in [0, 0.5)")
        if self.camera_samples < 1 or self.noise_sigma < 0:
            raise ValueError("camera_samples must be >= 1 and noise_sigma >= 0")


@dataclass(frozen=True)
class SceneTruth:
    """Analytic object model + pose; the reference for success judgments."""

    object: Cylinder | Block
    pose: RigidTransform

    @property
    def centroid(self) -> np.ndarray:
        return self.pose.translation

    def signed_surface_distance(self, pts) -> np.ndarray:
        local = self.pose.inverse().apply(np.atleast_2d(np.asarray(pts, float)))
        return self.object.signed_distance(local)


@dataclass(frozen=True)
class Scene:
    cloud: PointCloud
    truth: SceneTruth
    config: SceneConfig


def default_scene(object_kind: str = "cylinder", placement: str = "front",
                  rng_seed: int = 0, **overrides) -> SceneConfig:
    """Desk-scale presets: the object rests on the table in front of the palm."""
    if object_kind == "cylinder":
        obj = Cylinder(radius=0.03, height=0.12)
        # lying down, axis along palm y, resting on the table
        pose = RigidTransform(rotation_from_axis_angle([1, 0, 0], np.pi / 2),
                              [0.11, 0.0, 0.03])
    elif object_kind == "block":
        obj = Block(lx=0.05, ly=0.11, lz=0.05)
        pose = RigidTransform(np.eye(3), [0.11, 0.0, 0.025])
    else:
        raise ValueError(f"unknown object kind: {object_kind!r}")
    camera = CAMERA_PLACEMENTS[placement]
    cfg = SceneConfig(object=obj, object_pose=pose, camera_position=camera,
                      rng_seed=rng_seed, placement=placement)
    return replace(cfg, **overrides) if overrides else cfg


def synthesize_scene(cfg: SceneConfig) -> Scene:
    """Sample the camera-visible surface, add noise, clutter, and the plane.

    A surface sample is kept iff the analytic first hit of the camera ray is
    the sample itself (no earlier intersection occludes it) and the surface
    faces the camera. Labels record object / plane / outlier per point.
    """
    rng = np.random.Generator(np.random.PCG64(cfg.rng_seed))
    truth = SceneTruth(object=cfg.object, pose=cfg.object_pose)
    cam = cfg.camera_position
    cam_local = cfg.object_pose.inverse().apply(cam)
    if cfg.object.signed_distance(cam_local[None, :])[0] <= 0:
        raise InvalidSceneError("camera position lies inside the object")

    local = cfg.object.sample_surface(cfg.camera_samples, rng)
    world = cfg.object_pose.apply(local)
    kept = []
    for p_local, p_world in zip(local, world):
        ray_dir = p_local - cam_local
        dist = np.linalg.norm(ray_dir)
        if dist == 0.0:
            continue
        t_hit = cfg.object.ray_first_hit(cam_local, ray_dir / dist)
        if t_hit < dist - 1e-7:
            continue
        kept.append(p_world)
    obj_pts = np.asarray(kept).reshape(-1, 3)

    parts = [obj_pts]
    labels = [np.full(len(obj_pts), LABEL_OBJECT)]
    if cfg.plane:
        n_plane = int(cfg.camera_samples * 0.7)
        gx = rng.uniform(0.11 - cfg.plane_half_extent, 0.11 + cfg.plane_half_extent, n_plane)
        gy = rng.uniform(-cfg.plane_half_extent, cfg.plane_half_extent, n_plane)
        plane_pts = np.column_stack([gx, gy, np.zeros(n_plane)])
        vis = []
        for p in plane_pts:
            ray_dir = p - cam
            dist = np.linalg.norm(ray_dir)
            local_dir = cfg.object_pose.rotation.T @ (ray_dir / dist)
            if cfg.object.ray_first_hit(cam_local, local_dir) < dist - 1e-7:
                continue
            vis.append(p)
        plane_pts = np.asarray(vis).reshape(-1, 3)
        parts.append(plane_pts)
        labels.append(np.full(len(plane_pts), LABEL_PLANE))

    pts = np.vstack(parts)
    if cfg.noise_sigma > 0:
        pts = pts + rng.normal(0.0, cfg.noise_sigma, pts.shape)

    n_out = int(round(cfg.outlier_fraction * len(pts)))
    if n_out:
        box = aabb_from_points(pts).inflated(0.06)
        clutter = rng.uniform(box.min, box.max, (n_out, 3))
        pts = np.vstack([pts, clutter])
        labels.append(np.full(n_out, LABEL_OUTLIER))

    cloud = PointCloud(pts, np.concatenate(labels))
    return Scene(cloud=cloud, truth=truth, config=cfg)


# -- joint trajectories -------------------------------------------------------

@dataclass(frozen=True)
class FingerJointPath:
    finger_id: int
    times: np.ndarray
    positions: np.ndarray  # (n, dof)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        q = np.atleast_2d(np.asarray(self.positions, dtype=float))
        if len(t) != len(q):
            raise ValueError("times and positions must have equal length")
        if len(t) > 1 and not np.all(np.diff(t) > 0):
            raise ValueError("times must be strictly increasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "positions", q)

    def max_rates(self) -> np.ndarray:
        if len(self.times) < 2:
            return np.zeros(self.positions.shape[1])
        dq = np.abs(np.diff(self.positions, axis=0))
        dt = np.diff(self.times)[:, None]
        return (dq / dt).max(axis=0)


@dataclass(frozen=True)
class JointTrajectory:
    fingers: tuple[FingerJointPath, ...]


@dataclass(frozen=True)
class TactileSample:
    finger_id: int
    c: float
    t: float

    def __post_init__(self):
        if self.c < 0:
            raise ValueError("contact signal must be >= 0")


def smooth_and_clip(raw: JointTrajectory, velocity_limits,
                    dt: float = 0.02) -> JointTrajectory:
    """Cubic-spline resample at uniform dt, then stretch segments in time
    until every joint rate is within its limit. Endpoints are preserved
    exactly; single-sample paths pass through unchanged."""
    out = []
    for path in raw.fingers:
        limits = np.asarray(velocity_limits[path.finger_id], dtype=float)
        if len(path.times) < 2:
            out.append(path)
            continue
        spline = CubicSpline(path.times, path.positions, axis=0)
        t0, t1 = float(path.times[0]), float(path.times[-1])
        ts = np.arange(t0, t1, dt)
        if len(ts) == 0 or ts[-1] < t1:
            ts = np.append(ts, t1)
        q = spline(ts)
        q[0] = path.positions[0]
        q[-1] = path.positions[-1]
        # time dilation: stretch any segment whose fastest joint is over limit
        new_t = np.empty(len(ts))
        new_t[0] = ts[0]
        for k in range(1, len(ts)):
            seg_dt = ts[k] - ts[k - 1]
            rates = np.abs(q[k] - q[k - 1]) / seg_dt
            factor = max(1.0, float((rates / limits).max()))
            new_t[k] = new_t[k - 1] + seg_dt * factor
        out.append(FingerJointPath(path.finger_id, new_t, q))
    return JointTrajectory(fingers=tuple(out))


def verify_contact(samples, c_thresh: float) -> dict[int, bool]:
    """Per-finger confirmation: any sample with c >= c_thresh confirms."""
    if c_thresh <= 0:
        raise ValueError("c_thresh must be > 0")
    confirmed: dict[int, bool] = {}
    for s in samples:
        confirmed[s.finger_id] = confirmed.get(s.finger_id, False) or s.c >= c_thresh
    return confirmed


def simulate_tactile(finger_distances: dict[int, float], contact_tolerance: float,
                     t: float = 0.0) -> list[TactileSample]:
    """Linear-ramp tactile model: c = max(0, 1 - d / contact_tolerance)."""
    return [TactileSample(fid, max(0.0, 1.0 - d / contact_tolerance), t)
            for fid, d in sorted(finger_distances.items())]


# -- the full pipeline --------------------------------------------------------

@dataclass(frozen=True)
class PipelineConfig:
    preprocess: PreprocessConfig = field(default_factory=lambda: PreprocessConfig(
        plane_distance_threshold=0.0035, denoise=True,
        crop_box=Aabb([-0.02, -0.22, -0.004], [0.26, 0.22, 0.104])))
    rrt: RrtConfig = field(default_factory=lambda: RrtConfig(max_samples=400))
    weights: PlannerWeights = field(default_factory=PlannerWeights)
    ik: IkSettings = field(default_factory=lambda: IkSettings(
        w_theta=0.0, pos_tol=5e-4, ang_tol=3.2))
    segmentation_radius: float = 0.009
    normals_k: int = 14
    min_sep: float = 0.015
    max_resample: int = 2
    contact_tolerance: float = 0.005
    penetration_tolerance: float = 0.002
    c_thresh: float = 0.5
    fingertip_speed: float = 0.25
    parallel_fingers: bool = False
    replan_on_failure: bool = True


@dataclass(frozen=True)
class PipelineResult:
    segmentation_accuracy: float
    grasp_success: bool
    contact_distances: tuple[float, ...]
    planning_time_ms: float
    ik_time_ms: float
    end_to_end_ms: float
    eta_empty: float
    pose_estimation_error: float
    failure_reason: str | None
    tactile_confirmed: dict[int, bool]
    relaxations_applied: tuple[str, ...] = ()
    n_cloud_points: int = 0
    n_segmented: int = 0


def perception_seed_index(result_cloud: PointCloud, crop_box: Aabb | None) -> int:
    """Segmentation seed: the retained point nearest the crop-box center."""
    center = crop_box.center if crop_box is not None else result_cloud.points.mean(axis=0)
    d = result_cloud.points - center
    return int(np.argmin(np.einsum("ij,ij->i", d, d)))


def wrap_seeds_from_perception(box: Aabb, bvh: Bvh) -> list[GraspSeed]:
    """Five grasp seeds from the perceived AABB: probe points on a ring in
    the x-z plane (four fingers over the far-top at 50 degrees, thumb on the
    near-top at 130), snapped to the nearest cloud point."""
    c = box.center
    h = box.half_extents
    ring = float(np.hypot(h[0], h[2])) + 0.03
    y_span = max(h[1] - 0.006, 0.004)
    seeds = []
    for theta_deg, y_off in ((130.0, 0.040), (50.0, 0.030), (50.0, 0.010),
                             (50.0, -0.012), (50.0, -0.032)):
        th = np.radians(theta_deg)
        y = c[1] + np.clip(y_off, -y_span, y_span)
        probe = np.array([c[0] + ring * np.cos(th), y, c[2] + ring * np.sin(th)])
        idx, _ = bvh.nearest(probe)
        contact = bvh.points[idx]
        approach = contact - probe
        approach = approach / np.linalg.norm(approach)
        seeds.append(GraspSeed(t=contact, approach=approach))
    return seeds


def _table_obstacle() -> Aabb:
    return Aabb([-0.10, -0.30, -0.06], [0.40, 0.30, -0.002])


def _failure_result(reason: str, t0: float, sa: float = 0.0, eta: float = 1.0,
                    pose_err: float = float("inf"), n_cloud: int = 0,
                    n_seg: int = 0) -> PipelineResult:
    return PipelineResult(segmentation_accuracy=sa, grasp_success=False,
                          contact_distances=(), planning_time_ms=0.0,
                          ik_time_ms=0.0,
                          end_to_end_ms=(time.perf_counter() - t0) * 1000.0,
                          eta_empty=eta, pose_estimation_error=pose_err,
                          failure_reason=reason, tactile_confirmed={},
                          n_cloud_points=n_cloud, n_segmented=n_seg)


def run_pipeline(scene_cfg: SceneConfig, pipe: PipelineConfig | None = None,
                 hand: HandModel | None = None) -> "PipelineRun":
    """Execute one full trial; never raises on a valid configuration."""
    pipe = pipe or PipelineConfig()
    hand = hand or default_hand_model()
    t0 = time.perf_counter()

    scene = synthesize_scene(scene_cfg)
    cloud = scene.cloud
    truth_ids = np.flatnonzero(cloud.labels == LABEL_OBJECT)

    try:
        pre = preprocess(cloud, replace(pipe.preprocess, rng_seed=scene_cfg.rng_seed))
    except Exception as exc:
        return PipelineRun(_failure_result(f"preprocess: {exc}", t0,
                                           n_cloud=len(cloud)), scene, None, None)

    seed_idx = perception_seed_index(pre.cloud, pipe.preprocess.crop_box)
    seg_local = segment_region_growing(pre.cloud, seed_idx, pipe.segmentation_radius)
    seg_global = pre.kept_indices[seg_local]
    sa = segmentation_accuracy(seg_global, truth_ids)
    seg_points = pre.cloud.points[seg_local]
    if len(seg_points) < max(pipe.normals_k, 16):
        return PipelineRun(_failure_result("segmentation: component too small", t0,
                                           sa=sa, n_cloud=len(cloud),
                                           n_seg=len(seg_points)), scene, None, None)

    bvh = build_bvh(seg_points)
    normals = estimate_normals(seg_points, pipe.normals_k, scene_cfg.camera_position)
    seg_box = aabb_from_points(seg_points)
    eta = empty_space_ratio(seg_points, seg_box)
    pose_err = float(np.linalg.norm(seg_box.center - scene.truth.centroid))

    q_open = open_hand_configuration(hand)
    starts = [f.forward_kinematics(q).translation for f, q in zip(hand.fingers, q_open)]
    seeds = wrap_seeds_from_perception(seg_box, bvh)
    obstacles = [_table_obstacle()] if scene_cfg.plane else []

    t_plan = time.perf_counter()
    try:
        hyp = plan_hand(seeds, starts, bvh, normals, hand, pipe.weights,
                        replace(pipe.rrt, rng_seed=scene_cfg.rng_seed),
                        min_sep=pipe.min_sep, max_resample=pipe.max_resample,
                        ik_settings=pipe.ik, obstacles=obstacles,
                        q_starts=q_open, parallel=pipe.parallel_fingers)
        if not hyp.feasible and pipe.replan_on_failure:
            hyp = replan_relaxed(hyp)
    except ValueError as exc:
        return PipelineRun(_failure_result(f"planning: {exc}", t0, sa=sa, eta=eta,
                                           pose_err=pose_err, n_cloud=len(cloud),
                                           n_seg=len(seg_points)), scene, None, None)
    planning_ms = (time.perf_counter() - t_plan) * 1000.0
    ik_ms = float(np.mean([p.ik_ms for p in hyp.fingers if p.ik is not None] or [0.0]))

    if not hyp.feasible:
        result = PipelineResult(
            segmentation_accuracy=sa, grasp_success=False, contact_distances=(),
            planning_time_ms=planning_ms, ik_time_ms=ik_ms,
            end_to_end_ms=(time.perf_counter() - t0) * 1000.0, eta_empty=eta,
            pose_estimation_error=pose_err,
            failure_reason=f"grasp: {hyp.failure_stage}", tactile_confirmed={},
            relaxations_applied=hyp.relaxations_applied,
            n_cloud_points=len(cloud), n_segmented=len(seg_points))
        return PipelineRun(result, scene, hyp, None)

    # execution surrogate: follow each planned path in joint space, then land
    # on the contact pose; verify against the analytic surface
    joint_raw = []
    tips = {}
    for plan in hyp.fingers:
        chain = hand.fingers[plan.finger_id]
        q_path = [q_open[plan.finger_id]]
        t_path = [0.0]
        q_cur = q_open[plan.finger_id]
        waypoints = plan.trajectory.waypoints
        stride = max(1, len(waypoints) // 12)
        track_ik = replace(pipe.ik, max_iters=40)
        for w in waypoints[1::stride]:
            res = dls_ik(chain, RigidTransform(plan.endpoint.rotation, w),
                         track_ik, q_cur)
            step_len = float(np.linalg.norm(
                chain.forward_kinematics(res.q).translation
                - chain.forward_kinematics(q_cur).translation))
            q_cur = res.q
            q_path.append(q_cur)
            t_path.append(t_path[-1] + max(step_len / pipe.fingertip_speed, 1e-3))
        # the path lands exactly on the hypothesis' converged contact solution
        step_len = float(np.linalg.norm(
            chain.forward_kinematics(plan.ik.q).translation
            - chain.forward_kinematics(q_cur).translation))
        q_path.append(plan.ik.q)
        t_path.append(t_path[-1] + max(step_len / pipe.fingertip_speed, 1e-3))
        joint_raw.append(FingerJointPath(plan.finger_id, np.asarray(t_path),
                                         np.asarray(q_path)))
        tips[plan.finger_id] = chain.forward_kinematics(plan.ik.q).translation
    trajectory = smooth_and_clip(JointTrajectory(fingers=tuple(joint_raw)),
                                 [f.velocity_limits for f in hand.fingers])

    signed = scene.truth.signed_surface_distance(
        np.vstack([tips[i] for i in range(5)]))
    distances = tuple(float(abs(s)) for s in signed)
    penetrations = [max(0.0, -float(s)) for s in signed]
    samples = simulate_tactile({i: distances[i] for i in range(5)},
                               pipe.contact_tolerance)
    tactile = verify_contact(samples, pipe.c_thresh)

    contact_ok = all(d <= pipe.contact_tolerance for d in distances)
    penetration_ok = all(p <= pipe.penetration_tolerance for p in penetrations)
    success = bool(contact_ok and penetration_ok)
    reason = None
    if not contact_ok:
        reason = "contact: fingertip beyond contact tolerance"
    elif not penetration_ok:
        reason = "contact: penetration beyond tolerance"

    result = PipelineResult(
        segmentation_accuracy=sa, grasp_success=success,
        contact_distances=distances, planning_time_ms=planning_ms,
        ik_time_ms=ik_ms, end_to_end_ms=(time.perf_counter() - t0) * 1000.0,
        eta_empty=eta, pose_estimation_error=pose_err, failure_reason=reason,
        tactile_confirmed=tactile, relaxations_applied=hyp.relaxations_applied,
        n_cloud_points=len(cloud), n_segmented=len(seg_points))
    return PipelineRun(result, scene, hyp, trajectory)


@dataclass(frozen=True)
class PipelineRun:
    """Result plus the intermediate artifacts worth exporting."""

    result: PipelineResult
    scene: Scene
    hypothesis: object | None
    trajectory: JointTrajectory | None


# -- benchmarking -------------------------------------------------------------

@dataclass(frozen=True)
class TrialRecord:
    object_kind: str
    placement: str
    trial: int
    rng_seed: int
    result: PipelineResult


@dataclass(frozen=True)
class AggregateRow:
    object_kind: str
    placement: str
    trials: int
    mean_sa: float
    gsr_percent: float
    mean_planning_ms: float
    max_planning_ms: float
    mean_ik_ms: float
    mean_pose_error: float


def batch_evaluate(scenes, trials_per_scene: int,
                   pipe: PipelineConfig | None = None,
                   hand: HandModel | None = None) -> tuple[list[TrialRecord], list[AggregateRow]]:
    """Run trials_per_scene trials per scene config; per-trial seeds are
    scene.rng_seed + trial index, so results are deterministic."""
    if trials_per_scene < 1:
        raise ValueError("trials_per_scene must be >= 1")
    pipe = pipe or PipelineConfig()
    hand = hand or default_hand_model()
    trials: list[TrialRecord] = []
    for scene_cfg in scenes:
        for trial in range(trials_per_scene):
            seed = scene_cfg.rng_seed + trial
            cfg = replace(scene_cfg, rng_seed=seed)
            run = run_pipeline(cfg, pipe, hand)
            trials.append(TrialRecord(object_kind=scene_cfg.object.kind,
                                      placement=scene_cfg.placement or "custom",
                                      trial=trial, rng_seed=seed,
                                      result=run.result))
    rows = []
    keys = sorted({(t.object_kind, t.placement) for t in trials})
    for kind, placement in keys:
        group = [t.result for t in trials
                 if (t.object_kind, t.placement) == (kind, placement)]
        finite_pose = [r.pose_estimation_error for r in group
                       if np.isfinite(r.pose_estimation_error)]
        rows.append(AggregateRow(
            object_kind=kind, placement=placement, trials=len(group),
            mean_sa=float(np.mean([r.segmentation_accuracy for r in group])),
            gsr_percent=100.0 * float(np.mean([r.grasp_success for r in group])),
            mean_planning_ms=float(np.mean([r.planning_time_ms for r in group])),
            max_planning_ms=float(np.max([r.planning_time_ms for r in group])),
            mean_ik_ms=float(np.mean([r.ik_time_ms for r in group])),
            mean_pose_error=float(np.mean(finite_pose)) if finite_pose else float("inf")))
    return trials, rows


TIMING_COLUMNS = ("planning_ms", "max_planning_ms", "ik_ms", "end_to_end_ms")


def trials_to_csv_rows(trials: list[TrialRecord]) -> list[list[str]]:
    header = ["object", "camera", "trial", "seed", "sa_percent", "grasp_success",
              "pose_error_mm", "eta_empty", "planning_ms", "ik_ms",
              "end_to_end_ms", "failure_reason"]
    rows = [header]
    for t in trials:
        r = t.result
        rows.append([t.object_kind, t.placement, str(t.trial), str(t.rng_seed),
                     f"{r.segmentation_accuracy:.4f}", str(int(r.grasp_success)),
                     f"{r.pose_estimation_error * 1000:.4f}",
                     f"{r.eta_empty:.6f}", f"{r.planning_time_ms:.3f}",
                     f"{r.ik_time_ms:.3f}", f"{r.end_to_end_ms:.3f}",
                     r.failure_reason or ""])
    return rows


def aggregate_to_csv_rows(rows: list[AggregateRow]) -> list[list[str]]:
    header = ["object", "camera", "trials", "sa_percent", "gsr_percent",
              "planning_ms", "max_planning_ms", "ik_ms", "pose_error_mm"]
    out = [header]
    for a in rows:
        out.append([a.object_kind, a.placement, str(a.trials),
                    f"{a.mean_sa:.4f}", f"{a.gsr_percent:.4f}",
                    f"{a.mean_planning_ms:.3f}", f"{a.max_planning_ms:.3f}",
                    f"{a.mean_ik_ms:.3f}", f"{a.mean_pose_error * 1000:.4f}"])
    return out
