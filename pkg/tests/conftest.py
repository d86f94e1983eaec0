import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from fingergrasp.kinematics import default_hand_model, open_hand_configuration
from fingergrasp.perception import build_bvh, estimate_normals


def lying_cylinder_points(rng, n=4000, radius=0.03, half_length=0.06,
                          center=(0.11, 0.0, 0.035)):
    """Full-surround samples of a cylinder whose axis runs along y."""
    center = np.asarray(center, dtype=float)
    n_side = int(n * 0.8)
    theta = rng.uniform(0, 2 * np.pi, n_side)
    y = rng.uniform(-half_length, half_length, n_side)
    side = np.column_stack([radius * np.cos(theta), y, radius * np.sin(theta)])
    n_cap = (n - n_side) // 2
    caps = []
    for sign in (-1.0, 1.0):
        r = radius * np.sqrt(rng.uniform(0, 1, n_cap))
        a = rng.uniform(0, 2 * np.pi, n_cap)
        caps.append(np.column_stack([r * np.cos(a), np.full(n_cap, sign * half_length),
                                     r * np.sin(a)]))
    return np.vstack([side] + caps) + center


def wrap_grasp_seeds(center=(0.11, 0.0, 0.035), radius=0.03):
    """Five seeds for a wrap: four fingers over the far-top, thumb near-top."""
    from fingergrasp.planner import GraspSeed

    center = np.asarray(center, dtype=float)
    seeds = []
    # thumb at 130 degrees (near-top quadrant), its own y
    for theta_deg, y in [(130, 0.040), (50, 0.030), (50, 0.010), (50, -0.012), (50, -0.032)]:
        th = np.radians(theta_deg)
        radial = np.array([np.cos(th), 0.0, np.sin(th)])
        t = center + radius * radial + np.array([0.0, y, 0.0])
        seeds.append(GraspSeed(t=t, approach=-radial))
    return seeds


def open_pose_and_starts(hand):
    """Pre-grasp joint vectors and the fingertip positions they imply."""
    q_open = open_hand_configuration(hand)
    starts = [f.forward_kinematics(q).translation for f, q in zip(hand.fingers, q_open)]
    return q_open, starts


@pytest.fixture(scope="session")
def hand():
    return default_hand_model()


@pytest.fixture(scope="session")
def cylinder_scene():
    """Shared lying-cylinder perception structures for planner tests."""
    rng = np.random.default_rng(1234)
    pts = lying_cylinder_points(rng)
    bvh = build_bvh(pts)
    normals = estimate_normals(pts, k=14, camera=[0.0, 0.0, 0.5])
    return {"points": pts, "bvh": bvh, "normals": normals,
            "center": np.array([0.11, 0.0, 0.035]), "radius": 0.03}
