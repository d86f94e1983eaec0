"""Per-finger grasp planning on point clouds.

Layers: geometry (AABB math, rays, transforms), perception (preprocessing,
region growing, BVH queries), kinematics (hand model, FK/Jacobian, DLS IK),
planner (RRT* fingertip trajectories, endpoint scoring, multi-finger
consistency), pipeline (synthetic scenes, end-to-end runs, benchmarking),
and a CLI front end.
"""

__version__ = "0.1.0"
