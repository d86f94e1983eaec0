import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from fingergrasp.errors import EmptyInputError
from fingergrasp.geometry import (Aabb, PointCloud, Ray, RigidTransform,
                                  aabb_from_points, aabb_overlap,
                                  center_half_extents, convex_hull_volume,
                                  edge_lengths, empty_space_ratio, inflate,
                                  ray_aabb, rotation_from_axis_angle,
                                  rotation_geodesic_angle, surface_area,
                                  transform_aabb, volume)

from oracles import ray_grazing_margin, ray_hits_box_sampled

UNIT_CUBE_CORNERS = np.array([
    [0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0],
    [0, 0, 1], [1, 0, 1], [0, 1, 1], [1, 1, 1],
], dtype=float)


class TestAabbFromPoints:
    def test_unit_cube_corners(self):
        box = aabb_from_points(UNIT_CUBE_CORNERS)
        assert np.array_equal(box.min, [0, 0, 0])
        assert np.array_equal(box.max, [1, 1, 1])

    def test_single_point_degenerate(self):
        box = aabb_from_points(np.array([[1.0, 2.0, 3.0]]))
        assert np.array_equal(box.min, [1, 2, 3])
        assert np.array_equal(box.max, [1, 2, 3])
        assert box.volume() == 0.0

    def test_matches_linear_scan_exactly(self):
        rng = np.random.default_rng(7)
        pts = rng.uniform(-1, 1, (500, 3))
        box = aabb_from_points(pts)
        # independent scan oracle
        lo = np.array([min(p[a] for p in pts) for a in range(3)])
        hi = np.array([max(p[a] for p in pts) for a in range(3)])
        assert np.array_equal(box.min, lo)
        assert np.array_equal(box.max, hi)

    def test_containment_and_extrema_attained(self):
        rng = np.random.default_rng(11)
        for _ in range(25):
            pts = rng.normal(size=(rng.integers(1, 200), 3))
            box = aabb_from_points(pts)
            assert np.all(pts >= box.min) and np.all(pts <= box.max)
            for a in range(3):
                assert np.any(pts[:, a] == box.min[a])
                assert np.any(pts[:, a] == box.max[a])

    def test_empty_cloud_raises(self):
        with pytest.raises(EmptyInputError):
            aabb_from_points(np.empty((0, 3)))

    def test_accepts_point_cloud_object(self):
        cloud = PointCloud(UNIT_CUBE_CORNERS)
        assert aabb_from_points(cloud).volume() == 1.0


class TestCenterHalfExtents:
    def test_unit_cube(self):
        c, h = center_half_extents(aabb_from_points(UNIT_CUBE_CORNERS))
        assert np.array_equal(c, [0.5, 0.5, 0.5])
        assert np.array_equal(h, [0.5, 0.5, 0.5])

    def test_degenerate_point(self):
        c, h = center_half_extents(Aabb([1, 2, 3], [1, 2, 3]))
        assert np.array_equal(c, [1, 2, 3])
        assert np.array_equal(h, [0, 0, 0])

    def test_direct_substitution(self):
        c, h = center_half_extents(Aabb([-1, 0, 2], [3, 4, 10]))
        assert np.array_equal(c, [1, 2, 6])
        assert np.array_equal(h, [2, 2, 4])

    def test_derived_view_is_exact(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            lo = rng.normal(size=3)
            box = Aabb(lo, lo + rng.uniform(0, 2, 3))
            assert np.array_equal(box.center, (box.min + box.max) / 2)
            assert np.array_equal(box.half_extents, (box.max - box.min) / 2)

    def test_round_trip_within_module_tolerance(self):
        # (c,h) -> (min,max) -> (c,h) round trips; a one-ulp drift is
        # unavoidable in IEEE arithmetic, so "exact" means the module's
        # 1e-9 absolute tolerance here.
        rng = np.random.default_rng(3)
        for _ in range(200):
            lo = rng.normal(size=3)
            box = Aabb(lo, lo + rng.uniform(0, 2, 3))
            c, h = center_half_extents(box)
            rebuilt = Aabb(c - h, c + h)
            c2, h2 = center_half_extents(rebuilt)
            assert np.allclose(c, c2, atol=1e-9, rtol=0)
            assert np.allclose(h, h2, atol=1e-9, rtol=0)
            assert np.allclose(rebuilt.min, box.min, atol=1e-9, rtol=0)
            assert np.allclose(rebuilt.max, box.max, atol=1e-9, rtol=0)


class TestVolumeSurfaceEdges:
    def test_unit_cube(self):
        box = Aabb([0, 0, 0], [1, 1, 1])
        assert volume(box) == 1.0
        assert surface_area(box) == 6.0

    def test_one_two_three(self):
        box = Aabb([0, 0, 0], [1, 2, 3])
        assert volume(box) == 6.0
        assert surface_area(box) == 22.0
        assert np.array_equal(edge_lengths(box), [1, 2, 3])

    def test_degenerate_planar(self):
        box = Aabb([0, 0, 0], [2, 3, 0])
        assert volume(box) == 0.0
        assert surface_area(box) == 2 * 2 * 3


class TestConvexHullVolume:
    def test_unit_cube(self):
        assert convex_hull_volume(UNIT_CUBE_CORNERS) == pytest.approx(1.0, abs=1e-9)

    def test_coplanar_is_zero(self):
        pts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]], dtype=float)
        assert convex_hull_volume(pts) == 0.0

    def test_dense_ball_near_analytic_volume(self):
        # hull of interior samples converges to the ball volume from below;
        # 30k samples are needed for the 3% band (10k sits near 4.6%)
        n = 30000
        rng = np.random.default_rng(5)
        v = rng.normal(size=(n, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        r = rng.random(n) ** (1 / 3)
        pts = v * r[:, None]
        sphere = 4 * np.pi / 3
        hull = convex_hull_volume(pts)
        assert hull <= sphere
        assert hull == pytest.approx(sphere, rel=0.03)


class TestEmptySpaceRatio:
    def test_dense_cube_fill(self):
        rng = np.random.default_rng(9)
        pts = rng.uniform(0, 1, (20000, 3))
        eta = empty_space_ratio(pts, aabb_from_points(pts))
        assert 0.0 <= eta <= 0.03

    def test_cylinder_surface_ratio(self):
        # lateral surface + caps of an axis-aligned cylinder: hull -> pi/4 fill
        rng = np.random.default_rng(13)
        n = 50000
        r, h = 0.4, 1.3
        theta = rng.uniform(0, 2 * np.pi, n)
        z = rng.uniform(0, h, n)
        pts = np.column_stack([r * np.cos(theta), r * np.sin(theta), z])
        eta = empty_space_ratio(pts, aabb_from_points(pts))
        assert eta == pytest.approx(1 - np.pi / 4, abs=0.02)

    def test_planar_cloud_is_one(self):
        pts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]], dtype=float)
        with pytest.warns(RuntimeWarning):
            assert empty_space_ratio(pts, aabb_from_points(pts)) == 1.0

    def test_always_in_unit_interval(self):
        rng = np.random.default_rng(17)
        for _ in range(20):
            pts = rng.normal(size=(rng.integers(4, 300), 3))
            eta = empty_space_ratio(pts, aabb_from_points(pts))
            assert 0.0 <= eta <= 1.0


class TestInflate:
    def test_half_extent_arithmetic(self):
        box = Aabb.from_center_half_extents([0, 0, 0], [1, 2, 3])
        grown = inflate(box, 0.5)
        assert np.array_equal(grown.half_extents, [1.5, 2.5, 3.5])
        assert np.array_equal(grown.center, box.center)

    def test_zero_radius_identity(self):
        box = Aabb([0, 1, 2], [3, 4, 5])
        grown = inflate(box, 0.0)
        assert np.array_equal(grown.min, box.min) and np.array_equal(grown.max, box.max)

    def test_negative_radius_rejected(self):
        with pytest.raises(ValueError):
            inflate(Aabb([0, 0, 0], [1, 1, 1]), -0.1)

    def test_contains_original_randomized(self):
        rng = np.random.default_rng(21)
        for _ in range(1000):
            lo = rng.normal(size=3)
            box = Aabb(lo, lo + rng.uniform(0, 3, 3))
            grown = inflate(box, float(rng.uniform(0, 2)))
            assert np.all(grown.min <= box.min) and np.all(grown.max >= box.max)


class TestRayAabb:
    def test_axis_ray_boundary_times(self):
        ray = Ray([-1, 0.5, 0.5], [1, 0, 0])
        hit = ray_aabb(ray, Aabb([0, 0, 0], [1, 1, 1]))
        assert hit is not None
        assert hit.t_enter == pytest.approx(1.0, abs=1e-12)
        assert hit.t_exit == pytest.approx(2.0, abs=1e-12)

    def test_parallel_outside_slab_misses(self):
        ray = Ray([-1, 5, 0.5], [1, 0, 0])
        assert ray_aabb(ray, Aabb([0, 0, 0], [1, 1, 1])) is None

    def test_hit_points_on_boundary(self):
        rng = np.random.default_rng(2)
        box = Aabb([-0.3, -0.2, -0.5], [0.4, 0.9, 0.1])
        count = 0
        while count < 200:
            ray = Ray(rng.uniform(-2, 2, 3), rng.normal(size=3))
            hit = ray_aabb(ray, box)
            if hit is None:
                continue
            count += 1
            for t in (hit.t_enter, hit.t_exit):
                p = ray.at(t)
                inside = np.all(p >= box.min - 1e-9) and np.all(p <= box.max + 1e-9)
                on_face = np.any(np.abs(p - box.min) < 1e-9) or np.any(np.abs(p - box.max) < 1e-9)
                assert inside and on_face

    def test_against_sampling_oracle(self):
        rng = np.random.default_rng(23)
        tested = 0
        for _ in range(3000):
            lo = rng.uniform(-1, 0.5, 3)
            box = Aabb(lo, lo + rng.uniform(0.05, 1.5, 3))
            origin = rng.uniform(-2, 2, 3)
            direction = rng.normal(size=3)
            if rng.random() < 0.15:
                direction[rng.integers(3)] = 0.0
            if np.all(direction == 0):
                continue
            if ray_grazing_margin(origin, direction, box.min, box.max) < 1e-6:
                continue
            tested += 1
            hit = ray_aabb(Ray(origin, direction), box)
            saw = ray_hits_box_sampled(origin, direction, box.min, box.max, t_max=8.0)
            assert (hit is not None) == saw, (origin, direction, box.min, box.max)
        assert tested > 2500

    def test_origin_inside_box(self):
        hit = ray_aabb(Ray([0.5, 0.5, 0.5], [0, 0, 1]), Aabb([0, 0, 0], [1, 1, 1]))
        assert hit is not None and hit.t_enter < 0 < hit.t_exit


class TestAabbOverlap:
    def test_identical(self):
        box = Aabb([0, 0, 0], [1, 1, 1])
        assert aabb_overlap(box, box)

    def test_touching_faces_count(self):
        a = Aabb.from_center_half_extents([0, 0, 0], [1, 1, 1])
        b = Aabb.from_center_half_extents([2, 0, 0], [1, 1, 1])
        assert aabb_overlap(a, b)

    def test_separated_on_x(self):
        a = Aabb.from_center_half_extents([0, 0, 0], [1, 1, 1])
        b = Aabb.from_center_half_extents([2.001, 0, 0], [1, 1, 1])
        assert not aabb_overlap(a, b)

    def test_symmetric_reflexive_and_separation(self):
        rng = np.random.default_rng(31)
        for _ in range(300):
            a = Aabb.from_center_half_extents(rng.normal(size=3), rng.uniform(0.1, 1, 3))
            b = Aabb.from_center_half_extents(rng.normal(size=3), rng.uniform(0.1, 1, 3))
            assert aabb_overlap(a, a)
            assert aabb_overlap(a, b) == aabb_overlap(b, a)
            separated = np.any(np.abs(a.center - b.center) > a.half_extents + b.half_extents)
            assert aabb_overlap(a, b) == (not separated)


class TestTransformAabb:
    def test_identity_both_modes(self):
        box = Aabb([0, 0, 0], [1, 2, 1])
        for mode in ("corner_refit", "extrema_only"):
            out = transform_aabb(RigidTransform.identity(), box, mode)
            assert np.allclose(out.min, box.min) and np.allclose(out.max, box.max)

    def test_pure_translation_modes_agree(self):
        box = Aabb([0, 0, 0], [1, 2, 1])
        t = RigidTransform(np.eye(3), [0.1, 0, 0])
        a = transform_aabb(t, box, "corner_refit")
        b = transform_aabb(t, box, "extrema_only")
        assert np.allclose(a.min, b.min) and np.allclose(a.max, b.max)
        assert np.allclose(a.min, [0.1, 0, 0])

    def test_rotation_corner_refit_vs_corner_oracle(self):
        box = Aabb([0, 0, 0], [1, 2, 1])
        t = RigidTransform.from_axis_angle([0, 0, 1], np.pi / 2)
        refit = transform_aabb(t, box, "corner_refit")
        assert np.allclose(refit.edge_lengths, [2, 1, 1])
        # independent 8-corner oracle
        corners = np.array([[x, y, z] for x in (0, 1) for y in (0, 2) for z in (0, 1)], float)
        moved = corners @ t.rotation.T + t.translation
        assert np.allclose(refit.min, moved.min(axis=0))
        assert np.allclose(refit.max, moved.max(axis=0))

    def test_extrema_only_not_conservative_under_oblique_rotation(self):
        # At 90 degrees the two modes coincide (extrema map to corners); a
        # 45-degree rotation exposes the non-conservative literal mode.
        box = Aabb([0, 0, 0], [1, 2, 1])
        t = RigidTransform.from_axis_angle([0, 0, 1], np.pi / 4)
        refit = transform_aabb(t, box, "corner_refit")
        literal = transform_aabb(t, box, "extrema_only")
        corners = t.apply(box.corners())
        assert np.allclose(refit.min, corners.min(axis=0))
        assert np.allclose(refit.max, corners.max(axis=0))
        assert np.any(literal.min > corners.min(axis=0) + 1e-9) or \
            np.any(literal.max < corners.max(axis=0) - 1e-9)

    def test_corner_refit_contains_transformed_interior(self):
        rng = np.random.default_rng(37)
        for _ in range(50):
            lo = rng.normal(size=3)
            box = Aabb(lo, lo + rng.uniform(0.1, 2, 3))
            t = RigidTransform.from_axis_angle(rng.normal(size=3), rng.uniform(0, np.pi),
                                               rng.normal(size=3))
            out = transform_aabb(t, box, "corner_refit")
            samples = rng.uniform(box.min, box.max, (50, 3))
            moved = t.apply(samples)
            assert np.all(moved >= out.min - 1e-12) and np.all(moved <= out.max + 1e-12)


class TestRigidTransform:
    def test_rejects_non_orthonormal(self):
        with pytest.raises(ValueError):
            RigidTransform(np.eye(3) * 1.001, np.zeros(3))

    def test_rejects_reflection(self):
        with pytest.raises(ValueError):
            RigidTransform(np.diag([1.0, 1.0, -1.0]), np.zeros(3))

    def test_compose_and_inverse(self):
        rng = np.random.default_rng(41)
        a = RigidTransform.from_axis_angle(rng.normal(size=3), 0.7, rng.normal(size=3))
        b = RigidTransform.from_axis_angle(rng.normal(size=3), -1.2, rng.normal(size=3))
        p = rng.normal(size=3)
        assert np.allclose((a @ b).apply(p), a.apply(b.apply(p)))
        assert np.allclose((a @ a.inverse()).apply(p), p)

    def test_matrix_round_trip(self):
        t = RigidTransform.from_axis_angle([1, 2, 3], 0.4, [0.1, 0.2, 0.3])
        back = RigidTransform.from_matrix(t.as_matrix())
        assert np.allclose(back.rotation, t.rotation)
        assert np.allclose(back.translation, t.translation)


class TestRotationHelpers:
    def test_zero_direction_ray_rejected(self):
        with pytest.raises(ValueError):
            Ray([0, 0, 0], [0, 0, 0])

    def test_geodesic_same_rotation(self):
        # arccos near 1 amplifies the trace rounding to sqrt(eps) ~ 2e-8,
        # so "zero" for identical rotations means 1e-7 here
        R = rotation_from_axis_angle([1, 1, 0], 0.9)
        assert rotation_geodesic_angle(R, R) == pytest.approx(0.0, abs=1e-7)

    def test_geodesic_known_angle(self):
        rng = np.random.default_rng(43)
        for _ in range(20):
            axis = rng.normal(size=3)
            R = rotation_from_axis_angle(axis, 0.3)
            assert rotation_geodesic_angle(np.eye(3), R) == pytest.approx(0.3, abs=1e-9)

    def test_geodesic_vs_quaternion_oracle(self):
        rng = np.random.default_rng(47)
        for _ in range(100):
            R1 = Rotation.random(random_state=rng).as_matrix()
            R2 = Rotation.random(random_state=rng).as_matrix()
            q1 = Rotation.from_matrix(R1).as_quat()
            q2 = Rotation.from_matrix(R2).as_quat()
            expected = 2 * np.arccos(np.clip(abs(np.dot(q1, q2)), -1, 1))
            assert rotation_geodesic_angle(R1, R2) == pytest.approx(expected, abs=1e-9)
