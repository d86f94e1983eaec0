import numpy as np
import pytest

from fingergrasp.errors import (EmptyAfterPreprocessError, EmptyInputError,
                                InsufficientPointsError)
from fingergrasp.geometry import Aabb, PointCloud, aabb_from_points
from fingergrasp.perception import (KEPT, REMOVED_CROP, REMOVED_OUTLIER,
                                    REMOVED_PLANE, Bvh, PreprocessConfig,
                                    build_bvh, estimate_normals, preprocess,
                                    segment_region_growing,
                                    segmentation_accuracy)

from oracles import (bfs_component, scan_box_distance, scan_nearest,
                     scan_within_radius)


def cylinder_surface(rng, n, radius=0.03, height=0.10, center=(0, 0, 0.05)):
    theta = rng.uniform(0, 2 * np.pi, n)
    z = rng.uniform(-height / 2, height / 2, n)
    pts = np.column_stack([radius * np.cos(theta), radius * np.sin(theta), z])
    return pts + np.asarray(center)


class TestBvhStructure:
    def audit(self, bvh):
        pts = bvh.points
        # parent boxes contain child boxes; leaf ranges partition the index set
        seen = np.zeros(len(pts), dtype=bool)
        for node in range(bvh.node_count):
            sub = pts[bvh.leaf_indices(node)]
            assert np.all(sub >= bvh.node_min[node] - 1e-15)
            assert np.all(sub <= bvh.node_max[node] + 1e-15)
            if bvh.is_leaf(node):
                size = bvh.node_end[node] - bvh.node_start[node]
                assert 1 <= size <= bvh.leaf_capacity
                idx = bvh.leaf_indices(node)
                assert not seen[idx].any()
                seen[idx] = True
            else:
                l, r = bvh.node_left[node], bvh.node_right[node]
                for c in (l, r):
                    assert np.all(bvh.node_min[node] <= bvh.node_min[c])
                    assert np.all(bvh.node_max[node] >= bvh.node_max[c])
        assert seen.all()

    def test_small_cloud_single_leaf(self):
        rng = np.random.default_rng(0)
        pts = rng.normal(size=(9, 3))
        bvh = build_bvh(pts, leaf_capacity=16)
        assert bvh.node_count == 1
        box = aabb_from_points(pts)
        assert np.array_equal(bvh.node_min[0], box.min)
        assert np.array_equal(bvh.node_max[0], box.max)

    def test_structural_audit_random_cloud(self):
        rng = np.random.default_rng(1)
        pts = rng.uniform(-1, 1, (10000, 3))
        bvh = build_bvh(pts, leaf_capacity=16)
        self.audit(bvh)

    def test_depth_close_to_balanced(self):
        rng = np.random.default_rng(2)
        n, cap = 10000, 16
        bvh = build_bvh(rng.normal(size=(n, 3)), leaf_capacity=cap)
        assert bvh.depth <= int(np.ceil(np.log2(n / cap))) + 2

    def test_duplicated_points_terminate(self):
        pts = np.tile([[0.5, 0.5, 0.5]], (200, 1))
        bvh = build_bvh(pts, leaf_capacity=8)
        self.audit(bvh)
        idx, dist = bvh.nearest([0.5, 0.5, 0.5])
        assert idx == 0 and dist == 0.0

    def test_empty_cloud_rejected(self):
        with pytest.raises(EmptyInputError):
            build_bvh(np.empty((0, 3)))


class TestBvhNearest:
    def test_existing_point_distance_zero(self):
        rng = np.random.default_rng(3)
        pts = rng.normal(size=(500, 3))
        bvh = build_bvh(pts)
        idx, dist = bvh.nearest(pts[123])
        assert idx == 123 and dist == 0.0

    def test_matches_linear_scan(self):
        rng = np.random.default_rng(4)
        pts = rng.uniform(-1, 1, (5000, 3))
        bvh = build_bvh(pts)
        for _ in range(300):
            q = rng.uniform(-1.5, 1.5, 3)
            idx, dist = bvh.nearest(q)
            oidx, odist = scan_nearest(pts, q)
            assert idx == oidx
            assert dist == pytest.approx(odist, abs=1e-12)

    def test_far_query_not_pruned_wrong(self):
        rng = np.random.default_rng(5)
        pts = rng.normal(size=(2000, 3))
        bvh = build_bvh(pts)
        q = np.array([40.0, -25.0, 60.0])
        assert bvh.nearest(q)[:2] == scan_nearest(pts, q)

    def test_tie_rule_lowest_index(self):
        # two points symmetric about the query, plus exact duplicates
        pts = np.array([
            [1.0, 0.0, 0.0], [-1.0, 0.0, 0.0],
            [0.0, 2.0, 0.0], [1.0, 0.0, 0.0],
        ])
        bvh = build_bvh(pts, leaf_capacity=1)
        idx, dist = bvh.nearest([0.0, 0.0, 0.0])
        assert idx == 0 and dist == 1.0

    def test_batch_equals_single(self):
        rng = np.random.default_rng(6)
        pts = rng.uniform(-1, 1, (3000, 3))
        bvh = build_bvh(pts)
        queries = rng.uniform(-1.2, 1.2, (400, 3))
        bidx, bdist = bvh.nearest_batch(queries)
        for i, q in enumerate(queries):
            idx, dist = bvh.nearest(q)
            assert bidx[i] == idx
            assert bdist[i] == dist

    def test_visit_count_reported(self):
        rng = np.random.default_rng(7)
        bvh = build_bvh(rng.normal(size=(4000, 3)))
        idx, dist, visits = bvh.nearest(rng.normal(size=3), return_visits=True)
        assert visits >= 1


class TestBvhBoxQueries:
    def test_box_containing_point_collides(self):
        rng = np.random.default_rng(8)
        pts = rng.normal(size=(1000, 3))
        bvh = build_bvh(pts)
        box = Aabb(pts[42] - 0.01, pts[42] + 0.01)
        assert bvh.collides_box(box)
        assert bvh.min_distance_to_box(box) == 0.0

    def test_known_gap(self):
        # points on the plane x = 0, box face at x = g
        rng = np.random.default_rng(9)
        pts = np.column_stack([np.zeros(500), rng.uniform(-1, 1, 500), rng.uniform(-1, 1, 500)])
        bvh = build_bvh(pts)
        g = 0.37
        box = Aabb([g, -1, -1], [g + 1, 1, 1])
        assert bvh.min_distance_to_box(box) == pytest.approx(g, abs=1e-12)
        assert not bvh.collides_box(box)

    def test_random_boxes_match_scan(self):
        rng = np.random.default_rng(10)
        pts = rng.uniform(-1, 1, (2000, 3))
        bvh = build_bvh(pts)
        for _ in range(200):
            lo = rng.uniform(-1.5, 1.2, 3)
            box = Aabb(lo, lo + rng.uniform(0.01, 0.8, 3))
            d = bvh.min_distance_to_box(box)
            assert d == pytest.approx(scan_box_distance(pts, box.min, box.max), abs=1e-12)
            assert bvh.collides_box(box) == (d == 0.0)

    def test_radius_queries_match_scan(self):
        rng = np.random.default_rng(11)
        pts = rng.uniform(-1, 1, (1500, 3))
        bvh = build_bvh(pts)
        for _ in range(30):
            centers = rng.uniform(-1, 1, (rng.integers(1, 8), 3))
            r = float(rng.uniform(0.05, 0.6))
            got = bvh.within_radius_union(centers, r)
            assert np.array_equal(got, scan_within_radius(pts, centers, r))
            flags = bvh.any_within_radius(centers, r)
            for ci, c in enumerate(centers):
                d2 = ((pts - c) ** 2).sum(axis=1)
                assert flags[ci] == bool((d2 <= r * r).any())


class TestRegionGrowing:
    def test_two_clusters(self):
        rng = np.random.default_rng(12)
        radius = 0.05
        a = rng.uniform(0, 0.04, (150, 3))
        b = rng.uniform(0, 0.04, (120, 3)) + 10 * radius
        pts = np.vstack([a, b])
        got = segment_region_growing(pts, seed=3, radius=radius)
        assert np.array_equal(got, np.arange(150))

    def test_single_point(self):
        got = segment_region_growing(np.array([[1.0, 2.0, 3.0]]), 0, 0.1)
        assert np.array_equal(got, [0])

    def test_fully_connected(self):
        rng = np.random.default_rng(13)
        pts = rng.uniform(0, 0.01, (80, 3))
        got = segment_region_growing(pts, 5, radius=0.1)
        assert np.array_equal(got, np.arange(80))

    def test_matches_bfs_oracle(self):
        rng = np.random.default_rng(14)
        for _ in range(15):
            pts = rng.uniform(0, 1, (rng.integers(30, 250), 3))
            seed = int(rng.integers(len(pts)))
            radius = float(rng.uniform(0.05, 0.3))
            got = segment_region_growing(pts, seed, radius)
            assert np.array_equal(got, bfs_component(pts, seed, radius))
            assert seed in got

    def test_invalid_seed(self):
        with pytest.raises(IndexError):
            segment_region_growing(np.zeros((5, 3)), 7, 0.1)

    def test_non_positive_radius(self):
        with pytest.raises(ValueError):
            segment_region_growing(np.zeros((5, 3)), 0, 0.0)


class TestPreprocess:
    def test_cylinder_on_plane(self):
        # the plane filter necessarily eats the object band within its
        # distance threshold, so tau must stay under 5% of the height
        rng = np.random.default_rng(15)
        cyl = cylinder_surface(rng, 3000, height=0.12, center=(0, 0, 0.06))
        gx = rng.uniform(-0.2, 0.2, 2500)
        gy = rng.uniform(-0.2, 0.2, 2500)
        plane = np.column_stack([gx, gy, np.zeros(2500)])
        n_obj_plane = len(cyl) + len(plane)
        outliers = rng.uniform(-0.25, 0.25, (int(0.01 * n_obj_plane), 3))
        pts = np.vstack([cyl, plane, outliers])
        pts += rng.normal(0, 0.0012, pts.shape)
        cloud = PointCloud(pts)
        cfg = PreprocessConfig(plane_distance_threshold=0.004,
                               crop_box=Aabb([-0.3, -0.3, -0.02], [0.3, 0.3, 0.3]))
        res = preprocess(cloud, cfg)
        # plane gone
        plane_ids = np.arange(len(cyl), len(cyl) + len(plane))
        assert (res.reasons[plane_ids] == REMOVED_PLANE).mean() > 0.95
        # >= 95% of cylinder retained
        obj_ids = np.arange(len(cyl))
        assert (res.reasons[obj_ids] == KEPT).mean() >= 0.95
        # output indices are a subset of input indices
        assert np.all(np.isin(res.kept_indices, np.arange(len(pts))))
        assert np.array_equal(res.cloud.points, pts[res.kept_indices])

    def test_clean_cloud_identity(self):
        # evenly sampled curved surface: no outliers, no dominant plane,
        # everything inside the crop box -> preprocess must be the identity
        theta = np.linspace(0, 2 * np.pi, 80, endpoint=False)
        z = np.linspace(0, 0.1, 40)
        T, Zg = np.meshgrid(theta, z)
        pts = np.column_stack([0.03 * np.cos(T).ravel(), 0.03 * np.sin(T).ravel(), Zg.ravel()])
        cfg = PreprocessConfig(plane_distance_threshold=0.001,
                               crop_box=Aabb([-1, -1, -1], [1, 1, 1]))
        res = preprocess(PointCloud(pts), cfg)
        assert np.array_equal(res.kept_indices, np.arange(len(pts)))
        assert np.all(res.reasons == KEPT)

    def test_all_plane_raises(self):
        rng = np.random.default_rng(17)
        pts = np.column_stack([rng.uniform(0, 1, 400), rng.uniform(0, 1, 400), np.zeros(400)])
        cfg = PreprocessConfig(plane_distance_threshold=0.005)
        with pytest.raises(EmptyAfterPreprocessError):
            preprocess(PointCloud(pts), cfg)

    def test_crop_reason_recorded(self):
        pts = np.array([[0.5, 0.5, 0.5], [5.0, 5.0, 5.0]] * 40, dtype=float)
        pts += np.linspace(0, 0.01, 80)[:, None]
        cfg = PreprocessConfig(crop_box=Aabb([0, 0, 0], [1, 1, 1]), plane_iterations=0)
        res = preprocess(PointCloud(pts), cfg)
        assert np.all(res.reasons[1::2] == REMOVED_CROP)

    def test_empty_cloud_rejected(self):
        with pytest.raises(EmptyInputError):
            preprocess(PointCloud(np.empty((0, 3))), PreprocessConfig())

    def test_isolated_outliers_removed(self):
        rng = np.random.default_rng(18)
        dense = rng.uniform(0, 0.05, (500, 3))
        stray = np.array([[1.0, 1.0, 1.0], [-1.0, 0.5, 2.0]])
        pts = np.vstack([dense, stray])
        res = preprocess(PointCloud(pts), PreprocessConfig(plane_iterations=0))
        assert np.all(res.reasons[-2:] == REMOVED_OUTLIER)


class TestNormals:
    def test_plane_normals(self):
        rng = np.random.default_rng(19)
        pts = np.column_stack([rng.uniform(0, 1, 600), rng.uniform(0, 1, 600), np.zeros(600)])
        field = estimate_normals(pts, k=12, camera=[0.5, 0.5, 2.0])
        angles = np.degrees(np.arccos(np.clip(field.normals @ [0, 0, 1], -1, 1)))
        assert np.all(angles < 2.0)

    def test_sphere_normals_radial(self):
        rng = np.random.default_rng(20)
        v = rng.normal(size=(4000, 3))
        pts = v / np.linalg.norm(v, axis=1, keepdims=True)
        camera = np.array([0.0, 0.0, 5.0])
        visible = pts[:, 2] > 0.2
        field = estimate_normals(pts, k=16, camera=camera)
        dots = np.einsum("ij,ij->i", field.normals[visible], pts[visible])
        angles = np.degrees(np.arccos(np.clip(dots, -1, 1)))
        assert np.percentile(angles, 99) < 5.0

    def test_k_equals_n_plane(self):
        pts = np.column_stack([np.linspace(0, 1, 30), np.linspace(0, 2, 30) % 0.7, np.zeros(30)])
        field = estimate_normals(pts, k=30, camera=[0, 0, 1])
        assert np.allclose(np.abs(field.normals @ [0, 0, 1]), 1.0, atol=1e-9)

    def test_unit_length_and_camera_facing(self):
        rng = np.random.default_rng(21)
        pts = cylinder_surface(rng, 2000)
        camera = np.array([0.3, 0.1, 0.3])
        field = estimate_normals(pts, k=14, camera=camera)
        assert np.allclose(np.linalg.norm(field.normals, axis=1), 1.0, atol=1e-6)
        assert np.all(np.einsum("ij,ij->i", field.normals, camera - pts) >= 0)

    def test_insufficient_points(self):
        with pytest.raises(InsufficientPointsError):
            estimate_normals(np.zeros((4, 3)), k=8, camera=[0, 0, 1])


class TestSegmentationAccuracy:
    def test_perfect(self):
        assert segmentation_accuracy([1, 2, 3], [1, 2, 3]) == 100.0

    def test_empty_prediction(self):
        assert segmentation_accuracy([], [1, 2]) == 0.0

    def test_partial(self):
        truth = np.arange(200)
        predicted = np.arange(185)
        assert segmentation_accuracy(predicted, truth) == pytest.approx(92.5)

    def test_both_empty(self):
        assert segmentation_accuracy([], []) == 100.0
