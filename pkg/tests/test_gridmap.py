import numpy as np
import pytest

from armplan.geometry import ObstacleSphere
from armplan.gridmap import (OutOfBounds, compute_edf, complete_occlusion,
                             dump_occupancy, filter_above_table, load_occupancy,
                             load_ply, load_scene, load_xyz_csv, query_distance,
                             query_distance_many, voxelize, voxelize_spheres)


def make_grid(occ, origin=(0, 0, 0), res=0.05):
    from armplan.gridmap import VoxelGrid
    return VoxelGrid(origin=np.array(origin, dtype=float), resolution=res,
                     occupancy=np.asarray(occ, dtype=bool))


class TestFilterAboveTable:
    def test_all_below_removed(self):
        cloud = np.array([[0, 0, -0.1], [1, 1, 0.0]])
        assert len(filter_above_table(cloud, table_z=0.0)) == 0

    def test_boundary_point_removed(self):
        cloud = np.array([[0, 0, 0.5]])
        assert len(filter_above_table(cloud, table_z=0.5, eps=0.0)) == 0

    def test_mixed_scene_matches_scan(self):
        rng = np.random.default_rng(0)
        cloud = rng.uniform([-1, -1, -0.2], [1, 1, 0.6], size=(500, 3))
        out = filter_above_table(cloud, table_z=0.1, eps=0.02)
        expected = sum(1 for p in cloud if p[2] > 0.12)
        assert len(out) == expected


class TestCompleteOcclusion:
    def test_single_point_column(self):
        res = 0.05
        h = 0.22
        cloud = np.array([[0.11, 0.07, h]])
        out = complete_occlusion(cloud, table_z=0.0, resolution=res)
        added = len(out) - 1
        assert added == int(np.ceil(h / res))

    def test_empty_cloud(self):
        assert len(complete_occlusion(np.empty((0, 3)), 0.0, 0.05)) == 0

    def test_superset_property(self):
        rng = np.random.default_rng(1)
        cloud = rng.uniform([0, 0, 0.05], [0.5, 0.5, 0.4], size=(100, 3))
        out = complete_occlusion(cloud, table_z=0.0, resolution=0.05)
        assert np.allclose(out[:100], cloud)

    def test_two_object_volume_matches_column_fill(self):
        res = 0.02
        # two thin towers of known heights
        cloud = np.array([[0.05, 0.05, 0.10], [0.25, 0.25, 0.20]])
        out = complete_occlusion(cloud, table_z=0.0, resolution=res)
        expected = 2 + int(np.ceil(0.10 / res)) + int(np.ceil(0.20 / res))
        assert len(out) == expected


class TestVoxelize:
    def test_floor_division(self):
        grid, dropped = voxelize(np.array([[0.1, 0.1, 0.1]]), np.zeros(3), 0.05,
                                 (4, 4, 4))
        assert dropped == 0
        assert grid.occupancy[2, 2, 2]
        assert grid.occupancy.sum() == 1

    def test_boundary_goes_to_higher_voxel(self):
        grid, _ = voxelize(np.array([[0.05, 0.0, 0.0]]), np.zeros(3), 0.05,
                           (4, 4, 4))
        assert grid.occupancy[1, 0, 0]

    def test_out_of_bounds_counted(self):
        grid, dropped = voxelize(np.array([[10.0, 0, 0], [0.01, 0.01, 0.01]]),
                                 np.zeros(3), 0.05, (4, 4, 4))
        assert dropped == 1
        assert grid.occupancy.sum() == 1

    def test_random_cloud_matches_naive_binning(self):
        rng = np.random.default_rng(2)
        cloud = rng.uniform(0, 0.5, size=(300, 3))
        res, dims = 0.05, (10, 10, 10)
        grid, _ = voxelize(cloud, np.zeros(3), res, dims)
        expected = np.zeros(dims, dtype=bool)
        for p in cloud:
            i, j, k = (int(p[0] // res), int(p[1] // res), int(p[2] // res))
            if i < 10 and j < 10 and k < 10:
                expected[i, j, k] = True
        assert np.array_equal(grid.occupancy, expected)

    def test_idempotent_on_voxel_centers(self):
        rng = np.random.default_rng(3)
        occ = rng.random((8, 8, 8)) < 0.2
        res = 0.05
        centers = (np.argwhere(occ) + 0.5) * res
        grid, _ = voxelize(centers, np.zeros(3), res, (8, 8, 8))
        assert np.array_equal(grid.occupancy, occ)


class TestComputeEdf:
    def test_345_triangle(self):
        occ = np.zeros((8, 8, 8), dtype=bool)
        occ[1, 1, 1] = True
        field = compute_edf(make_grid(occ, res=0.05))
        assert field.distances[4, 5, 1] == pytest.approx(5 * 0.05)

    def test_fully_occupied(self):
        occ = np.ones((4, 4, 4), dtype=bool)
        assert np.all(compute_edf(make_grid(occ)).distances == 0.0)

    def test_all_free_is_inf(self):
        occ = np.zeros((4, 4, 4), dtype=bool)
        assert np.all(np.isinf(compute_edf(make_grid(occ)).distances))

    def test_matches_brute_force_on_random_grid(self):
        rng = np.random.default_rng(4)
        occ = rng.random((16, 16, 16)) < 0.05
        occ[0, 0, 0] = True  # ensure non-empty
        res = 0.05
        field = compute_edf(make_grid(occ, res=res))
        centers = np.argwhere(occ)
        idx = np.moveaxis(np.indices(occ.shape), 0, -1).reshape(-1, 3)
        diffs = idx[:, None, :] - centers[None, :, :]
        brute = np.min(np.linalg.norm(diffs, axis=2), axis=1).reshape(occ.shape) * res
        assert np.max(np.abs(field.distances - brute)) <= 1e-9

    def test_lipschitz_property(self):
        rng = np.random.default_rng(5)
        occ = rng.random((12, 12, 12)) < 0.1
        occ[3, 3, 3] = True
        res = 0.05
        d = compute_edf(make_grid(occ, res=res)).distances
        for axis in range(3):
            diff = np.abs(np.diff(d, axis=axis))
            assert np.max(diff) <= res + 1e-9


class TestQueryDistance:
    def make_field(self):
        occ = np.zeros((6, 6, 6), dtype=bool)
        occ[0, 0, 0] = True
        return compute_edf(make_grid(occ, res=0.1))

    def test_voxel_center_value(self):
        field = self.make_field()
        p = (np.array([3, 2, 1]) + 0.5) * 0.1
        assert query_distance(field, p) == pytest.approx(field.distances[3, 2, 1])

    def test_midpoint_is_mean(self):
        field = self.make_field()
        a = field.distances[2, 0, 0]
        b = field.distances[3, 0, 0]
        p = np.array([0.30, 0.05, 0.05])
        assert query_distance(field, p) == pytest.approx(0.5 * (a + b))

    def test_interpolation_bound(self):
        field = self.make_field()
        rng = np.random.default_rng(6)
        for _ in range(200):
            p = rng.uniform(0.05, 0.55, size=3)
            val = query_distance(field, p)
            i = np.clip(((p / 0.1) - 0.5).astype(int), 0, 4)
            cell = field.distances[i[0]:i[0] + 2, i[1]:i[1] + 2, i[2]:i[2] + 2]
            assert cell.min() - 1e-12 <= val <= cell.max() + 1e-12

    def test_out_of_bounds_raises(self):
        with pytest.raises(OutOfBounds):
            query_distance(self.make_field(), np.array([5.0, 0.0, 0.0]))

    def test_many_matches_scalar(self):
        field = self.make_field()
        rng = np.random.default_rng(7)
        pts = rng.uniform(0.0, 0.6, size=(50, 3))
        many = query_distance_many(field, pts)
        for p, v in zip(pts, many):
            assert v == pytest.approx(query_distance(field, p), abs=1e-12)


class TestVoxelizeSpheres:
    def test_center_inclusion_rule(self):
        sphere = ObstacleSphere(center=np.array([0.25, 0.25, 0.25]), radius=0.06)
        grid = voxelize_spheres([sphere], np.zeros(3), 0.05, (10, 10, 10))
        assert grid.occupancy[5, 5, 5]
        # voxel center (0.025, 0.025, 0.025) is > 0.06 away
        assert not grid.occupancy[0, 0, 0]


class TestIO:
    def test_ply_roundtrip(self, tmp_path):
        path = tmp_path / "cloud.ply"
        pts = np.array([[0.1, 0.2, 0.3], [1.0, 2.0, 3.0]])
        with open(path, "w") as f:
            f.write("ply\nformat ascii 1.0\nelement vertex 2\n"
                    "property float x\nproperty float y\nproperty float z\n"
                    "end_header\n")
            for p in pts:
                f.write(f"{p[0]} {p[1]} {p[2]}\n")
        assert np.allclose(load_ply(path), pts)

    def test_csv_roundtrip(self, tmp_path):
        path = tmp_path / "cloud.csv"
        path.write_text("x,y,z\n0.1,0.2,0.3\n1,2,3\n")
        pts = load_xyz_csv(path)
        assert np.allclose(pts, [[0.1, 0.2, 0.3], [1, 2, 3]])

    def test_scene_roundtrip(self, tmp_path):
        path = tmp_path / "scene.yaml"
        path.write_text("obstacles:\n- center: [0.1, 0.2, 0.3]\n  radius: 0.025\n")
        scene = load_scene(path)
        assert len(scene) == 1
        assert scene[0].radius == 0.025

    def test_occupancy_dump_roundtrip(self, tmp_path):
        rng = np.random.default_rng(8)
        occ = rng.random((5, 6, 7)) < 0.3
        grid = make_grid(occ, origin=(-0.5, 0.0, 0.25), res=0.02)
        path = tmp_path / "grid.bin"
        dump_occupancy(grid, path)
        loaded = load_occupancy(path)
        assert np.array_equal(loaded.occupancy, occ)
        assert loaded.resolution == 0.02
        assert np.allclose(loaded.origin, [-0.5, 0.0, 0.25])
