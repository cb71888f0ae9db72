import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from decoupled4d.errors import EmptyCloud, InvalidDelta, LengthMismatch
from decoupled4d.geometry import CameraPose, Intrinsics, se3_compose
from decoupled4d.maps import DenseMap
from decoupled4d.metrics import (MetricReport, PointCloud, ate, chamfer,
                                 lower_median, nearest_neighbor_distances,
                                 read_ply, roc_auc, rpe, unproject_cloud,
                                 write_ply)
from decoupled4d.pose import Trajectory


def random_pose(rng, frame_id=0, max_angle=0.5, max_shift=1.0):
    return CameraPose(Rotation.from_rotvec(
        rng.uniform(-max_angle, max_angle, 3)).as_matrix(),
        rng.uniform(-max_shift, max_shift, 3), frame_id)


def random_trajectory(rng, n=8):
    return Trajectory([random_pose(rng, frame_id=t) for t in range(n)])


def cloud(rng, n=60, scale=2.0):
    return PointCloud(rng.uniform(-scale, scale, (n, 3)))


class TestLowerMedian:
    def test_odd_is_middle(self):
        assert lower_median(np.array([3.0, 1.0, 2.0])) == 2.0

    def test_even_takes_lower(self):
        assert lower_median(np.array([4.0, 1.0, 2.0, 3.0])) == 2.0


class TestNearestNeighbor:
    def test_grid_equals_brute_bitwise(self, rng):
        for _ in range(30):
            q = rng.uniform(-3, 3, (rng.integers(1, 300), 3))
            r = rng.uniform(-3, 3, (rng.integers(1, 300), 3))
            grid = nearest_neighbor_distances(q, r, method="grid")
            brute = nearest_neighbor_distances(q, r, method="brute")
            np.testing.assert_array_equal(grid, brute)

    def test_degenerate_geometry(self, rng):
        # Clustered, collinear, and coincident reference sets.
        line = np.column_stack([np.linspace(0, 1, 50), np.zeros(50),
                                np.zeros(50)])
        clusters = np.vstack([rng.normal(0, 1e-4, (40, 3)),
                              rng.normal(5, 1e-4, (40, 3))])
        same = np.tile([[1.0, 2.0, 3.0]], (20, 1))
        q = rng.uniform(-1, 6, (100, 3))
        for ref in (line, clusters, same):
            np.testing.assert_array_equal(
                nearest_neighbor_distances(q, ref, method="grid"),
                nearest_neighbor_distances(q, ref, method="brute"))


class TestChamfer:
    def test_identity_all_zero(self, rng):
        c = cloud(rng)
        stats = chamfer(c, c)
        for name in ("acc_mean", "acc_median", "comp_mean", "comp_median",
                     "dist_mean", "dist_median"):
            assert getattr(stats, name) == 0.0

    def test_translated_grid(self):
        # A shift below half the grid spacing keeps each point matched to its
        # own source, so all statistics equal the shift exactly.
        g = np.stack(np.meshgrid(*[np.arange(5) * 0.1] * 3), -1).reshape(-1, 3)
        pred = PointCloud(g + [0.04, 0.0, 0.0])
        stats = chamfer(pred, PointCloud(g))
        assert stats.acc_mean == pytest.approx(0.04, abs=1e-12)
        assert stats.comp_mean == pytest.approx(0.04, abs=1e-12)
        assert stats.dist_mean == pytest.approx(0.04, abs=1e-12)

    def test_matches_quadratic_oracle(self, rng):
        pred, gt = cloud(rng, 50), cloud(rng, 50)
        stats = chamfer(pred, gt)
        d_pg = np.sqrt(((pred.points[:, None] - gt.points[None]) ** 2)
                       .sum(-1)).min(1)
        d_gp = np.sqrt(((gt.points[:, None] - pred.points[None]) ** 2)
                       .sum(-1)).min(1)
        assert stats.acc_mean == pytest.approx(d_pg.mean(), rel=1e-12)
        assert stats.comp_mean == pytest.approx(d_gp.mean(), rel=1e-12)
        union = np.concatenate([d_pg, d_gp])
        assert stats.dist_mean == pytest.approx(union.mean(), rel=1e-12)
        assert stats.dist_median == lower_median(union)

    def test_symmetry(self, rng):
        a, b = cloud(rng, 40), cloud(rng, 70)
        fwd = chamfer(a, b)
        rev = chamfer(b, a)
        assert fwd.acc_mean == rev.comp_mean
        assert fwd.acc_median == rev.comp_median
        assert fwd.comp_mean == rev.acc_mean
        assert fwd.dist_mean == rev.dist_mean
        assert fwd.dist_median == rev.dist_median

    def test_dist_mean_betweenness(self, rng):
        for _ in range(20):
            a = cloud(rng, int(rng.integers(5, 80)))
            b = cloud(rng, int(rng.integers(5, 80)))
            stats = chamfer(a, b)
            lo = min(stats.acc_mean, stats.comp_mean)
            hi = max(stats.acc_mean, stats.comp_mean)
            assert lo - 1e-12 <= stats.dist_mean <= hi + 1e-12

    def test_permutation_invariance(self, rng):
        a, b = cloud(rng, 45), cloud(rng, 55)
        stats = chamfer(a, b)
        pa = PointCloud(a.points[rng.permutation(len(a.points))])
        pb = PointCloud(b.points[rng.permutation(len(b.points))])
        permuted = chamfer(pa, pb)
        assert stats.acc_mean == permuted.acc_mean
        assert stats.dist_median == permuted.dist_median


class TestATE:
    def test_identity(self, rng):
        traj = random_trajectory(rng)
        assert ate(traj, traj) < 1e-12

    def test_rigid_invariance(self, rng):
        traj = random_trajectory(rng)
        g = random_pose(rng)
        poses = [se3_compose(g, p) for p in traj]
        for i, p in enumerate(poses):
            p.frame_id = i
        assert ate(Trajectory(poses), traj) < 1e-9

    def test_single_displaced_pose_oracle(self, rng):
        traj = random_trajectory(rng, n=6)
        moved = [CameraPose(p.rotation.copy(), p.translation.copy(), p.frame_id)
                 for p in traj]
        moved[3].translation = moved[3].translation + np.array([0, 0, 0.5])
        moved = Trajectory(moved)
        # Independent Umeyama-alignment oracle via scipy.
        p = moved.positions()
        q = traj.positions()
        mp, mq = p.mean(0), q.mean(0)
        rot, _ = Rotation.align_vectors(q - mq, p - mp,
                                        return_sensitivity=False)[0], None
        aligned = rot.apply(p - mp) + mq
        expected = np.sqrt(np.mean(np.sum((aligned - q) ** 2, axis=1)))
        assert ate(moved, traj) == pytest.approx(expected, rel=1e-9)

    def test_length_mismatch(self, rng):
        a = random_trajectory(rng, 5)
        b = random_trajectory(rng, 6)
        with pytest.raises(LengthMismatch):
            ate(a, b)


class TestRPE:
    def test_identity(self, rng):
        traj = random_trajectory(rng)
        rte, rre = rpe(traj, traj)
        assert rte < 1e-12 and rre < 1e-5

    def test_left_invariance(self, rng):
        traj = random_trajectory(rng)
        g = random_pose(rng)
        poses = [se3_compose(g, p) for p in traj]
        for i, p in enumerate(poses):
            p.frame_id = i
        rte, rre = rpe(Trajectory(poses), traj)
        # rre floor set by arccos amplification near angle zero.
        assert rte < 1e-9 and rre < 1e-4

    def test_single_corrupted_rotation(self, rng):
        n, theta = 8, 5.0
        traj = random_trajectory(rng, n)
        moved = [CameraPose(p.rotation.copy(), p.translation.copy(),
                            p.frame_id) for p in traj]
        spin = Rotation.from_euler("y", theta, degrees=True).as_matrix()
        moved[4] = CameraPose(moved[4].rotation @ spin, moved[4].translation, 4)
        rte, rre = rpe(Trajectory(moved), traj)
        # The corrupted pose perturbs exactly two consecutive relative poses,
        # each by the geodesic angle theta.
        expected = np.sqrt(2 * theta ** 2 / (n - 1))
        assert rre == pytest.approx(expected, rel=1e-6)

    def test_invalid_delta(self, rng):
        traj = random_trajectory(rng, 4)
        with pytest.raises(InvalidDelta):
            rpe(traj, traj, delta=0)
        with pytest.raises((InvalidDelta, LengthMismatch)):
            rpe(traj, traj, delta=4)


class TestUnproject:
    def _intrinsics(self):
        return Intrinsics(fx=50.0, fy=50.0, cx=8.0, cy=6.0,
                          width=16, height=12)

    def test_principal_point_unit_depth(self):
        k = self._intrinsics()
        values = np.zeros((12, 16), dtype=np.float32)
        values[6, 8] = 1.0
        traj = Trajectory([CameraPose.identity(0)])
        out = unproject_cloud([DenseMap(values, "depth")], traj, k, stride=1)
        np.testing.assert_allclose(out.points, [[0.0, 0.0, 1.0]], atol=1e-12)

    def test_stride_subsamples_stride1(self, rng):
        k = self._intrinsics()
        values = rng.uniform(1, 3, (12, 16)).astype(np.float32)
        traj = Trajectory([random_pose(rng)])
        dense = unproject_cloud([DenseMap(values, "depth")], traj, k, stride=1)
        coarse = unproject_cloud([DenseMap(values, "depth")], traj, k, stride=2)
        keep = dense.points.reshape(12, 16, 3)[::2, ::2].reshape(-1, 3)
        np.testing.assert_array_equal(coarse.points, keep)

    def test_empty_cloud_raises(self):
        k = self._intrinsics()
        empty = DenseMap(np.zeros((12, 16), dtype=np.float32), "depth")
        with pytest.raises(EmptyCloud):
            unproject_cloud([empty], Trajectory([CameraPose.identity(0)]),
                            k, stride=1)


class TestRocAuc:
    def test_perfect_separation(self):
        scores = np.array([0.1, 0.2, 0.8, 0.9])
        labels = np.array([0.0, 0.0, 1.0, 1.0])
        assert roc_auc(scores, labels) == 1.0

    def test_random_scores_near_half(self, rng):
        scores = rng.uniform(0, 1, 20000)
        labels = (rng.uniform(0, 1, 20000) < 0.3).astype(float)
        assert abs(roc_auc(scores, labels) - 0.5) < 0.02

    def test_matches_pairwise_oracle(self, rng):
        scores = rng.normal(size=80)
        labels = (rng.uniform(size=80) < 0.4).astype(float)
        pos = scores[labels == 1.0]
        neg = scores[labels == 0.0]
        wins = (pos[:, None] > neg[None]).sum() \
            + 0.5 * (pos[:, None] == neg[None]).sum()
        assert roc_auc(scores, labels) == pytest.approx(
            wins / (len(pos) * len(neg)), rel=1e-12)


class TestPly:
    def test_round_trip(self, rng, tmp_path):
        c = cloud(rng, 30)
        path = tmp_path / "c.ply"
        write_ply(path, c)
        loaded = read_ply(path)
        np.testing.assert_allclose(loaded.points, c.points, rtol=1e-8)

    def test_header_format(self, rng, tmp_path):
        path = tmp_path / "c.ply"
        write_ply(path, cloud(rng, 4))
        lines = path.read_text().splitlines()
        assert lines[0] == "ply"
        assert lines[1] == "format ascii 1.0"
        assert lines[2] == "element vertex 4"
        assert lines[3:6] == ["property float x", "property float y",
                              "property float z"]
        assert lines[6] == "end_header"
        assert len(lines) == 11


class TestMetricReport:
    def test_tsv_round_trip_fields(self):
        rep = MetricReport(0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
        header = MetricReport.tsv_header().split("\t")
        values = rep.tsv_line().split("\t")
        assert len(header) == len(values) == 9
        for name, value in zip(header, values):
            assert float(value) == pytest.approx(getattr(rep, name))

    def test_negative_metric_rejected(self):
        with pytest.raises(ValueError):
            MetricReport(-0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)


def test_point_cloud_rejects_nonfinite():
    with pytest.raises(ValueError):
        PointCloud(np.array([[0.0, 0.0, np.inf]]))
