"""Loss terms, projection, and the metric suite."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from meshflow import tensor as T
from meshflow.errors import AlignmentError, DomainError, EvaluationError, ShapeError
from meshflow.objective import (JointRegressor, LossWeights, MetricsReport, l1_loss,
                                mpjpe, mpjpe_z, mpve, pa_mpjpe,
                                project_weak_perspective, regress_joints,
                                silhouette_loss, total_loss, umeyama)
from meshflow.tensor import Tensor


def rotation(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


class TestRegressJoints:
    def test_one_hot_rows_copy_vertices(self):
        rng = np.random.default_rng(0)
        verts = rng.normal(size=(5, 3))
        m = np.zeros((2, 5))
        m[0, 3] = 1.0
        m[1, 1] = 1.0
        out = regress_joints(Tensor(verts), JointRegressor(m)).data
        assert np.array_equal(out, verts[[3, 1]])

    def test_uniform_row_gives_centroid(self):
        rng = np.random.default_rng(1)
        verts = rng.normal(size=(4, 3))
        out = regress_joints(Tensor(verts), JointRegressor(np.full((1, 4), 0.25))).data
        assert np.abs(out[0] - verts.mean(axis=0)).max() < 1e-12

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(2)
        raw = rng.random((3, 6))
        m = raw / raw.sum(axis=1, keepdims=True)
        verts = rng.normal(size=(6, 3))
        want = np.zeros((3, 3))
        for j in range(3):
            for v in range(6):
                want[j] += m[j, v] * verts[v]
        got = regress_joints(Tensor(verts), JointRegressor(m)).data
        assert np.abs(got - want).max() < 1e-12

    def test_rows_must_be_stochastic(self):
        with pytest.raises(DomainError):
            JointRegressor(np.full((2, 4), 0.3))


class TestProjection:
    def test_orthographic_drop(self):
        rng = np.random.default_rng(3)
        pts = rng.normal(size=(5, 3))
        out = project_weak_perspective(Tensor(pts), Tensor([1.0, 0.0, 0.0])).data
        assert np.array_equal(out, pts[:, :2])

    def test_hand_arithmetic(self):
        out = project_weak_perspective(Tensor([[1.0, 1.0, 5.0]]),
                                       Tensor([2.0, 1.0, 1.0])).data
        assert out.tolist() == [[3.0, 3.0]]

    def test_z_translation_invisible(self):
        rng = np.random.default_rng(4)
        pts = rng.normal(size=(4, 3))
        cam = Tensor([1.3, 0.2, -0.4])
        a = project_weak_perspective(Tensor(pts), cam).data
        shifted = pts + np.array([0.0, 0.0, 7.0])
        b = project_weak_perspective(Tensor(shifted), cam).data
        assert np.array_equal(a, b)

    def test_non_positive_scale_rejected(self):
        with pytest.raises(DomainError):
            project_weak_perspective(Tensor(np.zeros((2, 3))),
                                     Tensor([0.0, 0.0, 0.0]))


class TestL1:
    def test_identical_inputs(self):
        x = np.arange(6.0).reshape(2, 3)
        assert l1_loss(Tensor(x), Tensor(x.copy())).item() == 0.0

    def test_constant_offset(self):
        x = np.zeros((2, 3))
        assert abs(l1_loss(Tensor(x + 3.0), Tensor(x)).item() - 3.0) < 1e-15

    def test_loop_oracle(self):
        rng = np.random.default_rng(5)
        a = rng.normal(size=(3, 4))
        b = rng.normal(size=(3, 4))
        want = sum(abs(a[i, j] - b[i, j]) for i in range(3) for j in range(4)) / 12
        assert abs(l1_loss(Tensor(a), Tensor(b)).item() - want) < 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            l1_loss(Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 2))))


class TestSilhouetteLoss:
    def test_perfect_prediction_under_clamp(self):
        gt = np.array([[0.0, 1.0], [1.0, 0.0]])
        loss = silhouette_loss(Tensor(gt.copy()), gt).item()
        assert loss <= -np.log(1.0 - 1e-7) + 1e-12

    def test_half_probability_gives_ln2(self):
        gt = np.array([[0.0, 1.0], [1.0, 0.0]])
        loss = silhouette_loss(Tensor(np.full((2, 2), 0.5)), gt).item()
        assert abs(loss - np.log(2.0)) < 1e-12

    def test_direct_formula_oracle(self):
        rng = np.random.default_rng(6)
        pred = rng.uniform(0.01, 0.99, size=(4, 4))
        gt = (rng.random((4, 4)) < 0.5).astype(float)
        p = np.clip(pred, 1e-7, 1.0 - 1e-7)
        want = -(gt * np.log(p) + (1.0 - gt) * np.log(1.0 - p)).mean()
        assert abs(silhouette_loss(Tensor(pred), gt).item() - want) < 1e-12

    def test_non_binary_gt_rejected(self):
        with pytest.raises(DomainError):
            silhouette_loss(Tensor(np.full((2, 2), 0.5)), np.full((2, 2), 0.3))


class TestTotalLoss:
    def comps(self, rng):
        return {name: Tensor(rng.uniform(0.1, 2.0))
                for name in ("rle", "vertices", "pose3d", "pose2d", "silhouette")}

    def test_all_zero_weights(self):
        rng = np.random.default_rng(7)
        w = LossWeights(0.0, 0.0, 0.0, 0.0, 0.0)
        assert total_loss(self.comps(rng), w).item() == 0.0

    def test_single_unit_weight_passes_component_through(self):
        rng = np.random.default_rng(8)
        comps = self.comps(rng)
        w = LossWeights(lambda_d=0.0, lambda_v=0.0, lambda_3d=1.0,
                        lambda_2d=0.0, lambda_s=0.0)
        assert total_loss(comps, w).item() == comps["pose3d"].item()

    def test_direct_formula_oracle(self):
        rng = np.random.default_rng(9)
        comps = self.comps(rng)
        w = LossWeights(*rng.uniform(0.0, 2.0, size=5))
        want = (w.lambda_d * comps["rle"].item() + w.lambda_v * comps["vertices"].item()
                + w.lambda_3d * comps["pose3d"].item()
                + w.lambda_2d * comps["pose2d"].item()
                + w.lambda_s * comps["silhouette"].item())
        assert abs(total_loss(comps, w).item() - want) < 1e-12

    def test_linearity_in_each_component(self):
        rng = np.random.default_rng(10)
        comps = self.comps(rng)
        w = LossWeights(0.3, 1.0, 1.0, 1.0, 0.1)
        base = total_loss(comps, w).item()
        bumped = dict(comps)
        bumped["vertices"] = T.add(comps["vertices"], 1.0)
        assert abs(total_loss(bumped, w).item() - (base + w.lambda_v)) < 1e-12

    def test_missing_weighted_component_rejected(self):
        with pytest.raises(DomainError, match="rle"):
            total_loss({}, LossWeights(lambda_d=1.0, lambda_v=0.0, lambda_3d=0.0,
                                       lambda_2d=0.0, lambda_s=0.0))

    def test_non_finite_component_named(self):
        comps = {"vertices": float("nan")}
        w = LossWeights(lambda_d=0.0, lambda_v=1.0, lambda_3d=0.0,
                        lambda_2d=0.0, lambda_s=0.0)
        with pytest.raises(EvaluationError):
            total_loss(comps, w)

    def test_negative_weight_rejected(self):
        with pytest.raises(DomainError):
            LossWeights(lambda_d=-0.1)


class TestMpjpe:
    def test_identical(self):
        rng = np.random.default_rng(11)
        pts = rng.normal(size=(5, 3))
        assert mpjpe(pts, pts) == 0.0

    def test_global_translation_removed(self):
        rng = np.random.default_rng(12)
        gt = rng.normal(size=(5, 3))
        pred = gt + np.array([3.0, 0.0, 0.0])
        assert mpjpe(pred, gt) < 1e-12

    def test_displaced_joint_loop_oracle(self):
        rng = np.random.default_rng(13)
        gt = rng.normal(size=(5, 3))
        pred = gt.copy()
        pred[2] += np.array([0.0, 4.0, 3.0])  # distance 5
        got = mpjpe(pred, gt)
        pc = pred - pred[0]
        gc = gt - gt[0]
        want = np.mean([np.linalg.norm(pc[j] - gc[j]) for j in range(5)])
        assert abs(got - want) < 1e-12
        assert abs(got - 1.0) < 1e-12  # 5 / 5 joints

    def test_mpve_skips_centering(self):
        rng = np.random.default_rng(14)
        gt = rng.normal(size=(5, 3))
        pred = gt + np.array([3.0, 0.0, 0.0])
        assert abs(mpve(pred, gt) - 3.0) < 1e-12


class TestMpjpeZ:
    def test_xy_error_invisible(self):
        rng = np.random.default_rng(15)
        gt = rng.normal(size=(4, 3))
        pred = gt + np.array([7.0, 9.0, 0.0])
        assert mpjpe_z(pred, gt) == 0.0

    def test_single_joint_z_offset(self):
        rng = np.random.default_rng(16)
        gt = rng.normal(size=(4, 3))
        pred = gt.copy()
        pred[3, 2] += 2.0
        assert abs(mpjpe_z(pred, gt) - 0.5) < 1e-12  # 2 / 4 joints

    def test_identical(self):
        rng = np.random.default_rng(17)
        gt = rng.normal(size=(4, 3))
        assert mpjpe_z(gt, gt) == 0.0


class TestPaMpjpe:
    def test_exact_similarity_recovery(self):
        rng = np.random.default_rng(18)
        gt = rng.normal(size=(6, 3))
        for _ in range(20):
            r = rotation(rng)
            t = rng.normal(size=3)
            pred = 2.0 * gt @ r.T + t
            assert pa_mpjpe(pred, gt) < 1e-8

    def test_identity(self):
        rng = np.random.default_rng(19)
        gt = rng.normal(size=(6, 3))
        assert pa_mpjpe(gt, gt) < 1e-12

    def test_beats_random_search_oracle(self):
        rng = np.random.default_rng(20)
        pred = rng.normal(size=(6, 3))
        gt = rng.normal(size=(6, 3))
        closed = pa_mpjpe(pred, gt)
        best = np.inf
        search = np.random.default_rng(21)
        for _ in range(10_000):
            r = rotation(search)
            s = search.uniform(0.2, 3.0)
            t = search.normal(size=3)
            err = np.linalg.norm(s * pred @ r.T + t - gt, axis=1).mean()
            best = min(best, err)
        assert closed <= best + 1e-6

    def test_degenerate_gt_raises(self):
        with pytest.raises(AlignmentError):
            umeyama(np.random.default_rng(22).normal(size=(5, 3)), np.zeros((5, 3)))

    def test_too_few_points_raise(self):
        with pytest.raises(AlignmentError):
            umeyama(np.zeros((2, 3)), np.zeros((2, 3)))

    def test_constant_prediction_uses_centroid_limit(self):
        rng = np.random.default_rng(23)
        gt = rng.normal(size=(5, 3))
        pred = np.tile(rng.normal(size=3), (5, 1))
        got = pa_mpjpe(pred, gt)
        centroid_err = np.linalg.norm(gt - gt.mean(axis=0), axis=1).mean()
        assert got == min(centroid_err, mpjpe(pred, gt))
        assert got <= mpjpe(pred, gt) + 1e-9

    @given(st.integers(min_value=0, max_value=10_000))
    @settings(max_examples=200, deadline=None)
    def test_alignment_never_worse_than_identity(self, seed):
        rng = np.random.default_rng(seed)
        pred = rng.normal(size=(6, 3))
        gt = rng.normal(size=(6, 3))
        assert pa_mpjpe(pred, gt) <= mpjpe(pred, gt) + 1e-9

    def test_invariant_to_similarity_transform_of_pred(self):
        rng = np.random.default_rng(24)
        pred = rng.normal(size=(6, 3))
        gt = rng.normal(size=(6, 3))
        base = pa_mpjpe(pred, gt)
        for _ in range(10):
            r = rotation(rng)
            s = rng.uniform(0.3, 2.5)
            t = rng.normal(size=3)
            assert abs(pa_mpjpe(s * pred @ r.T + t, gt) - base) < 1e-8


class TestMetricsReport:
    def test_table_and_keyvalues(self):
        rep = MetricsReport(mpjpe=10.0, pa_mpjpe=5.0, mpve=12.0, mpjpe_z=3.0)
        assert "mpjpe" in rep.as_table()
        assert "pa_mpjpe=5.0" in rep.to_keyvalues()

    def test_alignment_dominance_enforced(self):
        with pytest.raises(EvaluationError):
            MetricsReport(mpjpe=5.0, pa_mpjpe=6.0, mpve=1.0, mpjpe_z=1.0)

    def test_negative_metric_rejected(self):
        with pytest.raises(EvaluationError):
            MetricsReport(mpjpe=-1.0, pa_mpjpe=-1.0, mpve=0.0, mpjpe_z=0.0)
