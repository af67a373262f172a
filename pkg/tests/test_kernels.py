import math

import numpy as np
import pytest

import oracles
from fisheyegaze.kernels import (
    CheckResult,
    EmptyKeysError,
    FusionWeights,
    MissingScaleError,
    MultiTaskOutput,
    MultiTaskTargets,
    RotConvKernel,
    ShapeMismatchError,
    balanced_bce,
    bbox_masks,
    conv2d,
    cross_attention,
    flatten_with_pe,
    fuse_scale,
    global_avg_pool,
    load_tensor,
    multi_scale_fuse,
    rot_conv_forward,
    save_tensor,
    sinusoidal_position_encoding,
    smooth_l1,
    total_loss,
    verify_bundle,
    write_bundle,
)

rng = np.random.default_rng(202)


def random_fusion_instance(seed, h=5, w=4, c_l=6, c_h=3, d_k=8, n_faces=2):
    r = np.random.default_rng(seed)
    f_low = r.normal(size=(h, w, c_l))
    pooled = r.normal(size=(n_faces, c_h))
    w_q = r.normal(size=(c_l, d_k))
    w_k = r.normal(size=(c_h, d_k))
    w_v = r.normal(size=(c_h, c_l))
    pe = r.normal(size=(h, w, c_l))
    masks = (r.uniform(size=(n_faces, h, w)) > 0.5).astype(float)
    return f_low, pooled, w_q, w_k, w_v, pe, masks


class TestRotConv:
    def test_weights_must_sum_to_one(self):
        with pytest.raises(ValueError, match="sum"):
            RotConvKernel(np.zeros((1, 1, 3, 3)), (0.5, 0.5, 0.5, 0.5))

    def test_kernel_must_be_odd(self):
        with pytest.raises(ValueError, match="odd"):
            RotConvKernel(np.zeros((1, 1, 4, 4)))

    def test_conv2d_matches_naive(self):
        for _ in range(5):
            img = rng.normal(size=(7, 6, 2))
            w = rng.normal(size=(3, 2, 3, 3))
            got = conv2d(img, w, stride=1, padding=1)
            want = oracles.naive_conv2d(img, w, stride=1, padding=1)
            np.testing.assert_allclose(got, want, atol=1e-12)
        got = conv2d(img, w, stride=2, padding=0)
        want = oracles.naive_conv2d(img, w, stride=2, padding=0)
        np.testing.assert_allclose(got, want, atol=1e-12)

    def test_symmetric_kernel_equals_plain_conv(self):
        # Isotropic Gaussian taps are invariant under 90-degree rotation.
        g = np.array([[1.0, 2.0, 1.0], [2.0, 4.0, 2.0], [1.0, 2.0, 1.0]]) / 16.0
        w = np.stack([np.stack([g, 2 * g])])  # (1, 2, 3, 3)
        img = rng.normal(size=(6, 6, 2))
        kernel = RotConvKernel(w)
        np.testing.assert_array_equal(rot_conv_forward(img, kernel), conv2d(img, w, padding=1))

    def test_degenerate_weights_equal_plain_conv(self):
        w = rng.normal(size=(2, 3, 3, 3))
        img = rng.normal(size=(5, 7, 3))
        kernel = RotConvKernel(w, (1.0, 0.0, 0.0, 0.0))
        np.testing.assert_array_equal(rot_conv_forward(img, kernel), conv2d(img, w, padding=1))

    def test_equivariance_with_uniform_weights(self):
        for trial in range(10):
            r = np.random.default_rng(trial)
            img = r.normal(size=(8, 8, 2))
            kernel = RotConvKernel(r.normal(size=(3, 2, 3, 3)))
            rotated_input = np.ascontiguousarray(np.rot90(img, 1, axes=(0, 1)))
            lhs = rot_conv_forward(rotated_input, kernel)
            rhs = np.rot90(rot_conv_forward(img, kernel), 1, axes=(0, 1))
            np.testing.assert_allclose(lhs, rhs, atol=1e-10)

    def test_channel_mismatch_raises(self):
        with pytest.raises(ShapeMismatchError):
            conv2d(np.zeros((4, 4, 2)), np.zeros((1, 3, 3, 3)))


class TestGlobalAvgPool:
    def test_constant(self):
        f = np.full((2, 3, 4, 5), 7.25)
        np.testing.assert_array_equal(global_avg_pool(f), np.full((2, 5), 7.25))

    def test_2x2_mean(self):
        f = np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 2, 2, 1)
        assert global_avg_pool(f)[0, 0] == 2.5

    def test_matches_naive(self):
        f = rng.normal(size=(3, 4, 5, 6))
        np.testing.assert_allclose(global_avg_pool(f), oracles.naive_avg_pool(f), atol=1e-12)


class TestFlatten:
    def test_zero_pe_is_pure_flatten(self):
        f = rng.normal(size=(3, 4, 5))
        np.testing.assert_array_equal(flatten_with_pe(f, np.zeros_like(f)), f.reshape(12, 5))

    def test_single_position(self):
        f = rng.normal(size=(1, 1, 4))
        p = rng.normal(size=(1, 1, 4))
        np.testing.assert_array_equal(flatten_with_pe(f, p), (f + p).reshape(1, 4))

    def test_row_major_indexing(self):
        h, w, c = 4, 5, 2
        f = np.zeros((h, w, c))
        f[2, 3, 1] = 42.0
        out = flatten_with_pe(f, np.zeros_like(f))
        assert out[2 * w + 3, 1] == 42.0

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            flatten_with_pe(np.zeros((2, 2, 3)), np.zeros((2, 2, 4)))

    def test_sinusoidal_pe_shape_and_range(self):
        pe = sinusoidal_position_encoding(5, 7, 8)
        assert pe.shape == (5, 7, 8)
        assert np.abs(pe).max() <= 1.0
        np.testing.assert_array_equal(pe, sinusoidal_position_encoding(5, 7, 8))


class TestCrossAttention:
    def test_single_key_returns_value(self):
        q = rng.normal(size=(5, 3))
        k = rng.normal(size=(1, 3))
        v = rng.normal(size=(1, 4))
        out = cross_attention(q, k, v)
        np.testing.assert_allclose(out, np.repeat(v, 5, axis=0), atol=1e-12)

    def test_zero_queries_give_uniform_attention(self):
        k = rng.normal(size=(4, 3))
        v = rng.normal(size=(4, 6))
        out = cross_attention(np.zeros((2, 3)), k, v)
        np.testing.assert_allclose(out, np.repeat(v.mean(axis=0, keepdims=True), 2, axis=0), atol=1e-12)

    def test_matches_naive(self):
        q = rng.normal(size=(4, 8))
        k = rng.normal(size=(3, 8))
        v = rng.normal(size=(3, 5))
        np.testing.assert_allclose(
            cross_attention(q, k, v), oracles.naive_attention(q, k, v), atol=1e-10
        )

    def test_rows_sum_to_one(self):
        # With V = identity the output rows ARE the attention weights.
        for seed in range(20):
            r = np.random.default_rng(seed)
            n = int(r.integers(1, 7))
            q = r.normal(size=(5, 4)) * r.uniform(0.1, 50)
            k = r.normal(size=(n, 4))
            weights = cross_attention(q, k, np.eye(n))
            np.testing.assert_allclose(weights.sum(axis=1), np.ones(5), atol=1e-10)
            assert (weights >= 0).all()

    def test_empty_keys(self):
        with pytest.raises(EmptyKeysError):
            cross_attention(np.zeros((2, 3)), np.zeros((0, 3)), np.zeros((0, 4)))

    def test_extreme_logits_stable(self):
        q = np.full((2, 4), 500.0)
        k = np.vstack([np.full(4, 500.0), -np.full(4, 500.0)])
        v = np.array([[1.0], [2.0]])
        out = cross_attention(q, k, v)
        assert np.isfinite(out).all()
        np.testing.assert_allclose(out, [[1.0], [1.0]], atol=1e-12)


class TestFuseScale:
    def test_zero_mask_is_identity(self):
        f_low, pooled, w_q, w_k, w_v, pe, masks = random_fusion_instance(0)
        weights = FusionWeights(w_q, w_k, w_v, pe)
        out = fuse_scale(f_low, pooled, weights, np.zeros_like(masks))
        assert np.array_equal(out, f_low)

    def test_all_one_mask_single_face_collapse(self):
        f_low, pooled, w_q, w_k, w_v, pe, _ = random_fusion_instance(1, n_faces=1)
        weights = FusionWeights(w_q, w_k, w_v, pe)
        out = fuse_scale(f_low, pooled, weights, np.ones((1, 5, 4)))
        broadcast = (pooled @ w_v)[0]
        np.testing.assert_allclose(out, f_low + broadcast[None, None, :], atol=1e-12)

    def test_composition_is_bit_identical(self):
        f_low, pooled, w_q, w_k, w_v, pe, masks = random_fusion_instance(2)
        weights = FusionWeights(w_q, w_k, w_v, pe)
        out = fuse_scale(f_low, pooled, weights, masks)
        seq = flatten_with_pe(f_low, pe)
        att = cross_attention(seq @ w_q, pooled @ w_k, pooled @ w_v)
        manual = f_low + np.max(masks, axis=0)[:, :, None] * att.reshape(f_low.shape)
        assert np.array_equal(out, manual)

    def test_matches_naive_oracle(self):
        for seed in range(10):
            f_low, pooled, w_q, w_k, w_v, pe, masks = random_fusion_instance(seed, h=4, w=3)
            weights = FusionWeights(w_q, w_k, w_v, pe)
            got = fuse_scale(f_low, pooled, weights, masks)
            want = oracles.naive_fuse(f_low, pooled, w_q, w_k, w_v, pe, masks)
            np.testing.assert_allclose(got, want, atol=1e-10)

    def test_value_dim_must_match_residual(self):
        with pytest.raises(ShapeMismatchError):
            FusionWeights(
                w_query=np.zeros((6, 8)), w_key=np.zeros((3, 8)),
                w_value=np.zeros((3, 5)), positional_encoding=np.zeros((4, 4, 6)),
            )

    def test_nonbinary_mask_rejected(self):
        f_low, pooled, w_q, w_k, w_v, pe, masks = random_fusion_instance(3)
        weights = FusionWeights(w_q, w_k, w_v, pe)
        with pytest.raises(ValueError, match="binary"):
            fuse_scale(f_low, pooled, weights, masks * 0.5)


class TestMultiScale:
    def _instances(self):
        scales = [random_fusion_instance(s, h=3 + s, w=3, c_l=4, c_h=3) for s in range(3)]
        pooled = scales[0][1]
        f_lows = [s[0] for s in scales]
        weights = [FusionWeights(s[2], s[3], s[4], s[5]) for s in scales]
        masks = [s[6] for s in scales]
        return f_lows, pooled, weights, masks

    def test_zero_masks_identity(self):
        f_lows, pooled, weights, masks = self._instances()
        outs = multi_scale_fuse(f_lows, pooled, weights, [np.zeros_like(m) for m in masks])
        for out, f in zip(outs, f_lows):
            assert np.array_equal(out, f)

    def test_scale_independence(self):
        f_lows, pooled, weights, masks = self._instances()
        base = multi_scale_fuse(f_lows, pooled, weights, masks)
        altered = [f.copy() for f in f_lows]
        altered[1] = altered[1] + 100.0
        out = multi_scale_fuse(altered, pooled, weights, masks)
        assert np.array_equal(out[0], base[0])
        assert np.array_equal(out[2], base[2])
        assert not np.array_equal(out[1], base[1])

    def test_equals_individual_fuse(self):
        f_lows, pooled, weights, masks = self._instances()
        outs = multi_scale_fuse(f_lows, pooled, weights, masks)
        for s in range(3):
            assert np.array_equal(outs[s], fuse_scale(f_lows[s], pooled, weights[s], masks[s]))

    def test_missing_scale(self):
        f_lows, pooled, weights, masks = self._instances()
        with pytest.raises(MissingScaleError):
            multi_scale_fuse(f_lows[:2], pooled, weights, masks)


class TestBboxMasks:
    def test_half_coverage_rule(self):
        # Box covering the left half of a 2x2 grid over a 10x10 image.
        masks = bbox_masks([(0.0, 0.0, 5.0, 10.0)], (10, 10), (2, 2))
        np.testing.assert_array_equal(masks[0], [[1.0, 0.0], [1.0, 0.0]])

    def test_tiny_box_keeps_center_cell(self):
        masks = bbox_masks([(7.0, 3.0, 0.5, 0.5)], (10, 10), (5, 5))
        assert masks[0].sum() == 1.0
        assert masks[0][1, 3] == 1.0  # center (7.25, 3.25) -> cell col 3, row 1

    def test_binary_and_nonempty(self):
        r = np.random.default_rng(4)
        boxes = np.column_stack(
            [r.uniform(0, 90, 20), r.uniform(0, 90, 20), r.uniform(1, 40, 20), r.uniform(1, 40, 20)]
        )
        masks = bbox_masks(boxes, (128, 128), (8, 8))
        assert set(np.unique(masks)) <= {0.0, 1.0}
        assert (masks.reshape(20, -1).sum(axis=1) >= 1).all()


class TestSmoothL1:
    def test_zero_at_equality(self):
        x = rng.normal(size=10)
        assert smooth_l1(x, x) == 0.0

    def test_knee_value(self):
        beta = 0.7
        assert smooth_l1([beta], [0.0], beta) == pytest.approx(0.5 * beta, abs=1e-15)

    def test_matches_naive(self):
        p = rng.normal(size=37)
        t = rng.normal(size=37)
        for beta in (0.3, 1.0, 2.5):
            assert smooth_l1(p, t, beta) == pytest.approx(
                oracles.naive_smooth_l1(p, t, beta), abs=1e-12
            )

    def test_two_sided_slope_at_knee(self):
        beta, h = 1.0, 1e-6
        left = (smooth_l1([beta], [0.0], beta) - smooth_l1([beta - h], [0.0], beta)) / h
        right = (smooth_l1([beta + h], [0.0], beta) - smooth_l1([beta], [0.0], beta)) / h
        assert abs(left - right) < 1e-6

    def test_beta_must_be_positive(self):
        with pytest.raises(ValueError):
            smooth_l1([1.0], [0.0], 0.0)


class TestBalancedBce:
    def test_confident_correct_is_tiny(self):
        loss = balanced_bce([20.0, -20.0], [1.0, 0.0])
        assert loss < 1e-8

    def test_zero_logits_is_ln2(self):
        assert balanced_bce([0.0, 0.0, 0.0], [1.0, 0.0, 1.0]) == pytest.approx(math.log(2), abs=1e-15)

    def test_imbalanced_matches_naive(self):
        r = np.random.default_rng(5)
        logits = r.normal(size=100)
        labels = np.zeros(100)
        labels[0] = 1.0
        assert balanced_bce(logits, labels) == pytest.approx(
            oracles.naive_balanced_bce(logits, labels), abs=1e-12
        )

    def test_single_class_present(self):
        r = np.random.default_rng(6)
        logits = r.normal(size=10)
        assert balanced_bce(logits, np.ones(10)) == pytest.approx(
            oracles.naive_balanced_bce(logits, np.ones(10)), abs=1e-12
        )

    def test_non_binary_labels_rejected(self):
        with pytest.raises(ValueError):
            balanced_bce([0.0], [0.5])


def random_loss_instance(seed, anchors=16, n_pos=5):
    r = np.random.default_rng(seed)
    labels = np.zeros(anchors)
    labels[r.choice(anchors, size=n_pos, replace=False)] = 1.0
    make = lambda cols: (r.normal(size=(anchors, cols)), r.normal(size=(anchors, cols)))
    out_b, tgt_b = make(4)
    out_d, tgt_d = r.normal(size=anchors), r.normal(size=anchors)
    out_h, tgt_h = make(3)
    out_g, tgt_g = make(3)
    out_fl, tgt_fl = make(26)
    out_el, tgt_el = make(8)
    outputs = MultiTaskOutput(r.normal(size=anchors), out_b, out_d, out_h, out_g, out_fl, out_el)
    targets = MultiTaskTargets(labels, tgt_b, tgt_d, tgt_h, tgt_g, tgt_fl, tgt_el)
    return outputs, targets


class TestTotalLoss:
    def test_all_ones_is_plain_sum(self):
        outputs, targets = random_loss_instance(0)
        result = total_loss(outputs, targets, [1.0] * 7)
        assert result.total == pytest.approx(sum(result.terms.values()), abs=1e-12)
        assert not result.no_positives

    def test_confidence_only_masking(self):
        outputs, targets = random_loss_instance(1)
        result = total_loss(outputs, targets, [1, 0, 0, 0, 0, 0, 0])
        assert result.total == pytest.approx(
            balanced_bce(outputs.confidence, targets.labels), abs=1e-15
        )

    def test_linearity_in_gaze_weight(self):
        outputs, targets = random_loss_instance(2)
        base = total_loss(outputs, targets, [1.0] * 7)
        boosted = total_loss(outputs, targets, [1, 1, 1, 1, 10, 1, 1])
        gaze_term = base.terms["gaze"]
        assert boosted.total - base.total == pytest.approx(9.0 * gaze_term, abs=1e-10)

    def test_terms_match_direct_computation(self):
        outputs, targets = random_loss_instance(3)
        result = total_loss(outputs, targets, [0.5, 1.5, 2.0, 0.1, 3.0, 0.7, 0.9])
        pos = targets.labels == 1.0
        assert result.terms["bbox"] == pytest.approx(
            oracles.naive_smooth_l1(outputs.bbox[pos], targets.bbox[pos], 1.0), abs=1e-12
        )
        expected = (
            0.5 * result.terms["confidence"] + 1.5 * result.terms["bbox"]
            + 2.0 * result.terms["distance"] + 0.1 * result.terms["head_pose"]
            + 3.0 * result.terms["gaze"] + 0.7 * result.terms["face_landmarks"]
            + 0.9 * result.terms["eye_landmarks"]
        )
        assert result.total == pytest.approx(expected, abs=1e-12)

    def test_no_positives_flag(self):
        outputs, targets = random_loss_instance(4, n_pos=0)
        result = total_loss(outputs, targets, [1.0] * 7)
        assert result.no_positives
        assert result.total == pytest.approx(result.terms["confidence"], abs=1e-15)
        assert all(result.terms[k] == 0.0 for k in list(result.terms)[1:])

    def test_bad_lambdas(self):
        outputs, targets = random_loss_instance(5)
        with pytest.raises(ValueError):
            total_loss(outputs, targets, [1.0] * 6)
        with pytest.raises(ValueError):
            total_loss(outputs, targets, [-1.0] + [1.0] * 6)


class TestTensorIO:
    def test_round_trip(self, tmp_path):
        for shape in [(3,), (2, 4), (2, 3, 4, 5)]:
            arr = rng.normal(size=shape)
            save_tensor(tmp_path / "t.t64", arr)
            np.testing.assert_array_equal(load_tensor(tmp_path / "t.t64"), arr)

    def test_scalar_round_trip(self, tmp_path):
        save_tensor(tmp_path / "s.t64", np.float64(3.5))
        out = load_tensor(tmp_path / "s.t64")
        assert out == 3.5 and np.ndim(out) == 0

    def test_little_endian_layout(self, tmp_path):
        save_tensor(tmp_path / "t.t64", np.array([[1.0, 2.0]]))
        raw = (tmp_path / "t.t64").read_bytes()
        assert len(raw) == 8 + 16 + 16
        assert int.from_bytes(raw[:8], "little") == 2
        assert int.from_bytes(raw[8:16], "little") == 1
        assert int.from_bytes(raw[16:24], "little") == 2

    def test_bundle_verify_and_perturb(self, tmp_path):
        f = rng.normal(size=(2, 3, 4, 5))
        tensors = {"gap_in": f, "gap_out": global_avg_pool(f)}
        checks = [{"op": "global_avg_pool", "inputs": {"input": "gap_in"}, "expected": "gap_out"}]
        write_bundle(tmp_path / "b", tensors, checks)
        results = verify_bundle(tmp_path / "b")
        assert results == [CheckResult(op="global_avg_pool", max_abs_deviation=0.0)]
        tensors["gap_out"] = tensors["gap_out"] + 1e-6
        write_bundle(tmp_path / "b2", tensors, checks)
        results = verify_bundle(tmp_path / "b2")
        assert results[0].max_abs_deviation > 1e-9
