import numpy as np
import pytest

from laneforge.errors import EmptyVoxelSet, ShapeMismatch
from laneforge.kernels import (AttentionParams, BCE_CLAMP, BvatParams, FfnParams,
                               SfwaParams, bce_loss, bce_loss_grad, bvat_fuse,
                               bvat_fuse_grads, confidence_labels, cross_attention,
                               cross_attention_grads, ffn, knn_gather, layer_norm,
                               sfwa_aggregate, sfwa_aggregate_grads, smooth_l1,
                               smooth_l1_grad, softmax)


def finite_diff(f, x, step=1e-5):
    """Central-difference gradient of a scalar function of an array."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        xp, xm = x.copy(), x.copy()
        xp[idx] += step
        xm[idx] -= step
        g[idx] = (f(xp) - f(xm)) / (2 * step)
    return g


def assert_grad_close(analytic, numeric, rtol=1e-4, atol=1e-7):
    np.testing.assert_allclose(analytic, numeric, rtol=rtol, atol=atol)


class TestSoftmax:
    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(0)
        p = softmax(rng.normal(0, 3, (6, 5)))
        assert np.allclose(p.sum(axis=-1), 1.0)
        assert np.all(p > 0)

    def test_shift_invariance(self):
        x = np.array([[1.0, -2.0, 0.5]])
        assert np.allclose(softmax(x), softmax(x + 100.0))

    def test_matches_naive_formula(self):
        x = np.array([0.3, -1.2, 2.0])
        naive = np.exp(x) / np.exp(x).sum()
        assert np.allclose(softmax(x), naive, atol=1e-15)

    def test_large_inputs_stable(self):
        assert np.isfinite(softmax(np.array([1e4, 0.0, -1e4]))).all()


class TestLayerNorm:
    def test_matches_two_pass_oracle(self):
        rng = np.random.default_rng(1)
        x = rng.normal(0, 2, (5, 7))
        gain, bias = rng.normal(1, 0.2, 7), rng.normal(0, 0.2, 7)
        eps = 1e-5
        out = layer_norm(x, gain, bias, epsilon=eps)
        for i in range(5):
            mu = sum(x[i]) / 7
            var = sum((v - mu) ** 2 for v in x[i]) / 7
            for j in range(7):
                expect = (x[i, j] - mu) / np.sqrt(var + eps) * gain[j] + bias[j]
                assert out[i, j] == pytest.approx(expect, abs=1e-12)

    def test_normalized_moments(self):
        rng = np.random.default_rng(2)
        out = layer_norm(rng.normal(3, 5, (4, 64)), np.ones(64), np.zeros(64))
        assert np.allclose(out.mean(axis=1), 0, atol=1e-12)
        assert np.allclose(out.std(axis=1), 1, atol=1e-3)

    def test_shape_error(self):
        with pytest.raises(ShapeMismatch):
            layer_norm(np.zeros((3, 1)), np.ones(1), np.zeros(1))


class TestCrossAttention:
    def setup_method(self):
        self.rng = np.random.default_rng(3)
        self.p = AttentionParams.random(self.rng, c_q=4, c_kv=6, d_h=5)
        self.Q = self.rng.normal(0, 1, (3, 4))
        self.K = self.rng.normal(0, 1, (7, 6))
        self.V = self.rng.normal(0, 1, (7, 6))

    def test_matches_loop_oracle(self):
        out = cross_attention(self.Q, self.K, self.V, self.p)
        qb, kb, vb = self.Q @ self.p.w_q, self.K @ self.p.w_k, self.V @ self.p.w_v
        for i in range(3):
            scores = np.array([qb[i] @ kb[j] for j in range(7)]) / np.sqrt(5)
            e = np.exp(scores - scores.max())
            attn = e / e.sum()
            expect = sum(attn[j] * vb[j] for j in range(7))
            assert np.allclose(out[i], expect, atol=1e-12)

    def test_output_in_value_convex_hull(self):
        out = cross_attention(self.Q, self.K, self.V, self.p)
        vb = self.V @ self.p.w_v
        assert np.all(out >= vb.min(axis=0) - 1e-12)
        assert np.all(out <= vb.max(axis=0) + 1e-12)

    def test_shape_errors(self):
        with pytest.raises(ShapeMismatch):
            cross_attention(self.Q, self.K[:3], self.V, self.p)
        with pytest.raises(ShapeMismatch):
            cross_attention(np.zeros((3, 5)), self.K, self.V, self.p)

    def test_gradients_vs_finite_differences(self):
        g = self.rng.normal(0, 1, (3, 5))

        def loss(Q, K, V, p):
            return float((g * cross_attention(Q, K, V, p)).sum())

        dQ, dK, dV, dp = cross_attention_grads(self.Q, self.K, self.V, self.p,
                                               grad_out=g)
        assert_grad_close(dQ, finite_diff(lambda m: loss(m, self.K, self.V, self.p),
                                          self.Q))
        assert_grad_close(dK, finite_diff(lambda m: loss(self.Q, m, self.V, self.p),
                                          self.K))
        assert_grad_close(dV, finite_diff(lambda m: loss(self.Q, self.K, m, self.p),
                                          self.V))
        for name in ("w_q", "w_k", "w_v"):
            def f(m, name=name):
                q = AttentionParams(**{**vars(self.p), name: m})
                return loss(self.Q, self.K, self.V, q)
            assert_grad_close(dp[name], finite_diff(f, getattr(self.p, name)))


class TestBvatFuse:
    def setup_method(self):
        self.rng = np.random.default_rng(4)
        self.p = BvatParams.random(self.rng, c_bev=5, c_sp=6, d_h=4, d_out=3)
        self.f_bev = self.rng.normal(0, 1, (4, 5))
        self.f_sp = self.rng.normal(0, 1, (4, 6))

    def test_matches_composition_oracle(self):
        p = self.p
        b = layer_norm(self.f_bev, p.ln_bev.gain, p.ln_bev.bias, p.epsilon)
        s = layer_norm(self.f_sp, p.ln_sp.gain, p.ln_sp.bias, p.epsilon)
        expect = (ffn(cross_attention(b, s, s, p.attn_bev_q), p.ffn_bev_q)
                  + ffn(cross_attention(s, b, b, p.attn_sp_q), p.ffn_sp_q))
        out = bvat_fuse(self.f_bev, self.f_sp, p)
        assert np.allclose(out, expect, atol=1e-12)

    def test_pathway_swap_symmetry(self):
        out = bvat_fuse(self.f_bev, self.f_sp, self.p)
        swapped = bvat_fuse(self.f_sp, self.f_bev, self.p.swapped())
        assert np.array_equal(out, swapped)

    def test_token_count_mismatch(self):
        with pytest.raises(ShapeMismatch):
            bvat_fuse(self.f_bev, self.f_sp[:2], self.p)

    def test_input_gradients_vs_finite_differences(self):
        g = self.rng.normal(0, 1, (4, 3))
        grads = bvat_fuse_grads(self.f_bev, self.f_sp, self.p, grad_out=g)
        loss_b = lambda m: float((g * bvat_fuse(m, self.f_sp, self.p)).sum())
        loss_s = lambda m: float((g * bvat_fuse(self.f_bev, m, self.p)).sum())
        assert_grad_close(grads["f_bev"], finite_diff(loss_b, self.f_bev))
        assert_grad_close(grads["f_sp"], finite_diff(loss_s, self.f_sp))

    def test_parameter_gradients_vs_finite_differences(self):
        g = self.rng.normal(0, 1, (4, 3))
        grads = bvat_fuse_grads(self.f_bev, self.f_sp, self.p, grad_out=g)

        def check(path, analytic):
            import copy

            def f(m):
                q = copy.deepcopy(self.p)
                np.copyto(path(q), m)
                return float((g * bvat_fuse(self.f_bev, self.f_sp, q)).sum())
            assert_grad_close(analytic, finite_diff(f, path(self.p)))

        check(lambda q: q.ln_bev.gain, grads["ln_bev"]["gain"])
        check(lambda q: q.ln_sp.bias, grads["ln_sp"]["bias"])
        check(lambda q: q.attn_bev_q.w_q, grads["attn_bev_q"]["w_q"])
        check(lambda q: q.attn_sp_q.w_v, grads["attn_sp_q"]["w_v"])
        check(lambda q: q.ffn_bev_q.w1, grads["ffn_bev_q"]["w1"])
        check(lambda q: q.ffn_sp_q.b2, grads["ffn_sp_q"]["b2"])


class TestSfwaAggregate:
    def setup_method(self):
        self.rng = np.random.default_rng(5)
        self.k, self.c_v = 6, 4
        self.p = SfwaParams.random(self.rng, self.k, self.c_v, c_sp=5)
        self.blocks = [self.rng.normal(0, 1, (self.k, self.c_v)) for _ in range(3)]

    def test_matches_composition_oracle(self):
        pooled = np.concatenate([b.max(axis=0) for b in self.blocks])[None, :]
        weights = softmax(ffn(pooled, self.p.weight_mlp))[0]
        scaled = np.vstack([w * b for w, b in zip(weights, self.blocks)])
        expect = ffn(scaled, self.p.out_mlp).max(axis=0, keepdims=True)
        out, w = sfwa_aggregate(self.blocks, self.p)
        assert np.allclose(out, expect, atol=1e-12)
        assert np.allclose(w, weights, atol=1e-12)

    def test_neighbor_permutation_invariance(self):
        base, _ = sfwa_aggregate(self.blocks, self.p)
        rng = np.random.default_rng(50)
        for _ in range(10):
            shuffled = [b[rng.permutation(self.k)] for b in self.blocks]
            out, _ = sfwa_aggregate(shuffled, self.p)
            assert np.array_equal(out, base)

    def test_weights_are_convex(self):
        _, w = sfwa_aggregate(self.blocks, self.p)
        assert w.shape == (3,)
        assert w.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(w > 0)

    def test_shape_errors(self):
        with pytest.raises(ShapeMismatch):
            sfwa_aggregate(self.blocks[:2], self.p)
        bad = [self.blocks[0], self.blocks[1], self.blocks[2][:3]]
        with pytest.raises(ShapeMismatch):
            sfwa_aggregate(bad, self.p)

    def test_block_gradients_vs_finite_differences(self):
        g = self.rng.normal(0, 1, (1, 5))
        grads = sfwa_aggregate_grads(self.blocks, self.p, grad_out=g)
        for n in range(3):
            def loss(m, n=n):
                bl = list(self.blocks)
                bl[n] = m
                return float((g * sfwa_aggregate(bl, self.p)[0]).sum())
            assert_grad_close(grads["blocks"][n], finite_diff(loss, self.blocks[n]))

    def test_mlp_gradients_vs_finite_differences(self):
        import copy
        g = self.rng.normal(0, 1, (1, 5))
        grads = sfwa_aggregate_grads(self.blocks, self.p, grad_out=g)
        for mlp, field in (("weight_mlp", "w1"), ("weight_mlp", "b2"),
                           ("out_mlp", "w2"), ("out_mlp", "b1")):
            def loss(m, mlp=mlp, field=field):
                q = copy.deepcopy(self.p)
                np.copyto(getattr(getattr(q, mlp), field), m)
                return float((g * sfwa_aggregate(self.blocks, q)[0]).sum())
            base = getattr(getattr(self.p, mlp), field)
            assert_grad_close(grads[mlp][field], finite_diff(loss, base))


class TestKnnGather:
    def test_matches_full_sort_oracle(self):
        rng = np.random.default_rng(6)
        centers = rng.uniform(-5, 5, (30, 3))
        feats = rng.normal(0, 1, (30, 4))
        query = np.array([0.3, -0.2, 0.1])
        block, idx = knn_gather(query, centers, feats, k=7)
        d = np.linalg.norm(centers - query, axis=1)
        oracle = np.argsort(d, kind="stable")[:7]
        assert np.array_equal(idx, oracle)
        assert np.array_equal(block, feats[oracle])
        assert np.all(np.diff(d[idx]) >= 0)

    def test_padding_repeats_nearest(self):
        centers = np.array([[0, 0, 0.0], [5, 0, 0.0]])
        feats = np.array([[1.0], [2.0]])
        block, idx = knn_gather([0.1, 0, 0], centers, feats, k=5)
        assert np.array_equal(idx, [0, 1, 0, 0, 0])
        assert np.array_equal(block[:, 0], [1, 2, 1, 1, 1])

    def test_empty_voxel_set(self):
        with pytest.raises(EmptyVoxelSet):
            knn_gather([0, 0, 0], np.zeros((0, 3)), np.zeros((0, 2)), k=3)

    def test_feature_row_mismatch(self):
        with pytest.raises(ShapeMismatch):
            knn_gather([0, 0, 0], np.zeros((2, 3)), np.zeros((3, 2)), k=1)


class TestLosses:
    def test_bce_matches_formula(self):
        p = np.array([0.2, 0.7, 0.99])
        y = np.array([0.0, 1.0, 1.0])
        expect = -(y * np.log(p) + (1 - y) * np.log(1 - p))
        assert np.allclose(bce_loss(p, y), expect, atol=1e-12)

    def test_bce_clamp_keeps_loss_finite(self):
        out = bce_loss(np.array([0.0, 1.0]), np.array([1.0, 0.0]))
        assert np.all(np.isfinite(out))
        assert np.allclose(out, -np.log(BCE_CLAMP))

    def test_bce_grad_vs_finite_differences(self):
        p = np.array([0.2, 0.5, 0.9])
        y = np.array([1.0, 0.0, 1.0])
        num = finite_diff(lambda m: float(bce_loss(m, y).sum()), p)
        assert_grad_close(bce_loss_grad(p, y), num)

    def test_bce_grad_zero_in_clamp(self):
        g = bce_loss_grad(np.array([0.0, 1.0]), np.array([1.0, 1.0]))
        assert np.array_equal(g, [0.0, 0.0])

    def test_smooth_l1_piecewise(self):
        x = np.array([-3.0, -0.4, 0.0, 0.4, 3.0])
        expect = np.array([2.5, 0.08, 0.0, 0.08, 2.5])
        assert np.allclose(smooth_l1(x), expect, atol=1e-12)

    def test_smooth_l1_continuous_at_beta(self):
        beta = 0.7
        eps = 1e-9
        below = smooth_l1(np.array([beta - eps]), beta)
        above = smooth_l1(np.array([beta + eps]), beta)
        assert abs(below[0] - above[0]) < 1e-8

    def test_smooth_l1_grad_vs_finite_differences(self):
        x = np.array([-2.0, -0.3, 0.1, 0.8, 4.0])
        num = finite_diff(lambda m: float(smooth_l1(m, 0.9).sum()), x)
        assert_grad_close(smooth_l1_grad(x, 0.9), num)

    def test_smooth_l1_bad_beta(self):
        with pytest.raises(ValueError):
            smooth_l1(np.zeros(1), beta=0.0)


class TestConfidenceLabels:
    def test_matches_brute_force(self):
        rng = np.random.default_rng(7)
        props = rng.uniform(-3, 3, (40, 3))
        gt = rng.uniform(-3, 3, (25, 3))
        got = confidence_labels(props, gt, tau=0.5)
        oracle = np.array([min(np.linalg.norm(gt - p, axis=1)) <= 0.5
                           for p in props])
        assert np.array_equal(got, oracle)

    def test_empty_cases(self):
        assert confidence_labels(np.zeros((0, 3)), np.zeros((3, 3))).size == 0
        out = confidence_labels(np.zeros((2, 3)), np.zeros((0, 3)))
        assert np.array_equal(out, [False, False])

    def test_bad_tau(self):
        with pytest.raises(ValueError):
            confidence_labels(np.zeros((1, 3)), np.zeros((1, 3)), tau=0.0)
