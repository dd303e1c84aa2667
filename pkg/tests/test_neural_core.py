import math

import numpy as np
import pytest

from edst import autodiff as ad
from edst.errors import ShapeError
from edst.neural_core import (
    WINDOW_SIZES,
    AdamState,
    CnnParams,
    HeadBatch,
    MlpParams,
    adam_step,
    assemble_vst_input,
    clip_global_norm,
    cnn_extract,
    cross_entropy,
    dropout,
    gradient_check,
    head_graph,
    init_cnn,
    init_head,
    init_mlp,
    mlp_apply,
    named_params,
)


def brute_force_cnn(params: CnnParams, matrix: np.ndarray) -> np.ndarray:
    """Position-by-position convolution oracle: slide each window,
    apply bias and ReLU, keep the max."""
    out = []
    for n in WINDOW_SIZES:
        w, b = params.filters[n], params.biases[n]
        best = np.full(params.num_filters, -np.inf)
        for p in range(matrix.shape[0] - n + 1):
            window = matrix[p : p + n].reshape(-1)
            best = np.maximum(best, np.maximum(window @ w + b, 0.0))
        out.append(best)
    return np.concatenate(out)


class TestCnnExtract:
    def test_output_length(self):
        rng = np.random.default_rng(0)
        p = init_cnn(rng, input_cols=12, num_filters=50)
        out = cnn_extract(p, rng.standard_normal((6, 12)))
        assert out.shape == (150,)

    def test_zero_matrix_zero_biases_gives_zeros(self):
        p = init_cnn(np.random.default_rng(1), 5, 4)
        assert not cnn_extract(p, np.zeros((4, 5))).any()

    @pytest.mark.parametrize("rows", [3, 5, 10])
    def test_matches_brute_force(self, rows):
        rng = np.random.default_rng(rows)
        p = init_cnn(rng, 7, 6)
        for n in WINDOW_SIZES:
            p.biases[n] = rng.standard_normal(6) * 0.1
        m = rng.standard_normal((rows, 7))
        assert np.allclose(cnn_extract(p, m), brute_force_cnn(p, m), atol=1e-12)

    def test_identical_best_window_same_pooled_value(self):
        # non-negative weights: windows touching the -100 filler rows go
        # far negative, so only the shared prefix competes
        rng = np.random.default_rng(3)
        p = init_cnn(rng, 4, 5)
        for n in WINDOW_SIZES:
            p.filters[n] = np.abs(p.filters[n]) + 0.01
        m3 = np.abs(rng.standard_normal((3, 4))) + 0.1
        m10 = np.full((10, 4), -100.0)
        m10[:3] = m3
        assert np.allclose(cnn_extract(p, m3), cnn_extract(p, m10), atol=1e-12)

    def test_appending_zero_rows_after_padding_is_invariant(self):
        # matrices that already end in >= 2 zero rows gain only all-zero
        # windows, whose response with zero biases never beats the pooled max
        rng = np.random.default_rng(4)
        p = init_cnn(rng, 5, 4)
        m = rng.standard_normal((6, 5))
        m[4:] = 0.0
        grown = np.vstack([m, np.zeros((3, 5))])
        assert np.array_equal(cnn_extract(p, m), cnn_extract(p, grown))

    def test_wrong_width_raises(self):
        p = init_cnn(np.random.default_rng(5), 5, 4)
        with pytest.raises(ShapeError):
            cnn_extract(p, np.zeros((4, 6)))

    def test_too_few_rows_raises(self):
        p = init_cnn(np.random.default_rng(6), 5, 4)
        with pytest.raises(ShapeError):
            cnn_extract(p, np.zeros((2, 5)))


class TestMlpApply:
    def test_softmax_normalized(self):
        p = init_mlp(np.random.default_rng(0), 8, 3, "softmax")
        out = mlp_apply(p, np.random.default_rng(1).standard_normal(8))
        assert out.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(out > 0)

    def test_zero_weights_uniform(self):
        p = MlpParams(np.zeros((4, 4)), np.zeros(4), np.zeros((4, 3)), np.zeros(3), "softmax")
        assert np.allclose(mlp_apply(p, np.ones(4)), 1 / 3)

    def test_sigmoid_head_in_unit_interval(self):
        p = init_mlp(np.random.default_rng(2), 6, 4, "sigmoid")
        out = mlp_apply(p, np.random.default_rng(3).standard_normal(6))
        assert np.all(out > 0) and np.all(out < 1)

    def test_shape_mismatch_raises(self):
        p = init_mlp(np.random.default_rng(4), 6, 2, "softmax")
        with pytest.raises(ShapeError):
            mlp_apply(p, np.zeros(5))


class TestAssembleVstInput:
    def test_none_act_bit_passes_summary_through_last_block(self):
        rng = np.random.default_rng(0)
        gate = init_mlp(rng, 6, 3, "sigmoid")
        c = rng.standard_normal(6)
        acts = np.array([0, 0, 0, 0, 0, 1.0])
        out = assemble_vst_input(np.array([0.1, 0.2, 0.7]), acts, c, gate)
        assert out.shape == (3 + 6 * 6,)
        assert not out[3:-6].any()
        assert np.array_equal(out[-6:], c)

    def test_identity_gate_recovers_belief(self):
        # huge positive weights saturate every sigmoid toward 1
        gate = MlpParams(
            np.full((4, 4), 50.0), np.zeros(4), np.full((4, 3), 50.0), np.zeros(3), "sigmoid"
        )
        belief = np.array([0.3, 0.3, 0.4])
        out = assemble_vst_input(belief, np.zeros(6), np.ones(4), gate)
        assert np.allclose(out[:3], belief, atol=1e-12)

    def test_dimensions_with_paper_sizes(self):
        rng = np.random.default_rng(1)
        gate = init_mlp(rng, 150, 3, "sigmoid")
        out = assemble_vst_input(
            np.array([0, 0, 1.0]), np.ones(6), rng.standard_normal(150), gate
        )
        assert out.shape == (903,)

    def test_no_belief_mode(self):
        c = np.arange(4.0)
        out = assemble_vst_input(None, np.ones(6), c, None)
        assert out.shape == (24,)


class TestCrossEntropy:
    def test_certain_correct_is_zero(self):
        assert cross_entropy(np.array([1.0, 0.0, 0.0]), 0) == 0.0

    def test_uniform(self):
        assert cross_entropy(np.array([1 / 3] * 3), 2) == pytest.approx(math.log(3), abs=1e-12)

    def test_zero_probability_clamped(self):
        loss = cross_entropy(np.array([1.0, 0.0]), 1)
        assert loss == pytest.approx(-math.log(1e-12))
        assert math.isfinite(loss)


class TestBackward:
    def test_gradient_check_small(self):
        rep = gradient_check(seed=12, d=4, num_filters=2)
        assert rep.ok, rep.group_errors

    def test_gated_off_blocks_get_zero_weight_gradient(self):
        rng = np.random.default_rng(0)
        head = init_head(rng, 4, 3, 3, belief_dim=3, use_acts=True)
        B, R = 2, 4
        batch = HeadBatch(
            emb=rng.standard_normal((B, R, 4)),
            dot_scores=rng.standard_normal((B, R)),
            str_match=np.zeros((B, R)),
            token_mask=np.ones((B, R)),
            rows=np.array([4, 4]),
            acts=np.tile(np.array([0, 0, 0, 0, 0, 1.0]), (B, 1)),
            belief=np.tile(np.array([0, 0, 1.0]), (B, 1)),
            gold=np.array([0, 1]),
        )
        logits, pt = head_graph(head, batch, training=True, dropout_rate=0.0)
        loss, _ = ad.softmax_cross_entropy(logits, batch.gold)
        ad.backward(loss)
        grad = pt["out_hidden_w"].grad
        summary = head.cnn.output_dim
        # only the none-of-the-above block fired, so hidden weight rows
        # fed by the five gated-off blocks carry no gradient
        assert not grad[3 : 3 + 5 * summary].any()
        assert grad[3 + 5 * summary : 3 + 6 * summary].any()

    def test_shared_summary_accumulates_both_paths(self):
        # the CNN summary feeds the gate net and the act blocks; killing
        # either consumer must change the conv gradient
        rng = np.random.default_rng(1)
        head = init_head(rng, 4, 3, 3, belief_dim=3, use_acts=True)
        for n in WINDOW_SIZES:
            head.cnn.biases[n] = rng.uniform(-0.1, 0.1, 3)
        batch = HeadBatch(
            emb=rng.standard_normal((1, 4, 4)),
            dot_scores=rng.standard_normal((1, 4)),
            str_match=np.zeros((1, 4)),
            token_mask=np.ones((1, 4)),
            rows=np.array([4]),
            acts=np.array([[0, 0, 0, 0, 0, 1.0]]),
            belief=np.array([[0.2, 0.5, 0.3]]),
            gold=np.array([0]),
        )

        def conv_grad(zero_gate, zero_blocks):
            import copy

            h = copy.deepcopy(head)
            if zero_gate:
                h.gate.out_w = np.zeros_like(h.gate.out_w)
                h.gate.hidden_w = np.zeros_like(h.gate.hidden_w)
            b = batch
            if zero_blocks:
                b = HeadBatch(
                    emb=batch.emb,
                    dot_scores=batch.dot_scores,
                    str_match=batch.str_match,
                    token_mask=batch.token_mask,
                    rows=batch.rows,
                    acts=np.zeros((1, 6)),
                    belief=batch.belief,
                    gold=batch.gold,
                )
            logits, pt = head_graph(h, b, training=True, dropout_rate=0.0)
            loss, _ = ad.softmax_cross_entropy(logits, b.gold)
            ad.backward(loss)
            g = pt["conv1_w"].grad
            return np.zeros_like(head.cnn.filters[1]) if g is None else g

        full = conv_grad(False, False)
        assert not np.allclose(full, conv_grad(True, False))
        assert not np.allclose(full, conv_grad(False, True))


class TestAdam:
    def test_zero_gradients_leave_params_unchanged(self):
        state = AdamState()
        params = [np.ones((2, 2)), np.array(3.0)]
        out = adam_step(state, params, [np.zeros((2, 2)), np.array(0.0)])
        assert np.array_equal(out[0], params[0])
        assert np.array_equal(out[1], params[1])

    def test_first_step_magnitude_is_lr(self):
        state = AdamState(lr=1e-3)
        params = [np.zeros(4)]
        out = adam_step(state, params, [np.full(4, 0.37)])
        # bias correction makes the first update ~lr per coordinate
        assert np.allclose(np.abs(out[0]), 1e-3 * 0.37 / (0.37 + 1e-8), atol=1e-9)
        assert state.t == 1

    def test_deterministic(self):
        def run():
            state = AdamState()
            p = [np.ones(3)]
            for _ in range(5):
                p = adam_step(state, p, [np.array([0.1, -0.2, 0.3])])
            return p[0]

        assert np.array_equal(run(), run())


class TestClipGlobalNorm:
    def test_scales_when_over(self):
        grads = [np.array([6.0, 8.0])]  # norm 10
        out = clip_global_norm(grads, 5.0)
        assert np.allclose(out[0], [3.0, 4.0])

    def test_unchanged_when_under(self):
        grads = [np.array([3.0, 3.0])]
        assert clip_global_norm(grads, 5.0) is grads

    def test_norm_after_clipping(self):
        rng = np.random.default_rng(0)
        grads = [rng.standard_normal(50), rng.standard_normal((7, 3))]
        out = clip_global_norm(grads, 5.0)
        total = math.sqrt(sum(float(np.sum(g * g)) for g in out))
        assert total <= 5.0 + 1e-9

    def test_preserves_direction(self):
        rng = np.random.default_rng(1)
        g = rng.standard_normal(100) * 10
        (out,) = clip_global_norm([g], 5.0)
        cos = float(g @ out / (np.linalg.norm(g) * np.linalg.norm(out)))
        assert cos == pytest.approx(1.0, abs=1e-12)


class TestDropout:
    def test_identity_at_inference(self):
        x = np.arange(5.0)
        assert dropout(x, 0.5, np.random.default_rng(0), training=False) is x

    def test_rate_zero_identity(self):
        x = np.arange(5.0)
        assert dropout(x, 0.0, np.random.default_rng(0), training=True) is x

    def test_expectation_preserved(self):
        rng = np.random.default_rng(7)
        x = np.full(8, 2.0)
        total = np.zeros(8)
        n = 10_000
        for _ in range(n):
            total += dropout(x, 0.5, rng, training=True)
        assert np.allclose(total / n, x, rtol=0.05)

    def test_invalid_rate_raises(self):
        with pytest.raises(ValueError):
            dropout(np.ones(3), 1.0, np.random.default_rng(0))


class TestHeadGraph:
    def test_softmax_of_logits_normalized(self):
        rng = np.random.default_rng(0)
        head = init_head(rng, 5, 4, 3, belief_dim=3, use_acts=True)
        batch = HeadBatch(
            emb=rng.standard_normal((3, 4, 5)),
            dot_scores=rng.standard_normal((3, 4)),
            str_match=np.zeros((3, 4)),
            token_mask=np.ones((3, 4)),
            rows=np.array([4, 4, 3]),
            acts=np.tile(np.array([1, 0, 0, 0, 0, 0.0]), (3, 1)),
            belief=np.tile(np.array([0, 0, 1.0]), (3, 1)),
        )
        logits, _ = head_graph(head, batch)
        probs = ad.softmax(logits.data)
        assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-12)

    def test_dims_match_named_params(self):
        rng = np.random.default_rng(1)
        head = init_head(rng, 10, 50, 3, belief_dim=3, use_acts=True)
        names = [n for n, _ in named_params(head)]
        assert names[0] == "conv1_w" and names[-1] == "dot_bias"
        assert head.out.n_in == 3 + 6 * 150

    def test_req_style_head_has_no_gate(self):
        head = init_head(np.random.default_rng(2), 10, 50, 2, belief_dim=None, use_acts=False)
        assert head.gate is None
        assert head.out.n_in == 150
