import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradcheck import check_grads
from simulprefix.errors import DimensionError
from simulprefix.numerics import (
    AdamState,
    GradTape,
    LstmWeights,
    Tensor,
    adam_step,
    backward,
    clip_grad_norm,
    concat,
    dropout,
    embedding,
    label_smoothed_ce,
    lstm_cell,
    make_rng,
    matmul,
    mul,
    reshape,
    scheduled_lr,
    sigmoid,
    softmax,
    softmax_rows,
    stack,
    swapaxes,
    tanh,
)
from simulprefix.numerics import sum as tsum


def triple_loop(a, b):
    m, k = a.shape
    n = b.shape[1]
    c = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for p in range(k):
                acc += a[i, p] * b[p, j]
            c[i, j] = acc
    return c


def param(rng, *shape, name=None):
    return Tensor(rng.standard_normal(shape), requires_grad=True, name=name)


class TestMatmul:
    def test_identity(self):
        a = np.array([[1.5, -2.0], [0.25, 3.0]])
        np.testing.assert_array_equal(matmul(Tensor(np.eye(2)), Tensor(a)).data, a)

    def test_annihilator(self):
        b = np.arange(8.0).reshape(4, 2)
        np.testing.assert_array_equal(matmul(Tensor(np.zeros((3, 4))), Tensor(b)).data,
                                      np.zeros((3, 2)))

    def test_random_5x7_by_7x3(self):
        rng = np.random.default_rng(0)
        a, b = rng.standard_normal((5, 7)), rng.standard_normal((7, 3))
        assert np.max(np.abs(matmul(Tensor(a), Tensor(b)).data - triple_loop(a, b))) <= 1e-12

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 16), st.integers(1, 16), st.integers(1, 16), st.integers(0, 2**31))
    def test_matches_triple_loop(self, m, k, n, seed):
        rng = np.random.default_rng(seed)
        a, b = rng.standard_normal((m, k)), rng.standard_normal((k, n))
        assert np.max(np.abs(matmul(Tensor(a), Tensor(b)).data - triple_loop(a, b))) <= 1e-12

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(4, 5\)"):
            matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))

    def test_gradients_2d_batched_and_vector(self):
        rng = np.random.default_rng(1)
        a, b = param(rng, 3, 4, name="a"), param(rng, 4, 2, name="b")
        check_grads(lambda: tsum(mul(matmul(a, b), matmul(a, b))), [a, b])
        x, w = param(rng, 2, 3, 4, name="x"), param(rng, 4, 5, name="w")
        check_grads(lambda: tsum(tanh(matmul(x, w))), [x, w])
        y, z = param(rng, 2, 3, 4, name="y"), param(rng, 2, 4, 2, name="z")
        check_grads(lambda: tsum(tanh(matmul(y, z))), [y, z])
        v = param(rng, 4, name="v")
        check_grads(lambda: tsum(tanh(matmul(v, w))), [v, w])


class TestSoftmax:
    def test_symmetric_row(self):
        np.testing.assert_array_equal(softmax_rows(Tensor([[0.0, 0.0]])).data, [[0.5, 0.5]])

    def test_hand_value(self):
        out = softmax_rows(Tensor([[0.0, math.log(2.0)]])).data
        np.testing.assert_allclose(out, [[1 / 3, 2 / 3]], rtol=0, atol=1e-15)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 8), st.integers(1, 8), st.floats(-50, 50), st.integers(0, 2**31))
    def test_rows_stochastic_and_shift_invariant(self, r, c, shift, seed):
        x = np.random.default_rng(seed).normal(scale=5.0, size=(r, c))
        p = softmax_rows(Tensor(x)).data
        assert np.all(p >= 0)
        assert np.max(np.abs(p.sum(axis=1) - 1.0)) <= 1e-12
        assert np.max(np.abs(softmax_rows(Tensor(x + shift)).data - p)) <= 1e-12

    def test_large_inputs_stay_finite(self):
        p = softmax_rows(Tensor([[1000.0, 1001.0, -1000.0]])).data
        assert np.all(np.isfinite(p))

    def test_mask_gives_exact_zero(self):
        p = softmax(Tensor([[1.0, 2.0, 3.0]]), mask=np.array([[True, True, False]])).data
        assert p[0, 2] == 0.0
        assert abs(p.sum() - 1.0) <= 1e-12

    def test_rejects_non_matrix(self):
        with pytest.raises(DimensionError):
            softmax_rows(Tensor(np.zeros(3)))

    def test_gradient(self):
        rng = np.random.default_rng(2)
        x = param(rng, 3, 5, name="x")
        w = Tensor(rng.standard_normal((3, 5)))
        check_grads(lambda: tsum(mul(softmax_rows(x), w)), [x])
        mask = np.array([[True, True, False, True, False]])
        check_grads(lambda: tsum(mul(softmax(x, mask=mask), w)), [x])


class TestLstmCell:
    def _weights(self, rng, d_in, d, scale=0.5):
        w = LstmWeights.init(rng, d_in, d)
        for t in w.tensors():
            t.data[...] = rng.uniform(-scale, scale, t.shape)
        return w

    def test_all_zero_gives_zero_state(self):
        w = LstmWeights(Tensor(np.zeros((3, 8))), Tensor(np.zeros((2, 8))), Tensor(np.zeros(8)))
        h, c = lstm_cell(Tensor(np.zeros(3)), Tensor(np.zeros(2)), Tensor(np.zeros(2)), w)
        np.testing.assert_array_equal(h.data, 0.0)
        np.testing.assert_array_equal(c.data, 0.0)

    def test_output_bounded(self):
        rng = np.random.default_rng(3)
        w = self._weights(rng, 4, 6, scale=1.0)
        h, _ = lstm_cell(Tensor(rng.normal(size=(50, 4))), Tensor(rng.normal(size=(50, 6))),
                         Tensor(rng.normal(size=(50, 6)) * 3), w)
        assert np.all(np.abs(h.data) < 1.0)

    def test_vector_and_batch_agree(self):
        rng = np.random.default_rng(4)
        w = self._weights(rng, 3, 4)
        x, h, c = rng.normal(size=(2, 3)), rng.normal(size=(2, 4)), rng.normal(size=(2, 4))
        hb, cb = lstm_cell(Tensor(x), Tensor(h), Tensor(c), w)
        h1, c1 = lstm_cell(Tensor(x[1]), Tensor(h[1]), Tensor(c[1]), w)
        np.testing.assert_allclose(hb.data[1], h1.data, atol=1e-15)
        np.testing.assert_allclose(cb.data[1], c1.data, atol=1e-15)

    def test_matches_unfused_equations(self):
        rng = np.random.default_rng(5)
        w = self._weights(rng, 3, 4)
        x, h, c = (Tensor(rng.normal(size=(2, k))) for k in (3, 4, 4))
        a = matmul(x, w.w_ih) + matmul(h, w.w_hh) + w.bias
        i, f, o = (sigmoid(a[:, k * 4:(k + 1) * 4]) for k in range(3))
        g = tanh(a[:, 12:])
        c_ref = f * c + i * g
        h_ref = o * tanh(c_ref)
        hf, cf = lstm_cell(x, h, c, w)
        np.testing.assert_allclose(hf.data, h_ref.data, atol=1e-14)
        np.testing.assert_allclose(cf.data, c_ref.data, atol=1e-14)

    def test_gradient_of_sum_h(self):
        rng = np.random.default_rng(6)
        w = self._weights(rng, 3, 4)
        x, h, c = param(rng, 3, name="x"), param(rng, 4, name="h"), param(rng, 4, name="c")
        check_grads(lambda: tsum(lstm_cell(x, h, c, w)[0]), [x, h, c] + w.tensors())

    def test_gradient_through_two_steps_batched(self):
        rng = np.random.default_rng(7)
        w = self._weights(rng, 3, 4)
        x = param(rng, 2, 3, name="x")
        h0, c0 = Tensor(np.zeros((2, 4))), Tensor(np.zeros((2, 4)))

        def f():
            h, c = lstm_cell(x, h0, c0, w)
            h, c = lstm_cell(x, h, c, w)
            return tsum(mul(h, h)) + tsum(c)

        check_grads(f, [x] + w.tensors())

    def test_shape_mismatch(self):
        rng = np.random.default_rng(8)
        w = self._weights(rng, 3, 4)
        with pytest.raises(DimensionError):
            lstm_cell(Tensor(np.zeros(5)), Tensor(np.zeros(4)), Tensor(np.zeros(4)), w)


class TestLabelSmoothedCE:
    @pytest.mark.parametrize("smoothing", [0.0, 0.1, 0.5])
    def test_uniform_logits_give_log_v(self, smoothing):
        loss = label_smoothed_ce(Tensor(np.zeros((4, 7))), [0, 3, 6, 2], smoothing, pad_id=None)
        assert abs(loss.item() - math.log(7)) <= 1e-12

    def test_hand_value(self):
        loss = label_smoothed_ce(Tensor([[0.0, math.log(3.0)]]), [1], 0.0, pad_id=None)
        assert abs(loss.item() + math.log(0.75)) <= 1e-12

    def test_zero_smoothing_is_cross_entropy(self):
        rng = np.random.default_rng(9)
        logits = rng.normal(size=(5, 6))
        targets = rng.integers(0, 6, size=5)
        p = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
        ce = -np.mean(np.log(p[np.arange(5), targets]))
        assert abs(label_smoothed_ce(Tensor(logits), targets, 0.0, pad_id=None).item() - ce) <= 1e-12

    def test_padding_excluded(self):
        rng = np.random.default_rng(10)
        logits = rng.normal(size=(4, 5))
        full = label_smoothed_ce(Tensor(logits), [0, 2, 3, 0], 0.1, pad_id=0)
        kept = label_smoothed_ce(Tensor(logits[1:3]), [2, 3], 0.1, pad_id=0)
        assert abs(full.item() - kept.item()) <= 1e-12

    def test_out_of_range_target(self):
        with pytest.raises(IndexError):
            label_smoothed_ce(Tensor(np.zeros((1, 3))), [3], 0.1)

    def test_gradient(self):
        rng = np.random.default_rng(11)
        logits = param(rng, 4, 6, name="logits")
        check_grads(lambda: label_smoothed_ce(logits, [1, 0, 5, 2], 0.1, pad_id=0), [logits])


class TestDropout:
    def test_rate_zero_identity(self):
        x = Tensor(np.arange(6.0))
        np.testing.assert_array_equal(dropout(x, 0.0, True, make_rng(0)).data, x.data)

    def test_eval_identity(self):
        x = Tensor(np.arange(6.0))
        np.testing.assert_array_equal(dropout(x, 0.9, False, make_rng(0)).data, x.data)

    def test_zero_fraction(self):
        out = dropout(Tensor(np.ones(10**6)), 0.3, True, make_rng(0)).data
        assert 0.295 <= np.mean(out == 0.0) <= 0.305
        np.testing.assert_allclose(out[out != 0], 1 / 0.7)

    def test_bad_rate(self):
        with pytest.raises(ValueError):
            dropout(Tensor(np.ones(3)), 1.0, True, make_rng(0))

    def test_same_seed_same_mask(self):
        a = dropout(Tensor(np.ones(100)), 0.5, True, make_rng(7, "drop")).data
        b = dropout(Tensor(np.ones(100)), 0.5, True, make_rng(7, "drop")).data
        np.testing.assert_array_equal(a, b)


class TestBackward:
    def test_sum_gives_ones(self):
        x = Tensor(np.arange(5.0), requires_grad=True)
        with GradTape() as tape:
            loss = tsum(x)
        backward(loss, tape)
        np.testing.assert_array_equal(x.grad, np.ones(5))

    def test_square_gives_2x(self):
        x = Tensor([1.0, -2.0, 3.5], requires_grad=True)
        with GradTape() as tape:
            loss = tsum(mul(x, x))
        backward(loss, tape)
        np.testing.assert_array_equal(x.grad, 2 * x.data)

    def test_untouched_parameter_zero(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        y = Tensor([3.0], requires_grad=True)
        with GradTape() as tape:
            loss = tsum(x)
        backward(loss, tape)
        np.testing.assert_array_equal(y.grad, [0.0])

    def test_non_scalar_loss(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with GradTape() as tape:
            y = mul(x, 2.0)
        with pytest.raises(ValueError):
            backward(y, tape)

    def test_no_tape_records_nothing(self):
        x = Tensor([1.0], requires_grad=True)
        with GradTape() as tape:
            pass
        tsum(x)
        assert len(tape) == 0

    def test_reverse_order_each_node_once(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with GradTape() as tape:
            loss = tsum(tanh(mul(x, x)))
        visited = []
        for k, node in enumerate(tape.nodes):
            fn = node.backward
            node.backward = (lambda fn, k: lambda *g: (visited.append(k), fn(*g))[1])(fn, k)
        backward(loss, tape)
        assert visited == list(reversed(range(len(tape.nodes))))

    def test_shape_ops_gradients(self):
        rng = np.random.default_rng(12)
        a, b = param(rng, 2, 3, name="a"), param(rng, 2, 2, name="b")
        table = param(rng, 5, 3, name="table")
        w = Tensor(rng.normal(size=(2, 5)))

        def f():
            c = concat([a, b], axis=1)
            s = stack([c, c * 2.0], axis=0)
            e = embedding(table, np.array([[0, 4], [4, 1]]))
            r = reshape(swapaxes(s, 1, 2), (2, 10))
            return tsum(mul(tanh(r[:, ::2]), w)) + tsum(mul(e, e)) + tsum(r[1, 3:7])

        check_grads(f, [a, b, table])


class TestAdam:
    def test_zero_gradient_no_change(self):
        p = Tensor([1.0, -2.0], requires_grad=True)
        state = AdamState(lr=0.1)
        adam_step([p], [np.zeros(2)], state)
        np.testing.assert_array_equal(p.data, [1.0, -2.0])

    def test_first_step_closed_form(self):
        g = np.array([0.3, -2.0, 1e-3])
        p = Tensor([1.0, 1.0, 1.0], requires_grad=True)
        state = AdamState(lr=0.01, betas=(0.9, 0.997), eps=1e-9)
        adam_step([p], [g.copy()], state)
        expected = 1.0 - 0.01 * g / (np.abs(g) + 1e-9)
        np.testing.assert_allclose(p.data, expected, rtol=0, atol=1e-12)
        np.testing.assert_allclose(p.data, 1.0 - 0.01 * np.sign(g), atol=1e-8)

    def test_deterministic(self):
        rng = np.random.default_rng(13)
        grads = [rng.normal(size=3) for _ in range(4)]
        state = AdamState(lr=0.05, warmup_steps=2)
        outs = []
        for s in (state.copy(), state.copy()):
            p = Tensor(np.ones(3), requires_grad=True)
            for g in grads:
                adam_step([p], [g.copy()], s)
            outs.append(p.data.tobytes())
        assert outs[0] == outs[1]

    def test_step_counter_and_moment_shapes(self):
        p = Tensor(np.ones((2, 3)), requires_grad=True)
        state = AdamState()
        for k in range(3):
            adam_step([p], [np.ones((2, 3))], state)
            assert state.step == k + 1
        assert state.m[0].shape == p.shape and state.v[0].shape == p.shape

    def test_schedule(self):
        s = AdamState(lr=1.0, warmup_steps=4, warmup_init_lr=0.0)
        assert [scheduled_lr(s, t) for t in (1, 2, 4)] == [0.25, 0.5, 1.0]
        assert abs(scheduled_lr(s, 16) - 0.5) <= 1e-15
        s.lr_scale = 0.1
        assert abs(scheduled_lr(s, 4) - 0.1) <= 1e-15

    def test_clip(self):
        gs = [np.array([3.0]), np.array([4.0])]
        assert clip_grad_norm(gs, 1.0) == 5.0
        assert abs(math.hypot(gs[0][0], gs[1][0]) - 1.0) <= 1e-9
