import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bimodel_slu import tensor as T
from bimodel_slu.tensor import Adam, ContractError, DimensionError, Tensor

from conftest import central_difference, param_tensor, rel_error


def grad_of(fn, *inputs):
    for x in inputs:
        x.grad = None
    fn(*inputs).backward()
    return [x.grad for x in inputs]


class TestMatmul:
    def test_identity(self):
        out = T.matmul(Tensor(np.eye(2)), Tensor([[1.0, 2.0], [3.0, 4.0]]))
        np.testing.assert_array_equal(out.data, [[1, 2], [3, 4]])

    def test_row_times_column(self):
        out = T.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
        np.testing.assert_array_equal(out.data, [[11.0]])

    def test_shape_error_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
            T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))

    def test_gradient_matches_finite_differences(self, rng):
        a = param_tensor(rng.uniform(-2, 2, (3, 4)))
        b = param_tensor(rng.uniform(-2, 2, (4, 2)))
        ga, gb = grad_of(lambda a, b: T.sum(T.matmul(a, b)), a, b)
        f = lambda: T.sum(T.matmul(a, b)).data
        assert rel_error(ga, central_difference(f, a.data)) < 1e-4
        assert rel_error(gb, central_difference(f, b.data)) < 1e-4


class TestElementwise:
    def test_sigmoid_zero(self):
        assert T.elementwise("sigmoid", Tensor([0.0])).data[0] == 0.5

    def test_tanh_zero(self):
        assert T.elementwise("tanh", Tensor([0.0])).data[0] == 0.0

    def test_sigmoid_gradient_at_point(self):
        x = param_tensor([0.3])
        (g,) = grad_of(lambda x: T.sum(T.sigmoid(x)), x)
        fd = central_difference(lambda: T.sum(T.sigmoid(x)).data, x.data)
        assert abs(g[0] - fd[0]) / abs(fd[0]) < 1e-4
        s = 1 / (1 + math.exp(-0.3))
        assert g[0] == pytest.approx(s * (1 - s), rel=1e-12)

    def test_sigmoid_extreme_inputs_stay_finite(self):
        out = T.sigmoid(Tensor(np.array([-1000.0, 1000.0]))).data
        np.testing.assert_array_equal(out, [0.0, 1.0])

    @pytest.mark.parametrize("op", ["add", "mul"])
    def test_binary_shape_mismatch(self, op):
        with pytest.raises(DimensionError):
            T.elementwise(op, Tensor(np.zeros((2, 2))), Tensor(np.zeros((2, 3))))

    def test_unknown_op(self):
        with pytest.raises(ValueError):
            T.elementwise("relu", Tensor([1.0]))

    @pytest.mark.parametrize("op", ["add", "mul", "sigmoid", "tanh"])
    def test_gradients_match_finite_differences(self, op, rng):
        a = param_tensor(rng.uniform(-2, 2, (3, 5)))
        b = param_tensor(rng.uniform(-2, 2, (3, 5)))
        operands = (a, b) if op in ("add", "mul") else (a,)
        grads = grad_of(lambda *xs: T.sum(T.elementwise(op, *xs)), *operands)
        f = lambda: T.sum(T.elementwise(op, *operands)).data
        for x, g in zip(operands, grads):
            assert rel_error(g, central_difference(f, x.data)) < 1e-4

    def test_bias_add_broadcasts_over_batch(self, rng):
        x = param_tensor(rng.uniform(-2, 2, (4, 3)))
        b = param_tensor(rng.uniform(-2, 2, 3))
        gx, gb = grad_of(lambda x, b: T.sum(T.mul(T.add(x, b), T.add(x, b))), x, b)
        f = lambda: T.sum(T.mul(T.add(x, b), T.add(x, b))).data
        assert rel_error(gb, central_difference(f, b.data)) < 1e-4
        assert rel_error(gx, central_difference(f, x.data)) < 1e-4


class TestConcat:
    def test_values(self):
        out = T.concat([Tensor([[1.0, 2.0]]), Tensor([[3.0, 4.0]])], axis=1)
        np.testing.assert_array_equal(out.data, [[1, 2, 3, 4]])

    def test_empty_list(self):
        with pytest.raises(DimensionError):
            T.concat([], axis=1)

    def test_incompatible(self):
        with pytest.raises(DimensionError):
            T.concat([Tensor(np.zeros((1, 2))), Tensor(np.zeros((2, 2)))], axis=1)

    def test_gradient_of_sum_is_ones(self):
        a, b = param_tensor([[1.0, 2.0]]), param_tensor([[3.0, 4.0, 5.0]])
        ga, gb = grad_of(lambda a, b: T.sum(T.concat([a, b], axis=1)), a, b)
        np.testing.assert_array_equal(ga, np.ones((1, 2)))
        np.testing.assert_array_equal(gb, np.ones((1, 3)))


class TestCrossEntropy:
    def test_uniform_logits(self):
        loss = T.softmax_cross_entropy(Tensor(np.zeros((1, 4))), [2])
        assert loss.item() == pytest.approx(math.log(4), abs=1e-6)

    def test_confident_correct_logits(self):
        logits = np.zeros((1, 4))
        logits[0, 1] = 1e6
        assert T.softmax_cross_entropy(Tensor(logits), [1]).item() == pytest.approx(0.0, abs=1e-9)

    def test_target_out_of_range(self):
        with pytest.raises(IndexError):
            T.softmax_cross_entropy(Tensor(np.zeros((2, 3))), [0, 3])

    def test_gradient_matches_finite_differences(self, rng):
        logits = param_tensor(rng.uniform(-2, 2, (2, 5)))
        target = [4, 1]
        (g,) = grad_of(lambda z: T.softmax_cross_entropy(z, target), logits)
        fd = central_difference(lambda: T.softmax_cross_entropy(logits, target).data, logits.data)
        assert rel_error(g, fd) < 1e-4

    def test_gradient_closed_form(self, rng):
        z = rng.uniform(-2, 2, (3, 4))
        logits = param_tensor(z)
        (g,) = grad_of(lambda x: T.softmax_cross_entropy(x, [0, 1, 2]), logits)
        p = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
        p[np.arange(3), [0, 1, 2]] -= 1
        np.testing.assert_allclose(g, p / 3, atol=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (3, 6), elements=st.floats(-50, 50)))
    def test_softmax_is_a_distribution(self, z):
        p = T.softmax(z)
        assert (p >= 0).all()
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-6)


class TestEmbedding:
    def test_identity_row(self):
        out = T.embedding_lookup(Tensor(np.eye(3)), [0])
        np.testing.assert_array_equal(out.data, [[1, 0, 0]])

    def test_repeated_index_scatter_adds(self):
        table = param_tensor(np.zeros((4, 3)))
        (g,) = grad_of(lambda t: T.sum(T.embedding_lookup(t, [2, 2])), table)
        np.testing.assert_array_equal(g[2], [2.0, 2.0, 2.0])
        assert not g[[0, 1, 3]].any()

    def test_out_of_range(self):
        with pytest.raises(IndexError):
            T.embedding_lookup(Tensor(np.zeros((3, 2))), [3])

    def test_gradient_matches_finite_differences(self, rng):
        table = param_tensor(rng.uniform(-2, 2, (5, 3)))
        w = Tensor(rng.uniform(-2, 2, (4, 3)))
        idx = [1, 4, 1, 0]
        f = lambda: T.sum(T.mul(T.embedding_lookup(table, idx), w))
        (g,) = grad_of(lambda t: f(), table)
        assert rel_error(g, central_difference(lambda: f().data, table.data)) < 1e-4


class TestBackward:
    def test_sum_gives_ones(self):
        x = param_tensor(np.arange(6.0).reshape(2, 3))
        T.sum(x).backward()
        np.testing.assert_array_equal(x.grad, np.ones((2, 3)))

    def test_square_at_three(self):
        x = param_tensor([3.0])
        T.sum(T.mul(x, x)).backward()
        assert x.grad[0] == 6.0

    def test_non_scalar_loss(self):
        x = param_tensor(np.ones((2, 2)))
        with pytest.raises(ContractError):
            T.mul(x, x).backward()

    def test_detached_loss_rejected(self):
        with pytest.raises(ContractError):
            T.sum(Tensor(np.ones(3))).backward()

    def test_accumulation_is_additive(self, rng):
        x = param_tensor(rng.uniform(-2, 2, (3, 3)))
        w = param_tensor(rng.uniform(-2, 2, (3, 3)))
        f = lambda: T.sum(T.tanh(T.matmul(x, w)))
        f().backward()
        once = x.grad.copy()
        f().backward()
        np.testing.assert_array_equal(x.grad, 2 * once)

    def test_intermediates_receive_grads(self):
        x = param_tensor([1.0, 2.0])
        y = T.mul(x, x)
        T.sum(y).backward()
        np.testing.assert_array_equal(y.grad, [1.0, 1.0])

    def test_shared_subexpression_visited_once(self):
        x = param_tensor([2.0])
        y = T.mul(x, x)
        T.sum(T.add(y, y)).backward()
        assert x.grad[0] == 8.0

    def test_no_grad_records_nothing(self):
        x = param_tensor([1.0])
        with T.no_grad():
            y = T.mul(x, x)
        assert not y.requires_grad and y.is_leaf

    def test_slices_reshape_and_blend(self, rng):
        x = param_tensor(rng.uniform(-2, 2, (4, 6)))
        old = param_tensor(rng.uniform(-2, 2, (2, 3)))
        mask = np.array([1.0, 0.0])

        def f():
            rows = T.slice_rows(x, 1, 3)
            cols = T.slice_cols(rows, 2, 5)
            mixed = T.blend(mask, T.tanh(cols), old)
            return T.sum(T.mul(T.reshape(mixed, (3, 2)), T.reshape(mixed, (3, 2))))

        f().backward()
        assert rel_error(x.grad, central_difference(lambda: f().data, x.data)) < 1e-4
        assert rel_error(old.grad, central_difference(lambda: f().data, old.data)) < 1e-4


class TestAdam:
    def test_zero_gradient_leaves_params(self):
        p = param_tensor([1.0, -2.0])
        opt = Adam([p], lr=0.1)
        p.grad = np.zeros(2)
        opt.step()
        np.testing.assert_allclose(p.data, [1.0, -2.0], atol=1e-12)

    def test_first_step_moves_by_lr(self):
        # hand-executed: m=0.1, v=0.001, m_hat=1, v_hat=1, update=lr*1/(1+eps)
        p = param_tensor([0.5])
        opt = Adam([p], lr=0.001)
        p.grad = np.array([1.0])
        opt.step()
        assert 0.5 - p.data[0] == pytest.approx(0.001 / (1 + 1e-8), rel=1e-9)
        assert opt.step_count == 1

    def test_quadratic_converges(self):
        # reference recurrence run independently in plain floats
        w_ref, m, v = 1.0, 0.0, 0.0
        for t in range(1, 101):
            g = 2 * w_ref
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            w_ref -= 0.1 * (m / (1 - 0.9 ** t)) / (math.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        w = param_tensor([1.0])
        opt = Adam([w], lr=0.1)
        for _ in range(100):
            opt.zero_grad()
            T.sum(T.mul(w, w)).backward()
            opt.step()
        assert abs(w.data[0]) < 0.5
        assert w.data[0] == pytest.approx(w_ref, abs=1e-12)

    def test_missing_grad(self):
        p = param_tensor([1.0])
        with pytest.raises(ContractError):
            Adam([p]).step()

    def test_moments_match_param_shapes(self):
        ps = [param_tensor(np.ones((2, 3))), param_tensor(np.ones(4))]
        opt = Adam(ps)
        assert [m.shape for m in opt.m] == [(2, 3), (4,)]
        assert [v.shape for v in opt.v] == [(2, 3), (4,)]

    def test_adam_step_checks_parameter_list(self):
        p, q = param_tensor([1.0]), param_tensor([2.0])
        opt = Adam([p])
        p.grad = np.ones(1)
        with pytest.raises(ContractError):
            T.adam_step([q], opt)
        T.adam_step([p], opt)
        assert opt.step_count == 1

    def test_clip_grad_norm(self):
        p = param_tensor([0.0, 0.0])
        p.grad = np.array([3.0, 4.0])
        norm = T.clip_grad_norm([p], 1.0)
        assert norm == pytest.approx(5.0)
        np.testing.assert_allclose(p.grad, [0.6, 0.8], rtol=1e-9)


class TestDetach:
    def test_values_preserved(self, rng):
        x = param_tensor(rng.uniform(-2, 2, (2, 2)))
        np.testing.assert_array_equal(T.detach(x).data, x.data)

    def test_blocks_gradient(self):
        x = param_tensor([1.0, 2.0])
        w = param_tensor([3.0, 4.0])
        T.sum(T.mul(T.detach(x), w)).backward()
        np.testing.assert_array_equal(w.grad, [1.0, 2.0])
        assert x.grad is None


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, (2, 3), elements=st.floats(-2, 2)), arrays(np.float64, (3, 2), elements=st.floats(-2, 2)))
def test_composite_gradient_property(a0, b0):
    a, b = param_tensor(a0.copy()), param_tensor(b0.copy())
    f = lambda: T.sum(T.mul(T.sigmoid(T.matmul(a, b)), T.tanh(T.matmul(a, b))))
    f().backward()
    assert rel_error(a.grad, central_difference(lambda: f().data, a.data)) < 1e-4
    assert rel_error(b.grad, central_difference(lambda: f().data, b.data)) < 1e-4
