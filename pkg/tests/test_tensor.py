import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from egcnn import tensor as T
from egcnn.errors import ContractError, ShapeError


def P(v, name="p"):
    return T.Parameter(np.array(v, dtype=float), name)


def run(fn):
    with T.Tape() as tape:
        out = fn()
    return out, tape


class TestEmbedding:
    def test_row_selection(self):
        out, _ = run(lambda: T.embedding_lookup(P([[1, 2], [3, 4]]), [1, 0, 1]))
        assert out.data.tolist() == [[3, 4], [1, 2], [3, 4]]

    def test_single_use_adjoint(self):
        table = P([[1, 2], [3, 4]])
        with T.Tape() as tape:
            out = T.embedding_lookup(table, [0])
            loss = _sum(T.rowdot(out, T.Tensor([[1.0, 1.0]])))
        tape.backward(loss)
        assert table.grad.tolist() == [[1, 1], [0, 0]]

    def test_repeated_ids_accumulate(self):
        table = P([[1, 2], [3, 4]])
        with T.Tape() as tape:
            out = T.embedding_lookup(table, [0, 0])
            loss = _sum(T.rowdot(out, T.Tensor([[1.0, 0.0], [2.0, 0.0]])))
        tape.backward(loss)
        assert table.grad[0].tolist() == [3, 0]
        assert table.grad[1].tolist() == [0, 0]

    def test_out_of_range_names_position(self):
        with pytest.raises(IndexError, match=r"position \(2,\)"):
            T.embedding_lookup(P([[1.0], [2.0]]), [0, 1, 5])


def _sum(x):
    # scalar sum of a 1-D tensor through ops that exist on the tape
    return T.rowdot(x, T.Tensor(np.ones(x.data.shape)))


class TestConvPool:
    def test_shape(self, rng):
        out, _ = run(lambda: T.text_conv(T.Tensor(rng.random((100, 7))), P(rng.random((3, 7, 128))),
                                         P(np.zeros(128))))
        assert out.shape == (98, 128)

    def test_zero_input_gives_bias(self):
        out, _ = run(lambda: T.text_conv(T.Tensor(np.zeros((5, 3))), P(np.ones((2, 3, 2))), P([0.5, -1.0])))
        assert np.all(out.data == [0.5, -1.0])

    def test_hand_value(self):
        out, _ = run(lambda: T.text_conv(T.Tensor([[3.0], [5.0]]), P([[[2.0]]]), P([0.0])))
        assert out.data.tolist() == [[6], [10]]

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError, match=r"\(4, 3\).*\(2, 5, 1\)"):
            T.text_conv(T.Tensor(np.zeros((4, 3))), P(np.zeros((2, 5, 1))), P([0.0]))

    def test_filter_longer_than_input(self):
        with pytest.raises(ShapeError):
            T.text_conv(T.Tensor(np.zeros((2, 3))), P(np.zeros((3, 3, 1))), P([0.0]))

    def test_maxpool_columnwise(self):
        out, _ = run(lambda: T.max_pool_over_time(T.Tensor([[1.0, 5.0], [3.0, 2.0]])))
        assert out.data.tolist() == [3, 5]

    def test_maxpool_single_row(self):
        out, _ = run(lambda: T.max_pool_over_time(T.Tensor([[1.5, -2.0]])))
        assert out.data.tolist() == [1.5, -2.0]

    def test_maxpool_tie_goes_to_first(self):
        x = P([[2.0, 0.0], [2.0, 0.0]])
        with T.Tape() as tape:
            loss = _sum(T.max_pool_over_time(x))
        tape.backward(loss)
        assert x.grad.tolist() == [[1, 1], [0, 0]]

    def test_maxpool_tie_is_a_valid_subgradient(self):
        # one-sided differences at the tie bracket the t=0 subgradient
        x = np.array([[2.0, 0.0], [2.0, 0.0]])
        h = 1e-6

        def f(v):
            return float(np.max(v, axis=0).sum())

        up = x.copy(); up[0, 0] += h
        down = x.copy(); down[0, 0] -= h
        right = (f(up) - f(x)) / h
        left = (f(x) - f(down)) / h
        assert left <= 1.0 + 1e-9 and right >= 1.0 - 1e-9

    def test_maxpool_empty_axis(self):
        with pytest.raises(ShapeError):
            T.max_pool_over_time(T.Tensor(np.zeros((0, 3))))

    def test_batched_conv_matches_loop(self, rng):
        x = rng.standard_normal((3, 6, 4))
        w, b = P(rng.standard_normal((2, 4, 5))), P(rng.standard_normal(5))
        batched, _ = run(lambda: T.text_conv(T.Tensor(x), w, b))
        for i in range(3):
            single, _ = run(lambda: T.text_conv(T.Tensor(x[i]), w, b))
            np.testing.assert_allclose(batched.data[i], single.data, atol=1e-12)


class TestElementwise:
    def test_values(self):
        out, _ = run(lambda: T.elementwise("sigmoid", T.Tensor([0.0, 0.6])))
        assert out.data[0] == 0.5
        assert abs(out.data[1] - 0.6456563062257954) < 1e-9
        out, _ = run(lambda: T.elementwise("relu", T.Tensor([-3.0, 2.0])))
        assert out.data.tolist() == [0, 2]

    def test_sigmoid_is_stable(self):
        out, _ = run(lambda: T.sigmoid(T.Tensor([-800.0, 800.0])))
        assert np.all(np.isfinite(out.data)) and out.data.tolist() == [0.0, 1.0]

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            T.elementwise("tanh", T.Tensor([0.0]))


class TestMisc:
    def test_scale_rows(self):
        out, _ = run(lambda: T.scale_rows(T.Tensor([[1.0, 2.0], [3.0, 4.0]]), T.Tensor([0.5, 1.0])))
        assert out.data.tolist() == [[0.5, 1], [3, 4]]

    def test_mse_identity(self):
        out, _ = run(lambda: T.mse(T.Tensor(0.7), 0.7))
        assert float(out.data) == 0.0

    def test_concat_length(self):
        out, _ = run(lambda: T.concat([T.Tensor(np.zeros(128))] * 4))
        assert out.shape == (512,)

    def test_dense_vector_weight(self):
        out, _ = run(lambda: T.dense(T.Tensor([0.1, 0.2]), P([1.0, 2.0]), P(0.1)))
        assert abs(float(out.data) - 0.6) < 1e-12


class TestBackward:
    def test_square(self):
        p = P(3.0)
        with T.Tape() as tape:
            loss = T.mse(p, 0.0)
        tape.backward(loss)
        assert float(p.grad) == 6.0

    def test_unused_parameter_has_zero_grad(self):
        p, q = P(3.0), P([1.0, 2.0])
        with T.Tape() as tape:
            loss = T.mse(p, 0.0)
        tape.backward(loss)
        assert q.grad.tolist() == [0, 0]

    def test_non_scalar_loss(self):
        with T.Tape() as tape:
            out = T.relu(P([1.0, 2.0]))
        with pytest.raises(ContractError):
            tape.backward(out)

    def test_check_finite_traps_nan(self):
        with T.check_finite():
            with pytest.raises(FloatingPointError):
                with T.Tape():
                    T.relu(T.Tensor([np.nan]))


class TestAdaGrad:
    def test_first_step_is_about_lr_sign(self):
        p = P([1.0, 1.0])
        p.grad[...] = [5.0, -0.3]
        T.adagrad_step([p], lr=0.08, eps=1e-8)
        np.testing.assert_allclose(p.data, [1 - 0.08, 1 + 0.08], atol=1e-8)

    def test_zero_grad_no_change(self):
        p = P([1.0])
        T.adagrad_step([p])
        assert p.data.tolist() == [1.0]

    def test_second_step_magnitude(self):
        p = P(0.0)
        p.grad[...] = 3.0
        T.adagrad_step([p], lr=0.08, eps=1e-8)
        before = float(p.data)
        p.grad[...] = 4.0
        T.adagrad_step([p], lr=0.08, eps=1e-8)
        assert abs((before - float(p.data)) - 0.08 * 4 / (5 + 1e-8)) < 1e-15
        assert abs((before - float(p.data)) - 0.08 * 4 / 5) < 1e-9

    def test_frozen_rows_do_not_move(self):
        p = T.Parameter(np.ones((2, 2)), "e", frozen_rows=(0,))
        p.grad[...] = 1.0
        T.adagrad_step([p])
        assert p.data[0].tolist() == [1, 1] and np.all(p.data[1] < 1)


class TestGradCheck:
    def test_quadratic(self, rng):
        p = P(rng.standard_normal(4))
        A = rng.standard_normal((4, 4))

        def loss():
            return T.trace_quadratic(_row(p), A @ A.T)

        assert T.grad_check(loss, [p]) < 1e-9

    def test_relu_kink_is_excluded(self):
        p = P([0.0, 1.5])

        def loss():
            return _sum(T.relu(p))

        report = T.grad_check_report(loss, [p], margin=1e-6)
        assert report.excluded == 1 and report.checked == 1
        assert report.max_rel_error < 1e-9

    def test_full_model_two_word_review(self):
        from egcnn.experiments import GradCheckSizes, gradcheck_instance
        loss_fn, params = gradcheck_instance(7, GradCheckSizes(m=6, reviews=1))
        assert T.grad_check(loss_fn, params) < 1e-4

    def test_detects_wrong_gradient(self):
        p = P([0.3, -0.7])

        def loss():
            # p.p with a deliberately halved adjoint
            out = np.asarray(p.data @ p.data)
            return T._result(out, (p,), lambda g: T._accumulate(p, g * p.data), "bad")

        assert T.grad_check(loss, [p]) > 0.4


def _row(p):
    # (4,) parameter viewed as a (1, 4) matrix via broadcast_rows
    return T.broadcast_rows(p, 1)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=2, max_size=6))
def test_relu_gradient_property(values):
    p = P(values)
    with T.Tape() as tape:
        loss = _sum(T.relu(p))
    tape.backward(loss)
    assert p.grad.tolist() == [1.0 if v > 0 else 0.0 for v in values]
