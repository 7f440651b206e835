import numpy as np
import pytest

from hrcast import kernel as K
from hrcast.kernel import ParamStore, Tensor


class TestDenseOps:
    def test_identity_matmul(self):
        v = Tensor([1.0, -2.0, 3.0])
        out = K.matmul(Tensor(np.eye(3)), v)
        np.testing.assert_array_equal(out.data, v.data)

    def test_matmul_hand_value(self):
        # [[1,2],[3,4]] @ [1,1] = [3,7]
        out = K.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([1.0, 1.0]))
        np.testing.assert_array_equal(out.data, [3.0, 7.0])

    def test_hadamard_with_zeros(self):
        a = Tensor(np.arange(6.0).reshape(2, 3))
        out = K.hadamard(a, Tensor(np.zeros((2, 3))))
        np.testing.assert_array_equal(out.data, np.zeros((2, 3)))

    def test_affine(self):
        w = Tensor([[2.0, 0.0], [0.0, 3.0]])
        out = K.affine(w, Tensor([1.0, 1.0]), Tensor([1.0, -1.0]))
        np.testing.assert_array_equal(out.data, [3.0, 2.0])

    def test_shape_mismatch_raises(self):
        with pytest.raises(ValueError):
            K.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_matmul_associativity(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            a = rng.uniform(-1, 1, (4, 5))
            b = rng.uniform(-1, 1, (5, 6))
            c = rng.uniform(-1, 1, (6, 3))
            left = (a @ b) @ c
            right = a @ (b @ c)
            rel = np.abs(left - right).max() / max(1.0, np.abs(left).max())
            assert rel < 1e-9


class TestActivations:
    def test_sigmoid_zero(self):
        assert K.sigmoid(Tensor(0.0)).item() == 0.5

    def test_tanh_zero(self):
        assert K.tanh(Tensor(0.0)).item() == 0.0

    def test_relu(self):
        assert K.relu(Tensor(-3.2)).item() == 0.0
        assert K.relu(Tensor(3.2)).item() == 3.2

    def test_ranges(self):
        x = Tensor(np.linspace(-50, 50, 201))
        s = K.sigmoid(x).data
        t = K.tanh(x).data
        assert np.all(s >= 0) and np.all(s <= 1)
        assert np.all(t >= -1) and np.all(t <= 1)

    def test_sigmoid_saturates_without_overflow(self):
        out = K.sigmoid(Tensor([-1000.0, 1000.0]))
        np.testing.assert_array_equal(out.data, [0.0, 1.0])


class TestBackward:
    def test_linear_gradient_is_input(self):
        x = np.array([1.0, -2.0, 0.5])
        w = Tensor(np.zeros(3), requires_grad=True)
        loss = K.matmul(w, Tensor(x))
        K.backward(loss)
        np.testing.assert_array_equal(w.grad, x)

    def test_sigmoid_square_chain(self):
        # d/dw sigmoid(w)^2 at w=0 is 2 * 0.5 * 0.25 = 0.25
        w = Tensor(0.0, requires_grad=True)
        loss = K.power(K.sigmoid(w), 2.0)
        K.backward(loss)
        assert w.grad == pytest.approx(0.25, abs=1e-15)

    def test_non_scalar_loss_rejected(self):
        w = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ValueError):
            K.backward(K.hadamard(w, w))

    def test_untaped_loss_rejected(self):
        with pytest.raises(ValueError):
            K.backward(Tensor(3.0))

    def test_grad_accumulates_across_calls(self):
        w = Tensor(2.0, requires_grad=True)
        K.backward(K.power(w, 2.0))
        K.backward(K.power(w, 2.0))
        assert w.grad == pytest.approx(8.0)

    def test_backward_linearity(self):
        # grad of (l1 + l2) equals grad of l1 plus grad of l2, exactly
        rng = np.random.default_rng(3)
        w = Tensor(rng.uniform(-1, 1, 5), requires_grad=True)
        a = Tensor(rng.uniform(-1, 1, 5))
        b = Tensor(rng.uniform(-1, 1, 5))

        def l1():
            return K.sum_(K.hadamard(w, a))

        def l2():
            return K.sum_(K.power(K.hadamard(w, b), 2.0))

        w.zero_grad()
        K.backward(K.add(l1(), l2()))
        combined = w.grad.copy()

        w.zero_grad()
        K.backward(l1())
        g1 = w.grad.copy()
        w.zero_grad()
        K.backward(l2())
        g2 = w.grad.copy()

        assert np.abs(combined - (g1 + g2)).max() < 1e-12

    def test_shared_subexpression_fan_out(self):
        # y = w*w used twice: loss = y + y -> dloss/dw = 4w
        w = Tensor(3.0, requires_grad=True)
        y = K.hadamard(w, w)
        K.backward(K.add(y, y))
        assert w.grad == pytest.approx(12.0)


class TestShapeOps:
    def test_concat_and_split_gradient(self):
        a = Tensor(np.ones((2, 2)), requires_grad=True)
        b = Tensor(np.ones((2, 3)), requires_grad=True)
        out = K.concat([a, b], axis=1)
        assert out.shape == (2, 5)
        K.backward(K.sum_(K.hadamard(out, out)))
        np.testing.assert_array_equal(a.grad, 2 * np.ones((2, 2)))
        np.testing.assert_array_equal(b.grad, 2 * np.ones((2, 3)))

    def test_take_gradient_scatters(self):
        a = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        K.backward(K.sum_(a[:, 1]))
        expected = np.zeros((2, 3))
        expected[:, 1] = 1.0
        np.testing.assert_array_equal(a.grad, expected)

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(11)
        x = Tensor(rng.normal(size=(4, 7)))
        s = K.softmax(x, axis=1)
        np.testing.assert_allclose(s.data.sum(axis=1), 1.0, atol=1e-12)

    def test_mean_matches_numpy(self):
        rng = np.random.default_rng(12)
        x = rng.normal(size=(3, 4))
        np.testing.assert_allclose(K.mean(Tensor(x), axis=0).data, x.mean(axis=0))
        assert K.mean(Tensor(x)).item() == pytest.approx(x.mean())


class TestParamStore:
    def test_duplicate_name_rejected(self):
        store = ParamStore()
        store.add("w", Tensor(np.zeros(3)))
        with pytest.raises(ValueError):
            store.add("w", Tensor(np.zeros(3)))

    def test_count_includes_non_trainable(self):
        store = ParamStore()
        store.add("w", Tensor(np.zeros((2, 3))))
        store.add("running", Tensor(np.zeros(4)), trainable=False)
        assert store.count() == 10
        assert sum(t.size for t in store.tensors(trainable_only=True)) == 6

    def test_zero_grads(self):
        store = ParamStore()
        w = store.add("w", Tensor(2.0))
        K.backward(K.power(w, 2.0))
        assert w.grad is not None
        store.zero_grads()
        assert w.grad is None


class TestFiniteDiff:
    def test_quadratic_loss_near_exact(self):
        rng = np.random.default_rng(0)
        store = ParamStore()
        w = store.add("w", Tensor(rng.uniform(-1, 1, 6)))
        target = Tensor(rng.uniform(-1, 1, 6))

        def f():
            d = K.sub(w, target)
            return K.sum_(K.hadamard(d, d))

        assert K.finite_diff_check(f, store) < 1e-8

    def test_zero_function(self):
        store = ParamStore()
        store.add("w", Tensor(np.ones(3)))

        def f():
            return Tensor(0.0)

        assert K.finite_diff_check(f, store) == 0.0

    def test_composite_graph(self):
        rng = np.random.default_rng(5)
        store = ParamStore()
        w = store.add("w", Tensor(rng.uniform(-0.5, 0.5, (3, 4))))
        b = store.add("b", Tensor(np.zeros(4)))
        x = Tensor(rng.uniform(-1, 1, (5, 3)))

        def f():
            h = K.tanh(K.add(K.matmul(x, w), b))
            return K.mean(K.power(h, 2.0))

        assert K.finite_diff_check(f, store) < 1e-9

    def test_bad_eps_rejected(self):
        store = ParamStore()
        store.add("w", Tensor(1.0))
        with pytest.raises(ValueError):
            K.finite_diff_check(lambda: Tensor(0.0), store, eps=0.0)
