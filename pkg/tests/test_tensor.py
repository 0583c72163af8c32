"""Autodiff engine tests: ops, gradients, parameter store."""

import numpy as np
import pytest

from equiset.tensor import (
    ParamStore,
    ShapeError,
    Tensor,
    backward,
    basis_expand,
    batch_norm_train,
    circ_conv1d,
    concat,
    elem_linear,
    grad_check,
    mean_pool2,
    softmax_probs,
    softmax_xent,
)


def check(build, seed=0, tol=1e-6, **shapes):
    """Gradient-check a scalar function of named uniform parameters."""
    store = ParamStore(seed)
    for name, shape in shapes.items():
        store.uniform(name, shape, fan_in=int(np.prod(shape)))
    err = grad_check(lambda: build(store), store, eps=1e-5, samples=64, seed=seed)
    assert err < tol, err


class TestElementwise:
    def test_add_mul_values(self):
        a = Tensor([1.0, 2.0])
        b = Tensor([3.0, 4.0])
        assert np.array_equal((a + b).data, [4.0, 6.0])
        assert np.array_equal((a * b).data, [3.0, 8.0])
        assert np.array_equal((a - b).data, [-2.0, -2.0])
        assert np.array_equal((2.0 - a).data, [1.0, 0.0])

    def test_add_grad(self):
        check(lambda s: (s["a"] + s["b"]).sum(), a=(3, 4), b=(3, 4))

    def test_broadcast_grad(self):
        check(lambda s: (s["a"] * s["b"]).sum(), a=(3, 4), b=(1, 4))

    def test_scalar_broadcast_grad(self):
        check(lambda s: (s["a"] + s["b"]).sum(), a=(2, 3, 4), b=(1,))

    def test_relu_and_scale(self):
        check(lambda s: s["a"].relu().scale(3.0).sum(), a=(5, 5))

    def test_powc_exp(self):
        check(lambda s: (s["a"].powc(2.0) + s["a"].exp()).sum(), a=(4,))

    def test_reuse_accumulates(self):
        x = Tensor([2.0], requires_grad=True)
        y = x * x + x
        backward(y.sum())
        assert x.grad[0] == pytest.approx(5.0)


class TestShaping:
    def test_reshape_transpose_grads(self):
        check(
            lambda s: (s["a"].reshape(4, 6).transpose((1, 0)).powc(2.0)).sum(),
            a=(2, 2, 6),
        )

    def test_reshape_bad_size(self):
        with pytest.raises(ValueError):
            Tensor(np.zeros((2, 3))).reshape(7)

    def test_concat_grads(self):
        check(
            lambda s: concat((s["a"], s["b"]), axis=1).powc(2.0).sum(),
            a=(2, 3),
            b=(2, 5),
        )

    def test_concat_values(self):
        out = concat((Tensor(np.zeros((2, 1))), Tensor(np.ones((2, 2)))), axis=1)
        assert out.shape == (2, 3)
        assert np.array_equal(out.data[:, 0], [0.0, 0.0])


class TestReduce:
    def test_sum_mean_grads(self):
        check(lambda s: s["a"].sum(axis=(0, 2)).powc(2.0).sum(), a=(2, 3, 4))
        check(lambda s: s["a"].mean(axis=1, keepdims=True).powc(2.0).sum(), a=(3, 5))

    def test_max_grad(self):
        check(lambda s: s["a"].max(axis=1).sum(), a=(4, 7), tol=1e-4)

    def test_max_tie_routes_to_first(self):
        x = Tensor(np.array([[1.0, 3.0, 3.0]]), requires_grad=True)
        backward(x.max(axis=1).sum())
        assert np.array_equal(x.grad, [[0.0, 1.0, 0.0]])

    def test_max_requires_single_axis(self):
        with pytest.raises(ValueError):
            Tensor(np.zeros((2, 2))).reduce("max", axis=None)


class TestMatmul:
    def test_matches_numpy(self):
        rng = np.random.default_rng(0)
        a, b = rng.standard_normal((5, 3, 4)), rng.standard_normal((4, 2))
        out = Tensor(a) @ Tensor(b)
        assert np.allclose(out.data, a @ b)

    def test_batched_grad(self):
        check(lambda s: (s["a"] @ s["b"]).powc(2.0).sum(), a=(5, 3, 4), b=(4, 2))

    def test_shape_error(self):
        with pytest.raises(ShapeError):
            Tensor(np.zeros((2, 3))) @ Tensor(np.zeros((4, 2)))


class TestCircConv:
    def test_forward_matches_roll_reference(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((2, 3, 4, 9))
        k = rng.standard_normal((5, 4, 3))
        out = circ_conv1d(Tensor(x), Tensor(k)).data
        center = 3 // 2
        ref = sum(
            np.einsum("gf,bnfd->bngd", k[:, :, j], np.roll(x, center - j, axis=-1))
            for j in range(3)
        )
        assert np.allclose(out, ref)

    def test_grads(self):
        check(
            lambda s: circ_conv1d(s["x"], s["k"]).powc(2.0).sum(),
            x=(2, 3, 6),
            k=(2, 3, 3),
            tol=1e-5,
        )


class TestStructuredLinear:
    def test_elem_linear_grads(self):
        check(
            lambda s: elem_linear(s["w"], s["x"]).powc(2.0).sum(),
            w=(3, 2, 4, 4),
            x=(5, 2, 4),
        )

    def test_basis_expand_matches_manual(self):
        rng = np.random.default_rng(1)
        basis = rng.standard_normal((2, 3, 3))
        w = rng.standard_normal((4, 2, 2))
        out = basis_expand(Tensor(w), basis).data
        assert np.allclose(out, np.einsum("gfe,ets->gfts", w, basis))

    def test_basis_expand_grads(self):
        basis = np.random.default_rng(2).standard_normal((2, 3, 3))
        check(
            lambda s: elem_linear(basis_expand(s["w"], basis), s["x"]).powc(2.0).sum(),
            w=(2, 1, 2),
            x=(4, 1, 3),
        )

    def test_mean_pool2_halves_last_axis(self):
        x = Tensor(np.arange(8.0).reshape(1, 1, 1, 8))
        out = mean_pool2(x)
        assert np.array_equal(out.data.ravel(), [0.5, 2.5, 4.5, 6.5])
        check(lambda s: mean_pool2(s["x"]).powc(2.0).sum(), x=(2, 3, 1, 6))


class TestBatchNorm:
    def test_train_normalizes(self):
        rng = np.random.default_rng(0)
        x = Tensor(rng.standard_normal((8, 5, 3, 7)) * 4 + 2)
        gamma, beta = Tensor(np.ones((3, 1))), Tensor(np.zeros((3, 1)))
        out, mu, var = batch_norm_train(x, gamma, beta, axes=(0, 1, 3))
        assert np.allclose(out.data.mean(axis=(0, 1, 3)), 0, atol=1e-10)
        assert np.allclose(out.data.std(axis=(0, 1, 3)), 1, atol=1e-3)
        assert mu.shape == (1, 1, 3, 1) and var.shape == (1, 1, 3, 1)

    def test_grads(self):
        check(
            lambda s: batch_norm_train(
                s["x"], s["g"], s["b"], axes=(0, 1, 3)
            )[0]
            .powc(2.0)
            .sum(),
            x=(4, 3, 2, 5),
            g=(2, 1),
            b=(2, 1),
            tol=1e-4,
        )


class TestSoftmax:
    def test_probs_sum_to_one(self):
        p = softmax_probs(np.random.default_rng(0).standard_normal((6, 4)) * 30)
        assert np.allclose(p.sum(axis=1), 1.0)

    def test_xent_grad_is_p_minus_onehot(self):
        rng = np.random.default_rng(1)
        logits = Tensor(rng.standard_normal((5, 3)), requires_grad=True)
        labels = np.array([0, 2, 1, 1, 0])
        backward(softmax_xent(logits, labels))
        p = softmax_probs(logits.data)
        onehot = np.eye(3)[labels]
        assert np.allclose(logits.grad, (p - onehot) / 5)

    def test_xent_grad_check(self):
        labels = np.array([0, 1, 2, 0])
        check(lambda s: softmax_xent(s["z"], labels), z=(4, 3))


class TestBackward:
    def test_requires_scalar_root(self):
        with pytest.raises(ShapeError):
            backward(Tensor(np.zeros(3), requires_grad=True) * 2.0)

    def test_product_rule(self):
        a = Tensor([3.0], requires_grad=True)
        b = Tensor([2.0], requires_grad=True)
        backward((a * b).sum())
        assert a.grad[0] == pytest.approx(2.0)
        assert b.grad[0] == pytest.approx(3.0)


class TestParamStore:
    def test_uniform_bounds(self):
        store = ParamStore(0)
        t = store.uniform("w", (100,), fan_in=4)
        assert np.all(np.abs(t.data) <= 0.5)

    def test_duplicate_name_rejected(self):
        store = ParamStore(0)
        store.zeros("w", (2,))
        with pytest.raises(ValueError):
            store.zeros("w", (2,))

    def test_save_load_roundtrip(self, tmp_path):
        store = ParamStore(7)
        store.uniform("layer.w", (3, 4), fan_in=4)
        store.ones("layer.g", (4, 1))
        path = tmp_path / "params.bin"
        store.save(path)
        loaded = ParamStore.load(path)
        assert set(dict(loaded.items())) == {"layer.w", "layer.g"}
        assert np.array_equal(loaded["layer.w"].data, store["layer.w"].data)

    def test_load_rejects_garbage(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"not a param store")
        with pytest.raises(ValueError):
            ParamStore.load(path)

    def test_state_copy_and_restore(self):
        store = ParamStore(0)
        t = store.uniform("w", (3,), fan_in=3)
        snap = store.state_copy()
        t.data += 1.0
        store.load_state(snap)
        assert np.array_equal(t.data, snap["w"])

    def test_grad_check_rejects_bad_eps(self):
        store = ParamStore(0)
        store.uniform("w", (2,), fan_in=2)
        with pytest.raises(ValueError):
            grad_check(lambda: store["w"].sum(), store, eps=0.0)
