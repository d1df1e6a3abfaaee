"""Autodiff engine: every primitive against a finite-difference or
triple-loop oracle, plus graph-traversal invariants."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import gvse.tensor as T
from gvse.errors import ConfigError, ContractError, NumericFault, OracleError, ShapeError
from gvse.tensor import Param, Tensor, backward, check_gradients


def _fd_check(build, shapes, h=1e-6, tol=1e-6, seed=0):
    """Finite-difference check of a scalar-valued closure over Params."""
    rng = np.random.default_rng(seed)
    params = [Param(rng.standard_normal(s), name=f"p{i}") for i, s in enumerate(shapes)]
    loss = build(*params)
    backward(loss)
    for p in params:
        flat = p.data.reshape(-1)
        grad = p.grad.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            up = build(*params).data.item()
            flat[j] = orig - h
            down = build(*params).data.item()
            flat[j] = orig
            numeric = (up - down) / (2 * h)
            assert abs(grad[j] - numeric) <= tol * max(1.0, abs(numeric)), (
                f"{p.name}[{j}]: analytic {grad[j]} vs numeric {numeric}")


class TestConstruction:
    def test_rejects_nan(self):
        with pytest.raises(NumericFault):
            Tensor(np.array([1.0, np.nan]))

    def test_rejects_inf(self):
        with pytest.raises(NumericFault):
            Tensor(np.array([np.inf]))

    def test_casts_to_f64(self):
        t = Tensor(np.array([1, 2], dtype=np.int32))
        assert t.data.dtype == np.float64


class TestPrimitiveGradients:
    def test_add_broadcast(self):
        _fd_check(lambda a, b: T.tsum(T.add(a, b)), [(3, 4), (1, 4)])

    def test_sub(self):
        _fd_check(lambda a, b: T.tsum(T.mul(T.sub(a, b), T.sub(a, b))), [(3, 4), (3, 4)])

    def test_mul_broadcast(self):
        _fd_check(lambda a, b: T.tsum(T.mul(a, b)), [(2, 5), (2, 1)])

    def test_scale(self):
        _fd_check(lambda a: T.scale(T.tsum(a), -2.5), [(4,)])

    def test_matmul(self):
        _fd_check(lambda a, b: T.tsum(T.matmul(a, b)), [(3, 4), (4, 2)])

    def test_transpose(self):
        _fd_check(lambda a, b: T.tsum(T.matmul(T.transpose(a), b)), [(4, 3), (4, 2)])

    def test_reshape(self):
        _fd_check(lambda a: T.tsum(T.mul(T.reshape(a, (6,)), T.reshape(a, (6,)))), [(2, 3)])

    def test_concat_axis0(self):
        _fd_check(lambda a, b: T.tsum(T.mul(T.concat([a, b], 0), T.concat([a, b], 0))),
                  [(2, 3), (1, 3)])

    def test_concat_axis1(self):
        _fd_check(lambda a, b: T.tsum(T.mul(T.concat([a, b], 1), T.concat([a, b], 1))),
                  [(2, 2), (2, 3)])

    def test_stack(self):
        _fd_check(lambda a, b: T.tsum(T.mul(T.stack([a, b]), T.stack([a, b]))), [(3,), (3,)])

    def test_gather_rows_repeated_index(self):
        # the same row gathered twice must receive both gradient contributions
        _fd_check(lambda a: T.tsum(T.mul(T.gather_rows(a, [0, 0, 2]),
                                         T.gather_rows(a, [0, 0, 2]))), [(3, 2)])

    def test_relu(self):
        _fd_check(lambda a: T.tsum(T.relu(a)), [(5, 5)], seed=3)

    def test_sigmoid(self):
        _fd_check(lambda a: T.tsum(T.sigmoid(a)), [(4, 4)])

    def test_tmean(self):
        _fd_check(lambda a: T.tmean(T.mul(a, a)), [(3, 7)])

    def test_logsumexp(self):
        _fd_check(lambda a: T.tsum(T.logsumexp(a)), [(3, 5)])

    def test_conv2d(self):
        _fd_check(lambda x, k: T.tsum(T.mul(T.conv2d(x, k, stride=1, pad=1),
                                            T.conv2d(x, k, stride=1, pad=1))),
                  [(2, 5, 5), (3, 2, 3, 3)], h=1e-5, tol=1e-5)

    def test_conv2d_strided(self):
        _fd_check(lambda x, k: T.tsum(T.conv2d(x, k, stride=2, pad=0)),
                  [(1, 6, 6), (2, 1, 2, 2)], h=1e-5, tol=1e-5)

    def test_global_avg_pool(self):
        _fd_check(lambda x: T.tsum(T.mul(T.global_avg_pool(x), T.global_avg_pool(x))),
                  [(3, 4, 4)])


class TestForwardOracles:
    def test_matmul_triple_loop(self, rng):
        a, b = rng.standard_normal((4, 6)), rng.standard_normal((6, 3))
        out = T.matmul(Tensor(a), Tensor(b)).data
        ref = np.zeros((4, 3))
        for i in range(4):
            for j in range(3):
                for k in range(6):
                    ref[i, j] += a[i, k] * b[k, j]
        assert np.allclose(out, ref, atol=1e-12)

    def test_conv2d_triple_loop(self, rng):
        x = rng.standard_normal((2, 6, 6))
        w = rng.standard_normal((3, 2, 3, 3))
        for stride, pad in [(1, 0), (1, 1), (2, 1)]:
            hi = 6 + 2 * pad
            if (hi - 3) % stride != 0:
                continue
            out = T.conv2d(Tensor(x), Tensor(w), stride=stride, pad=pad).data
            xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
            ho = (hi - 3) // stride + 1
            ref = np.zeros((3, ho, ho))
            for o in range(3):
                for i in range(ho):
                    for j in range(ho):
                        for c in range(2):
                            for u in range(3):
                                for v in range(3):
                                    ref[o, i, j] += xp[c, i * stride + u, j * stride + v] * w[o, c, u, v]
            assert np.allclose(out, ref, atol=1e-12), (stride, pad)

    def test_conv2d_rejects_nonintegral_output(self, rng):
        # 3x3 kernel, stride 2, pad 1 on an even input has no exact output size
        with pytest.raises(ConfigError):
            T.conv2d(Tensor(rng.standard_normal((1, 8, 8))),
                     Tensor(rng.standard_normal((1, 1, 3, 3))), stride=2, pad=1)

    def test_logsumexp_matches_scipy_formula(self, rng):
        a = rng.standard_normal((5, 7)) * 50  # large values: needs the max-shift trick
        out = T.logsumexp(Tensor(a)).data
        ref = np.log(np.exp(a - a.max(1, keepdims=True)).sum(1)) + a.max(1)
        assert np.allclose(np.ravel(out), ref, atol=1e-12)


class TestBackwardMechanics:
    def test_backward_requires_scalar(self):
        with pytest.raises(ContractError):
            backward(Tensor(np.zeros((2, 2))))

    def test_param_grads_accumulate_across_backwards(self):
        p = Param(np.array([[2.0]]))
        loss = T.tsum(T.mul(p, p))
        backward(loss)
        g1 = p.grad.copy()
        backward(T.tsum(T.mul(p, p)))
        assert np.allclose(p.grad, 2 * g1)

    def test_diamond_graph(self):
        # p used twice through different paths: d/dp (p*p + 3p) = 2p + 3
        p = Param(np.array([1.5]))
        loss = T.tsum(T.add(T.mul(p, p), T.scale(p, 3.0)))
        backward(loss)
        assert np.allclose(p.grad, [2 * 1.5 + 3])

    def test_deep_chain_no_recursion_limit(self):
        p = Param(np.array([1.0]))
        t = p
        for _ in range(5000):
            t = T.add(t, Tensor(np.array([0.0])))
        backward(T.tsum(t))
        assert np.allclose(p.grad, [1.0])

    def test_matmul_shape_error_names_shapes(self):
        with pytest.raises(ShapeError, match="3"):
            T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))


class TestCheckGradients:
    def test_passes_on_clean_model(self):
        rng = np.random.default_rng(0)
        w = Param(rng.standard_normal((3, 2)), name="w")
        x = rng.standard_normal((4, 3))

        def closure():
            h = T.matmul(Tensor(x), w)
            return T.tsum(T.mul(h, h))

        res = check_gradients(closure, [w], h=1e-6, tol=1e-6)
        assert res["passed"]
        assert res["max_rel_err"] < 1e-6

    def test_rejects_nondeterministic_closure(self):
        w = Param(np.ones((1, 1)), name="w")
        state = {"n": 0}

        def closure():
            state["n"] += 1
            return T.tsum(T.scale(w, float(state["n"])))

        with pytest.raises(OracleError):
            check_gradients(closure, [w], h=1e-6, tol=1e-6)

    def test_detects_wrong_gradient(self):
        rng = np.random.default_rng(1)
        w = Param(rng.standard_normal((2, 2)), name="w")

        def bad():
            out = T.tsum(T.mul(w, w))
            out._backward_fn, parents = None, out._parents
            broken = Tensor(out.data)
            broken._parents = parents

            def wrong(grad, node):
                w._accumulate(np.ones_like(w.data) * 100.0)
            broken._backward_fn = wrong
            return broken

        res = check_gradients(bad, [w], h=1e-6, tol=1e-6)
        assert not res["passed"]


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 2 ** 31 - 1))
def test_matmul_matches_numpy(n, m, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((n, m)), rng.standard_normal((m, n))
    assert np.allclose(T.matmul(Tensor(a), Tensor(b)).data, a @ b, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_sum_grad_is_ones(seed):
    rng = np.random.default_rng(seed)
    p = Param(rng.standard_normal((3, 3)))
    backward(T.tsum(p))
    assert np.array_equal(p.grad, np.ones((3, 3)))
