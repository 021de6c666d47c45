import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import central_diff, rel_err
from rdvla import tensor as T
from rdvla.errors import ConfigError, DimensionError, ParameterError, UsageError
from rdvla.tensor import Tensor


def leaf(arr):
    return Tensor(np.array(arr, dtype=np.float64), requires_grad=True)


def check_grad(build, *arrays, tol):
    """Compare autodiff gradients of ``build(*tensors)`` to central differences."""
    params = [leaf(a) for a in arrays]
    loss = build(*params)
    T.backward(loss)
    for p in params:
        num = central_diff(lambda: float(build(*params).data), p.data)
        assert rel_err(p.grad, num) < tol


class TestMatmul:
    def test_identity(self):
        out = T.matmul(Tensor([[1, 0], [0, 1]]), Tensor([[3, 4], [5, 6]]))
        np.testing.assert_array_equal(out.data, [[3, 4], [5, 6]])

    def test_row_col(self):
        assert T.matmul(Tensor([[1, 2]]), Tensor([[3], [4]])).data.tolist() == [[11]]

    def test_shape_error_names_both(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
            T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_grad_fd(self, rng):
        w = rng.normal(size=(4, 3))
        check_grad(lambda a, b: T.tsum(T.matmul(a, b) * Tensor(w)), rng.normal(size=(4, 5)), rng.normal(size=(5, 3)), tol=1e-6)

    def test_batched_weight_grad(self, rng):
        w = rng.normal(size=(2, 4, 3))
        check_grad(lambda a, b: T.tsum(T.matmul(a, b) * Tensor(w)), rng.normal(size=(2, 4, 5)), rng.normal(size=(5, 3)), tol=1e-6)


class TestRMSNorm:
    def test_unit_input(self):
        out = T.rms_norm(Tensor([1.0, 1, 1, 1]), Tensor(np.ones(4)), eps=0.0)
        np.testing.assert_allclose(out.data, [1, 1, 1, 1])

    def test_single_spike(self):
        # RMS of [3, 0, 0, 0] is 1.5
        out = T.rms_norm(Tensor([3.0, 0, 0, 0]), Tensor(np.ones(4)), eps=0.0)
        np.testing.assert_allclose(out.data, [2, 0, 0, 0])

    def test_negative_eps(self):
        with pytest.raises(ParameterError):
            T.rms_norm(Tensor([1.0, 2.0]), Tensor(np.ones(2)), eps=-1.0)

    def test_gain_mismatch(self):
        with pytest.raises(DimensionError):
            T.rms_norm(Tensor(np.ones((2, 3))), Tensor(np.ones(4)))

    def test_grad_fd(self, rng):
        w = rng.normal(size=(2, 8))
        check_grad(lambda x, g: T.tsum(T.rms_norm(x, g, 1e-6) * Tensor(w)), rng.normal(size=(2, 8)), rng.normal(size=8), tol=1e-6)


class TestAttention:
    def test_single_key(self, rng):
        v = rng.normal(size=(1, 8))
        out = T.attention(Tensor(rng.normal(size=(5, 8))), Tensor(rng.normal(size=(1, 8))), Tensor(v), heads=2)
        np.testing.assert_allclose(out.data, np.repeat(v, 5, axis=0))

    def test_identical_keys_average(self, rng):
        k = np.repeat(rng.normal(size=(1, 8)), 2, axis=0)
        v = rng.normal(size=(2, 8))
        out = T.attention(Tensor(rng.normal(size=(3, 8))), Tensor(k), Tensor(v), heads=4)
        np.testing.assert_allclose(out.data, np.repeat(v.mean(0, keepdims=True), 3, axis=0))

    def test_heads_must_divide(self):
        x = Tensor(np.ones((2, 6)))
        with pytest.raises(ConfigError):
            T.attention(x, x, x, heads=4)

    def test_grad_fd(self, rng):
        w = rng.normal(size=(3, 8))
        check_grad(
            lambda q, k, v: T.tsum(T.attention(q, k, v, heads=2) * Tensor(w)),
            rng.normal(size=(3, 8)), rng.normal(size=(3, 8)), rng.normal(size=(3, 8)), tol=1e-5,
        )

    def test_key_mask_hides_keys(self, rng):
        q, k, v = (rng.normal(size=(2, 3, 4)) for _ in range(3))
        mask = np.array([[True, True, False], [True, True, True]])
        out = T.attention(Tensor(q), Tensor(k), Tensor(v), 2, key_mask=mask)
        ref = T.attention(Tensor(q[0]), Tensor(k[0, :2]), Tensor(v[0, :2]), 2)
        np.testing.assert_allclose(out.data[0], ref.data, atol=1e-12)


class TestDetach:
    def test_blocks_gradient(self, rng):
        x, w = leaf(rng.normal(size=3)), leaf(rng.normal(size=3))
        loss = T.tsum(T.detach(x) * w)
        T.backward(loss)
        assert x.grad is None
        np.testing.assert_array_equal(w.grad, x.data)

    def test_idempotent(self, rng):
        x = leaf(rng.normal(size=4))
        np.testing.assert_array_equal(T.detach(T.detach(x)).data, x.data)


class TestBackward:
    def test_sum(self):
        x = leaf([1.0, 2.0, 3.0])
        T.backward(T.tsum(x))
        np.testing.assert_array_equal(x.grad, [1, 1, 1])

    def test_square(self):
        x = leaf([1.0, 2.0])
        T.backward(T.tsum(x * x))
        np.testing.assert_array_equal(x.grad, [2, 4])

    def test_reuse_accumulates(self):
        x = leaf([1.5])
        T.backward(T.tsum(x * 2.0 + x * 3.0 + x))
        np.testing.assert_array_equal(x.grad, [6.0])

    def test_nonscalar_rejected(self):
        x = leaf([1.0, 2.0])
        with pytest.raises(UsageError):
            T.backward(x * 2.0)

    def test_mlp_fd(self, rng):
        x = Tensor(rng.normal(size=(5, 4)))
        y = Tensor(rng.normal(size=(5, 2)))

        def loss(w1, b1, w2, b2):
            h = T.gelu(T.matmul(x, w1) + b1)
            return T.mse(T.matmul(h, w2) + b2, y)

        check_grad(loss, rng.normal(size=(4, 6)), rng.normal(size=6), rng.normal(size=(6, 2)), rng.normal(size=2), tol=1e-5)


@pytest.mark.parametrize(
    "op",
    [
        lambda a: T.tanh(a),
        lambda a: T.exp(a * 0.3),
        lambda a: T.log(a * a + 1.0),
        lambda a: T.gelu(a),
        lambda a: T.softmax(a, axis=-1),
        lambda a: a / (a * a + 2.0),
        lambda a: a ** 3,
        lambda a: T.concat([a, a * 2.0], axis=0),
        lambda a: T.transpose(a)[1:, :2],
        lambda a: T.mean(a, axis=0, keepdims=True) - a,
        lambda a: T.broadcast_to(a[:1], (3, 4)),
    ],
)
def test_primitive_fd(op, rng):
    w = None

    def build(a):
        nonlocal w
        out = op(a)
        if w is None:
            w = Tensor(rng.normal(size=out.shape))
        return T.tsum(out * w)

    check_grad(build, rng.normal(size=(3, 4)), tol=1e-4)


def test_graph_visits_each_node_once(rng):
    x = leaf(rng.normal(size=3))
    h = x * 2.0
    loss = T.tsum(h * h + h)
    order = T._topo_order(loss)
    assert len(order) == len({id(n) for n in order})
    pos = {id(n): i for i, n in enumerate(order)}
    for n in order:
        for p in n._parents:
            if p.requires_grad:
                assert pos[id(p)] < pos[id(n)]


def test_no_grad_records_nothing(rng):
    x = leaf(rng.normal(size=3))
    with T.no_grad():
        y = T.tanh(x) * 3.0
    assert not y.requires_grad and y._parents == ()


def test_float32_mode_keeps_dtype():
    T.set_default_dtype(np.float32)
    x = Tensor([1.0, 1.0, 1.0], requires_grad=True)
    y = T.tsum(T.gelu(x * 0.5 + 1.0))
    assert x.data.dtype == np.float32 and y.data.dtype == np.float32


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_determinism(seed):
    def run():
        r = np.random.default_rng(seed)
        a, b = leaf(r.normal(size=(3, 4))), leaf(r.normal(size=(4, 4)))
        loss = T.tsum(T.attention(T.matmul(a, b), a, a, heads=2) ** 2)
        T.backward(loss)
        return loss.data.tobytes(), a.grad.tobytes(), b.grad.tobytes()

    assert run() == run()


# Random small graphs for detachment soundness: the gradient with a detach()
# must equal the gradient of the same expression where the detached value is
# re-entered as a fresh constant.
_UNARY = [T.tanh, T.gelu, lambda t: t * t, lambda t: T.softmax(t, axis=-1)]
_BINARY = [T.add, T.mul, T.sub, lambda a, b: T.matmul(a, T.transpose(b))[:, :1] + a]


@settings(max_examples=40, deadline=None)
@given(
    st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3), st.integers(0, 20), st.integers(0, 20)), min_size=2, max_size=8),
    st.integers(0, 7),
    st.integers(0, 2**31 - 1),
)
def test_detachment_soundness(program, cut, seed):
    r = np.random.default_rng(seed)
    init = [r.normal(size=(2, 3)) for _ in range(3)]
    cut = cut % len(program)

    def evaluate(mode, constant=None):
        params = [leaf(a) for a in init]
        nodes = list(params)
        for i, (kind, which, ia, ib) in enumerate(program):
            a, b = nodes[ia % len(nodes)], nodes[ib % len(nodes)]
            out = _UNARY[which](a) if kind < 2 else _BINARY[which](a, b)
            if i == cut:
                if mode == "detach":
                    out = T.detach(out)
                else:
                    out = Tensor(constant)
            nodes.append(out)
        loss = T.tsum(nodes[-1] * nodes[-1]) + T.tsum(nodes[0])
        T.backward(loss)
        return params, nodes[len(init) + cut].data.copy()

    p_det, value = evaluate("detach")
    p_const, _ = evaluate("const", value)
    for a, b in zip(p_det, p_const):
        if a.grad is None or b.grad is None:
            assert a.grad is None and b.grad is None
        else:
            np.testing.assert_array_equal(a.grad, b.grad)
