import math
import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coips.engine import (
    ADAM,
    SGD_NESTEROV,
    CosineAnnealing,
    LayerParams,
    OptimizerState,
    Poly,
    Tensor,
    adam_step,
    concat,
    conv2d,
    instance_norm,
    leaky_relu,
    linear,
    lr_schedule,
    maxpool2d,
    no_grad,
    relu,
    sgd_nesterov_step,
    softmax,
    upsample2x,
)
from coips.engine import checkpoint
from coips.engine.gradcheck import check_gradients
from coips.engine.tensor import _topological_order
from coips.errors import (
    CheckpointError,
    ContractError,
    DimensionError,
    GeometryError,
    InternalError,
    NumericError,
    RangeError,
)


def t64(arr, grad=True):
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=grad)


def lp(w, b=None, name="l"):
    return LayerParams(name, t64(w), None if b is None else t64(b))


# ---------------------------------------------------------------------- conv2d


class TestConv2d:
    def test_identity_kernel(self):
        x = np.arange(9.0).reshape(1, 3, 3)
        out = conv2d(Tensor(x), lp([[[[1.0]]]]))
        np.testing.assert_array_equal(out.data, x)

    def test_all_ones_kernel(self):
        out = conv2d(Tensor([[[1.0, 2.0], [3.0, 4.0]]]), lp(np.ones((1, 1, 2, 2))))
        np.testing.assert_array_equal(out.data, [[[10.0]]])

    def test_zero_kernel(self):
        rng = np.random.default_rng(0)
        x = Tensor(rng.normal(size=(2, 5, 5)))
        out = conv2d(x, lp(np.zeros((3, 2, 3, 3)), np.zeros(3)), padding=1)
        assert out.shape == (3, 5, 5)
        assert not out.data.any()

    def test_matches_direct_loop(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(2, 3, 7, 7))
        w = rng.normal(size=(4, 3, 3, 3))
        b = rng.normal(size=4)
        out = conv2d(Tensor(x), lp(w, b), stride=2, padding=1).data
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        ref = np.zeros((2, 4, 4, 4))
        for n in range(2):
            for o in range(4):
                for i in range(4):
                    for j in range(4):
                        ref[n, o, i, j] = (xp[n, :, 2 * i : 2 * i + 3, 2 * j : 2 * j + 3] * w[o]).sum() + b[o]
        np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-12)

    def test_channel_mismatch(self):
        with pytest.raises(DimensionError):
            conv2d(Tensor(np.zeros((2, 4, 4))), lp(np.zeros((1, 3, 3, 3))))

    def test_non_integer_output(self):
        with pytest.raises(GeometryError):
            conv2d(Tensor(np.zeros((1, 4, 4))), lp(np.zeros((1, 1, 3, 3))), stride=2)

    def test_non_square_kernel(self):
        with pytest.raises(GeometryError):
            conv2d(Tensor(np.zeros((1, 4, 4))), lp(np.zeros((1, 1, 3, 2))))

    def test_linearity(self):
        rng = np.random.default_rng(2)
        x, y = rng.normal(size=(2, 2, 6, 6))
        p = lp(rng.normal(size=(3, 2, 3, 3)))
        a, b = 1.7, -0.4
        lhs = conv2d(Tensor(a * x + b * y), p, padding=1).data
        rhs = a * conv2d(Tensor(x), p, padding=1).data + b * conv2d(Tensor(y), p, padding=1).data
        np.testing.assert_allclose(lhs, rhs, atol=1e-9)
        w1, w2 = rng.normal(size=(2, 3, 2, 3, 3))
        lhs = conv2d(Tensor(x), lp(a * w1 + b * w2), padding=1).data
        rhs = a * conv2d(Tensor(x), lp(w1), padding=1).data + b * conv2d(Tensor(x), lp(w2), padding=1).data
        np.testing.assert_allclose(lhs, rhs, atol=1e-9)


# ---------------------------------------------------------------------- pooling / upsampling


class TestMaxPool:
    def test_max_of_four(self):
        out = maxpool2d(Tensor([[[1.0, 2.0], [3.0, 4.0]]]), 2, 2)
        np.testing.assert_array_equal(out.data, [[[4.0]]])

    def test_constant(self):
        out = maxpool2d(Tensor(np.full((2, 4, 6), 3.5)), 2, 2)
        assert out.shape == (2, 2, 3)
        assert (out.data == 3.5).all()

    def test_routing(self):
        x = t64([[[5.0, 1.0], [1.0, 1.0]]])
        out = maxpool2d(x, 2, 2)
        assert out.data.item() == 5.0
        out.sum().backward()
        np.testing.assert_array_equal(x.grad, [[[1.0, 0.0], [0.0, 0.0]]])

    @pytest.mark.parametrize("window,stride", [(2, 2), (3, 1)])
    def test_tie_goes_to_first(self, window, stride):
        x = t64(np.ones((1, 3, 3)) if window == 3 else np.ones((1, 2, 2)))
        maxpool2d(x, window, stride).sum().backward()
        expected = np.zeros_like(x.data)
        expected[0, 0, 0] = 1.0
        np.testing.assert_array_equal(x.grad, expected)

    def test_indivisible(self):
        with pytest.raises(GeometryError):
            maxpool2d(Tensor(np.zeros((1, 5, 4))), 2, 2)

    def test_overlapping_windows_match_loop(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(2, 7, 7))
        out = maxpool2d(Tensor(x), 3, 2).data
        ref = np.array([[[x[c, 2 * i : 2 * i + 3, 2 * j : 2 * j + 3].max() for j in range(3)] for i in range(3)] for c in range(2)])
        np.testing.assert_array_equal(out, ref)

    @given(st.floats(-50, 50), st.integers(0, 2**31 - 1))
    @settings(max_examples=30, deadline=None)
    def test_commutes_with_shift(self, c, seed):
        x = np.random.default_rng(seed).normal(size=(2, 4, 4))
        np.testing.assert_allclose(maxpool2d(Tensor(x + c), 2).data, maxpool2d(Tensor(x), 2).data + c, atol=1e-12)


class TestUpsample:
    def test_single_pixel(self):
        np.testing.assert_array_equal(upsample2x(Tensor([[[1.0]]])).data, np.ones((1, 2, 2)))

    def test_block_replication(self):
        out = upsample2x(Tensor([[[1.0, 2.0], [3.0, 4.0]]])).data[0]
        ref = np.array([[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]], dtype=float)
        np.testing.assert_array_equal(out, ref)

    def test_mean_pool_recovers_input(self):
        x = np.random.default_rng(4).normal(size=(3, 5, 4))
        up = upsample2x(Tensor(x)).data
        down = up.reshape(3, 5, 2, 4, 2).mean(axis=(2, 4))
        np.testing.assert_array_equal(down, x)


# ---------------------------------------------------------------------- activations / softmax


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(softmax(Tensor([[0.0, 0.0, 0.0]])).data, [[1 / 3] * 3], atol=1e-15)

    def test_stability(self):
        out = softmax(Tensor([[1000.0, 0.0, 0.0]])).data
        np.testing.assert_allclose(out, [[1.0, 0.0, 0.0]], atol=1e-12)

    def test_hand_value(self):
        out = softmax(Tensor([[math.log(2), 0.0, 0.0]])).data
        np.testing.assert_allclose(out, [[0.5, 0.25, 0.25]], atol=1e-15)

    def test_nan_rejected(self):
        with pytest.raises(NumericError):
            softmax(Tensor(np.array([[np.nan, 0.0]])))

    def test_needs_two_classes(self):
        with pytest.raises(DimensionError):
            softmax(Tensor([[1.0]]))

    @given(st.integers(0, 2**31 - 1), st.floats(0.01, 300))
    @settings(max_examples=50, deadline=None)
    def test_rows_sum_to_one(self, seed, scale):
        x = np.random.default_rng(seed).normal(size=(5, 4)) * scale
        s = softmax(Tensor(x)).data
        assert np.all(s >= 0) and np.all(s <= 1)
        np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-9)


def test_relu_and_leaky():
    np.testing.assert_array_equal(relu(Tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])
    np.testing.assert_allclose(leaky_relu(Tensor([-2.0]), 0.01).data, [-0.02])
    x = t64([3.0, -3.0, 0.0])
    relu(x).sum().backward()
    np.testing.assert_array_equal(x.grad, [1.0, 0.0, 0.0])


# ---------------------------------------------------------------------- backward


class TestBackward:
    def test_linear_sum(self):
        x = np.array([1.0, -2.0, 0.5])
        w = t64([0.3, 0.1, 0.7])
        (w * Tensor(x)).sum().backward()
        np.testing.assert_array_equal(w.grad, x)

    def test_square(self):
        w = t64(5.0)
        ((w - 3.0) ** 2).backward()
        assert w.grad == pytest.approx(4.0)

    def test_accumulates(self):
        w = t64(2.0)
        loss = w * w
        loss.backward()
        loss.backward()
        assert w.grad == pytest.approx(8.0)

    def test_non_scalar(self):
        with pytest.raises(ContractError):
            t64([1.0, 2.0]).backward()

    def test_diamond_graph(self):
        x = t64(3.0)
        y = x * x
        z = y + y * x
        z.backward()
        assert x.grad == pytest.approx(2 * 3 + 3 * 9)

    def test_cycle_detected(self):
        a = t64(1.0)
        b = a * 2.0
        c = b * 3.0
        b._parents = (c,)
        with pytest.raises(InternalError):
            _topological_order(c)

    def test_no_grad(self):
        w = t64([1.0, 2.0])
        with no_grad():
            out = (w * w).sum()
        assert not out.requires_grad and out._backward is None


# ---------------------------------------------------------------------- gradient checks


def _random_case(rng, i):
    """One randomly-shaped instance for each differentiable op."""
    n = int(rng.integers(1, 3))
    c = int(rng.integers(1, 4))
    h = 2 * int(rng.integers(2, 4))
    w = 2 * int(rng.integers(2, 4))
    x = t64(rng.normal(size=(n, c, h, w)))
    return n, c, h, w, x


OPS = ["conv2d", "conv2d_stride", "maxpool2d", "upsample2x", "softmax", "relu", "leaky_relu",
       "instance_norm", "linear", "concat"]


def _build(op, rng, i):
    n, c, h, w, x = _random_case(rng, i)
    if op in ("conv2d", "conv2d_stride"):
        co = int(rng.integers(1, 4))
        p = lp(rng.normal(size=(co, c, 3, 3)), rng.normal(size=co))
        stride = 2 if op == "conv2d_stride" else 1
        hh = h + 1 if stride == 2 else h
        x = t64(rng.normal(size=(n, c, hh, hh)))
        return (lambda: conv2d(x, p, stride=stride, padding=1)), [x, p.weight, p.bias]
    if op == "maxpool2d":
        # distinct values keep the argmax away from ties under the FD step
        vals = rng.permutation(n * c * h * w).reshape(n, c, h, w) * 0.1
        x = t64(vals)
        return (lambda: maxpool2d(x, 2, 2)), [x]
    if op == "upsample2x":
        mult = Tensor(rng.normal(size=(n, c, 2 * h, 2 * w)))
        return (lambda: upsample2x(x) * mult), [x]
    if op == "softmax":
        z = t64(rng.normal(size=(n + 1, c + 1)))
        weights = Tensor(rng.normal(size=(n + 1, c + 1)))
        return (lambda: softmax(z) * weights), [z]
    if op == "relu":
        z = t64(rng.normal(size=(n, c, h)) + 0.05)
        z.data[np.abs(z.data) < 1e-3] = 0.5
        return (lambda: relu(z) * 1.3), [z]
    if op == "leaky_relu":
        z = t64(rng.normal(size=(n, c, h)))
        z.data[np.abs(z.data) < 1e-3] = 0.5
        return (lambda: leaky_relu(z, 0.1) * 0.7), [z]
    if op == "instance_norm":
        p = lp(rng.normal(size=c), rng.normal(size=c))
        mult = Tensor(rng.normal(size=(n, c, h, w)))
        return (lambda: instance_norm(x, p) * mult), [x, p.weight, p.bias]
    if op == "linear":
        z = t64(rng.normal(size=(n, h)))
        p = lp(rng.normal(size=(c, h)), rng.normal(size=c))
        return (lambda: linear(z, p) * 1.1), [z, p.weight, p.bias]
    if op == "concat":
        y = t64(rng.normal(size=(n, c + 1, h, w)))
        mult = Tensor(rng.normal(size=(n, 2 * c + 1, h, w)))
        return (lambda: concat([x, y], 1) * mult), [x, y]
    raise AssertionError(op)


@pytest.mark.parametrize("op", OPS)
def test_gradients_match_finite_differences(op):
    rng = np.random.default_rng(zlib.crc32(op.encode()))
    worst = 0.0
    for i in range(20):
        fn, inputs = _build(op, rng, i)
        worst = max(worst, check_gradients(fn, inputs))
    assert worst < 1e-4, f"{op}: max relative error {worst:.2e}"


# ---------------------------------------------------------------------- optimizers


def _nesterov_scalar(p, v, g, mu, lr, steps):
    """Independent scalar iteration of v <- mu v - lr g ; p <- p + mu v - lr g."""
    trace = []
    for _ in range(steps):
        v = mu * v - lr * g
        p = p + mu * v - lr * g
        trace.append(p)
    return trace


def _adam_scalar(p, g, lr, steps, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    trace = []
    for t in range(1, steps + 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p = p - lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
        trace.append(p)
    return trace


class TestOptimizers:
    def test_plain_sgd_reduction(self):
        p = [np.array([1.0])]
        sgd_nesterov_step(p, [np.array([2.0])], OptimizerState(SGD_NESTEROV, lr=0.1, momentum=0.0))
        assert p[0][0] == pytest.approx(0.8)

    def test_sgd_fixed_point(self):
        p = [np.array([1.5, -2.0])]
        state = OptimizerState(SGD_NESTEROV, lr=0.1)
        sgd_nesterov_step(p, [np.zeros(2)], state)
        np.testing.assert_array_equal(p[0], [1.5, -2.0])
        assert state.step_count == 1

    def test_nesterov_two_steps(self):
        ref = _nesterov_scalar(0.0, 0.0, 1.0, 0.99, 0.01, 2)
        assert ref[0] == pytest.approx(-0.0199, abs=1e-15)
        assert ref[1] == pytest.approx(-0.049601, abs=1e-15)
        p = [np.array([0.0])]
        state = OptimizerState(SGD_NESTEROV, lr=0.01, momentum=0.99)
        sgd_nesterov_step(p, [np.array([1.0])], state)
        assert p[0][0] == pytest.approx(ref[0], abs=1e-15)
        sgd_nesterov_step(p, [np.array([1.0])], state)
        assert p[0][0] == pytest.approx(ref[1], abs=1e-15)

    def test_adam_first_step_is_lr(self):
        p = [np.array([0.0])]
        adam_step(p, [np.array([1.0])], OptimizerState(ADAM, lr=0.001))
        assert p[0][0] == pytest.approx(-0.001, rel=1e-6)

    def test_adam_zero_grad(self):
        p = [np.array([0.25])]
        adam_step(p, [np.array([0.0])], OptimizerState(ADAM, lr=0.001))
        assert p[0][0] == 0.25

    def test_adam_three_steps(self):
        ref = _adam_scalar(1.0, 2.0, 0.001, 3)
        p = [np.array([1.0])]
        state = OptimizerState(ADAM, lr=0.001)
        for expected in ref:
            adam_step(p, [np.array([2.0])], state)
            assert abs(p[0][0] - expected) < 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            adam_step([np.zeros(2)], [np.zeros(3)], OptimizerState(ADAM, lr=0.1))

    @pytest.mark.parametrize("kind", [SGD_NESTEROV, ADAM])
    def test_zero_lr_is_identity(self, kind):
        rng = np.random.default_rng(5)
        p = [rng.normal(size=(3, 2)), rng.normal(size=4)]
        before = [a.copy() for a in p]
        state = OptimizerState(kind, lr=0.0)
        step = adam_step if kind == ADAM else sgd_nesterov_step
        for _ in range(3):
            step(p, [rng.normal(size=a.shape) for a in p], state)
        for a, b in zip(p, before):
            np.testing.assert_array_equal(a, b)


class TestSchedules:
    def test_cosine_endpoints(self):
        k = CosineAnnealing(t_max=5)
        assert lr_schedule(k, 0.001, 0) == 0.001
        assert lr_schedule(k, 0.001, 5) == pytest.approx(0.0, abs=1e-18)

    def test_poly(self):
        k = Poly(total=100, exponent=0.9)
        assert lr_schedule(k, 0.01, 50) == pytest.approx(0.01 * 0.5**0.9)
        assert lr_schedule(k, 0.01, 50) == pytest.approx(0.0053589, abs=5e-8)
        assert lr_schedule(k, 0.01, 0) == 0.01

    def test_out_of_range(self):
        with pytest.raises(RangeError):
            lr_schedule(Poly(total=10), 0.01, 11)

    @pytest.mark.parametrize("kind", [CosineAnnealing(t_max=17), Poly(total=17, exponent=0.9)])
    def test_nonincreasing(self, kind):
        lrs = [lr_schedule(kind, 0.01, t) for t in np.linspace(0, 17, 200)]
        assert all(b <= a for a, b in zip(lrs, lrs[1:]))


# ---------------------------------------------------------------------- checkpoint


def test_checkpoint_roundtrip_bit_exact():
    rng = np.random.default_rng(6)
    params = {"conv.weight": rng.normal(size=(4, 2, 3, 3)).astype(np.float32),
              "conv.bias": rng.normal(size=4).astype(np.float32),
              "scalar": np.array(3.0, dtype=np.float32),
              "näme": rng.normal(size=(2, 2)).astype(np.float32)}
    header = {"net": {"kind": "demo", "layers": [1, 2]}}
    blob = checkpoint.dumps(header, params)
    assert blob[:4] == b"COIP"
    assert int.from_bytes(blob[4:8], "little") == 1
    h2, p2 = checkpoint.loads(blob)
    assert h2 == header
    assert list(p2) == list(params)
    for k in params:
        assert p2[k].tobytes() == params[k].tobytes()
    assert checkpoint.dumps(h2, p2) == blob


def test_checkpoint_rejects_garbage():
    with pytest.raises(CheckpointError):
        checkpoint.loads(b"NOPE")
    blob = checkpoint.dumps({}, {"a": np.ones(3, np.float32)})
    with pytest.raises(CheckpointError):
        checkpoint.loads(blob[:-2])
