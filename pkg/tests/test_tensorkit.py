"""Tests for the differentiable kernel: ops, backprop, Adam, flop counting and RNG streams."""

import numpy as np
import pytest

from paser.errors import GradientError, NonFiniteError, ShapeError
from paser.tensorkit import (
    AdamState,
    Graph,
    Mode,
    RngStream,
    Tensor,
    adam_step,
    count_flops,
    count_params,
    flop_ledger,
    forward,
    no_grad,
    ops,
    step_graph,
)
from paser.tensorkit.gradcheck import check_gradients
from paser.util import float_dtype

F64 = np.float64


def weighted(out: Tensor) -> Tensor:
    """Scalar probe with fixed random weights so every output entry matters."""
    w = np.random.default_rng(0).normal(size=out.shape)
    return ops.sum_all(ops.mul(out, Tensor(w, dtype=F64)))


def leaf(shape: tuple[int, ...], seed: int = 0, positive: bool = False) -> Tensor:
    data = np.random.default_rng(seed).normal(size=shape)
    if positive:
        data = np.abs(data) + 0.5
    return Tensor(data, requires_grad=True, dtype=F64)


class TwoConv(Graph):
    def __init__(self, rng: RngStream):
        super().__init__(F64)
        self.add_conv("c1", 2, 3, 3, rng.split("c1"))
        self.add_conv("c2", 3, 2, 3, rng.split("c2"))

    def forward(self, x: Tensor, mode: Mode = Mode.EVAL, rng: RngStream | None = None) -> Tensor:
        return self.conv("c2", ops.relu(self.conv("c1", x)))


class TestForward:
    def test_relu(self):
        out = ops.relu(Tensor([-1.0, 2.0]))
        np.testing.assert_array_equal(out.data, [0.0, 2.0])

    def test_softmax_of_zeros_is_uniform(self):
        out = ops.softmax(Tensor(np.zeros((1, 3)), dtype=F64), axis=1)
        np.testing.assert_allclose(out.data, [[1 / 3, 1 / 3, 1 / 3]])

    def test_softmax_array_rows_sum_to_one(self):
        logits = np.random.default_rng(1).normal(size=(4, 5, 2, 2)) * 50
        probs = ops.softmax_array(logits, axis=1)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0)

    def test_cross_entropy_is_finite_for_extreme_logits(self):
        logits = Tensor(np.array([[1000.0, -1000.0]]), dtype=F64)
        loss = ops.cross_entropy(logits, np.array([1]))
        assert loss.item() == pytest.approx(-np.log(ops.PROB_FLOOR))

    def test_cross_entropy_uniform(self):
        logits = Tensor(np.zeros((2, 3, 2, 2)), dtype=F64)
        loss = ops.cross_entropy(logits, np.zeros((2, 2, 2), dtype=np.int64))
        assert loss.item() == pytest.approx(np.log(3))

    def test_cross_entropy_rejects_bad_targets(self):
        logits = Tensor(np.zeros((1, 2, 2, 2)), dtype=F64)
        with pytest.raises(ShapeError):
            ops.cross_entropy(logits, np.zeros((1, 3, 3), dtype=np.int64))
        with pytest.raises(ValueError):
            ops.cross_entropy(logits, np.full((1, 2, 2), 2))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            ops.add(Tensor(np.zeros(3)), Tensor(np.zeros(4)))

    def test_non_finite_forward_raises(self):
        with pytest.raises(NonFiniteError):
            ops.power(Tensor(np.array([-1.0]), dtype=F64), 0.5)

    def test_dropout_inactive_is_identity(self):
        x = Tensor(np.ones((2, 2)))
        assert ops.dropout(x, 0.5, None, active=False) is x

    def test_dropout_scales_survivors(self):
        x = Tensor(np.ones((100, 100)), dtype=F64)
        out = ops.dropout(x, 0.5, RngStream(0), active=True)
        assert set(np.unique(out.data)) <= {0.0, 2.0}
        assert out.data.mean() == pytest.approx(1.0, abs=0.05)

    def test_dropout_rate_out_of_range(self):
        with pytest.raises(ValueError):
            ops.dropout(Tensor(np.ones(2)), 1.0, RngStream(0), active=True)

    def test_max_pool_and_upsample(self):
        x = Tensor(np.arange(16, dtype=F64).reshape(1, 1, 4, 4))
        pooled = ops.max_pool2x2(x)
        np.testing.assert_array_equal(pooled.data[0, 0], [[5, 7], [13, 15]])
        up = ops.upsample2x(pooled)
        assert up.shape == (1, 1, 4, 4)
        np.testing.assert_array_equal(up.data[0, 0, :2, :2], [[5, 5], [5, 5]])

    def test_conv_identity_kernel(self):
        x = Tensor(np.random.default_rng(0).normal(size=(1, 1, 5, 5)), dtype=F64)
        w = np.zeros((1, 1, 3, 3))
        w[0, 0, 1, 1] = 1.0
        out = ops.conv2d(x, Tensor(w, dtype=F64), padding=1)
        np.testing.assert_allclose(out.data, x.data)


class TestBackward:
    def test_square_gradient(self):
        x = Tensor(np.array(3.0), requires_grad=True, dtype=F64)
        (x * x).backward()
        assert x.grad == pytest.approx(6.0)

    def test_relu_gradient(self):
        x = Tensor(np.array([-1.0, 2.0]), requires_grad=True, dtype=F64)
        ops.sum_all(ops.relu(x)).backward()
        np.testing.assert_array_equal(x.grad, [0.0, 1.0])

    def test_shared_subexpression_accumulates(self):
        x = Tensor(np.array(2.0), requires_grad=True, dtype=F64)
        y = x * x
        (y + y).backward()
        assert x.grad == pytest.approx(8.0)

    def test_backward_requires_scalar(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(GradientError):
            ops.relu(x).backward()

    def test_backward_without_tracking(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with no_grad():
            loss = ops.sum_all(x)
        with pytest.raises(GradientError):
            loss.backward()

    @pytest.mark.parametrize(
        "op,shape,positive",
        [
            (ops.relu, (2, 3, 4, 4), False),
            (ops.max_pool2x2, (2, 2, 4, 4), False),
            (ops.upsample2x, (1, 2, 3, 3), False),
            (lambda x: ops.softmax(x, axis=1), (2, 4, 3, 3), False),
            (lambda x: ops.power(x, 1.5), (3, 4), True),
            (lambda x: ops.scale(x, -2.5), (3, 4), False),
            (lambda x: ops.concat([x, ops.relu(x)], axis=1), (1, 2, 3, 3), False),
            (ops.mean_all, (3, 5), False),
            (lambda x: ops.mse(x, Tensor(np.ones(x.shape), dtype=F64)), (4, 4), False),
            (
                lambda x: ops.dropout(
                    x, 0.5, None, active=True, mask=np.tile([[2.0, 0.0]], (3, 2))
                ),
                (3, 4),
                False,
            ),
        ],
    )
    def test_op_gradients(self, op, shape, positive):
        x = leaf(shape, positive=positive)
        error = check_gradients(lambda: weighted(op(x)), {"x": x}, RngStream(3), probes=10)
        assert error <= 1e-4

    def test_cross_entropy_gradient(self):
        x = leaf((2, 3, 4, 4))
        targets = np.random.default_rng(1).integers(0, 3, (2, 4, 4))
        error = check_gradients(
            lambda: ops.cross_entropy(x, targets), {"x": x}, RngStream(3), probes=10
        )
        assert error <= 1e-4

    def test_dense_gradient(self):
        x = leaf((4, 3))
        w = leaf((3, 2), seed=1)
        b = leaf((2,), seed=2)
        error = check_gradients(
            lambda: weighted(ops.dense(x, w, b)), {"x": x, "w": w, "b": b}, RngStream(3)
        )
        assert error <= 1e-4

    @pytest.mark.parametrize("stride", [1, 2])
    def test_conv_gradient(self, stride):
        x = leaf((2, 2, 6, 6))
        w = leaf((3, 2, 3, 3), seed=1)
        b = leaf((3,), seed=2)
        error = check_gradients(
            lambda: weighted(ops.conv2d(x, w, b, stride=stride, padding=1)),
            {"x": x, "w": w, "b": b},
            RngStream(3),
            probes=20,
        )
        assert error <= 1e-4

    def test_graph_gradient(self):
        net = TwoConv(RngStream(0))
        x = Tensor(np.random.default_rng(5).normal(size=(2, 2, 6, 6)), dtype=F64)
        targets = np.random.default_rng(6).integers(0, 2, (2, 6, 6))
        error = check_gradients(
            lambda: ops.cross_entropy(net(x), targets), net.params, RngStream(4), probes=10
        )
        assert error <= 1e-4


class TestGraph:
    def test_count_params_conv(self):
        graph = Graph(F64)
        graph.add_conv("c", 1, 8, 3, RngStream(0))
        assert count_params(graph) == 80

    def test_duplicate_param(self):
        graph = Graph(F64)
        graph.add_param("w", np.zeros(2))
        with pytest.raises(ValueError):
            graph.add_param("w", np.zeros(2))

    def test_state_dict_round_trip(self):
        net = TwoConv(RngStream(0))
        state = net.state_dict()
        other = TwoConv(RngStream(1))
        other.load_state_dict(state)
        for name, value in state.items():
            np.testing.assert_array_equal(other.params[name].data, value)

    def test_load_state_dict_rejects_mismatch(self):
        net = TwoConv(RngStream(0))
        state = net.state_dict()
        state["c1.weight"] = np.zeros((1, 1, 3, 3))
        with pytest.raises(ShapeError):
            net.load_state_dict(state)
        del state["c1.weight"]
        with pytest.raises(ShapeError):
            net.load_state_dict(state)

    def test_named_forward(self):
        net = TwoConv(RngStream(0))
        out = forward(net, {"x": np.zeros((1, 2, 4, 4))})
        assert out["y"].shape == (1, 2, 4, 4)
        with pytest.raises(ShapeError):
            forward(net, {"image": np.zeros((1, 2, 4, 4))})

    def test_astype(self):
        graph = Graph(np.float32)
        graph.add_param("w", np.ones(3))
        graph.astype(F64)
        assert graph.params["w"].dtype == F64


class TestAdam:
    def test_zero_gradient_leaves_parameters(self):
        param = Tensor(np.array([1.0, -2.0]), requires_grad=True, dtype=F64)
        state = AdamState(params={"p": param}, lr=0.1)
        adam_step(state, {"p": np.zeros(2)})
        np.testing.assert_array_equal(param.data, [1.0, -2.0])

    def test_first_step_moves_by_lr(self):
        param = Tensor(np.array([1.0]), requires_grad=True, dtype=F64)
        state = AdamState(params={"p": param}, lr=0.01)
        adam_step(state, {"p": np.array([3.0])})
        assert param.data[0] == pytest.approx(1.0 - 0.01, abs=1e-6)

    def test_minimises_quadratic(self):
        graph = Graph(F64)
        w = graph.add_param("w", np.array([4.0, -3.0]))
        state = AdamState.for_graph(graph, lr=0.1)
        for _ in range(300):
            ops.sum_all(ops.mul(w, w)).backward()
            step_graph(state, graph)
        np.testing.assert_allclose(w.data, 0.0, atol=0.1)

    def test_gradient_map_mismatch(self):
        param = Tensor(np.zeros(2), requires_grad=True)
        state = AdamState(params={"p": param})
        with pytest.raises(GradientError):
            adam_step(state, {"q": np.zeros(2)})

    def test_rejects_non_positive_lr(self):
        with pytest.raises(ValueError):
            AdamState(params={}, lr=0.0)


class TestFlops:
    def test_conv_flops(self):
        graph = TwoConv(RngStream(0))
        with flop_ledger() as ledger:
            ops.conv2d(
                Tensor(np.zeros((1, 1, 32, 32))),
                Tensor(np.zeros((8, 1, 3, 3))),
                Tensor(np.zeros(8)),
                padding=1,
            )
        assert ledger.total == 147456
        assert count_flops(graph, (1, 2, 4, 4)) > 0

    def test_relu_flops(self):
        with flop_ledger() as ledger:
            ops.relu(Tensor(np.zeros(100)))
        assert ledger.by_op == {"relu": 100}

    def test_dense_flops(self):
        with flop_ledger() as ledger:
            ops.dense(Tensor(np.zeros((5, 3))), Tensor(np.zeros((3, 4))))
        assert ledger.total == 2 * 3 * 4 * 5

    def test_flops_ignore_values(self):
        net = TwoConv(RngStream(0))
        before = count_flops(net, (2, 2, 8, 8))
        for p in net.params.values():
            p.data[...] = 123.0
        assert count_flops(net, (2, 2, 8, 8)) == before

    @pytest.mark.parametrize("shape", [(), (1, 2, 0, 4), (1, None, 4, 4)])
    def test_unspecified_shape(self, shape):
        with pytest.raises(ShapeError):
            count_flops(TwoConv(RngStream(0)), shape)


class TestRngStream:
    def test_same_path_same_numbers(self):
        a = RngStream(5).split("x").random(4)
        b = RngStream(5).split("x").random(4)
        np.testing.assert_array_equal(a, b)

    def test_children_independent_of_parent_draws(self):
        parent = RngStream(5)
        first = parent.split(3).random(4)
        parent.random(1000)
        np.testing.assert_array_equal(parent.split(3).random(4), first)

    def test_distinct_names_differ(self):
        root = RngStream(5)
        assert not np.array_equal(root.split("a").random(4), root.split("b").random(4))

    def test_negative_seed(self):
        with pytest.raises(ValueError):
            RngStream(-1)


class TestFloatMode:
    def test_default_is_f32(self, monkeypatch):
        monkeypatch.delenv("PASER_FLOAT_MODE", raising=False)
        assert float_dtype() == np.float32

    def test_f64(self, monkeypatch):
        monkeypatch.setenv("PASER_FLOAT_MODE", "f64")
        assert float_dtype() == np.float64
        assert Graph().dtype == np.float64

    def test_invalid(self, monkeypatch):
        monkeypatch.setenv("PASER_FLOAT_MODE", "f16")
        with pytest.raises(ValueError, match="PASER_FLOAT_MODE"):
            float_dtype()
