"""
ReLU 网络 MILP 编码测试
"""
import numpy as np
import pytest
from loguru import logger

from core.exceptions import EncodingError, ModelDimensionError
from core.grid import load_case
from core.milp_solver import ProblemBuilder, SolveStatus, solve_milp
from core.predictor import fold_normalization, forward
from core.relu_encoding import (
    BoundMethod, InputBox, NeuronBounds, Polarity, encode_network, encoding_stats,
    fragment_to_lp_text, propagate_bounds, verify_encoding
)
from tests.builders import identity_model, random_model


def pre_activations(model, x):
    """折叠网络逐层预激活值"""
    weights, biases = fold_normalization(model)
    a = np.asarray(x, dtype=float)
    layers = []
    for m, (w, b) in enumerate(zip(weights, biases)):
        z = a @ w + b
        layers.append(z)
        a = np.maximum(z, 0.0)
    return layers


def abs_model():
    """y = relu(x) + relu(−x) = |x|"""
    return identity_model([1, 2, 1], weights=[[[1.0, -1.0]], [[1.0], [1.0]]],
                          biases=[[0.0, 0.0], [0.0]])


class TestInputBox:
    """输入区间测试"""

    def test_invalid(self):
        with pytest.raises(EncodingError):
            InputBox(lower=[1.0], upper=[0.0])
        with pytest.raises(EncodingError):
            InputBox(lower=[0.0], upper=[np.inf])
        with pytest.raises(EncodingError):
            InputBox(lower=[0.0, 1.0], upper=[1.0])

    def test_instance_box(self):
        """机组出力取上下限，负荷与切机编码为定值"""
        case = load_case()
        box = InputBox.for_instance(case, [125.0, 90.0, 100.0], [0.0, 1.0, 0.0])
        assert box.dim == 9
        assert box.lower[:3].tolist() == [10.0, 10.0, 10.0]
        assert box.upper[:3].tolist() == [90.0, 45.0, 55.0]
        assert box.lower[3:].tolist() == box.upper[3:].tolist()

    def test_operating_box(self):
        case = load_case()
        box = InputBox.operating_box(case, 3, load_margin=0.2)
        assert box.lower[3] == pytest.approx(100.0)
        assert box.upper[3] == pytest.approx(150.0)
        assert box.upper[-3:].tolist() == [1.0, 1.0, 1.0]


class TestBoundPropagation:
    """界传播测试"""

    def setup_method(self):
        self.model = random_model([3, 6, 5, 2], seed=7)
        self.model.in_shift = np.array([0.5, -1.0, 2.0])
        self.model.in_scale = np.array([2.0, 1.0, 0.5])
        self.box = InputBox(lower=[-1.0, -2.0, 1.0], upper=[2.0, 1.0, 3.0])
        self.samples = self.box.sample(np.random.default_rng(0), 400)

    def assert_sound(self, bounds):
        for x in self.samples:
            for m, z in enumerate(pre_activations(self.model, x)):
                assert np.all(z >= bounds.lower[m] - 1e-9)
                assert np.all(z <= bounds.upper[m] + 1e-9)

    def test_interval_sound(self):
        self.assert_sound(propagate_bounds(self.model, self.box))

    def test_lp_tighter_and_sound(self):
        """LP 收紧的界不比区间界宽且仍然成立"""
        interval = propagate_bounds(self.model, self.box, BoundMethod.INTERVAL)
        tight = propagate_bounds(self.model, self.box, BoundMethod.LP)
        self.assert_sound(tight)
        for m in range(len(interval.lower)):
            assert np.all(tight.lower[m] >= interval.lower[m] - 1e-12)
            assert np.all(tight.upper[m] <= interval.upper[m] + 1e-12)
        np.testing.assert_array_equal(tight.lower[0], interval.lower[0])

    def test_dimension_mismatch(self):
        with pytest.raises(ModelDimensionError):
            propagate_bounds(self.model, InputBox(lower=[0.0], upper=[1.0]))

    def test_validate(self):
        bounds = propagate_bounds(self.model, self.box)
        bounds.validate(self.model.dims)
        broken = NeuronBounds(lower=bounds.lower[:-1], upper=bounds.upper[:-1], box=self.box)
        with pytest.raises(EncodingError):
            broken.validate(self.model.dims)


class TestStableNeurons:
    """稳定神经元测试"""

    def setup_method(self):
        # 神经元0恒激活，神经元1恒抑制，神经元2不稳定
        self.model = identity_model(
            [1, 3, 2],
            weights=[[[1.0, 1.0, 1.0]], [[1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]],
            biases=[[5.0, -5.0, 0.0], [0.0, 0.0]],
        )
        self.box = InputBox(lower=[-1.0], upper=[1.0])
        self.bounds = propagate_bounds(self.model, self.box)

    def test_polarity(self):
        assert self.bounds.polarity(0, 0) == Polarity.ALWAYS_ACTIVE
        assert self.bounds.polarity(0, 1) == Polarity.ALWAYS_INACTIVE
        assert self.bounds.polarity(0, 2) is None

    def test_only_unstable_get_binaries(self):
        fragment = encode_network(self.model, self.bounds, ["x"])
        stats = encoding_stats(fragment)
        assert stats["binaries"] == 1
        assert stats["stable_active"] == 1
        assert stats["stable_inactive"] == 1
        assert fragment.binaries == ["nn_b1_2"]
        # 3个预激活 + 3个激活 + 1个0/1 + 2个输出
        assert stats["variables"] == 9


class TestEncoding:
    """编码精确性测试"""

    def test_matches_forward(self):
        model = random_model([3, 5, 4, 2], seed=2)
        box = InputBox(lower=[-1.0, -1.0, -1.0], upper=[1.0, 1.0, 1.0])
        report = verify_encoding(model, propagate_bounds(model, box), samples=30, seed=1)
        assert report.passed
        assert report.max_deviation < 1e-6

    def test_complete_is_consistent(self):
        model = random_model([3, 4, 2], seed=5)
        box = InputBox(lower=[-1.0] * 3, upper=[1.0] * 3)
        fragment = encode_network(model, propagate_bounds(model, box), ["x0", "x1", "x2"])
        x = [0.3, -0.2, 0.9]
        values = fragment.complete(x)
        expected = forward(model, x)
        assert [values[name] for name in fragment.outputs] == pytest.approx(expected.tolist())
        for name in fragment.binaries:
            assert values[name] in (0.0, 1.0)

    def test_optimize_over_network(self):
        """在 x∈[−1, 2] 上优化 |x|"""
        model = abs_model()
        bounds = propagate_bounds(model, InputBox(lower=[-1.0], upper=[2.0]))
        for sign, expected in ((1.0, 0.0), (-1.0, 2.0)):
            fragment = encode_network(model, bounds, ["x"])
            builder = ProblemBuilder("abs")
            builder.add_variable("x", -1.0, 2.0)
            builder.absorb(fragment.variables, fragment.rows)
            builder.set_cost(fragment.outputs[0], sign)
            sol = solve_milp(builder.build())
            assert sol.status == SolveStatus.OPTIMAL
            assert sol.value(fragment.outputs[0]) == pytest.approx(expected, abs=1e-7)

    def test_trip_constants(self):
        """切机编码作为常数折入仿射约束右端"""
        model = random_model([3, 4, 2], seed=9)
        box = InputBox(lower=[-1.0, 0.0, 1.0], upper=[1.0, 0.0, 1.0])
        bounds = propagate_bounds(model, box)
        fragment = encode_network(model, bounds, ["x0"], trip_constants=[0.0, 1.0])
        assert fragment.inputs == ["x0", 0.0, 1.0]
        with pytest.raises(ModelDimensionError):
            encode_network(model, bounds, ["x0"])

    def test_lp_text(self):
        model = abs_model()
        bounds = propagate_bounds(model, InputBox(lower=[-1.0], upper=[2.0]))
        text = fragment_to_lp_text(encode_network(model, bounds, ["x"]))
        assert "Binaries" in text.splitlines()
        assert " nn_b1_0" in text.splitlines()
        assert text.endswith("End\n")


def small_net():
    """2-2-1 网络，两个隐藏神经元在 [−1, 1]² 上都不稳定"""
    return identity_model([2, 2, 1], weights=[[[1.0, -1.0], [1.0, 1.0]], [[1.0], [-2.0]]],
                          biases=[[0.0, 0.5], [0.1]])


class TestGridAgreement:
    """固定输入的 MILP 在网格上与前向计算一致"""

    def test_21x21_grid(self):
        model = small_net()
        bounds = propagate_bounds(model, InputBox(lower=[-1.0, -1.0], upper=[1.0, 1.0]))
        assert bounds.polarity(0, 0) is None and bounds.polarity(0, 1) is None
        fragment = encode_network(model, bounds, ["x0", "x1"])
        for x0 in np.linspace(-1.0, 1.0, 21):
            for x1 in np.linspace(-1.0, 1.0, 21):
                builder = ProblemBuilder("grid")
                builder.add_variable("x0", x0, x0)
                builder.add_variable("x1", x1, x1)
                builder.absorb(fragment.variables, fragment.rows)
                builder.set_cost(fragment.outputs[0], 1.0)
                sol = solve_milp(builder.build())
                assert sol.status == SolveStatus.OPTIMAL
                assert sol.value(fragment.outputs[0]) == pytest.approx(
                    float(forward(model, [x0, x1])[0]), abs=1e-6)


class TestVerification:
    """编码校验测试"""

    def test_halved_upper_bound_detected(self):
        """不稳定神经元的上界减半后，激活区间的样本无法满足编码"""
        model = abs_model()
        bounds = propagate_bounds(model, InputBox(lower=[-1.0], upper=[2.0]))
        assert verify_encoding(model, bounds, samples=40, seed=3).passed
        bounds.upper[0][0] *= 0.5
        report = verify_encoding(model, bounds, samples=40, seed=3)
        assert not report.passed
        assert report.failures > 0

    def test_absolute_tolerance(self, monkeypatch):
        """输出约为60时，5e-6 的偏差超出绝对容差"""
        model = identity_model([1, 2, 1], weights=[[[1.0, -1.0]], [[1.0], [1.0]]],
                               biases=[[0.0, 0.0], [60.0]])
        bounds = propagate_bounds(model, InputBox(lower=[-1.0], upper=[1.0]))
        assert verify_encoding(model, bounds, samples=10).passed
        monkeypatch.setattr("core.relu_encoding.forward", lambda m, x: forward(m, x) + 5e-6)
        report = verify_encoding(model, bounds, samples=10)
        assert report.failures == 10
        assert report.max_deviation == pytest.approx(5e-6, abs=1e-7)

    def test_log_tag(self):
        records = []
        handler = logger.add(lambda m: records.append(m.record["extra"].get("tag")), level="INFO")
        try:
            model = abs_model()
            verify_encoding(model, propagate_bounds(model, InputBox(lower=[-1.0], upper=[1.0])), samples=2)
        finally:
            logger.remove(handler)
        assert "encode" in records


@pytest.mark.slow
class TestMonteCarloSoundness:
    """运行域上 10⁵ 个随机点的预激活值全部落在传播得到的界内"""

    def test_operating_box(self):
        case = load_case()
        box = InputBox.operating_box(case, 3, load_margin=0.2)
        model = random_model([box.dim, 32, 32, 2], seed=11)
        model.in_shift = 0.5 * (box.lower + box.upper)
        model.in_scale = np.maximum(0.5 * (box.upper - box.lower), 1.0)
        samples = box.sample(np.random.default_rng(0), 100000)
        layers = pre_activations(model, samples)
        for method in (BoundMethod.INTERVAL, BoundMethod.LP):
            bounds = propagate_bounds(model, box, method)
            for m, z in enumerate(layers):
                assert np.all(z >= bounds.lower[m] - 1e-6)
                assert np.all(z <= bounds.upper[m] + 1e-6)
