"""
三种调度模型测试
"""
import dataclasses

import numpy as np
import pytest

from core.exceptions import (
    ConfigError, DispatchError, DispatchVerificationError, FingerprintMismatchError
)
from core.grid import check_operating_point, load_case
from core.milp_solver import SolveStatus, solve_milp
from core.opf import (
    DispatchResult, FcopfConfig, ModelKind, build_dnn_fcopf, build_lfcopf, build_model, build_topf,
    extract_dispatch, linear_rocof, load_dispatch, rocof_coefficient, save_dispatch, solve_opf
)
from core.predictor import forward
from tests.builders import case_from, identity_model, two_gen_document


def cheap_second_unit(load=60.0, limit=500.0):
    """G2 边际成本低于 G1"""
    doc = two_gen_document(load=load)
    doc["gen_groups"][1]["c1"] = 5.0
    doc["lines"][1]["limit"] = limit
    return case_from(doc)


def frequency_model(case):
    """
    手工网络：h1 = relu(P_G2)，h2 = relu(P_G2 − 15)
    nadir = 60 − 0.01·h1 − 0.2·h2，rocof = −0.05·h1
    """
    w1 = np.zeros((5, 2))
    w1[1, 0] = 1.0
    w1[1, 1] = 1.0
    w2 = np.array([[-0.01, -0.05], [-0.2, 0.0]])
    return identity_model([5, 2, 2], weights=[w1, w2], biases=[[0.0, -15.0], [60.0, 0.0]],
                          case=case, contingencies=["G11", "G21"])


class TestTopf:
    """传统直流OPF测试"""

    def test_merit_order(self):
        """低价机组带满，高价机组停在下限"""
        case = case_from(two_gen_document(load=60.0))
        result = solve_opf(build_topf(case))
        np.testing.assert_allclose(result.group_output, [55.0, 5.0], atol=1e-7)
        assert result.total_cost == pytest.approx(55.0 * 10.0 + 5.0 * 30.0, abs=1e-6)
        assert result.status == SolveStatus.OPTIMAL

    def test_line_limit(self):
        doc = two_gen_document(load=60.0)
        doc["lines"][0]["limit"] = 40.0
        result = solve_opf(build_topf(case_from(doc)))
        np.testing.assert_allclose(result.group_output, [40.0, 20.0], atol=1e-7)
        assert abs(result.flows[0]) == pytest.approx(40.0, abs=1e-7)

    def test_bundled_feasible(self):
        case = load_case()
        result = solve_opf(build_topf(case))
        assert check_operating_point(case, result.operating_point()) == []
        total = float(np.dot(result.group_output, case.unit_counts()))
        assert total == pytest.approx(case.load_vector().sum(), abs=1e-6)

    def test_pwl_overestimate_bound(self):
        """分段线性成本高估二次成本，误差不超过 Σ n·c2·Δ²/4"""
        case = load_case()
        segments = 10
        result = solve_opf(build_topf(case, segments=segments))
        bound = sum(g.unit_count * g.c2 * ((g.p_max - g.p_min) / segments) ** 2 / 4.0
                    for g in case.gen_groups)
        assert result.total_cost >= result.quadratic_cost - 1e-6
        assert result.total_cost - result.quadratic_cost <= bound + 1e-6

    def test_bad_loads(self):
        with pytest.raises(DispatchError):
            build_topf(load_case(), loads=[1.0, 2.0])


class TestLfcopf:
    """线性 RoCoF 约束测试"""

    def test_coefficient(self):
        """切除 G21 后 H=6 s，系数 −60/(2·6·100)"""
        case = cheap_second_unit()
        assert rocof_coefficient(case, "G21") == pytest.approx(-0.05)
        assert linear_rocof(case, [10.0, 4.0], "G21") == pytest.approx(-0.2)

    def test_binding_limit(self):
        """RoCoF 阈值 −0.5 限制 G2 不超过 10 MW"""
        case = cheap_second_unit()
        config = FcopfConfig(rocof_threshold=-0.5, contingencies=["G21"])
        topf = solve_opf(build_topf(case))
        lfcopf = solve_opf(build_lfcopf(case, config))
        np.testing.assert_allclose(topf.group_output, [5.0, 55.0], atol=1e-7)
        np.testing.assert_allclose(lfcopf.group_output, [50.0, 10.0], atol=1e-7)
        assert lfcopf.linear_rocof["G21"] == pytest.approx(-0.5, abs=1e-9)
        assert lfcopf.total_cost > topf.total_cost

    def test_infeasible(self):
        """阈值要求的出力低于机组下限"""
        case = cheap_second_unit()
        config = FcopfConfig(rocof_threshold=-0.1, contingencies=["G21"])
        with pytest.raises(DispatchError):
            solve_opf(build_lfcopf(case, config))

    def test_loose_threshold(self):
        """阈值极宽时与 T-OPF 结果相同"""
        case = load_case()
        topf = solve_opf(build_topf(case))
        lfcopf = solve_opf(build_lfcopf(case, FcopfConfig(rocof_threshold=-10.0)))
        assert lfcopf.total_cost == pytest.approx(topf.total_cost, rel=1e-9)
        assert set(lfcopf.linear_rocof) == {"G11", "G21", "G31"}

    def test_bundled_within_threshold(self):
        case = load_case()
        config = FcopfConfig(rocof_threshold=-0.3)
        result = solve_opf(build_lfcopf(case, config))
        for unit, value in result.linear_rocof.items():
            assert value >= config.rocof_threshold - 1e-6
            assert value == pytest.approx(linear_rocof(case, result.group_output, unit))

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            FcopfConfig(rocof_threshold=0.1).validate()
        with pytest.raises(ConfigError):
            FcopfConfig(nadir_threshold=61.0).validate(60.0)


class TestDnnFcopf:
    """嵌入神经网络约束测试"""

    def setup_method(self):
        self.case = cheap_second_unit()
        self.model = frequency_model(self.case)
        self.config = FcopfConfig(rocof_threshold=-1.0, nadir_threshold=59.5, contingencies=["G21"])

    def test_nadir_binding(self):
        """63 − 0.21·P_G2 ≥ 59.5 → P_G2 ≤ 50/3"""
        model = build_dnn_fcopf(self.case, self.model, self.config)
        assert len(model.problem.binaries) == 1
        result = solve_opf(model)
        np.testing.assert_allclose(result.group_output, [60.0 - 50.0 / 3.0, 50.0 / 3.0], atol=1e-6)
        assert result.predicted["G21"]["nadir"] == pytest.approx(59.5, abs=1e-6)
        assert result.predicted["G21"]["rocof"] == pytest.approx(-2.5 / 3.0, abs=1e-6)

    def test_rocof_binding(self):
        config = FcopfConfig(rocof_threshold=-0.5, nadir_threshold=59.0, contingencies=["G21"])
        result = solve_opf(build_dnn_fcopf(self.case, self.model, config))
        np.testing.assert_allclose(result.group_output, [50.0, 10.0], atol=1e-6)

    def test_heuristic_consistent(self):
        """启发式补全后网络变量与前向计算一致"""
        model = build_dnn_fcopf(self.case, self.model, self.config)
        values = np.zeros(model.problem.lp.n_vars)
        values[model.problem.index("P_G1")] = 40.0
        values[model.problem.index("P_G2")] = 20.0
        candidate = model.heuristic(values)
        fragment = model.fragments["G21"]
        nadir = candidate[model.problem.index(fragment.outputs[0])]
        assert nadir == pytest.approx(60.0 - 0.2 - 1.0)

    def test_unreachable_nadir(self):
        """阈值高于网络在区间上的最大输出"""
        config = FcopfConfig(rocof_threshold=-1.0, nadir_threshold=59.99, contingencies=["G21"])
        with pytest.raises(DispatchError):
            solve_opf(build_dnn_fcopf(self.case, self.model, config))

    def test_fingerprint_mismatch(self):
        self.model.fingerprint = "0" * 16
        with pytest.raises(FingerprintMismatchError):
            build_dnn_fcopf(self.case, self.model, self.config)

    def test_uncovered_contingency(self):
        self.model.contingencies = ["G11", "G12"]
        with pytest.raises(DispatchError):
            build_dnn_fcopf(self.case, self.model, self.config)

    def test_requires_predictor(self):
        with pytest.raises(DispatchError):
            build_model(ModelKind.DNNFCOPF, self.case, self.config)

    def test_all_contingencies(self):
        """未指定故障集时每个可信故障各嵌入一份网络"""
        config = FcopfConfig(rocof_threshold=-1.0, nadir_threshold=59.5)
        model = build_dnn_fcopf(self.case, self.model, config)
        assert sorted(model.fragments) == ["G11", "G21"]


class TestDispatchFile:
    """调度结果文件测试"""

    def test_roundtrip(self, tmp_path):
        case = case_from(two_gen_document())
        result = solve_opf(build_topf(case))
        path = save_dispatch(result, tmp_path / "d.yaml", include_timings=False)
        loaded = load_dispatch(path)
        assert loaded.group_output.tolist() == result.group_output.tolist()
        assert loaded.kind == ModelKind.TOPF
        assert "solve_time" not in path.read_text(encoding="utf-8")

    def test_missing(self, tmp_path):
        with pytest.raises(DispatchError):
            load_dispatch(tmp_path / "none.yaml")

    def test_bad_content(self):
        with pytest.raises(DispatchError):
            DispatchResult.from_dict({"kind": "topf"})

    def test_labels(self):
        assert [k.label for k in ModelKind] == ["T-OPF", "L-FCOPF", "DNN-FCOPF"]


class TestPostVerification:
    """求解后独立复核"""

    def test_line_limit_violation(self):
        """按 40 MW 限值求得的解在 30 MW 限值下复核失败"""
        doc = two_gen_document(load=60.0)
        doc["lines"][0]["limit"] = 40.0
        model = build_topf(case_from(doc))
        solution = solve_milp(model.problem)
        assert extract_dispatch(model, solution).flows[0] == pytest.approx(40.0, abs=1e-7)
        doc["lines"][0]["limit"] = 30.0
        tightened = dataclasses.replace(model, case=case_from(doc))
        with pytest.raises(DispatchVerificationError):
            extract_dispatch(tightened, solution)

    def test_encoded_output_absolute_tolerance(self, monkeypatch):
        """最低频率约为59.5时，前向计算偏差 5e-6 即判为不一致"""
        case = cheap_second_unit()
        config = FcopfConfig(rocof_threshold=-1.0, nadir_threshold=59.5, contingencies=["G21"])
        model = build_dnn_fcopf(case, frequency_model(case), config)
        solution = solve_milp(model.problem, heuristic=model.heuristic)
        extract_dispatch(model, solution)
        monkeypatch.setattr("core.opf.forward", lambda m, x: forward(m, x) + 5e-6)
        with pytest.raises(DispatchVerificationError):
            extract_dispatch(model, solution)
