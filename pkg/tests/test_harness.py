"""
流水线编排与闭环校验测试
"""
import dataclasses

import numpy as np
import pytest
import yaml

from api.harness import (
    PipelineRunner, ScenarioOverride, compare_models, critical_contingency, percent_error,
    validate_dispatch, validate_predictor
)
from config.app_config import AppConfig, DatasetConfig, NetworkConfig
from core.dataset import SamplingConfig
from core.dynamics import SimConfig
from core.exceptions import (
    ConfigError, FingerprintMismatchError, ModelError, PipelineStageError, UnknownUnitError
)
from core.grid import default_operating_point, load_case
from core.opf import DispatchResult, FcopfConfig, ModelKind, build_lfcopf, solve_opf
from core.milp_solver import SolveStatus
from core.predictor import TrainConfig
from monitoring.metrics import MetricsCollector
from tests.builders import identity_model

SHORT_SIM = SimConfig(horizon=8.0)


def constant_predictor(case, nadir=59.9, rocof=-0.2):
    """输出恒定的预测器"""
    return identity_model([9, 2], weights=[np.zeros((9, 2))], biases=[[nadir, rocof]],
                          case=case, contingencies=case.credible_units())


def dispatch_from(case, group_output):
    op = default_operating_point(case)
    return DispatchResult(kind=ModelKind.TOPF, group_output=np.asarray(group_output, dtype=float),
                          loads=op.loads, angles=op.angles, flows=op.flows, total_cost=0.0,
                          quadratic_cost=0.0, status=SolveStatus.OPTIMAL)


class TestHelpers:
    """辅助函数测试"""

    def setup_method(self):
        self.case = load_case()

    def test_percent_error(self):
        assert percent_error(59.8, 59.9) == pytest.approx(0.1 / 59.9 * 100.0)
        assert percent_error(None, 59.9) is None
        assert percent_error(-0.2, 0.0) is None

    def test_override(self):
        override = ScenarioOverride.uniform(self.case, 1.2, contingency="G11", name="high")
        assert override.loads(self.case).tolist() == pytest.approx([150.0, 108.0, 120.0])
        override.validate(self.case)
        with pytest.raises(ConfigError):
            ScenarioOverride(load_scales=(1.0,)).validate(self.case)
        with pytest.raises(ConfigError):
            ScenarioOverride(load_scales=(1.0, 0.0, 1.0)).validate(self.case)
        with pytest.raises(UnknownUnitError):
            ScenarioOverride.uniform(self.case, 1.0, contingency="G99").validate(self.case)

    def test_critical_contingency(self):
        """最大出力机组；出力相同时取靠前者"""
        op = default_operating_point(self.case)
        dispatch = dispatch_from(self.case, op.group_output)
        assert critical_contingency(self.case, dispatch) == "G21"
        tied = dispatch_from(self.case, [40.0, 40.0, 30.0])
        assert critical_contingency(self.case, tied) == "G11"


class TestValidation:
    """回代仿真测试"""

    def setup_method(self):
        self.case = load_case()

    def test_linear_prediction_error(self):
        """L-FCOPF 的预测 RoCoF 与仿真值比较，最低频率无预测"""
        dispatch = solve_opf(build_lfcopf(self.case, FcopfConfig()))
        result = validate_dispatch(self.case, dispatch, "G21", SHORT_SIM)
        assert result.predicted_rocof == dispatch.linear_rocof["G21"]
        assert result.predicted_nadir is None
        assert result.nadir_error is None
        assert result.rocof_error == pytest.approx(
            percent_error(result.predicted_rocof, result.simulated.rocof))
        assert result.simulated.bus == 2
        assert result.trace is not None
        data = result.to_dict()
        assert data["percent_error"]["nadir"] is None

    def test_meets(self):
        dispatch = dispatch_from(self.case, default_operating_point(self.case).group_output)
        result = validate_dispatch(self.case, dispatch, "G11", SHORT_SIM)
        loose = result.meets(FcopfConfig(rocof_threshold=-5.0, nadir_threshold=50.0))
        strict = result.meets(FcopfConfig(rocof_threshold=-1e-4, nadir_threshold=59.999))
        assert loose == {"nadir": True, "rocof": True}
        assert strict == {"nadir": False, "rocof": False}

    def test_predictor_validation(self):
        model = constant_predictor(self.case)
        override = ScenarioOverride.uniform(self.case, 1.0)
        result = validate_predictor(self.case, model, override, SHORT_SIM)
        assert [c.contingency for c in result.checks] == ["G11", "G21", "G31"]
        assert all(c.predicted == (59.9, -0.2) for c in result.checks)
        single = validate_predictor(self.case, model, dataclasses.replace(override, contingency="G31"),
                                    SHORT_SIM)
        assert len(single.checks) == 1
        assert single.checks[0].simulated == result.checks[2].simulated

    def test_predictor_fingerprint(self):
        model = constant_predictor(self.case)
        model.fingerprint = "0" * 16
        with pytest.raises(FingerprintMismatchError):
            validate_predictor(self.case, model, ScenarioOverride.uniform(self.case, 1.0), SHORT_SIM)


class TestCompare:
    """三模型对比测试"""

    def setup_method(self):
        self.case = load_case()
        self.override = ScenarioOverride.uniform(self.case, 1.05, name="t")

    def test_three_models(self):
        """宽松阈值下三种模型成本相同，评估故障取最严重故障"""
        report = compare_models(self.case, constant_predictor(self.case), self.override,
                                sim=SHORT_SIM, sampling=SamplingConfig(load_scale_range=(0.9, 1.0)))
        assert [o.kind for o in report.outcomes] == [ModelKind.TOPF, ModelKind.LFCOPF,
                                                      ModelKind.DNNFCOPF]
        assert report.cost_ordering_holds()
        assert report.contingency == report.critical_contingency
        dnn = report.outcome(ModelKind.DNNFCOPF)
        assert dnn.validation.predicted_nadir == pytest.approx(59.9)
        assert dnn.validation.nadir_error is not None
        assert report.ood_features == ["Pload1_B5", "Pload2_B6", "Pload3_B8"]
        assert any("outside the training range" in note for note in report.notes)
        data = report.to_dict()
        assert set(data["models"]) == {"topf", "lfcopf", "dnnfcopf"}
        assert "solve_time" not in data["models"]["topf"]
        assert set(report.traces) == set(ModelKind)

    def test_without_predictor(self):
        override = dataclasses.replace(self.override, contingency="G31")
        serial = compare_models(self.case, None, override, sim=SHORT_SIM, parallel=False)
        parallel = compare_models(self.case, None, override, sim=SHORT_SIM, parallel=True)
        assert [o.kind for o in serial.outcomes] == [ModelKind.TOPF, ModelKind.LFCOPF]
        assert serial.contingency == "G31"
        for a, b in zip(serial.outcomes, parallel.outcomes):
            assert a.dispatch.group_output.tolist() == b.dispatch.group_output.tolist()
            assert a.validation.simulated == b.validation.simulated

    def test_stage_error(self):
        """求解失败被包装为带阶段名的错误"""
        fcopf = FcopfConfig(rocof_threshold=-0.01)
        with pytest.raises(PipelineStageError) as info:
            compare_models(self.case, None, self.override, fcopf=fcopf, sim=SHORT_SIM, parallel=False)
        assert info.value.stage == "solve:lfcopf"
        assert info.value.instance == "t"


class TestPipelineRunner:
    """流水线测试"""

    def setup_method(self):
        self.config = AppConfig(
            dataset=DatasetConfig(size=40, chunk_size=20),
            training=TrainConfig(epochs=5, batch_size=8),
            network=NetworkConfig(hidden=[4]),
            simulation=SimConfig(horizon=5.0),
        )

    def runner(self, tmp_path):
        config = dataclasses.replace(self.config, output_dir=str(tmp_path))
        return PipelineRunner(config)

    def test_check_case(self, tmp_path):
        summary = self.runner(tmp_path).check_case()
        assert summary["credible_contingencies"] == ["G11", "G21", "G31"]
        assert summary["post_trip_inertia"]["G21"] == pytest.approx(51.3)

    def test_solve_writes_dispatch(self, tmp_path):
        runner = self.runner(tmp_path)
        result = runner.solve(ModelKind.TOPF, ScenarioOverride.uniform(runner.case, 1.0))
        data = yaml.safe_load((tmp_path / "dispatch_topf.yaml").read_text(encoding="utf-8"))
        assert data["group_output"] == result.group_output.tolist()
        assert "solve_time" not in data

    def test_missing_predictor(self, tmp_path):
        runner = self.runner(tmp_path)
        with pytest.raises(ModelError):
            runner.load_predictor()
        with pytest.raises(PipelineStageError) as info:
            runner.solve(ModelKind.DNNFCOPF, ScenarioOverride.uniform(runner.case, 1.0))
        assert info.value.stage == "solve:dnnfcopf"

    def test_stage_metrics(self, tmp_path):
        runner = self.runner(tmp_path)
        runner.metrics = MetricsCollector()
        runner.check_case()
        with pytest.raises(PipelineStageError):
            runner.solve(ModelKind.DNNFCOPF, ScenarioOverride.uniform(runner.case, 1.0))
        assert runner.metrics.get_counter("stages_total", {"stage": "case", "success": "True"}) == 1
        assert runner.metrics.get_counter("stages_total", {"stage": "solve:dnnfcopf", "success": "False"}) == 1
        summary = runner.metrics_summary()
        assert summary["timers"]['stage_duration:{"stage": "case"}']["count"] == 1
        assert summary["counters"]['stages_total:{"stage": "case", "success": "True"}'] == 1

    def test_simulation_timed(self, monkeypatch):
        collector = MetricsCollector()
        monkeypatch.setattr("api.harness.get_metrics", lambda: collector)
        case = load_case()
        dispatch = dispatch_from(case, default_operating_point(case).group_output)
        validate_dispatch(case, dispatch, "G31", SimConfig(horizon=3.0))
        stats = collector.get_timer_stats("simulation_duration", {"contingency": "G31"})
        assert stats["count"] == 1
        assert stats["total"] > 0.0

    def test_unknown_scenario(self, tmp_path):
        with pytest.raises(ConfigError):
            self.runner(tmp_path).override("nope")

    def test_dataset_and_train(self, tmp_path):
        runner = self.runner(tmp_path)
        rows, manifest = runner.generate_dataset()
        assert len(rows) == 40
        model, report = runner.train()
        assert model.dims == [9, 4, 2]
        assert report.rows == 4
        assert (tmp_path / "model.yaml").exists()
        training = yaml.safe_load((tmp_path / "training.yaml").read_text(encoding="utf-8"))
        assert training["dims"] == [9, 4, 2]
        assert runner.load_predictor().fingerprint == manifest.case_fingerprint

    @pytest.mark.slow
    def test_full_pipeline(self, tmp_path):
        runner = self.runner(tmp_path)
        summary = runner.run()
        assert set(summary["scenarios"]) == {"default", "validation", "high_load"}
        for name in ("pipeline.yaml", "dispatch_topf.yaml", "validation_default.yaml"):
            assert (tmp_path / name).exists()
        assert (tmp_path / "compare_default" / "comparison.tsv").exists()


@pytest.mark.slow
class TestAcceptance:
    """默认配置全规模流水线：8000 行数据集、三份网络副本、120% 负荷闭环"""

    @pytest.fixture(scope="class")
    def pipeline(self, tmp_path_factory):
        out = tmp_path_factory.mktemp("acceptance")
        config = AppConfig(output_dir=str(out), dataset=DatasetConfig(workers=4))
        runner = PipelineRunner(config)
        return runner, runner.run()

    def test_predictor_accuracy(self, pipeline):
        _, summary = pipeline
        assert summary["held_out"]["rows"] == 800
        assert summary["held_out"]["nadir"]["mae"] < 0.02
        assert summary["held_out"]["rocof"]["mae"] < 0.02

    def test_cost_ordering(self, pipeline):
        _, summary = pipeline
        assert all(s["cost_ordering_holds"] for s in summary["scenarios"].values())

    def test_closed_loop_high_load(self, pipeline):
        """高负荷下 T-OPF 越限，DNN-FCOPF 在容差内满足两项阈值"""
        runner, _ = pipeline
        report = runner.compare(runner.override("high_load"))
        topf = report.outcome(ModelKind.TOPF)
        assert not all(topf.meets.values())
        simulated = report.outcome(ModelKind.DNNFCOPF).validation.simulated
        assert simulated.nadir >= runner.config.fcopf.nadir_threshold - 0.05
        assert simulated.rocof >= runner.config.fcopf.rocof_threshold - 0.05
