"""
流水线编排与闭环校验
调度结果回代仿真、三种调度模型对比以及各阶段的统一错误包装
"""
import concurrent.futures
import dataclasses
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import yaml

from config.app_config import AppConfig, ScenarioConfig
from config.logger import get_logger
from core.dataset import (
    DatasetRow, SamplingConfig, feature_names, generate_dataset, read_dataset, scenario_features,
    split
)
from core.dynamics import COI, FrequencyMetrics, FrequencyTrace, MeasurementRule, SimConfig, \
    measure_metrics, simulate_trip
from core.exceptions import (
    ConfigError, FcopfError, FingerprintMismatchError, GridError, ModelError, PipelineStageError
)
from core.grid import (
    GridCase, OperatingPoint, case_fingerprint, check_operating_point, default_operating_point,
    load_case, operating_point, post_trip_inertia, rebalance_slack
)
from core.milp_solver import SolverConfig
from core.opf import (
    DispatchResult, FcopfConfig, ModelKind, build_model, save_dispatch, solve_opf
)
from core.predictor import (
    EvaluationReport, MlpModel, evaluate, load_model, predict, save_model, train
)
from core.relu_encoding import BoundsConfig
from monitoring.metrics import MetricsTimer, get_metrics

logger = get_logger("harness")

MODEL_ORDER = (ModelKind.TOPF, ModelKind.LFCOPF, ModelKind.DNNFCOPF)


@dataclass(frozen=True)
class ScenarioOverride:
    """对比场景：各负荷比例与评估的切机故障"""
    load_scales: Tuple[float, ...]
    contingency: Optional[str] = None
    name: str = "custom"

    def validate(self, case: GridCase):
        if len(self.load_scales) != len(case.loads):
            raise ConfigError(f"场景 {self.name}: 负荷比例个数应为 {len(case.loads)}")
        if any(s <= 0 for s in self.load_scales):
            raise ConfigError(f"场景 {self.name}: 负荷比例必须大于0")
        if self.contingency is not None:
            case.group_index(self.contingency)

    def loads(self, case: GridCase) -> np.ndarray:
        return case.load_vector() * np.asarray(self.load_scales, dtype=float)

    @classmethod
    def uniform(cls, case: GridCase, scale: float, contingency: Optional[str] = None,
                name: str = "custom") -> "ScenarioOverride":
        return cls(load_scales=tuple([float(scale)] * len(case.loads)), contingency=contingency,
                   name=name)

    @classmethod
    def from_config(cls, case: GridCase, scenario: ScenarioConfig) -> "ScenarioOverride":
        return cls.uniform(case, scenario.load_scale, scenario.contingency, scenario.name)


def percent_error(predicted: Optional[float], simulated: float) -> Optional[float]:
    """|预测 − 仿真| / |仿真| × 100；无预测或仿真值为0时返回 None"""
    if predicted is None or simulated == 0:
        return None
    return abs((predicted - simulated) / simulated) * 100.0


@dataclass
class ValidationResult:
    """一个调度结果在指定故障下的回代仿真结果"""
    contingency: str
    simulated: FrequencyMetrics
    predicted_nadir: Optional[float] = None
    predicted_rocof: Optional[float] = None
    nadir_error: Optional[float] = None
    rocof_error: Optional[float] = None
    trace: Optional[FrequencyTrace] = field(default=None, repr=False)

    def meets(self, thresholds: FcopfConfig, tolerance: float = 0.0) -> Dict[str, bool]:
        return {
            "nadir": self.simulated.nadir >= thresholds.nadir_threshold - tolerance,
            "rocof": self.simulated.rocof >= thresholds.rocof_threshold - tolerance,
        }

    def to_dict(self) -> Dict[str, Any]:
        return {
            "contingency": self.contingency,
            "measurement_bus": self.simulated.bus,
            "simulated": {"nadir": self.simulated.nadir, "rocof": self.simulated.rocof},
            "predicted": {"nadir": self.predicted_nadir, "rocof": self.predicted_rocof},
            "percent_error": {"nadir": self.nadir_error, "rocof": self.rocof_error},
        }


def _measurement_bus(trace: FrequencyTrace, sim: SimConfig):
    return COI if sim.measurement_bus_rule == MeasurementRule.COI else trace.disturbance_bus


def _timed_trip(case: GridCase, op: OperatingPoint, unit: str, sim: SimConfig) -> FrequencyTrace:
    with MetricsTimer(get_metrics(), "simulation_duration", {"contingency": unit}):
        return simulate_trip(case, op, unit, sim)


def validate_dispatch(case: GridCase, dispatch: DispatchResult, contingency: str,
                      sim: Optional[SimConfig] = None) -> ValidationResult:
    """
    以调度结果为初始运行点仿真切机，测量频率指标并计算与模型预测值的百分比误差

    Args:
        case: 算例
        dispatch: 调度结果
        contingency: 切除机组
        sim: 仿真配置

    Returns:
        ValidationResult，模型未给出预测的指标误差为 None
    """
    sim = sim or SimConfig()
    case.group_index(contingency)
    op = dispatch.operating_point()
    trace = _timed_trip(case, op, contingency, sim)
    metrics = measure_metrics(trace, _measurement_bus(trace, sim), sim.rocof_window)

    predicted_nadir = predicted_rocof = None
    if dispatch.predicted and contingency in dispatch.predicted:
        predicted_nadir = dispatch.predicted[contingency]["nadir"]
        predicted_rocof = dispatch.predicted[contingency]["rocof"]
    elif dispatch.linear_rocof and contingency in dispatch.linear_rocof:
        predicted_rocof = dispatch.linear_rocof[contingency]

    result = ValidationResult(
        contingency=contingency,
        simulated=metrics,
        predicted_nadir=predicted_nadir,
        predicted_rocof=predicted_rocof,
        nadir_error=percent_error(predicted_nadir, metrics.nadir),
        rocof_error=percent_error(predicted_rocof, metrics.rocof),
        trace=trace,
    )
    logger.info(f"{dispatch.kind.label} 切除 {contingency}: 仿真最低频率 {metrics.nadir:.4f} Hz, "
                f"RoCoF {metrics.rocof:.4f} Hz/s")
    return result


def critical_contingency(case: GridCase, dispatch: DispatchResult,
                         contingencies: Optional[Sequence[str]] = None) -> str:
    """切除后功率缺额最大的可信故障，出力相同时取靠前的机组"""
    units = list(contingencies or case.credible_units())
    if not units:
        raise GridError("可信故障集为空")
    losses = [float(dispatch.group_output[case.group_index(u)]) for u in units]
    return units[int(np.argmax(losses))]


@dataclass
class PredictorCheck:
    """预测器在单个故障下与仿真结果的对照"""
    contingency: str
    predicted: Tuple[float, float]
    simulated: Tuple[float, float]
    errors: Tuple[Optional[float], Optional[float]]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "contingency": self.contingency,
            "predicted": {"nadir": self.predicted[0], "rocof": self.predicted[1]},
            "simulated": {"nadir": self.simulated[0], "rocof": self.simulated[1]},
            "percent_error": {"nadir": self.errors[0], "rocof": self.errors[1]},
        }


@dataclass
class PredictorValidation:
    scenario: str
    loads: np.ndarray
    group_output: np.ndarray
    checks: List[PredictorCheck]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "scenario": self.scenario,
            "loads": self.loads.tolist(),
            "group_output": self.group_output.tolist(),
            "checks": [c.to_dict() for c in self.checks],
        }


def validate_predictor(case: GridCase, model: MlpModel, override: ScenarioOverride,
                       sim: Optional[SimConfig] = None) -> PredictorValidation:
    """默认出力在负荷变化后由平衡机组补足，对比预测器与仿真的频率指标"""
    sim = sim or SimConfig()
    override.validate(case)
    fingerprint = case_fingerprint(case)
    if model.fingerprint != fingerprint:
        raise FingerprintMismatchError(f"预测器算例指纹 {model.fingerprint} 与当前算例 {fingerprint} 不一致")
    contingencies = list(model.contingencies or case.credible_units())
    units = [override.contingency] if override.contingency else contingencies
    if any(u not in contingencies for u in units):
        raise ModelError(f"预测器未覆盖故障 {override.contingency}")

    loads = override.loads(case)
    output = rebalance_slack(case, [g.setpoint for g in case.gen_groups], loads)
    op = operating_point(case, output, loads)
    violations = check_operating_point(case, op)
    if violations:
        raise GridError(f"场景 {override.name} 的运行点越限: {violations[0]}")

    checks = []
    for unit in units:
        nadir, rocof = predict(model, scenario_features(output, loads, unit, contingencies))
        trace = _timed_trip(case, op, unit, sim)
        metrics = measure_metrics(trace, _measurement_bus(trace, sim), sim.rocof_window)
        checks.append(PredictorCheck(
            contingency=unit,
            predicted=(nadir, rocof),
            simulated=(metrics.nadir, metrics.rocof),
            errors=(percent_error(nadir, metrics.nadir), percent_error(rocof, metrics.rocof)),
        ))
        logger.info(f"场景 {override.name} 切除 {unit}: 预测 ({nadir:.4f}, {rocof:.4f}), "
                    f"仿真 ({metrics.nadir:.4f}, {metrics.rocof:.4f})")
    return PredictorValidation(scenario=override.name, loads=loads, group_output=output,
                               checks=checks)


@dataclass
class ModelOutcome:
    kind: ModelKind
    dispatch: DispatchResult
    validations: List[ValidationResult]   # 评估故障在前
    meets_by_contingency: Dict[str, Dict[str, bool]]

    @property
    def validation(self) -> ValidationResult:
        return self.validations[0]

    @property
    def meets(self) -> Dict[str, bool]:
        return self.meets_by_contingency[self.validation.contingency]


@dataclass
class ComparisonReport:
    """三种调度模型的成本、预测与回代仿真对比"""
    scenario: str
    load_scales: Tuple[float, ...]
    loads: np.ndarray
    contingency: str
    critical_contingency: str
    thresholds: FcopfConfig
    outcomes: List[ModelOutcome]
    group_names: List[str]
    ood_features: List[str] = field(default_factory=list)
    notes: List[str] = field(default_factory=list)

    def outcome(self, kind: ModelKind) -> ModelOutcome:
        for outcome in self.outcomes:
            if outcome.kind == kind:
                return outcome
        raise KeyError(kind)

    @property
    def traces(self) -> Dict[ModelKind, FrequencyTrace]:
        return {o.kind: o.validation.trace for o in self.outcomes if o.validation.trace is not None}

    @property
    def contingencies(self) -> List[str]:
        """回代仿真的全部故障：评估故障在前，不同时再加最严重故障"""
        if self.contingency == self.critical_contingency:
            return [self.contingency]
        return [self.contingency, self.critical_contingency]

    @property
    def critical_traces(self) -> Dict[ModelKind, FrequencyTrace]:
        """评估故障不是最严重故障时，最严重故障下的轨迹"""
        return {o.kind: v.trace for o in self.outcomes for v in o.validations[1:]
                if v.trace is not None}

    def cost_ordering_holds(self, tolerance: float = 1e-6) -> bool:
        """T-OPF 成本不高于其余模型"""
        base = self.outcome(ModelKind.TOPF).dispatch.total_cost
        return all(o.dispatch.total_cost >= base - tolerance * max(1.0, abs(base))
                   for o in self.outcomes)

    def to_dict(self, include_timings: bool = False) -> Dict[str, Any]:
        models = {}
        for o in self.outcomes:
            entry = {
                "total_cost": float(o.dispatch.total_cost),
                "quadratic_cost": float(o.dispatch.quadratic_cost),
                "group_output": dict(zip(self.group_names, o.dispatch.group_output.tolist())),
                "validation": o.validation.to_dict(),
                "meets_thresholds": dict(o.meets),
                "predicted_all": o.dispatch.predicted,
                "linear_rocof": o.dispatch.linear_rocof,
            }
            for v in o.validations[1:]:
                entry["critical_validation"] = {
                    "validation": v.to_dict(),
                    "meets_thresholds": dict(o.meets_by_contingency[v.contingency]),
                }
            if include_timings:
                entry["solve_time"] = float(o.dispatch.solve_time)
                entry["nodes"] = int(o.dispatch.nodes)
            models[o.kind.value] = entry
        return {
            "scenario": self.scenario,
            "load_scales": list(self.load_scales),
            "loads": self.loads.tolist(),
            "contingency": self.contingency,
            "critical_contingency": self.critical_contingency,
            "thresholds": {"nadir": self.thresholds.nadir_threshold,
                           "rocof": self.thresholds.rocof_threshold},
            "cost_ordering_holds": self.cost_ordering_holds(),
            "ood_features": list(self.ood_features),
            "notes": list(self.notes),
            "models": models,
        }


def _ood_features(case: GridCase, override: ScenarioOverride,
                  sampling: Optional[SamplingConfig]) -> List[str]:
    """负荷比例超出训练采样范围的特征"""
    if sampling is None:
        return []
    names, _ = feature_names(case, [])
    load_names = names[len(case.gen_groups):]
    lo, hi = sampling.load_scale_range
    return [name for name, s in zip(load_names, override.load_scales) if not lo <= s <= hi]


def _equality_notes(outcomes: List[ModelOutcome], tolerance: float = 1e-6) -> List[str]:
    notes = []
    for i, a in enumerate(outcomes):
        for b in outcomes[i + 1:]:
            if np.allclose(a.dispatch.group_output, b.dispatch.group_output, atol=tolerance, rtol=0.0):
                notes.append(f"{a.kind.label} and {b.kind.label} dispatches are identical")
    return notes


def compare_models(case: GridCase, predictor: Optional[MlpModel], override: ScenarioOverride,
                   fcopf: Optional[FcopfConfig] = None, sim: Optional[SimConfig] = None,
                   solver: Optional[SolverConfig] = None, bounds: Optional[BoundsConfig] = None,
                   sampling: Optional[SamplingConfig] = None,
                   parallel: bool = True) -> ComparisonReport:
    """
    在同一场景下求解 T-OPF、L-FCOPF、DNN-FCOPF 并逐一回代仿真

    Args:
        case: 算例
        predictor: 训练好的预测器；为空时跳过 DNN-FCOPF
        override: 负荷比例与评估故障（为空时取 T-OPF 调度下最严重的故障）
        sampling: 训练采样范围，用于标记超出训练分布的负荷特征
        parallel: 三个模型并行求解与仿真
    """
    fcopf = fcopf or FcopfConfig()
    sim = sim or SimConfig()
    override.validate(case)
    loads = override.loads(case)
    kinds = [k for k in MODEL_ORDER if k != ModelKind.DNNFCOPF or predictor is not None]

    def run_stage(stage: str, fn: Callable, *args):
        try:
            return fn(*args)
        except FcopfError as e:
            raise PipelineStageError(stage, override.name, e) from e

    def solve(kind: ModelKind) -> DispatchResult:
        model = build_model(kind, case, fcopf, predictor=predictor, loads=loads,
                            bounds_config=bounds)
        result = solve_opf(model, solver)
        get_metrics().record_solve(kind.value, result.solve_time, result.nodes)
        return result

    dispatches = _map(lambda k: run_stage(f"solve:{k.value}", solve, k), kinds, parallel)
    by_kind = dict(zip(kinds, dispatches))
    critical = critical_contingency(case, by_kind[ModelKind.TOPF], fcopf.units(case))
    contingency = override.contingency or critical
    contingencies = [contingency] if contingency == critical else [contingency, critical]

    pairs = [(k, unit) for k in kinds for unit in contingencies]
    results = _map(lambda pair: run_stage(f"validate:{pair[0].value}", validate_dispatch, case,
                                          by_kind[pair[0]], pair[1], sim), pairs, parallel)
    outcomes = []
    for k in kinds:
        validations = [v for (kind, _), v in zip(pairs, results) if kind == k]
        outcomes.append(ModelOutcome(kind=k, dispatch=by_kind[k], validations=validations,
                                     meets_by_contingency={v.contingency: v.meets(fcopf)
                                                           for v in validations}))

    report = ComparisonReport(
        scenario=override.name,
        load_scales=override.load_scales,
        loads=loads,
        contingency=contingency,
        critical_contingency=critical,
        thresholds=fcopf,
        outcomes=outcomes,
        group_names=[g.name for g in case.gen_groups],
        ood_features=_ood_features(case, override, sampling),
        notes=_equality_notes(outcomes),
    )
    if report.ood_features:
        report.notes.append(f"load features outside the training range: {report.ood_features}")
    if not report.cost_ordering_holds():
        logger.warning(f"场景 {override.name}: T-OPF 成本高于频率约束模型，请检查求解容差")
    logger.info(f"场景 {override.name} 对比完成，评估故障 {contingency}（最严重故障 {critical}）")
    return report


def _map(fn: Callable, items: Sequence, parallel: bool) -> List:
    if not parallel or len(items) < 2:
        return [fn(item) for item in items]
    with concurrent.futures.ThreadPoolExecutor(max_workers=len(items)) as pool:
        return list(pool.map(fn, items))


class PipelineRunner:
    """
    端到端流水线：算例检查 → 数据集 → 训练 → 求解 → 对比 → 报告

    输出目录布局:
        dataset.tsv, model.yaml, training.yaml, dispatch_<kind>.yaml,
        validation_<scenario>.yaml, compare_<scenario>/
    """

    def __init__(self, config: AppConfig, seed: Optional[int] = None):
        self.config = config
        self.seed = config.seed if seed is None else seed
        self.output_dir = config.output_path
        self.metrics = get_metrics()
        self._case: Optional[GridCase] = None

    @property
    def case(self) -> GridCase:
        if self._case is None:
            self._case = self._stage("case", self.config.case_path, load_case,
                                     self.config.resolve(self.config.case_path))
        return self._case

    def _stage(self, stage: str, instance: str, fn: Callable, *args, **kwargs):
        start = time.perf_counter()
        success = False
        try:
            result = fn(*args, **kwargs)
            success = True
            return result
        except PipelineStageError:
            raise
        except FcopfError as e:
            logger.error(f"阶段 {stage} [{instance}] 失败: {e}")
            raise PipelineStageError(stage, instance, e) from e
        finally:
            duration = time.perf_counter() - start
            self.metrics.record_stage(stage, duration, success)
            if success:
                logger.debug(f"阶段 {stage} [{instance}] 用时 {duration:.3f}s")

    def _write_yaml(self, name: str, data: Dict[str, Any]) -> Path:
        path = self.output_dir / name
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            yaml.safe_dump(data, f, sort_keys=False, allow_unicode=True)
        return path

    # ------------------------------------------------------------ stages

    def check_case(self) -> Dict[str, Any]:
        """检查算例与默认运行点"""
        case = self.case

        def check():
            op = default_operating_point(case)
            violations = check_operating_point(case, op)
            if violations:
                raise GridError(f"默认运行点越限: {[str(v) for v in violations]}")
            return {
                "name": case.name,
                "fingerprint": case_fingerprint(case),
                "buses": case.n_bus,
                "lines": len(case.lines),
                "units": case.units(),
                "credible_contingencies": case.credible_units(),
                "default_group_output": dict(zip([g.name for g in case.gen_groups],
                                                 op.group_output.tolist())),
                "post_trip_inertia": {u: post_trip_inertia(case, u) for u in case.credible_units()},
            }

        summary = self._stage("case", case.name, check)
        logger.info(f"算例 {case.name} 检查通过: {summary['buses']} 母线, {summary['lines']} 支路, "
                    f"{len(summary['units'])} 台机组")
        return summary

    def generate_dataset(self) -> Tuple[List[DatasetRow], Any]:
        cfg = self.config
        return self._stage("dataset", f"seed={self.seed}", generate_dataset, self.case, cfg.sampling,
                           cfg.simulation, cfg.dataset.size, self.seed, path=cfg.dataset_file,
                           workers=cfg.dataset.workers, chunk_size=cfg.dataset.chunk_size)

    def train(self, rows: Optional[List[DatasetRow]] = None) -> Tuple[MlpModel, EvaluationReport]:
        """训练预测器并在留出集上评估"""
        cfg = self.config

        def run():
            manifest = None
            data = rows
            if data is None:
                data, manifest = read_dataset(cfg.dataset_file, case_fingerprint(self.case))
            contingencies = manifest.contingencies if manifest else \
                list(cfg.sampling.contingencies or self.case.credible_units())
            names, _ = feature_names(self.case, contingencies)
            train_rows, held_out = split(data, cfg.dataset.train_fraction, self.seed)
            dims = [len(names)] + [int(h) for h in cfg.network.hidden] + [2]
            train_cfg = dataclasses.replace(cfg.training, seed=self.seed)
            model, history = train(train_rows, dims, train_cfg, fingerprint=case_fingerprint(self.case),
                                   feature_names=names, contingencies=contingencies)
            report = evaluate(model, held_out)
            save_model(model, cfg.model_file)
            self._write_yaml("training.yaml", {
                "dims": dims,
                "epochs_run": len(history.train_mse),
                "best_epoch": history.best_epoch,
                "best_validation_mse": float(history.best_validation_mse),
                "held_out": report.as_dict(),
            })
            logger.info(f"留出集评估: 最低频率 MAE {report.mae[0]:.5f} Hz, RoCoF MAE {report.mae[1]:.5f} Hz/s")
            return model, report

        return self._stage("train", f"seed={self.seed}", run)

    def load_predictor(self) -> MlpModel:
        path = self.config.model_file
        if not path.exists():
            raise ModelError(f"预测器文件不存在: {path}，请先运行 train 或 pipeline")
        return load_model(path)

    def override(self, scenario: str) -> ScenarioOverride:
        return ScenarioOverride.from_config(self.case, self.config.scenario(scenario))

    def solve(self, kind: ModelKind, override: ScenarioOverride,
              predictor: Optional[MlpModel] = None) -> DispatchResult:
        cfg = self.config

        def run():
            model = predictor
            if kind == ModelKind.DNNFCOPF and model is None:
                model = self.load_predictor()
            opf = build_model(kind, self.case, cfg.fcopf, predictor=model,
                              loads=override.loads(self.case), bounds_config=cfg.bounds)
            result = solve_opf(opf, cfg.solver)
            self.metrics.record_solve(kind.value, result.solve_time, result.nodes)
            save_dispatch(result, self.output_dir / f"dispatch_{kind.value}.yaml",
                          include_timings=cfg.report.include_timings)
            return result

        return self._stage(f"solve:{kind.value}", override.name, run)

    def validate(self, override: ScenarioOverride,
                 predictor: Optional[MlpModel] = None) -> PredictorValidation:
        def run():
            model = predictor or self.load_predictor()
            result = validate_predictor(self.case, model, override, self.config.simulation)
            self._write_yaml(f"validation_{override.name}.yaml", result.to_dict())
            return result

        return self._stage("validate", override.name, run)

    def compare(self, override: ScenarioOverride,
                predictor: Optional[MlpModel] = None) -> ComparisonReport:
        from api.report import emit_report
        cfg = self.config
        model = predictor or self._stage("compare", override.name, self.load_predictor)
        report = compare_models(self.case, model, override, cfg.fcopf, cfg.simulation, cfg.solver,
                                cfg.bounds, cfg.sampling)
        self._stage("report", override.name, emit_report, report,
                    self.output_dir / f"compare_{override.name}",
                    decimation=cfg.report.plot_decimation,
                    include_timings=cfg.report.include_timings,
                    rocof_window=cfg.simulation.rocof_window)
        return report

    def metrics_summary(self) -> Dict[str, Any]:
        """计时器的次数与总耗时，以及各计数器"""
        snapshot = self.metrics.get_all_metrics()
        return {
            "timers": {key: {"count": int(stats["count"]), "total": float(stats["total"])}
                       for key, stats in sorted(snapshot["timers"].items())},
            "counters": {key: int(value) for key, value in sorted(snapshot["counters"].items())},
        }

    def run(self) -> Dict[str, Any]:
        """执行全部阶段，返回各阶段摘要"""
        logger.info(f"流水线开始: 种子 {self.seed}, 输出目录 {self.output_dir}")
        summary: Dict[str, Any] = {"case": self.check_case()}
        rows, _ = self.generate_dataset()
        self.metrics.increment_counter("scenarios_labeled", len(rows))
        model, evaluation = self.train(rows)
        summary["held_out"] = evaluation.as_dict()

        summary["scenarios"] = {}
        for i, scenario in enumerate(self.config.scenarios):
            override = ScenarioOverride.from_config(self.case, scenario)
            validation = self.validate(override, model)
            report = self.compare(override, model)
            if i == 0:
                for outcome in report.outcomes:
                    save_dispatch(outcome.dispatch, self.output_dir / f"dispatch_{outcome.kind.value}.yaml",
                                  include_timings=self.config.report.include_timings)
            summary["scenarios"][scenario.name] = {
                "contingency": report.contingency,
                "critical_contingency": report.critical_contingency,
                "cost_ordering_holds": report.cost_ordering_holds(),
                "meets_thresholds": {o.kind.value: dict(o.meets) for o in report.outcomes},
                "predictor_checks": len(validation.checks),
            }
        metrics = self.metrics_summary()
        if self.config.report.include_timings:
            summary["metrics"] = metrics
        self._write_yaml("pipeline.yaml", summary)
        logger.info(f"流水线完成，输出位于 {self.output_dir}")
        logger.info(f"运行指标: {len(metrics['timers'])} 个计时器, 计数器 {metrics['counters']}")
        return summary
