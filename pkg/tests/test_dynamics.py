"""
频率动态仿真测试
"""
import dataclasses

import numpy as np
import pytest

from core.dynamics import (
    _bus_weights,
    COI, FrequencyTrace, SimConfig, analytic_initial_rocof, export_trace, measure_metrics,
    measure_nadir, measure_rocof, rocof_series, simulate_trip, simulate_trips
)
from core.exceptions import ConfigError, SimulationAbortedError, SimulationError
from core.grid import default_operating_point, load_case, operating_point, parse_case, case_to_dict
from tests.builders import case_from, two_gen_document

import yaml


def synthetic_trace(values, dt=0.001, event_time=0.0):
    values = np.asarray(values, dtype=float)
    times = np.arange(len(values)) * dt
    return FrequencyTrace(times=times, machine_freq={}, bus_freq={1: values}, coi=values,
                          event_time=event_time, tripped_unit="G11", disturbance_bus=1,
                          dt=dt, f0=60.0)


def scaled_case(case, **changes):
    """按机组组参数修改算例"""
    doc = case_to_dict(case)
    for group in doc["gen_groups"]:
        for key, fn in changes.items():
            group[key] = fn(group[key])
    return parse_case(yaml.safe_dump(doc))


def coi_initial_slope(trace, span=0.05):
    k = trace.event_index
    n = int(round(span / trace.dt))
    return (trace.coi[k + n] - trace.coi[k]) / span


class TestSimConfig:
    """仿真配置测试"""

    def test_defaults(self):
        cfg = SimConfig()
        cfg.validate()
        assert cfg.rocof_window == 0.167
        assert cfg.steps == 20000
        assert cfg.event_index == 1000

    def test_invalid(self):
        with pytest.raises(ConfigError):
            SimConfig(dt=0.0).validate()
        with pytest.raises(ConfigError):
            SimConfig(horizon=0.5, rocof_window=0.167).validate()


class TestMeasure:
    """RoCoF 与最低频率测量测试"""

    def setup_method(self):
        self.t = np.arange(0, 2001) * 0.001

    def test_constant_slope(self):
        trace = synthetic_trace(60.0 - 0.5 * self.t)
        assert measure_rocof(trace, 1, 0.167) == pytest.approx(-0.5, rel=1e-9)

    def test_flat(self):
        trace = synthetic_trace(np.full_like(self.t, 60.0))
        assert measure_rocof(trace, 1, 0.167) == 0.0
        assert measure_nadir(trace, 1) == 60.0

    def test_ramp_then_flat(self):
        """0.1 s 斜坡后保持，窗口 0.167 s"""
        values = 60.0 - np.minimum(self.t, 0.1)
        trace = synthetic_trace(values)
        assert measure_rocof(trace, 1, 0.167) == pytest.approx(-0.1 / 0.167, rel=1e-9)

    def test_dip(self):
        values = np.full_like(self.t, 60.0)
        values[700] = 59.3
        assert measure_nadir(synthetic_trace(values), 1) == 59.3

    def test_before_event_ignored(self):
        """切机前的数据不参与测量"""
        values = np.full_like(self.t, 60.0)
        values[100] = 55.0
        trace = synthetic_trace(values, event_time=0.5)
        assert measure_nadir(trace, 1) == 60.0

    def test_missing_bus(self):
        trace = synthetic_trace(np.full_like(self.t, 60.0))
        with pytest.raises(SimulationError):
            measure_nadir(trace, 7)

    def test_window_too_long(self):
        trace = synthetic_trace(np.full(100, 60.0))
        with pytest.raises(SimulationError):
            measure_rocof(trace, 1, 0.167)

    def test_analytic_formula(self):
        """H_sys=3 s, P_base=100, P_loss=10 MW → −1 Hz/s"""
        doc = two_gen_document()
        doc["gen_groups"][0].update(inertia=3.0, rated_mva=100.0)
        doc["gen_groups"][1].update(inertia=3.0, rated_mva=100.0)
        case = case_from(doc)
        op = operating_point(case, [50.0, 10.0])
        assert analytic_initial_rocof(case, op, "G21") == pytest.approx(-1.0)


class TestSimulateTrip:
    """切机仿真测试"""

    def setup_method(self):
        self.case = load_case()
        self.op = default_operating_point(self.case)
        self.sim = SimConfig(horizon=10.0)

    def test_zero_output_equilibrium(self):
        """切除出力为0的机组，频率保持额定值"""
        doc = two_gen_document(load=60.0)
        doc["gen_groups"][1]["p_min"] = 0.0
        case = case_from(doc)
        op = operating_point(case, [60.0, 0.0])
        trace = simulate_trip(case, op, "G21", SimConfig(horizon=5.0))
        for series in trace.bus_freq.values():
            assert np.max(np.abs(series - 60.0)) < 1e-9

    def test_bundled_trip(self):
        """切除母线2一台机组：最低频率介于 58 Hz 与额定频率之间"""
        trace = simulate_trip(self.case, self.op, "G21", self.sim)
        nadir = measure_nadir(trace, 2)
        assert 58.0 < nadir < 60.0
        assert nadir == float(np.min(trace.bus_freq[2][trace.event_index:]))
        assert measure_rocof(trace, 2, 0.167) < 0.0
        assert np.all(trace.bus_freq[2][:trace.event_index] == 60.0)
        assert np.all(np.diff(trace.times) > 0)

    def test_analytic_agreement(self):
        """各可信故障：COI 初始斜率与线性化公式相差不超过2%"""
        for unit in self.case.credible_units():
            trace = simulate_trip(self.case, self.op, unit, SimConfig(horizon=3.0))
            analytic = analytic_initial_rocof(self.case, self.op, unit)
            assert coi_initial_slope(trace) == pytest.approx(analytic, rel=0.02)

    def test_inertia_scaling(self):
        """惯量加倍：解析值精确减半，仿真斜率在5%以内减半"""
        doubled = scaled_case(self.case, inertia=lambda h: 2.0 * h)
        op = default_operating_point(doubled)
        assert analytic_initial_rocof(doubled, op, "G21") == pytest.approx(
            0.5 * analytic_initial_rocof(self.case, self.op, "G21"), rel=1e-12)
        base = coi_initial_slope(simulate_trip(self.case, self.op, "G21", SimConfig(horizon=3.0)))
        slow = coi_initial_slope(simulate_trip(doubled, op, "G21", SimConfig(horizon=3.0)))
        assert slow == pytest.approx(0.5 * base, rel=0.05)

    def test_droop_sweep(self):
        """调差系数越小，最低频率越高"""
        nadirs = []
        for r in (0.08, 0.05, 0.03):
            case = scaled_case(self.case, droop=lambda _, r=r: r)
            trace = simulate_trip(case, default_operating_point(case), "G21", self.sim)
            nadirs.append(measure_nadir(trace, 2))
        assert nadirs[0] <= nadirs[1] <= nadirs[2]

    def test_step_convergence(self):
        """步长减半，指标变化小于0.1%"""
        coarse = simulate_trip(self.case, self.op, "G11", self.sim)
        fine = simulate_trip(self.case, self.op, "G11", dataclasses.replace(self.sim, dt=0.0005))
        for a, b in ((measure_nadir(coarse, 1), measure_nadir(fine, 1)),
                     (measure_rocof(coarse, 1, 0.167), measure_rocof(fine, 1, 0.167))):
            assert abs(a - b) <= 1e-3 * abs(b)

    def test_batch_matches_single(self):
        """批量仿真与逐个仿真结果一致"""
        op2 = default_operating_point(self.case, load_scale=1.05)
        batch = simulate_trips(self.case, [self.op, op2], "G31", self.sim)
        metrics = batch.metrics()
        for op, m in zip((self.op, op2), metrics):
            single = measure_metrics(simulate_trip(self.case, op, "G31", self.sim), 3, 0.167)
            assert m.nadir == single.nadir
            assert m.rocof == single.rocof

    def test_coi_measurement(self):
        trace = simulate_trip(self.case, self.op, "G11", self.sim)
        assert measure_nadir(trace, COI) == float(trace.coi[trace.event_index:].min())

    def test_final_states(self):
        trace = simulate_trip(self.case, self.op, "G11", self.sim)
        units = [s.unit_id for s in trace.final_states]
        assert "G11" not in units
        assert len(units) == len(self.case.units()) - 1
        assert all(s.frequency > 0 for s in trace.final_states)

    def test_abort(self):
        """剩余惯量极小时积分越限中止"""
        doc = two_gen_document(load=60.0)
        doc["gen_groups"][0]["inertia"] = 0.01
        case = case_from(doc)
        op = operating_point(case, [5.0, 55.0])
        with pytest.raises(SimulationAbortedError) as info:
            simulate_trip(case, op, "G21", SimConfig(horizon=5.0))
        assert info.value.machine == "G1"
        assert info.value.frequency < 50.0
        assert info.value.time > 1.0

    def test_infeasible_start(self):
        op = default_operating_point(self.case)
        op.group_output[1] += 10.0
        with pytest.raises(SimulationError):
            simulate_trip(self.case, op, "G21", self.sim)


class TestExport:
    """轨迹导出测试"""

    def test_columns_and_determinism(self, tmp_path):
        case = load_case()
        op = default_operating_point(case)
        sim = SimConfig(horizon=2.0)
        trace = simulate_trip(case, op, "G31", sim)
        first = export_trace(trace, tmp_path / "a.tsv").read_bytes()
        second = export_trace(simulate_trip(case, op, "G31", sim), tmp_path / "b.tsv").read_bytes()
        assert first == second
        lines = first.decode().splitlines()
        assert lines[0].split("\t") == ["time"] + [f"bus_{b}" for b in range(1, 10)]
        assert len(lines) == len(trace.times) + 1

    def test_rocof_series(self):
        t = np.arange(0, 1001) * 0.001
        trace = synthetic_trace(60.0 - 0.2 * t)
        times, slopes = rocof_series(trace, 1, 0.1)
        assert len(times) == len(slopes) == 901
        np.testing.assert_allclose(slopes, -0.2, rtol=1e-9)

    def test_rocof_series_one_step_window(self):
        trace = synthetic_trace(np.linspace(60.0, 59.0, 101))
        with pytest.raises(SimulationError):
            rocof_series(trace, 1, 0.001)


class TestBusFrequency:
    """母线频率测试"""

    def setup_method(self):
        self.case = load_case()
        self.op = default_operating_point(self.case)

    def test_generator_bus_follows_machines(self):
        """发电机母线频率等于本母线机组频率，与暂态电抗无关"""
        assert all(g.xd_prime > 0 for g in self.case.gen_groups)
        trace = simulate_trip(self.case, self.op, "G21", SimConfig(horizon=3.0))
        for bus, unit in ((1, "G11"), (2, "G22"), (3, "G31")):
            assert np.max(np.abs(trace.bus_freq[bus] - trace.machine_freq[unit])) < 1e-12

    def test_weights_normalized(self):
        weights = _bus_weights(self.case, [0, 1, 2], [2, 4, 3])
        np.testing.assert_allclose(weights.sum(axis=1), 1.0, rtol=1e-12)
        np.testing.assert_array_equal(weights[0], [1.0, 0.0, 0.0])
        assert np.all(weights[3:] > 0)

    def test_load_bus_inertia_over_reactance(self):
        """负荷母线取相邻机组 H·S/x 加权平均"""
        doc = two_gen_document()
        doc["lines"][1]["x"] = 0.2
        doc["gen_groups"][1].update(unit_count=2, p_max=100.0)
        case = case_from(doc)
        weights = _bus_weights(case, [0, 1], [1, 1])
        np.testing.assert_allclose(weights[2], [6000.0 / 8400.0, 2400.0 / 8400.0], rtol=1e-12)

        op = operating_point(case, [20.0, 20.0])
        trace = simulate_trip(case, op, "G21", SimConfig(horizon=3.0))
        expected = (6000.0 * trace.machine_freq["G11"] + 2400.0 * trace.machine_freq["G22"]) / 8400.0
        np.testing.assert_allclose(trace.bus_freq[3], expected, rtol=0, atol=1e-12)
