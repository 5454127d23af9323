"""
运行指标收集模块
记录流水线各阶段耗时、求解与仿真计数，供日志与运行摘要使用
"""
import json
import statistics
import threading
import time
from collections import defaultdict, deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional


class MetricType(Enum):
    """指标类型"""
    COUNTER = "counter"
    GAUGE = "gauge"
    TIMER = "timer"


@dataclass
class MetricValue:
    """指标值"""
    name: str
    value: float
    timestamp: float
    labels: Dict[str, str] = field(default_factory=dict)
    metric_type: MetricType = MetricType.GAUGE


def _key(name: str, labels: Optional[Dict[str, str]]) -> str:
    return f"{name}:{json.dumps(labels or {}, sort_keys=True)}"


class MetricsCollector:
    """指标收集器"""

    def __init__(self, max_history_size: int = 1000):
        self.max_history_size = max_history_size
        self.metrics_history: deque = deque(maxlen=max_history_size)
        self.current_metrics: Dict[str, float] = {}
        self.counters: Dict[str, int] = defaultdict(int)
        self.timers: Dict[str, List[float]] = defaultdict(list)
        self._lock = threading.RLock()
        self._start_time = time.time()

    def record_metric(self, name: str, value: float,
                      labels: Optional[Dict[str, str]] = None,
                      metric_type: MetricType = MetricType.GAUGE):
        """记录指标"""
        with self._lock:
            self.metrics_history.append(MetricValue(
                name=name,
                value=value,
                timestamp=time.time(),
                labels=labels or {},
                metric_type=metric_type,
            ))
            self.current_metrics[name] = value

    def increment_counter(self, name: str, value: int = 1,
                          labels: Optional[Dict[str, str]] = None):
        """增加计数器"""
        with self._lock:
            key = _key(name, labels)
            self.counters[key] += value
            self.record_metric(name, self.counters[key], labels, MetricType.COUNTER)

    def get_counter(self, name: str, labels: Optional[Dict[str, str]] = None) -> int:
        with self._lock:
            return self.counters.get(_key(name, labels), 0)

    def record_timer(self, name: str, duration: float,
                     labels: Optional[Dict[str, str]] = None):
        """记录计时器"""
        with self._lock:
            key = _key(name, labels)
            self.timers[key].append(duration)
            # 只保留最近的100个值
            if len(self.timers[key]) > 100:
                self.timers[key] = self.timers[key][-100:]
            self.record_metric(name, duration, labels, MetricType.TIMER)

    def get_timer_stats(self, name: str,
                        labels: Optional[Dict[str, str]] = None) -> Dict[str, float]:
        """获取计时器统计"""
        with self._lock:
            durations = self.timers.get(_key(name, labels), [])
            if not durations:
                return {'count': 0, 'avg': 0, 'min': 0, 'max': 0,
                        'p50': 0, 'p95': 0, 'p99': 0, 'total': 0}

            ordered = sorted(durations)
            count = len(ordered)
            return {
                'count': count,
                'avg': statistics.mean(ordered),
                'min': ordered[0],
                'max': ordered[-1],
                'p50': ordered[int(count * 0.5)],
                'p95': ordered[int(count * 0.95)],
                'p99': ordered[int(count * 0.99)],
                'total': sum(ordered),
            }

    def record_stage(self, stage: str, duration: float, success: bool):
        """记录流水线阶段"""
        labels = {'stage': stage}
        self.record_timer('stage_duration', duration, labels)
        self.increment_counter('stages_total', labels={'stage': stage, 'success': str(success)})

    def record_solve(self, kind: str, duration: float, nodes: int):
        """记录一次调度模型求解"""
        labels = {'model': kind}
        self.record_timer('solve_duration', duration, labels)
        self.increment_counter('solver_nodes', nodes, labels)

    def get_all_metrics(self) -> Dict[str, Any]:
        """获取所有指标"""
        with self._lock:
            return {
                'current_metrics': self.current_metrics.copy(),
                'counters': dict(self.counters),
                'timers': {key: self.get_timer_stats(*_split_key(key)) for key in self.timers},
                'uptime': time.time() - self._start_time,
            }

    def reset(self):
        with self._lock:
            self.metrics_history.clear()
            self.current_metrics.clear()
            self.counters.clear()
            self.timers.clear()
            self._start_time = time.time()


def _split_key(key: str):
    name, _, labels = key.partition(":")
    return name, json.loads(labels) if labels else None


class MetricsTimer:
    """指标计时器上下文管理器"""

    def __init__(self, collector: MetricsCollector, name: str,
                 labels: Optional[Dict[str, str]] = None):
        self.collector = collector
        self.name = name
        self.labels = labels
        self.start_time: Optional[float] = None
        self.duration = 0.0

    def __enter__(self):
        self.start_time = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        if self.start_time is not None:
            self.duration = time.perf_counter() - self.start_time
            self.collector.record_timer(self.name, self.duration, self.labels)


# 全局收集器
_collector: Optional[MetricsCollector] = None


def get_metrics() -> MetricsCollector:
    global _collector
    if _collector is None:
        _collector = MetricsCollector()
    return _collector
