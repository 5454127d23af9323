"""
对比报告输出
制表符分隔的对比表、YAML摘要，以及各模型的频率/RoCoF曲线（SVG）
"""
import io
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import yaml  # noqa: E402

from api.harness import ComparisonReport  # noqa: E402
from config.logger import get_logger  # noqa: E402
from core.dynamics import COI, FrequencyTrace, rocof_series  # noqa: E402
from core.exceptions import FcopfError  # noqa: E402
from core.opf import ModelKind  # noqa: E402

logger = get_logger("report")

# 固定SVG内部id，保证重复输出逐字节一致
matplotlib.rcParams["svg.hashsalt"] = "fcopf-report"
matplotlib.rcParams["svg.fonttype"] = "none"

NOT_AVAILABLE = "N/A"


def _fmt(value: Any) -> str:
    if value is None:
        return NOT_AVAILABLE
    if isinstance(value, bool):
        return "pass" if value else "fail"
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def comparison_table(report: ComparisonReport, include_timings: bool = False) -> List[List[str]]:
    """对比表：表头 + 每个模型在每个回代故障下一行，无预测的单元格为 N/A"""
    header = ["model", "status", "total_cost", "quadratic_cost"]
    if include_timings:
        header += ["solve_time", "nodes"]
    header += [f"P_{name}" for name in report.group_names]
    header += ["contingency", "predicted_nadir", "simulated_nadir", "nadir_error_pct",
               "predicted_rocof", "simulated_rocof", "rocof_error_pct", "nadir_ok", "rocof_ok"]
    rows = [header]
    for o in report.outcomes:
        d = o.dispatch
        for v in o.validations:
            meets = o.meets_by_contingency[v.contingency]
            row = [o.kind.label, d.status.value, _fmt(float(d.total_cost)), _fmt(float(d.quadratic_cost))]
            if include_timings:
                row += [_fmt(float(d.solve_time)), str(d.nodes)]
            row += [_fmt(float(p)) for p in d.group_output]
            row += [v.contingency, _fmt(v.predicted_nadir), _fmt(v.simulated.nadir), _fmt(v.nadir_error),
                    _fmt(v.predicted_rocof), _fmt(v.simulated.rocof), _fmt(v.rocof_error),
                    _fmt(meets["nadir"]), _fmt(meets["rocof"])]
            rows.append(row)
    return rows


def _data_comment(columns: Dict[str, np.ndarray]) -> str:
    names = list(columns)
    lines = ["<!-- data", "\t".join(names)]
    for values in zip(*columns.values()):
        lines.append("\t".join(f"{float(v):.6f}" for v in values))
    lines.append("-->")
    return "\n".join(lines) + "\n"


def _save_svg(fig, path: Path, columns: Dict[str, np.ndarray]):
    """保存SVG并在XML声明之后嵌入数据表注释"""
    buffer = io.StringIO()
    fig.savefig(buffer, format="svg", metadata={"Date": None})
    plt.close(fig)
    text = buffer.getvalue()
    head, sep, rest = text.partition("?>\n")
    if not sep:
        head, rest = "", text
    else:
        head += sep
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(head + _data_comment(columns) + rest)


def plot_frequency(trace: FrequencyTrace, kind: ModelKind, bus: Any, path: Path,
                   nadir_threshold: Optional[float] = None, decimation: int = 10) -> Path:
    times = trace.times[::decimation]
    series = trace.series(bus)[::decimation]
    fig, ax = plt.subplots(figsize=(7.2, 4.4))
    ax.plot(times, series, linewidth=1.5, color="steelblue", label=f"bus {bus}")
    if nadir_threshold is not None:
        ax.axhline(nadir_threshold, color="red", linestyle="--", linewidth=1.0, label="nadir threshold")
    ax.set_xlabel("Time (s)")
    ax.set_ylabel("Frequency (Hz)")
    ax.set_title(f"{kind.label}: frequency after tripping {trace.tripped_unit}")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    _save_svg(fig, path, {"time": times, "frequency": series})
    return path


def plot_rocof(trace: FrequencyTrace, kind: ModelKind, bus: Any, window: float, path: Path,
               rocof_threshold: Optional[float] = None, decimation: int = 10) -> Path:
    times, slopes = rocof_series(trace, bus, window)
    times, slopes = times[::decimation], slopes[::decimation]
    fig, ax = plt.subplots(figsize=(7.2, 4.4))
    ax.plot(times, slopes, linewidth=1.5, color="darkorange", label=f"bus {bus}, window {window:g} s")
    if rocof_threshold is not None:
        ax.axhline(rocof_threshold, color="red", linestyle="--", linewidth=1.0, label="RoCoF threshold")
    ax.set_xlabel("Window start (s)")
    ax.set_ylabel("RoCoF (Hz/s)")
    ax.set_title(f"{kind.label}: windowed RoCoF after tripping {trace.tripped_unit}")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    _save_svg(fig, path, {"time": times, "rocof": slopes})
    return path


def emit_report(report: ComparisonReport, output_dir: Union[str, Path],
                traces: Optional[Dict[ModelKind, FrequencyTrace]] = None,
                decimation: int = 10, include_timings: bool = False,
                rocof_window: float = 0.167) -> List[Path]:
    """
    写出对比报告

    Args:
        report: 对比结果
        output_dir: 输出目录
        traces: 各模型的频率轨迹，默认取报告中回代仿真的轨迹（评估故障不是最严重故障时，
            另以 _<机组> 后缀输出最严重故障下的曲线）；为空字典时只写表格与摘要
        decimation: 曲线抽样间隔
        include_timings: 是否输出求解时间

    Returns:
        写出的文件列表
    """
    output_dir = Path(output_dir)
    if traces is None:
        plots = [(kind, trace, "") for kind, trace in report.traces.items()]
        plots += [(kind, trace, f"_{trace.tripped_unit}") for kind, trace in report.critical_traces.items()]
    else:
        plots = [(kind, trace, "") for kind, trace in traces.items()]
    try:
        output_dir.mkdir(parents=True, exist_ok=True)
        written = []

        table = output_dir / "comparison.tsv"
        with open(table, "w", encoding="utf-8", newline="\n") as f:
            for row in comparison_table(report, include_timings):
                f.write("\t".join(row) + "\n")
        written.append(table)

        summary = output_dir / "summary.yaml"
        with open(summary, "w", encoding="utf-8", newline="\n") as f:
            yaml.safe_dump(report.to_dict(include_timings), f, sort_keys=False, allow_unicode=True)
        written.append(summary)

        for kind, trace, suffix in plots:
            outcome = report.outcome(kind) if kind in [o.kind for o in report.outcomes] else None
            bus = COI if outcome and outcome.validation.simulated.bus == COI else trace.disturbance_bus
            name = f"{kind.value}{suffix}.svg"
            written.append(plot_frequency(trace, kind, bus, output_dir / f"freq_{name}",
                                          report.thresholds.nadir_threshold, decimation))
            written.append(plot_rocof(trace, kind, bus, rocof_window, output_dir / f"rocof_{name}",
                                      report.thresholds.rocof_threshold, decimation))
    except OSError as e:
        raise FcopfError(f"报告写入失败 {output_dir}: {e}")

    logger.info(f"报告已写入 {output_dir}: {len(written)} 个文件")
    return written
