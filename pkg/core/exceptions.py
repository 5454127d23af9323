"""
FCOPF 工具链异常定义
所有领域错误都继承自 FcopfError，命令行据此返回退出码 1
"""
from typing import Optional


class FcopfError(Exception):
    """FCOPF异常基类"""
    pass


class ConfigError(FcopfError):
    """配置错误"""
    pass


class CaseSchemaError(FcopfError):
    """算例文件结构错误，带字段路径"""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


class GridError(FcopfError):
    """电网模型错误"""
    pass


class UnknownUnitError(GridError):
    """机组编号不存在"""
    pass


class NetworkError(GridError):
    """网络拓扑错误（不连通、导纳矩阵奇异）"""
    pass


class UnbalancedInjectionError(NetworkError):
    """节点注入功率不平衡"""
    pass


class SimulationError(FcopfError):
    """仿真错误"""
    pass


class SimulationAbortedError(SimulationError):
    """积分发散，频率越出允许范围"""

    def __init__(self, message: str, time: float, machine: Optional[str] = None,
                 frequency: Optional[float] = None):
        self.time = time
        self.machine = machine
        self.frequency = frequency
        super().__init__(message)


class DatasetError(FcopfError):
    """数据集错误"""
    pass


class DatasetFormatError(DatasetError):
    """数据集文件格式错误"""
    pass


class FingerprintMismatchError(DatasetError):
    """算例指纹不匹配"""
    pass


class RangesInfeasibleError(DatasetError):
    """采样范围内不存在功率平衡的运行点"""
    pass


class ModelError(FcopfError):
    """预测模型错误"""
    pass


class ModelDimensionError(ModelError):
    """维度不匹配"""
    pass


class TrainingDivergedError(ModelError):
    """训练发散"""

    def __init__(self, epoch: int, message: str):
        self.epoch = epoch
        super().__init__(f"第 {epoch} 轮: {message}")


class EncodingError(FcopfError):
    """网络MILP编码错误"""
    pass


class SolverError(FcopfError):
    """求解器错误"""
    pass


class SolverNumericalError(SolverError):
    """数值失效，附带基矩阵条件数"""

    def __init__(self, message: str, condition: Optional[float] = None):
        self.condition = condition
        if condition is not None:
            message = f"{message} (条件数 {condition:.3e})"
        super().__init__(message)


class DispatchError(FcopfError):
    """调度结果错误"""
    pass


class DispatchVerificationError(DispatchError):
    """调度结果复核失败（意味着求解器缺陷）"""
    pass


class PipelineStageError(FcopfError):
    """流水线阶段失败"""

    def __init__(self, stage: str, instance: str, cause: Exception):
        self.stage = stage
        self.instance = instance
        self.cause = cause
        super().__init__(f"阶段 {stage} [{instance}] 失败: {cause}")
