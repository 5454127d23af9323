"""
ReLU 多层感知机频率预测器
前向计算、均方误差、反向传播梯度、训练与评估
"""
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import yaml

from config.logger import get_logger
from core.dataset import DatasetRow, split
from core.exceptions import ConfigError, ModelDimensionError, ModelError, TrainingDivergedError

logger = get_logger("predictor")

MODEL_FORMAT = "fcopf-mlp"


class OptimizerKind(Enum):
    """优化器类型"""
    ADAM = "adam"
    SGD_MOMENTUM = "sgd_momentum"


@dataclass
class TrainConfig:
    """训练配置"""
    epochs: int = 500
    batch_size: int = 64
    learning_rate: float = 1e-3
    lr_decay: float = 1.0  # 每轮学习率乘以该系数
    optimizer: OptimizerKind = OptimizerKind.ADAM
    momentum: float = 0.9
    seed: int = 0
    patience: int = 50
    validation_fraction: float = 0.1

    def __post_init__(self):
        if isinstance(self.optimizer, str):
            self.optimizer = OptimizerKind(self.optimizer)

    def validate(self):
        for name in ("epochs", "batch_size", "patience"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} 必须为正整数")
        if self.learning_rate <= 0:
            raise ConfigError("学习率必须大于0")
        if not 0 < self.lr_decay <= 1:
            raise ConfigError("学习率衰减系数必须位于 (0, 1]")
        if not 0 < self.validation_fraction < 1:
            raise ConfigError("验证集比例必须位于 (0, 1)")


@dataclass
class MlpModel:
    """
    预测器参数，约定 z = a·W + b（W 形状为 输入维 × 输出维）
    输入按 (x − in_shift)/in_scale 标准化，输出按 y·out_scale + out_shift 反标准化
    """
    dims: List[int]
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    in_shift: np.ndarray
    in_scale: np.ndarray
    out_shift: np.ndarray
    out_scale: np.ndarray
    fingerprint: str = ""
    feature_names: List[str] = field(default_factory=list)
    contingencies: List[str] = field(default_factory=list)

    def __post_init__(self):
        self.dims = [int(d) for d in self.dims]
        self.weights = [np.asarray(w, dtype=float) for w in self.weights]
        self.biases = [np.asarray(b, dtype=float) for b in self.biases]
        for name in ("in_shift", "in_scale", "out_shift", "out_scale"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))

        if len(self.dims) < 2 or len(self.weights) != len(self.dims) - 1 \
                or len(self.biases) != len(self.weights):
            raise ModelDimensionError(f"层数与维度不一致: dims={self.dims}")
        for m, (w, b) in enumerate(zip(self.weights, self.biases)):
            expected = (self.dims[m], self.dims[m + 1])
            if w.shape != expected or b.shape != (self.dims[m + 1],):
                raise ModelDimensionError(f"第 {m + 1} 层形状应为 {expected}，实际 {w.shape}/{b.shape}")
        if self.in_shift.shape != (self.dims[0],) or self.in_scale.shape != (self.dims[0],):
            raise ModelDimensionError("输入标准化参数维度错误")
        if self.out_shift.shape != (self.dims[-1],) or self.out_scale.shape != (self.dims[-1],):
            raise ModelDimensionError("输出反标准化参数维度错误")
        if np.any(self.in_scale <= 0) or np.any(self.out_scale <= 0):
            raise ModelError("标准化尺度必须大于0")

    @property
    def n_hidden(self) -> int:
        return len(self.dims) - 2

    def require_frequency_outputs(self):
        if self.dims[-1] != 2:
            raise ModelDimensionError(f"频率预测器输出维度必须为2 (nadir, rocof)，实际 {self.dims[-1]}")

    @classmethod
    def zeros(cls, dims: Sequence[int]) -> "MlpModel":
        """全零权重、恒等标准化的模型"""
        dims = list(dims)
        return cls(
            dims=dims,
            weights=[np.zeros((dims[m], dims[m + 1])) for m in range(len(dims) - 1)],
            biases=[np.zeros(dims[m + 1]) for m in range(len(dims) - 1)],
            in_shift=np.zeros(dims[0]), in_scale=np.ones(dims[0]),
            out_shift=np.zeros(dims[-1]), out_scale=np.ones(dims[-1]),
        )


@dataclass
class TrainingHistory:
    """逐轮训练/验证误差（标准化尺度）"""
    train_mse: List[float] = field(default_factory=list)
    validation_mse: List[float] = field(default_factory=list)
    best_epoch: int = 0
    best_validation_mse: float = float("inf")


@dataclass
class EvaluationReport:
    """各输出的平均绝对误差、最大误差与平均百分比误差"""
    mae: np.ndarray
    max_error: np.ndarray
    percent_error: np.ndarray
    rows: int

    def as_dict(self) -> Dict[str, Any]:
        return {
            "rows": self.rows,
            "nadir": {"mae": float(self.mae[0]), "max_error": float(self.max_error[0]),
                      "percent_error": float(self.percent_error[0])},
            "rocof": {"mae": float(self.mae[1]), "max_error": float(self.max_error[1]),
                      "percent_error": float(self.percent_error[1])},
        }


def _stack(rows: Sequence[DatasetRow]) -> Tuple[np.ndarray, np.ndarray]:
    return (np.array([r.features for r in rows], dtype=float),
            np.array([r.labels for r in rows], dtype=float))


def _forward_normalized(weights: Sequence[np.ndarray], biases: Sequence[np.ndarray],
                        a: np.ndarray) -> np.ndarray:
    for w, b in zip(weights[:-1], biases[:-1]):
        a = np.maximum(a @ w + b, 0.0)
    return a @ weights[-1] + biases[-1]


def forward(model: MlpModel, x: Union[Sequence[float], np.ndarray]) -> np.ndarray:
    """
    前向计算：标准化 → 隐藏层 ReLU → 仿射输出层 → 反标准化

    Args:
        model: 预测器
        x: 原始特征，形状 (d_in,) 或 (n, d_in)

    Returns:
        输出，形状 (d_out,) 或 (n, d_out)；频率预测器为 (nadir, rocof)
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != model.dims[0] or x.ndim > 2:
        raise ModelDimensionError(f"输入维度应为 {model.dims[0]}，实际 {x.shape}")
    xn = (x - model.in_shift) / model.in_scale
    out = _forward_normalized(model.weights, model.biases, xn)
    return out * model.out_scale + model.out_shift


def predict(model: MlpModel, x: Sequence[float]) -> Tuple[float, float]:
    """预测 (nadir Hz, rocof Hz/s)"""
    model.require_frequency_outputs()
    nadir, rocof = forward(model, x)
    return float(nadir), float(rocof)


def mse(predictions: np.ndarray, labels: np.ndarray) -> float:
    """均方误差：(1/n)·Σ‖ŷ − y‖²，对两个输出分量求和"""
    predictions = np.atleast_2d(np.asarray(predictions, dtype=float))
    labels = np.atleast_2d(np.asarray(labels, dtype=float))
    if predictions.size == 0 or labels.size == 0:
        raise ModelError("均方误差输入为空")
    if predictions.shape != labels.shape:
        raise ModelDimensionError(f"预测与标签形状不一致: {predictions.shape} vs {labels.shape}")
    return float(((predictions - labels) ** 2).sum(axis=1).mean())


def batch_loss(model: MlpModel, features: np.ndarray, labels: np.ndarray) -> float:
    """标准化尺度上的训练损失"""
    xn = (np.asarray(features, dtype=float) - model.in_shift) / model.in_scale
    yn = (np.asarray(labels, dtype=float) - model.out_shift) / model.out_scale
    return mse(_forward_normalized(model.weights, model.biases, xn), yn)


def _torch_loss(params: List[torch.Tensor], x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    a = x
    n_layers = len(params) // 2
    for m in range(n_layers - 1):
        a = torch.relu(a @ params[2 * m] + params[2 * m + 1])
    out = a @ params[-2] + params[-1]
    return ((out - y) ** 2).sum(dim=1).mean()


def _to_params(model: MlpModel) -> List[torch.Tensor]:
    params = []
    for w, b in zip(model.weights, model.biases):
        params.append(torch.tensor(w, dtype=torch.float64, requires_grad=True))
        params.append(torch.tensor(b, dtype=torch.float64, requires_grad=True))
    return params


def _to_numpy(x):
    """转换为numpy数组"""
    return x.detach().cpu().numpy() if torch.is_tensor(x) else np.asarray(x)


def gradient(model: MlpModel, features: np.ndarray,
             labels: np.ndarray) -> List[Tuple[np.ndarray, np.ndarray]]:
    """
    标准化尺度均方误差对各层 W、b 的精确梯度（ReLU 在 0 处取次梯度 0）

    Returns:
        [(dW_1, db_1), ..., (dW_{NL+1}, db_{NL+1})]
    """
    features = np.atleast_2d(np.asarray(features, dtype=float))
    labels = np.atleast_2d(np.asarray(labels, dtype=float))
    if features.shape[0] == 0:
        raise ModelError("梯度计算的批次为空")
    if features.shape[1] != model.dims[0] or labels.shape != (features.shape[0], model.dims[-1]):
        raise ModelDimensionError("批次维度与模型不一致")
    xn = torch.tensor((features - model.in_shift) / model.in_scale, dtype=torch.float64)
    yn = torch.tensor((labels - model.out_shift) / model.out_scale, dtype=torch.float64)
    params = _to_params(model)
    _torch_loss(params, xn, yn).backward()
    grads = [_to_numpy(p.grad) for p in params]
    return [(grads[2 * m], grads[2 * m + 1]) for m in range(len(model.weights))]


def _fit_affine(values: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    shift = values.mean(axis=0)
    scale = values.std(axis=0)
    scale = np.where(scale > 1e-12, scale, 1.0)
    return shift, scale


def train(rows: Sequence[DatasetRow], dims: Sequence[int], config: Optional[TrainConfig] = None,
          fingerprint: str = "", feature_names: Optional[List[str]] = None,
          contingencies: Optional[List[str]] = None) -> Tuple[MlpModel, TrainingHistory]:
    """
    训练预测器，返回验证误差最小的模型与训练历史

    Args:
        rows: 数据集
        dims: [d_in, d_1, ..., d_NL, 2]
        config: 训练配置
    """
    config = config or TrainConfig()
    config.validate()
    dims = [int(d) for d in dims]
    if not rows:
        raise ModelError("训练数据为空")
    features, labels = _stack(rows)
    if len(dims) < 2 or dims[0] != features.shape[1] or dims[-1] != labels.shape[1]:
        raise ModelDimensionError(f"网络维度 {dims} 与数据维度 {features.shape[1]}→{labels.shape[1]} 不一致")

    train_idx, val_idx = split(list(range(len(rows))), 1.0 - config.validation_fraction, config.seed)
    if config.batch_size > len(train_idx):
        raise ConfigError(f"批大小 {config.batch_size} 超过训练集大小 {len(train_idx)}")
    in_shift, in_scale = _fit_affine(features[train_idx])
    out_shift, out_scale = _fit_affine(labels[train_idx])

    rng = np.random.default_rng(config.seed)
    torch.manual_seed(config.seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    model = MlpModel(dims=dims, weights=weights, biases=biases, in_shift=in_shift,
                     in_scale=in_scale, out_shift=out_shift, out_scale=out_scale,
                     fingerprint=fingerprint, feature_names=list(feature_names or []),
                     contingencies=list(contingencies or []))

    x_all = torch.tensor((features - in_shift) / in_scale, dtype=torch.float64)
    y_all = torch.tensor((labels - out_shift) / out_scale, dtype=torch.float64)
    x_train, y_train = x_all[train_idx], y_all[train_idx]
    x_val, y_val = x_all[val_idx], y_all[val_idx]

    params = _to_params(model)
    if config.optimizer == OptimizerKind.ADAM:
        optimizer = torch.optim.Adam(params, lr=config.learning_rate)
    else:
        optimizer = torch.optim.SGD(params, lr=config.learning_rate, momentum=config.momentum)
    scheduler = torch.optim.lr_scheduler.ExponentialLR(optimizer, gamma=config.lr_decay)

    history = TrainingHistory()
    best_state = [p.detach().clone() for p in params]
    stale = 0
    n_train = len(train_idx)
    threads = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        for epoch in range(1, config.epochs + 1):
            order = rng.permutation(n_train)
            for start in range(0, n_train, config.batch_size):
                idx = torch.as_tensor(order[start:start + config.batch_size])
                optimizer.zero_grad()
                loss = _torch_loss(params, x_train[idx], y_train[idx])
                loss.backward()
                optimizer.step()
            scheduler.step()

            with torch.no_grad():
                train_mse = float(_torch_loss(params, x_train, y_train))
                val_mse = float(_torch_loss(params, x_val, y_val))
            if not (np.isfinite(train_mse) and np.isfinite(val_mse)):
                raise TrainingDivergedError(epoch, f"损失为非有限值 (train={train_mse}, val={val_mse})")
            history.train_mse.append(train_mse)
            history.validation_mse.append(val_mse)

            if val_mse < history.best_validation_mse:
                history.best_validation_mse = val_mse
                history.best_epoch = epoch
                best_state = [p.detach().clone() for p in params]
                stale = 0
            else:
                stale += 1
                if stale >= config.patience:
                    logger.info(f"第 {epoch} 轮触发早停，最佳轮次 {history.best_epoch}")
                    break
            if epoch % 50 == 0:
                logger.debug(f"第 {epoch} 轮: train={train_mse:.3e} val={val_mse:.3e}")
    finally:
        torch.set_num_threads(threads)

    model.weights = [_to_numpy(best_state[2 * m]).copy() for m in range(len(weights))]
    model.biases = [_to_numpy(best_state[2 * m + 1]).copy() for m in range(len(weights))]
    logger.info(f"训练完成: 最佳验证MSE {history.best_validation_mse:.3e} (第 {history.best_epoch} 轮)")
    return model, history


def evaluate(model: MlpModel, rows: Sequence[DatasetRow]) -> EvaluationReport:
    """相对仿真标签的平均绝对误差、最大误差与平均百分比误差"""
    if not rows:
        raise ModelError("评估数据为空")
    features, labels = _stack(rows)
    errors = forward(model, features) - labels
    abs_err = np.abs(errors)
    percent = np.zeros(labels.shape[1])
    for k in range(labels.shape[1]):
        nonzero = labels[:, k] != 0
        if nonzero.any():
            percent[k] = float(np.mean(np.abs(errors[nonzero, k] / labels[nonzero, k])) * 100.0)
    return EvaluationReport(mae=abs_err.mean(axis=0), max_error=abs_err.max(axis=0),
                            percent_error=percent, rows=len(rows))


def fold_normalization(model: MlpModel) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    """把输入标准化与输出反标准化并入首末层，得到原始量纲下的权重"""
    weights = [w.copy() for w in model.weights]
    biases = [b.copy() for b in model.biases]
    biases[0] = biases[0] - (model.in_shift / model.in_scale) @ weights[0]
    weights[0] = weights[0] / model.in_scale[:, None]
    weights[-1] = weights[-1] * model.out_scale[None, :]
    biases[-1] = biases[-1] * model.out_scale + model.out_shift
    return weights, biases


def folded_model(model: MlpModel) -> MlpModel:
    """标准化已并入权重、恒等标准化的等价模型"""
    weights, biases = fold_normalization(model)
    return MlpModel(dims=list(model.dims), weights=weights, biases=biases,
                    in_shift=np.zeros(model.dims[0]), in_scale=np.ones(model.dims[0]),
                    out_shift=np.zeros(model.dims[-1]), out_scale=np.ones(model.dims[-1]),
                    fingerprint=model.fingerprint, feature_names=list(model.feature_names),
                    contingencies=list(model.contingencies))


def save_model(model: MlpModel, path: Union[str, Path]) -> Path:
    """保存为YAML，实数保留完整精度"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    document = {
        "format": MODEL_FORMAT,
        "version": 1,
        "dims": list(model.dims),
        "fingerprint": model.fingerprint,
        "feature_names": list(model.feature_names),
        "contingencies": list(model.contingencies),
        "normalization": {
            "in_shift": model.in_shift.tolist(), "in_scale": model.in_scale.tolist(),
            "out_shift": model.out_shift.tolist(), "out_scale": model.out_scale.tolist(),
        },
        "layers": [{"weights": w.tolist(), "bias": b.tolist()}
                   for w, b in zip(model.weights, model.biases)],
    }
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        yaml.safe_dump(document, f, sort_keys=False, allow_unicode=True)
    return path


def load_model(path: Union[str, Path]) -> MlpModel:
    path = Path(path)
    if not path.exists():
        raise ModelError(f"模型文件不存在: {path}")
    with open(path, "r", encoding="utf-8") as f:
        document = yaml.safe_load(f)
    if not isinstance(document, dict) or document.get("format") != MODEL_FORMAT:
        raise ModelError(f"{path}: 不是预测器模型文件")
    try:
        norm = document["normalization"]
        dims = document["dims"]
        layers = document["layers"]
        return MlpModel(
            dims=dims,
            weights=[np.array(layer["weights"], dtype=float).reshape(dims[m], dims[m + 1])
                     for m, layer in enumerate(layers)],
            biases=[np.array(layer["bias"], dtype=float) for layer in layers],
            in_shift=norm["in_shift"], in_scale=norm["in_scale"],
            out_shift=norm["out_shift"], out_scale=norm["out_scale"],
            fingerprint=document.get("fingerprint", ""),
            feature_names=document.get("feature_names", []),
            contingencies=document.get("contingencies", []),
        )
    except (KeyError, TypeError, ValueError, IndexError) as e:
        raise ModelError(f"{path}: 模型文件内容错误: {e}")
