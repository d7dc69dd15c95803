"""STBP 直接训练

全时域前向（跨时间步的膜电位不截断）+ 平均 logits 交叉熵 + 替代梯度反传，
SGD 动量优化。训练结果完全由 (seed, 数据集, 配置) 决定。
"""
from typing import List, Tuple

import numpy as np

from app.engine import ops
from app.engine.tensor import Tensor
from app.models.architecture import ArchitectureSpec
from app.models.configs import TrainConfig
from app.models.dataset import Dataset
from app.models.results import EpochRecord
from app.snn.architectures import build_model
from app.snn.model import LifState, SnnModel, forward_window
from app.utils.errors import ConfigError, NumericError, TrainingDivergedError
from app.utils.logger import logger


class SgdMomentum:
    """带动量与 L2 权重衰减的 SGD：v ← μ·v + (g + λ·θ)，θ ← θ - lr·v"""

    def __init__(self, params: List[Tensor], learning_rate: float, momentum: float, weight_decay: float):
        self.params = params
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = [np.zeros_like(p.data) for p in params]

    def zero_grad(self) -> None:
        for param in self.params:
            param.zero_grad()

    def step(self) -> None:
        for param, velocity in zip(self.params, self.velocity):
            grad = np.zeros_like(param.data) if param.grad is None else param.grad
            if self.weight_decay:
                grad = grad + self.weight_decay * param.data
            velocity *= self.momentum
            velocity += grad
            param.data -= self.learning_rate * velocity


def _apply_overrides(model: SnnModel, cfg: TrainConfig) -> ArchitectureSpec:
    """训练期间临时覆盖 T 与替代梯度半宽，返回原结构描述以便恢复"""
    original = model.architecture
    update = {}
    if cfg.timesteps is not None:
        update["timesteps"] = cfg.timesteps
    if cfg.surrogate_width is not None:
        update["surrogate_width"] = cfg.surrogate_width
    if update:
        model.architecture = model.architecture.model_copy(update=update)
    return original


def train_stbp(model: SnnModel, dataset: Dataset, cfg: TrainConfig) -> Tuple[SnnModel, List[EpochRecord]]:
    """
    用 STBP 训练模型（原地更新参数）

    Args:
        model: 待训练模型
        dataset: 训练集，类别数必须与模型一致
        cfg: 训练参数；seed 决定数据顺序

    Returns:
        (训练后的模型, 每轮的损失与准确率)

    Raises:
        ConfigError: 数据集类别数或输入形状与模型不一致
        TrainingDivergedError: 损失出现非有限值
    """
    if dataset.num_classes != model.num_classes:
        raise ConfigError(f"数据集类别数 {dataset.num_classes} 与模型类别数 {model.num_classes} 不一致")
    if dataset.sample_shape != model.input_shape:
        raise ConfigError(f"数据集样本形状 {dataset.sample_shape} 与模型输入 {model.input_shape} 不一致")
    if len(dataset) == 0:
        raise ConfigError("训练集为空")

    original_architecture = _apply_overrides(model, cfg)
    rng = np.random.default_rng(cfg.seed)
    model.set_trainable(True)
    optimizer = SgdMomentum(model.parameters(), cfg.learning_rate, cfg.momentum, cfg.weight_decay)
    history: List[EpochRecord] = []
    logger.info(
        f"开始 STBP 训练: arch={model.architecture.name}, T={model.timesteps}, samples={len(dataset)}, "
        f"epochs={cfg.epochs}, lr={cfg.learning_rate}"
    )

    try:
        for epoch in range(1, cfg.epochs + 1):
            order = rng.permutation(len(dataset))
            total_loss = 0.0
            correct = 0
            for start in range(0, len(order), cfg.batch_size):
                indices = order[start:start + cfg.batch_size]
                images = Tensor(dataset.images[indices])
                labels = dataset.labels[indices]
                try:
                    output, _ = forward_window(
                        model, images, LifState.fresh(model, len(indices)), 1, model.timesteps,
                        detach_carry=False, training=True,
                    )
                    loss = ops.cross_entropy(output.logits_mean, labels)
                    optimizer.zero_grad()
                    loss.backward()
                except NumericError as e:
                    raise TrainingDivergedError(epoch, f"训练在第 {epoch} 轮发散: {e}") from e
                optimizer.step()
                total_loss += loss.item() * len(indices)
                correct += int(np.sum(np.argmax(output.logits_mean.data, axis=1) == labels))

            epoch_loss = total_loss / len(dataset)
            if not np.isfinite(epoch_loss):
                raise TrainingDivergedError(epoch)
            record = EpochRecord(epoch=epoch, loss=epoch_loss, accuracy=correct / len(dataset))
            history.append(record)
            logger.info(f"epoch {epoch}/{cfg.epochs}: loss={record.loss:.4f}, acc={record.accuracy:.4f}")
    finally:
        model.set_trainable(False)
        model.architecture = original_architecture

    return model, history


def train_surrogate(arch_of: SnnModel, dataset: Dataset, cfg: TrainConfig) -> SnnModel:
    """
    训练黑盒场景下的替代模型：与受害模型结构相同，参数独立初始化

    Args:
        arch_of: 只读取其结构描述的受害模型
        dataset: 训练集
        cfg: 训练参数，seed 应与受害模型不同

    Returns:
        训练后的替代模型
    """
    if arch_of.seed is not None and cfg.seed == arch_of.seed:
        logger.warning(f"替代模型种子 {cfg.seed} 与受害模型相同，将得到完全相同的模型")
    surrogate = build_model(arch_of.architecture, cfg.seed)
    surrogate, _ = train_stbp(surrogate, dataset, cfg)
    return surrogate
