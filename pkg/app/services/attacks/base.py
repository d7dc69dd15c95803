"""攻击基类"""
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, List, Optional, Tuple, Union

import numpy as np

from app.engine import ops
from app.engine.tensor import Tensor
from app.models.configs import AttackConfig
from app.models.results import AttackResult, WindowTrace
from app.snn.model import LifState, SnnModel, WindowOutput, forward_window, predict
from app.utils.errors import ShapeError

if TYPE_CHECKING:
    from app.services.ampr import MembraneBank


@dataclass
class WindowStep:
    """一次窗口前向 + 反向的结果"""
    output: WindowOutput
    state: LifState
    gradient: np.ndarray
    ce: float
    prediction: int


@dataclass
class Generation:
    """扰动生成阶段的统计量，不含受害模型判定"""
    delta: np.ndarray
    windows_used: int = 0
    timesteps_consumed: int = 0
    runtime_timesteps: int = 0
    backward_passes: int = 0
    accumulated_ce: float = 0.0
    trace: List[WindowTrace] = field(default_factory=list)


class BaseAttack(ABC):
    """
    攻击基类

    子类只实现扰动生成；计时、最终投影与成功判定在 run() 中统一完成。
    所有攻击共用 _window_step 与 _step，保证 w=T 的单窗口 TLBP 与 FGSM 逐位相同。
    """

    def __init__(self, name: str):
        """
        初始化攻击

        Args:
            name: 攻击名称，如 fgsm, pgd, tlbp
        """
        self.name = name

    @abstractmethod
    def generate(
        self,
        model: SnnModel,
        x: Tensor,
        label: int,
        cfg: AttackConfig,
        bank: Optional["MembraneBank"] = None,
    ) -> Generation:
        """
        针对 model 生成扰动

        Args:
            model: 生成扰动所用的模型（白盒为受害模型，黑盒为替代模型）
            x: [1,C,H,W] 干净输入
            label: 真实标签
            cfg: 攻击参数
            bank: 膜电位库（仅 TLBP 使用）

        Returns:
            扰动与统计量
        """
        pass

    def run(
        self,
        model: SnnModel,
        x: Union[np.ndarray, Tensor],
        y: int,
        cfg: AttackConfig,
        bank: Optional["MembraneBank"] = None,
        judge: Optional[SnnModel] = None,
    ) -> AttackResult:
        """
        生成扰动并用 judge（默认即 model）判定是否攻击成功

        耗时只统计扰动生成，不含 judge 的推理。

        Raises:
            ShapeError: 输入形状与模型不一致
            ConfigError: 窗口或预热长度超出模型时间步
        """
        cfg.check_horizon(model.timesteps)
        data = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
        original_shape = data.shape
        if tuple(data.shape) == model.input_shape:
            data = data[None]
        if data.ndim != 4 or data.shape[0] != 1 or tuple(data.shape[1:]) != model.input_shape:
            raise ShapeError(f"攻击输入形状 {original_shape} 与模型输入 {model.input_shape} 不一致")
        clean = Tensor(data)

        started = time.perf_counter_ns()
        generation = self.generate(model, clean, int(y), cfg, bank)
        latency_us = (time.perf_counter_ns() - started) / 1000.0

        delta = generation.delta
        adversarial = np.clip(data + delta, *cfg.pixel_domain)
        judge = judge or model
        prediction, _ = predict(judge, adversarial)
        if cfg.targeted:
            success = prediction == self.target_label(int(y), judge.num_classes)
        else:
            success = prediction != int(y)

        return AttackResult(
            attack=self.name,
            delta=delta.reshape(original_shape),
            adversarial=adversarial.reshape(original_shape),
            success=bool(success),
            prediction=prediction,
            windows_used=generation.windows_used,
            timesteps_consumed=generation.timesteps_consumed,
            runtime_timesteps=generation.runtime_timesteps,
            backward_passes=generation.backward_passes,
            accumulated_ce=generation.accumulated_ce,
            wall_latency_us=latency_us,
            per_window_trace=generation.trace,
        )

    @staticmethod
    def target_label(y: int, num_classes: int) -> int:
        """目标攻击的默认目标类别"""
        return (y + 1) % num_classes

    def _window_step(
        self,
        model: SnnModel,
        x: Tensor,
        delta: np.ndarray,
        label: int,
        state: LifState,
        t_s: int,
        t_e: int,
        cfg: AttackConfig,
    ) -> WindowStep:
        """
        在 x+δ 上前向 t_s..t_e（截断传入的膜电位）并求窗口损失对 δ 的梯度

        非目标攻击上升真实标签的交叉熵；目标攻击下降目标类别的交叉熵。
        返回的 ce 始终是真实标签的交叉熵，用于早停累计。
        """
        delta_var = Tensor(delta, requires_grad=True)
        output, next_state = forward_window(model, x + delta_var, state, t_s, t_e, detach_carry=True)
        ce_true = ops.cross_entropy(output.logits_mean, [label])
        if cfg.targeted:
            target = self.target_label(label, model.num_classes)
            objective = -ops.cross_entropy(output.logits_mean, [target])
        else:
            objective = ce_true
        objective.backward()
        gradient = delta_var.grad if delta_var.grad is not None else np.zeros_like(delta)
        return WindowStep(
            output=output,
            state=next_state,
            gradient=gradient,
            ce=ce_true.item(),
            prediction=int(np.argmax(output.logits_mean.data[0])),
        )

    @staticmethod
    def _step(x: Tensor, delta: np.ndarray, gradient: np.ndarray, step: float, cfg: AttackConfig) -> np.ndarray:
        """δ ← clip(δ + step·sgn(g), -ε, ε)，再投影使 x+δ 落在像素范围内"""
        moved = ops.clip(Tensor.wrap(delta) + ops.sign(gradient) * step, -cfg.epsilon, cfg.epsilon)
        lo, hi = cfg.pixel_domain
        return (ops.clip(x + moved, lo, hi) - x).data

    @staticmethod
    def _zeros(x: Tensor) -> np.ndarray:
        return np.zeros(x.shape, dtype=x.data.dtype)
