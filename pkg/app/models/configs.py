"""攻击、膜电位库与训练的超参数模型"""
import math
from typing import Optional, Tuple
from pydantic import BaseModel, Field, field_validator, model_validator

from app.utils.errors import ConfigError


class AttackConfig(BaseModel):
    """对抗扰动生成参数"""
    epsilon: float = Field(default=8 / 255, ge=0.0, description="L∞ 扰动预算 ε")
    pgd_step: float = Field(default=8 / 255, ge=0.0, description="PGD 步长 γ")
    pgd_iters: int = Field(default=2, ge=1, description="PGD 迭代次数 r_max")
    window_size: int = Field(default=1, ge=1, description="TLBP 窗口大小 w")
    th_ce: float = Field(default=math.inf, ge=0.0, description="累计交叉熵早停阈值 Th_CE")
    tlbp_step: Optional[float] = Field(None, ge=0.0, description="TLBP 每窗口步长，默认等于 ε")
    max_windows: Optional[int] = Field(None, ge=1, description="TLBP 最多执行的窗口数 n")
    recompute_prefix: bool = Field(default=False, description="每个窗口前是否在新扰动下重算之前的时间步")
    targeted: bool = Field(default=False, description="是否为目标攻击，默认非目标攻击")
    use_ampr: bool = Field(default=False, description="是否用膜电位库预热")
    t1: int = Field(default=0, ge=0, description="预热长度 t₁（use_ampr 时生效）")
    pixel_domain: Tuple[float, float] = Field(default=(0.0, 1.0), description="合法像素范围 [lo, hi]")

    @field_validator("pixel_domain")
    @classmethod
    def _ordered_domain(cls, v: Tuple[float, float]) -> Tuple[float, float]:
        if v[0] > v[1]:
            raise ValueError(f"像素范围下界大于上界: {v}")
        return v

    @model_validator(mode="after")
    def _warmup_needs_t1(self) -> "AttackConfig":
        if self.use_ampr and self.t1 < 1:
            raise ValueError("use_ampr 时 t1 至少为 1")
        return self

    @property
    def step_size(self) -> float:
        """TLBP 每窗口实际步长"""
        return self.epsilon if self.tlbp_step is None else self.tlbp_step

    def check_horizon(self, timesteps: int) -> None:
        """
        校验与模型时间步相关的约束（1 ≤ w ≤ T，0 ≤ t1 < T）

        Raises:
            ConfigError: 约束不满足
        """
        if self.window_size > timesteps:
            raise ConfigError(f"窗口大小 w={self.window_size} 超过总时间步 T={timesteps}")
        if self.t1 >= timesteps:
            raise ConfigError(f"预热长度 t1={self.t1} 必须小于总时间步 T={timesteps}")


class AmprConfig(BaseModel):
    """离线膜电位库生成参数"""
    t1: int = Field(default=2, ge=1, description="预热时间步 t₁")
    beta: float = Field(default=8 / 255, gt=0.0, description="膜图像更新步长 β")
    iters: int = Field(default=20, ge=0, description="梯度上升轮数")
    v_min: Optional[float] = Field(default=0.2, description="膜电位下界 V_min，None 表示不截断")
    v_max: Optional[float] = Field(default=0.5, description="膜电位上界 V_max，None 表示不截断")
    samples_per_class: int = Field(default=16, ge=1, description="每轮估计损失使用的训练样本数")
    use_loss_mem: bool = Field(default=True, description="是否使用相似度损失 L_mem")
    use_loss_adv: bool = Field(default=True, description="是否使用对抗损失 L_adv")
    class_specific: bool = Field(default=True, description="是否为每个类别单独生成膜图像")
    pixel_domain: Tuple[float, float] = Field(default=(0.0, 1.0), description="膜图像像素范围")
    seed: int = Field(default=0, description="采样随机种子")

    @model_validator(mode="after")
    def _ordered_bounds(self) -> "AmprConfig":
        if self.v_min is not None and self.v_max is not None and self.v_min > self.v_max:
            raise ValueError(f"v_min={self.v_min} 大于 v_max={self.v_max}")
        if not (self.use_loss_mem or self.use_loss_adv):
            raise ValueError("L_mem 与 L_adv 至少启用一个")
        return self

    @property
    def bounds_label(self) -> str:
        """用于结果文件的截断区间标签"""
        lo = "none" if self.v_min is None else f"{self.v_min:g}"
        hi = "none" if self.v_max is None else f"{self.v_max:g}"
        return f"({lo},{hi})"

    def check_horizon(self, timesteps: int) -> None:
        if self.t1 >= timesteps:
            raise ConfigError(f"预热长度 t1={self.t1} 必须小于总时间步 T={timesteps}")


class TrainConfig(BaseModel):
    """STBP 训练参数"""
    epochs: int = Field(default=30, ge=1, description="训练轮数")
    batch_size: int = Field(default=32, ge=1, description="批大小")
    learning_rate: float = Field(default=0.1, ge=0.0, description="学习率（0 用于对照实验）")
    momentum: float = Field(default=0.9, ge=0.0, lt=1.0, description="SGD 动量")
    weight_decay: float = Field(default=0.0, ge=0.0, description="L2 权重衰减")
    seed: int = Field(default=0, description="初始化与数据顺序的随机种子")
    timesteps: Optional[int] = Field(None, ge=1, description="覆盖结构描述中的 T")
    surrogate_width: Optional[float] = Field(None, gt=0.0, description="覆盖结构描述中的替代梯度半宽 a")
