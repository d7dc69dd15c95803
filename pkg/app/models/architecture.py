"""SNN 结构描述模型（序列化为模型文件旁的可读 JSON）"""
from typing import List, Optional, Tuple
from pydantic import BaseModel, Field, field_validator, model_validator


class BlockSpec(BaseModel):
    """卷积 → 批归一化 → LIF 块"""
    out_channels: int = Field(..., gt=0, description="卷积输出通道数")
    kernel_size: int = Field(default=3, gt=0, description="卷积核边长")
    stride: int = Field(default=1, gt=0, description="卷积步长")
    padding: int = Field(default=1, ge=0, description="零填充宽度")
    residual_from: Optional[int] = Field(
        None, ge=0, description="残差来源块下标：把该块的输出脉冲加到本块的输入电流上"
    )


class ArchitectureSpec(BaseModel):
    """网络结构与 LIF 超参数"""
    name: str = Field(..., description="结构名称，如 toy_vgg")
    input_shape: Tuple[int, int, int] = Field(..., description="单样本输入形状 (C,H,W)")
    num_classes: int = Field(..., ge=2, description="类别数 K")
    timesteps: int = Field(..., ge=1, description="总时间步 T")
    tau: float = Field(default=0.5, gt=0.0, le=1.0, description="泄漏因子 τ ∈ (0,1]")
    v_th: float = Field(default=1.0, gt=0.0, description="发放阈值 V_th")
    surrogate_width: float = Field(default=0.5, gt=0.0, description="矩形替代梯度半宽 a")
    bn_momentum: float = Field(default=0.1, gt=0.0, le=1.0, description="批归一化滑动平均动量")
    bn_eps: float = Field(default=1e-5, gt=0.0, description="批归一化数值稳定项")
    blocks: List[BlockSpec] = Field(..., min_length=1, description="按顺序排列的块")

    @field_validator("input_shape")
    @classmethod
    def _positive_shape(cls, v: Tuple[int, int, int]) -> Tuple[int, int, int]:
        if any(d <= 0 for d in v):
            raise ValueError(f"输入形状必须为正: {v}")
        return v

    @model_validator(mode="after")
    def _residual_points_backward(self) -> "ArchitectureSpec":
        for index, block in enumerate(self.blocks):
            if block.residual_from is not None and block.residual_from >= index:
                raise ValueError(f"块 {index} 的残差来源 {block.residual_from} 必须位于它之前")
        return self

    class Config:
        json_schema_extra = {
            "example": {
                "name": "toy_vgg",
                "input_shape": [3, 32, 32],
                "num_classes": 10,
                "timesteps": 8,
                "tau": 0.5,
                "v_th": 1.0,
                "surrogate_width": 0.5,
                "blocks": [
                    {"out_channels": 16, "stride": 1},
                    {"out_channels": 32, "stride": 2},
                    {"out_channels": 64, "stride": 2},
                ],
            }
        }


class ArchitectureSidecar(BaseModel):
    """模型容器旁的 JSON 描述"""
    architecture: ArchitectureSpec = Field(..., description="网络结构")
    seed: Optional[int] = Field(None, description="初始化随机种子")
