"""攻击与训练结果模型"""
from typing import Any, Dict, List, Optional
import numpy as np
from pydantic import BaseModel, Field

# 逐样本结果流的列顺序
SAMPLE_COLUMNS = [
    "sample_id", "clean_pred", "label", "attack", "w", "th_ce", "windows_used",
    "timesteps_consumed", "runtime_timesteps", "success", "latency_us", "accumulated_ce",
]

# 与墙钟时间相关、不参与确定性比较的列
LATENCY_COLUMNS = {"latency_us", "mean_latency_us", "p95_latency_us"}


class WindowTrace(BaseModel):
    """TLBP 单个窗口的记录"""
    t_s: int = Field(..., description="窗口起始时间步")
    t_e: int = Field(..., description="窗口结束时间步")
    ce: float = Field(..., description="该窗口的交叉熵")
    running_prediction: int = Field(..., description="该窗口平均 logits 的预测类别")


class AttackResult(BaseModel):
    """单个样本的攻击结果"""
    attack: str = Field(..., description="攻击名称")
    delta: Any = Field(..., description="最终扰动 δ（numpy 数组，形状同输入）")
    adversarial: Any = Field(..., description="投影到像素范围内的 x+δ")
    success: bool = Field(..., description="受害模型在 x+δ 上是否被欺骗")
    prediction: int = Field(..., description="受害模型对 x+δ 的预测")
    windows_used: int = Field(..., ge=0, description="执行的窗口 / 迭代数 n")
    timesteps_consumed: int = Field(..., ge=0, description="最后一个窗口的 t_e（PGD 为 r·T）")
    runtime_timesteps: int = Field(..., ge=0, description="运行时实际执行的时间步，不含离线预热")
    backward_passes: int = Field(..., ge=0, description="反向传播次数")
    accumulated_ce: float = Field(..., description="各窗口交叉熵之和")
    wall_latency_us: float = Field(..., ge=0.0, description="扰动生成耗时（微秒）")
    per_window_trace: List[WindowTrace] = Field(default_factory=list, description="逐窗口记录")

    class Config:
        arbitrary_types_allowed = True

    @property
    def linf(self) -> float:
        return float(np.max(np.abs(self.delta))) if np.size(self.delta) else 0.0


class SampleOutcome(BaseModel):
    """逐样本结果流中的一行"""
    sample_id: int
    clean_pred: int
    label: int
    attack: str
    w: Optional[int] = None
    th_ce: Optional[float] = None
    windows_used: int
    timesteps_consumed: int
    runtime_timesteps: int
    success: bool
    latency_us: float
    accumulated_ce: float

    def to_row(self) -> Dict[str, Any]:
        row = self.model_dump()
        row["success"] = int(self.success)
        row["w"] = "" if self.w is None else self.w
        row["th_ce"] = "" if self.th_ce is None else self.th_ce
        return {k: row[k] for k in SAMPLE_COLUMNS}


class AsrReport(BaseModel):
    """evaluate_asr 的汇总结果"""
    asr: float = Field(..., ge=0.0, le=1.0, description="攻击成功率")
    counted: int = Field(..., ge=1, description="计入分母的样本数")
    successes: int = Field(..., ge=0, description="攻击成功的样本数")
    skipped: int = Field(default=0, ge=0, description="干净样本即被误分类而未计入的样本数")
    mean_latency_us: float
    p95_latency_us: float
    mean_windows: float
    mean_timesteps: float
    mean_runtime_timesteps: float
    per_sample: List[SampleOutcome] = Field(default_factory=list)


class EpochRecord(BaseModel):
    """训练历史中的一轮"""
    epoch: int
    loss: float
    accuracy: float
