"""异常定义模块

所有业务异常都继承自 SnnBenchError，并携带命令行退出码：
配置错误为 1，运行时 / 数值错误为 2。
"""


class SnnBenchError(Exception):
    """项目异常基类"""

    exit_code: int = 2


class ConfigError(SnnBenchError, ValueError):
    """配置错误（参数越界、文件缺失、预设不存在等）"""

    exit_code = 1


class ShapeError(SnnBenchError, ValueError):
    """张量形状不匹配"""


class WindowError(SnnBenchError, ValueError):
    """时间窗口与状态游标不一致，或窗口越界"""


class TapeError(SnnBenchError, RuntimeError):
    """反向传播记录带（tape）使用错误"""


class NumericError(SnnBenchError, ArithmeticError):
    """出现 NaN / Inf 等非有限数值"""


class TrainingDivergedError(NumericError):
    """训练发散（损失非有限）"""

    def __init__(self, epoch: int, message: str = ""):
        self.epoch = epoch
        super().__init__(message or f"训练在第 {epoch} 轮发散（损失非有限）")


class DatasetError(SnnBenchError, ValueError):
    """数据集文件格式或内容错误"""


class BankError(SnnBenchError, ValueError):
    """膜电位库错误（缺少类别条目、模型指纹不一致等）"""


class ArchitectureMismatchError(SnnBenchError, ValueError):
    """替代模型与受害模型结构不一致"""


class ExperimentError(SnnBenchError):
    """实验网格单元执行失败，携带单元上下文"""

    def __init__(self, cell: str, cause: Exception):
        self.cell = cell
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 2)
        super().__init__(f"网格单元 [{cell}] 执行失败: {cause}")


class EmptyEvaluationError(SnnBenchError, ValueError):
    """评估切片中没有可计入 ASR 分母的样本"""
