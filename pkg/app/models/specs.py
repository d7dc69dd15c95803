"""命令行各子命令的扁平配置模型

配置来自 key=value 文件与 --set 覆盖项，值均为字符串；列表型字段用逗号分隔。
"""
import math
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Type, TypeVar, get_args, get_origin

from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from app.config import settings
from app.models.configs import AmprConfig, AttackConfig, TrainConfig
from app.utils.errors import ConfigError

SpecT = TypeVar("SpecT", bound=BaseModel)

_NONE_WORDS = {"", "none", "null"}


def split_list(value: Any) -> Any:
    """逗号分隔的字符串转为列表，其余原样返回"""
    if isinstance(value, str):
        return [item.strip() for item in value.split(",") if item.strip()]
    return value


def none_if_empty(value: Any) -> Any:
    if isinstance(value, str) and value.strip().lower() in _NONE_WORDS:
        return None
    return value


def parse_bounds(value: str) -> Tuple[Optional[float], Optional[float]]:
    """
    解析截断区间，"none" 表示不截断，"0.2:0.5" 表示 [0.2, 0.5]

    Raises:
        ValueError: 格式错误
    """
    text = value.strip().lower()
    if text in _NONE_WORDS:
        return None, None
    if ":" not in text:
        raise ValueError(f"截断区间应为 lo:hi 或 none，实际为 {value}")
    lo, hi = text.split(":", 1)
    return float(lo), float(hi)


def _require_file(path: Optional[str], field_name: str) -> Optional[str]:
    if path is not None and not Path(path).is_file():
        raise ValueError(f"{field_name} 指向的文件不存在: {path}")
    return path


class DataSpec(BaseModel):
    """数据来源：synthetic 或本地 CIFAR 二进制文件"""
    dataset: str = Field(default="synthetic", description="synthetic 或评估 / 训练用的 CIFAR 二进制文件路径")
    train_dataset: Optional[str] = Field(None, description="膜电位库生成使用的训练集文件，默认同 dataset")
    dataset_format: str = Field(default="cifar10", description="cifar10 | cifar100 | cifar100_coarse")
    synthetic_classes: int = Field(default=2, ge=2, description="合成数据类别数")
    synthetic_per_class: int = Field(default=64, ge=1, description="合成数据每类样本数")
    synthetic_channels: int = Field(default=3, ge=1, description="合成图像通道数")
    synthetic_size: int = Field(default=8, ge=1, description="合成图像边长")
    synthetic_noise: float = Field(default=0.1, ge=0.0, description="合成图像噪声标准差")
    data_seed: int = Field(default=0, description="合成数据种子（测试划分使用 data_seed+1）")

    @model_validator(mode="before")
    @classmethod
    def _normalize_flat_values(cls, data: Any) -> Any:
        """列表字段按逗号拆分，可选字段的 none / 空串转为 None"""
        if not isinstance(data, dict):
            return data
        normalized = dict(data)
        for name, value in data.items():
            field = cls.model_fields.get(name)
            if field is None or not isinstance(value, str):
                continue
            if get_origin(field.annotation) is list:
                normalized[name] = split_list(value)
            elif type(None) in get_args(field.annotation):
                normalized[name] = none_if_empty(value)
        return normalized

    @field_validator("dataset_format")
    @classmethod
    def _known_format(cls, v: str) -> str:
        if v not in ("cifar10", "cifar100", "cifar100_coarse"):
            raise ValueError(f"不支持的数据格式: {v}")
        return v

    @model_validator(mode="after")
    def _files_exist(self) -> "DataSpec":
        if self.dataset != "synthetic":
            _require_file(self.dataset, "dataset")
        _require_file(self.train_dataset, "train_dataset")
        return self

    @property
    def synthetic_shape(self) -> Tuple[int, int, int]:
        return self.synthetic_channels, self.synthetic_size, self.synthetic_size


class TrainSpec(DataSpec):
    """train 子命令"""
    arch: str = Field(default="toy_vgg", description="网络结构名称")
    timesteps: int = Field(default=8, ge=1, description="总时间步 T")
    tau: float = Field(default=0.5, gt=0.0, le=1.0, description="膜电位泄漏因子")
    v_th: float = Field(default=1.0, gt=0.0, description="发放阈值")
    surrogate_width: float = Field(default=settings.surrogate_width, gt=0.0, description="替代梯度半宽 a")
    epochs: int = Field(default=30, ge=1)
    batch_size: int = Field(default=32, ge=1)
    learning_rate: float = Field(default=0.1, ge=0.0)
    momentum: float = Field(default=0.9, ge=0.0, lt=1.0)
    weight_decay: float = Field(default=0.0, ge=0.0)
    seed: int = Field(default=settings.default_seed, description="初始化与数据顺序种子")
    surrogate_of: Optional[str] = Field(None, description="给出受害模型路径时训练同结构的替代模型")
    output: str = Field(default="models/victim.snnt", description="模型容器输出路径")

    @field_validator("arch")
    @classmethod
    def _known_arch(cls, v: str) -> str:
        from app.snn.architectures import ArchitectureFactory

        supported = ArchitectureFactory.get_supported_architectures()
        if v.lower() not in supported:
            raise ValueError(f"不支持的网络结构: {v}，可选 {supported}")
        return v.lower()

    @field_validator("surrogate_of")
    @classmethod
    def _surrogate_exists(cls, v: Optional[str]) -> Optional[str]:
        return _require_file(v, "surrogate_of")

    def to_train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            seed=self.seed,
        )


class BankSpec(DataSpec):
    """make-bank 子命令"""
    model: str = Field(..., description="生成库所用的模型（白盒为受害模型，黑盒为替代模型）")
    t1: int = Field(default=2, ge=1)
    beta: float = Field(default=8 / 255, gt=0.0)
    iters: int = Field(default=20, ge=0)
    bounds: str = Field(default="0.2:0.5", description="截断区间 lo:hi 或 none")
    samples_per_class: int = Field(default=16, ge=1)
    use_loss_mem: bool = True
    use_loss_adv: bool = True
    class_specific: bool = True
    seed: int = Field(default=settings.default_seed)
    output: str = Field(default="models/bank.snnt", description="膜电位库输出路径")

    @field_validator("model")
    @classmethod
    def _model_exists(cls, v: str) -> str:
        return _require_file(v, "model")

    @field_validator("bounds")
    @classmethod
    def _valid_bounds(cls, v: str) -> str:
        parse_bounds(v)
        return v

    def to_ampr_config(self) -> AmprConfig:
        v_min, v_max = parse_bounds(self.bounds)
        return AmprConfig(
            t1=self.t1,
            beta=self.beta,
            iters=self.iters,
            v_min=v_min,
            v_max=v_max,
            samples_per_class=self.samples_per_class,
            use_loss_mem=self.use_loss_mem,
            use_loss_adv=self.use_loss_adv,
            class_specific=self.class_specific,
            seed=self.seed,
        )


class ExperimentSpec(DataSpec):
    """attack 子命令：攻击网格"""
    victim: str = Field(..., description="受害模型路径")
    surrogate: Optional[str] = Field(None, description="替代模型路径，给出时为黑盒迁移攻击")
    bank: Optional[str] = Field(None, description="膜电位库路径（use_ampr 时必需）")
    attacks: List[str] = Field(default_factory=lambda: ["fgsm", "pgd", "tlbp"], description="攻击列表")
    windows: List[int] = Field(default_factory=lambda: [1], description="TLBP 窗口大小列表")
    th_ce: List[float] = Field(default_factory=lambda: [0.01, 0.1, 1.0, 5.0], description="Th_CE 列表")
    epsilon: float = Field(default=8 / 255, ge=0.0)
    pgd_step: float = Field(default=8 / 255, ge=0.0)
    pgd_iters: int = Field(default=2, ge=1)
    use_ampr: bool = False
    t1: int = Field(default=0, ge=0)
    recompute_prefix: bool = False
    targeted: bool = False
    count_correct_only: bool = True
    sample_limit: int = Field(default=settings.sample_limit, ge=1)
    seed: int = Field(default=settings.default_seed, description="样本抽取种子")
    output: str = Field(default=settings.results_dir, description="结果目录")

    @field_validator("victim", "surrogate", "bank")
    @classmethod
    def _paths_exist(cls, v: Optional[str], info) -> Optional[str]:
        return _require_file(v, info.field_name)

    @field_validator("attacks")
    @classmethod
    def _known_attacks(cls, v: List[str]) -> List[str]:
        from app.services.attack_factory import AttackFactory

        supported = AttackFactory.get_supported_attacks()
        names = [name.lower() for name in v]
        unknown = [name for name in names if name not in supported]
        if unknown:
            raise ValueError(f"不支持的攻击: {unknown}，可选 {supported}")
        return names

    @field_validator("windows")
    @classmethod
    def _positive_windows(cls, v: List[int]) -> List[int]:
        if any(w < 1 for w in v):
            raise ValueError(f"窗口大小必须 ≥ 1: {v}")
        return v

    @field_validator("th_ce")
    @classmethod
    def _non_negative_thresholds(cls, v: List[float]) -> List[float]:
        if any(math.isnan(t) or t < 0 for t in v):
            raise ValueError(f"Th_CE 必须 ≥ 0: {v}")
        return v

    @model_validator(mode="after")
    def _grid_consistent(self) -> "ExperimentSpec":
        if not self.attacks:
            raise ValueError("攻击列表为空")
        if "tlbp" in self.attacks and (not self.windows or not self.th_ce):
            raise ValueError("tlbp 需要非空的 windows 与 th_ce 列表")
        if self.use_ampr and self.bank is None:
            raise ValueError("use_ampr 需要提供 bank")
        if self.use_ampr and self.t1 < 1:
            raise ValueError("use_ampr 时 t1 至少为 1")
        return self

    def attack_config(self, window_size: int = 1, th_ce: float = math.inf, **extra: Any) -> AttackConfig:
        return AttackConfig(
            epsilon=self.epsilon,
            pgd_step=self.pgd_step,
            pgd_iters=self.pgd_iters,
            window_size=window_size,
            th_ce=th_ce,
            recompute_prefix=self.recompute_prefix,
            targeted=self.targeted,
            use_ampr=self.use_ampr,
            t1=self.t1 if self.use_ampr else 0,
            **extra,
        )


class AblationSpec(DataSpec):
    """ablate 子命令：膜电位库组件与截断区间消融"""
    victim: str = Field(..., description="受害模型路径")
    surrogate: Optional[str] = Field(None, description="替代模型路径，给出时库在替代模型上生成")
    windows: List[int] = Field(default_factory=lambda: [1, 2])
    bounds: List[str] = Field(
        default_factory=lambda: ["none", "0:1", "0.1:0.8", "0.2:0.6", "0.2:0.5"],
        description="截断区间变体",
    )
    epsilon: float = Field(default=8 / 255, ge=0.0)
    t1: int = Field(default=2, ge=1)
    beta: float = Field(default=8 / 255, gt=0.0)
    iters: int = Field(default=20, ge=0)
    samples_per_class: int = Field(default=16, ge=1)
    sample_limit: int = Field(default=settings.sample_limit, ge=1)
    seed: int = Field(default=settings.default_seed)
    output: str = Field(default=settings.results_dir)

    @field_validator("victim", "surrogate")
    @classmethod
    def _paths_exist(cls, v: Optional[str], info) -> Optional[str]:
        return _require_file(v, info.field_name)

    @field_validator("bounds")
    @classmethod
    def _valid_bounds(cls, v: List[str]) -> List[str]:
        if not v:
            raise ValueError("截断区间列表为空")
        for item in v:
            parse_bounds(item)
        return v

    @field_validator("windows")
    @classmethod
    def _non_empty_windows(cls, v: List[int]) -> List[int]:
        if not v or any(w < 1 for w in v):
            raise ValueError(f"窗口列表非法: {v}")
        return v

    def ampr_config(self, bounds: str = "0.2:0.5", **switches: Any) -> AmprConfig:
        v_min, v_max = parse_bounds(bounds)
        return AmprConfig(
            t1=self.t1,
            beta=self.beta,
            iters=self.iters,
            v_min=v_min,
            v_max=v_max,
            samples_per_class=self.samples_per_class,
            seed=self.seed,
            **switches,
        )


class ProfileSpec(DataSpec):
    """profile 子命令：逐窗口 ASR 曲线、脉冲比例与易受攻击样本划分"""
    victim: str = Field(..., description="受害模型路径")
    bank: Optional[str] = Field(None, description="膜电位库路径，给出时比较预热前后的脉冲比例")
    window_size: int = Field(default=1, ge=1)
    max_windows: Optional[int] = Field(None, ge=1, description="ASR 曲线的最大窗口数，默认 T/w")
    sweep_windows: List[int] = Field(default_factory=lambda: [1, 2, 4], description="首窗口 ASR 扫描的 w 列表")
    epsilon: float = Field(default=8 / 255, ge=0.0)
    t1: int = Field(default=2, ge=1, description="使用 bank 时的预热长度")
    sample_limit: int = Field(default=settings.sample_limit, ge=1)
    seed: int = Field(default=settings.default_seed)
    output: str = Field(default=settings.results_dir)

    @field_validator("victim", "bank")
    @classmethod
    def _paths_exist(cls, v: Optional[str], info) -> Optional[str]:
        return _require_file(v, info.field_name)


def parse_spec(spec_cls: Type[SpecT], raw: Dict[str, Any]) -> SpecT:
    """
    校验扁平配置

    Raises:
        ConfigError: 未知键或字段校验失败
    """
    unknown = sorted(set(raw) - set(spec_cls.model_fields))
    if unknown:
        raise ConfigError(f"{spec_cls.__name__} 不认识的配置项: {unknown}")
    try:
        return spec_cls.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(f"{spec_cls.__name__} 配置无效: {e}") from e
