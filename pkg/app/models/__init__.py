"""数据模型模块"""
from app.models.architecture import ArchitectureSidecar, ArchitectureSpec, BlockSpec
from app.models.configs import AmprConfig, AttackConfig, TrainConfig
from app.models.dataset import Dataset
from app.models.results import AsrReport, AttackResult, EpochRecord, SampleOutcome, WindowTrace
from app.models.specs import AblationSpec, BankSpec, DataSpec, ExperimentSpec, ProfileSpec, TrainSpec

__all__ = [
    "AblationSpec",
    "AmprConfig",
    "ArchitectureSidecar",
    "ArchitectureSpec",
    "AsrReport",
    "AttackConfig",
    "AttackResult",
    "BankSpec",
    "BlockSpec",
    "DataSpec",
    "Dataset",
    "EpochRecord",
    "ExperimentSpec",
    "ProfileSpec",
    "SampleOutcome",
    "TrainConfig",
    "TrainSpec",
    "WindowTrace",
]
