"""配置管理模块"""
from pathlib import Path
from typing import Dict, Any, Iterable, Optional

from dotenv import dotenv_values
from pydantic_settings import BaseSettings

from app.utils.errors import ConfigError


class Settings(BaseSettings):
    """应用配置"""

    # 应用配置
    app_name: str = "SNN Timestep-Compressed Attack Bench"
    app_version: str = "1.0.0"
    debug: bool = False

    # 并行配置：攻击评估与膜电位库生成使用的线程数（环境变量 NUM_WORKERS）
    num_workers: int = 4

    # 实验配置
    results_dir: str = "results"
    default_seed: int = 0
    sample_limit: int = 500  # 每个实验默认最多评估的样本数
    surrogate_width: float = 0.5  # 矩形替代梯度半宽 a

    # 日志配置
    log_level: str = "INFO"
    log_file: str = "logs/app.log"

    class Config:
        env_file = ".env"
        env_file_encoding = "utf-8"
        case_sensitive = False


# 全局配置实例
settings = Settings()


def get_attack_preset(preset_name: str) -> Dict[str, Any]:
    """获取指定名称的攻击超参数预设"""
    presets = {
        "full": {
            "epsilon": 8 / 255,
            "pgd_step": 8 / 255,
            "pgd_iters": 2,
            "t1": 2,
            "beta": 8 / 255,
            "v_min": 0.2,
            "v_max": 0.5,
            "th_ce_grid": [0.01, 0.1, 1.0, 5.0],
        },
        "desk": {
            "epsilon": 8 / 255,
            "pgd_step": 8 / 255,
            "pgd_iters": 2,
            "t1": 1,
            "beta": 8 / 255,
            "v_min": 0.2,
            "v_max": 0.5,
            "th_ce_grid": [0.1, 1.0],
        },
    }

    if preset_name not in presets:
        raise ValueError(f"Unsupported preset: {preset_name}")

    return dict(presets[preset_name])


def load_flat_config(
    path: Optional[str],
    overrides: Iterable[str] = (),
) -> Dict[str, Any]:
    """
    读取扁平 key=value 配置文件并应用命令行覆盖项

    Args:
        path: 配置文件路径，None 表示只使用覆盖项
        overrides: 形如 "key=value" 的覆盖项

    Returns:
        合并后的原始配置字典（键统一为小写）

    Raises:
        ConfigError: 文件不存在或覆盖项格式错误
    """
    values: Dict[str, Any] = {}
    if path is not None:
        config_path = Path(path)
        if not config_path.is_file():
            raise ConfigError(f"配置文件不存在: {path}")
        values.update({k.lower(): v for k, v in dotenv_values(config_path).items() if v is not None})

    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"覆盖项格式错误，应为 key=value: {item}")
        key, value = item.split("=", 1)
        values[key.strip().lower()] = value.strip()

    return values
