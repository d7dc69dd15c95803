"""结果转换为便于绘图的长表"""
from pathlib import Path
from typing import List, Sequence, Union

import pandas as pd

from app.services.results_writer import provenance_lines, read_results, write_frame
from app.utils.errors import ConfigError
from app.utils.logger import logger

METRIC_COLUMNS = [
    "asr", "ci_low", "ci_high", "mean_timesteps", "mean_runtime_timesteps", "mean_windows",
    "mean_latency_us", "p95_latency_us", "spike_ratio", "mean_confidence",
]


def to_long_format(frame: pd.DataFrame, source: str = "") -> pd.DataFrame:
    """
    宽表转长表：非指标列作为标识列，每个指标一行

    Raises:
        ConfigError: 表中没有任何已知指标列
    """
    metrics = [c for c in METRIC_COLUMNS if c in frame.columns]
    if not metrics:
        raise ConfigError(f"结果表中没有可转换的指标列: {list(frame.columns)}")
    ids = [c for c in frame.columns if c not in metrics]
    long = frame.melt(id_vars=ids, value_vars=metrics, var_name="metric", value_name="value")
    long.insert(0, "source", source)
    return long


def write_report(inputs: Sequence[Union[str, Path]], output: Union[str, Path]) -> Path:
    """
    合并若干结果文件并写出长表

    Args:
        inputs: summary / ablation / profile 结果文件
        output: 输出 CSV 路径
    """
    frames: List[pd.DataFrame] = []
    for path in inputs:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"结果文件不存在: {path}")
        frames.append(to_long_format(read_results(path), source=path.stem))
    report = pd.concat(frames, ignore_index=True, sort=False)
    logger.info(f"生成长表: inputs={len(frames)}, rows={len(report)}")
    header = provenance_lines({"inputs": [str(p) for p in inputs]})
    return write_frame(output, report, header)
