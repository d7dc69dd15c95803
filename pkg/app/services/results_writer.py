"""结果文件写入

所有 CSV 以若干行 "# key=value" 开头记录解析后的配置，随后是表头与数据行。
"""
import csv
import threading
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Union

import pandas as pd
from pydantic import BaseModel

from app.utils.logger import logger


def provenance_lines(spec: Union[BaseModel, Mapping[str, Any]], **extra: Any) -> List[str]:
    """把配置展开为 "# key=value" 行（键排序）"""
    values = dict(spec.model_dump() if isinstance(spec, BaseModel) else spec)
    values.update(extra)
    lines = []
    for key in sorted(values):
        value = values[key]
        if isinstance(value, (list, tuple)):
            value = ",".join(str(v) for v in value)
        lines.append(f"# {key}={'' if value is None else value}")
    return lines


def read_provenance(path: Union[str, Path]) -> Dict[str, str]:
    """读取结果文件头部的配置行"""
    values: Dict[str, str] = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            if not line.startswith("# "):
                break
            key, _, value = line[2:].rstrip("\n").partition("=")
            values[key] = value
    return values


def read_results(path: Union[str, Path]) -> pd.DataFrame:
    """读取带配置头的结果文件"""
    return pd.read_csv(path, comment="#")


def write_frame(path: Union[str, Path], frame: pd.DataFrame, header: Sequence[str] = ()) -> Path:
    """写出带配置头的表格"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        for line in header:
            f.write(line + "\n")
        frame.to_csv(f, index=False, lineterminator="\n")
    logger.info(f"结果已写入: {path} ({len(frame)} 行)")
    return path


class ResultCollector:
    """
    串行化的结果写入器

    多个线程按序号提交行，写入顺序始终按序号递增，与完成顺序无关。
    """

    def __init__(self, path: Union[str, Path], columns: Sequence[str], header: Sequence[str] = ()):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.columns = list(columns)
        self._file = open(self.path, "w", encoding="utf-8", newline="")
        for line in header:
            self._file.write(line + "\n")
        self._writer = csv.DictWriter(self._file, fieldnames=self.columns, lineterminator="\n")
        self._writer.writeheader()
        self._pending: Dict[int, List[Dict[str, Any]]] = {}
        self._next = 0
        self._written = 0
        self._lock = threading.Lock()

    def submit(self, sequence: int, rows: List[Dict[str, Any]]) -> None:
        """提交第 sequence 组行；之前的组都到齐后才落盘"""
        with self._lock:
            self._pending[sequence] = rows
            while self._next in self._pending:
                for row in self._pending.pop(self._next):
                    self._writer.writerow({k: row.get(k, "") for k in self.columns})
                    self._written += 1
                self._next += 1
            self._file.flush()

    def close(self) -> None:
        with self._lock:
            if self._pending:
                missing = [s for s in range(self._next, max(self._pending) + 1) if s not in self._pending]
                logger.warning(f"结果组 {missing} 未提交，后续 {len(self._pending)} 组按序号写出")
                for sequence in sorted(self._pending):
                    for row in self._pending.pop(sequence):
                        self._writer.writerow({k: row.get(k, "") for k in self.columns})
                        self._written += 1
            self._file.close()
        logger.info(f"结果已写入: {self.path} ({self._written} 行)")

    def __enter__(self) -> "ResultCollector":
        return self

    def __exit__(self, *exc: Optional[Any]) -> None:
        self.close()
