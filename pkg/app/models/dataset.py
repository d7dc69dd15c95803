"""数据集模型"""
from typing import Any, Optional
import numpy as np
from pydantic import BaseModel, Field, model_validator


class Dataset(BaseModel):
    """图像分类数据集，像素已缩放到 [0,1]"""
    images: Any = Field(..., description="N×C×H×W 的 float64 数组")
    labels: Any = Field(..., description="长度为 N 的整数标签")
    split: str = Field(default="train", description="数据划分标签")
    num_classes: int = Field(..., ge=2, description="类别数 K")
    provenance: str = Field(default="", description="来源：文件路径或生成器种子")

    class Config:
        arbitrary_types_allowed = True

    @model_validator(mode="after")
    def _check_contents(self) -> "Dataset":
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise ValueError(f"images 必须为 N×C×H×W，实际形状 {self.images.shape}")
        if self.labels.shape != (self.images.shape[0],):
            raise ValueError(f"标签数 {self.labels.shape} 与图像数 {self.images.shape[0]} 不一致")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError(f"标签超出 [0, {self.num_classes})")
        if self.images.size and (self.images.min() < 0.0 or self.images.max() > 1.0):
            raise ValueError("像素值必须位于 [0, 1]")
        return self

    def __len__(self) -> int:
        return int(self.images.shape[0])

    @property
    def sample_shape(self) -> tuple:
        return tuple(self.images.shape[1:])

    def subset(self, indices: np.ndarray, split: Optional[str] = None) -> "Dataset":
        return Dataset(
            images=self.images[indices],
            labels=self.labels[indices],
            split=split or self.split,
            num_classes=self.num_classes,
            provenance=self.provenance,
        )

    def class_indices(self, label: int) -> np.ndarray:
        return np.flatnonzero(self.labels == label)

    def class_mean(self, label: int) -> np.ndarray:
        indices = self.class_indices(label)
        if indices.size == 0:
            raise ValueError(f"数据集中没有类别 {label}")
        return self.images[indices].mean(axis=0)
