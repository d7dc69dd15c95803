"""数据集读取与合成"""
from pathlib import Path
from typing import Tuple, Union

import numpy as np

from app.models.dataset import Dataset
from app.models.specs import DataSpec
from app.utils.errors import DatasetError
from app.utils.logger import logger

IMAGE_SIZE = 32
CHANNEL_NUM = 3
PIXELS = IMAGE_SIZE * IMAGE_SIZE * CHANNEL_NUM

# format -> (标签字节数, 使用第几个标签字节, 类别数)
CIFAR_FORMATS = {
    "cifar10": (1, 0, 10),
    "cifar100": (2, 1, 100),  # 细粒度标签
    "cifar100_coarse": (2, 0, 20),
}


def load_cifar_binary(path: Union[str, Path], format: str = "cifar10", split: str = "test") -> Dataset:
    """
    读取 CIFAR 二进制格式文件

    每条记录为标签字节 + 3072 个像素字节（先 R 平面，再 G、B，32×32）。
    CIFAR-100 每条记录有 2 个标签字节（粗标签、细标签），默认取细标签。

    Args:
        path: 文件路径
        format: cifar10 | cifar100 | cifar100_coarse
        split: 数据划分标签

    Returns:
        像素缩放到 [0,1] 的数据集

    Raises:
        DatasetError: 空文件、大小不是记录长度的整数倍、标签越界
    """
    if format not in CIFAR_FORMATS:
        raise DatasetError(f"不支持的 CIFAR 格式: {format}")
    label_bytes, label_index, num_classes = CIFAR_FORMATS[format]
    record_size = label_bytes + PIXELS

    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size == 0:
        raise DatasetError(f"数据文件为空（0 条记录）: {path}")
    if raw.size % record_size != 0:
        raise DatasetError(
            f"文件大小 {raw.size} 不是记录长度 {record_size} 的整数倍，文件可能被截断: {path}"
        )

    records = raw.reshape(-1, record_size)
    labels = records[:, label_index].astype(np.int64)
    if labels.max() >= num_classes:
        bad = int(np.flatnonzero(labels >= num_classes)[0])
        raise DatasetError(f"第 {bad} 条记录标签 {labels[bad]} 超出 [0, {num_classes})")
    images = records[:, label_bytes:].reshape(-1, CHANNEL_NUM, IMAGE_SIZE, IMAGE_SIZE) / 255.0

    logger.info(f"读取 CIFAR 数据: path={path}, format={format}, count={len(labels)}")
    return Dataset(images=images, labels=labels, split=split, num_classes=num_classes, provenance=str(path))


def make_synthetic(
    classes: int,
    per_class: int,
    shape: Tuple[int, int, int],
    seed: int,
    noise: float = 0.1,
    split: str = "train",
) -> Dataset:
    """
    生成类条件高斯斑点图像

    每个类别在图像上有一个固定中心的高斯斑点（中心均匀分布在一个圆上），
    各通道强度不同；样本为斑点加高斯噪声后截断到 [0,1]。噪声适中时线性可分。

    Args:
        classes: 类别数 K（≥2）
        per_class: 每类样本数
        shape: 单样本形状 (C,H,W)
        seed: 随机种子，同一种子生成完全相同的数据
        noise: 噪声标准差
        split: 数据划分标签

    Raises:
        DatasetError: 类别数小于 2
    """
    if classes < 2:
        raise DatasetError(f"合成数据至少需要 2 个类别，当前 {classes}")
    channels, height, width = shape
    rng = np.random.default_rng(seed)

    rows, cols = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    radius = 0.3 * min(height, width)
    sigma = max(0.15 * min(height, width), 0.75)
    prototypes = np.empty((classes, channels, height, width))
    for label in range(classes):
        angle = 2.0 * np.pi * label / classes
        cy = (height - 1) / 2.0 + radius * np.sin(angle)
        cx = (width - 1) / 2.0 + radius * np.cos(angle)
        blob = np.exp(-((rows - cy) ** 2 + (cols - cx) ** 2) / (2.0 * sigma ** 2))
        for channel in range(channels):
            prototypes[label, channel] = blob * (0.6 + 0.4 * ((label + channel) % 2))

    labels = np.repeat(np.arange(classes), per_class)
    images = prototypes[labels] + rng.normal(0.0, noise, size=(labels.size, channels, height, width))
    order = rng.permutation(labels.size)

    return Dataset(
        images=np.clip(images[order], 0.0, 1.0),
        labels=labels[order],
        split=split,
        num_classes=classes,
        provenance=f"synthetic(seed={seed}, noise={noise})",
    )


def load_dataset(spec: DataSpec, split: str = "test") -> Dataset:
    """
    按配置读取数据

    合成数据的训练划分使用 data_seed，测试划分使用 data_seed+1；
    文件数据的训练划分优先使用 train_dataset。
    """
    if spec.dataset == "synthetic":
        seed = spec.data_seed if split == "train" else spec.data_seed + 1
        return make_synthetic(
            spec.synthetic_classes, spec.synthetic_per_class, spec.synthetic_shape,
            seed=seed, noise=spec.synthetic_noise, split=split,
        )
    path = spec.dataset
    if split == "train" and spec.train_dataset is not None:
        path = spec.train_dataset
    elif split == "train":
        logger.warning(f"未指定 train_dataset，训练划分使用 {path}")
    return load_cifar_binary(path, spec.dataset_format, split=split)


def select_samples(dataset: Dataset, limit: int, seed: int) -> Dataset:
    """按种子无放回抽取至多 limit 个样本（保持原顺序）"""
    if limit >= len(dataset):
        return dataset
    rng = np.random.default_rng(seed)
    return dataset.subset(np.sort(rng.choice(len(dataset), size=limit, replace=False)))
