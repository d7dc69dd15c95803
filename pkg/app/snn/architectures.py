"""网络结构工厂与参数初始化"""
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from app.models.architecture import ArchitectureSpec, BlockSpec
from app.engine.ops import conv_output_size
from app.snn.model import SnnModel, SpikingBlock
from app.utils.errors import ConfigError, ShapeError
from app.utils.logger import logger


class ArchitectureFactory:
    """按名称生成结构描述（VGG / ResNet 风格的桌面级小网络）"""

    _blueprints: Dict[str, List[Dict[str, Any]]] = {
        # 单块小网络，用于单元测试与手算对照
        "tiny": [
            {"out_channels": 4, "kernel_size": 3, "stride": 1, "padding": 1},
        ],
        # 2~3 个卷积块，≤64 通道
        "toy_vgg": [
            {"out_channels": 16, "stride": 1},
            {"out_channels": 32, "stride": 2},
            {"out_channels": 64, "stride": 2},
        ],
        # 一个残差块对：第 2 个块的输出加上第 0 个块的脉冲
        "toy_resnet": [
            {"out_channels": 16, "stride": 1},
            {"out_channels": 16, "stride": 1},
            {"out_channels": 16, "stride": 1, "residual_from": 0},
            {"out_channels": 32, "stride": 2},
        ],
    }

    @classmethod
    def create(
        cls,
        name: str,
        input_shape: Tuple[int, int, int],
        num_classes: int,
        timesteps: int,
        **overrides: Any,
    ) -> ArchitectureSpec:
        """
        创建结构描述

        Args:
            name: 结构名称，如 tiny, toy_vgg, toy_resnet
            input_shape: 单样本输入形状 (C,H,W)
            num_classes: 类别数
            timesteps: 总时间步 T
            **overrides: 覆盖 tau、v_th、surrogate_width 等字段

        Returns:
            结构描述

        Raises:
            ConfigError: 不支持的结构
        """
        name = name.lower()
        if name not in cls._blueprints:
            raise ConfigError(f"不支持的网络结构: {name}")
        return ArchitectureSpec(
            name=name,
            input_shape=tuple(input_shape),
            num_classes=num_classes,
            timesteps=timesteps,
            blocks=[BlockSpec(**block) for block in cls._blueprints[name]],
            **{k: v for k, v in overrides.items() if v is not None},
        )

    @classmethod
    def get_supported_architectures(cls) -> list:
        return list(cls._blueprints)


def infer_block_shapes(architecture: ArchitectureSpec) -> List[Tuple[int, int, int]]:
    """
    推算每个块的输出形状并校验残差连接

    Raises:
        ShapeError: 输出尺寸小于 1 或残差形状不一致
    """
    channels, height, width = architecture.input_shape
    shapes: List[Tuple[int, int, int]] = []
    for index, block in enumerate(architecture.blocks):
        out_h = conv_output_size(height, block.kernel_size, block.stride, block.padding)
        out_w = conv_output_size(width, block.kernel_size, block.stride, block.padding)
        if out_h < 1 or out_w < 1:
            raise ShapeError(f"块 {index} 输出尺寸 {out_h}x{out_w} 非法（输入 {height}x{width}）")
        shape = (block.out_channels, out_h, out_w)
        if block.residual_from is not None and shapes[block.residual_from] != shape:
            raise ShapeError(
                f"块 {index} 形状 {shape} 与残差来源块 {block.residual_from} 的形状 "
                f"{shapes[block.residual_from]} 不一致"
            )
        shapes.append(shape)
        channels, height, width = shape
    return shapes


def build_model(architecture: ArchitectureSpec, seed: int) -> SnnModel:
    """
    按结构描述初始化模型

    卷积核使用 He 正态初始化，分类头使用 U(-1/√D, 1/√D)，批归一化为恒等。

    Args:
        architecture: 结构描述
        seed: 初始化随机种子，完全决定初始权重
    """
    rng = np.random.default_rng(seed)
    shapes = infer_block_shapes(architecture)
    in_channels = architecture.input_shape[0]
    blocks: List[SpikingBlock] = []
    for block_spec, shape in zip(architecture.blocks, shapes):
        fan_in = in_channels * block_spec.kernel_size ** 2
        weight = rng.normal(
            0.0, np.sqrt(2.0 / fan_in),
            size=(block_spec.out_channels, in_channels, block_spec.kernel_size, block_spec.kernel_size),
        )
        blocks.append(SpikingBlock(block_spec, weight, shape))
        in_channels = block_spec.out_channels

    features = int(np.prod(shapes[-1]))
    bound = 1.0 / np.sqrt(features)
    classifier_weight = rng.uniform(-bound, bound, size=(architecture.num_classes, features))
    classifier_bias = np.zeros(architecture.num_classes)

    logger.debug(f"初始化模型: arch={architecture.name}, seed={seed}, blocks={len(blocks)}, features={features}")
    return SnnModel(architecture, blocks, classifier_weight, classifier_bias, seed=seed)


def same_architecture(a: SnnModel, b: SnnModel) -> bool:
    """两个模型的结构描述是否一致（不比较权重）"""
    return a.architecture == b.architecture
