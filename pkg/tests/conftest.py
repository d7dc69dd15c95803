"""测试公共夹具"""
import numpy as np
import pytest
from loguru import logger

from app.models.architecture import ArchitectureSpec, BlockSpec
from app.models.configs import TrainConfig
from app.services.datasets import make_synthetic
from app.services.trainer import train_stbp, train_surrogate
from app.snn.architectures import ArchitectureFactory, build_model
from app.snn.model import SnnModel, SpikingBlock

TOY_SHAPE = (3, 6, 6)
TOY_TIMESTEPS = 4


@pytest.fixture
def caplog(caplog):
    """让 loguru 日志进入 pytest 的 caplog"""
    handler_id = logger.add(caplog.handler, format="{message}", level=0)
    yield caplog
    logger.remove(handler_id)


def toy_train_config(seed: int = 0, **overrides) -> TrainConfig:
    values = dict(epochs=15, batch_size=8, learning_rate=0.05, momentum=0.5, seed=seed)
    values.update(overrides)
    return TrainConfig(**values)


@pytest.fixture(scope="session")
def toy_data():
    return make_synthetic(2, 24, TOY_SHAPE, seed=0, noise=0.05)


@pytest.fixture(scope="session")
def toy_test_data():
    return make_synthetic(2, 12, TOY_SHAPE, seed=1, noise=0.05, split="test")


@pytest.fixture(scope="session")
def toy_architecture():
    return ArchitectureFactory.create("tiny", TOY_SHAPE, 2, TOY_TIMESTEPS)


@pytest.fixture(scope="session")
def toy_victim(toy_data, toy_architecture):
    """训练好的单块受害模型（会话内共享，只读）"""
    model, _ = train_stbp(build_model(toy_architecture, seed=0), toy_data, toy_train_config(seed=0))
    return model


@pytest.fixture(scope="session")
def toy_surrogate(toy_victim, toy_data):
    return train_surrogate(toy_victim, toy_data, toy_train_config(seed=1))


@pytest.fixture
def untrained_model(toy_architecture):
    return build_model(toy_architecture, seed=3)


def dyadic_model(timesteps: int = 8, seed: int = 0) -> SnnModel:
    """
    参数全为二进制小数的单块网络（92 个参数），卷积求和在 float64 下无舍入误差

    输入 (1,4,4)，2 个 3×3 卷积核，分类头 2×32。
    """
    rng = np.random.default_rng(seed)
    architecture = ArchitectureSpec(
        name="dyadic",
        input_shape=(1, 4, 4),
        num_classes=2,
        timesteps=timesteps,
        tau=0.5,
        v_th=1.0,
        blocks=[BlockSpec(out_channels=2, kernel_size=3, stride=1, padding=1)],
    )
    block = SpikingBlock(
        architecture.blocks[0],
        rng.integers(-4, 5, size=(2, 1, 3, 3)) / 4.0,
        (2, 4, 4),
        bn_gamma=rng.integers(2, 9, size=2) / 4.0,
        bn_beta=rng.integers(-2, 3, size=2) / 8.0,
        bn_running_mean=rng.integers(-2, 3, size=2) / 8.0,
        bn_running_var=rng.integers(1, 5, size=2) / 4.0,
    )
    classifier_weight = rng.integers(-4, 5, size=(2, 32)) / 8.0
    classifier_bias = rng.integers(-2, 3, size=2) / 8.0
    return SnnModel(architecture, [block], classifier_weight, classifier_bias, seed=seed)


def dyadic_input(rng: np.random.Generator, shape=(1, 4, 4)) -> np.ndarray:
    return rng.integers(0, 17, size=shape) / 16.0
