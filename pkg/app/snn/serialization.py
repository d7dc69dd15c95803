"""二进制张量容器与模型读写

容器布局（小端）：
    magic(4 字节) | version(u32) | block_count(u32) | tensor_count(u32)
    每个张量：name_len(u16) | name(utf-8) | ndim(u8) | dims(u32 × ndim) | float32 数据
模型与膜电位库都使用该容器，另附一个可读的 JSON 描述文件。
"""
import hashlib
import struct
from pathlib import Path
from typing import Dict, Tuple, Union

import numpy as np

from app.models.architecture import ArchitectureSidecar
from app.snn.architectures import infer_block_shapes
from app.snn.model import SnnModel, SpikingBlock
from app.utils.errors import DatasetError, ShapeError
from app.utils.logger import logger

MAGIC = b"SNNT"
VERSION = 1
_HEADER = struct.Struct("<4sIII")

PathLike = Union[str, Path]


def sidecar_path(path: PathLike) -> Path:
    """容器对应的 JSON 描述文件路径"""
    return Path(path).with_suffix(".json")


def write_container(path: PathLike, tensors: Dict[str, np.ndarray], block_count: int) -> None:
    """把若干命名张量写入容器"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, block_count, len(tensors)))
        for name, array in tensors.items():
            encoded = name.encode("utf-8")
            data = np.ascontiguousarray(array, dtype="<f4")
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<B", data.ndim))
            f.write(struct.pack(f"<{data.ndim}I", *data.shape))
            f.write(data.tobytes())


def read_container(path: PathLike) -> Tuple[int, Dict[str, np.ndarray]]:
    """
    读取容器

    Returns:
        (block_count, {名称: float64 数组})

    Raises:
        DatasetError: 文件不是合法容器或被截断
    """
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise DatasetError(f"容器文件过短: {path}")
    magic, version, block_count, count = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise DatasetError(f"容器魔数错误: {magic!r}")
    if version != VERSION:
        raise DatasetError(f"不支持的容器版本: {version}")

    offset = _HEADER.size
    tensors: Dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", raw, offset)
            offset += 2
            name = raw[offset:offset + name_len].decode("utf-8")
            offset += name_len
            (ndim,) = struct.unpack_from("<B", raw, offset)
            offset += 1
            shape = struct.unpack_from(f"<{ndim}I", raw, offset)
            offset += 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(raw, dtype="<f4", count=size, offset=offset)
            offset += 4 * size
            tensors[name] = data.reshape(shape).astype(np.float64)
    except (struct.error, ValueError) as e:
        raise DatasetError(f"容器文件被截断或损坏: {path}") from e
    return block_count, tensors


def model_fingerprint(model: SnnModel) -> str:
    """结构描述与参数（按 float32 存储精度）的 SHA-256"""
    digest = hashlib.sha256(model.architecture.model_dump_json().encode("utf-8"))
    for name, tensor in model.named_tensors().items():
        digest.update(name.encode("utf-8"))
        digest.update(np.ascontiguousarray(tensor.data, dtype="<f4").tobytes())
    return digest.hexdigest()


def save_model(model: SnnModel, path: PathLike) -> Path:
    """
    保存模型权重容器与结构描述 JSON

    Returns:
        容器路径
    """
    path = Path(path)
    tensors = {name: tensor.data for name, tensor in model.named_tensors().items()}
    write_container(path, tensors, block_count=model.num_blocks)
    sidecar = ArchitectureSidecar(architecture=model.architecture, seed=model.seed)
    sidecar_path(path).write_text(sidecar.model_dump_json(indent=2), encoding="utf-8")
    logger.info(f"模型已保存: {path}")
    return path


def load_model(path: PathLike) -> SnnModel:
    """
    读取模型（参数为只读，不需要梯度）

    Raises:
        DatasetError: 容器损坏
        ShapeError: 容器内容与结构描述不一致
    """
    path = Path(path)
    sidecar = ArchitectureSidecar.model_validate_json(sidecar_path(path).read_text(encoding="utf-8"))
    architecture = sidecar.architecture
    block_count, tensors = read_container(path)
    if block_count != len(architecture.blocks):
        raise ShapeError(f"容器块数 {block_count} 与结构描述块数 {len(architecture.blocks)} 不一致")

    def _take(name: str) -> np.ndarray:
        if name not in tensors:
            raise ShapeError(f"容器缺少张量: {name}")
        return tensors[name]

    blocks = []
    for index, (spec, shape) in enumerate(zip(architecture.blocks, infer_block_shapes(architecture))):
        prefix = f"blocks.{index}"
        blocks.append(SpikingBlock(
            spec,
            _take(f"{prefix}.conv_weight"),
            shape,
            bn_gamma=_take(f"{prefix}.bn_gamma"),
            bn_beta=_take(f"{prefix}.bn_beta"),
            bn_running_mean=_take(f"{prefix}.bn_running_mean"),
            bn_running_var=_take(f"{prefix}.bn_running_var"),
        ))
    model = SnnModel(
        architecture, blocks, _take("classifier.weight"), _take("classifier.bias"), seed=sidecar.seed,
    )
    logger.info(f"模型已加载: {path}, arch={architecture.name}")
    return model

