"""对抗膜电位复用（A-MPR）：离线生成各类别的膜图像 y* 并保存其预热膜电位

y* 通过梯度上升优化 L_mpr = L_mem + L_adv：
- L_mem：x 与 y* 各自前向到 t₁ 后，各块膜电位的余弦相似度之和（批内取平均）
- L_adv：从 y* 的 t₁ 状态出发在 x 上继续运行 t₁+1..T 的交叉熵（状态不截断）
生成后对每个类别运行 y* 到 t₁，把各块膜电位截断到 [V_min, V_max] 后存入库中。
"""
import threading
import weakref
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field

from app.config import settings
from app.engine import ops
from app.engine.tensor import Tensor
from app.models.configs import AmprConfig
from app.models.dataset import Dataset
from app.snn.model import LifState, SnnModel, forward_window
from app.snn.serialization import model_fingerprint, read_container, sidecar_path, write_container
from app.utils.errors import BankError, DatasetError, ShapeError, WindowError
from app.utils.logger import logger

# 每轮返回 (x 批, 标签批)
Sampler = Callable[[np.random.Generator], Tuple[np.ndarray, np.ndarray]]


class BankMetadata(BaseModel):
    """膜电位库元数据（JSON 侧文件）"""
    t1: int = Field(..., ge=1, description="预热时间步 t₁")
    v_min: Optional[float] = Field(None, description="截断下界，None 表示不截断")
    v_max: Optional[float] = Field(None, description="截断上界，None 表示不截断")
    fingerprint: str = Field(..., description="生成库所用模型的 SHA-256 指纹")
    architecture: str = Field(..., description="模型结构名称")
    num_classes: int = Field(..., ge=2, description="类别数")
    class_specific: bool = Field(default=True, description="是否每个类别单独的膜图像")
    use_loss_mem: bool = Field(default=True, description="是否使用 L_mem")
    use_loss_adv: bool = Field(default=True, description="是否使用 L_adv")
    beta: float = Field(..., description="膜图像更新步长")
    iters: int = Field(..., description="梯度上升轮数")


class MembraneBank:
    """
    按类别保存的预热膜电位（只读，可跨线程共享）

    entries[y][l] 为类别 y 在块 l 上 t₁ 时刻（复位后）的膜电位，形状为块的单样本形状。
    """

    def __init__(
        self,
        entries: Dict[int, List[np.ndarray]],
        metadata: BankMetadata,
        images: Optional[Dict[int, np.ndarray]] = None,
    ):
        self.entries = entries
        self.metadata = metadata
        self.images = images or {}
        # 已校验过的模型（弱引用，模型释放后自动移除）
        self._verified: "weakref.WeakSet[SnnModel]" = weakref.WeakSet()
        self._lock = threading.Lock()

    @property
    def t1(self) -> int:
        return self.metadata.t1

    @property
    def classes(self) -> List[int]:
        return sorted(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def value_range(self) -> Tuple[float, float]:
        """库中全部膜电位的最小值与最大值"""
        values = [p for potentials in self.entries.values() for p in potentials]
        return min(float(p.min()) for p in values), max(float(p.max()) for p in values)

    def check_model(self, model: SnnModel) -> None:
        """
        校验模型与生成库所用的模型一致

        Raises:
            BankError: 指纹不一致
        """
        with self._lock:
            if model in self._verified:
                return
        fingerprint = model_fingerprint(model)
        if fingerprint != self.metadata.fingerprint:
            raise BankError(
                f"膜电位库与模型指纹不一致: bank={self.metadata.fingerprint[:12]}, model={fingerprint[:12]}"
            )
        with self._lock:
            self._verified.add(model)

    def potentials_for(self, y: int, model: SnnModel) -> List[np.ndarray]:
        """
        取类别 y 的各块膜电位

        Raises:
            BankError: 指纹不一致或缺少该类别
        """
        self.check_model(model)
        if y not in self.entries:
            raise BankError(f"膜电位库中没有类别 {y} 的条目")
        return self.entries[y]


def _warmup(model: SnnModel, image: Tensor, t1: int, batch_size: int = 1) -> LifState:
    """从全零状态运行 1..t₁，膜电位保留计算图"""
    state = LifState.fresh(model, batch_size)
    if t1 == 0:
        return state
    _, state = forward_window(model, image, state, 1, t1, detach_carry=False)
    return state


def _as_batch(model: SnnModel, image: Union[np.ndarray, Tensor]) -> Tensor:
    if isinstance(image, Tensor):
        return image if image.ndim == 4 else image.reshape((1,) + image.shape)
    data = np.asarray(image, dtype=np.float64)
    if tuple(data.shape) == model.input_shape:
        data = data[None]
    if data.ndim != 4 or tuple(data.shape[1:]) != model.input_shape:
        raise ShapeError(f"输入形状 {np.shape(image)} 与模型输入 {model.input_shape} 不一致")
    return Tensor(data)


def _similarity(x_state: LifState, star_state: LifState) -> Tensor:
    """各块余弦相似度（批内平均）之和"""
    terms = [
        ops.mean(ops.cosine_similarity(u_x, u_star))
        for u_x, u_star in zip(x_state.potentials, star_state.potentials)
    ]
    total = terms[0]
    for term in terms[1:]:
        total = total + term
    return total


def loss_mem(model: SnnModel, x: Union[np.ndarray, Tensor], y_star: Union[np.ndarray, Tensor], t1: int) -> Tensor:
    """
    L_mem：x 与 y* 在 t₁ 时刻各块膜电位的余弦相似度之和

    零向量膜电位的相似度记为 0。x 为一批样本时每块取批内平均。

    Raises:
        ShapeError: 输入形状与模型不一致
    """
    if t1 < 1:
        raise WindowError(f"L_mem 需要 t1 ≥ 1，当前 {t1}")
    x_batch = _as_batch(model, x)
    star = _as_batch(model, y_star)
    x_state = _warmup(model, x_batch, t1, x_batch.shape[0])
    star_state = _warmup(model, star, t1, star.shape[0])
    return _similarity(x_state, star_state)


def loss_adv(
    model: SnnModel,
    x: Union[np.ndarray, Tensor],
    y: Union[int, np.ndarray],
    t1: int,
    state_from_y_star: LifState,
) -> Tensor:
    """
    L_adv：从 y* 的 t₁ 状态出发，在 x 上运行 t₁+1..T 并计算对标签 y 的交叉熵

    传入状态不截断，梯度可以经由膜电位回到 y*。批大小为 1 的状态会广播到 x 的批。

    Raises:
        WindowError: 状态游标不等于 t₁+1
    """
    if state_from_y_star.t_cursor != t1 + 1:
        raise WindowError(f"L_adv 的状态游标 {state_from_y_star.t_cursor} 与 t1+1={t1 + 1} 不一致")
    x_batch = _as_batch(model, x)
    labels = np.broadcast_to(np.asarray(y, dtype=np.int64), (x_batch.shape[0],))
    output, _ = forward_window(
        model, x_batch, state_from_y_star, t1 + 1, model.timesteps, detach_carry=False,
    )
    return ops.cross_entropy(output.logits_mean, labels)


def mpr_loss(
    model: SnnModel,
    x: np.ndarray,
    labels: np.ndarray,
    y_star: Tensor,
    cfg: AmprConfig,
) -> Tensor:
    """L_mpr = L_mem + L_adv（按配置开关取舍），y* 只前向一次"""
    star_state = _warmup(model, y_star, cfg.t1)
    loss: Optional[Tensor] = None
    if cfg.use_loss_mem:
        x_state = _warmup(model, Tensor(x), cfg.t1, len(x))
        loss = _similarity(x_state, star_state)
    if cfg.use_loss_adv:
        adv = loss_adv(model, x, labels, cfg.t1, star_state)
        loss = adv if loss is None else loss + adv
    return loss


def _optimize(model: SnnModel, init: np.ndarray, sampler: Sampler, cfg: AmprConfig, rng: np.random.Generator) -> np.ndarray:
    lo, hi = cfg.pixel_domain
    y_star = np.clip(init, lo, hi)[None]
    for iteration in range(cfg.iters):
        images, labels = sampler(rng)
        star = Tensor(y_star, requires_grad=True)
        loss = mpr_loss(model, images, labels, star, cfg)
        loss.backward()
        gradient = star.grad if star.grad is not None else np.zeros_like(y_star)
        y_star = ops.clip(Tensor.wrap(y_star) + ops.sign(gradient) * cfg.beta, lo, hi).data
        logger.debug(f"膜图像迭代 {iteration + 1}/{cfg.iters}: L_mpr={loss.item():.4f}")
    return y_star[0]


def _class_sampler(dataset: Dataset, y: int, count: int) -> Sampler:
    indices = dataset.class_indices(y)
    if indices.size == 0:
        raise DatasetError(f"数据集中没有类别 {y} 的样本")
    if indices.size < count:
        logger.warning(f"类别 {y} 只有 {indices.size} 个样本，少于 samples_per_class={count}")

    def _sample(rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        chosen = rng.choice(indices, size=min(count, indices.size), replace=False)
        return dataset.images[chosen], dataset.labels[chosen]

    return _sample


def generate_membrane_image(model: SnnModel, y: int, dataset: Dataset, cfg: AmprConfig) -> np.ndarray:
    """
    为类别 y 生成膜图像 y*

    初始化为该类训练图像的均值，每轮重新抽取 samples_per_class 个该类样本，
    按 y* ← clip(y* + β·sgn(∇L_mpr)) 上升。

    Args:
        model: 冻结的模型
        y: 类别
        dataset: 训练集
        cfg: 生成参数

    Returns:
        [C,H,W] 膜图像

    Raises:
        DatasetError: 数据集中没有该类别
    """
    cfg.check_horizon(model.timesteps)
    sampler = _class_sampler(dataset, y, cfg.samples_per_class)
    rng = np.random.default_rng([cfg.seed, y])
    return _optimize(model, dataset.class_mean(y), sampler, cfg, rng)


def generate_shared_membrane_image(model: SnnModel, dataset: Dataset, cfg: AmprConfig) -> np.ndarray:
    """
    所有类别共用一张膜图像（仅用于消融）

    初始化为全部训练图像的均值，每轮从整个训练集抽样，L_adv 使用各样本自己的标签。
    """
    cfg.check_horizon(model.timesteps)
    if len(dataset) == 0:
        raise DatasetError("训练集为空")

    def _sample(rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        chosen = rng.choice(len(dataset), size=min(cfg.samples_per_class, len(dataset)), replace=False)
        return dataset.images[chosen], dataset.labels[chosen]

    rng = np.random.default_rng([cfg.seed, model.num_classes])
    return _optimize(model, dataset.images.mean(axis=0), _sample, cfg, rng)


def _clamp(potential: np.ndarray, v_min: Optional[float], v_max: Optional[float]) -> np.ndarray:
    if v_min is None and v_max is None:
        return potential.copy()
    return np.clip(potential, v_min, v_max)


def snapshot_potentials(model: SnnModel, image: np.ndarray, cfg: AmprConfig) -> List[np.ndarray]:
    """运行膜图像到 t₁，返回截断后的各块膜电位"""
    state = LifState.fresh(model, 1)
    _, state = forward_window(model, Tensor(image[None]), state, 1, cfg.t1)
    return [_clamp(p.data[0], cfg.v_min, cfg.v_max) for p in state.potentials]


def build_bank(
    model: SnnModel,
    dataset: Dataset,
    cfg: AmprConfig,
    num_workers: Optional[int] = None,
) -> MembraneBank:
    """
    生成膜电位库

    各类别的优化相互独立，在线程池中并行。

    Args:
        model: 冻结的模型（白盒为受害模型，黑盒为替代模型）
        dataset: 训练集
        cfg: 生成参数
        num_workers: 线程数，默认 settings.num_workers

    Returns:
        每个类别一个条目的膜电位库

    Raises:
        DatasetError: 某个类别在训练集中不存在
    """
    cfg.check_horizon(model.timesteps)
    classes = list(range(model.num_classes))
    workers = num_workers or settings.num_workers
    logger.info(
        f"开始生成膜电位库: classes={len(classes)}, t1={cfg.t1}, iters={cfg.iters}, "
        f"bounds={cfg.bounds_label}, class_specific={cfg.class_specific}, workers={workers}"
    )

    if cfg.class_specific:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            images = dict(zip(classes, executor.map(
                lambda y: generate_membrane_image(model, y, dataset, cfg), classes,
            )))
    else:
        shared = generate_shared_membrane_image(model, dataset, cfg)
        images = {y: shared for y in classes}

    entries = {y: snapshot_potentials(model, images[y], cfg) for y in classes}
    metadata = BankMetadata(
        t1=cfg.t1,
        v_min=cfg.v_min,
        v_max=cfg.v_max,
        fingerprint=model_fingerprint(model),
        architecture=model.architecture.name,
        num_classes=model.num_classes,
        class_specific=cfg.class_specific,
        use_loss_mem=cfg.use_loss_mem,
        use_loss_adv=cfg.use_loss_adv,
        beta=cfg.beta,
        iters=cfg.iters,
    )
    bank = MembraneBank(entries, metadata, images=images)
    lo, hi = bank.value_range()
    logger.info(f"膜电位库生成完成: entries={len(bank)}, range=[{lo:.4f}, {hi:.4f}]")
    return bank


def save_bank(bank: MembraneBank, path: Union[str, Path]) -> Path:
    """按模型容器格式保存库，元数据写入 JSON 侧文件"""
    path = Path(path)
    tensors: Dict[str, np.ndarray] = {}
    block_count = 0
    for y in bank.classes:
        block_count = len(bank.entries[y])
        for index, potential in enumerate(bank.entries[y]):
            tensors[f"class.{y}.block.{index}"] = potential
        if y in bank.images:
            tensors[f"class.{y}.image"] = bank.images[y]
    write_container(path, tensors, block_count=block_count)
    sidecar_path(path).write_text(bank.metadata.model_dump_json(indent=2), encoding="utf-8")
    logger.info(f"膜电位库已保存: {path}")
    return path


def load_bank(path: Union[str, Path]) -> MembraneBank:
    """
    读取膜电位库

    Raises:
        BankError: 缺少某个类别或某个块的条目
    """
    path = Path(path)
    metadata = BankMetadata.model_validate_json(sidecar_path(path).read_text(encoding="utf-8"))
    block_count, tensors = read_container(path)
    entries: Dict[int, List[np.ndarray]] = {}
    images: Dict[int, np.ndarray] = {}
    for y in range(metadata.num_classes):
        try:
            # float32 存储可能越过截断边界，读取后重新截断
            entries[y] = [
                _clamp(tensors[f"class.{y}.block.{index}"], metadata.v_min, metadata.v_max)
                for index in range(block_count)
            ]
        except KeyError as e:
            raise BankError(f"膜电位库缺少条目 {e.args[0]}: {path}") from e
        if f"class.{y}.image" in tensors:
            images[y] = tensors[f"class.{y}.image"]
    logger.info(f"膜电位库已加载: {path}, entries={len(entries)}, t1={metadata.t1}")
    return MembraneBank(entries, metadata, images=images)
