"""LIF 脉冲神经网络：块结构、单步膜电位更新与按窗口的多时间步前向

输入采用直接编码：同一张实值图像在每个时间步都作为第一层卷积的输入电流。
每个块为 卷积 → 批归一化 → LIF，最后一个块的脉冲展平后经仿射分类头 h，
逐时间步输出 logits 再在窗口内取平均。
"""
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from app.engine import ops
from app.engine.tensor import Tensor
from app.models.architecture import ArchitectureSpec, BlockSpec
from app.utils.errors import ShapeError, WindowError

# observer(t, block_index, spikes, post_reset_potential)
StepObserver = Callable[[int, int, Tensor, Tensor], None]


class SpikingBlock:
    """卷积 → 批归一化 → LIF 的参数容器"""

    def __init__(
        self,
        spec: BlockSpec,
        conv_weight: np.ndarray,
        output_shape: Tuple[int, int, int],
        bn_gamma: Optional[np.ndarray] = None,
        bn_beta: Optional[np.ndarray] = None,
        bn_running_mean: Optional[np.ndarray] = None,
        bn_running_var: Optional[np.ndarray] = None,
    ):
        channels = spec.out_channels
        self.spec = spec
        self.output_shape = output_shape
        self.conv_weight = Tensor(conv_weight)
        self.bn_gamma = Tensor(np.ones(channels) if bn_gamma is None else bn_gamma)
        self.bn_beta = Tensor(np.zeros(channels) if bn_beta is None else bn_beta)
        self.bn_running_mean = Tensor(np.zeros(channels) if bn_running_mean is None else bn_running_mean)
        self.bn_running_var = Tensor(np.ones(channels) if bn_running_var is None else bn_running_var)

    @property
    def residual_from(self) -> Optional[int]:
        return self.spec.residual_from

    def parameters(self) -> List[Tensor]:
        return [self.conv_weight, self.bn_gamma, self.bn_beta]

    def buffers(self) -> List[Tensor]:
        return [self.bn_running_mean, self.bn_running_var]

    def current(self, x: Tensor, training: bool, momentum: float, eps: float) -> Tensor:
        """计算本块的输入电流 BN(W ∗ x)"""
        conv = ops.conv2d(x, self.conv_weight, stride=self.spec.stride, padding=self.spec.padding)
        return ops.batchnorm(
            conv, self.bn_gamma, self.bn_beta, self.bn_running_mean, self.bn_running_var,
            training=training, momentum=momentum, eps=eps,
        )


class SnnModel:
    """
    SNN 模型

    加载后视为只读，可在多个线程的攻击之间共享；只有训练期间参数才需要梯度。
    """

    def __init__(
        self,
        architecture: ArchitectureSpec,
        blocks: List[SpikingBlock],
        classifier_weight: np.ndarray,
        classifier_bias: np.ndarray,
        seed: Optional[int] = None,
    ):
        self.architecture = architecture
        self.blocks = blocks
        self.classifier_weight = Tensor(classifier_weight)
        self.classifier_bias = Tensor(classifier_bias)
        self.seed = seed

    # ------------------------------------------------------------------
    # 结构信息
    # ------------------------------------------------------------------
    @property
    def tau(self) -> float:
        return self.architecture.tau

    @property
    def v_th(self) -> float:
        return self.architecture.v_th

    @property
    def surrogate_width(self) -> float:
        return self.architecture.surrogate_width

    @property
    def timesteps(self) -> int:
        return self.architecture.timesteps

    @property
    def input_shape(self) -> Tuple[int, int, int]:
        return tuple(self.architecture.input_shape)

    @property
    def num_classes(self) -> int:
        return self.architecture.num_classes

    @property
    def num_blocks(self) -> int:
        return len(self.blocks)

    def block_shapes(self) -> List[Tuple[int, int, int]]:
        """每个块 LIF 层的单样本形状"""
        return [block.output_shape for block in self.blocks]

    # ------------------------------------------------------------------
    # 参数管理
    # ------------------------------------------------------------------
    def parameters(self) -> List[Tensor]:
        params: List[Tensor] = []
        for block in self.blocks:
            params.extend(block.parameters())
        params.extend([self.classifier_weight, self.classifier_bias])
        return params

    def named_tensors(self) -> Dict[str, Tensor]:
        """按固定顺序列出全部参数与缓冲区，用于序列化与指纹"""
        named: Dict[str, Tensor] = {}
        for index, block in enumerate(self.blocks):
            prefix = f"blocks.{index}"
            named[f"{prefix}.conv_weight"] = block.conv_weight
            named[f"{prefix}.bn_gamma"] = block.bn_gamma
            named[f"{prefix}.bn_beta"] = block.bn_beta
            named[f"{prefix}.bn_running_mean"] = block.bn_running_mean
            named[f"{prefix}.bn_running_var"] = block.bn_running_var
        named["classifier.weight"] = self.classifier_weight
        named["classifier.bias"] = self.classifier_bias
        return named

    def set_trainable(self, trainable: bool) -> None:
        """训练时打开参数梯度，其余时间关闭以保证多线程攻击不写共享参数"""
        for param in self.parameters():
            param.requires_grad = trainable
            param.grad = None

    def classify(self, spikes: Tensor) -> Tensor:
        """分类头 h：对最后一个块的脉冲展平后做仿射变换"""
        return ops.linear(ops.flatten(spikes), self.classifier_weight, self.classifier_bias)


@dataclass(frozen=True)
class LifState:
    """
    各块膜电位与下一个待处理时间步（从 1 开始）

    新状态膜电位全为 0、游标为 1；处理完时间步 t 后游标为 t+1。
    """
    potentials: Tuple[Tensor, ...]
    t_cursor: int = 1

    @classmethod
    def fresh(cls, model: SnnModel, batch_size: int = 1) -> "LifState":
        return cls(
            potentials=tuple(Tensor(np.zeros((batch_size,) + shape)) for shape in model.block_shapes()),
            t_cursor=1,
        )

    def with_potential(self, block_index: int, potential: Tensor) -> "LifState":
        potentials = list(self.potentials)
        potentials[block_index] = potential
        return LifState(potentials=tuple(potentials), t_cursor=self.t_cursor)

    def detached(self) -> "LifState":
        return LifState(potentials=tuple(p.detach() for p in self.potentials), t_cursor=self.t_cursor)

    def snapshot(self) -> List[np.ndarray]:
        """膜电位的 numpy 拷贝"""
        return [p.numpy() for p in self.potentials]


@dataclass(frozen=True)
class WindowOutput:
    """一个窗口的前向结果"""
    logits_mean: Tensor
    spike_ratios: Tuple[float, ...]
    window: Tuple[int, int]
    step_logits: List[Tensor] = field(default_factory=list, repr=False)


def _integrate(model: SnnModel, u_prev: Tensor, current: Tensor) -> Tuple[Tensor, Tensor]:
    """
    单个 LIF 层的一步：u ← τ·u_prev + I；s = H(u - V_th)；硬复位 u ← u ⊙ (1 - s)

    发放判断使用复位前的膜电位。

    Returns:
        (脉冲, 复位后的膜电位)
    """
    u = u_prev * model.tau + current
    spikes = ops.heaviside_surrogate(u, model.v_th, model.surrogate_width)
    return spikes, u * (1.0 - spikes)


def _check_broadcast(stored: Tuple[int, ...], incoming: Tuple[int, ...], block_index: int) -> None:
    if stored[1:] != incoming[1:] or (stored[0] != incoming[0] and 1 not in (stored[0], incoming[0])):
        raise ShapeError(f"块 {block_index} 的膜电位形状 {stored} 与输入电流形状 {incoming} 不匹配")


def lif_step(
    model: SnnModel,
    block_index: int,
    input_current: Tensor,
    state: LifState,
) -> Tuple[Tensor, LifState]:
    """
    对单个块执行一次 LIF 更新

    Args:
        model: 提供 τ、V_th 与替代梯度半宽
        block_index: 块下标
        input_current: 该块本时间步的输入电流
        state: 当前状态

    Returns:
        (脉冲, 更新了该块膜电位的新状态)；游标不变，由 forward_window 推进

    Raises:
        ShapeError: 状态中的膜电位形状与输入电流不匹配
    """
    u_prev = state.potentials[block_index]
    _check_broadcast(u_prev.shape, input_current.shape, block_index)
    spikes, u_next = _integrate(model, u_prev, input_current)
    return spikes, state.with_potential(block_index, u_next)


def forward_window(
    model: SnnModel,
    input: Tensor,
    state: LifState,
    t_s: int,
    t_e: int,
    detach_carry: bool = True,
    training: bool = False,
    observer: Optional[StepObserver] = None,
) -> Tuple[WindowOutput, LifState]:
    """
    在时间步 t_s..t_e 上运行全部块与分类头

    Args:
        model: SNN 模型
        input: [N,C,H,W] 输入，每个时间步相同
        state: 上一窗口结束时的状态，游标必须等于 t_s
        t_s: 窗口起始时间步（从 1 开始）
        t_e: 窗口结束时间步（含）
        detach_carry: 为 True 时把传入的膜电位视为常量（窗口截断反传）
        training: 批归一化是否使用批统计量
        observer: 每个块每个时间步之后的回调

    Returns:
        (窗口输出, 游标为 t_e+1 的新状态)

    Raises:
        WindowError: t_s 与状态游标不一致，或窗口越界
        ShapeError: 输入形状与模型不一致
    """
    if t_s != state.t_cursor:
        raise WindowError(f"窗口起点 t_s={t_s} 与状态游标 {state.t_cursor} 不一致")
    if t_e < t_s or t_e > model.timesteps:
        raise WindowError(f"窗口 [{t_s}, {t_e}] 越界，总时间步 T={model.timesteps}")
    if input.ndim != 4 or tuple(input.shape[1:]) != model.input_shape:
        raise ShapeError(f"输入形状 {input.shape} 与模型输入 {model.input_shape} 不一致")

    arch = model.architecture
    potentials = [p.detach() if detach_carry else p for p in state.potentials]
    spike_totals = [0.0] * model.num_blocks
    step_logits: List[Tensor] = []

    # 直接编码：第一块的输入电流在窗口内各时间步相同
    first_current = model.blocks[0].current(input, training, arch.bn_momentum, arch.bn_eps)

    for t in range(t_s, t_e + 1):
        outputs: List[Tensor] = []
        for index, block in enumerate(model.blocks):
            if index == 0:
                current = first_current
            else:
                current = block.current(outputs[-1], training, arch.bn_momentum, arch.bn_eps)
            if block.residual_from is not None:
                current = current + outputs[block.residual_from]
            _check_broadcast(potentials[index].shape, current.shape, index)
            spikes, potentials[index] = _integrate(model, potentials[index], current)
            outputs.append(spikes)
            spike_totals[index] += float(spikes.data.mean())
            if observer is not None:
                observer(t, index, spikes, potentials[index])
        step_logits.append(model.classify(outputs[-1]))

    length = t_e - t_s + 1
    output = WindowOutput(
        logits_mean=ops.average(step_logits),
        spike_ratios=tuple(total / length for total in spike_totals),
        window=(t_s, t_e),
        step_logits=step_logits,
    )
    return output, LifState(potentials=tuple(potentials), t_cursor=t_e + 1)


def inject_state(
    model: SnnModel,
    state: LifState,
    potentials: Sequence[Union[np.ndarray, Tensor]],
    t_cursor: int,
) -> LifState:
    """
    把预先计算的膜电位注入状态（常量，不接收梯度）

    Args:
        model: 用于校验形状与时间步
        state: 决定批大小的参考状态
        potentials: 每个块一份膜电位，可带或不带批维
        t_cursor: 注入后的游标，表示下一个待处理的时间步

    Returns:
        新状态

    Raises:
        ShapeError: 块数或形状不匹配
        WindowError: 游标越界
    """
    if not 1 <= t_cursor <= model.timesteps:
        raise WindowError(f"注入游标 {t_cursor} 超出 [1, {model.timesteps}]")
    if len(potentials) != model.num_blocks:
        raise ShapeError(f"注入了 {len(potentials)} 个块的膜电位，模型有 {model.num_blocks} 个块")

    injected: List[Tensor] = []
    for index, (potential, shape, reference) in enumerate(zip(potentials, model.block_shapes(), state.potentials)):
        data = potential.data if isinstance(potential, Tensor) else np.asarray(potential)
        if tuple(data.shape) == shape:
            data = data[None]
        if tuple(data.shape[1:]) != shape:
            raise ShapeError(f"块 {index} 注入形状 {data.shape} 与模型形状 {shape} 不匹配")
        if data.shape[0] != reference.shape[0]:
            data = np.broadcast_to(data, (reference.shape[0],) + shape)
        injected.append(Tensor(data))
    return LifState(potentials=tuple(injected), t_cursor=t_cursor)


def _as_batch(model: SnnModel, input: Union[np.ndarray, Tensor]) -> Tensor:
    data = input.data if isinstance(input, Tensor) else np.asarray(input)
    if tuple(data.shape) == model.input_shape:
        data = data[None]
    return Tensor(data)


def predict(model: SnnModel, input: Union[np.ndarray, Tensor]) -> Tuple[int, np.ndarray]:
    """
    完整 T 步前向后取平均 logits 的 argmax（并列时取下标最小的类别）

    Returns:
        (预测类别, logits[K])
    """
    batch = _as_batch(model, input)
    if batch.shape[0] != 1:
        raise ShapeError(f"predict 只接受单个样本，实际批大小 {batch.shape[0]}")
    output, _ = forward_window(model, batch, LifState.fresh(model, 1), 1, model.timesteps)
    logits = output.logits_mean.data[0]
    return int(np.argmax(logits)), logits.copy()


def predict_batch(
    model: SnnModel,
    images: np.ndarray,
    batch_size: int = 64,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    批量预测

    Returns:
        (预测类别 [N], logits [N,K])
    """
    preds: List[np.ndarray] = []
    logits: List[np.ndarray] = []
    for start in range(0, len(images), batch_size):
        batch = Tensor(images[start:start + batch_size])
        output, _ = forward_window(model, batch, LifState.fresh(model, batch.shape[0]), 1, model.timesteps)
        logits.append(output.logits_mean.data)
        preds.append(np.argmax(output.logits_mean.data, axis=1))
    if not logits:
        return np.zeros(0, dtype=np.int64), np.zeros((0, model.num_classes))
    return np.concatenate(preds), np.concatenate(logits)


@dataclass
class TraceRecord:
    """逐时间步的膜电位与脉冲记录，数组形状为 [步数, N, ...]"""
    potentials: List[np.ndarray]
    spikes: List[np.ndarray]
    logits: np.ndarray
    window: Tuple[int, int]

    def spike_ratio_per_step(self, block_index: int = -1) -> np.ndarray:
        spikes = self.spikes[block_index]
        return spikes.reshape(spikes.shape[0], -1).mean(axis=1)


def run_trace(
    model: SnnModel,
    input: Union[np.ndarray, Tensor],
    state: Optional[LifState] = None,
    t_e: Optional[int] = None,
) -> TraceRecord:
    """
    不求导地运行并记录每个时间步每个块的复位后膜电位与脉冲

    Args:
        model: SNN 模型
        input: 单个样本或一批样本
        state: 起始状态，默认全零
        t_e: 结束时间步，默认 T
    """
    batch = _as_batch(model, input)
    if state is None:
        state = LifState.fresh(model, batch.shape[0])
    end = model.timesteps if t_e is None else t_e
    potentials: List[List[np.ndarray]] = [[] for _ in range(model.num_blocks)]
    spikes: List[List[np.ndarray]] = [[] for _ in range(model.num_blocks)]

    def _record(t: int, index: int, s: Tensor, u: Tensor) -> None:
        spikes[index].append(s.numpy())
        potentials[index].append(np.broadcast_to(u.data, s.shape).copy())

    output, _ = forward_window(model, batch, state, state.t_cursor, end, observer=_record)
    step_logits = np.stack([logit.data for logit in output.step_logits])
    return TraceRecord(
        potentials=[np.stack(p) for p in potentials],
        spikes=[np.stack(s) for s in spikes],
        logits=step_logits,
        window=output.window,
    )
