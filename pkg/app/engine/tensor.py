"""张量与反向模式自动微分

Tensor 保存 numpy 数组以及创建它的 Function；GradientTape 从标量损失出发，
按前向记录的逆拓扑序回放各个 Function 的 backward。没有任何全局自动微分状态，
每次攻击调用各自持有自己的计算图。
"""
from abc import ABC, abstractmethod
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from app.utils.errors import NumericError, ShapeError, TapeError

DTYPE = np.float64

ArrayLike = Union[np.ndarray, float, int, Sequence[float], Sequence[Sequence[float]]]


class Function(ABC):
    """
    可微基本运算的基类

    子类实现 forward（输入为 numpy 数组）与 backward（输入为输出梯度，
    返回与每个输入对应的梯度，不需要梯度的位置返回 None）。
    """

    def __init__(self, *inputs: "Tensor"):
        self.inputs = inputs
        self.saved: Dict[str, Any] = {}
        self.released = False

    @abstractmethod
    def forward(self, *arrays: np.ndarray, **kwargs: Any) -> np.ndarray:
        """前向计算"""

    @abstractmethod
    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        """反向计算"""

    @classmethod
    def apply(cls, *inputs: "Tensor", **kwargs: Any) -> "Tensor":
        """
        构造运算并执行前向，输出张量引用本运算以便回放

        Raises:
            NumericError: 前向结果含 NaN / Inf
        """
        fn = cls(*inputs)
        out_data = fn.forward(*(t.data for t in inputs), **kwargs)
        if not np.all(np.isfinite(out_data)):
            raise NumericError(f"{cls.__name__} 产生了非有限数值")
        requires_grad = any(t.requires_grad for t in inputs)
        return Tensor.wrap(out_data, requires_grad=requires_grad, creator=fn if requires_grad else None)

    @staticmethod
    def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
        """把广播后的梯度求和还原到原形状"""
        if grad.shape == shape:
            return grad
        while grad.ndim > len(shape):
            grad = grad.sum(axis=0)
        for axis, size in enumerate(shape):
            if size == 1 and grad.shape[axis] != 1:
                grad = grad.sum(axis=axis, keepdims=True)
        return grad


class Tensor:
    """参与反向模式自动微分的稠密张量（行优先存储）"""

    __slots__ = ("data", "requires_grad", "grad", "creator", "name")

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        creator: Optional[Function] = None,
        name: Optional[str] = None,
    ):
        self.data = np.array(data, dtype=DTYPE, copy=True)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.creator = creator
        self.name = name

    @classmethod
    def wrap(
        cls,
        data: np.ndarray,
        requires_grad: bool = False,
        creator: Optional[Function] = None,
    ) -> "Tensor":
        """不复制地包装运算结果"""
        tensor = cls.__new__(cls)
        tensor.data = np.asarray(data, dtype=DTYPE)
        tensor.requires_grad = requires_grad
        tensor.grad = None
        tensor.creator = creator
        tensor.name = None
        return tensor

    # ------------------------------------------------------------------
    # 基本属性
    # ------------------------------------------------------------------
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError(f"item() 只适用于单元素张量，当前形状 {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> "Tensor":
        """返回数值相同、不参与求导的常量张量"""
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> "GradientTape":
        """从本标量张量记录 tape 并回放，返回已消费的 tape"""
        tape = GradientTape.record(self)
        tape.backward()
        return tape

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # ------------------------------------------------------------------
    # 运算符，具体实现见 app.engine.ops
    # ------------------------------------------------------------------
    def __add__(self, other: Any) -> "Tensor":
        from app.engine import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other: Any) -> "Tensor":
        from app.engine import ops
        return ops.sub(self, other)

    def __rsub__(self, other: Any) -> "Tensor":
        from app.engine import ops
        return ops.sub(other, self)

    def __mul__(self, other: Any) -> "Tensor":
        from app.engine import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        from app.engine import ops
        return ops.mul(self, -1.0)

    def reshape(self, *shape: int) -> "Tensor":
        from app.engine import ops
        return ops.reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    def sum(self) -> "Tensor":
        from app.engine import ops
        return ops.sum(self)

    def mean(self) -> "Tensor":
        from app.engine import ops
        return ops.mean(self)


def as_tensor(value: Any) -> Tensor:
    """把标量或数组包装成常量张量，张量原样返回"""
    if isinstance(value, Tensor):
        return value
    return Tensor(value, requires_grad=False)


class GradientTape:
    """
    一次反向传播使用的运算记录

    record() 从损失出发收集所有需要梯度的运算并按前向拓扑序排列；
    backward() 逆序回放一次，之后释放保存的激活值，同一张计算图不能再次回放。
    被 detach 的张量不在图中，因此不会收到任何梯度。
    """

    def __init__(self, loss: Tensor, entries: List[Tensor]):
        self.loss = loss
        self.entries = entries
        self.consumed = False

    @classmethod
    def record(cls, loss: Tensor) -> "GradientTape":
        """
        从损失张量收集运算记录

        Raises:
            ShapeError: 损失不是标量
            TapeError: 损失不在任何记录上，或计算图已被回放过
        """
        if loss.size != 1:
            raise ShapeError(f"backward 需要标量损失，当前形状 {loss.shape}")
        if not loss.requires_grad:
            raise TapeError("记录带为空：损失不依赖任何需要梯度的张量")

        entries: List[Tensor] = []
        visited = set()
        stack: List[Tuple[Tensor, bool]] = [(loss, False)]
        while stack:
            tensor, expanded = stack.pop()
            if expanded:
                entries.append(tensor)
                continue
            if id(tensor) in visited or tensor.creator is None:
                continue
            visited.add(id(tensor))
            if tensor.creator.released:
                raise TapeError("该计算图已回放过，再次 backward 前需要重新前向记录")
            stack.append((tensor, True))
            for parent in tensor.creator.inputs:
                if parent.requires_grad and parent.creator is not None and id(parent) not in visited:
                    stack.append((parent, False))
        return cls(loss, entries)

    @property
    def operations(self) -> List[Function]:
        """按前向顺序排列的运算"""
        return [t.creator for t in self.entries]

    def backward(self) -> None:
        """逆拓扑序回放，把梯度累加到需要梯度的叶子张量上"""
        if self.consumed:
            raise TapeError("同一条记录带不能回放两次")
        self.consumed = True

        seed = np.ones_like(self.loss.data)
        if self.loss.creator is None:
            self.loss.grad = seed if self.loss.grad is None else self.loss.grad + seed
            return

        grads: Dict[int, np.ndarray] = {id(self.loss): seed}
        for tensor in reversed(self.entries):
            grad = grads.pop(id(tensor), None)
            fn = tensor.creator
            if grad is not None:
                input_grads = fn.backward(grad)
                for parent, parent_grad in zip(fn.inputs, input_grads):
                    if parent_grad is None or not parent.requires_grad:
                        continue
                    if parent.creator is None:
                        parent.grad = parent_grad.copy() if parent.grad is None else parent.grad + parent_grad
                    else:
                        key = id(parent)
                        grads[key] = parent_grad if key not in grads else grads[key] + parent_grad
            fn.saved.clear()
            fn.released = True
