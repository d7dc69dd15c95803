"""可微基本运算

卷积、批归一化、Heaviside 脉冲（矩形替代梯度）、交叉熵等，均以 Function 子类实现，
对外暴露同名的小写函数。
"""
from typing import Any, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from app.engine.tensor import DTYPE, Function, Tensor, as_tensor
from app.utils.errors import ShapeError

Number = Union[int, float]


# ----------------------------------------------------------------------
# 逐元素运算
# ----------------------------------------------------------------------
class Add(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        self.saved["shapes"] = (a.shape, b.shape)
        return a + b

    def backward(self, grad):
        shape_a, shape_b = self.saved["shapes"]
        return self.unbroadcast(grad, shape_a), self.unbroadcast(grad, shape_b)


class Sub(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        self.saved["shapes"] = (a.shape, b.shape)
        return a - b

    def backward(self, grad):
        shape_a, shape_b = self.saved["shapes"]
        return self.unbroadcast(grad, shape_a), self.unbroadcast(-grad, shape_b)


class Mul(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        self.saved["a"] = a
        self.saved["b"] = b
        return a * b

    def backward(self, grad):
        a, b = self.saved["a"], self.saved["b"]
        grad_a = self.unbroadcast(grad * b, a.shape) if self.inputs[0].requires_grad else None
        grad_b = self.unbroadcast(grad * a, b.shape) if self.inputs[1].requires_grad else None
        return grad_a, grad_b


def add(a: Any, b: Any) -> Tensor:
    return Add.apply(as_tensor(a), as_tensor(b))


def sub(a: Any, b: Any) -> Tensor:
    return Sub.apply(as_tensor(a), as_tensor(b))


def mul(a: Any, b: Any) -> Tensor:
    return Mul.apply(as_tensor(a), as_tensor(b))


# ----------------------------------------------------------------------
# 形状与归约
# ----------------------------------------------------------------------
class Reshape(Function):
    def forward(self, x: np.ndarray, shape: Tuple[int, ...] = ()) -> np.ndarray:
        self.saved["shape"] = x.shape
        try:
            return x.reshape(shape)
        except ValueError as e:
            raise ShapeError(f"无法把形状 {x.shape} 变换为 {shape}") from e

    def backward(self, grad):
        return (grad.reshape(self.saved["shape"]),)


class Sum(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        self.saved["shape"] = x.shape
        return np.asarray(x.sum(dtype=np.float64))

    def backward(self, grad):
        return (np.broadcast_to(grad, self.saved["shape"]).astype(DTYPE),)


class Mean(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        self.saved["shape"] = x.shape
        return np.asarray(x.mean(dtype=np.float64))

    def backward(self, grad):
        shape = self.saved["shape"]
        count = int(np.prod(shape)) if shape else 1
        return (np.broadcast_to(grad / count, shape).astype(DTYPE),)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    return Reshape.apply(x, shape=tuple(shape))


def flatten(x: Tensor) -> Tensor:
    """保留第 0 维（批），其余展平"""
    return reshape(x, (x.shape[0], -1))


def sum(x: Tensor) -> Tensor:  # noqa: A001
    return Sum.apply(x)


def mean(x: Tensor) -> Tensor:
    return Mean.apply(x)


def average(tensors: Sequence[Tensor]) -> Tensor:
    """若干同形张量的算术平均"""
    if not tensors:
        raise ShapeError("average 至少需要一个张量")
    total = tensors[0]
    for t in tensors[1:]:
        total = total + t
    return total * (1.0 / len(tensors))


# ----------------------------------------------------------------------
# 全连接
# ----------------------------------------------------------------------
class Linear(Function):
    """y = x @ W^T + b"""

    def forward(self, x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
        if x.ndim != 2 or x.shape[1] != weight.shape[1]:
            raise ShapeError(f"全连接输入形状 {x.shape} 与权重形状 {weight.shape} 不匹配")
        self.saved["x"] = x
        self.saved["weight"] = weight
        return x @ weight.T + bias

    def backward(self, grad):
        x, weight = self.saved["x"], self.saved["weight"]
        grad_x = grad @ weight if self.inputs[0].requires_grad else None
        grad_w = grad.T @ x if self.inputs[1].requires_grad else None
        grad_b = grad.sum(axis=0) if self.inputs[2].requires_grad else None
        return grad_x, grad_w, grad_b


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    return Linear.apply(x, weight, bias)


# ----------------------------------------------------------------------
# 卷积
# ----------------------------------------------------------------------
def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


class Conv2d(Function):
    """互相关卷积（无偏置），im2col 实现"""

    def forward(self, x: np.ndarray, weight: np.ndarray, stride: int = 1, padding: int = 0) -> np.ndarray:
        if x.ndim != 4 or weight.ndim != 4:
            raise ShapeError(f"conv2d 需要 4 维输入与权重，实际为 {x.shape} / {weight.shape}")
        n, c, h, w = x.shape
        f, wc, kh, kw = weight.shape
        if c != wc:
            raise ShapeError(f"conv2d 通道不匹配：输入 C={c}，权重 C={wc}")
        if stride < 1 or padding < 0:
            raise ShapeError(f"conv2d 步长/填充非法：stride={stride}, padding={padding}")
        if kh > h + 2 * padding or kw > w + 2 * padding:
            raise ShapeError(
                f"conv2d 卷积核 {kh}x{kw} 大于填充后的输入 {h + 2 * padding}x{w + 2 * padding}"
            )

        padded = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x
        windows = sliding_window_view(padded, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
        out = np.tensordot(windows, weight, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)

        self.saved.update(windows=windows, weight=weight, padded_shape=padded.shape,
                          stride=stride, padding=padding)
        return np.ascontiguousarray(out)

    def backward(self, grad):
        windows, weight = self.saved["windows"], self.saved["weight"]
        stride, padding = self.saved["stride"], self.saved["padding"]
        _, _, out_h, out_w = grad.shape
        _, _, kh, kw = weight.shape

        grad_w = None
        if self.inputs[1].requires_grad:
            grad_w = np.tensordot(grad, windows, axes=([0, 2, 3], [0, 2, 3]))

        grad_x = None
        if self.inputs[0].requires_grad:
            grad_padded = np.zeros(self.saved["padded_shape"], dtype=DTYPE)
            for i in range(kh):
                for j in range(kw):
                    # (N,F,H',W') x (F,C) -> (N,H',W',C)
                    contrib = np.tensordot(grad, weight[:, :, i, j], axes=([1], [0])).transpose(0, 3, 1, 2)
                    grad_padded[:, :, i:i + stride * out_h:stride, j:j + stride * out_w:stride] += contrib
            if padding:
                grad_padded = grad_padded[:, :, padding:-padding, padding:-padding]
            grad_x = grad_padded
        return grad_x, grad_w


def conv2d(x: Tensor, weight: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """
    二维互相关卷积

    Args:
        x: 输入 [N,C,H,W]
        weight: 卷积核 [F,C,kH,kW]
        stride: 步长
        padding: 四周零填充宽度

    Returns:
        输出 [N,F,H',W']

    Raises:
        ShapeError: 维度不匹配，错误信息中给出出错的维度
    """
    return Conv2d.apply(x, weight, stride=stride, padding=padding)


# ----------------------------------------------------------------------
# 批归一化
# ----------------------------------------------------------------------
class BatchNorm(Function):
    def forward(
        self,
        x: np.ndarray,
        gamma: np.ndarray,
        beta: np.ndarray,
        running_mean: Optional[np.ndarray] = None,
        running_var: Optional[np.ndarray] = None,
        training: bool = False,
        momentum: float = 0.1,
        eps: float = 1e-5,
    ) -> np.ndarray:
        if x.ndim not in (2, 4) or x.shape[1] != gamma.shape[0]:
            raise ShapeError(f"batchnorm 通道不匹配：输入 {x.shape}，参数长度 {gamma.shape[0]}")
        axes = (0, 2, 3) if x.ndim == 4 else (0,)
        param_shape = (1, -1, 1, 1) if x.ndim == 4 else (1, -1)

        if training:
            count = x.size // x.shape[1]
            mu = x.mean(axis=axes, dtype=np.float64)
            var = x.var(axis=axes, dtype=np.float64)
            unbiased = var * count / (count - 1) if count > 1 else var
            running_mean *= 1.0 - momentum
            running_mean += momentum * mu
            running_var *= 1.0 - momentum
            running_var += momentum * unbiased
        else:
            mu, var = running_mean, running_var

        inv_std = 1.0 / np.sqrt(var + eps)
        x_hat = (x - mu.reshape(param_shape)) * inv_std.reshape(param_shape)
        self.saved.update(x_hat=x_hat, inv_std=inv_std, gamma=gamma, axes=axes,
                          param_shape=param_shape, training=training)
        return x_hat * gamma.reshape(param_shape) + beta.reshape(param_shape)

    def backward(self, grad):
        x_hat, inv_std, gamma = self.saved["x_hat"], self.saved["inv_std"], self.saved["gamma"]
        axes, param_shape = self.saved["axes"], self.saved["param_shape"]

        grad_gamma = (grad * x_hat).sum(axis=axes)
        grad_beta = grad.sum(axis=axes)
        grad_xhat = grad * gamma.reshape(param_shape)
        if self.saved["training"]:
            count = grad.size // grad.shape[1]
            grad_x = (inv_std.reshape(param_shape) / count) * (
                count * grad_xhat
                - grad_xhat.sum(axis=axes).reshape(param_shape)
                - x_hat * (grad_xhat * x_hat).sum(axis=axes).reshape(param_shape)
            )
        else:
            grad_x = grad_xhat * inv_std.reshape(param_shape)
        return grad_x, grad_gamma, grad_beta


def batchnorm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: Tensor,
    running_var: Tensor,
    training: bool = False,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """
    批归一化

    训练模式使用批统计量并就地更新 running_mean / running_var（方差按无偏估计累计）；
    推理模式只使用滑动统计量。攻击始终运行在推理模式。

    Raises:
        ShapeError: 通道数与参数长度不一致
    """
    if np.any(running_var.data < 0):
        raise ShapeError("running_var 不能为负")
    return BatchNorm.apply(
        x, gamma, beta,
        running_mean=running_mean.data,
        running_var=running_var.data,
        training=training,
        momentum=momentum,
        eps=eps,
    )


# ----------------------------------------------------------------------
# 脉冲发放
# ----------------------------------------------------------------------
class HeavisideSurrogate(Function):
    """
    前向：u > v_th 时为 1，否则为 0（严格不等号）
    反向：矩形替代梯度 1/(2a) · 1[|u - v_th| < a]
    """

    def forward(self, u: np.ndarray, v_th: float = 1.0, a: float = 0.5) -> np.ndarray:
        self.saved.update(u=u, v_th=v_th, a=a)
        return (u > v_th).astype(DTYPE)

    def backward(self, grad):
        u, v_th, a = self.saved["u"], self.saved["v_th"], self.saved["a"]
        window = (np.abs(u - v_th) < a).astype(DTYPE)
        return (grad * window / (2.0 * a),)


def heaviside_surrogate(u: Tensor, v_th: float, a: float) -> Tensor:
    if a <= 0:
        raise ValueError(f"替代梯度半宽 a 必须为正，当前 a={a}")
    return HeavisideSurrogate.apply(u, v_th=v_th, a=a)


# ----------------------------------------------------------------------
# 损失
# ----------------------------------------------------------------------
class CrossEntropy(Function):
    def forward(self, logits: np.ndarray, labels: Optional[np.ndarray] = None) -> np.ndarray:
        n, _ = logits.shape
        shifted = logits - logits.max(axis=1, keepdims=True)
        exp = np.exp(shifted)
        total = exp.sum(axis=1, keepdims=True, dtype=np.float64)
        log_probs = shifted - np.log(total)
        self.saved.update(probs=exp / total, labels=labels)
        return np.asarray(-log_probs[np.arange(n), labels].sum(dtype=np.float64) / n)

    def backward(self, grad):
        probs, labels = self.saved["probs"], self.saved["labels"]
        n = probs.shape[0]
        delta = probs.copy()
        delta[np.arange(n), labels] -= 1.0
        return (grad * delta / n,)


def cross_entropy(logits: Tensor, labels: Union[int, Sequence[int], np.ndarray]) -> Tensor:
    """
    批平均交叉熵（减最大值保证数值稳定）

    Raises:
        ShapeError: logits 不是二维或标签数与批大小不一致
        ValueError: 标签越界
    """
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy 需要 [N,K] 的 logits，实际为 {logits.shape}")
    label_array = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    n, k = logits.shape
    if n < 1 or label_array.shape != (n,):
        raise ShapeError(f"标签数 {label_array.shape} 与批大小 {n} 不一致")
    if np.any(label_array < 0) or np.any(label_array >= k):
        raise ValueError(f"标签越界：取值范围应为 [0, {k})，实际为 {label_array.tolist()}")
    return CrossEntropy.apply(logits, labels=label_array)


class CosineSimilarity(Function):
    """按样本展平后的余弦相似度，任一向量为零向量时相似度定义为 0"""

    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        shape_a, shape_b = a.shape, b.shape
        a_b, b_b = np.broadcast_arrays(a, b)
        n = a_b.shape[0]
        a_flat = a_b.reshape(n, -1)
        b_flat = b_b.reshape(n, -1)
        norm_a = np.sqrt((a_flat * a_flat).sum(axis=1))
        norm_b = np.sqrt((b_flat * b_flat).sum(axis=1))
        valid = (norm_a > 0) & (norm_b > 0)
        denom = np.where(valid, norm_a * norm_b, 1.0)
        sim = np.where(valid, (a_flat * b_flat).sum(axis=1) / denom, 0.0)
        self.saved.update(a=a_flat, b=b_flat, norm_a=norm_a, norm_b=norm_b, valid=valid, sim=sim,
                          shapes=(shape_a, shape_b), full_shape=a_b.shape)
        return sim

    def backward(self, grad):
        s = self.saved
        a, b, valid, sim = s["a"], s["b"], s["valid"], s["sim"]
        norm_a = np.where(valid, s["norm_a"], 1.0)[:, None]
        norm_b = np.where(valid, s["norm_b"], 1.0)[:, None]
        scale = (grad * valid)[:, None]
        grad_a = scale * (b / (norm_a * norm_b) - sim[:, None] * a / (norm_a ** 2))
        grad_b = scale * (a / (norm_a * norm_b) - sim[:, None] * b / (norm_b ** 2))
        shape_a, shape_b = s["shapes"]
        full = s["full_shape"]
        return (
            self.unbroadcast(grad_a.reshape(full), shape_a),
            self.unbroadcast(grad_b.reshape(full), shape_b),
        )


def cosine_similarity(a: Tensor, b: Tensor) -> Tensor:
    """
    逐样本余弦相似度

    Args:
        a: [N,...]
        b: [N,...] 或可广播到 a 的形状（如批大小为 1）

    Returns:
        [N] 相似度
    """
    return CosineSimilarity.apply(as_tensor(a), as_tensor(b))


# ----------------------------------------------------------------------
# 符号与截断
# ----------------------------------------------------------------------
def sign(g: Union[Tensor, np.ndarray]) -> Tensor:
    """逐元素符号函数，sign(0) = 0；结果为常量"""
    data = g.data if isinstance(g, Tensor) else np.asarray(g, dtype=DTYPE)
    return Tensor.wrap(np.sign(data))


class Clip(Function):
    def forward(self, x: np.ndarray, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
        self.saved["inside"] = (x >= lo) & (x <= hi)
        return np.clip(x, lo, hi)

    def backward(self, grad):
        return (grad * self.saved["inside"],)


def clip(x: Tensor, lo: Number, hi: Number) -> Tensor:
    """
    逐元素截断到 [lo, hi]，区间内梯度为 1，区间外为 0

    Raises:
        ValueError: lo > hi
    """
    if lo > hi:
        raise ValueError(f"clip 下界 {lo} 大于上界 {hi}")
    return Clip.apply(as_tensor(x), lo=float(lo), hi=float(hi))
