"""张量与自动微分引擎"""
from app.engine.tensor import DTYPE, Function, GradientTape, Tensor, as_tensor

__all__ = ["DTYPE", "Function", "GradientTape", "Tensor", "as_tensor"]
