"""LIF 脉冲神经网络"""
from app.snn.model import (
    LifState,
    SnnModel,
    SpikingBlock,
    TraceRecord,
    WindowOutput,
    forward_window,
    inject_state,
    lif_step,
    predict,
    predict_batch,
    run_trace,
)

__all__ = [
    "LifState",
    "SnnModel",
    "SpikingBlock",
    "TraceRecord",
    "WindowOutput",
    "forward_window",
    "inject_state",
    "lif_step",
    "predict",
    "predict_batch",
    "run_trace",
]
