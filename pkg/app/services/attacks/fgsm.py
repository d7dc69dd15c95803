"""FGSM：一次全时域前向与反向，δ = ε·sgn(∇L)"""
from typing import Optional, Union

import numpy as np

from app.engine.tensor import Tensor
from app.models.configs import AttackConfig
from app.models.results import AttackResult, WindowTrace
from app.services.attacks.base import BaseAttack, Generation
from app.snn.model import LifState, SnnModel


class FgsmAttack(BaseAttack):
    """快速梯度符号法"""

    def __init__(self):
        super().__init__("fgsm")

    def generate(self, model: SnnModel, x: Tensor, label: int, cfg: AttackConfig, bank=None) -> Generation:
        timesteps = model.timesteps
        delta = self._zeros(x)
        window = self._window_step(model, x, delta, label, LifState.fresh(model, 1), 1, timesteps, cfg)
        return Generation(
            delta=self._step(x, delta, window.gradient, cfg.epsilon, cfg),
            windows_used=1,
            timesteps_consumed=timesteps,
            runtime_timesteps=timesteps,
            backward_passes=1,
            accumulated_ce=window.ce,
            trace=[WindowTrace(t_s=1, t_e=timesteps, ce=window.ce, running_prediction=window.prediction)],
        )


def fgsm(model: SnnModel, x: Union[np.ndarray, Tensor], y: int, cfg: AttackConfig,
         judge: Optional[SnnModel] = None) -> AttackResult:
    return FgsmAttack().run(model, x, y, cfg, judge=judge)
