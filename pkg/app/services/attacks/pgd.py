"""PGD：每次迭代重新运行完整的 T 个时间步"""
from typing import Optional, Union

import numpy as np

from app.engine.tensor import Tensor
from app.models.configs import AttackConfig
from app.models.results import AttackResult, WindowTrace
from app.services.attacks.base import BaseAttack, Generation
from app.snn.model import LifState, SnnModel
from app.utils.logger import logger


class PgdAttack(BaseAttack):
    """投影梯度下降，δ⁰ = 0，步长 γ，共 r_max 次迭代"""

    def __init__(self):
        super().__init__("pgd")

    def generate(self, model: SnnModel, x: Tensor, label: int, cfg: AttackConfig, bank=None) -> Generation:
        timesteps = model.timesteps
        generation = Generation(delta=self._zeros(x))
        for iteration in range(1, cfg.pgd_iters + 1):
            window = self._window_step(
                model, x, generation.delta, label, LifState.fresh(model, 1), 1, timesteps, cfg,
            )
            generation.delta = self._step(x, generation.delta, window.gradient, cfg.pgd_step, cfg)
            generation.accumulated_ce += window.ce
            generation.trace.append(
                WindowTrace(t_s=1, t_e=timesteps, ce=window.ce, running_prediction=window.prediction)
            )
            logger.debug(f"pgd 迭代 {iteration}: ce={window.ce:.4f}, pred={window.prediction}")

        generation.windows_used = cfg.pgd_iters
        generation.timesteps_consumed = cfg.pgd_iters * timesteps
        generation.runtime_timesteps = cfg.pgd_iters * timesteps
        generation.backward_passes = cfg.pgd_iters
        return generation


def pgd(model: SnnModel, x: Union[np.ndarray, Tensor], y: int, cfg: AttackConfig,
        judge: Optional[SnnModel] = None) -> AttackResult:
    return PgdAttack().run(model, x, y, cfg, judge=judge)
