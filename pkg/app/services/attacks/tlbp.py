"""TLBP：按时间窗口前向与反传，累计交叉熵达到阈值即提前停止

状态在窗口之间流式延续：窗口 n 只运行 [t_s, t_e]，之前的时间步在 δ 更新后不重算
（recompute_prefix 打开时除外），传入的膜电位在窗口边界截断梯度。
使用膜电位库时，状态从库中注入到游标 t₁+1，窗口边界整体后移 t₁。
"""
from typing import TYPE_CHECKING, Optional, Tuple, Union

import numpy as np

from app.engine.tensor import Tensor
from app.models.configs import AttackConfig
from app.models.results import AttackResult, WindowTrace
from app.services.attacks.base import BaseAttack, Generation
from app.snn.model import LifState, SnnModel, forward_window, inject_state
from app.utils.errors import BankError
from app.utils.logger import logger

if TYPE_CHECKING:
    from app.services.ampr import MembraneBank


def window_bounds(n: int, w: int, timesteps: int, offset: int = 0) -> Tuple[int, int]:
    """第 n 个窗口（从 1 开始）的 [t_s, t_e]"""
    return offset + (n - 1) * w + 1, min(offset + n * w, timesteps)


class TlbpAttack(BaseAttack):
    """时间步级反向传播攻击"""

    def __init__(self):
        super().__init__("tlbp")

    def initial_state(
        self,
        model: SnnModel,
        label: int,
        cfg: AttackConfig,
        bank: Optional["MembraneBank"],
    ) -> Tuple[LifState, int]:
        """
        起始状态与窗口偏移

        Raises:
            BankError: use_ampr 但没有膜电位库，或库的预热长度与 t1 不一致
        """
        fresh = LifState.fresh(model, 1)
        if not cfg.use_ampr:
            return fresh, 0
        if bank is None:
            raise BankError("use_ampr 需要膜电位库")
        if bank.t1 != cfg.t1:
            raise BankError(f"膜电位库的 t1={bank.t1} 与攻击参数 t1={cfg.t1} 不一致")
        # 运行时只做一次拷贝注入，不做任何优化
        return inject_state(model, fresh, bank.potentials_for(label, model), cfg.t1 + 1), cfg.t1

    def generate(
        self,
        model: SnnModel,
        x: Tensor,
        label: int,
        cfg: AttackConfig,
        bank: Optional["MembraneBank"] = None,
    ) -> Generation:
        timesteps = model.timesteps
        start_state, offset = self.initial_state(model, label, cfg, bank)
        state = start_state
        generation = Generation(delta=self._zeros(x))

        n = 0
        while True:
            n += 1
            t_s, t_e = window_bounds(n, cfg.window_size, timesteps, offset)
            if cfg.recompute_prefix and t_s > start_state.t_cursor:
                # 在当前 δ 下重算 [t₁+1, t_s-1]，不求导
                _, state = forward_window(
                    model, x + Tensor.wrap(generation.delta), start_state, start_state.t_cursor, t_s - 1,
                )
                generation.runtime_timesteps += t_s - start_state.t_cursor

            window = self._window_step(model, x, generation.delta, label, state, t_s, t_e, cfg)
            state = window.state
            generation.delta = self._step(x, generation.delta, window.gradient, cfg.step_size, cfg)
            generation.accumulated_ce += window.ce
            generation.runtime_timesteps += t_e - t_s + 1
            generation.backward_passes += 1
            generation.trace.append(
                WindowTrace(t_s=t_s, t_e=t_e, ce=window.ce, running_prediction=window.prediction)
            )
            logger.debug(
                f"tlbp 窗口 {n} [{t_s},{t_e}]: ce={window.ce:.4f}, "
                f"累计={generation.accumulated_ce:.4f}, pred={window.prediction}"
            )

            if generation.accumulated_ce >= cfg.th_ce:
                break
            if t_e >= timesteps:
                break
            if cfg.max_windows is not None and n >= cfg.max_windows:
                break

        generation.windows_used = n
        generation.timesteps_consumed = t_e
        return generation


def tlbp(
    model: SnnModel,
    x: Union[np.ndarray, Tensor],
    y: int,
    cfg: AttackConfig,
    bank: Optional["MembraneBank"] = None,
    judge: Optional[SnnModel] = None,
) -> AttackResult:
    return TlbpAttack().run(model, x, y, cfg, bank=bank, judge=judge)
