"""白盒 / 黑盒攻击执行与 ASR 统计"""
from concurrent.futures import ThreadPoolExecutor
from typing import TYPE_CHECKING, List, Optional, Union

import numpy as np

from app.config import settings
from app.models.configs import AttackConfig
from app.models.dataset import Dataset
from app.models.results import AsrReport, AttackResult, SampleOutcome
from app.services.attack_factory import AttackFactory
from app.services.attacks.base import BaseAttack
from app.snn.architectures import same_architecture
from app.snn.model import SnnModel, predict_batch
from app.utils.errors import ArchitectureMismatchError, EmptyEvaluationError
from app.utils.logger import logger

if TYPE_CHECKING:
    from app.services.ampr import MembraneBank

AttackLike = Union[str, BaseAttack]


def _resolve(attack: AttackLike) -> BaseAttack:
    return AttackFactory.create(attack) if isinstance(attack, str) else attack


def transfer_attack(
    victim: SnnModel,
    surrogate: SnnModel,
    x: np.ndarray,
    y: int,
    cfg: AttackConfig,
    bank: Optional["MembraneBank"] = None,
    attack: AttackLike = "tlbp",
) -> AttackResult:
    """
    黑盒迁移攻击：扰动完全在替代模型上生成，成功与否由受害模型判定

    Args:
        victim: 受害模型（只用于判定）
        surrogate: 结构相同、参数独立的替代模型
        x: 干净输入
        y: 真实标签
        cfg: 攻击参数
        bank: 在替代模型上生成的膜电位库
        attack: 攻击名称或实例

    Raises:
        ArchitectureMismatchError: 两个模型的结构描述不一致
    """
    if not same_architecture(victim, surrogate):
        raise ArchitectureMismatchError(
            f"替代模型结构 {surrogate.architecture.name} 与受害模型结构 {victim.architecture.name} 不一致"
        )
    return _resolve(attack).run(surrogate, x, y, cfg, bank=bank, judge=victim)


def evaluate_asr(
    model: SnnModel,
    dataset: Dataset,
    attack: AttackLike,
    cfg: AttackConfig,
    bank: Optional["MembraneBank"] = None,
    surrogate: Optional[SnnModel] = None,
    count_correct_only: bool = True,
    num_workers: Optional[int] = None,
) -> AsrReport:
    """
    在数据切片上统计攻击成功率

    默认只有干净输入被正确分类的样本计入分母。样本之间并行，结果按样本下标排序。

    Args:
        model: 受害模型
        dataset: 评估切片
        attack: 攻击名称或实例
        cfg: 攻击参数
        bank: 膜电位库（use_ampr 时需要）
        surrogate: 给出时为黑盒迁移攻击
        count_correct_only: 是否只统计干净样本分类正确的样本
        num_workers: 线程数，默认 settings.num_workers

    Returns:
        ASR 汇总与逐样本结果

    Raises:
        EmptyEvaluationError: 没有可计入的样本
    """
    runner = _resolve(attack)
    if surrogate is not None and not same_architecture(model, surrogate):
        raise ArchitectureMismatchError("替代模型与受害模型结构不一致")
    generator = surrogate or model

    clean_preds, _ = predict_batch(model, dataset.images)
    if count_correct_only:
        counted = np.flatnonzero(clean_preds == dataset.labels)
    else:
        counted = np.arange(len(dataset))
    skipped = len(dataset) - counted.size
    if counted.size == 0:
        raise EmptyEvaluationError(f"评估切片中没有可计入的样本（共 {len(dataset)} 个，跳过 {skipped} 个）")

    def _attack_one(index: int) -> SampleOutcome:
        label = int(dataset.labels[index])
        result = runner.run(generator, dataset.images[index], label, cfg, bank=bank, judge=model)
        return SampleOutcome(
            sample_id=int(index),
            clean_pred=int(clean_preds[index]),
            label=label,
            attack=runner.name,
            w=cfg.window_size if runner.name == "tlbp" else None,
            th_ce=cfg.th_ce if runner.name == "tlbp" else None,
            windows_used=result.windows_used,
            timesteps_consumed=result.timesteps_consumed,
            runtime_timesteps=result.runtime_timesteps,
            success=result.success,
            latency_us=result.wall_latency_us,
            accumulated_ce=result.accumulated_ce,
        )

    workers = num_workers or settings.num_workers
    with ThreadPoolExecutor(max_workers=workers) as executor:
        outcomes: List[SampleOutcome] = list(executor.map(_attack_one, counted.tolist()))

    successes = sum(o.success for o in outcomes)
    latencies = np.array([o.latency_us for o in outcomes])
    report = AsrReport(
        asr=successes / len(outcomes),
        counted=len(outcomes),
        successes=successes,
        skipped=skipped,
        mean_latency_us=float(latencies.mean()),
        p95_latency_us=float(np.percentile(latencies, 95)),
        mean_windows=float(np.mean([o.windows_used for o in outcomes])),
        mean_timesteps=float(np.mean([o.timesteps_consumed for o in outcomes])),
        mean_runtime_timesteps=float(np.mean([o.runtime_timesteps for o in outcomes])),
        per_sample=outcomes,
    )
    logger.info(
        f"ASR 评估完成: attack={runner.name}, w={cfg.window_size}, th_ce={cfg.th_ce}, "
        f"asr={report.asr:.4f} ({successes}/{report.counted}), skipped={skipped}, "
        f"mean_timesteps={report.mean_timesteps:.2f}"
    )
    return report
