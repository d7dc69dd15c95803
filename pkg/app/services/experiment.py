"""实验编排：攻击网格、A-MPR 消融与逐窗口剖析"""
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.special import softmax
from scipy.stats import binomtest

from app.config import settings
from app.models.configs import AttackConfig
from app.models.dataset import Dataset
from app.models.results import SAMPLE_COLUMNS, AsrReport
from app.models.specs import AblationSpec, ExperimentSpec, ProfileSpec
from app.services.ampr import MembraneBank, build_bank, load_bank
from app.services.datasets import load_dataset, select_samples
from app.services.evaluation import evaluate_asr
from app.services.results_writer import ResultCollector, provenance_lines, write_frame
from app.snn.model import LifState, SnnModel, inject_state, predict_batch, run_trace
from app.snn.serialization import load_model
from app.utils.errors import ConfigError, ExperimentError
from app.utils.logger import logger


@dataclass(frozen=True)
class GridCell:
    """攻击网格中的一个单元"""
    attack: str
    w: Optional[int] = None
    th_ce: Optional[float] = None

    @property
    def label(self) -> str:
        if self.attack != "tlbp":
            return self.attack
        return f"tlbp(w={self.w}, th_ce={self.th_ce:g})"


def _check_data(model: SnnModel, dataset: Dataset) -> None:
    if dataset.num_classes != model.num_classes:
        raise ConfigError(f"数据集类别数 {dataset.num_classes} 与模型类别数 {model.num_classes} 不一致")
    if dataset.sample_shape != model.input_shape:
        raise ConfigError(f"数据集样本形状 {dataset.sample_shape} 与模型输入 {model.input_shape} 不一致")


def _evaluation_slice(spec: Any, model: SnnModel) -> Dataset:
    data = select_samples(load_dataset(spec, "test"), spec.sample_limit, spec.seed)
    _check_data(model, data)
    return data


def _split_workers(cells: int) -> Tuple[int, int]:
    """把 settings.num_workers 分给网格单元与单元内的样本"""
    outer = max(1, min(settings.num_workers, cells))
    return outer, max(1, settings.num_workers // outer)


def build_grid(spec: ExperimentSpec) -> List[GridCell]:
    cells: List[GridCell] = []
    for attack in spec.attacks:
        if attack == "tlbp":
            cells.extend(GridCell("tlbp", w, th) for w in spec.windows for th in spec.th_ce)
        else:
            cells.append(GridCell(attack))
    return cells


def pareto_front(frame: pd.DataFrame, cost: str = "mean_timesteps", gain: str = "asr") -> pd.Series:
    """
    标记非支配单元：不存在另一单元 cost 不更高、gain 不更低且至少一项严格更好
    """
    costs = frame[cost].to_numpy()
    gains = frame[gain].to_numpy()
    flags = []
    for c, g in zip(costs, gains):
        dominated = np.any((costs <= c) & (gains >= g) & ((costs < c) | (gains > g)))
        flags.append(not dominated)
    return pd.Series(flags, index=frame.index, name="pareto")


def summary_row(cell: GridCell, report: AsrReport, mode: str) -> Dict[str, Any]:
    return {
        "mode": mode,
        "attack": cell.attack,
        "w": cell.w,
        "th_ce": cell.th_ce,
        "asr": report.asr,
        "counted": report.counted,
        "successes": report.successes,
        "skipped": report.skipped,
        "mean_timesteps": report.mean_timesteps,
        "mean_runtime_timesteps": report.mean_runtime_timesteps,
        "mean_windows": report.mean_windows,
        "mean_latency_us": report.mean_latency_us,
        "p95_latency_us": report.p95_latency_us,
    }


def run_experiment(spec: ExperimentSpec) -> Path:
    """
    执行攻击网格

    输出目录下写出 samples.csv（逐样本）与 summary.csv（每个单元一行，附 Pareto 标记）。

    Returns:
        summary.csv 路径

    Raises:
        ExperimentError: 某个单元执行失败（携带单元信息）
    """
    victim = load_model(spec.victim)
    surrogate = load_model(spec.surrogate) if spec.surrogate else None
    bank = load_bank(spec.bank) if spec.bank else None
    data = _evaluation_slice(spec, victim)
    mode = "black-box" if surrogate is not None else "white-box"
    cells = build_grid(spec)
    outer, inner = _split_workers(len(cells))
    output = Path(spec.output)
    header = provenance_lines(spec, timesteps=victim.timesteps, mode=mode)
    logger.info(f"开始攻击网格: cells={len(cells)}, samples={len(data)}, mode={mode}, T={victim.timesteps}")

    def _run_cell(item: Tuple[int, GridCell]) -> Dict[str, Any]:
        sequence, cell = item
        try:
            cfg = spec.attack_config(window_size=cell.w or 1, th_ce=math.inf if cell.th_ce is None else cell.th_ce)
            cfg.check_horizon(victim.timesteps)
            report = evaluate_asr(
                victim, data, cell.attack, cfg,
                bank=bank if cell.attack == "tlbp" and spec.use_ampr else None,
                surrogate=surrogate,
                count_correct_only=spec.count_correct_only,
                num_workers=inner,
            )
        except Exception as e:
            logger.error(f"网格单元 {cell.label} 失败: {e}")
            raise ExperimentError(cell.label, e) from e
        collector.submit(sequence, [o.to_row() for o in report.per_sample])
        logger.info(f"{cell.label}: asr={report.asr:.4f}, mean_timesteps={report.mean_timesteps:.2f}")
        return summary_row(cell, report, mode)

    with ResultCollector(output / "samples.csv", SAMPLE_COLUMNS, header) as collector:
        with ThreadPoolExecutor(max_workers=outer) as executor:
            rows = list(executor.map(_run_cell, enumerate(cells)))

    summary = pd.DataFrame(rows)
    summary["w"] = summary["w"].astype("Int64")
    summary["pareto"] = pareto_front(summary).astype(int)
    return write_frame(output / "summary.csv", summary, header)


def wilson_interval(successes: int, counted: int, confidence: float = 0.95) -> Tuple[float, float]:
    """ASR 的 Wilson 置信区间"""
    interval = binomtest(successes, counted).proportion_ci(confidence_level=confidence, method="wilson")
    return float(interval.low), float(interval.high)


# 组件消融：(名称, 是否使用库, AmprConfig 开关)
COMPONENT_VARIANTS: List[Tuple[str, bool, Dict[str, bool]]] = [
    ("no_bank", False, {}),
    ("loss_adv", True, {"use_loss_mem": False, "use_loss_adv": True, "class_specific": False}),
    ("loss_adv+loss_mem", True, {"use_loss_mem": True, "use_loss_adv": True, "class_specific": False}),
    ("full", True, {"use_loss_mem": True, "use_loss_adv": True, "class_specific": True}),
]

DEFAULT_BOUNDS = "0.2:0.5"


def run_ablation_ampr(spec: AblationSpec) -> Path:
    """
    A-MPR 消融：只执行第一个窗口（n=1）的 TLBP，比较不同库变体的 ASR

    组件变体依次为无库、仅 L_adv、L_adv+L_mem（共享膜图像）、完整（按类别）；
    截断区间变体在完整库上替换 [V_min, V_max]。每个变体对 windows 中的每个 w 各测一次。

    Returns:
        ablation.csv 路径
    """
    victim = load_model(spec.victim)
    surrogate = load_model(spec.surrogate) if spec.surrogate else None
    generator = surrogate or victim
    train = load_dataset(spec, "train")
    _check_data(generator, train)
    data = _evaluation_slice(spec, victim)
    for w in spec.windows:
        if spec.t1 + w > victim.timesteps:
            raise ConfigError(f"t1+w={spec.t1 + w} 超过总时间步 T={victim.timesteps}")

    banks: Dict[str, MembraneBank] = {}

    def _bank_for(bounds: str, switches: Dict[str, bool]) -> MembraneBank:
        key = f"{bounds}|{sorted(switches.items())}"
        if key not in banks:
            banks[key] = build_bank(generator, train, spec.ampr_config(bounds, **switches))
        return banks[key]

    variants: List[Tuple[str, str, Optional[MembraneBank]]] = []
    for name, uses_bank, switches in COMPONENT_VARIANTS:
        variants.append(("components", name, _bank_for(DEFAULT_BOUNDS, switches) if uses_bank else None))
    for bounds in spec.bounds:
        variants.append(("bounds", bounds, _bank_for(bounds, COMPONENT_VARIANTS[-1][2])))

    rows: List[Dict[str, Any]] = []
    for study, name, bank in variants:
        for w in spec.windows:
            cfg = AttackConfig(
                epsilon=spec.epsilon,
                window_size=w,
                max_windows=1,
                use_ampr=bank is not None,
                t1=spec.t1 if bank is not None else 0,
            )
            cell = f"{study}:{name}:w={w}"
            try:
                report = evaluate_asr(victim, data, "tlbp", cfg, bank=bank, surrogate=surrogate)
            except Exception as e:
                logger.error(f"消融单元 {cell} 失败: {e}")
                raise ExperimentError(cell, e) from e
            low, high = wilson_interval(report.successes, report.counted)
            rows.append({
                "study": study,
                "variant": name,
                "w": w,
                "asr": report.asr,
                "ci_low": low,
                "ci_high": high,
                "counted": report.counted,
                "successes": report.successes,
                "mean_timesteps": report.mean_timesteps,
                "mean_latency_us": report.mean_latency_us,
            })
            logger.info(f"{cell}: asr={report.asr:.4f} [{low:.3f}, {high:.3f}]")

    header = provenance_lines(spec, timesteps=victim.timesteps)
    return write_frame(Path(spec.output) / "ablation.csv", pd.DataFrame(rows), header)


def _warm_state(model: SnnModel, bank: MembraneBank, labels: np.ndarray, t1: int) -> LifState:
    """按每个样本的真实标签注入预热膜电位"""
    fresh = LifState.fresh(model, len(labels))
    per_block = list(zip(*(bank.potentials_for(int(y), model) for y in labels)))
    return inject_state(model, fresh, [np.stack(block) for block in per_block], t1 + 1)


def run_profile(spec: ProfileSpec) -> Path:
    """
    剖析攻击过程

    - profile_curve.csv：前 n 个窗口后的 ASR（n = 1..N，不提前停止）
    - profile_sweep.csv：不同 w 下第一个窗口的 ASR
    - profile_spikes.csv：全零状态与预热状态下每个时间步的输出层脉冲比例
    - profile_groups.csv：第一个窗口即被攻破 / 最后才被攻破 / 未被攻破的样本数与干净置信度

    Returns:
        输出目录
    """
    victim = load_model(spec.victim)
    bank = load_bank(spec.bank) if spec.bank else None
    data = _evaluation_slice(spec, victim)
    timesteps = victim.timesteps
    offset = spec.t1 if bank is not None else 0
    if offset + spec.window_size > timesteps:
        raise ConfigError(f"t1+w={offset + spec.window_size} 超过总时间步 T={timesteps}")
    max_windows = spec.max_windows or math.ceil((timesteps - offset) / spec.window_size)
    output = Path(spec.output)
    header = provenance_lines(spec, timesteps=timesteps)

    def _config(w: int, n: int) -> AttackConfig:
        return AttackConfig(
            epsilon=spec.epsilon, window_size=w, max_windows=n, use_ampr=bank is not None, t1=offset,
        )

    curve: List[Dict[str, Any]] = []
    reports: List[AsrReport] = []
    for n in range(1, max_windows + 1):
        report = evaluate_asr(victim, data, "tlbp", _config(spec.window_size, n), bank=bank)
        reports.append(report)
        curve.append({
            "n": n,
            "t_e": min(offset + n * spec.window_size, timesteps),
            "asr": report.asr,
            "counted": report.counted,
            "mean_timesteps": report.mean_timesteps,
        })
    write_frame(output / "profile_curve.csv", pd.DataFrame(curve), header)

    sweep: List[Dict[str, Any]] = []
    for w in spec.sweep_windows:
        if offset + w > timesteps:
            logger.warning(f"跳过 w={w}：t1+w 超过 T={timesteps}")
            continue
        report = evaluate_asr(victim, data, "tlbp", _config(w, 1), bank=bank)
        sweep.append({"w": w, "asr": report.asr, "mean_timesteps": report.mean_timesteps})
    write_frame(output / "profile_sweep.csv", pd.DataFrame(sweep, columns=["w", "asr", "mean_timesteps"]), header)

    spikes: List[Dict[str, Any]] = []
    fresh_trace = run_trace(victim, data.images)
    for step, ratio in enumerate(fresh_trace.spike_ratio_per_step(), start=1):
        spikes.append({"condition": "fresh", "timestep": step, "spike_ratio": float(ratio)})
    if bank is not None:
        warm_trace = run_trace(victim, data.images, state=_warm_state(victim, bank, data.labels, offset))
        for step, ratio in enumerate(warm_trace.spike_ratio_per_step(), start=offset + 1):
            spikes.append({"condition": "warm", "timestep": step, "spike_ratio": float(ratio)})
    write_frame(output / "profile_spikes.csv", pd.DataFrame(spikes), header)

    _, clean_logits = predict_batch(victim, data.images)
    confidence = softmax(clean_logits, axis=1)[np.arange(len(data)), data.labels]
    first = {o.sample_id: o.success for o in reports[0].per_sample}
    last = {o.sample_id: o.success for o in reports[-1].per_sample}
    groups: Dict[str, List[float]] = {"vulnerable": [], "robust": [], "resistant": []}
    for sample_id, fooled_early in first.items():
        if fooled_early:
            group = "vulnerable"
        elif last[sample_id]:
            group = "robust"
        else:
            group = "resistant"
        groups[group].append(float(confidence[sample_id]))
    write_frame(output / "profile_groups.csv", pd.DataFrame([
        {"group": name, "count": len(values), "mean_confidence": float(np.mean(values)) if values else float("nan")}
        for name, values in groups.items()
    ]), header)

    logger.info(f"剖析完成: windows={max_windows}, 输出目录 {output}")
    return output
