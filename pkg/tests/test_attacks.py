"""FGSM / PGD / TLBP 与 ASR 评估"""
import math

import numpy as np
import pytest

from app.models.configs import AmprConfig, AttackConfig
from app.models.dataset import Dataset
from app.services.ampr import build_bank
from app.services.attack_factory import AttackFactory
from app.services.attacks import fgsm, pgd, tlbp, window_bounds
from app.services.evaluation import evaluate_asr, transfer_attack
from app.snn.architectures import ArchitectureFactory, build_model
from app.snn.model import predict
from app.utils.errors import ArchitectureMismatchError, BankError, ConfigError, EmptyEvaluationError

EPS = 8 / 255
T = 4


def _inputs(n, shape=(3, 6, 6), seed=0):
    return np.random.default_rng(seed).uniform(0.0, 1.0, size=(n,) + shape)


def test_window_bounds():
    assert window_bounds(1, 2, 8) == (1, 2)
    assert window_bounds(3, 3, 8) == (7, 8)
    assert window_bounds(1, 2, 8, offset=2) == (3, 4)


def test_fgsm_zero_budget_leaves_input_unchanged(toy_victim, toy_test_data):
    x, y = toy_test_data.images[0], int(toy_test_data.labels[0])
    result = fgsm(toy_victim, x, y, AttackConfig(epsilon=0.0))
    assert np.all(result.delta == 0.0)
    clean_pred, _ = predict(toy_victim, x)
    assert result.success == (clean_pred != y)


def test_fgsm_delta_has_sign_structure(toy_victim):
    x = np.full((3, 6, 6), 0.5)
    result = fgsm(toy_victim, x, 0, AttackConfig(epsilon=EPS))
    moved = np.abs(result.delta[result.delta != 0])
    np.testing.assert_allclose(moved, EPS, rtol=0, atol=1e-12)
    assert result.timesteps_consumed == T
    assert result.windows_used == 1
    assert result.backward_passes == 1


def test_tlbp_full_window_equals_fgsm_bitwise(toy_victim):
    cfg = AttackConfig(epsilon=EPS, window_size=T, th_ce=math.inf)
    for x in _inputs(100):
        for y in (0, 1):
            a = fgsm(toy_victim, x, y, cfg)
            b = tlbp(toy_victim, x, y, cfg)
            np.testing.assert_array_equal(a.delta, b.delta)
            assert b.windows_used == 1


def test_single_step_pgd_equals_fgsm_bitwise(toy_victim):
    cfg = AttackConfig(epsilon=EPS, pgd_step=EPS, pgd_iters=1)
    for x in _inputs(20, seed=1):
        np.testing.assert_array_equal(fgsm(toy_victim, x, 1, cfg).delta, pgd(toy_victim, x, 1, cfg).delta)


def test_pgd_two_iterations_costs_two_horizons(toy_victim):
    result = pgd(toy_victim, np.full((3, 6, 6), 0.4), 0, AttackConfig(epsilon=EPS, pgd_step=EPS, pgd_iters=2))
    assert result.timesteps_consumed == 2 * T
    assert result.windows_used == 2
    assert len(result.per_window_trace) == 2


def test_full_window_tlbp_is_not_pgd(toy_victim):
    """w=T 的 TLBP 只执行一个窗口，不会像 PGD 一样重跑 1..T"""
    x = np.full((3, 6, 6), 0.4)
    cfg = AttackConfig(epsilon=EPS, pgd_step=EPS, pgd_iters=2, window_size=T)
    assert tlbp(toy_victim, x, 0, cfg).timesteps_consumed == T
    assert pgd(toy_victim, x, 0, cfg).timesteps_consumed == 2 * T


def test_budget_holds_across_random_configs(toy_victim):
    rng = np.random.default_rng(123)
    attacks = [AttackFactory.create(name) for name in ("fgsm", "pgd", "tlbp")]
    violations = 0
    for call in range(1000):
        eps = float(rng.choice([0.0, 1 / 255, 8 / 255, 32 / 255, 0.5]))
        cfg = AttackConfig(
            epsilon=eps,
            pgd_step=float(rng.uniform(0.0, 0.3)),
            pgd_iters=int(rng.integers(1, 4)),
            window_size=int(rng.integers(1, T + 1)),
            th_ce=float(rng.choice([0.0, 0.1, 1.0, math.inf])),
            tlbp_step=float(rng.uniform(0.0, 0.6)) if rng.random() < 0.5 else None,
        )
        x = rng.choice([0.0, 1.0, 0.5], size=(3, 6, 6)) if call % 3 == 0 else rng.uniform(0, 1, (3, 6, 6))
        result = attacks[call % 3].run(toy_victim, x, int(rng.integers(0, 2)), cfg)
        if np.max(np.abs(result.delta)) > eps + 1e-7:
            violations += 1
        if result.adversarial.min() < 0.0 or result.adversarial.max() > 1.0:
            violations += 1
        if np.max(np.abs(result.adversarial - x)) > eps + 1e-7:
            violations += 1
    assert violations == 0


@pytest.mark.parametrize("w", [1, 2, 3])
def test_zero_threshold_stops_after_first_window(toy_victim, w):
    result = tlbp(toy_victim, np.full((3, 6, 6), 0.3), 1, AttackConfig(window_size=w, th_ce=0.0))
    assert result.windows_used == 1
    assert result.timesteps_consumed == w


@pytest.mark.parametrize("w", [1, 2, 3, 4])
def test_infinite_threshold_consumes_horizon(toy_victim, w):
    result = tlbp(toy_victim, np.full((3, 6, 6), 0.3), 1, AttackConfig(window_size=w))
    assert result.timesteps_consumed == T
    assert result.windows_used == math.ceil(T / w)
    assert result.runtime_timesteps == T


def test_windows_used_monotone_in_threshold(toy_victim, toy_test_data):
    grid = [0.01, 0.1, 1.0, 5.0]
    for x, y in zip(toy_test_data.images, toy_test_data.labels):
        used = [tlbp(toy_victim, x, int(y), AttackConfig(window_size=1, th_ce=th)).windows_used for th in grid]
        assert used == sorted(used)


def test_window_trace_records_boundaries(toy_victim):
    result = tlbp(toy_victim, np.full((3, 6, 6), 0.6), 0, AttackConfig(window_size=3))
    assert [(t.t_s, t.t_e) for t in result.per_window_trace] == [(1, 3), (4, 4)]
    assert result.accumulated_ce == pytest.approx(sum(t.ce for t in result.per_window_trace))


def test_max_windows_caps_tlbp(toy_victim):
    result = tlbp(toy_victim, np.full((3, 6, 6), 0.6), 0, AttackConfig(window_size=1, max_windows=2))
    assert result.windows_used == 2
    assert result.timesteps_consumed == 2


def test_recompute_prefix_counts_replayed_timesteps(toy_victim):
    x = np.full((3, 6, 6), 0.6)
    streaming = tlbp(toy_victim, x, 0, AttackConfig(window_size=1))
    replayed = tlbp(toy_victim, x, 0, AttackConfig(window_size=1, recompute_prefix=True))
    assert streaming.runtime_timesteps == T
    assert replayed.runtime_timesteps == sum(range(1, T + 1))
    assert replayed.timesteps_consumed == streaming.timesteps_consumed == T


def test_ampr_without_bank_is_bank_error(toy_victim):
    with pytest.raises(BankError):
        tlbp(toy_victim, np.full((3, 6, 6), 0.6), 0, AttackConfig(use_ampr=True, t1=1))


def test_window_larger_than_horizon_is_config_error(toy_victim):
    with pytest.raises(ConfigError):
        tlbp(toy_victim, np.full((3, 6, 6), 0.6), 0, AttackConfig(window_size=T + 1))


def test_targeted_mode_judges_against_target(toy_victim):
    x = np.full((3, 6, 6), 0.5)
    result = fgsm(toy_victim, x, 0, AttackConfig(epsilon=0.0, targeted=True))
    clean_pred, _ = predict(toy_victim, x)
    assert result.success == (clean_pred == 1)


def test_transfer_with_victim_as_surrogate_equals_white_box(toy_victim, toy_test_data):
    cfg = AttackConfig(window_size=2, th_ce=1.0)
    for x, y in zip(toy_test_data.images[:5], toy_test_data.labels[:5]):
        white = tlbp(toy_victim, x, int(y), cfg)
        black = transfer_attack(toy_victim, toy_victim, x, int(y), cfg)
        np.testing.assert_array_equal(white.delta, black.delta)
        assert white.success == black.success


def test_transfer_zero_budget_reflects_clean_prediction(toy_victim, toy_surrogate, toy_test_data):
    x, y = toy_test_data.images[0], int(toy_test_data.labels[0])
    result = transfer_attack(toy_victim, toy_surrogate, x, y, AttackConfig(epsilon=0.0), attack="fgsm")
    assert result.success == (predict(toy_victim, x)[0] != y)


def test_transfer_rejects_architecture_mismatch(toy_victim):
    other = build_model(ArchitectureFactory.create("tiny", (3, 6, 6), 2, T, v_th=0.5), 0)
    with pytest.raises(ArchitectureMismatchError):
        transfer_attack(toy_victim, other, np.zeros((3, 6, 6)), 0, AttackConfig())


def test_identity_attack_has_zero_asr(toy_victim, toy_test_data):
    report = evaluate_asr(toy_victim, toy_test_data, "none", AttackConfig())
    assert report.asr == 0.0
    assert report.counted + report.skipped == len(toy_test_data)


def _without_latency(report):
    return [o.model_dump(exclude={"latency_us"}) for o in report.per_sample]


def test_asr_is_a_rate_and_deterministic(toy_victim, toy_test_data):
    cfg = AttackConfig(epsilon=32 / 255, window_size=2, th_ce=0.5)
    first = evaluate_asr(toy_victim, toy_test_data, "tlbp", cfg, num_workers=4)
    second = evaluate_asr(toy_victim, toy_test_data, "tlbp", cfg, num_workers=1)
    assert 0.0 <= first.asr <= 1.0
    assert first.asr == second.asr
    assert [o.sample_id for o in first.per_sample] == sorted(o.sample_id for o in first.per_sample)
    assert _without_latency(first) == _without_latency(second)


def test_counting_all_samples_includes_misclassified(toy_victim, toy_test_data):
    report = evaluate_asr(toy_victim, toy_test_data, "none", AttackConfig(), count_correct_only=False)
    assert report.counted == len(toy_test_data)
    assert report.skipped == 0


def test_empty_counted_set_is_error(toy_victim, toy_test_data):
    preds = [predict(toy_victim, img)[0] for img in toy_test_data.images[:4]]
    wrong = Dataset(
        images=toy_test_data.images[:4],
        labels=[1 - p for p in preds],
        num_classes=2,
    )
    with pytest.raises(EmptyEvaluationError):
        evaluate_asr(toy_victim, wrong, "fgsm", AttackConfig())


def test_unknown_attack_is_config_error():
    with pytest.raises(ConfigError):
        AttackFactory.create("rga")


# ----------------------------------------------------------------------
# 固定种子下的方向性结论
# ----------------------------------------------------------------------
STRONG_EPS = 64 / 255
SATURATING_EPS = 128 / 255


def _report(model, data, attack, **values):
    return evaluate_asr(model, data, attack, AttackConfig(**values), num_workers=2)


def test_fgsm_asr_does_not_decrease_with_budget(toy_victim, toy_test_data):
    rates = [_report(toy_victim, toy_test_data, "fgsm", epsilon=eps).asr for eps in (0.0, 8 / 255, 32 / 255, 128 / 255)]
    assert rates[0] == 0.0
    assert all(later >= earlier for earlier, later in zip(rates, rates[1:]))
    assert rates[-1] > 0.0


def test_early_stopped_tlbp_keeps_fgsm_strength_at_fraction_of_cost(toy_victim, toy_test_data):
    reference = _report(toy_victim, toy_test_data, "fgsm", epsilon=STRONG_EPS)
    cheap = [
        _report(toy_victim, toy_test_data, "tlbp", epsilon=STRONG_EPS, window_size=w, th_ce=0.0)
        for w in (1, 2)
    ]
    assert all(report.mean_timesteps <= 0.6 * T for report in cheap)
    assert max(report.asr for report in cheap) >= 0.9 * reference.asr


@pytest.fixture(scope="module")
def warm_banks(toy_victim, toy_data):
    cfg = dict(t1=1, iters=3, samples_per_class=6, seed=0)
    return {
        "bounded": build_bank(toy_victim, toy_data, AmprConfig(**cfg), num_workers=2),
        "unbounded": build_bank(toy_victim, toy_data, AmprConfig(v_min=None, v_max=None, **cfg), num_workers=2),
    }


def test_warm_start_does_not_hurt_first_window(toy_victim, toy_test_data, warm_banks):
    first_window = dict(epsilon=SATURATING_EPS, window_size=1, max_windows=1)
    cold = _report(toy_victim, toy_test_data, "tlbp", **first_window)
    bounded = evaluate_asr(
        toy_victim, toy_test_data, "tlbp", AttackConfig(use_ampr=True, t1=1, **first_window),
        bank=warm_banks["bounded"], num_workers=2,
    )
    unbounded = evaluate_asr(
        toy_victim, toy_test_data, "tlbp", AttackConfig(use_ampr=True, t1=1, **first_window),
        bank=warm_banks["unbounded"], num_workers=2,
    )
    assert bounded.mean_runtime_timesteps == cold.mean_runtime_timesteps == 1.0
    assert bounded.asr >= cold.asr
    assert bounded.asr >= unbounded.asr


def test_transfer_is_no_stronger_than_white_box(toy_victim, toy_surrogate, toy_test_data):
    cfg = AttackConfig(epsilon=SATURATING_EPS)
    white = evaluate_asr(toy_victim, toy_test_data, "fgsm", cfg, num_workers=2)
    black = evaluate_asr(toy_victim, toy_test_data, "fgsm", cfg, surrogate=toy_surrogate, num_workers=2)
    assert black.counted == white.counted
    assert black.asr <= white.asr
