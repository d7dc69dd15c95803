"""配置解析、攻击网格、消融 / 剖析输出与命令行退出码"""
import argparse
import math

import numpy as np
import pandas as pd
import pytest

from app.config import get_attack_preset, load_flat_config
from app.commands.base import resolve_spec
from app.main import main
from app.models.configs import AmprConfig
from app.models.results import LATENCY_COLUMNS
from app.models.specs import AblationSpec, ExperimentSpec, ProfileSpec, TrainSpec, parse_bounds, parse_spec
from app.services.ampr import build_bank, save_bank
from app.services.experiment import (
    GridCell,
    build_grid,
    pareto_front,
    run_ablation_ampr,
    run_experiment,
    run_profile,
    wilson_interval,
)
from app.services.report import to_long_format, write_report
from app.services.results_writer import ResultCollector, read_provenance, read_results
from app.snn.serialization import save_model
from app.utils.errors import ConfigError

from tests.conftest import TOY_TIMESTEPS

T = TOY_TIMESTEPS

SYNTHETIC = {
    "dataset": "synthetic",
    "synthetic_classes": "2",
    "synthetic_channels": "3",
    "synthetic_size": "6",
    "synthetic_per_class": "12",
    "synthetic_noise": "0.05",
}


@pytest.fixture(scope="module")
def victim_path(toy_victim, tmp_path_factory):
    return str(save_model(toy_victim, tmp_path_factory.mktemp("models") / "victim.snnt"))


@pytest.fixture(scope="module")
def bank_path(toy_victim, toy_data, tmp_path_factory):
    bank = build_bank(toy_victim, toy_data, AmprConfig(t1=1, iters=2, samples_per_class=4))
    return str(save_bank(bank, tmp_path_factory.mktemp("banks") / "bank.snnt"))


def experiment_spec(victim_path, output, **values) -> ExperimentSpec:
    raw = dict(SYNTHETIC, victim=victim_path, output=str(output), sample_limit="10")
    raw.update({k: str(v) for k, v in values.items()})
    return parse_spec(ExperimentSpec, raw)


# ----------------------------------------------------------------------
# 配置
# ----------------------------------------------------------------------
def test_flat_values_are_parsed(victim_path, tmp_path):
    spec = experiment_spec(
        victim_path, tmp_path, attacks="FGSM, tlbp", windows="1,2", th_ce="0.1,inf", surrogate="none",
    )
    assert spec.attacks == ["fgsm", "tlbp"]
    assert spec.windows == [1, 2]
    assert spec.th_ce[0] == 0.1 and math.isinf(spec.th_ce[1])
    assert spec.surrogate is None
    assert [cell.label for cell in build_grid(spec)][:2] == ["fgsm", "tlbp(w=1, th_ce=0.1)"]
    assert len(build_grid(spec)) == 1 + 2 * 2


@pytest.mark.parametrize(
    "values",
    [
        {"colour": "blue"},
        {"attacks": "fgsm,rga"},
        {"windows": "0"},
        {"th_ce": "-1"},
        {"use_ampr": "true", "t1": "1"},
        {"bank": "/nonexistent/bank.snnt"},
        {"dataset_format": "imagenet"},
    ],
)
def test_invalid_values_are_config_errors(victim_path, tmp_path, values):
    with pytest.raises(ConfigError):
        experiment_spec(victim_path, tmp_path, **values)


def test_missing_victim_is_config_error(tmp_path):
    with pytest.raises(ConfigError):
        parse_spec(ExperimentSpec, dict(SYNTHETIC, victim=str(tmp_path / "missing.snnt")))


def test_parse_bounds():
    assert parse_bounds("none") == (None, None)
    assert parse_bounds("0.2:0.5") == (0.2, 0.5)
    with pytest.raises(ValueError):
        parse_bounds("0.2")


def test_flat_config_file_and_overrides(tmp_path):
    path = tmp_path / "run.env"
    path.write_text("# comment\nEPSILON=0.03\nwindows=1,2\n", encoding="utf-8")
    values = load_flat_config(str(path), ["windows=4", "seed = 7"])
    assert values == {"epsilon": "0.03", "windows": "4", "seed": "7"}


def test_flat_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_flat_config(str(tmp_path / "missing.env"))
    with pytest.raises(ConfigError):
        load_flat_config(None, ["epsilon"])


def test_presets(victim_path):
    assert get_attack_preset("full")["th_ce_grid"] == [0.01, 0.1, 1.0, 5.0]
    with pytest.raises(ValueError):
        get_attack_preset("huge")

    args = argparse.Namespace(preset="desk", config=None, overrides=[f"victim={victim_path}", "t1=3"])
    spec = resolve_spec(ExperimentSpec, args)
    assert spec.th_ce == [0.1, 1.0]
    assert spec.t1 == 3
    with pytest.raises(ConfigError):
        resolve_spec(ExperimentSpec, argparse.Namespace(preset="huge", config=None, overrides=[]))


# ----------------------------------------------------------------------
# 统计工具
# ----------------------------------------------------------------------
def test_pareto_front():
    frame = pd.DataFrame({"mean_timesteps": [4.0, 2.0, 2.0, 8.0], "asr": [0.5, 0.5, 0.7, 0.9]})
    assert pareto_front(frame).tolist() == [False, False, True, True]


def test_wilson_interval():
    low, high = wilson_interval(5, 10)
    assert low == pytest.approx(0.2366, abs=1e-3)
    assert high == pytest.approx(0.7634, abs=1e-3)
    assert wilson_interval(0, 10)[0] == pytest.approx(0.0, abs=1e-12)


def test_collector_writes_in_sequence_order(tmp_path):
    path = tmp_path / "rows.csv"
    with ResultCollector(path, ["a", "b"], ["# seed=1"]) as collector:
        collector.submit(1, [{"a": 2, "b": "y"}])
        collector.submit(0, [{"a": 1, "b": "x"}])
        collector.submit(2, [{"a": 3}])
    frame = read_results(path)
    assert frame["a"].tolist() == [1, 2, 3]
    assert read_provenance(path) == {"seed": "1"}


def test_long_format():
    frame = pd.DataFrame({"attack": ["fgsm", "pgd"], "asr": [0.5, 0.7], "mean_timesteps": [4.0, 8.0]})
    long = to_long_format(frame, source="summary")
    assert len(long) == 4
    assert set(long["metric"]) == {"asr", "mean_timesteps"}
    assert (long["source"] == "summary").all()
    with pytest.raises(ConfigError):
        to_long_format(pd.DataFrame({"attack": ["fgsm"]}))


# ----------------------------------------------------------------------
# 攻击网格
# ----------------------------------------------------------------------
def _run_grid(victim_path, output):
    spec = experiment_spec(victim_path, output, attacks="fgsm,pgd,tlbp,none", windows="1,2", th_ce="0.1,inf")
    return run_experiment(spec)


@pytest.fixture(scope="module")
def grid_dir(victim_path, tmp_path_factory):
    output = tmp_path_factory.mktemp("grid")
    _run_grid(victim_path, output)
    return output


def test_summary_costs(grid_dir):
    summary = read_results(grid_dir / "summary.csv")
    assert len(summary) == 1 + 1 + 4 + 1
    by_attack = summary.set_index("attack")
    assert by_attack.loc["fgsm", "mean_timesteps"] == T
    assert by_attack.loc["pgd", "mean_timesteps"] == 2 * T
    assert by_attack.loc["none", "asr"] == 0.0
    tlbp = summary[summary["attack"] == "tlbp"]
    assert (tlbp.loc[np.isinf(tlbp["th_ce"]), "mean_timesteps"] == T).all()
    assert (tlbp["mean_timesteps"] <= T).all()
    assert set(summary["pareto"]) <= {0, 1}


def test_summary_matches_sample_rows(grid_dir):
    summary = read_results(grid_dir / "summary.csv")
    samples = read_results(grid_dir / "samples.csv")
    assert len(samples) == summary["counted"].sum()
    assert samples["success"].sum() == summary["successes"].sum()
    for attack in ("fgsm", "pgd"):
        rows = samples[samples["attack"] == attack]
        assert rows["success"].mean() == pytest.approx(summary.set_index("attack").loc[attack, "asr"])
    for _, row in summary.iterrows():
        assert row["asr"] == pytest.approx(row["successes"] / row["counted"])


def test_results_carry_provenance(grid_dir, victim_path):
    header = read_provenance(grid_dir / "summary.csv")
    assert header["victim"] == victim_path
    assert header["timesteps"] == str(T)
    assert header["mode"] == "white-box"
    assert header["attacks"] == "fgsm,pgd,tlbp,none"


def test_grid_is_deterministic(grid_dir, victim_path, tmp_path):
    _run_grid(victim_path, tmp_path)
    for name in ("summary.csv", "samples.csv"):
        first = read_results(grid_dir / name)
        second = read_results(tmp_path / name)
        columns = [c for c in first.columns if c not in LATENCY_COLUMNS]
        pd.testing.assert_frame_equal(first[columns], second[columns])


def test_black_box_grid(victim_path, toy_surrogate, tmp_path):
    surrogate_path = save_model(toy_surrogate, tmp_path / "surrogate.snnt")
    spec = experiment_spec(victim_path, tmp_path / "out", attacks="tlbp", th_ce="inf", surrogate=surrogate_path)
    summary = read_results(run_experiment(spec))
    assert summary["mode"].tolist() == ["black-box"]
    assert summary["mean_timesteps"].tolist() == [T]


def test_grid_with_bank(victim_path, bank_path, tmp_path):
    spec = experiment_spec(
        victim_path, tmp_path, attacks="tlbp", windows="1", th_ce="0", use_ampr="true", t1="1", bank=bank_path,
    )
    summary = read_results(run_experiment(spec))
    assert summary["mean_timesteps"].tolist() == [2.0]
    assert summary["mean_runtime_timesteps"].tolist() == [1.0]


# ----------------------------------------------------------------------
# 消融与剖析
# ----------------------------------------------------------------------
def test_ablation_rows(victim_path, tmp_path):
    raw = dict(
        SYNTHETIC, victim=victim_path, output=str(tmp_path), t1="1", iters="1",
        samples_per_class="4", sample_limit="6",
    )
    path = run_ablation_ampr(parse_spec(AblationSpec, raw))
    frame = read_results(path)
    assert len(frame) == (4 + 5) * 2
    assert frame.groupby("study").size().to_dict() == {"bounds": 10, "components": 8}
    assert ((frame["ci_low"] <= frame["asr"] + 1e-12) & (frame["asr"] <= frame["ci_high"] + 1e-12)).all()
    no_bank = frame[frame["variant"] == "no_bank"].set_index("w")["mean_timesteps"]
    assert no_bank.to_dict() == {1: 1.0, 2: 2.0}
    with_bank = frame[frame["variant"] == "full"].set_index("w")["mean_timesteps"]
    assert with_bank.to_dict() == {1: 2.0, 2: 3.0}


def test_ablation_is_deterministic(victim_path, tmp_path):
    raw = dict(
        SYNTHETIC, victim=victim_path, t1="1", iters="2", samples_per_class="4", sample_limit="6",
        bounds="none,0.2:0.5",
    )
    frames = []
    for run in ("first", "second"):
        path = run_ablation_ampr(parse_spec(AblationSpec, dict(raw, output=str(tmp_path / run))))
        frame = read_results(path)
        frames.append(frame[[c for c in frame.columns if c not in LATENCY_COLUMNS]])
    assert len(frames[0]) == (4 + 2) * 2
    pd.testing.assert_frame_equal(frames[0], frames[1])


def test_ablation_rejects_window_past_horizon(victim_path, tmp_path):
    raw = dict(SYNTHETIC, victim=victim_path, output=str(tmp_path), t1="3", windows="2", iters="0")
    with pytest.raises(ConfigError):
        run_ablation_ampr(parse_spec(AblationSpec, raw))


def test_profile_outputs(victim_path, bank_path, tmp_path):
    raw = dict(SYNTHETIC, victim=victim_path, output=str(tmp_path), sample_limit="8", bank=bank_path, t1="1")
    output = run_profile(parse_spec(ProfileSpec, raw))

    curve = read_results(output / "profile_curve.csv")
    assert curve["n"].tolist() == [1, 2, 3]
    assert curve["t_e"].tolist() == [2, 3, 4]
    assert curve["asr"].between(0, 1).all()

    sweep = read_results(output / "profile_sweep.csv")
    assert sweep["w"].tolist() == [1, 2]

    spikes = read_results(output / "profile_spikes.csv")
    assert spikes[spikes["condition"] == "fresh"]["timestep"].tolist() == [1, 2, 3, 4]
    assert spikes[spikes["condition"] == "warm"]["timestep"].tolist() == [2, 3, 4]
    assert spikes["spike_ratio"].between(0, 1).all()

    groups = read_results(output / "profile_groups.csv")
    assert groups["group"].tolist() == ["vulnerable", "robust", "resistant"]
    assert groups["count"].sum() == curve["counted"].iloc[0]


# ----------------------------------------------------------------------
# 命令行
# ----------------------------------------------------------------------
def test_cli_trains_and_reports(tmp_path):
    model_path = tmp_path / "victim.snnt"
    overrides = dict(SYNTHETIC, arch="tiny", timesteps="4", epochs="2", batch_size="8", output=str(model_path))
    argv = ["train"] + [arg for k, v in overrides.items() for arg in ("--set", f"{k}={v}")]
    assert main(argv) == 0
    assert model_path.is_file()
    assert read_results(model_path.with_suffix(".history.csv"))["epoch"].tolist() == [1, 2]


def test_cli_report(grid_dir, tmp_path):
    output = tmp_path / "long.csv"
    assert main(["report", str(grid_dir / "summary.csv"), "--output", str(output)]) == 0
    long = read_results(output)
    assert list(long.columns[:1]) == ["source"]
    assert {"metric", "value"} <= set(long.columns)


def test_cli_train_skips_accuracy_on_empty_test_split(tmp_path, monkeypatch, caplog):
    from app.commands import train as train_command

    original = train_command.load_dataset

    def _load(spec, split):
        data = original(spec, split)
        return data.subset(np.arange(0)) if split == "test" else data

    monkeypatch.setattr(train_command, "load_dataset", _load)
    model_path = tmp_path / "victim.snnt"
    overrides = dict(SYNTHETIC, arch="tiny", timesteps="4", epochs="1", batch_size="8", output=str(model_path))
    argv = ["train"] + [arg for k, v in overrides.items() for arg in ("--set", f"{k}={v}")]
    assert main(argv) == 0
    assert "测试集为空" in caplog.text
    assert "nan" not in caplog.text


def test_unknown_architecture_is_rejected_at_parse_time(tmp_path):
    with pytest.raises(ConfigError):
        parse_spec(TrainSpec, dict(SYNTHETIC, arch="vgg11", output=str(tmp_path / "m.snnt")))
    assert parse_spec(TrainSpec, dict(SYNTHETIC, arch="TINY")).arch == "tiny"
    assert main(["train", "--set", "arch=vgg11", "--set", f"output={tmp_path / 'm.snnt'}"]) == 1


def test_cli_config_errors_exit_with_one(tmp_path):
    assert main([]) == 1
    assert main(["attack", "--bogus"]) == 1
    assert main(["attack", "--config", str(tmp_path / "missing.env")]) == 1
    assert main(["attack", "--set", "victim=/nonexistent.snnt"]) == 1
    assert main(["report", str(tmp_path / "missing.csv"), "--output", str(tmp_path / "x.csv")]) == 1


def test_cli_runtime_errors_exit_with_two(tmp_path):
    victim = tmp_path / "victim.snnt"
    victim.write_bytes(b"not a model")
    argv = ["attack", "--set", f"victim={victim}", "--set", f"output={tmp_path / 'out'}"]
    assert main(argv) == 2
