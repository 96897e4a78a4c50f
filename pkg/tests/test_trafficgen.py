import dataclasses
from statistics import median

import pytest

from raid.core import MsgKind, TruthLabel
from raid.forest import extract_dataset
from raid.trafficgen import (
    AttackProfile,
    ConfigError,
    ScenarioConfig,
    generate_trace,
    plan_rates,
    scenario_presets,
)

from conftest import preset_run


def small(**kw) -> ScenarioConfig:
    base = scenario_presets()["low"]
    return dataclasses.replace(base, **{"duration_us": 1_000_000, **kw})


def test_presets_targets():
    p = scenario_presets()
    assert p["low"].target_aggregate_pps == 10_000
    assert p["moderate"].target_aggregate_pps == 30_000
    assert p["high"].target_aggregate_pps == 50_000
    for cfg in p.values():
        assert cfg.benign.num_ues >= 100 and cfg.attack.num_attackers >= 100
        cfg.validate()


def test_same_seed_same_trace():
    assert generate_trace(small(seed=3)) == generate_trace(small(seed=3))
    assert generate_trace(small(seed=3)) != generate_trace(small(seed=4))


def test_no_attackers_all_benign():
    cfg = small(attack=AttackProfile(num_attackers=0), target_aggregate_pps=None, background_fraction=0.0)
    trace = generate_trace(cfg)
    assert trace and all(p.truth_label is TruthLabel.Benign for p in trace)


@pytest.mark.parametrize("seed", [0, 1])
def test_one_second_high_load_rate(seed):
    cfg = dataclasses.replace(scenario_presets()["high"], duration_us=1_000_000, seed=seed)
    n = len(generate_trace(cfg))
    assert abs(n - 50_000) <= 0.05 * 50_000


def test_trace_invariants():
    trace = generate_trace(small(seed=1))
    labels = {}
    for a, b in zip(trace, trace[1:]):
        assert a.timestamp_us <= b.timestamp_us
    for p in trace:
        assert 0 <= p.timestamp_us < 1_000_000
        assert labels.setdefault(p.tuple, p.truth_label) is p.truth_label
        if p.msg_kind is MsgKind.Other:
            assert p.truth_label is TruthLabel.Unknown


def test_min_ipd_separation():
    ds = extract_dataset(generate_trace(scenario_presets()["low"]), 10)
    mal = [s.features_at[max(s.features_at)].min_ipd_us for s in ds.samples if s.truth_label.is_malicious]
    ben = [s.features_at[max(s.features_at)].min_ipd_us for s in ds.samples if not s.truth_label.is_malicious]
    assert median(mal) < median(ben)


def test_rejects_bad_configs():
    with pytest.raises(ConfigError):
        small(duration_us=0).validate()
    with pytest.raises(ConfigError):
        small(attack=AttackProfile(burst_size=(5, 2))).validate()
    with pytest.raises(ConfigError):
        plan_rates(small(target_aggregate_pps=2_000_000))
    with pytest.raises(ConfigError):
        # benign load alone is about 5.5k pps
        plan_rates(small(target_aggregate_pps=1_000))


def test_rate_plan_hits_target():
    for cfg in scenario_presets().values():
        assert plan_rates(cfg).total_pps == pytest.approx(cfg.target_aggregate_pps, rel=1e-9)


@pytest.mark.parametrize("name", ["low", "moderate", "high"])
def test_preset_realized_rate(name):
    cfg = scenario_presets()[name]
    pps = len(preset_run(name).trace) / (cfg.duration_us / 1e6)
    assert abs(pps - cfg.target_aggregate_pps) <= 0.05 * cfg.target_aggregate_pps
