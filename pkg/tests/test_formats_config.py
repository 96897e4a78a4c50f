import numpy as np
import pytest

from raid import formats
from raid.config import RaidConfig, dump_config, known_keys, parse_config
from raid.core import FiveTuple, MsgKind, PacketRecord, TruthLabel
from raid.dataplane import Digest, DigestKind, FlowOutcome
from raid.encoder import encode_model
from raid.trafficgen import ConfigError, generate_trace, scenario_presets

from conftest import B, M, random_forest, stump_model

T = FiveTuple.make("10.0.1.1", "10.0.0.1", 7, 38472, 132)


def test_trace_round_trip():
    cfg = scenario_presets()["low"].with_overrides(duration_us=200_000)
    trace = generate_trace(cfg)
    text = formats.dump_trace(trace)
    assert text.splitlines()[0] == formats.TRACE_HEADER
    assert formats.load_trace(text) == trace


def test_trace_line_layout():
    p = PacketRecord(12, T, 80, MsgKind.RrcConnectionRequest, TruthLabel.Malicious)
    assert formats.format_packet(p) == "12,10.0.1.1,10.0.0.1,7,38472,132,80,RrcConnectionRequest,Malicious"
    assert formats.parse_packet(formats.format_packet(p)) == p


@pytest.mark.parametrize(
    "text",
    [
        "#raid-trace v2\n",
        "#raid-trace v1\n1,10.0.1.1,10.0.0.1,7,38472,132,80,RrcConnectionRequest\n",
        "#raid-trace v1\n1,10.0.1.300,10.0.0.1,7,38472,132,80,RrcConnectionRequest,Benign\n",
        "#raid-trace v1\n1,10.0.1.1,10.0.0.1,7,38472,132,70000,RrcConnectionRequest,Benign\n",
        "#raid-trace v1\n5,10.0.1.1,10.0.0.1,7,38472,132,80,Other,Unknown\n"
        "4,10.0.1.1,10.0.0.1,7,38472,132,80,Other,Unknown\n",
    ],
)
def test_trace_rejects_bad_input(text):
    with pytest.raises(formats.FormatError):
        formats.load_trace(text)


def test_model_and_entries_round_trip():
    rng = np.random.default_rng(2)
    for _ in range(20):
        model = random_forest(rng, small=False)
        assert formats.load_model(formats.dump_model(model)) == model
        enc = encode_model(model)
        back = formats.parse_entries(formats.dump_entries(enc))
        back.validate()
        assert back == enc


def test_entries_line_shapes():
    text = formats.dump_entries(encode_model(stump_model()))
    assert "feature 4: 0 200 -> 0" in text
    assert "tree 0: [0,0] [0,0] [0,0] [0,0] [0,0] [0,0] -> Malicious" in text
    assert "votes 1 -> Malicious" in text


def test_digest_and_flow_round_trip():
    ds = [
        Digest(DigestKind.Classified, T, 0xDEADBEEF, M, 6, 1234, 999, 5000),
        Digest(DigestKind.Collision, T, 1, None, 0, 0, 5, 7),
    ]
    back = formats.load_digests(formats.dump_digests(ds))
    # processing_ns is wall-clock and not serialized
    assert back == [d.__class__(**{**d.__dict__, "processing_ns": 0}) for d in ds]
    flows = [FlowOutcome(T, 5, "Malicious", [B, M], 400, 8, 5, 3, 0), FlowOutcome(T._replace(src_port=1), 6)]
    assert formats.load_flows(formats.dump_flows(flows)) == sorted(flows, key=lambda f: tuple(f.tuple))


def test_split_round_trip():
    a, b = T, T._replace(src_port=9)
    assert formats.load_split(formats.dump_split([a], [b])) == {"train": {a}, "test": {b}}


def test_write_atomic_leaves_no_temp(tmp_path):
    p = tmp_path / "sub" / "out.txt"
    formats.write_atomic(p, "x\n")
    formats.write_atomic(p, "y\n")
    assert p.read_text() == "y\n"
    assert [q.name for q in p.parent.iterdir()] == ["out.txt"]


# config


def test_config_round_trip_and_defaults():
    cfg = RaidConfig()
    assert parse_config(dump_config(cfg)) == cfg
    assert parse_config("") == cfg
    assert cfg.scenario == scenario_presets()["low"]


def test_every_key_addressable():
    keys = known_keys()
    for k in ("gen.seed", "attack.burst_size", "pipeline.t_star", "sweep.epsilon", "controller.enabled", "bench.repetitions"):
        assert k in keys
    assert len(dump_config(RaidConfig()).splitlines()) == len(keys) - 1


def test_config_overrides():
    cfg = parse_config("preset = high\ngen.seed = 7  # trailing comment\nattack.burst_size = 4, 9\nsweep.epsilon = 1/100\n")
    assert cfg.scenario.target_aggregate_pps == 50_000 and cfg.scenario.seed == 7
    assert cfg.scenario.attack.burst_size == (4, 9)
    assert cfg.sweep.epsilon * 100 == 1


@pytest.mark.parametrize(
    "text",
    ["gen.sed = 1", "preset = extreme", "train.num_trees = 4", "gen.seed = abc", "no equals sign", "pipeline.table_bits = 30"],
)
def test_config_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)
