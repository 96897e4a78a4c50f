import struct

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from raid.core import (
    FIELD_MAX,
    UNSET,
    FiveTuple,
    FlowFeatures,
    MsgKind,
    PacketRecord,
    TruthLabel,
    features_from_packets,
    flow_hash,
    flow_id,
    step_features,
)


def crc32_bitwise(data: bytes) -> int:
    """Reflected CRC-32 (poly 0xEDB88320), bit at a time."""
    crc = 0xFFFFFFFF
    for byte in data:
        crc ^= byte
        for _ in range(8):
            crc = (crc >> 1) ^ (0xEDB88320 if crc & 1 else 0)
    return crc ^ 0xFFFFFFFF


tuples = st.builds(
    FiveTuple,
    st.integers(0, 2**32 - 1),
    st.integers(0, 2**32 - 1),
    st.integers(0, 65535),
    st.integers(0, 65535),
    st.integers(0, 255),
)


def test_reference_crc_check_value():
    assert crc32_bitwise(b"123456789") == 0xCBF43926


def test_hash_matches_reference_crc():
    t = FiveTuple.make("10.0.0.1", "10.0.0.2", 38412, 38472, 132)
    raw = bytes([10, 0, 0, 1, 10, 0, 0, 2]) + struct.pack(">HHB", 38412, 38472, 132)
    assert t.to_bytes() == raw
    assert flow_id(t) == crc32_bitwise(raw)
    assert flow_hash(t, 16) == crc32_bitwise(raw) & 0xFFFF


@settings(max_examples=200, deadline=None)
@given(tuples, st.integers(1, 24))
def test_hash_is_masked_flow_id(t, bits):
    assert flow_hash(t, bits) == flow_id(t) % (1 << bits)
    assert flow_id(t) == crc32_bitwise(t.to_bytes())


def test_hash_bits_bounds():
    t = FiveTuple.make("10.0.1.1", "10.0.0.1", 1, 38472, 132)
    assert flow_hash(t, 1) in (0, 1)
    assert flow_hash(t, 16) == flow_hash(FiveTuple(*t), 16)
    for bad in (0, 25):
        with pytest.raises(ValueError):
            flow_hash(t, bad)


def test_src_port_changes_flow_id():
    a = FiveTuple.make("10.0.1.1", "10.0.0.1", 1, 38472, 132)
    assert flow_id(a) != flow_id(a._replace(src_port=2))


@given(tuples)
def test_tuple_round_trip(t):
    assert FiveTuple.from_bytes(t.to_bytes()) == t


def test_tuple_validate_rejects_wide_fields():
    with pytest.raises(ValueError):
        FiveTuple(0, 0, 70000, 0, 6).validate()


def test_first_and_second_packet():
    f1 = step_features(FlowFeatures(), 0, 1000, 80)
    assert f1 == FlowFeatures(1, 80, 80, 80, UNSET, UNSET)
    f2 = step_features(f1, 1000, 1100, 120)
    assert f2 == FlowFeatures(2, 200, 120, 80, 100, 100)


def test_zero_gap_is_not_unset():
    f = features_from_packets([(5, 60), (5, 60)])
    assert f.min_ipd_us == 0 and f.max_ipd_us == 0


def test_hand_example_three_packets():
    f = features_from_packets([(0, 80), (100, 120), (700, 60)])
    assert f == FlowFeatures(3, 260, 120, 60, 100, 600)


def test_saturation_and_clamp():
    f = features_from_packets([(0, 65535), (2**40, 65535)])
    assert f.max_ipd_us == FIELD_MAX
    f = FlowFeatures(5, FIELD_MAX - 10, 100, 50, 1, 1)
    assert step_features(f, 0, 1, 100).total_len == FIELD_MAX


def _straight_line(pkts):
    # recompute from scratch with plain builtins
    lens = [n for _, n in pkts]
    gaps = [min(b - a, FIELD_MAX) for (a, _), (b, _) in zip(pkts, pkts[1:])]
    return FlowFeatures(
        len(pkts),
        min(sum(lens), FIELD_MAX),
        max(lens),
        min(lens),
        min(gaps) if gaps else UNSET,
        max(gaps) if gaps else UNSET,
    )


@settings(max_examples=300, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 10**7), st.integers(0, 65535)), min_size=1, max_size=30))
def test_incremental_matches_recompute(raw):
    gaps_and_lens = raw
    ts, pkts = 0, []
    for gap, length in gaps_and_lens:
        ts += gap
        pkts.append((ts, length))
    f, last = FlowFeatures(), 0
    for t, n in pkts:
        f = step_features(f, last, t, n)
        f.check_invariants()
        last = t
    assert f == _straight_line(pkts)
    assert f == features_from_packets(pkts)


def test_packet_record_fields():
    t = FiveTuple.make("10.0.1.1", "10.0.0.1", 1, 38472, 132)
    p = PacketRecord(10, t, 80, MsgKind.RrcConnectionRequest, TruthLabel.Benign)
    assert PacketRecord(*tuple(p)) == p
