"""Domain types, flow identity and the integer feature-update rule.

Everything here is an immutable value. The 13-byte canonical FiveTuple
layout is a compatibility contract: flow ids computed from it show up in
digest logs and test vectors.
"""

from __future__ import annotations

import enum
import ipaddress
import struct
import zlib
from typing import NamedTuple

U16_MAX = 0xFFFF
U32_MAX = 0xFFFFFFFF
U64_MAX = 0xFFFFFFFFFFFFFFFF

# IPD registers are 32 bits wide; all-ones means "no gap observed yet".
UNSET = U32_MAX

# Every feature table spans [0, FIELD_MAX]; the 16-bit length features fit.
FIELD_MAX = U32_MAX

FEATURE_NAMES = (
    "pkt_count",
    "total_len",
    "max_len",
    "min_len",
    "min_ipd_us",
    "max_ipd_us",
)
NUM_FEATURES = len(FEATURE_NAMES)

_TUPLE_STRUCT = struct.Struct(">IIHHB")
TUPLE_BYTES = _TUPLE_STRUCT.size  # 13


class MsgKind(enum.Enum):
    RrcConnectionRequest = "RrcConnectionRequest"
    Other = "Other"


class TruthLabel(enum.Enum):
    Benign = "Benign"
    Malicious = "Malicious"
    Unknown = "Unknown"


class TrafficClass(enum.Enum):
    Benign = "Benign"
    Malicious = "Malicious"

    @property
    def is_malicious(self) -> bool:
        return self is TrafficClass.Malicious

    @classmethod
    def from_truth(cls, label: TruthLabel) -> TrafficClass:
        if label is TruthLabel.Unknown:
            raise ValueError("Unknown truth label has no traffic class")
        return cls(label.value)


class FiveTuple(NamedTuple):
    """Unidirectional flow identity (DU -> CU). IPv4 addresses in host order."""

    src_ip: int
    dst_ip: int
    src_port: int
    dst_port: int
    protocol: int

    def to_bytes(self) -> bytes:
        return _TUPLE_STRUCT.pack(*self)

    @classmethod
    def from_bytes(cls, data: bytes) -> FiveTuple:
        if len(data) != TUPLE_BYTES:
            raise ValueError(f"expected {TUPLE_BYTES} bytes, got {len(data)}")
        return cls(*_TUPLE_STRUCT.unpack(data))

    @classmethod
    def make(cls, src_ip: str, dst_ip: str, src_port: int, dst_port: int, protocol: int) -> FiveTuple:
        t = cls(
            int(ipaddress.IPv4Address(src_ip)),
            int(ipaddress.IPv4Address(dst_ip)),
            src_port,
            dst_port,
            protocol,
        )
        t.validate()
        return t

    def validate(self) -> None:
        if not (0 <= self.src_ip <= U32_MAX and 0 <= self.dst_ip <= U32_MAX):
            raise ValueError(f"address out of range in {self!r}")
        if not (0 <= self.src_port <= U16_MAX and 0 <= self.dst_port <= U16_MAX):
            raise ValueError(f"port out of range in {self!r}")
        if not 0 <= self.protocol <= 0xFF:
            raise ValueError(f"protocol out of range in {self!r}")

    def __str__(self) -> str:
        return (
            f"{ipaddress.IPv4Address(self.src_ip)}:{self.src_port}"
            f"->{ipaddress.IPv4Address(self.dst_ip)}:{self.dst_port}/{self.protocol}"
        )


class PacketRecord(NamedTuple):
    timestamp_us: int
    tuple: FiveTuple
    length_bytes: int
    msg_kind: MsgKind
    truth_label: TruthLabel


class FlowFeatures(NamedTuple):
    """The six per-flow integer statistics held in switch registers."""

    pkt_count: int = 0
    total_len: int = 0
    max_len: int = 0
    min_len: int = 0
    min_ipd_us: int = UNSET
    max_ipd_us: int = UNSET

    def check_invariants(self) -> None:
        n = self.pkt_count
        if n >= 1:
            assert self.min_len <= self.max_len, self
            assert self.max_len <= self.total_len <= n * self.max_len or self.total_len == U32_MAX, self
        if n == 1:
            assert self.min_ipd_us == UNSET and self.max_ipd_us == UNSET, self
        if n >= 2:
            assert self.min_ipd_us <= self.max_ipd_us, self


EMPTY_FEATURES = FlowFeatures()


def flow_id(t: FiveTuple) -> int:
    """Full CRC-32 (IEEE 802.3, reflected) of the canonical 13 bytes."""
    return zlib.crc32(_TUPLE_STRUCT.pack(*t))


def flow_hash(t: FiveTuple, table_bits: int) -> int:
    if not 1 <= table_bits <= 24:
        raise ValueError(f"table_bits must be in [1, 24], got {table_bits}")
    return zlib.crc32(_TUPLE_STRUCT.pack(*t)) & ((1 << table_bits) - 1)


def step_features(f: FlowFeatures, last_ts_us: int, timestamp_us: int, length: int) -> FlowFeatures:
    """Fold one packet into a feature vector.

    Only add, compare and subtract: the same rule runs in the emulated
    switch and in offline dataset extraction, so both see bit-identical
    vectors. `last_ts_us` is ignored for the first packet.
    """
    n = f.pkt_count + 1
    total = f.total_len + length
    if total > U32_MAX:
        total = U32_MAX
    if n == 1:
        return FlowFeatures(1, total, length, length, UNSET, UNSET)
    ipd = timestamp_us - last_ts_us
    if ipd > U32_MAX:
        ipd = U32_MAX
    mn = f.min_ipd_us
    mx = f.max_ipd_us
    if n == 2:
        # UNSET acts as +inf for min and -inf for max
        mn = mx = ipd
    else:
        if ipd < mn:
            mn = ipd
        if ipd > mx:
            mx = ipd
    return FlowFeatures(
        n if n <= U32_MAX else U32_MAX,
        total,
        length if length > f.max_len else f.max_len,
        length if length < f.min_len else f.min_len,
        mn,
        mx,
    )


def features_from_packets(packets: list[tuple[int, int]]) -> FlowFeatures:
    """Straight-line recomputation from (timestamp_us, length) pairs.

    Written without the incremental rule so it can check it.
    """
    if not packets:
        return EMPTY_FEATURES
    lengths = [ln for _, ln in packets]
    feats = FlowFeatures(
        pkt_count=len(packets),
        total_len=min(sum(lengths), U32_MAX),
        max_len=max(lengths),
        min_len=min(lengths),
    )
    if len(packets) >= 2:
        gaps = [min(b[0] - a[0], U32_MAX) for a, b in zip(packets, packets[1:])]
        feats = feats._replace(min_ipd_us=min(gaps), max_ipd_us=max(gaps))
    return feats
