"""Deterministic emulation of the detection pipeline.

Packets run a fixed, loop-free stage sequence: filter, hash, slot lookup,
decided check, feature update, code lookup, per-tree match, vote,
threshold, digest, mitigate. Per-flow state lives in a register array
indexed by the masked CRC-32 of the 5-tuple; each slot remembers the full
flow id it was claimed by so collisions are detectable.
"""

from __future__ import annotations

import enum
import queue
import statistics
import time
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .core import (
    FiveTuple,
    FlowFeatures,
    MsgKind,
    PacketRecord,
    TrafficClass,
    flow_id,
    step_features,
)
from .encoder import EncodedModel
from .forest import TraceOrderError

DEFAULT_QUEUE_CAPACITY = 65_536
MAX_STAGES = 12


class Stage(enum.Enum):
    FILTER = "FILTER"
    HASH = "HASH"
    SLOT = "SLOT"
    DECIDED_CHECK = "DECIDED_CHECK"
    UPDATE = "UPDATE"
    CODE = "CODE"
    TREES = "TREES"
    VOTE = "VOTE"
    THRESHOLD = "THRESHOLD"
    DIGEST = "DIGEST"
    MITIGATE = "MITIGATE"


class Action(enum.Enum):
    Forward = "Forward"
    Drop = "Drop"
    ForwardBypass = "ForwardBypass"


class DigestKind(enum.Enum):
    Classified = "Classified"
    Collision = "Collision"


S = Stage
# every path through the pipeline, precomputed: no per-packet list building
TRACE_FILTERED = (S.FILTER,)
TRACE_PASSTHROUGH = (S.FILTER,)
TRACE_COLLISION = (S.FILTER, S.HASH, S.SLOT, S.DIGEST)
TRACE_DECIDED = (S.FILTER, S.HASH, S.SLOT, S.DECIDED_CHECK)
TRACE_COLLECT = (S.FILTER, S.HASH, S.SLOT, S.DECIDED_CHECK, S.UPDATE, S.THRESHOLD, S.MITIGATE)
TRACE_PROVISIONAL = (
    S.FILTER, S.HASH, S.SLOT, S.DECIDED_CHECK, S.UPDATE, S.CODE, S.TREES, S.VOTE, S.THRESHOLD, S.MITIGATE,
)
TRACE_FINAL = (
    S.FILTER, S.HASH, S.SLOT, S.DECIDED_CHECK, S.UPDATE, S.CODE, S.TREES, S.VOTE, S.THRESHOLD, S.DIGEST, S.MITIGATE,
)
del S


@dataclass
class FlowSlot:
    occupied: bool = False
    stored_flow_id: int = 0
    features: FlowFeatures = FlowFeatures()
    last_ts_us: int = 0
    first_ts_us: int = 0
    decided: TrafficClass | None = None  # None while collecting

    @property
    def status(self) -> str:
        return "Collecting" if self.decided is None else f"Decided({self.decided.value})"


@dataclass(frozen=True)
class PipelineConfig:
    encoded_model: EncodedModel | None = None
    table_bits: int = 16
    t_star: int = 6
    provisional_enabled: bool = True
    fail_open: bool = True

    def validate(self) -> None:
        if not 1 <= self.table_bits <= 24:
            raise ValueError("table_bits must be in [1, 24]")
        if self.t_star < 2:
            raise ValueError("t_star must be >= 2")


@dataclass(frozen=True)
class Digest:
    kind: DigestKind
    tuple: FiveTuple
    flow_id: int
    label: TrafficClass | None
    pkt_count: int
    inference_duration_us: int
    processing_ns: int = 0
    ts_us: int = 0  # trace time of the packet that raised the digest


@dataclass(frozen=True)
class PacketVerdict:
    action: Action
    stage_trace: tuple[Stage, ...]
    provisional_label: TrafficClass | None = None


def update_features(slot: FlowSlot, pkt: PacketRecord) -> FlowSlot:
    slot.features = step_features(slot.features, slot.last_ts_us, pkt.timestamp_us, pkt.length_bytes)
    slot.last_ts_us = pkt.timestamp_us
    return slot


class DigestQueue:
    """Bounded, non-blocking digest channel. A full queue drops and counts."""

    def __init__(self, capacity: int = DEFAULT_QUEUE_CAPACITY):
        self._q: queue.Queue = queue.Queue(maxsize=capacity)
        self.dropped = 0

    def publish(self, d: Digest) -> None:
        try:
            self._q.put_nowait(d)
        except queue.Full:
            self.dropped += 1

    def get(self, timeout: float | None = None) -> Digest | None:
        try:
            return self._q.get(timeout=timeout)
        except queue.Empty:
            return None

    def get_nowait(self) -> Digest | None:
        try:
            return self._q.get_nowait()
        except queue.Empty:
            return None


class Dataplane:
    def __init__(self, config: PipelineConfig, digest_queue: DigestQueue | None = None):
        config.validate()
        self.config = config
        self.table_bits = config.table_bits
        self._mask = (1 << config.table_bits) - 1
        self.t_star = config.t_star
        self.provisional_enabled = config.provisional_enabled
        self.fail_open = config.fail_open
        self.registers: dict[int, FlowSlot] = {}
        self.model: EncodedModel | None = None
        self._vote_table: tuple[TrafficClass, ...] = ()
        self.digests = digest_queue
        if config.encoded_model is not None:
            self.load_entries(config.encoded_model)

    @property
    def pass_through(self) -> bool:
        return self.model is None

    def load_entries(self, encoded: EncodedModel) -> None:
        """Swap in new tables after validating them; on failure the old ones stay."""
        encoded.validate()
        votes = list(encoded.vote_table)
        if not self.fail_open and encoded.num_trees % 2 == 0:
            votes[encoded.num_trees // 2] = TrafficClass.Malicious
        # single assignment pair; the packet path reads both together
        self.model, self._vote_table = encoded, tuple(votes)

    def slot_for(self, t: FiveTuple) -> FlowSlot | None:
        return self.registers.get(flow_id(t) & self._mask)

    def process_packet(self, pkt: PacketRecord) -> tuple[PacketVerdict, Digest | None]:
        t0 = time.perf_counter_ns()
        if pkt.msg_kind is not MsgKind.RrcConnectionRequest:
            return _FWD_FILTERED, None
        model = self.model
        if model is None:
            return _FWD_PASSTHROUGH, None

        fid = flow_id(pkt.tuple)
        idx = fid & self._mask
        slot = self.registers.get(idx)
        if slot is None:
            slot = FlowSlot(True, fid, FlowFeatures(), pkt.timestamp_us, pkt.timestamp_us)
            self.registers[idx] = slot
        elif slot.stored_flow_id != fid:
            d = Digest(DigestKind.Collision, pkt.tuple, fid, None, 0, 0, time.perf_counter_ns() - t0, pkt.timestamp_us)
            self._publish(d)
            return _BYPASS, d

        if slot.decided is not None:
            return (_DROP_DECIDED if slot.decided is TrafficClass.Malicious else _FWD_DECIDED), None

        update_features(slot, pkt)
        feats = slot.features
        n = feats.pkt_count
        final = n == self.t_star
        if n < 2 or not (final or self.provisional_enabled):
            return _FWD_COLLECT, None

        label = self._vote_table[model.malicious_votes(model.codes(feats))]
        if not final:
            return PacketVerdict(Action.Forward, TRACE_PROVISIONAL, label), None

        slot.decided = label
        d = Digest(
            DigestKind.Classified,
            pkt.tuple,
            fid,
            label,
            n,
            pkt.timestamp_us - slot.first_ts_us,
            time.perf_counter_ns() - t0,
            pkt.timestamp_us,
        )
        self._publish(d)
        action = Action.Drop if label is TrafficClass.Malicious else Action.Forward
        return PacketVerdict(action, TRACE_FINAL, label), d

    def _publish(self, d: Digest) -> None:
        if self.digests is not None:
            self.digests.publish(d)


_FWD_FILTERED = PacketVerdict(Action.Forward, TRACE_FILTERED)
_FWD_PASSTHROUGH = PacketVerdict(Action.Forward, TRACE_PASSTHROUGH)
_BYPASS = PacketVerdict(Action.ForwardBypass, TRACE_COLLISION)
_DROP_DECIDED = PacketVerdict(Action.Drop, TRACE_DECIDED)
_FWD_DECIDED = PacketVerdict(Action.Forward, TRACE_DECIDED)
_FWD_COLLECT = PacketVerdict(Action.Forward, TRACE_COLLECT)


# ---------------------------------------------------------------------------
# Batch driver
# ---------------------------------------------------------------------------

UNDECIDED = "Undecided"
BYPASSED = "Bypassed"


@dataclass
class FlowOutcome:
    tuple: FiveTuple
    flow_id: int
    final: str = UNDECIDED  # Benign, Malicious, Undecided or Bypassed
    provisional: list[TrafficClass] = field(default_factory=list)
    inference_duration_us: int | None = None
    rrc_packets: int = 0
    forwarded: int = 0
    dropped: int = 0
    bypassed: int = 0


@dataclass
class RunStats:
    packets: int = 0
    rrc_packets: int = 0
    forwarded: int = 0
    dropped: int = 0
    bypassed: int = 0
    collisions: int = 0
    classified: int = 0
    undecided_flows: int = 0
    bypassed_flows: int = 0
    pre_decision_leakage: int = 0
    digests_dropped: int = 0
    max_stage_count: int = 0
    stage_counts: dict[str, int] = field(default_factory=lambda: {s.value: 0 for s in Stage})

    def as_items(self) -> list[tuple[str, int]]:
        items = [(k, v) for k, v in vars(self).items() if k != "stage_counts"]
        items += [(f"stage.{k}", v) for k, v in self.stage_counts.items()]
        return items


@dataclass
class Timing:
    per_packet_ns: list[int] = field(default_factory=list)

    def percentiles(self) -> dict[str, float]:
        return latency_summary(self.per_packet_ns)


def latency_summary(ns: Sequence[int]) -> dict[str, float]:
    if not ns:
        return {"median_ns": 0.0, "p99_ns": 0.0, "p999_ns": 0.0, "max_ns": 0.0}
    s = sorted(ns)

    def pct(q):
        return float(s[min(len(s) - 1, int(q * len(s)))])

    return {
        "median_ns": float(statistics.median(s)),
        "p99_ns": pct(0.99),
        "p999_ns": pct(0.999),
        "max_ns": float(s[-1]),
    }


@dataclass
class RunResult:
    verdicts: list[PacketVerdict]
    digests: list[Digest]
    flow_report: dict[FiveTuple, FlowOutcome]
    stats: RunStats
    timing: Timing


def run_trace(
    config: PipelineConfig,
    trace: Iterable[PacketRecord],
    digest_queue: DigestQueue | None = None,
    dataplane: Dataplane | None = None,
) -> RunResult:
    dp = dataplane if dataplane is not None else Dataplane(config, digest_queue)
    verdicts: list[PacketVerdict] = []
    digests: list[Digest] = []
    flows: dict[FiveTuple, FlowOutcome] = {}
    stats = RunStats()
    timing = Timing()
    counts = {s: 0 for s in Stage}
    last_ts = -1
    clock = time.perf_counter_ns
    process = dp.process_packet
    rrc = MsgKind.RrcConnectionRequest

    for pkt in trace:
        if pkt.timestamp_us < last_ts:
            raise TraceOrderError(f"timestamp decreases at packet {stats.packets}")
        last_ts = pkt.timestamp_us
        a = clock()
        verdict, digest = process(pkt)
        timing.per_packet_ns.append(clock() - a)
        verdicts.append(verdict)
        stats.packets += 1
        for s in verdict.stage_trace:
            counts[s] += 1
        if len(verdict.stage_trace) > stats.max_stage_count:
            stats.max_stage_count = len(verdict.stage_trace)

        act = verdict.action
        if act is Action.Drop:
            stats.dropped += 1
        elif act is Action.ForwardBypass:
            stats.bypassed += 1
        else:
            stats.forwarded += 1

        if pkt.msg_kind is not rrc:
            continue
        stats.rrc_packets += 1
        fo = flows.get(pkt.tuple)
        if fo is None:
            fo = flows[pkt.tuple] = FlowOutcome(pkt.tuple, flow_id(pkt.tuple))
        fo.rrc_packets += 1
        if act is Action.Drop:
            fo.dropped += 1
        elif act is Action.ForwardBypass:
            fo.bypassed += 1
        else:
            fo.forwarded += 1
        if verdict.provisional_label is not None and digest is None:
            fo.provisional.append(verdict.provisional_label)
        if digest is not None:
            digests.append(digest)
            if digest.kind is DigestKind.Collision:
                stats.collisions += 1
                if fo.final == UNDECIDED:
                    fo.final = BYPASSED
            else:
                stats.classified += 1
                fo.final = digest.label.value
                fo.inference_duration_us = digest.inference_duration_us
                if digest.label is TrafficClass.Malicious:
                    # packets 1..T-1 of this flow were already forwarded
                    stats.pre_decision_leakage += fo.forwarded

    stats.stage_counts = {s.value: counts[s] for s in Stage}
    stats.undecided_flows = sum(1 for f in flows.values() if f.final == UNDECIDED)
    stats.bypassed_flows = sum(1 for f in flows.values() if f.final == BYPASSED)
    if dp.digests is not None:
        stats.digests_dropped = dp.digests.dropped
    return RunResult(verdicts, digests, flows, stats, timing)

