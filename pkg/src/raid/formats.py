"""Line-oriented text formats. Every file opens with a header line
``#<format-name> v<version>`` and is written atomically (temp file, then
rename) so a failed command never leaves a partial output behind.

trace      timestamp_us,src_ip,dst_ip,src_port,dst_port,protocol,length_bytes,msg_kind,truth_label
model      pre-order node list per tree with explicit child indices
entries    [features] / [leaves] / [votes] sections
digests    kind,src_ip,dst_ip,src_port,dst_port,protocol,flow_id,label,pkt_count,inference_duration_us,ts_us
           (processing_ns is wall-clock and goes to the timing file instead)
flows      src_ip,dst_ip,src_port,dst_port,protocol,flow_id,final,provisional,inference_duration_us,
           rrc_packets,forwarded,dropped,bypassed
"""

from __future__ import annotations

import hashlib
import ipaddress
import os
import re
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

from .core import FEATURE_NAMES, FiveTuple, MsgKind, PacketRecord, TrafficClass, TruthLabel, U16_MAX, U64_MAX
from .dataplane import Digest, DigestKind, FlowOutcome, RunStats
from .encoder import EncodedModel, FeatureTable, LeafEntry, RangeEntry
from .forest import Internal, Leaf, RandomForestModel, TreeNode

TRACE_HEADER = "#raid-trace v1"
MODEL_HEADER = "#raid-model v1"
ENTRIES_HEADER = "#raid-entries v1"
DIGESTS_HEADER = "#raid-digests v1"
FLOWS_HEADER = "#raid-flows v1"
STATS_HEADER = "#raid-stats v1"
TIMING_HEADER = "#raid-timing v1"
CONTROLLER_HEADER = "#raid-controller-log v1"


class FormatError(ValueError):
    pass


def content_digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def write_atomic(path: str | Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _body(text: str, header: str) -> list[str]:
    lines = text.splitlines()
    if not lines or lines[0].strip() != header:
        got = lines[0] if lines else "<empty>"
        raise FormatError(f"expected header {header!r}, got {got!r}")
    return [ln for ln in lines[1:] if ln.strip()]


def _ip(v: int) -> str:
    return str(ipaddress.IPv4Address(v))


def _parse_ip(s: str) -> int:
    try:
        return int(ipaddress.IPv4Address(s))
    except ValueError as exc:
        raise FormatError(str(exc)) from None


def _tuple_fields(t: FiveTuple) -> str:
    return f"{_ip(t.src_ip)},{_ip(t.dst_ip)},{t.src_port},{t.dst_port},{t.protocol}"


def _parse_tuple(parts: Sequence[str]) -> FiveTuple:
    t = FiveTuple(_parse_ip(parts[0]), _parse_ip(parts[1]), int(parts[2]), int(parts[3]), int(parts[4]))
    try:
        t.validate()
    except ValueError as exc:
        raise FormatError(str(exc)) from None
    return t


# ---------------------------------------------------------------------------
# trace
# ---------------------------------------------------------------------------


def format_packet(p: PacketRecord) -> str:
    return f"{p.timestamp_us},{_tuple_fields(p.tuple)},{p.length_bytes},{p.msg_kind.value},{p.truth_label.value}"


def parse_packet(line: str) -> PacketRecord:
    parts = line.strip().split(",")
    if len(parts) != 9:
        raise FormatError(f"trace line needs 9 fields: {line!r}")
    try:
        ts, length = int(parts[0]), int(parts[6])
        if not 0 <= ts <= U64_MAX or not 0 <= length <= U16_MAX:
            raise FormatError(f"field out of range: {line!r}")
        return PacketRecord(ts, _parse_tuple(parts[1:6]), length, MsgKind(parts[7]), TruthLabel(parts[8]))
    except ValueError as exc:
        raise FormatError(f"bad trace line {line!r}: {exc}") from None


def dump_trace(trace: Iterable[PacketRecord]) -> str:
    return "\n".join([TRACE_HEADER, *(format_packet(p) for p in trace)]) + "\n"


def load_trace(text: str) -> list[PacketRecord]:
    out = [parse_packet(ln) for ln in _body(text, TRACE_HEADER)]
    for i in range(1, len(out)):
        if out[i].timestamp_us < out[i - 1].timestamp_us:
            raise FormatError(f"timestamps decrease at record {i}")
    return out


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------


def _flatten(root: TreeNode) -> list[str]:
    lines: list[str] = []

    def rec(node) -> int:
        i = len(lines)
        lines.append("")
        if isinstance(node, Leaf):
            lines[i] = f"{i} leaf {node.label.value}"
        else:
            left = rec(node.left)
            right = rec(node.right)
            lines[i] = f"{i} split {node.feature_index} {node.threshold} {left} {right}"
        return i

    rec(root)
    return lines


def dump_model(model: RandomForestModel) -> str:
    out = [MODEL_HEADER, "features " + ",".join(model.feature_names), f"trees {model.num_trees}", f"max_depth {model.max_depth}"]
    for k, t in enumerate(model.trees):
        nodes = _flatten(t)
        out.append(f"tree {k} nodes {len(nodes)}")
        out.extend(nodes)
    return "\n".join(out) + "\n"


def load_model(text: str) -> RandomForestModel:
    lines = _body(text, MODEL_HEADER)
    try:
        it = iter(lines)
        names = tuple(next(it).split(" ", 1)[1].split(","))
        n_trees = int(next(it).split()[1])
        max_depth = int(next(it).split()[1])
        trees = []
        for k in range(n_trees):
            head = next(it).split()
            if head[:2] != ["tree", str(k)] or head[2] != "nodes":
                raise FormatError(f"expected 'tree {k} nodes N', got {' '.join(head)!r}")
            rows = {}
            for _ in range(int(head[3])):
                parts = next(it).split()
                rows[int(parts[0])] = parts[1:]

            def build(i, depth=0):
                if depth > 64:
                    raise FormatError("tree too deep or cyclic")
                row = rows[i]
                if row[0] == "leaf":
                    return Leaf(TrafficClass(row[1]))
                if row[0] != "split":
                    raise FormatError(f"unknown node kind {row[0]!r}")
                return Internal(int(row[1]), int(row[2]), build(int(row[3]), depth + 1), build(int(row[4]), depth + 1))

            trees.append(build(0))
        if next(it, None) is not None:
            raise FormatError("trailing content after last tree")
    except (StopIteration, KeyError, IndexError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"malformed model file: {exc!r}") from None
    model = RandomForestModel(tuple(trees), max_depth, names)
    try:
        model.validate()
    except ValueError as exc:
        raise FormatError(str(exc)) from None
    return model


# ---------------------------------------------------------------------------
# entries
# ---------------------------------------------------------------------------

_FEATURE_RE = re.compile(r"^feature (\d+): (\d+) (\d+) -> (\d+)$")
_LEAF_RE = re.compile(r"^tree (\d+): ((?:\[\d+,\d+\] ?){6}) -> (\w+)$")
_VOTE_RE = re.compile(r"^votes (\d+) -> (\w+)$")


def dump_entries(enc: EncodedModel) -> str:
    out = [ENTRIES_HEADER, f"trees {enc.num_trees}", "[features]"]
    for t in enc.feature_tables:
        out.extend(f"feature {t.feature_index}: {e.range_lo} {e.range_hi} -> {e.code}" for e in t.entries)
    out.append("[leaves]")
    for entries in enc.trees:
        for e in entries:
            boxes = " ".join(f"[{lo},{hi}]" for lo, hi in zip(e.code_lo, e.code_hi))
            out.append(f"tree {e.tree_index}: {boxes} -> {e.label.value}")
    out.append("[votes]")
    out.extend(f"votes {v} -> {c.value}" for v, c in enumerate(enc.vote_table))
    return "\n".join(out) + "\n"


def parse_entries(text: str) -> EncodedModel:
    """Syntax only; partition checks belong to EncodedModel.validate()."""
    lines = _body(text, ENTRIES_HEADER)
    if not lines or not lines[0].startswith("trees "):
        raise FormatError("missing 'trees N' line")
    n_trees = int(lines[0].split()[1])
    section = None
    ranges: dict[int, list[RangeEntry]] = {k: [] for k in range(len(FEATURE_NAMES))}
    leaves: dict[int, list[LeafEntry]] = {k: [] for k in range(n_trees)}
    votes: list[TrafficClass] = []
    try:
        for ln in lines[1:]:
            if ln.startswith("["):
                section = ln.strip()
                continue
            if section == "[features]":
                m = _FEATURE_RE.match(ln)
                if not m:
                    raise FormatError(f"bad feature line {ln!r}")
                f, lo, hi, code = map(int, m.groups())
                ranges[f].append(RangeEntry(lo, hi, code))
            elif section == "[leaves]":
                m = _LEAF_RE.match(ln)
                if not m:
                    raise FormatError(f"bad leaf line {ln!r}")
                pairs = [tuple(map(int, p.split(","))) for p in re.findall(r"\[(\d+,\d+)\]", m.group(2))]
                t = int(m.group(1))
                leaves[t].append(
                    LeafEntry(t, tuple(p[0] for p in pairs), tuple(p[1] for p in pairs), TrafficClass(m.group(3)))
                )
            elif section == "[votes]":
                m = _VOTE_RE.match(ln)
                if not m or int(m.group(1)) != len(votes):
                    raise FormatError(f"bad vote line {ln!r}")
                votes.append(TrafficClass(m.group(2)))
            else:
                raise FormatError(f"line outside a section: {ln!r}")
    except (KeyError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"malformed entries: {exc!r}") from None
    tables = tuple(
        FeatureTable(f, tuple(e.range_hi for e in rs[:-1]), tuple(rs)) for f, rs in sorted(ranges.items())
    )
    return EncodedModel(tables, tuple(tuple(leaves[k]) for k in range(n_trees)), tuple(votes))


# ---------------------------------------------------------------------------
# digests, flow report, stats, timing
# ---------------------------------------------------------------------------


def format_digest(d: Digest) -> str:
    label = d.label.value if d.label is not None else "-"
    return (
        f"{d.kind.value},{_tuple_fields(d.tuple)},0x{d.flow_id:08x},{label},"
        f"{d.pkt_count},{d.inference_duration_us},{d.ts_us}"
    )


def parse_digest(line: str) -> Digest:
    p = line.strip().split(",")
    if len(p) != 11:
        raise FormatError(f"digest line needs 11 fields: {line!r}")
    try:
        label = None if p[7] == "-" else TrafficClass(p[7])
        return Digest(DigestKind(p[0]), _parse_tuple(p[1:6]), int(p[6], 16), label, int(p[8]), int(p[9]), 0, int(p[10]))
    except ValueError as exc:
        raise FormatError(f"bad digest line {line!r}: {exc}") from None


def dump_digests(digests: Iterable[Digest]) -> str:
    return "\n".join([DIGESTS_HEADER, *(format_digest(d) for d in digests)]) + "\n"


def load_digests(text: str) -> list[Digest]:
    return [parse_digest(ln) for ln in _body(text, DIGESTS_HEADER)]


_ABBREV = {TrafficClass.Benign: "B", TrafficClass.Malicious: "M"}
_UNABBREV = {v: k for k, v in _ABBREV.items()}


def format_flow(f: FlowOutcome) -> str:
    prov = ".".join(_ABBREV[c] for c in f.provisional) or "-"
    dur = "-" if f.inference_duration_us is None else str(f.inference_duration_us)
    return (
        f"{_tuple_fields(f.tuple)},0x{f.flow_id:08x},{f.final},{prov},{dur},"
        f"{f.rrc_packets},{f.forwarded},{f.dropped},{f.bypassed}"
    )


def parse_flow(line: str) -> FlowOutcome:
    p = line.strip().split(",")
    if len(p) != 13:
        raise FormatError(f"flow line needs 13 fields: {line!r}")
    prov = [] if p[7] == "-" else [_UNABBREV[c] for c in p[7].split(".")]
    return FlowOutcome(
        _parse_tuple(p[0:5]),
        int(p[5], 16),
        p[6],
        prov,
        None if p[8] == "-" else int(p[8]),
        int(p[9]),
        int(p[10]),
        int(p[11]),
        int(p[12]),
    )


def dump_flows(flows: Iterable[FlowOutcome]) -> str:
    ordered = sorted(flows, key=lambda f: tuple(f.tuple))
    return "\n".join([FLOWS_HEADER, *(format_flow(f) for f in ordered)]) + "\n"


def load_flows(text: str) -> list[FlowOutcome]:
    return [parse_flow(ln) for ln in _body(text, FLOWS_HEADER)]


def dump_stats(stats: RunStats) -> str:
    return "\n".join([STATS_HEADER, *(f"{k} {v}" for k, v in stats.as_items())]) + "\n"


def dump_kv(header: str, items: Iterable[tuple[str, object]]) -> str:
    return "\n".join([header, *(f"{k} {v}" for k, v in items)]) + "\n"


def load_kv(text: str, header: str) -> dict[str, str]:
    out = {}
    for ln in _body(text, header):
        k, _, v = ln.partition(" ")
        out[k] = v
    return out


# ---------------------------------------------------------------------------
# train/test split, feature snapshots, controller log
# ---------------------------------------------------------------------------

SPLIT_HEADER = "#raid-split v1"
FEATURES_HEADER = "#raid-features v1"


def dump_split(train: Iterable[FiveTuple], test: Iterable[FiveTuple]) -> str:
    out = [SPLIT_HEADER]
    out += [f"train,{_tuple_fields(t)}" for t in sorted(train)]
    out += [f"test,{_tuple_fields(t)}" for t in sorted(test)]
    return "\n".join(out) + "\n"


def load_split(text: str) -> dict[str, set[FiveTuple]]:
    out: dict[str, set[FiveTuple]] = {"train": set(), "test": set()}
    for ln in _body(text, SPLIT_HEADER):
        p = ln.strip().split(",")
        if len(p) != 6 or p[0] not in out:
            raise FormatError(f"bad split line {ln!r}")
        try:
            out[p[0]].add(_parse_tuple(p[1:]))
        except ValueError as exc:
            raise FormatError(f"bad split line {ln!r}: {exc}") from None
    return out


def dump_features(samples) -> str:
    """One line per (flow, T): tuple, label, T, then the six features."""
    out = [FEATURES_HEADER]
    for s in samples:
        for t in sorted(s.features_at):
            f = s.features_at[t]
            out.append(f"{_tuple_fields(s.tuple)},{s.truth_label.value},{t}," + ",".join(map(str, f)))
    return "\n".join(out) + "\n"


def dump_controller_log(log) -> str:
    out = [CONTROLLER_HEADER]
    # the source path lives in the run manifest; the log keeps only content identity
    out += [f"model_load sha256={m.digest} trees={m.num_trees}" for m in log.model_loads]
    out += [f"rule {_tuple_fields(r.tuple)} {r.label.value} {r.installed_at_us}" for r in log.classified]
    out += [f"collision {format_digest(d)}" for d in log.collisions]
    out += [f"anomaly {format_digest(d)}" for d in log.anomalies]
    out.append(f"dropped_digests {log.dropped_digests}")
    return "\n".join(out) + "\n"
