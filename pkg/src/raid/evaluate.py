"""Join dataplane flow decisions with ground truth and score them."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Collection, Iterable, Sequence

from .core import FiveTuple, MsgKind, PacketRecord, TrafficClass, TruthLabel
from .dataplane import FlowOutcome
from .forest import Aggregates, aggregate_metrics

# Published hardware-pipeline figures (accuracy, weighted-F1, macro-F1) per load.
PUBLISHED = {
    "low": (0.947, 0.938, 0.923),
    "moderate": (0.946, 0.935, 0.925),
    "high": (0.945, 0.939, 0.921),
}


@dataclass
class EvalReport:
    metrics: Aggregates | None
    scored: int
    undecided: int
    bypassed: int
    unlabelled: int

    def items(self, load: str = "low") -> list[tuple[str, object]]:
        out: list[tuple[str, object]] = [
            ("flows_scored", self.scored),
            ("flows_undecided", self.undecided),
            ("flows_bypassed", self.bypassed),
            ("flows_unlabelled", self.unlabelled),
        ]
        m = self.metrics
        if m is None:
            out.append(("result", "no-data"))
            return out
        c = m.confusion
        out += [
            ("accuracy", f"{float(m.accuracy):.6f}"),
            ("macro_f1", f"{float(m.macro_f1):.6f}"),
            ("weighted_f1", f"{float(m.weighted_f1):.6f}"),
            ("f1.Malicious", f"{float(m.per_class_f1[TrafficClass.Malicious]):.6f}"),
            ("f1.Benign", f"{float(m.per_class_f1[TrafficClass.Benign]):.6f}"),
            ("confusion.tp", c.tp),
            ("confusion.tn", c.tn),
            ("confusion.fp", c.fp),
            ("confusion.fn", c.fn),
        ]
        if m.degenerate_classes:
            out.append(("f1_degenerate", ",".join(k.value for k in m.degenerate_classes)))
        acc, wf1, mf1 = PUBLISHED.get(load, PUBLISHED["low"])
        out += [
            ("published.load", load),
            ("published.accuracy", f"{acc:.3f}"),
            ("published.weighted_f1", f"{wf1:.3f}"),
            ("published.macro_f1", f"{mf1:.3f}"),
        ]
        return out


def truth_by_flow(trace: Iterable[PacketRecord]) -> dict[FiveTuple, TruthLabel]:
    out: dict[FiveTuple, TruthLabel] = {}
    for p in trace:
        if p.msg_kind is MsgKind.RrcConnectionRequest:
            out.setdefault(p.tuple, p.truth_label)
    return out


def evaluate_flows(
    flows: Sequence[FlowOutcome],
    truths: dict[FiveTuple, TruthLabel],
    only: Collection[FiveTuple] | None = None,
) -> EvalReport:
    preds, labels = [], []
    undecided = bypassed = unlabelled = 0
    for f in flows:
        if only is not None and f.tuple not in only:
            continue
        truth = truths.get(f.tuple, TruthLabel.Unknown)
        if truth is TruthLabel.Unknown:
            unlabelled += 1
            continue
        if f.final == "Undecided":
            undecided += 1
            continue
        if f.final == "Bypassed":
            bypassed += 1
            continue
        preds.append(TrafficClass(f.final))
        labels.append(TrafficClass.from_truth(truth))
    return EvalReport(aggregate_metrics(preds, labels), len(preds), undecided, bypassed, unlabelled)
