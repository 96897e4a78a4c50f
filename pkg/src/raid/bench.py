"""Throughput and per-packet latency of the emulated pipeline."""

from __future__ import annotations

import gc
import statistics
import time
from dataclasses import dataclass
from typing import Sequence

from .core import PacketRecord
from .dataplane import Dataplane, PipelineConfig, latency_summary
from .encoder import EncodedModel


@dataclass
class BenchResult:
    packets: int
    repetitions: int
    pps_per_rep: list[float]
    latency: dict[str, float]

    @property
    def sustained_pps(self) -> float:
        # the slowest repetition is what the pipeline sustained
        return min(self.pps_per_rep)

    @property
    def tail_ratio(self) -> float:
        med = self.latency["median_ns"]
        return self.latency["p999_ns"] / med if med else float("inf")

    def items(self) -> list[tuple[str, object]]:
        return [
            ("packets", self.packets),
            ("repetitions", self.repetitions),
            ("sustained_pps", f"{self.sustained_pps:.0f}"),
            ("median_pps", f"{statistics.median(self.pps_per_rep):.0f}"),
            *((k, f"{v:.0f}") for k, v in self.latency.items()),
            ("p999_over_median", f"{self.tail_ratio:.2f}"),
        ]


def run_bench(
    trace: Sequence[PacketRecord], encoded: EncodedModel, repetitions: int = 3, table_bits: int = 16, t_star: int = 6
) -> BenchResult:
    """Replay the trace through a fresh pipeline per repetition.

    Per-packet time brackets process_packet only; throughput is packets
    over the whole replay loop including that bookkeeping.
    """
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    samples: list[int] = []
    rates = []
    clock = time.perf_counter_ns
    gc_was_enabled = gc.isenabled()
    try:
        for _ in range(repetitions):
            dp = Dataplane(PipelineConfig(encoded, table_bits=table_bits, t_star=t_star))
            process = dp.process_packet
            lat = [0] * len(trace)
            gc.collect()
            gc.disable()
            start = clock()
            for i, pkt in enumerate(trace):
                a = clock()
                process(pkt)
                lat[i] = clock() - a
            elapsed = clock() - start
            if gc_was_enabled:
                gc.enable()
            rates.append(len(trace) / (elapsed / 1e9) if elapsed else float("inf"))
            samples.extend(lat)
    finally:
        if gc_was_enabled:
            gc.enable()
    return BenchResult(len(trace), repetitions, rates, latency_summary(samples))
