"""Control plane: loads encoded entries, drains digests off the packet path,
and keeps an append-only log of classified flows and collisions.

Rules are recorded, not pushed back: decisions already live in the
dataplane registers, so correctness never waits on this loop.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, field
from pathlib import Path

from .core import FiveTuple, TrafficClass
from .dataplane import Dataplane, Digest, DigestKind, DigestQueue
from .encoder import EncodedModel, EncodingError
from . import formats

log = logging.getLogger(__name__)


class ControllerStartError(RuntimeError):
    pass


@dataclass(frozen=True)
class FlowRule:
    tuple: FiveTuple
    label: TrafficClass
    installed_at_us: int


@dataclass(frozen=True)
class ModelLoad:
    source: str
    digest: str
    num_trees: int


@dataclass
class ControllerLog:
    classified: list[FlowRule] = field(default_factory=list)
    collisions: list[Digest] = field(default_factory=list)
    model_loads: list[ModelLoad] = field(default_factory=list)
    anomalies: list[Digest] = field(default_factory=list)
    dropped_digests: int = 0
    rules: dict[FiveTuple, FlowRule] = field(default_factory=dict)

    def apply(self, d: Digest) -> FlowRule | None:
        if d.kind is DigestKind.Collision:
            self.collisions.append(d)
            return None
        if d.tuple in self.rules:
            # duplicate classification: keep the first rule
            self.anomalies.append(d)
            return None
        rule = FlowRule(d.tuple, d.label, d.ts_us)
        self.rules[d.tuple] = rule
        self.classified.append(rule)
        return rule


def fold_digests(digests) -> ControllerLog:
    """Straight fold of a recorded digest sequence into a fresh log."""
    out = ControllerLog()
    for d in digests:
        out.apply(d)
    return out


class Controller:
    def __init__(self, dataplane: Dataplane, queue: DigestQueue | None = None):
        self.dataplane = dataplane
        self.queue = queue if queue is not None else dataplane.digests
        if self.queue is None:
            self.queue = DigestQueue()
            dataplane.digests = self.queue
        self.log = ControllerLog()
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None

    def load(self, encoded: EncodedModel, source: str = "<memory>", digest: str = "") -> None:
        self.dataplane.load_entries(encoded)
        self.log.model_loads.append(ModelLoad(source, digest, encoded.num_trees))

    def on_digest(self, d: Digest) -> FlowRule | None:
        rule = self.log.apply(d)
        if d.kind is DigestKind.Classified and rule is None:
            log.warning("duplicate classification digest for %s", d.tuple)
        return rule

    def _run(self) -> None:
        while not self._stop.is_set():
            d = self.queue.get(timeout=0.05)
            if d is not None:
                self.on_digest(d)
        self.drain()

    def drain(self) -> int:
        n = 0
        while (d := self.queue.get_nowait()) is not None:
            self.on_digest(d)
            n += 1
        return n

    def start_consumer(self) -> None:
        if self._thread is None:
            self._thread = threading.Thread(target=self._run, name="digest-consumer", daemon=True)
            self._thread.start()

    def stop(self) -> ControllerLog:
        if self._thread is not None:
            self._stop.set()
            self._thread.join()
            self._thread = None
        else:
            self.drain()
        self.log.dropped_digests = self.queue.dropped
        return self.log


def start(dataplane: Dataplane, entries_path: str | Path, consume: bool = True) -> Controller:
    """Parse, validate and load an entries file, then start draining digests.

    Any failure leaves the dataplane untouched (pass-through if it had no
    model yet) and raises ControllerStartError.
    """
    path = Path(entries_path)
    try:
        text = path.read_text(encoding="utf-8")
        encoded = formats.parse_entries(text)
        encoded.validate()
    except (OSError, ValueError, EncodingError) as exc:
        raise ControllerStartError(f"refusing to start with {path}: {exc}") from exc
    ctl = Controller(dataplane)
    ctl.load(encoded, str(path), formats.content_digest(text.encode()))
    if consume:
        ctl.start_consumer()
    return ctl
