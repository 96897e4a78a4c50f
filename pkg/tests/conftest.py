from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np
import pytest

from raid.core import FIELD_MAX, NUM_FEATURES, FiveTuple, MsgKind, PacketRecord, TrafficClass, TruthLabel
from raid.encoder import EncodedModel, encode_model
from raid.forest import Dataset, Internal, Leaf, RandomForestModel, extract_dataset, split_samples, train_forest
from raid.trafficgen import generate_trace, scenario_presets

MIN_IPD = 4  # feature index of min_ipd_us

B, M = TrafficClass.Benign, TrafficClass.Malicious


def stump_model(threshold: int = 200) -> RandomForestModel:
    """min_ipd_us <= threshold -> Malicious else Benign."""
    return RandomForestModel((Internal(MIN_IPD, threshold, Leaf(M), Leaf(B)),), 1)


def rrc(ts: int, tup: FiveTuple, length: int = 80, label: TruthLabel = TruthLabel.Malicious) -> PacketRecord:
    return PacketRecord(ts, tup, length, MsgKind.RrcConnectionRequest, label)


def random_tree(rng: np.random.Generator, depth: int, max_depth: int, small: bool):
    if depth >= max_depth or (depth > 0 and rng.random() < 0.25):
        return Leaf(M if rng.random() < 0.5 else B)
    hi = 2000 if small else FIELD_MAX - 1
    return Internal(
        int(rng.integers(0, NUM_FEATURES)),
        int(rng.integers(0, hi)),
        random_tree(rng, depth + 1, max_depth, small),
        random_tree(rng, depth + 1, max_depth, small),
    )


def random_forest(rng: np.random.Generator, small: bool = True) -> RandomForestModel:
    n = int(rng.choice([1, 3, 5]))
    depth = int(rng.integers(1, 6))
    return RandomForestModel(tuple(random_tree(rng, 0, depth, small) for _ in range(n)), depth)


@dataclass
class PresetRun:
    name: str
    trace: list[PacketRecord]
    dataset: Dataset
    train: list
    test: list
    model: RandomForestModel
    encoded: EncodedModel


@functools.lru_cache(maxsize=None)
def preset_run(name: str) -> PresetRun:
    trace = generate_trace(scenario_presets()[name])
    ds = extract_dataset(trace, 10)
    train, test = split_samples(ds.samples, 0.3, 0)
    model = train_forest(train, 6, 5, 5, 0)
    return PresetRun(name, trace, ds, train, test, model, encode_model(model))


@pytest.fixture
def low_run() -> PresetRun:
    return preset_run("low")


def colliding_pair(bits: int = 8) -> tuple[FiveTuple, FiveTuple]:
    """Two RRC tuples sharing the masked index but not the flow id."""
    from raid.core import flow_hash, flow_id

    seen: dict[int, FiveTuple] = {}
    for port in range(1, 65536):
        t = FiveTuple.make("10.0.1.1", "10.0.0.1", port, 38472, 132)
        idx = flow_hash(t, bits)
        other = seen.get(idx)
        if other is not None and flow_id(other) != flow_id(t):
            return other, t
        seen.setdefault(idx, t)
    raise AssertionError("no collision found")
