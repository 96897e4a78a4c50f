"""Flow datasets, Random Forest training over integer features, the
reference tree-walk oracle and the classification metrics."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence, Union

import numpy as np

from .core import (
    FEATURE_NAMES,
    FIELD_MAX,
    NUM_FEATURES,
    FiveTuple,
    FlowFeatures,
    MsgKind,
    PacketRecord,
    TrafficClass,
    TruthLabel,
    step_features,
)

MAX_FEATURES_PER_SPLIT = 2  # floor(sqrt(6))


class TraceOrderError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Dataset
# ---------------------------------------------------------------------------


@dataclass
class FlowSample:
    tuple: FiveTuple
    features_at: dict[int, FlowFeatures]
    truth_label: TrafficClass

    @property
    def length(self) -> int:
        return max(self.features_at) if self.features_at else 0


@dataclass
class Dataset:
    samples: list[FlowSample]
    skipped: list[FiveTuple] = field(default_factory=list)


def check_order(trace: Iterable[PacketRecord]) -> None:
    last = -1
    for i, p in enumerate(trace):
        if p.timestamp_us < last:
            raise TraceOrderError(f"timestamp decreases at record {i}")
        last = p.timestamp_us


def extract_dataset(trace: Sequence[PacketRecord], t_max: int) -> Dataset:
    """One sample per tuple with >= 2 RRC requests, snapshots for T = 2..t_max."""
    if t_max < 2:
        raise ValueError("t_max must be >= 2")
    check_order(trace)
    state: dict[FiveTuple, tuple[FlowFeatures, int]] = {}
    snaps: dict[FiveTuple, dict[int, FlowFeatures]] = {}
    labels: dict[FiveTuple, TruthLabel] = {}
    for p in trace:
        if p.msg_kind is not MsgKind.RrcConnectionRequest:
            continue
        feats, last = state.get(p.tuple, (None, 0))
        if feats is None:
            feats = FlowFeatures()
            snaps[p.tuple] = {}
            labels[p.tuple] = p.truth_label
        elif feats.pkt_count >= t_max:
            continue
        feats = step_features(feats, last, p.timestamp_us, p.length_bytes)
        state[p.tuple] = (feats, p.timestamp_us)
        if feats.pkt_count >= 2:
            snaps[p.tuple][feats.pkt_count] = feats

    ds = Dataset([])
    for tup, s in snaps.items():
        if not s or labels[tup] is TruthLabel.Unknown:
            ds.skipped.append(tup)
            continue
        ds.samples.append(FlowSample(tup, s, TrafficClass.from_truth(labels[tup])))
    return ds


def split_samples(samples: Sequence[FlowSample], test_fraction: float, seed: int):
    """Stratified split by flow. Returns (train, test)."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(7,)))
    train, test = [], []
    for cls in TrafficClass:
        group = [s for s in samples if s.truth_label is cls]
        order = rng.permutation(len(group))
        n_test = int(round(len(group) * test_fraction))
        test_idx = set(order[:n_test].tolist())
        for i, s in enumerate(group):
            (test if i in test_idx else train).append(s)
    key = lambda s: tuple(s.tuple)  # noqa: E731
    return sorted(train, key=key), sorted(test, key=key)


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Leaf:
    label: TrafficClass


@dataclass(frozen=True)
class Internal:
    feature_index: int
    threshold: int
    left: "TreeNode"
    right: "TreeNode"


TreeNode = Union[Internal, Leaf]


@dataclass(frozen=True)
class RandomForestModel:
    trees: tuple[TreeNode, ...]
    max_depth: int
    feature_names: tuple[str, ...] = FEATURE_NAMES

    @property
    def num_trees(self) -> int:
        return len(self.trees)

    def validate(self) -> None:
        if self.num_trees % 2 == 0:
            raise ValueError("num_trees must be odd")
        if tuple(self.feature_names) != FEATURE_NAMES:
            raise ValueError("unexpected feature names")
        for t in self.trees:
            for node, depth in _walk(t):
                if isinstance(node, Internal):
                    if not 0 <= node.feature_index < NUM_FEATURES:
                        raise ValueError(f"feature index {node.feature_index} out of range")
                    if not 0 <= node.threshold < FIELD_MAX:
                        raise ValueError(f"threshold {node.threshold} out of range")
                elif depth > self.max_depth:
                    raise ValueError("tree deeper than max_depth")


def _walk(node: TreeNode, depth: int = 0):
    yield node, depth
    if isinstance(node, Internal):
        yield from _walk(node.left, depth + 1)
        yield from _walk(node.right, depth + 1)


def tree_leaves(node: TreeNode) -> int:
    return sum(1 for n, _ in _walk(node) if isinstance(n, Leaf))


def tree_vote(node: TreeNode, x: Sequence[int]) -> TrafficClass:
    while isinstance(node, Internal):
        node = node.left if x[node.feature_index] <= node.threshold else node.right
    return node.label


def majority(votes: Iterable[TrafficClass], num_trees: int) -> TrafficClass:
    mal = sum(1 for v in votes if v is TrafficClass.Malicious)
    return TrafficClass.Malicious if 2 * mal > num_trees else TrafficClass.Benign


def predict_oracle(model: RandomForestModel, features: Sequence[int]) -> TrafficClass:
    return majority((tree_vote(t, features) for t in model.trees), model.num_trees)


def predict_oracle_batch(model: RandomForestModel, X: np.ndarray) -> np.ndarray:
    """Vectorised tree walk. Returns per-tree votes, shape (num_trees, n), 1 = Malicious."""
    X = np.asarray(X, dtype=np.int64)
    out = np.zeros((model.num_trees, len(X)), dtype=np.int8)

    def descend(node, idx, row):
        if not len(idx):
            return
        if isinstance(node, Leaf):
            row[idx] = node.label is TrafficClass.Malicious
            return
        go_left = X[idx, node.feature_index] <= node.threshold
        descend(node.left, idx[go_left], row)
        descend(node.right, idx[~go_left], row)

    everything = np.arange(len(X))
    for k, t in enumerate(model.trees):
        descend(t, everything, out[k])
    return out


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def _gini_best_split(x: np.ndarray, y: np.ndarray):
    """Best (impurity, threshold) for one feature column, or None when constant."""
    order = np.argsort(x, kind="stable")
    xs, ys = x[order], y[order]
    n = len(xs)
    distinct = np.nonzero(xs[1:] != xs[:-1])[0]  # split after these positions
    if not len(distinct):
        return None
    cum_pos = np.cumsum(ys)
    total_pos = cum_pos[-1]
    n_left = distinct + 1
    pos_left = cum_pos[distinct]
    n_right = n - n_left
    pos_right = total_pos - pos_left
    p_l = pos_left / n_left
    p_r = pos_right / n_right
    gini = (n_left * 2 * p_l * (1 - p_l) + n_right * 2 * p_r * (1 - p_r)) / n
    best = int(np.argmin(gini))
    i = distinct[best]
    lo, hi = int(xs[i]), int(xs[i + 1])
    return float(gini[best]), (lo + hi) // 2


def _leaf_for(y: np.ndarray) -> Leaf:
    mal = int(y.sum())
    # ties go to Benign (fail-open)
    return Leaf(TrafficClass.Malicious if 2 * mal > len(y) else TrafficClass.Benign)


def _grow(X: np.ndarray, y: np.ndarray, depth: int, max_depth: int, rng: np.random.Generator) -> TreeNode:
    if depth >= max_depth or y.min() == y.max():
        return _leaf_for(y)
    p = y.mean()
    parent = 2 * p * (1 - p)
    best = None
    visited = 0
    # keep drawing features until MAX_FEATURES_PER_SPLIT non-constant ones were seen
    for f in rng.permutation(NUM_FEATURES).tolist():
        res = _gini_best_split(X[:, f], y)
        if res is None:
            continue
        visited += 1
        if best is None or res[0] < best[0]:
            best = (res[0], f, res[1])
        if visited >= MAX_FEATURES_PER_SPLIT:
            break
    if best is None or best[0] >= parent - 1e-12:
        return _leaf_for(y)
    _, f, thr = best
    mask = X[:, f] <= thr
    if mask.all() or not mask.any():
        return _leaf_for(y)
    left = _grow(X[mask], y[mask], depth + 1, max_depth, rng)
    right = _grow(X[~mask], y[~mask], depth + 1, max_depth, rng)
    if isinstance(left, Leaf) and left == right:
        return left
    return Internal(f, thr, left, right)


def samples_matrix(samples: Sequence[FlowSample], t: int):
    """Feature matrix and 0/1 labels for samples that reached packet t."""
    rows, ys = [], []
    for s in samples:
        f = s.features_at.get(t)
        if f is None:
            continue
        rows.append(tuple(f))
        ys.append(1 if s.truth_label is TrafficClass.Malicious else 0)
    return np.asarray(rows, dtype=np.int64).reshape(-1, NUM_FEATURES), np.asarray(ys, dtype=np.int8)


def fit_forest(X: np.ndarray, y: np.ndarray, num_trees: int, max_depth: int, seed: int) -> RandomForestModel:
    if num_trees < 1 or num_trees % 2 == 0:
        raise ValueError("num_trees must be a positive odd number")
    if max_depth < 1:
        raise ValueError("max_depth must be >= 1")
    if len(y) == 0 or y.min() == y.max():
        raise ValueError("training data must contain both classes")
    trees = []
    for k in range(num_trees):
        # per-tree seed: result does not depend on tree build order
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(k,)))
        idx = rng.integers(0, len(y), size=len(y))
        trees.append(_grow(X[idx], y[idx], 0, max_depth, rng))
    model = RandomForestModel(tuple(trees), max_depth)
    model.validate()
    return model


def train_forest(
    samples: Sequence[FlowSample], train_t: int = 6, num_trees: int = 5, max_depth: int = 5, seed: int = 0
) -> RandomForestModel:
    X, y = samples_matrix(samples, train_t)
    return fit_forest(X, y, num_trees, max_depth, seed)


# ---------------------------------------------------------------------------
# Metrics (Malicious is the positive class)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise ValueError("confusion counts must be >= 0")

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    @classmethod
    def from_labels(cls, predictions: Sequence[TrafficClass], truths: Sequence[TrafficClass]) -> ConfusionCounts:
        c = Counter((p is TrafficClass.Malicious, t is TrafficClass.Malicious) for p, t in zip(predictions, truths))
        return cls(tp=c[True, True], tn=c[False, False], fp=c[True, False], fn=c[False, True])


def accuracy_exact(c: ConfusionCounts) -> Fraction | None:
    if c.total == 0:
        return None
    return Fraction(c.tp + c.tn, c.total)


def f1_exact(c: ConfusionCounts) -> Fraction:
    denom = 2 * c.tp + c.fp + c.fn
    return Fraction(2 * c.tp, denom) if denom else Fraction(0)


def accuracy(c: ConfusionCounts) -> float | None:
    """(tp + tn) / total; None when there is no data."""
    a = accuracy_exact(c)
    return None if a is None else float(a)


def f1_binary(c: ConfusionCounts) -> float:
    """2tp / (2tp + fp + fn), defined as 0 when the denominator is 0."""
    return float(f1_exact(c))


@dataclass(frozen=True)
class Aggregates:
    accuracy: Fraction
    macro_f1: Fraction
    weighted_f1: Fraction
    per_class_f1: dict[TrafficClass, Fraction]
    support: dict[TrafficClass, int]
    confusion: ConfusionCounts
    degenerate_classes: tuple[TrafficClass, ...] = ()

    def as_floats(self) -> dict[str, float]:
        return {
            "accuracy": float(self.accuracy),
            "macro_f1": float(self.macro_f1),
            "weighted_f1": float(self.weighted_f1),
        }


def aggregate_metrics(predictions: Sequence[TrafficClass], truths: Sequence[TrafficClass]) -> Aggregates | None:
    if len(predictions) != len(truths):
        raise ValueError("predictions and truths differ in length")
    if not truths:
        return None
    conf = ConfusionCounts.from_labels(predictions, truths)
    # swapping the roles of tp/tn and fp/fn makes Benign the positive class
    flipped = ConfusionCounts(tp=conf.tn, tn=conf.tp, fp=conf.fn, fn=conf.fp)
    per = {TrafficClass.Malicious: f1_exact(conf), TrafficClass.Benign: f1_exact(flipped)}
    support = {TrafficClass.Malicious: conf.tp + conf.fn, TrafficClass.Benign: conf.tn + conf.fp}
    degenerate = tuple(
        cls for cls, c in ((TrafficClass.Malicious, conf), (TrafficClass.Benign, flipped)) if 2 * c.tp + c.fp + c.fn == 0
    )
    n = len(truths)
    return Aggregates(
        accuracy=accuracy_exact(conf),
        macro_f1=(per[TrafficClass.Malicious] + per[TrafficClass.Benign]) / 2,
        weighted_f1=sum((per[k] * support[k] for k in per), Fraction(0)) / n,
        per_class_f1=per,
        support=support,
        confusion=conf,
        degenerate_classes=degenerate,
    )


def f1_aggregates(predictions: Sequence[TrafficClass], truths: Sequence[TrafficClass]) -> dict[str, float] | None:
    agg = aggregate_metrics(predictions, truths)
    return None if agg is None else agg.as_floats()
