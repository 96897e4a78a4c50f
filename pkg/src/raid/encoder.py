"""Compile a forest into match-action entries.

Three table kinds, as a switch would hold them:

* one range table per feature mapping a value to a small code,
* per tree, one entry per leaf matching a code hyper-rectangle,
* a vote table from malicious-vote count to class.

Ranges are inclusive on the upper edge so that ``value <= threshold``
in a tree maps to ``code <= code_of(threshold)``.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import FIELD_MAX, NUM_FEATURES, TrafficClass
from .forest import Internal, Leaf, RandomForestModel, TreeNode, predict_oracle_batch, tree_vote

DEFAULT_CODE_CAP = 256


class EncodingError(ValueError):
    pass


@dataclass(frozen=True)
class RangeEntry:
    range_lo: int
    range_hi: int
    code: int


@dataclass(frozen=True)
class FeatureTable:
    feature_index: int
    boundaries: tuple[int, ...]
    entries: tuple[RangeEntry, ...]

    @classmethod
    def from_boundaries(cls, feature_index: int, boundaries: Sequence[int]) -> FeatureTable:
        bs = tuple(sorted(set(boundaries)))
        entries = []
        lo = 0
        for code, b in enumerate(bs):
            entries.append(RangeEntry(lo, b, code))
            lo = b + 1
        entries.append(RangeEntry(lo, FIELD_MAX, len(bs)))
        return cls(feature_index, bs, tuple(entries))

    @property
    def num_ranges(self) -> int:
        return len(self.entries)

    @property
    def code_width(self) -> int:
        return max(0, math.ceil(math.log2(self.num_ranges))) if self.num_ranges > 1 else 0

    def validate(self) -> None:
        """Entries must tile [0, FIELD_MAX] with codes 0..n-1 in order."""
        if not self.entries:
            raise EncodingError(f"feature {self.feature_index}: empty table")
        expect_lo = 0
        for k, e in enumerate(self.entries):
            if e.code != k:
                raise EncodingError(f"feature {self.feature_index}: code {e.code} at position {k}")
            if e.range_lo != expect_lo:
                kind = "gap" if e.range_lo > expect_lo else "overlap"
                raise EncodingError(f"feature {self.feature_index}: {kind} before {e.range_lo}")
            if e.range_hi < e.range_lo:
                raise EncodingError(f"feature {self.feature_index}: empty range at code {k}")
            expect_lo = e.range_hi + 1
        if expect_lo != FIELD_MAX + 1:
            raise EncodingError(f"feature {self.feature_index}: ranges stop at {expect_lo - 1}")
        if tuple(e.range_hi for e in self.entries[:-1]) != self.boundaries:
            raise EncodingError(f"feature {self.feature_index}: boundaries disagree with entries")


def lookup_code(table: FeatureTable, value: int) -> int:
    # number of boundaries strictly below value == index of the covering range
    return bisect.bisect_left(table.boundaries, value)


def lookup_code_scan(table: FeatureTable, value: int) -> int:
    for e in table.entries:
        if e.range_lo <= value <= e.range_hi:
            return e.code
    raise EncodingError(f"value {value} not covered")


@dataclass(frozen=True)
class LeafEntry:
    tree_index: int
    code_lo: tuple[int, ...]
    code_hi: tuple[int, ...]
    label: TrafficClass

    def matches(self, codes: Sequence[int]) -> bool:
        for c, lo, hi in zip(codes, self.code_lo, self.code_hi):
            if c < lo or c > hi:
                return False
        return True

    @property
    def is_empty(self) -> bool:
        return any(lo > hi for lo, hi in zip(self.code_lo, self.code_hi))


@dataclass
class EncodedModel:
    feature_tables: tuple[FeatureTable, ...]
    trees: tuple[tuple[LeafEntry, ...], ...]
    vote_table: tuple[TrafficClass, ...]
    # code tuple -> malicious vote count; a software stand-in for the
    # exact-match cache a switch would put in front of range tables
    _memo: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def num_trees(self) -> int:
        return len(self.trees)

    def codes(self, features: Sequence[int]) -> tuple[int, ...]:
        return tuple(bisect.bisect_left(t.boundaries, v) for t, v in zip(self.feature_tables, features))

    def tree_labels(self, codes: Sequence[int]) -> list[TrafficClass]:
        out = []
        for entries in self.trees:
            for e in entries:
                if e.matches(codes):
                    out.append(e.label)
                    break
            else:
                raise EncodingError(f"no leaf entry matches codes {tuple(codes)}")
        return out

    def malicious_votes(self, codes: tuple[int, ...]) -> int:
        v = self._memo.get(codes)
        if v is None:
            v = sum(1 for lab in self.tree_labels(codes) if lab is TrafficClass.Malicious)
            self._memo[codes] = v
        return v

    def classify(self, features: Sequence[int]) -> TrafficClass:
        return self.vote_table[self.malicious_votes(self.codes(features))]

    def validate(self) -> None:
        """Structural checks a loader runs before accepting entries."""
        if len(self.feature_tables) != NUM_FEATURES:
            raise EncodingError("expected six feature tables")
        for k, t in enumerate(self.feature_tables):
            if t.feature_index != k:
                raise EncodingError(f"feature table {k} labelled {t.feature_index}")
            t.validate()
        if len(self.vote_table) != self.num_trees + 1:
            raise EncodingError("vote table size must be num_trees + 1")
        for v, cls in enumerate(self.vote_table):
            if (cls is TrafficClass.Malicious) != (2 * v > self.num_trees):
                raise EncodingError(f"vote table entry {v} is not a strict majority rule")
        sizes = [t.num_ranges for t in self.feature_tables]
        for i, entries in enumerate(self.trees):
            check_leaf_partition(i, entries, sizes)


def check_leaf_partition(tree_index: int, entries: Sequence[LeafEntry], sizes: Sequence[int]) -> None:
    """Leaf rectangles must be pairwise disjoint and cover the whole code space."""
    rects = []
    for e in entries:
        if e.tree_index != tree_index:
            raise EncodingError(f"entry for tree {e.tree_index} filed under tree {tree_index}")
        if len(e.code_lo) != NUM_FEATURES or len(e.code_hi) != NUM_FEATURES:
            raise EncodingError("leaf entry must span six features")
        if e.is_empty:
            continue
        for lo, hi, n in zip(e.code_lo, e.code_hi, sizes):
            if lo < 0 or hi >= n:
                raise EncodingError(f"tree {tree_index}: code interval [{lo},{hi}] outside table of {n}")
        rects.append(e)
    volume = sum(math.prod(hi - lo + 1 for lo, hi in zip(e.code_lo, e.code_hi)) for e in rects)
    if volume != math.prod(sizes):
        raise EncodingError(f"tree {tree_index}: leaves cover {volume} of {math.prod(sizes)} code tuples")
    for i, a in enumerate(rects):
        for b in rects[i + 1:]:
            if all(max(al, bl) <= min(ah, bh) for al, ah, bl, bh in zip(a.code_lo, a.code_hi, b.code_lo, b.code_hi)):
                raise EncodingError(f"tree {tree_index}: overlapping leaf entries")


def leaf_value_boxes(tree: TreeNode):
    """Yield (lo, hi, label) per leaf in left-to-right order; lo/hi are
    per-feature inclusive value bounds accumulated along the path."""

    def rec(node, lo, hi):
        if isinstance(node, Leaf):
            yield tuple(lo), tuple(hi), node.label
            return
        f, t = node.feature_index, node.threshold
        old_lo, old_hi = lo[f], hi[f]
        hi[f] = min(old_hi, t)
        yield from rec(node.left, lo, hi)
        hi[f] = old_hi
        lo[f] = max(old_lo, t + 1)
        yield from rec(node.right, lo, hi)
        lo[f] = old_lo

    yield from rec(tree, [0] * NUM_FEATURES, [FIELD_MAX] * NUM_FEATURES)


def _thresholds(model: RandomForestModel) -> list[set[int]]:
    out: list[set[int]] = [set() for _ in range(NUM_FEATURES)]

    def rec(node):
        if isinstance(node, Internal):
            out[node.feature_index].add(node.threshold)
            rec(node.left)
            rec(node.right)

    for t in model.trees:
        rec(t)
    return out


def encode_model(model: RandomForestModel, code_cap: int = DEFAULT_CODE_CAP) -> EncodedModel:
    model.validate()
    tables = []
    for f, ths in enumerate(_thresholds(model)):
        if len(ths) + 1 > code_cap:
            raise EncodingError(f"feature {f} needs {len(ths) + 1} ranges, cap is {code_cap}")
        tables.append(FeatureTable.from_boundaries(f, ths))
    trees = []
    for i, tree in enumerate(model.trees):
        entries = []
        for lo, hi, label in leaf_value_boxes(tree):
            # path bounds sit on range edges, so endpoint lookups are exact
            clo = tuple(lookup_code(tables[f], lo[f]) for f in range(NUM_FEATURES))
            chi = tuple(lookup_code(tables[f], hi[f]) for f in range(NUM_FEATURES))
            entries.append(LeafEntry(i, clo, chi, label))
        trees.append(tuple(entries))
    n = model.num_trees
    votes = tuple(TrafficClass.Malicious if 2 * v > n else TrafficClass.Benign for v in range(n + 1))
    return EncodedModel(tuple(tables), tuple(trees), votes)


# ---------------------------------------------------------------------------
# Batch evaluation, used for large equivalence sweeps
# ---------------------------------------------------------------------------


def encoded_tree_votes_batch(encoded: EncodedModel, X: np.ndarray) -> np.ndarray:
    """Per-tree votes via code lookup and rectangle match; shape (num_trees, n)."""
    X = np.asarray(X, dtype=np.int64)
    codes = np.stack(
        [np.searchsorted(np.asarray(t.boundaries, dtype=np.int64), X[:, k], side="left") for k, t in enumerate(encoded.feature_tables)],
        axis=1,
    )
    out = np.full((encoded.num_trees, len(X)), -1, dtype=np.int8)
    for i, entries in enumerate(encoded.trees):
        row = out[i]
        for e in entries:
            if e.is_empty:
                continue
            hit = np.ones(len(X), dtype=bool)
            for k in range(NUM_FEATURES):
                lo, hi = e.code_lo[k], e.code_hi[k]
                if lo > 0:
                    hit &= codes[:, k] >= lo
                if hi < encoded.feature_tables[k].num_ranges - 1:
                    hit &= codes[:, k] <= hi
            row[hit] = e.label is TrafficClass.Malicious
    if (out < 0).any():
        raise EncodingError("some vectors matched no leaf entry")
    return out


def classify_batch(encoded: EncodedModel, X: np.ndarray) -> np.ndarray:
    votes = encoded_tree_votes_batch(encoded, X).sum(axis=0)
    table = np.asarray([c is TrafficClass.Malicious for c in encoded.vote_table], dtype=np.int8)
    return table[votes]


# ---------------------------------------------------------------------------
# Verification
# ---------------------------------------------------------------------------


@dataclass
class VerificationReport:
    equivalent: bool
    counterexample: tuple[int, ...] | None = None
    reason: str = ""
    vectors_checked: int = 0


def boundary_vectors(model: RandomForestModel, encoded: EncodedModel) -> np.ndarray:
    """Deterministic probe set: {b, b+1, 0, FIELD_MAX} per boundary of
    every feature against all-zero and all-max backgrounds, plus both
    corners of every leaf's value box taken from the model itself."""
    rows = []
    for f, table in enumerate(encoded.feature_tables):
        values = {0, FIELD_MAX}
        for b in table.boundaries:
            values.add(b)
            if b < FIELD_MAX:
                values.add(b + 1)
        for v in sorted(values):
            for bg in (0, FIELD_MAX):
                row = [bg] * NUM_FEATURES
                row[f] = v
                rows.append(row)
    for tree in model.trees:
        for lo, hi, _ in leaf_value_boxes(tree):
            if all(a <= b for a, b in zip(lo, hi)):
                rows.append(list(lo))
                rows.append(list(hi))
    return np.asarray(rows, dtype=np.int64).reshape(-1, NUM_FEATURES)


def random_vectors(encoded: EncodedModel, n: int, rng: np.random.Generator) -> np.ndarray:
    """Half uniform over [0, FIELD_MAX], half jittered around boundaries."""
    X = rng.integers(0, FIELD_MAX + 1, size=(n, NUM_FEATURES), dtype=np.int64)
    near = rng.random((n, NUM_FEATURES)) < 0.5
    for k, t in enumerate(encoded.feature_tables):
        if not t.boundaries:
            continue
        bs = np.asarray(t.boundaries, dtype=np.int64)
        picks = bs[rng.integers(0, len(bs), size=n)] + rng.integers(-3, 4, size=n)
        picks = np.clip(picks, 0, FIELD_MAX)
        X[near[:, k], k] = picks[near[:, k]]
    return X


def _compare(model: RandomForestModel, encoded: EncodedModel, X: np.ndarray) -> VerificationReport | None:
    if not len(X):
        return None
    want = predict_oracle_batch(model, X)
    got = encoded_tree_votes_batch(encoded, X)
    bad = np.nonzero((want != got).any(axis=0))[0]
    if len(bad):
        i = int(bad[0])
        return VerificationReport(False, tuple(int(v) for v in X[i]), "per-tree vote mismatch")
    n = model.num_trees
    final_want = (2 * want.sum(axis=0) > n).astype(np.int8)
    table = np.asarray([c is TrafficClass.Malicious for c in encoded.vote_table], dtype=np.int8)
    bad = np.nonzero(final_want != table[got.sum(axis=0)])[0]
    if len(bad):
        return VerificationReport(False, tuple(int(v) for v in X[int(bad[0])]), "vote mismatch")
    return None


def verify_encoding(model: RandomForestModel, encoded: EncodedModel, trials: int = 10_000, seed: int = 0) -> VerificationReport:
    try:
        encoded.validate()
    except EncodingError as exc:
        return VerificationReport(False, None, f"structural: {exc}")
    if encoded.num_trees != model.num_trees:
        return VerificationReport(False, None, "tree count differs from model")
    checked = 0
    probe = boundary_vectors(model, encoded)
    fail = _compare(model, encoded, probe)
    checked += len(probe)
    if fail:
        fail.vectors_checked = checked
        return fail
    if trials > 0:
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(11,)))
        X = random_vectors(encoded, trials, rng)
        fail = _compare(model, encoded, X)
        checked += len(X)
        if fail:
            fail.vectors_checked = checked
            return fail
    return VerificationReport(True, None, "", checked)


def scalar_classify_check(model: RandomForestModel, encoded: EncodedModel, vectors) -> list[tuple[int, ...]]:
    """Scalar path comparison (encoded table walk vs tree walk); returns mismatches."""
    bad = []
    for v in vectors:
        v = tuple(int(x) for x in v)
        want = [tree_vote(t, v) for t in model.trees]
        if encoded.tree_labels(encoded.codes(v)) != want:
            bad.append(v)
    return bad
