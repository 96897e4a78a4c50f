"""Inference-threshold study: Macro-F1 as a function of the number of
packets observed, marginal gains, and the smallest threshold whose gain
falls below a margin."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from numbers import Real
from typing import Mapping, Sequence

from .forest import FlowSample, RandomForestModel, aggregate_metrics, predict_oracle

DEFAULT_EPSILON = Fraction(1, 200)  # 0.005


@dataclass(frozen=True)
class SweepResult:
    m_of_t: dict[int, Fraction]
    delta_m: dict[int, Fraction]
    epsilon: Fraction
    t_star: int
    found: bool  # False when no T qualified and t_star fell back to T_max
    undecided_counts: dict[int, int]
    evaluated_counts: dict[int, int]


def select_threshold(m_of_t: Mapping[int, Real], epsilon: Real):
    """Return (delta_m, t_star, found) for the rule
    t_star = min{T : M(T) - M(T-1) < epsilon}, else the last T."""
    ts = sorted(m_of_t)
    if not ts:
        raise ValueError("empty M(T) table")
    delta = {t: m_of_t[t] - m_of_t[prev] for prev, t in zip(ts, ts[1:])}
    for t in ts[1:]:
        if delta[t] < epsilon:
            return delta, t, True
    return delta, ts[-1], False


def threshold_sweep(
    samples: Sequence[FlowSample],
    model: RandomForestModel,
    t_range: Sequence[int] = range(2, 11),
    epsilon: Real = DEFAULT_EPSILON,
) -> SweepResult:
    ts = sorted(t_range)
    if not ts or ts[0] < 2:
        raise ValueError("inference is impossible before the second packet; t_range must start at >= 2")
    # floats go through their repr so 0.005 means exactly 1/200
    eps = Fraction(str(epsilon)) if isinstance(epsilon, float) else Fraction(epsilon)
    m, undecided, evaluated = {}, {}, {}
    for t in ts:
        preds, truths = [], []
        skipped = 0
        for s in samples:
            f = s.features_at.get(t)
            if f is None:
                skipped += 1
                continue
            preds.append(predict_oracle(model, f))
            truths.append(s.truth_label)
        agg = aggregate_metrics(preds, truths)
        m[t] = agg.macro_f1 if agg is not None else Fraction(0)
        undecided[t] = skipped
        evaluated[t] = len(truths)
    delta, t_star, found = select_threshold(m, eps)
    return SweepResult(m, delta, eps, t_star, found, undecided, evaluated)
