from fractions import Fraction as F

import pytest

from raid.core import FlowFeatures
from raid.forest import FlowSample
from raid.sweep import select_threshold, threshold_sweep

from conftest import B, M, stump_model

CURVE = {2: F("0.50"), 3: F("0.70"), 4: F("0.85"), 5: F("0.90"), 6: F("0.92"), 7: F("0.921"), 8: F("0.921")}


def test_hand_example_small_epsilon():
    delta, t_star, found = select_threshold(CURVE, F(5, 1000))
    assert delta[7] == F(1, 1000)
    assert (t_star, found) == (7, True)


def test_gain_equal_to_epsilon_does_not_qualify():
    # delta[6] is exactly 0.02; the rule needs a strictly smaller gain
    assert select_threshold(CURVE, F(2, 100))[1] == 7
    assert select_threshold(CURVE, F(21, 1000))[1] == 6


def test_constant_curve_and_no_qualifier():
    assert select_threshold({t: F(1, 2) for t in range(2, 9)}, F(1, 200))[1] == 3
    rising = {t: F(t, 10) for t in range(2, 6)}
    assert select_threshold(rising, F(1, 200))[1:] == (5, False)


def test_selection_minimal_and_prefix_sums():
    delta, t_star, _ = select_threshold(CURVE, F(5, 1000))
    assert all(delta[t] >= F(5, 1000) for t in range(3, t_star))
    acc = CURVE[2]
    for t in range(3, 9):
        acc += delta[t]
        assert acc == CURVE[t]


def _sample(k, label, ipd):
    snaps = {t: FlowFeatures(t, 80 * t, 80, 80, ipd, ipd) for t in range(2, k + 1)}
    return FlowSample(None, snaps, label)


def test_sweep_counts_undecided_and_floats():
    samples = [_sample(8, M, 100), _sample(3, M, 100), _sample(8, B, 900), _sample(6, B, 900)]
    res = threshold_sweep(samples, stump_model(), range(2, 9), 0.005)
    assert res.epsilon == F(1, 200)
    assert res.m_of_t[2] == 1
    assert res.evaluated_counts[4] == 3 and res.undecided_counts[4] == 1
    assert res.evaluated_counts[8] == 2
    assert res.t_star == 3
    with pytest.raises(ValueError):
        threshold_sweep(samples, stump_model(), range(1, 5))


def test_default_dataset_shape(low_run):
    res = threshold_sweep(low_run.test, low_run.model)
    assert res.m_of_t[6] - res.m_of_t[2] >= F(5, 100)
    assert res.t_star in (5, 6, 7)
