import numpy as np
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from ebse.trigger import (InputTriggerConfig, MeasurementTriggerConfig, input_trigger,
                          measurement_trigger, norm, triggered_set)
import pytest


def test_measurement_examples():
    assert measurement_trigger([0.3], [0.3], 0.0)
    assert measurement_trigger([1.0], [0.98], 0.01)
    assert not measurement_trigger([300.05], [300.0], 0.2)


def test_threshold_is_closed():
    assert measurement_trigger([0.5], [0.0], 0.5)
    assert input_trigger([0.0, 0.5], [0.0, 0.0], 0.5)


def test_input_examples():
    assert not input_trigger([0.0, 0.0], [0.0, 0.0], 0.02)
    assert input_trigger([0.5, 0.0], [0.47, 0.0], 0.02)
    assert not input_trigger([1e9], [0.0], np.inf)


def test_norm_kinds():
    assert norm([3, 4]) == 5.0
    assert norm([3, -4], "inf") == 4.0
    assert measurement_trigger([0.15, 0.15], [0, 0], 0.2, "two")
    assert not measurement_trigger([0.15, 0.15], [0, 0], 0.2, "inf")
    with pytest.raises(ValueError):
        norm([1.0], "one")


def test_triggered_set_examples():
    assert triggered_set([False] * 3) == (frozenset(), frozenset({0, 1, 2}))
    assert triggered_set([True] * 3) == (frozenset({0, 1, 2}), frozenset())
    assert triggered_set([True, False, True, False]) == (frozenset({0, 2}), frozenset({1, 3}))


@given(st.lists(st.booleans(), min_size=1, max_size=12))
def test_triggered_set_partitions(decisions):
    fired, silent = triggered_set(decisions)
    assert fired | silent == set(range(len(decisions)))
    assert not fired & silent


@given(hnp.arrays(np.float64, 3, elements=st.floats(-10, 10)),
       st.floats(0, 20), st.floats(0, 20))
def test_monotone_in_threshold(r, d1, d2):
    lo, hi = sorted((d1, d2))
    if measurement_trigger(r, np.zeros(3), hi):
        assert measurement_trigger(r, np.zeros(3), lo)


def test_configs_reject_negative():
    with pytest.raises(ValueError, match="delta_est"):
        MeasurementTriggerConfig((0.1, -0.1))
    with pytest.raises(ValueError, match="delta_ctrl"):
        InputTriggerConfig((np.nan,))
    with pytest.raises(ValueError):
        MeasurementTriggerConfig((0.1,), norm="l1")
