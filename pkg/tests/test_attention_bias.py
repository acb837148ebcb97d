import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cplm import attention_bias as ab
from cplm.attention_bias import ScheduleSpec
from cplm.errors import ConfigError, ContractViolation


def test_head_slopes_examples():
    assert ab.head_slopes(8) == [1, 1 / 2, 1 / 4, 1 / 8, 1 / 16, 1 / 32, 1 / 64, 1 / 128]
    assert ab.head_slopes(1) == [1.0]
    assert ab.head_slopes(4) == [1, 1 / 4, 1 / 16, 1 / 64]
    with pytest.raises(ConfigError):
        ab.head_slopes(0)


def test_head_slopes_geometric():
    s = ab.head_slopes(6)
    ratios = [b / a for a, b in zip(s, s[1:])]
    assert s[0] == 1.0
    assert max(ratios) - min(ratios) < 1e-12


def test_bias_matrix_examples():
    assert ab.bias_matrix(1).penalties.tolist() == [[0.0]]
    p = ab.bias_matrix(3).penalties
    assert p[2].tolist() == [-2, -1, 0]
    assert p[1, :2].tolist() == [-1, 0] and p[0, 0] == 0
    assert np.isneginf(p[np.triu_indices(3, k=1)]).all()
    with pytest.raises(ConfigError):
        ab.bias_matrix(0)


@pytest.mark.parametrize("L", [2, 17, 512])
def test_bias_matrix_exact(L):
    p = ab.bias_matrix(L).penalties
    i, j = np.tril_indices(L)
    assert np.all(p[i, j] + (i - j) == 0)


def test_schedule_examples():
    exp = ScheduleSpec(ab.EXPONENTIAL, m0=1.0, r=0.6)
    assert ab.schedule_slope(exp, 0) == 1.0
    assert math.isclose(ab.schedule_slope(exp, 10), 0.6**10, rel_tol=0, abs_tol=1e-15)
    assert ab.schedule_slope(ScheduleSpec(ab.LINEAR, m0=1.0, horizon=10), 5) == 0.5
    rev = ScheduleSpec(ab.REVERSED_EXPONENTIAL, m0=0.01, r=1.668)
    assert ab.schedule_slope(rev, 10) == 1.0
    assert ab.schedule_slope(ScheduleSpec(ab.STATIC, m0=0.3), 7) == 0.3


def test_schedule_holds_after_horizon():
    exp = ScheduleSpec(ab.EXPONENTIAL, horizon=4)
    assert ab.schedule_slope(exp, 9) == ab.schedule_slope(exp, 4)


def test_snap_final_to_zero():
    exp = ScheduleSpec(ab.EXPONENTIAL, snap_final_to_zero=True)
    assert ab.schedule_slope(exp, 10) == 0.0
    assert ab.schedule_slope(exp, 9) == pytest.approx(0.6**9)


def test_schedule_errors():
    with pytest.raises(ContractViolation):
        ab.schedule_slope(ScheduleSpec(ab.EXPONENTIAL), -1)
    with pytest.raises(ContractViolation):
        ab.schedule_slope(ScheduleSpec(ab.NONE), 0)
    for bad in (dict(m0=1.5), dict(r=0.0), dict(horizon=0)):
        with pytest.raises(ConfigError):
            ScheduleSpec(ab.EXPONENTIAL, **bad)


def test_working_memory():
    assert ab.working_memory(1.0) == 0.0
    assert ab.working_memory(0.0) == 1.0
    assert ab.working_memory(0.0060466) == pytest.approx(0.9939534, abs=1e-12)
    with pytest.raises(ContractViolation):
        ab.working_memory(1.2)


def test_capacity_curve_examples():
    assert ab.capacity_curve(ScheduleSpec(ab.STATIC, m0=0.5, horizon=3)) == [(0, 0.5), (1, 0.5), (2, 0.5), (3, 0.5)]
    got = ab.capacity_curve(ScheduleSpec(ab.EXPONENTIAL, horizon=2))
    assert [t for t, _ in got] == [0, 1, 2]
    assert np.allclose([w for _, w in got], [0.0, 0.4, 0.64], atol=1e-15)
    assert ab.capacity_curve(ScheduleSpec(ab.LINEAR, horizon=2)) == [(0, 0.0), (1, 0.5), (2, 1.0)]


def test_capacity_csv(tmp_path):
    ab.write_capacity_csv(ScheduleSpec(ab.EXPONENTIAL), tmp_path / "c.csv")
    rows = list(csv.reader(open(tmp_path / "c.csv")))
    assert rows[0] == ["epoch", "m", "w"]
    assert len(rows) == 12
    assert float(rows[-1][2]) == pytest.approx(0.9939534, abs=1e-7)


def test_reversed_mirrors_forward_around_epoch_nine():
    # the reversed rate 1.668 ~ 1/0.6 started at 0.01 ~ 0.6**9 retraces the forward curve backwards
    fwd = ScheduleSpec(ab.EXPONENTIAL)
    rev = ScheduleSpec(ab.REVERSED_EXPONENTIAL, m0=0.01, r=1.668)
    for t in range(10):
        w_rev = ab.working_memory(ab.schedule_slope(rev, t))
        w_fwd = ab.working_memory(ab.schedule_slope(fwd, 9 - t))
        assert abs(w_rev - w_fwd) < 0.005


def test_effective_slopes():
    exp = ScheduleSpec(ab.EXPONENTIAL)
    assert ab.effective_slopes(exp, 1, 4) == pytest.approx([0.6 * s for s in ab.head_slopes(4)])
    assert ab.effective_slopes(ScheduleSpec(ab.EXPONENTIAL, uniform_slope=True), 1, 4) == pytest.approx([0.6] * 4)
    assert ab.effective_slopes(ScheduleSpec(ab.NONE), 3, 4) is None
    assert ab.effective_slopes(ScheduleSpec(ab.STATIC), 5, 8) == ab.head_slopes(8)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.05, 1.0), st.floats(0.05, 0.95), st.integers(1, 30))
def test_exponential_monotone(m0, r, T):
    spec = ScheduleSpec(ab.EXPONENTIAL, m0=m0, r=r, horizon=T)
    m = [ab.schedule_slope(spec, t) for t in range(T + 1)]
    assert all(b < a for a, b in zip(m, m[1:]) if a > 0)
    w = [x for _, x in ab.capacity_curve(spec)]
    assert all(b >= a for a, b in zip(w, w[1:]))


@settings(max_examples=100, deadline=None)
@given(st.floats(0.001, 1.0), st.floats(1.01, 3.0), st.integers(1, 20))
def test_reversed_non_increasing_capacity(m0, r, T):
    w = [x for _, x in ab.capacity_curve(ScheduleSpec(ab.REVERSED_EXPONENTIAL, m0=m0, r=r, horizon=T))]
    assert all(0.0 <= x <= 1.0 for x in w)
    assert all(b <= a for a, b in zip(w, w[1:]))
