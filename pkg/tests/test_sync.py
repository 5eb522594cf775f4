"""Clock offset estimation from ping/pong exchanges."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from biostream.sync import ClockExchange, OffsetTracker, estimate_clock_offset


def test_single_exchange_example():
    # t0=0.000, t1=10.005, t2=10.006, t3=0.011 on a link with 10 s skew
    ex = ClockExchange(t0=0.000, t1=10.005, t2=10.006, t3=0.011)
    assert ex.offset() == pytest.approx(10.000, abs=1e-12)
    assert ex.rtt() == pytest.approx(0.010, abs=1e-12)


def test_min_rtt_exchange_wins():
    # second exchange has the smaller rtt and a slightly different offset
    a = ClockExchange(t0=0.0, t1=5.004, t2=5.004, t3=0.016)     # rtt 16 ms
    b = ClockExchange(t0=1.0, t1=6.0035, t2=6.0035, t3=1.007)   # rtt 7 ms
    off, rtt = estimate_clock_offset([a, b])
    assert off == pytest.approx(b.offset(), abs=1e-12)
    assert rtt == pytest.approx(b.rtt(), abs=1e-12)


def test_empty_burst_rejected():
    with pytest.raises(ValueError):
        estimate_clock_offset([])


@settings(max_examples=300, deadline=None)
@given(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6),
       st.floats(-1e6, 1e6), st.floats(-1e6, 1e6))
def test_antisymmetry_exact(t0, t1, t2, t3):
    # viewing the same exchange from the other clock negates the estimate,
    # bit-exactly: IEEE negation and symmetric rounding commute here
    fwd = ClockExchange(t0=t0, t1=t1, t2=t2, t3=t3)
    rev = ClockExchange(t0=t1, t1=t0, t2=t3, t3=t2)
    assert fwd.offset() == -rev.offset()
    assert fwd.rtt() == -rev.rtt()


@settings(max_examples=200, deadline=None)
@given(st.floats(-10.0, 10.0), st.floats(0.0, 0.01), st.floats(0.0, 0.01))
def test_error_bounded_by_half_rtt(offset, d1, d2):
    t0 = 0.0
    t1 = t0 + d1 + offset
    t2 = t1
    t3 = t2 - offset + d2
    ex = ClockExchange(t0=t0, t1=t1, t2=t2, t3=t3)
    assert abs(ex.offset() - offset) <= ex.rtt() / 2 + 1e-12


def test_burst_estimate_within_1ms_under_jitter():
    # 10 ms true offset, uniform 0-5 ms one-way jitter, 10 exchanges
    rng = np.random.default_rng(42)
    offset = 0.010
    exchanges = []
    t0 = 0.0
    for _ in range(10):
        d1, d2 = rng.uniform(0.0, 0.005, 2)
        t1 = t0 + d1 + offset
        t2 = t1 + 1e-4
        t3 = t2 - offset + d2
        exchanges.append(ClockExchange(t0=t0, t1=t1, t2=t2, t3=t3))
        t0 = t3 + 0.05
    est, _ = estimate_clock_offset(exchanges)
    assert abs(est - offset) < 0.001


def test_offset_tracker():
    tr = OffsetTracker()
    assert tr.offset_for("dev") == 0.0
    assert not tr.known("dev")
    ex = ClockExchange(t0=0.0, t1=1.0, t2=1.0, t3=0.002)
    tr.record_burst("dev", [ex])
    assert tr.known("dev")
    assert tr.offset_for("dev") == pytest.approx(ex.offset())
