"""Property tests over the masking, replay, and scheduling invariants."""

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from corridor_rl.rl import ReplayBuffer, Transition, masked_argmax
from corridor_rl.signals import SignalController, measure_offset
from corridor_rl.config import PHASES, TimingParams


@given(
    q=st.lists(st.floats(min_value=-1e12, max_value=1e12,
                         allow_nan=False), min_size=4, max_size=4),
    mask_bits=st.integers(min_value=1, max_value=15),
)
def test_masked_argmax_never_selects_invalid(q, mask_bits):
    mask = np.array([(mask_bits >> i) & 1 == 1 for i in range(4)])
    a = masked_argmax(np.array(q), mask)
    assert mask[a]


@given(
    q=st.lists(st.floats(min_value=-100, max_value=100, allow_nan=False),
               min_size=4, max_size=4),
)
def test_masked_argmax_full_mask_is_argmax(q):
    arr = np.array(q)
    assert masked_argmax(arr, np.ones(4, bool)) == int(np.argmax(arr))


@given(
    capacity=st.integers(min_value=1, max_value=50),
    n=st.integers(min_value=0, max_value=120),
)
@settings(max_examples=50)
def test_replay_keeps_newest_in_order(capacity, n):
    buf = ReplayBuffer(capacity)
    for i in range(n):
        buf.push(Transition((np.array([i]),), (0,), float(i),
                            (np.array([i]),), (np.array([True] * 4),), False, 1.0))
    snap = [tr.reward for tr in buf.snapshot()]
    expected = [float(i) for i in range(max(0, n - capacity), n)]
    assert snap == expected


@given(st.lists(st.floats(min_value=0, max_value=1e5, allow_nan=False),
                min_size=0, max_size=20),
       st.lists(st.floats(min_value=0, max_value=1e5, allow_nan=False),
                min_size=0, max_size=20))
def test_measure_offset_values_nonnegative_and_anchored(log_a, log_b):
    log_a, log_b = sorted(log_a), sorted(log_b)
    for theta in measure_offset(log_a, log_b):
        assert theta >= 0.0


@given(st.integers(min_value=0, max_value=4000))
@settings(max_examples=60)
def test_controller_lock_time_nonnegative(steps):
    ctrl = SignalController("A", TimingParams())
    t = 0.0
    rng = np.random.default_rng(steps)
    for _ in range(steps // 40):
        for _ in range(40):
            t = round(t + 0.1, 10)
            ctrl.tick(0.1, t)
        valid = ctrl.valid_actions()
        if valid:
            ctrl.apply(sorted(valid)[int(rng.integers(0, len(valid)))], t)
        assert ctrl.lock_time() >= 0.0
        assert ctrl.forced_phase() in PHASES
