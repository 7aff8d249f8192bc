import pytest

from corridor_rl.config import PHASES, TimingParams
from corridor_rl.signals import (ActuatedDecider, FixedTimePlan, SignalController,
                                 SignalStateError, audit_signal_events,
                                 fixed_time_decide, measure_offset, plan_timing,
                                 webster_plan)

TIMING = TimingParams()


def make_ctrl(phase="EW_Through"):
    return SignalController("A", TIMING, initial_phase=phase)


def tick_for(ctrl, seconds, t0=0.0):
    steps = int(round(seconds / 0.1))
    t = t0
    for _ in range(steps):
        t = round(t + 0.1, 10)
        ctrl.tick(0.1, t)
    return t


class TestValidActions:
    def test_min_green_lock(self):
        c = make_ctrl()
        tick_for(c, 3.0)
        assert c.valid_actions() == frozenset({"EW_Through"})

    def test_max_green_forces_change(self):
        c = make_ctrl()
        tick_for(c, 60.0)
        assert c.valid_actions() == frozenset({"NS_Left", "NS_Through", "EW_Left"})

    def test_unconstrained_region_all_four(self):
        c = make_ctrl("NS_Left")
        tick_for(c, 10.0)  # min 5, max 20
        assert c.valid_actions() == frozenset(PHASES)

    def test_empty_during_clearance(self):
        c = make_ctrl()
        t = tick_for(c, 10.0)
        c.apply("NS_Left", t)
        assert c.valid_actions() == frozenset()
        tick_for(c, 4.0, t)  # inside all-red now
        assert c.valid_actions() == frozenset()


class TestApply:
    def test_keep_phase_accrues(self):
        c = make_ctrl()
        t = tick_for(c, 10.0)
        c.apply("EW_Through", t)
        assert c.indication == "green"
        assert c.elapsed == pytest.approx(10.0)

    def test_transition_timing_playback(self):
        c = make_ctrl()
        t = tick_for(c, 10.0)
        c.apply("NS_Left", t)
        assert c.indication == "yellow"
        t = tick_for(c, 3.5, t)
        assert c.indication == "all_red"
        t = tick_for(c, 1.5, t)
        assert c.indication == "green"
        assert c.phase == "NS_Left"
        # green onset is exactly yellow + all_red after the request
        assert c.green_start_log["NS_Left"][-1] == pytest.approx(15.0)

    def test_green_start_log_counts_transitions(self):
        c = make_ctrl()
        t = 0.0
        for target in ("NS_Left", "EW_Left", "NS_Through"):
            t = tick_for(c, 10.0, t)
            c.apply(target, t)
            t = tick_for(c, 5.0, t)
        total = sum(len(v) for v in c.green_start_log.values())
        assert total == 4  # initial green plus three transitions

    def test_invalid_phase_rejected(self):
        c = make_ctrl()
        tick_for(c, 3.0)  # min-green lock
        with pytest.raises(SignalStateError):
            c.apply("NS_Left", 3.0)


class TestFixedTime:
    def plan(self):
        return FixedTimePlan(
            splits=[("EW_Through", 40.0), ("EW_Left", 10.0),
                    ("NS_Through", 15.0), ("NS_Left", 10.0)],
            clearance=5.0)

    def test_cycle_length(self):
        assert self.plan().cycle == pytest.approx(95.0)

    def test_phase_at_start(self):
        assert self.plan().phase_at(0.0) == "EW_Through"

    def test_phase_at_50(self):
        assert self.plan().phase_at(50.0) == "EW_Left"

    def test_offset_shifts_table(self):
        plan = self.plan()
        plan.offsets = {"B": 27.0}
        assert plan.phase_at(27.0, "B") == "EW_Through"
        assert plan.phase_at(77.0, "B") == plan.phase_at(50.0, "A")

    def test_decide_holds_when_locked(self):
        plan = self.plan()
        c = make_ctrl()
        tick_for(c, 3.0)
        assert fixed_time_decide(c, plan, 41.0) == "EW_Through"


class TestOffset:
    def test_simple_subtraction(self):
        assert measure_offset([100.0], [127.0]) == [pytest.approx(27.0)]

    def test_multiple_onsets_use_latest_a(self):
        out = measure_offset([0.0, 95.0], [120.0, 215.0])
        assert out == [pytest.approx(25.0), pytest.approx(120.0)]

    def test_b_before_any_a_skipped(self):
        assert measure_offset([100.0], [50.0]) == []


class TestWebster:
    def test_cycle_matches_hand_oracle(self):
        # hand computation on the default volumes, sat flow 1900, lost 20 s:
        # y = (720 + 171 + 270 + 257) / 1900 = 0.746316
        # C0 = (1.5*20 + 5) / (1 - y) = 137.9668 s
        critical = {"EW_Through": 720.0, "EW_Left": 171.0,
                    "NS_Through": 270.0, "NS_Left": 257.0}
        plan = webster_plan(critical, TIMING)
        assert plan.cycle == pytest.approx(137.9668, abs=0.001)
        splits = dict(plan.splits)
        assert splits["EW_Through"] == pytest.approx(59.899, abs=0.01)
        assert splits["EW_Left"] == pytest.approx(14.226, abs=0.01)
        assert splits["NS_Through"] == pytest.approx(22.461, abs=0.01)
        assert splits["NS_Left"] == pytest.approx(21.380, abs=0.01)

    def test_plan_timing_pins_max_to_splits(self):
        critical = {"EW_Through": 720.0, "EW_Left": 171.0,
                    "NS_Through": 270.0, "NS_Left": 257.0}
        plan = webster_plan(critical, TIMING)
        t = plan_timing(plan, TIMING)
        assert t.max_green_through == pytest.approx(59.899, abs=0.01)
        assert t.max_green_left == pytest.approx(21.380, abs=0.01)


class TestActuated:
    def make(self):
        critical = {"EW_Through": 720.0, "EW_Left": 171.0,
                    "NS_Through": 270.0, "NS_Left": 257.0}
        plan = webster_plan(critical, TIMING)
        plan.offsets = {"A": 0.0}
        timing = plan_timing(plan, TIMING)
        ctrl = SignalController("A", timing)
        return ActuatedDecider(plan), ctrl

    def test_no_demand_holds_coordinated_to_force_off(self):
        dec, ctrl = self.make()
        gaps = {p: 99.0 for p in PHASES}
        demand = {p: False for p in PHASES}
        t = tick_for(ctrl, 30.0)
        assert dec.decide(ctrl, gaps, demand, t) == "EW_Through"

    def test_continuous_calls_run_to_split(self):
        dec, ctrl = self.make()
        # put the controller on NS_Through with constant actuation
        t = tick_for(ctrl, 60.0)
        ctrl.apply("NS_Through", t)
        t = tick_for(ctrl, 5.0, t)  # through clearance
        gaps = {p: 0.0 for p in PHASES}
        demand = {p: True for p in PHASES}
        held = 0.0
        while True:
            choice = dec.decide(ctrl, gaps, demand, t)
            if choice != "NS_Through":
                break
            t = tick_for(ctrl, 1.0, t)
            held += 1.0
            assert held < 80.0
        # green holds until its force-off, well past min green
        assert held >= TIMING.min_green_through

    def test_gap_out_after_min_green(self):
        dec, ctrl = self.make()
        t = tick_for(ctrl, 60.0)
        ctrl.apply("NS_Through", t)
        t = tick_for(ctrl, 5.0, t)
        t = tick_for(ctrl, 9.0, t)  # past min green
        gaps = {p: 99.0 for p in PHASES}
        gaps["NS_Through"] = 4.0  # stale detector: gap-out
        demand = {p: False for p in PHASES}
        assert dec.decide(ctrl, gaps, demand, t) == "EW_Through"

    def test_skip_on_no_call(self):
        dec, ctrl = self.make()
        t = tick_for(ctrl, 59.95)
        gaps = {p: 99.0 for p in PHASES}
        demand = {p: False for p in PHASES}
        demand["NS_Left"] = True  # only NS_Left has a call
        choice = dec.decide(ctrl, gaps, demand, t)
        assert choice == "NS_Left"  # EW_Left and NS_Through skipped


class TestAudit:
    def test_clean_controller_log(self):
        c = make_ctrl()
        t = 0.0
        for target in ("NS_Through", "EW_Through", "NS_Left"):
            t = tick_for(c, 12.0, t)
            c.apply(target, t)
            t = tick_for(c, 6.0, t)
        assert audit_signal_events(c.events, TIMING, t) == []

    def test_min_green_violation_detected(self):
        from corridor_rl.signals import SignalEvent
        events = [
            SignalEvent(0.0, "A", "EW_Through", "green", "onset"),
            SignalEvent(2.0, "A", "EW_Through", "green", "end"),  # min is 8
        ]
        problems = audit_signal_events(events, TIMING, 10.0)
        assert any("min" in p for p in problems)
