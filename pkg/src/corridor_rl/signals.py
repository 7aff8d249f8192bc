"""Four-phase single-ring signal machinery.

One controller instance per intersection owns the phase state machine
(Green -> Yellow -> AllRed -> Green on the pending phase), exposes the
legality of phase-change requests, and logs every indication change for
offset measurement and safety audits. Baseline controllers (fixed-time
coordinated and coordinated actuated with Webster-derived splits) decide
on top of the same state machine, so the safety constraints hold for
every control family.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .config import PHASES, TimingParams

GREEN = "green"
YELLOW = "yellow"
ALL_RED = "all_red"

_EPS = 1e-9


class SignalStateError(RuntimeError):
    """Contract violation in signal control (programming error)."""


@dataclass
class SignalEvent:
    t: float
    intersection: str
    phase: str
    indication: str
    event: str  # onset | end


class SignalController:
    """Per-intersection phase machine with min/max green and clearance."""

    def __init__(self, name: str, timing: TimingParams,
                 initial_phase: str = "EW_Through", t0: float = 0.0):
        if initial_phase not in PHASES:
            raise SignalStateError(f"unknown phase {initial_phase!r}")
        self.name = name
        self.timing = timing
        self.phase = initial_phase
        self.indication = GREEN
        self.elapsed = 0.0            # seconds in the current indication
        self.pending: str | None = None
        self.green_start_log: dict[str, list[float]] = {p: [] for p in PHASES}
        self.events: list[SignalEvent] = []
        self._log(t0, GREEN, "onset")
        self.green_start_log[self.phase].append(t0)

    def _log(self, t: float, indication: str, event: str) -> None:
        self.events.append(SignalEvent(t, self.name, self.phase, indication, event))

    @property
    def elapsed_green(self) -> float:
        return self.elapsed if self.indication == GREEN else 0.0

    def tick(self, dt: float, t: float) -> None:
        """Advance indication timers by one simulation step ending at ``t``."""
        self.elapsed += dt
        if self.indication == YELLOW and self.elapsed >= self.timing.yellow - _EPS:
            self._log(t, YELLOW, "end")
            self.elapsed -= self.timing.yellow
            self.indication = ALL_RED
            self._log(t, ALL_RED, "onset")
        if self.indication == ALL_RED and self.elapsed >= self.timing.all_red - _EPS:
            self._log(t, ALL_RED, "end")
            self.elapsed -= self.timing.all_red
            self.phase = self.pending  # type: ignore[assignment]
            self.pending = None
            self.indication = GREEN
            self._log(t, GREEN, "onset")
            self.green_start_log[self.phase].append(t)

    def indication_for(self, phase: str) -> str:
        """What a driver serving ``phase`` sees: green, yellow, or red."""
        if phase != self.phase:
            return "red"
        if self.indication == GREEN:
            return "green"
        if self.indication == YELLOW:
            return "yellow"
        return "red"

    def yellow_remaining(self) -> float:
        if self.indication != YELLOW:
            return 0.0
        return max(0.0, self.timing.yellow - self.elapsed)

    def valid_actions(self) -> frozenset[str]:
        """Legal next phases at a decision epoch; empty during clearance."""
        if self.indication != GREEN:
            return frozenset()
        if self.elapsed < self.timing.min_green(self.phase) - _EPS:
            return frozenset((self.phase,))
        if self.elapsed >= self.timing.max_green(self.phase) - _EPS:
            return frozenset(p for p in PHASES if p != self.phase)
        return frozenset(PHASES)

    def forced_phase(self) -> str:
        """The phase the controller is committed to when no choice exists."""
        return self.pending if self.pending is not None else self.phase

    def apply(self, next_phase: str, t: float) -> None:
        valid = self.valid_actions()
        if next_phase not in valid:
            raise SignalStateError(
                f"{self.name}: phase {next_phase!r} not in valid set {sorted(valid)}"
            )
        if next_phase == self.phase:
            return  # keep the current green running
        self._log(t, GREEN, "end")
        self.indication = YELLOW
        self.elapsed = 0.0
        self.pending = next_phase
        self._log(t, YELLOW, "onset")

    def lock_time(self) -> float:
        """Seconds until this intersection can next change phase."""
        tm = self.timing
        if self.indication == GREEN:
            return max(0.0, tm.min_green(self.phase) - self.elapsed)
        pending = self.forced_phase()
        if self.indication == YELLOW:
            rem = max(0.0, tm.yellow - self.elapsed) + tm.all_red
        else:
            rem = max(0.0, tm.all_red - self.elapsed)
        return rem + tm.min_green(pending)


def measure_offset(log_a: list[float], log_b: list[float]) -> list[float]:
    """Achieved offsets: for each green onset at B, the lag behind the most
    recent onset at A. Onsets at B before any A onset yield no measurement."""
    out = []
    ai = 0
    for tb in log_b:
        while ai < len(log_a) and log_a[ai] <= tb:
            ai += 1
        if ai > 0:
            out.append(tb - log_a[ai - 1])
    return out


# --- baseline controllers -------------------------------------------------

@dataclass
class FixedTimePlan:
    """Cyclic split table. Each entry is a green duration; every phase change
    consumes yellow + all_red, so the cycle is sum(greens) + n * clearance."""

    splits: list[tuple[str, float]]
    clearance: float
    offsets: dict[str, float] = field(default_factory=dict)

    @property
    def cycle(self) -> float:
        return sum(g for _, g in self.splits) + len(self.splits) * self.clearance

    def phase_at(self, t: float, intersection: str = "") -> str:
        """Phase that should be (or is about to become) green at ``t``.
        Clearance intervals map to the upcoming phase."""
        c = (t - self.offsets.get(intersection, 0.0)) % self.cycle
        for i, (phase, green) in enumerate(self.splits):
            if c < green:
                return phase
            c -= green
            if c < self.clearance:
                return self.splits[(i + 1) % len(self.splits)][0]
            c -= self.clearance
        return self.splits[0][0]

    def green_window(self, phase: str, intersection: str = "") -> tuple[float, float]:
        """(start, end) of the phase's green inside the local cycle."""
        c = 0.0
        for p, green in self.splits:
            if p == phase:
                return c, c + green
            c += green + self.clearance
        raise SignalStateError(f"phase {phase!r} not in plan")


def fixed_time_decide(state: SignalController, plan: FixedTimePlan, t: float) -> str:
    """Track the plan: request the table phase, holding when locked."""
    target = plan.phase_at(t, state.name)
    valid = state.valid_actions()
    if target in valid:
        return target
    return state.forced_phase()


def webster_plan(critical_volumes: dict[str, float], timing: TimingParams,
                 sat_flow: float = 1900.0, min_cycle: float = 60.0,
                 max_cycle: float = 240.0) -> FixedTimePlan:
    """Webster's method on per-phase critical lane volumes (veh/h/lane).

    Cycle C0 = (1.5 L + 5) / (1 - Y) with L the total lost time (one
    clearance per phase) and Y the sum of flow ratios; effective green is
    apportioned by flow ratio. Splits are clamped to the timing minima.
    """
    clearance = timing.clearance
    order = ["EW_Through", "EW_Left", "NS_Through", "NS_Left"]
    phases = [p for p in order if critical_volumes.get(p, 0.0) > 0]
    if not phases:
        phases = ["EW_Through", "NS_Through"]
        critical_volumes = {p: 1.0 for p in phases}
    ratios = {p: critical_volumes[p] / sat_flow for p in phases}
    y_total = sum(ratios.values())
    lost = clearance * len(phases)
    if y_total >= 0.98:
        cycle = max_cycle
    else:
        cycle = min(max_cycle, max(min_cycle, (1.5 * lost + 5.0) / (1.0 - y_total)))
    effective = cycle - lost
    splits = []
    for p in phases:
        g = effective * ratios[p] / y_total
        splits.append((p, max(g, timing.min_green(p))))
    return FixedTimePlan(splits=splits, clearance=clearance)


def plan_timing(plan: FixedTimePlan, base: TimingParams) -> TimingParams:
    """Timing for a baseline controller: max green pinned to the plan splits
    so plan-following never trips the max-green safety bound."""
    by_phase = dict(plan.splits)
    return TimingParams(
        min_green_through=base.min_green_through,
        min_green_left=base.min_green_left,
        max_green_through=max(by_phase.get(p, base.min_green(p)) for p in
                              ("EW_Through", "NS_Through")),
        max_green_left=max(by_phase.get(p, base.min_green(p)) for p in
                           ("EW_Left", "NS_Left")),
        yellow=base.yellow,
        all_red=base.all_red,
    )


class ActuatedDecider:
    """Coordinated actuated control: gap-out/max-out with skip on no call.

    The coordinated phase (EW_Through) never gaps out; it runs to a
    cycle-anchored force-off and the ring returns to it when the window for
    side phases closes, which yields the corridor progression the fixed
    offset encodes.
    """

    GAP_OUT = 3.0  # s since last passage actuation

    def __init__(self, plan: FixedTimePlan, coordinated: str = "EW_Through"):
        self.plan = plan
        self.coordinated = coordinated
        self.ring = [p for p, _ in plan.splits]
        self.splits = dict(plan.splits)

    def _cycle_pos(self, t: float, intersection: str) -> float:
        return (t - self.plan.offsets.get(intersection, 0.0)) % self.plan.cycle

    def _next_demanded(self, current: str, demand: dict[str, bool],
                       window: float, clearance: float,
                       timing: TimingParams) -> str:
        i = self.ring.index(current)
        for k in range(1, len(self.ring) + 1):
            cand = self.ring[(i + k) % len(self.ring)]
            if cand == self.coordinated:
                return cand  # coordinated recall
            if not demand.get(cand, False):
                continue  # skip on no call
            if window < clearance + timing.min_green(cand) + clearance:
                return self.coordinated  # not enough room before the anchor
            return cand
        return self.coordinated

    def decide(self, state: SignalController, gaps: dict[str, float],
               demand: dict[str, bool], t: float) -> str:
        valid = state.valid_actions()
        if not valid:
            return state.forced_phase()
        phase = state.phase
        cpos = self._cycle_pos(t, state.name)
        window = self.plan.cycle - cpos  # time until the coordinated anchor
        clearance = self.plan.clearance
        timing = state.timing
        if phase == self.coordinated:
            end = self.splits[phase]
            terminate = cpos >= end or state.elapsed_green >= timing.max_green(phase) - _EPS
            if not terminate:
                return phase
            nxt = self._next_demanded(phase, demand, window, clearance, timing)
            if nxt == phase:
                # nothing else to serve; at max green any other phase is legal
                if phase in valid:
                    return phase
                nxt = self.ring[(self.ring.index(phase) + 1) % len(self.ring)]
            return nxt if nxt in valid else state.forced_phase()
        _, end = self.plan.green_window(phase, state.name)
        force_off = cpos >= end
        gap_out = gaps.get(phase, 0.0) > self.GAP_OUT
        max_out = state.elapsed_green >= timing.max_green(phase) - _EPS
        if not (force_off or gap_out or max_out):
            return phase if phase in valid else state.forced_phase()
        nxt = self._next_demanded(phase, demand, window, clearance, timing)
        if nxt == phase or nxt not in valid:
            nxt = self.coordinated
        return nxt if nxt in valid else state.forced_phase()


# --- audits ----------------------------------------------------------------

def audit_signal_events(events: list[SignalEvent], timing: TimingParams,
                        t_end: float) -> list[str]:
    """Check a controller's event log against the safety contract.

    Returns a list of violation descriptions (empty when clean): every
    green->green change passes through yellow then all-red of the configured
    durations, green intervals respect min green, and no green exceeds max
    green by more than one base epoch (1 s) plus a step.
    """
    problems: list[str] = []
    tol = 0.05
    epoch_slack = 1.1
    green_on: float | None = None
    yellow_on: float | None = None
    allred_on: float | None = None
    last_green_phase: str | None = None
    for ev in events:
        key = (ev.indication, ev.event)
        if key == (GREEN, "onset"):
            green_on = ev.t
            last_green_phase = ev.phase
        elif key == (GREEN, "end"):
            if green_on is None:
                problems.append(f"green end without onset at t={ev.t}")
                continue
            dur = ev.t - green_on
            if dur < timing.min_green(ev.phase) - tol:
                problems.append(
                    f"{ev.phase} green {dur:.1f}s < min {timing.min_green(ev.phase)}s at t={ev.t}")
            if dur > timing.max_green(ev.phase) + epoch_slack:
                problems.append(
                    f"{ev.phase} green {dur:.1f}s > max {timing.max_green(ev.phase)}s at t={ev.t}")
            green_on = None
        elif key == (YELLOW, "onset"):
            yellow_on = ev.t
        elif key == (YELLOW, "end"):
            if yellow_on is None or abs((ev.t - yellow_on) - timing.yellow) > tol:
                problems.append(f"yellow duration off at t={ev.t}")
            yellow_on = None
        elif key == (ALL_RED, "onset"):
            allred_on = ev.t
        elif key == (ALL_RED, "end"):
            if allred_on is None or abs((ev.t - allred_on) - timing.all_red) > tol:
                problems.append(f"all-red duration off at t={ev.t}")
            allred_on = None
    if green_on is not None and last_green_phase is not None:
        dur = t_end - green_on
        if dur > timing.max_green(last_green_phase) + epoch_slack:
            problems.append(f"final green exceeds max ({dur:.1f}s)")
    return problems
