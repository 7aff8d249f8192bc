"""Event-based control handoff between background and priority agents.

A bus checks in when its front first comes within communication range of an
intersection's stop bar and checks out when its rear clears that stop bar.
Independent mode activates an intersection's priority agent only while a bus
occupies that intersection's zone; coordinated mode activates both agents from
check-in at the upstream intersection (A) until check-out at the downstream
one (B). Handoffs take effect at decision epochs, never inside a clearance
interval.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .simulation import A, B, World


class TspMode(Enum):
    OFF = "off"
    INDEPENDENT = "independent"
    COORDINATED = "coordinated"


BACKGROUND = "background"
TSP = "tsp"


@dataclass
class TspEvent:
    t: float
    bus_id: int
    intersection: str
    event: str  # checkin | checkout | activate | deactivate


class TspOrchestrator:
    """Tracks zone occupancy per intersection and the coordinated pair window.

    Registers as a world step observer; detection is pure measurement, so it
    also runs with priority control off (check-in timestamps anchor metrics).
    """

    def __init__(self, mode: TspMode, world: World):
        self.mode = mode
        self.zone: dict[str, set[int]] = {A: set(), B: set()}
        self.pair_buses: set[int] = set()
        self.events: list[TspEvent] = []
        self._seen_checkin: set[tuple[int, str]] = set()
        self._seen_checkout: set[tuple[int, str]] = set()
        world.step_observers.append(self.on_step)

    def on_step(self, world: World, t: float) -> None:
        for bus in world.buses:
            for x in (A, B):
                key = (bus.vid, x)
                if x in bus.checkin_times and key not in self._seen_checkin:
                    self._seen_checkin.add(key)
                    self.zone[x].add(bus.vid)
                    self.events.append(TspEvent(t, bus.vid, x, "checkin"))
                    if x == A:
                        was_active = bool(self.pair_buses)
                        self.pair_buses.add(bus.vid)
                        if not was_active and self.mode is TspMode.COORDINATED:
                            self.events.append(TspEvent(t, bus.vid, x, "activate"))
                if bus.checkout_done.get(x, False) and key not in self._seen_checkout:
                    self._seen_checkout.add(key)
                    self.zone[x].discard(bus.vid)
                    self.events.append(TspEvent(t, bus.vid, x, "checkout"))
                    if x == B:
                        self.pair_buses.discard(bus.vid)
                        if not self.pair_buses and self.mode is TspMode.COORDINATED:
                            self.events.append(TspEvent(t, bus.vid, x, "deactivate"))
            # a bus that exits without reaching B leaves the pair window
            if bus.lane is None:
                self.pair_buses.discard(bus.vid)

    def pair_active(self) -> bool:
        return bool(self.pair_buses)

    def route(self, x: str) -> str:
        """Which controller family decides intersection ``x`` this epoch."""
        if self.mode is TspMode.OFF:
            return BACKGROUND
        if self.mode is TspMode.INDEPENDENT:
            return TSP if self.zone[x] else BACKGROUND
        return TSP if self.pair_buses else BACKGROUND
