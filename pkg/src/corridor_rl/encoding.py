"""The PoMDP surface between the simulator and the agents.

Observations: per-lane vehicle counts inside the communication zone, the
local signal column (elapsed seconds of the current indication in the active
phase's row), the adjacent intersection's signal column, and - for priority
agents - bus position/speed cell vectors over the approach zone.

Rewards: general traffic (mean epoch delay with side-street and early-change
penalties plus the coordination bonus), independent priority (bus delay/speed
with the side-street penalty), and coordinated priority (weighted mix).
Decision epochs have variable length: the base 1 s step stretches to the
shortest time until either intersection can next act.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import PHASES, RewardParams, FPS_TO_MPH, BUS_CELL_FT
from .simulation import A, B, EpochAccum, World, queue_length

# fixed lane order for the vehicle-count vector, per intersection
LANE_SLOTS = {
    A: ["EB_entry.0", "EB_entry.1", "EB_entry.2",
        "BA_WB.0", "BA_WB.1", "BA_WB.2",
        "A_NB_entry.0", "A_NB_entry.1", "A_SB_entry.0", "A_SB_entry.1"],
    B: ["AB_EB.0", "AB_EB.1", "AB_EB.2",
        "WB_entry.0", "WB_entry.1", "WB_entry.2",
        "B_NB_entry.0", "B_NB_entry.1", "B_SB_entry.0", "B_SB_entry.1"],
}
ADJACENT = {A: B, B: A}
_IND_CODE = {"green": 0.0, "yellow": 1.0, "all_red": 2.0}


def obs_width(cfg, tsp: bool, indication_channel: bool = False) -> int:
    base = 10 + 4 + 4 + (2 if indication_channel else 0)
    return base + (2 * cfg.bus_cells if tsp else 0)


def veh_state_vector(world: World, x: str) -> np.ndarray:
    """In-zone vehicle count per lane, fixed lane order."""
    comm = world.cfg.comm_range
    out = np.zeros(10)
    for i, key in enumerate(LANE_SLOTS[x]):
        lane = world.lanes[key]
        if lane.veh:
            out[i] = np.count_nonzero(lane.pos >= lane.length - comm)
    return out


def sig_state_column(world: World, x: str) -> np.ndarray:
    """Elapsed seconds of the current indication in the active phase's row."""
    ctrl = world.controllers[x]
    col = np.zeros(4)
    col[PHASES.index(ctrl.phase)] = ctrl.elapsed
    return col


def bus_vectors(world: World, x: str) -> tuple[np.ndarray, np.ndarray]:
    """Bus position (one-hot cell) and speed (mph at that cell) over the
    approach zone, 25 ft cells ordered from zone entry toward the stop bar.
    A bus spanning two cells registers at the downstream one; with more than
    one bus in the zone only the most downstream is encoded."""
    cells = world.cfg.bus_cells
    pos_vec = np.zeros(cells)
    spd_vec = np.zeros(cells)
    bus = world.bus_in_zone(x)
    if bus is not None and bus.lane is not None:
        lane = bus.lane
        idx = lane.veh.index(bus)
        dist = lane.length - float(lane.pos[idx])  # front to stop bar
        cell = int((world.cfg.comm_range - dist) // BUS_CELL_FT)
        cell = min(max(cell, 0), cells - 1)
        pos_vec[cell] = 1.0
        spd_vec[cell] = float(lane.vel[idx]) * FPS_TO_MPH
    return pos_vec, spd_vec


def observe_background(world: World, x: str,
                       indication_channel: bool = False) -> np.ndarray:
    parts = [veh_state_vector(world, x),
             sig_state_column(world, x),
             sig_state_column(world, ADJACENT[x])]
    if indication_channel:
        own = _IND_CODE[world.controllers[x].indication]
        adj = _IND_CODE[world.controllers[ADJACENT[x]].indication]
        parts.append(np.array([own, adj]))
    return np.concatenate(parts)


def observe_tsp(world: World, x: str,
                indication_channel: bool = False) -> np.ndarray:
    pos_vec, spd_vec = bus_vectors(world, x)
    return np.concatenate([observe_background(world, x, indication_channel),
                           pos_vec, spd_vec])


def rl_action_mask(world: World, x: str) -> np.ndarray:
    """Valid-action mask for transitions: the controller's valid set, or the
    committed phase alone while the controller is locked in clearance."""
    ctrl = world.controllers[x]
    valid = ctrl.valid_actions()
    mask = np.zeros(4, dtype=bool)
    if valid:
        for p in valid:
            mask[PHASES.index(p)] = True
    else:
        mask[PHASES.index(ctrl.forced_phase())] = True
    return mask


# --- rewards ----------------------------------------------------------------

@dataclass
class EpochStats:
    """Reward inputs for one intersection over one epoch."""

    mean_delay: float
    side_breach: bool
    phase_change_penalty: bool
    offset_events: int
    bus_delay: float      # seconds accrued this epoch (dwell excluded)
    bus_speed_mph: float  # current speed of the relevant bus, 0 if absent


def epoch_stats(world: World, accum: EpochAccum, x: str,
                params: RewardParams, coordinated: bool = False) -> EpochStats:
    n = accum.vehicles[x]
    mean_delay = accum.delay_sum[x] / n if n > 0 else 0.0
    breach = world.side_queue_breach(x, params.queue_threshold_side)
    if coordinated:
        bus = world.bus_on_approach(x)
        bus_delay = accum.bus_approach_delay[x]
    else:
        bus = world.bus_in_zone(x)
        bus_delay = accum.bus_zone_delay[x]
    bus_speed = world.bus_speed_mph(bus) if bus is not None else 0.0
    return EpochStats(
        mean_delay=mean_delay,
        side_breach=breach,
        phase_change_penalty=accum.phase_change_penalty[x],
        offset_events=accum.offset_events,
        bus_delay=bus_delay,
        bus_speed_mph=bus_speed,
    )


def reward_general(stats: EpochStats, params: RewardParams) -> float:
    """Mean epoch delay with N (side queue), M (early phase change) penalties
    and the P coordination bonus."""
    r = -stats.mean_delay
    if stats.side_breach:
        r -= params.penalty
    if stats.phase_change_penalty:
        r -= params.penalty
    if stats.offset_events:
        r += params.offset_bonus
    return r


def reward_tsp_independent(stats: EpochStats, params: RewardParams) -> float:
    """Bus delay and speed trade-off with the side-street queue penalty."""
    r = -stats.bus_delay + stats.bus_speed_mph
    if stats.side_breach:
        r -= params.penalty
    return r


def reward_tsp_coordinated(stats: EpochStats, params: RewardParams) -> float:
    """General delay plus weighted bus terms; the bus contributes only at the
    intersection whose approach link holds it."""
    r = (-stats.mean_delay
         - params.w_bus_delay * stats.bus_delay
         + params.w_bus_speed * stats.bus_speed_mph)
    if stats.side_breach:
        r -= params.penalty
    return r


def global_reward(r_1: float, r_2: float) -> float:
    return 0.5 * (r_1 + r_2)


def note_phase_change(world: World, x: str, action_phase: str,
                      params: RewardParams) -> None:
    """Record the early-change penalty condition at decision time: changing
    away before max green while the current phase still holds a queue."""
    ctrl = world.controllers[x]
    if action_phase == ctrl.phase or ctrl.indication != "green":
        return
    before_max = ctrl.elapsed < ctrl.timing.max_green(ctrl.phase) - 1e-9
    if before_max and world.phase_queue(x, ctrl.phase) > params.queue_threshold_phase:
        world.epoch.phase_change_penalty[x] = True


# --- decision epochs ---------------------------------------------------------

BASE_EPOCH = 1.0


def next_epoch(world: World) -> float:
    """Seconds until the next joint decision: the base 1 s step, stretched to
    the shortest lock (remaining clearance plus pending min green) when both
    intersections are committed; snapped to the simulation-step grid."""
    locks = [ctrl.lock_time() for ctrl in world.controllers.values()]
    dt = max(BASE_EPOCH, min(locks))
    grid = world.cfg.sim_step
    return round(dt / grid) * grid
