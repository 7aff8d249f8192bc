"""Intelligent Driver Model car following.

Replaces the commercial car-following model with a documented, deterministic,
collision-free alternative. Positions are front-bumper feet from the link's
upstream end; integration is explicit Euler at the simulation step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

FREE_ROAD = 1.0e9  # leader front position meaning "nothing ahead"


@dataclass(frozen=True)
class IdmParams:
    desired_speed: float          # ft/s
    max_accel: float = 5.0        # ft/s^2
    comfort_decel: float = 6.5    # ft/s^2
    min_gap: float = 8.0          # ft
    headway_time: float = 1.2     # s
    delta: int = 4                # acceleration exponent

    @property
    def inv_2sqrt_ab(self) -> float:
        return 1.0 / (2.0 * math.sqrt(self.max_accel * self.comfort_decel))

    def stopping_distance(self, speed: float) -> float:
        """Distance needed to stop at comfortable deceleration."""
        return speed * speed / (2.0 * self.comfort_decel)

    def equilibrium_gap(self, speed: float) -> float:
        """Closed-form steady-state gap behind a same-speed leader."""
        s_star = self.min_gap + speed * self.headway_time
        return s_star / math.sqrt(1.0 - (speed / self.desired_speed) ** self.delta)


def idm_accel(speed: float, gap: float, dv: float, p: IdmParams) -> float:
    """Scalar IDM acceleration; ``dv`` is own speed minus leader speed."""
    s_star = p.min_gap + max(0.0, speed * p.headway_time + speed * dv * p.inv_2sqrt_ab)
    return p.max_accel * (
        1.0 - (speed / p.desired_speed) ** p.delta - (s_star / max(gap, 0.1)) ** 2
    )


def idm_step_flat(
    pos: np.ndarray,
    vel: np.ndarray,
    lead_front: np.ndarray,
    lead_len: np.ndarray,
    lead_vel: np.ndarray,
    dt: float,
    p: IdmParams,
) -> tuple[np.ndarray, np.ndarray]:
    """One explicit-Euler step over concatenated lane segments.

    ``lead_*`` describe each vehicle's leader (the vehicle ahead in its lane,
    or the lane-head anchor: a stop-bar stand-in, the downstream lane's tail,
    or FREE_ROAD). Speeds are clipped to [0, desired].
    """
    gap = np.maximum(lead_front - lead_len - pos, 0.1)
    dv = vel - lead_vel
    s_star = p.min_gap + np.maximum(0.0, vel * (p.headway_time + dv * p.inv_2sqrt_ab))
    acc = p.max_accel * (1.0 - (vel / p.desired_speed) ** p.delta - (s_star / gap) ** 2)
    new_vel = np.clip(vel + acc * dt, 0.0, p.desired_speed)
    new_pos = pos + vel * dt
    return new_pos, new_vel
