import numpy as np
import pytest

from corridor_rl.idm import FREE_ROAD, IdmParams, idm_accel, idm_step_flat

P = IdmParams(desired_speed=58.6667)


def drive(p, steps, dt=0.1, v0=0.0, leader=None):
    """Scalar reference integration for a single follower.

    ``leader`` is None (free road) or a (front_pos, length, speed) callable
    of time; returns position/speed history.
    """
    pos, vel = 0.0, v0
    hist = []
    for k in range(steps):
        if leader is None:
            lf, ll, lv = FREE_ROAD, 0.0, p.desired_speed
        else:
            lf, ll, lv = leader(k * dt)
        acc = idm_accel(vel, lf - ll - pos, vel - lv, p)
        new_pos = pos + vel * dt
        vel = min(max(vel + acc * dt, 0.0), p.desired_speed)
        pos = new_pos
        hist.append((pos, vel))
    return hist


def test_free_flow_reaches_desired_speed():
    hist = drive(P, steps=600)
    assert hist[-1][1] == pytest.approx(P.desired_speed, abs=0.05)


def test_standing_at_red_stays_put():
    # a standing obstacle just ahead: zero speed, zero movement
    leader = lambda t: (P.min_gap, 0.0, 0.0)
    hist = drive(P, steps=100, v0=0.0, leader=leader)
    assert hist[-1][0] == pytest.approx(0.0, abs=1e-9)
    assert hist[-1][1] == 0.0


def test_platoon_equilibrium_matches_closed_form():
    # leader pinned at constant 30 ft/s; follower settles at the closed-form
    # equilibrium gap, which approximates min_gap + headway * speed
    v_lead = 30.0
    leader = lambda t: (500.0 + v_lead * t, 15.0, v_lead)
    hist = drive(P, steps=3000, v0=v_lead, leader=leader)
    t_end = 3000 * 0.1
    gap = (500.0 + v_lead * t_end) - 15.0 - hist[-1][0]
    expected = P.equilibrium_gap(v_lead)
    assert gap == pytest.approx(expected, rel=0.02)
    assert expected == pytest.approx(P.min_gap + P.headway_time * v_lead, rel=0.05)


def test_follower_start_is_delayed_from_standstill():
    dt = 0.1
    pos_l, vel_l = 23.0, 0.0  # leader 8 ft gap ahead of follower front at 0
    pos_f, vel_f = 0.0, 0.0
    started_at = None
    for k in range(200):
        acc_l = idm_accel(vel_l, FREE_ROAD, 0.0, P)
        acc_f = idm_accel(vel_f, pos_l - 15.0 - pos_f, vel_f - vel_l, P)
        pos_l += vel_l * dt
        pos_f += vel_f * dt
        vel_l = min(vel_l + acc_l * dt, P.desired_speed)
        vel_f = min(max(vel_f + acc_f * dt, 0.0), P.desired_speed)
        if started_at is None and vel_f > 1.0:
            started_at = k * dt
    assert started_at is not None and started_at > 0.2  # not instantaneous


def test_flat_kernel_matches_scalar_reference():
    rng = np.random.default_rng(7)
    n = 12
    pos = np.sort(rng.uniform(0, 1000, n))[::-1].copy()
    pos[0] += 100
    vel = rng.uniform(0, 55, n)
    lens = np.full(n, 15.0)
    lead_front = np.empty(n)
    lead_len = np.empty(n)
    lead_vel = np.empty(n)
    lead_front[0], lead_len[0], lead_vel[0] = FREE_ROAD, 0.0, P.desired_speed
    lead_front[1:], lead_len[1:], lead_vel[1:] = pos[:-1], lens[:-1], vel[:-1]
    new_pos, new_vel = idm_step_flat(pos, vel, lead_front, lead_len, lead_vel, 0.1, P)
    for i in range(n):
        gap = lead_front[i] - lead_len[i] - pos[i]
        acc = idm_accel(vel[i], gap, vel[i] - lead_vel[i], P)
        assert new_pos[i] == pytest.approx(pos[i] + vel[i] * 0.1, abs=1e-12)
        expect_v = min(max(vel[i] + acc * 0.1, 0.0), P.desired_speed)
        assert new_vel[i] == pytest.approx(expect_v, abs=1e-9)


def test_stopping_distance():
    assert P.stopping_distance(58.6667) == pytest.approx(58.6667**2 / 13.0, rel=1e-9)
