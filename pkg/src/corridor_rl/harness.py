"""Experiment driver: episode engine, training loops, evaluation, persistence.

Training follows the episode-end protocol: transitions are archived at every
decision epoch and replayed as uniform mini-batches once the episode ends;
target networks sync every fixed number of episodes. The same engine runs
the baseline controllers (fixed-time, coordinated actuated) so safety
machinery and metrics are identical across control families.
"""

from __future__ import annotations

import csv
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .config import (ConfigError, ExperimentConfig, PHASES, config_hash)
from .encoding import (epoch_stats, global_reward, next_epoch, note_phase_change,
                       observe_background, observe_tsp, reward_general,
                       reward_tsp_coordinated, reward_tsp_independent,
                       rl_action_mask, obs_width)
from .metrics import (MetricsRow, aggregate_run, mean_of, summarize, write_curve,
                      write_metrics, write_probes)
from .orchestration import BACKGROUND, TSP, TspMode, TspOrchestrator
from .rl import (Adam, AgentNetPair, ReplayBuffer, Transition, epsilon,
                 load_model, masked_argmax, save_model, train_episode_end)
from .rng import RngStreams
from .signals import (ActuatedDecider, FixedTimePlan, fixed_time_decide,
                      plan_timing, webster_plan)
from .simulation import A, B, World

INTERSECTIONS = (A, B)


def critical_lane_volumes(demand: dict[str, float]) -> dict[str, float]:
    """Per-phase critical lane volume (veh/h/lane) for Webster timing."""
    return {
        "EW_Through": max(demand.get("EB_TH", 0.0) / 2,
                          demand.get("A_WB_TH", 0.0) / 2,
                          demand.get("B_WB_TH", 0.0) / 2),
        "EW_Left": max(demand.get(k, 0.0) for k in
                       ("A_EB_LT", "B_EB_LT", "A_WB_LT", "B_WB_LT")),
        "NS_Through": max(demand.get(f"{x}_{s}_TH", 0.0)
                          for x in "AB" for s in ("NB", "SB")),
        "NS_Left": max(demand.get(f"{x}_{s}_LT", 0.0)
                       for x in "AB" for s in ("NB", "SB")),
    }


def baseline_plan(cfg: ExperimentConfig, coordinated: bool) -> FixedTimePlan:
    plan = webster_plan(critical_lane_volumes(cfg.scenario.demand),
                        cfg.scenario.timing)
    if coordinated:
        plan.offsets = {A: 0.0, B: cfg.scenario.base_offset()}
    else:
        plan.offsets = {A: 0.0, B: 0.0}
    return plan


def build_world(cfg: ExperimentConfig, seed: int | None = None,
                detectors: bool = False, timing=None) -> World:
    scenario = cfg.scenario
    if timing is not None:
        import copy
        scenario = copy.deepcopy(scenario)
        scenario.timing = timing
    return World(scenario, offset_spec=cfg.offset_spec(), seed=seed,
                 detectors=detectors)


@dataclass
class EpisodeResult:
    epochs: int = 0
    reward_sum: float = 0.0
    bus_delays: dict[str, list[float]] = field(default_factory=lambda: {A: [], B: []})
    probes: list = field(default_factory=list)
    tsp_events: list = field(default_factory=list)
    hard_stops: int = 0

    @property
    def mean_global_reward(self) -> float:
        return self.reward_sum / self.epochs if self.epochs else 0.0


class RlPolicy:
    """Greedy or epsilon-greedy masked phase selection for one agent family."""

    def __init__(self, pairs: dict[str, AgentNetPair], kind: str,
                 indication_channel: bool = False):
        self.pairs = pairs
        self.kind = kind  # background | tsp
        self.indication_channel = indication_channel

    def observe(self, world: World, x: str) -> np.ndarray:
        if self.kind == TSP:
            return observe_tsp(world, x, self.indication_channel)
        return observe_background(world, x, self.indication_channel)

    def act(self, obs: np.ndarray, mask: np.ndarray, x: str,
            eps: float = 0.0, rng: np.random.Generator | None = None) -> int:
        if eps > 0.0 and rng is not None and rng.random() < eps:
            valid = np.flatnonzero(mask)
            return int(valid[rng.integers(0, len(valid))])
        return masked_argmax(self.pairs[x].main.forward(obs), mask)


class BaselinePolicy:
    def __init__(self, plan: FixedTimePlan, actuated: bool):
        self.plan = plan
        self.decider = ActuatedDecider(plan) if actuated else None

    def decide(self, world: World, x: str, t: float) -> str:
        ctrl = world.controllers[x]
        if self.decider is not None:
            return self.decider.decide(ctrl, world.detector_gaps(x, t),
                                       world.detector_demand(x), t)
        return fixed_time_decide(ctrl, self.plan, t)


def run_episode(world: World, cfg: ExperimentConfig, length: float,
                background: RlPolicy | None = None,
                tsp_policy: RlPolicy | None = None,
                tsp_mode: TspMode = TspMode.OFF,
                baseline: BaselinePolicy | None = None,
                train: str | None = None,
                eps: float = 0.0,
                explore_rng: np.random.Generator | None = None,
                vdn_buffer: ReplayBuffer | None = None,
                agent_buffers: dict[str, ReplayBuffer] | None = None,
                trace_writer=None) -> EpisodeResult:
    """Drive one episode at variable-length decision epochs.

    ``train`` is one of None, "background", "tsp-independent",
    "tsp-coordinated"; rewards and transitions are only assembled when
    training or tracing asks for them.
    """
    params = cfg.reward
    orch = TspOrchestrator(tsp_mode, world)
    result = EpisodeResult()
    need_rewards = train is not None or trace_writer is not None
    pending_joint = None       # (obs_pair, mask_pair?, actions) for VDN families
    pending_agent: dict[str, tuple] = {}
    t = 0.0
    grid = world.cfg.sim_step

    def family_policy(route: str) -> RlPolicy | None:
        return tsp_policy if route == TSP else background

    while True:
        accum = world.take_epoch()
        routes = {x: orch.route(x) for x in INTERSECTIONS}
        masks = {x: rl_action_mask(world, x) for x in INTERSECTIONS}
        at_end = t >= length - 1e-9

        rewards = {}
        if need_rewards:
            if train == "tsp-independent":
                for x in INTERSECTIONS:
                    st = epoch_stats(world, accum, x, params, coordinated=False)
                    rewards[x] = reward_tsp_independent(st, params)
            elif train == "tsp-coordinated":
                for x in INTERSECTIONS:
                    st = epoch_stats(world, accum, x, params, coordinated=True)
                    rewards[x] = reward_tsp_coordinated(st, params)
            else:
                for x in INTERSECTIONS:
                    st = epoch_stats(world, accum, x, params)
                    rewards[x] = reward_general(st, params)
            result.reward_sum += global_reward(rewards[A], rewards[B])
            result.epochs += 1

        # close open transitions against the state at this boundary
        if pending_joint is not None:
            obs_pair, actions = pending_joint
            policy = background if train == "background" else tsp_policy
            next_obs = tuple(policy.observe(world, x) for x in INTERSECTIONS)
            now_active = train != "tsp-coordinated" or all(
                routes[x] == TSP for x in INTERSECTIONS)
            terminal = at_end or not now_active
            vdn_buffer.push(Transition(
                obs_pair, actions, global_reward(rewards[A], rewards[B]),
                next_obs, (masks[A], masks[B]), terminal, 0.0))
            pending_joint = None
        for x in list(pending_agent):
            obs_x, act_x = pending_agent.pop(x)
            terminal = at_end or routes[x] != TSP
            agent_buffers[x].push(Transition(
                (obs_x,), (act_x,), rewards[x],
                (tsp_policy.observe(world, x),), (masks[x],), terminal, 0.0))

        if at_end:
            break

        # decide and apply
        actions: dict[str, int] = {}
        obs_cache: dict[str, np.ndarray] = {}
        for x in INTERSECTIONS:
            ctrl = world.controllers[x]
            valid = ctrl.valid_actions()
            route = routes[x]
            if baseline is not None:
                if valid:
                    phase = baseline.decide(world, x, t)
                    note_phase_change(world, x, phase, params)
                    ctrl.apply(phase, t)
                continue
            policy = family_policy(route)
            obs = policy.observe(world, x)
            obs_cache[x] = obs
            training_family = (
                (train == "background" and route == BACKGROUND)
                or (train in ("tsp-independent", "tsp-coordinated") and route == TSP))
            a = policy.act(obs, masks[x], x,
                           eps=eps if training_family else 0.0,
                           rng=explore_rng)
            actions[x] = a
            phase = PHASES[a]
            if valid:
                note_phase_change(world, x, phase, params)
                ctrl.apply(phase, t)

        # open transitions for the training family
        if train == "background":
            pending_joint = ((obs_cache[A], obs_cache[B]), (actions[A], actions[B]))
        elif train == "tsp-coordinated" and all(routes[x] == TSP for x in INTERSECTIONS):
            pending_joint = ((obs_cache[A], obs_cache[B]), (actions[A], actions[B]))
        elif train == "tsp-independent":
            for x in INTERSECTIONS:
                if routes[x] == TSP:
                    pending_agent[x] = (obs_cache[x], actions[x])

        dt = min(next_epoch(world), round((length - t) / grid) * grid)
        dt = max(dt, grid)
        if trace_writer is not None:
            trace_writer.writerow([
                f"{t:.1f}", f"{dt:.1f}",
                actions.get(A, -1), actions.get(B, -1),
                f"{rewards.get(A, 0.0):.4f}", f"{rewards.get(B, 0.0):.4f}",
                f"{global_reward(rewards.get(A, 0.0), rewards.get(B, 0.0)):.4f}",
                int(world.epoch.phase_change_penalty[A]),
                int(world.epoch.phase_change_penalty[B]),
            ])
        world.run_steps(int(round(dt / grid)))
        t = world.t

    world.finalize(length)
    result.probes = world.probes
    result.tsp_events = orch.events
    result.hard_stops = world.hard_stops
    for kind, section, entity, value, tt in world.probes:
        if kind == "bus_delay":
            result.bus_delays[section].append(value)
    return result


# --- training loops ----------------------------------------------------------

def _net_widths(cfg: ExperimentConfig, tsp: bool) -> list[int]:
    w_in = obs_width(cfg.scenario, tsp, cfg.reward.indication_channel)
    return [w_in, *cfg.rl.hidden, 4]


class BackgroundTrainer:
    """Incremental joint training of the two general-traffic agents; episodes
    can be run in segments (checkpointing) without changing the result."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        streams = RngStreams(cfg.scenario.seed)
        init_rng = streams["net_init"]
        widths = _net_widths(cfg, tsp=False)
        self.pairs = {x: AgentNetPair(widths, init_rng, role=f"background_{x}")
                      for x in INTERSECTIONS}
        self.optims = {x: Adam(self.pairs[x].main.parameters(),
                               lr=cfg.rl.learning_rate) for x in INTERSECTIONS}
        self.buffer = ReplayBuffer(cfg.rl.buffer_capacity)
        self.policy = RlPolicy(self.pairs, BACKGROUND,
                               cfg.reward.indication_channel)
        self.explore = streams["exploration"]
        self.replay_rng = streams["replay"]
        self.episode = 0
        self.curve: list[tuple] = []

    def run_episode(self) -> tuple[float, float | None]:
        cfg = self.cfg
        world = build_world(cfg, seed=cfg.scenario.seed)
        eps = epsilon(self.episode, cfg.rl.epsilon_decay, cfg.rl.epsilon_floor)
        res = run_episode(world, cfg, cfg.episode_length, background=self.policy,
                          train="background", eps=eps, explore_rng=self.explore,
                          vdn_buffer=self.buffer)
        loss = train_episode_end(self.buffer, [self.pairs[A], self.pairs[B]],
                                 [self.optims[A], self.optims[B]],
                                 self.replay_rng, cfg.rl.updates_per_episode,
                                 cfg.rl.batch_size, cfg.rl.gamma)
        self.episode += 1
        for x in INTERSECTIONS:
            self.pairs[x].episodes_trained = self.episode
            self.pairs[x].sync_target(self.episode, cfg.rl.target_sync_episodes)
        self.curve.append((self.episode - 1, res.mean_global_reward,
                           loss if loss is not None else float("nan")))
        return res.mean_global_reward, loss

    def save(self, out_dir: str) -> None:
        os.makedirs(out_dir, exist_ok=True)
        write_curve(os.path.join(out_dir, "learning_curve.csv"),
                    ["episode", "mean_global_reward", "loss"], self.curve)
        h = config_hash(self.cfg)
        for x in INTERSECTIONS:
            save_model(self.pairs[x],
                       os.path.join(out_dir, f"background_{x}.json"), h)


def train_background(cfg: ExperimentConfig, out_dir: str,
                     progress=None) -> dict[str, AgentNetPair]:
    """Train the two general-traffic agents jointly; writes models plus the
    learning-curve CSV."""
    trainer = BackgroundTrainer(cfg)
    for ep in range(cfg.episodes):
        reward, loss = trainer.run_episode()
        if progress:
            progress(ep, reward, loss)
    trainer.save(out_dir)
    return trainer.pairs


def load_background(cfg: ExperimentConfig, model_dir: str
                    ) -> tuple[dict[str, AgentNetPair], list[str]]:
    pairs = {}
    warnings = []
    h = config_hash(cfg)
    for x in INTERSECTIONS:
        path = os.path.join(model_dir, f"background_{x}.json")
        if not os.path.exists(path):
            raise ConfigError(f"missing background model {path}")
        pairs[x], stored = load_model(path)
        if stored and stored != h:
            warnings.append(f"config hash mismatch for {path}: "
                            f"model={stored} config={h}")
    return pairs, warnings


def load_tsp(cfg: ExperimentConfig, model_dir: str, mode: str
             ) -> tuple[dict[str, AgentNetPair], list[str]]:
    pairs = {}
    warnings = []
    h = config_hash(cfg)
    for x in INTERSECTIONS:
        path = os.path.join(model_dir, f"tsp_{mode}_{x}.json")
        if not os.path.exists(path):
            raise ConfigError(f"missing TSP model {path}")
        pairs[x], stored = load_model(path)
        if stored and stored != h:
            warnings.append(f"config hash mismatch for {path}: "
                            f"model={stored} config={h}")
    return pairs, warnings


def train_tsp(cfg: ExperimentConfig, background_dir: str, out_dir: str,
              mode: str, progress=None) -> dict[str, AgentNetPair]:
    """Train priority agents on top of frozen background agents.

    Independent: per-agent buffers, local rewards, single-agent double-Q
    updates. Coordinated: joint buffer, local rewards averaged into the
    global reward, joint (summed-value) updates.
    """
    if mode not in ("independent", "coordinated"):
        raise ConfigError(f"unknown tsp mode {mode!r}")
    os.makedirs(out_dir, exist_ok=True)
    bg_pairs, _ = load_background(cfg, background_dir)
    bg_policy = RlPolicy(bg_pairs, BACKGROUND, cfg.reward.indication_channel)
    streams = RngStreams(cfg.scenario.seed + 7)
    widths = _net_widths(cfg, tsp=True)
    pairs = {x: AgentNetPair(widths, streams["net_init"], role=f"tsp_{mode}_{x}")
             for x in INTERSECTIONS}
    optims = {x: Adam(pairs[x].main.parameters(), lr=cfg.rl.learning_rate)
              for x in INTERSECTIONS}
    policy = RlPolicy(pairs, TSP, cfg.reward.indication_channel)
    explore = streams["exploration"]
    replay_rng = streams["replay"]
    tsp_mode = TspMode.INDEPENDENT if mode == "independent" else TspMode.COORDINATED
    train_tag = f"tsp-{mode}"
    if mode == "independent":
        buffers = {x: ReplayBuffer(cfg.rl.buffer_capacity) for x in INTERSECTIONS}
        vdn_buffer = None
    else:
        buffers = None
        vdn_buffer = ReplayBuffer(cfg.rl.buffer_capacity)
    curve: list[tuple] = []
    for ep in range(cfg.episodes):
        world = build_world(cfg, seed=cfg.scenario.seed)
        eps = epsilon(ep, cfg.rl.epsilon_decay, cfg.rl.epsilon_floor)
        res = run_episode(world, cfg, cfg.episode_length, background=bg_policy,
                          tsp_policy=policy, tsp_mode=tsp_mode, train=train_tag,
                          eps=eps, explore_rng=explore, vdn_buffer=vdn_buffer,
                          agent_buffers=buffers)
        if mode == "independent":
            for x in INTERSECTIONS:
                train_episode_end(buffers[x], [pairs[x]], [optims[x]], replay_rng,
                                  cfg.rl.updates_per_episode, cfg.rl.batch_size,
                                  cfg.rl.gamma)
        else:
            train_episode_end(vdn_buffer, [pairs[A], pairs[B]],
                              [optims[A], optims[B]], replay_rng,
                              cfg.rl.updates_per_episode, cfg.rl.batch_size,
                              cfg.rl.gamma)
        for x in INTERSECTIONS:
            pairs[x].episodes_trained = ep + 1
            pairs[x].sync_target(ep + 1, cfg.rl.target_sync_episodes)
        mean_a = float(np.mean(res.bus_delays[A])) if res.bus_delays[A] else float("nan")
        mean_b = float(np.mean(res.bus_delays[B])) if res.bus_delays[B] else float("nan")
        curve.append((ep, mean_a, mean_b))
        if progress:
            progress(ep, mean_a, mean_b)
    write_curve(os.path.join(out_dir, f"tsp_{mode}_bus_delay.csv"),
                ["episode", "mean_bus_delay_A", "mean_bus_delay_B"], curve)
    h = config_hash(cfg)
    for x in INTERSECTIONS:
        save_model(pairs[x], os.path.join(out_dir, f"tsp_{mode}_{x}.json"), h)
    return pairs


# --- evaluation ---------------------------------------------------------------

def _run_replicate(args):
    (cfg, idx, seed, run_id, trace_dir) = args
    baseline = None
    background = None
    tsp_policy = None
    tsp_mode = TspMode(cfg.tsp)
    detectors = cfg.baseline == "actuated"
    timing = None
    if cfg.baseline in ("fixed", "actuated"):
        plan = baseline_plan(cfg, coordinated=(cfg.baseline == "actuated"))
        timing = plan_timing(plan, cfg.scenario.timing)
        baseline = BaselinePolicy(plan, actuated=(cfg.baseline == "actuated"))
    else:
        bg_pairs, warnings = load_background(cfg, cfg.model_dir)
        background = RlPolicy(bg_pairs, BACKGROUND, cfg.reward.indication_channel)
        if cfg.tsp != "off":
            tsp_pairs, w2 = load_tsp(cfg, cfg.model_dir, cfg.tsp)
            tsp_policy = RlPolicy(tsp_pairs, TSP, cfg.reward.indication_channel)
    world = build_world(cfg, seed=seed, detectors=detectors, timing=timing)
    trace_writer = None
    trace_fh = None
    if trace_dir:
        trace_fh = open(os.path.join(trace_dir, f"trace_{run_id}.csv"), "w",
                        newline="", encoding="utf-8")
        trace_writer = csv.writer(trace_fh)
        trace_writer.writerow(["t", "dt", "action_A", "action_B", "r_A", "r_B",
                               "R", "penalty_A", "penalty_B"])
    res = run_episode(world, cfg, cfg.episode_length, background=background,
                      tsp_policy=tsp_policy, tsp_mode=tsp_mode,
                      baseline=baseline, trace_writer=trace_writer)
    if trace_fh:
        trace_fh.close()
    signal_events = [ev for x in INTERSECTIONS for ev in world.controllers[x].events]
    signal_events.sort(key=lambda e: (e.t, e.intersection))
    return (idx, seed, run_id, res.probes, signal_events, res.tsp_events,
            res.hard_stops)


def evaluate(cfg: ExperimentConfig, out_dir: str, workers: int = 1,
             trace: bool = False) -> list[MetricsRow]:
    """Greedy evaluation over seeded replicates; emits probes.csv,
    metrics.csv, summary.csv, and run metadata."""
    os.makedirs(out_dir, exist_ok=True)
    t0 = time.time()
    model_warnings: list[str] = []
    if cfg.baseline == "marl":
        _, model_warnings = load_background(cfg, cfg.model_dir)
        if cfg.tsp != "off":
            _, w2 = load_tsp(cfg, cfg.model_dir, cfg.tsp)
            model_warnings += w2
    jobs = []
    for i, seed in enumerate(cfg.seeds):
        run_id = f"{cfg.baseline}-{cfg.tsp}-r{i:02d}"
        jobs.append((cfg, i, seed, run_id, out_dir if trace else None))
    if workers > 1:
        import multiprocessing as mp
        with mp.Pool(workers) as pool:
            results = pool.map(_run_replicate, jobs)
        results.sort(key=lambda r: r[0])
    else:
        results = [_run_replicate(j) for j in jobs]
    probe_runs = [(run_id, seed, probes)
                  for _, seed, run_id, probes, _, _, _ in results]
    write_probes(os.path.join(out_dir, "probes.csv"), probe_runs)
    with open(os.path.join(out_dir, "signals.csv"), "w", newline="",
              encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["run_id", "t", "intersection", "phase", "indication", "event"])
        for _, _, run_id, _, sig_events, _, _ in results:
            for ev in sig_events:
                w.writerow([run_id, f"{ev.t:.1f}", ev.intersection, ev.phase,
                            ev.indication, ev.event])
    with open(os.path.join(out_dir, "tsp_events.csv"), "w", newline="",
              encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["run_id", "t", "bus_id", "intersection", "event"])
        for _, _, run_id, _, _, tsp_events, _ in results:
            for ev in tsp_events:
                w.writerow([run_id, f"{ev.t:.1f}", ev.bus_id, ev.intersection,
                            ev.event])
    rows: list[MetricsRow] = []
    for _, seed, run_id, probes, _, _, _ in results:
        rows += aggregate_run(run_id, seed, probes, cfg.scenario, cfg.warmup)
    write_metrics(os.path.join(out_dir, "metrics.csv"), rows)
    write_metrics(os.path.join(out_dir, "summary.csv"), summarize(rows))
    meta = {
        "config_hash": config_hash(cfg),
        "baseline": cfg.baseline,
        "tsp": cfg.tsp,
        "seeds": cfg.seeds,
        "warnings": model_warnings,
        "versions": {"corridor_rl": __version__, "numpy": np.__version__},
        "wall_time_s": round(time.time() - t0, 3),
        "hard_stops": sum(r[6] for r in results),
    }
    with open(os.path.join(out_dir, "run_metadata.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2)
    return rows


def tsp_comparison(rows_off: list[MetricsRow], rows_on: list[MetricsRow]) -> dict:
    """Percent change in mean corridor bus travel time plus the side-street
    delay deltas inside the 300 s post-check-in window."""
    off_tt = mean_of(rows_off, "BUS", "Inter A&B_EB")
    on_tt = mean_of(rows_on, "BUS", "Inter A&B_EB")
    out = {"bus_tt_off": off_tt, "bus_tt_on": on_tt, "pct_change": None,
           "side_street": {}}
    if off_tt and on_tt:
        out["pct_change"] = 100.0 * (on_tt - off_tt) / off_tt
    from .metrics import SIDE_MOVEMENTS
    for movement in SIDE_MOVEMENTS:
        x = movement.split("_", 1)[0]
        d_off = mean_of(rows_off, movement, x, "checkin300")
        d_on = mean_of(rows_on, movement, x, "checkin300")
        if d_off is not None and d_on is not None:
            out["side_street"][movement] = {"off": d_off, "on": d_on,
                                            "delta": d_on - d_off}
    return out
