"""Shared builders for the heavy acceptance artifacts (trained agents,
evaluation runs), cached under tests/_artifacts keyed by experiment hash.
Training is deterministic, so cached results equal fresh ones."""

import json
import os
import time

from corridor_rl.config import ExperimentConfig, config_hash
from corridor_rl.harness import evaluate, train_background, train_tsp
from corridor_rl.metrics import read_metrics

ART = os.path.join(os.path.dirname(__file__), "_artifacts")


def bg_train_config() -> ExperimentConfig:
    cfg = ExperimentConfig()
    cfg.mode = "background-train"
    cfg.episodes = 200
    cfg.episode_length = 1800.0  # 30-minute episodes
    return cfg


def tsp_train_config(mode: str) -> ExperimentConfig:
    cfg = ExperimentConfig()
    cfg.mode = f"tsp-{mode}-train"
    cfg.episodes = 200 if mode == "coordinated" else 100
    cfg.episode_length = 3600.0  # 1-hour episodes
    return cfg


def eval_config(baseline: str, tsp: str, model_dir: str | None) -> ExperimentConfig:
    cfg = ExperimentConfig()
    cfg.mode = "evaluate"
    cfg.baseline = baseline
    cfg.tsp = tsp
    cfg.episode_length = 3600.0
    cfg.warmup = 900.0
    cfg.replicates = 10
    cfg.seeds = list(range(101, 111))
    cfg.model_dir = model_dir
    return cfg


def cache_dir(tag: str, cfg: ExperimentConfig) -> str:
    return os.path.join(ART, f"{tag}-{config_hash(cfg)}-e{cfg.episodes}")


def ensure_background() -> tuple[str, float]:
    """Train (or reuse) the 200-episode background agents; returns
    (model dir, training wall seconds)."""
    cfg = bg_train_config()
    out = cache_dir("bg", cfg)
    meta = os.path.join(out, "train_meta.json")
    if not os.path.exists(meta):
        t0 = time.time()
        train_background(cfg, out)
        with open(meta, "w", encoding="utf-8") as fh:
            json.dump({"elapsed_s": time.time() - t0}, fh)
    return out, json.load(open(meta))["elapsed_s"]


def ensure_tsp(mode: str) -> str:
    """Train (or reuse) TSP agents for one mode into the background dir."""
    bg_dir, _ = ensure_background()
    marker = os.path.join(bg_dir, f"tsp_{mode}_meta.json")
    if not os.path.exists(marker):
        cfg = tsp_train_config(mode)
        t0 = time.time()
        train_tsp(cfg, bg_dir, bg_dir, mode)
        with open(marker, "w", encoding="utf-8") as fh:
            json.dump({"elapsed_s": time.time() - t0}, fh)
    return bg_dir


def ensure_eval(tag: str, cfg: ExperimentConfig):
    out = cache_dir(f"eval-{tag}", cfg)
    path = os.path.join(out, "metrics.csv")
    if not os.path.exists(path):
        evaluate(cfg, out)
    return out, read_metrics(path)
