"""From-scratch learning machinery: MLP with exact backprop, Adam, replay,
double-DQN targets with invalid-action masking, and the joint-value (VDN)
training step where the joint Q is the sum of per-agent chosen-action values.

Everything is float64 numpy so the finite-difference gradient checks in the
test suite are meaningful.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np

# Invalid actions are replaced by a large negative number before the argmax.
# -inf (the limit of that idea) keeps selection sound even if a legal action's
# value dips below any finite fill.
MASK_FILL = -np.inf
DEBUG_CHECKS = True  # structural assertions on every training batch


class TrainingDiverged(RuntimeError):
    """Loss became non-finite."""


class Mlp:
    """Fully connected net: ReLU hidden layers, identity output."""

    def __init__(self, widths: list[int], rng: np.random.Generator):
        self.widths = list(widths)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            scale = math.sqrt(2.0 / fan_in)  # He init for ReLU
            self.weights.append(rng.normal(0.0, scale, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Q-values for a single observation (d,) or a batch (B, d)."""
        single = x.ndim == 1
        h = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if h.shape[1] != self.widths[0]:
            raise ValueError(f"observation width {h.shape[1]} != {self.widths[0]}")
        for i in range(self.n_layers):
            h = h @ self.weights[i] + self.biases[i]
            if i < self.n_layers - 1:
                h = np.maximum(h, 0.0)
        return h[0] if single else h

    def forward_cached(self, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Batch forward keeping post-activation values for backprop."""
        h = np.asarray(x, dtype=np.float64)
        acts = [h]
        for i in range(self.n_layers):
            h = h @ self.weights[i] + self.biases[i]
            if i < self.n_layers - 1:
                h = np.maximum(h, 0.0)
            acts.append(h)
        return h, acts

    def backward(self, acts: list[np.ndarray], grad_out: np.ndarray
                 ) -> list[tuple[np.ndarray, np.ndarray]]:
        """Exact reverse-mode gradients of forward w.r.t. weights and biases."""
        grads: list[tuple[np.ndarray, np.ndarray]] = [None] * self.n_layers  # type: ignore
        g = np.asarray(grad_out, dtype=np.float64)
        for i in range(self.n_layers - 1, -1, -1):
            a_in = acts[i]
            grads[i] = (a_in.T @ g, g.sum(axis=0))
            if i > 0:
                g = g @ self.weights[i].T
                g = g * (acts[i] > 0.0)  # dead ReLU units pass no gradient
        return grads

    def copy_from(self, other: "Mlp") -> None:
        for i in range(self.n_layers):
            self.weights[i][...] = other.weights[i]
            self.biases[i][...] = other.biases[i]

    def clone(self) -> "Mlp":
        dup = Mlp.__new__(Mlp)
        dup.widths = list(self.widths)
        dup.weights = [w.copy() for w in self.weights]
        dup.biases = [b.copy() for b in self.biases]
        return dup

    def check_finite(self) -> None:
        for p in self.parameters():
            if not np.all(np.isfinite(p)):
                raise TrainingDiverged("non-finite network parameters")


class Adam:
    """Standard bias-corrected Adam over a list of parameter arrays."""

    def __init__(self, params: list[np.ndarray], lr: float = 0.01,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


def epsilon(episode: int, decay: float = 0.01, floor: float = 0.01) -> float:
    """Exploration probability: exponential decay with a floor."""
    return max(floor, math.exp(-decay * episode))


def masked_argmax(q: np.ndarray, mask: np.ndarray) -> int:
    """Greedy action over valid entries; invalid Q replaced by a large
    negative number. Ties break to the lowest index."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("masked_argmax requires at least one valid action")
    return int(np.argmax(np.where(mask, q, MASK_FILL)))


def masked_argmax_batch(q: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return np.argmax(np.where(mask, q, MASK_FILL), axis=1)


@dataclass
class Transition:
    obs: tuple[np.ndarray, ...]        # per-agent local observations
    actions: tuple[int, ...]
    reward: float                      # global (or local, single-agent) reward
    next_obs: tuple[np.ndarray, ...]
    next_masks: tuple[np.ndarray, ...]
    terminal: bool
    dt: float                          # decision-epoch duration


class ReplayBuffer:
    """FIFO ring buffer with uniform sampling."""

    def __init__(self, capacity: int = 20000):
        self.capacity = capacity
        self._data: list[Transition] = []
        self._head = 0

    def __len__(self) -> int:
        return len(self._data)

    def push(self, tr: Transition) -> None:
        if len(self._data) < self.capacity:
            self._data.append(tr)
        else:
            self._data[self._head] = tr
            self._head = (self._head + 1) % self.capacity

    def snapshot(self) -> list[Transition]:
        """Contents oldest-first (for inspection/tests)."""
        return self._data[self._head:] + self._data[:self._head]

    def sample(self, rng: np.random.Generator, batch_size: int) -> list[Transition]:
        idx = rng.integers(0, len(self._data), size=batch_size)
        return [self._data[i] for i in idx]


class AgentNetPair:
    """Main network plus a periodically synced target copy."""

    def __init__(self, widths: list[int], rng: np.random.Generator, role: str = ""):
        self.main = Mlp(widths, rng)
        self.target = self.main.clone()
        self.role = role
        self.episodes_trained = 0
        self.last_sync_episode = 0

    def sync_target(self, episode: int, every: int = 50) -> bool:
        """Copy main into target every ``every`` completed episodes."""
        if episode > 0 and episode % every == 0 and episode != self.last_sync_episode:
            self.target.copy_from(self.main)
            self.last_sync_episode = episode
            return True
        return False


def _stack_batch(batch: list[Transition], n_agents: int):
    obs = [np.stack([tr.obs[i] for tr in batch]) for i in range(n_agents)]
    nxt = [np.stack([tr.next_obs[i] for tr in batch]) for i in range(n_agents)]
    masks = [np.stack([tr.next_masks[i] for tr in batch]) for i in range(n_agents)]
    actions = [np.array([tr.actions[i] for tr in batch]) for i in range(n_agents)]
    rewards = np.array([tr.reward for tr in batch])
    terminal = np.array([tr.terminal for tr in batch], dtype=bool)
    return obs, actions, rewards, nxt, masks, terminal


def ddqn_targets(batch: list[Transition], pairs: list[AgentNetPair],
                 gamma: float = 0.99) -> np.ndarray:
    """Double-Q targets: actions chosen by the main nets, evaluated by the
    target nets, summed over agents (the joint value is the sum of the
    per-agent values); terminal transitions bootstrap nothing."""
    n = len(pairs)
    _, _, rewards, nxt, masks, terminal = _stack_batch(batch, n)
    boot = np.zeros(len(batch))
    for i, pair in enumerate(pairs):
        q_main = pair.main.forward(nxt[i])
        a_star = masked_argmax_batch(q_main, masks[i])
        q_target = pair.target.forward(nxt[i])
        boot += q_target[np.arange(len(batch)), a_star]
    return rewards + gamma * boot * (~terminal)


def vdn_loss(batch: list[Transition], pairs: list[AgentNetPair],
             targets: np.ndarray):
    """Joint MSE loss and per-agent output gradients.

    Q_tot is the sum of each agent's chosen-action Q; the loss gradient with
    respect to every agent's chosen-action value is the same 2*(Q_tot - y)/B.
    Returns (loss, per-agent grad_out, per-agent activation caches).
    """
    n_agents = len(pairs)
    bsz = len(batch)
    rows = np.arange(bsz)
    caches = []
    chosen = []
    for i, pair in enumerate(pairs):
        x = np.stack([tr.obs[i] for tr in batch])
        q, acts = pair.main.forward_cached(x)
        a = np.array([tr.actions[i] for tr in batch])
        caches.append((acts, a))
        chosen.append(q[rows, a])
    q_tot = np.sum(chosen, axis=0)
    err = q_tot - targets
    loss = float(np.mean(err * err))
    dchosen = 2.0 * err / bsz
    grad_outs = []
    for acts, a in caches:
        g = np.zeros((bsz, pairs[0].main.widths[-1]))
        g[rows, a] = dchosen
        grad_outs.append(g)
    if DEBUG_CHECKS:
        assert np.array_equal(q_tot, np.sum(np.stack(chosen), axis=0))
        for g, (_, a) in zip(grad_outs, caches):
            assert np.array_equal(g[rows, a], dchosen)
    return loss, grad_outs, caches


def train_on_batch(batch: list[Transition], pairs: list[AgentNetPair],
                   optims: list[Adam], gamma: float) -> float:
    y = ddqn_targets(batch, pairs, gamma)
    loss, grad_outs, caches = vdn_loss(batch, pairs, y)
    if not math.isfinite(loss):
        raise TrainingDiverged(f"training loss is {loss}")
    for pair, optim, g, (acts, _) in zip(pairs, optims, grad_outs, caches):
        grads = pair.main.backward(acts, g)
        flat = []
        for dw, db in grads:
            flat.append(dw)
            flat.append(db)
        optim.step(pair.main.parameters(), flat)
    return loss


def train_episode_end(buffer: ReplayBuffer, pairs: list[AgentNetPair],
                      optims: list[Adam], rng: np.random.Generator,
                      updates: int = 64, batch_size: int = 64,
                      gamma: float = 0.99) -> float | None:
    """Episode-end training: ``updates`` uniform mini-batches; skipped while
    the buffer holds fewer transitions than one batch."""
    if len(buffer) < batch_size:
        return None
    total = 0.0
    for _ in range(updates):
        total += train_on_batch(buffer.sample(rng, batch_size), pairs, optims, gamma)
    for pair in pairs:
        pair.main.check_finite()
    return total / updates


# --- persistence -------------------------------------------------------------

def save_model(pair: AgentNetPair, path: str, config_hash: str) -> None:
    payload = {
        "role": pair.role,
        "layer_widths": pair.main.widths,
        "weights": [w.tolist() for w in pair.main.weights],  # row-major
        "biases": [b.tolist() for b in pair.main.biases],
        "episodes_trained": pair.episodes_trained,
        "config_hash": config_hash,
    }
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_model(path: str) -> tuple[AgentNetPair, str]:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    widths = payload["layer_widths"]
    pair = AgentNetPair(widths, np.random.default_rng(0), role=payload.get("role", ""))
    for i, (w, b) in enumerate(zip(payload["weights"], payload["biases"])):
        pair.main.weights[i] = np.asarray(w, dtype=np.float64)
        pair.main.biases[i] = np.asarray(b, dtype=np.float64)
    pair.target = pair.main.clone()
    pair.episodes_trained = payload.get("episodes_trained", 0)
    return pair, payload.get("config_hash", "")
