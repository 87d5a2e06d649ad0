"""PPO with happiness-difference rewards."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .config import PPOConfig
from .nervous import PolicyNetwork, log_softmax

log = logging.getLogger(__name__)


def reward(h_t: float, h_prev: float) -> float:
    return h_t - h_prev


@dataclass
class Transition:
    x: np.ndarray
    action: int
    log_prob: float
    value: float
    reward: float
    done: bool


@dataclass
class RolloutBuffer:
    capacity: int
    last_happiness: float = 0.0
    transitions: list[Transition] = field(default_factory=list)

    def __len__(self):
        return len(self.transitions)

    @property
    def full(self) -> bool:
        return len(self.transitions) >= self.capacity

    def append(self, t: Transition) -> None:
        self.transitions.append(t)

    def clear(self) -> None:
        self.transitions.clear()


def gae(rewards, values, dones, bootstrap_value, gamma, lam):
    """Advantages and returns over one contiguous trajectory segment."""
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    dones = np.asarray(dones, dtype=float)
    n = len(rewards)
    adv = np.zeros(n)
    next_value = float(bootstrap_value)
    running = 0.0
    for t in range(n - 1, -1, -1):
        live = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * live - values[t]
        running = delta + gamma * lam * live * running
        adv[t] = running
        next_value = values[t]
    return adv, adv + values


def compute_gae(buffer: RolloutBuffer, bootstrap_value: float, cfg: PPOConfig):
    tr = buffer.transitions
    if not tr:
        raise ValueError("compute_gae needs a non-empty buffer")
    return gae([t.reward for t in tr], [t.value for t in tr], [t.done for t in tr],
               bootstrap_value, cfg.gamma, cfg.gae_lambda)


@dataclass
class Batch:
    x: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray
    rewards: np.ndarray | None = None

    def __len__(self):
        return len(self.actions)

    def take(self, idx) -> "Batch":
        return Batch(self.x[idx], self.actions[idx], self.log_probs[idx],
                     self.advantages[idx], self.returns[idx])

    @staticmethod
    def concat(parts: list["Batch"]) -> "Batch":
        return Batch(
            np.concatenate([p.x for p in parts]),
            np.concatenate([p.actions for p in parts]),
            np.concatenate([p.log_probs for p in parts]),
            np.concatenate([p.advantages for p in parts]),
            np.concatenate([p.returns for p in parts]),
            np.concatenate([p.rewards if p.rewards is not None else np.zeros(len(p))
                            for p in parts]),
        )


def normalize_advantages(adv) -> np.ndarray:
    adv = np.asarray(adv, dtype=float)
    std = adv.std()
    return (adv - adv.mean()) / (std + 1e-8)


def ppo_loss(policy: PolicyNetwork, batch: Batch, cfg: PPOConfig, params=None,
             with_grad: bool = True):
    """Clipped surrogate + value loss - entropy bonus.

    Returns (loss, grads or None, stats). Gradients are analytic.
    """
    logits, values, acts = policy.forward(batch.x, params)
    n = len(batch)
    logp_all = log_softmax(logits)
    p = np.exp(logp_all)
    rows = np.arange(n)
    logp = logp_all[rows, batch.actions]
    ratio = np.exp(logp - batch.log_probs)
    A = batch.advantages
    eps = cfg.clip_eps
    clipped = np.clip(ratio, 1.0 - eps, 1.0 + eps)
    s1 = ratio * A
    s2 = clipped * A
    surr = np.minimum(s1, s2)
    policy_loss = -surr.mean()
    err = values - batch.returns
    value_loss = np.mean(err * err)
    ent = -(p * logp_all).sum(axis=1)
    entropy = ent.mean()
    loss = policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * entropy
    stats = {
        "loss": float(loss),
        "policy_loss": float(policy_loss),
        "value_loss": float(value_loss),
        "entropy": float(entropy),
        "approx_kl": float(np.mean(batch.log_probs - logp)),
        "clip_frac": float(np.mean(np.abs(ratio - 1.0) > eps)),
    }
    if not with_grad:
        return loss, None, stats
    # d(-mean min(s1, s2))/d logp_a; the unclipped branch carries the gradient
    active = (s1 <= s2).astype(float)
    g_logp = -(A * ratio * active) / n
    onehot = np.zeros_like(p)
    onehot[rows, batch.actions] = 1.0
    dlogits = g_logp[:, None] * (onehot - p)
    # entropy: dH/dz_j = -p_j (log p_j + H)
    dlogits += (cfg.entropy_coef / n) * p * (logp_all + ent[:, None])
    dvalues = (2.0 * cfg.value_coef / n) * err
    grads = policy.backward(acts, dlogits, dvalues, params)
    return loss, grads, stats


class Adam:
    def __init__(self, params, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr = lr
        self.b1, self.b2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads) -> None:
        self.t += 1
        b1, b2 = self.b1, self.b2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def copy(self) -> "Adam":
        o = Adam([np.zeros(0)], self.lr, self.b1, self.b2, self.eps)
        o.m = [m.copy() for m in self.m]
        o.v = [v.copy() for v in self.v]
        o.t = self.t
        return o


def clip_grad_norm(grads, max_norm: float) -> float:
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        for g in grads:
            g *= scale
    return total


class UpdateAborted(RuntimeError):
    pass


def ppo_update(policy: PolicyNetwork, batch: Batch, cfg: PPOConfig, rng: np.random.Generator,
               optimizer: Adam | None = None, minibatch: int | None = None,
               normalize: bool = True) -> dict:
    """Several epochs of minibatch PPO on ``batch``; parameters change in place.

    A non-finite loss restores the pre-update parameters and raises
    ``UpdateAborted``.
    """
    if optimizer is None:
        optimizer = Adam(policy.params, cfg.lr)
    if normalize:
        batch = Batch(batch.x, batch.actions, batch.log_probs,
                      normalize_advantages(batch.advantages), batch.returns)
    mb = minibatch or cfg.minibatch
    n = len(batch)
    backup = [p.copy() for p in policy.params]
    opt_backup = optimizer.copy()
    sums = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0, "approx_kl": 0.0}
    steps = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, mb):
            idx = order[start:start + mb]
            loss, grads, stats = ppo_loss(policy, batch.take(idx), cfg)
            if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
                for p, b in zip(policy.params, backup):
                    p[...] = b
                optimizer.m, optimizer.v, optimizer.t = opt_backup.m, opt_backup.v, opt_backup.t
                raise UpdateAborted("non-finite PPO loss; parameters restored")
            clip_grad_norm(grads, cfg.max_grad_norm)
            optimizer.step(policy.params, grads)
            for k in sums:
                sums[k] += stats[k]
            steps += 1
    return {k: v / max(steps, 1) for k, v in sums.items()}


class Learner:
    """Owns one policy's optimizer and pools flushed buffers until an update."""

    def __init__(self, policy: PolicyNetwork, cfg: PPOConfig, rng: np.random.Generator,
                 lr: float | None = None, min_batch: int = 1, minibatch: int | None = None,
                 name: str = ""):
        self.policy = policy
        self.cfg = cfg
        self.optimizer = Adam(policy.params, lr if lr is not None else cfg.lr)
        self.rng = rng
        self.min_batch = min_batch
        self.minibatch = minibatch or cfg.minibatch
        self.name = name
        self.pool: list[Batch] = []
        self.pooled = 0
        self.history: list[dict] = []
        self.aborted = 0

    def add(self, part: Batch, tick: int = 0, events=None) -> dict | None:
        self.pool.append(part)
        self.pooled += len(part)
        if self.pooled < self.min_batch:
            return None
        batch = Batch.concat(self.pool)
        self.pool.clear()
        self.pooled = 0
        try:
            stats = ppo_update(self.policy, batch, self.cfg, self.rng, self.optimizer,
                               self.minibatch)
        except UpdateAborted as exc:
            self.aborted += 1
            log.warning("%s: %s", self.name, exc)
            if events is not None:
                events.append((tick, "update_aborted", -1, self.name))
            return None
        stats["mean_reward"] = float(batch.rewards.mean())
        stats["tick"] = tick
        stats["n"] = len(batch)
        self.history.append(stats)
        return stats


@dataclass
class LearnerState:
    buffer: RolloutBuffer
    learner: Learner | None
    pending: tuple | None = None  # (x, Decision) awaiting its reward


def flush(state: LearnerState, bootstrap_value: float, tick: int = 0, events=None):
    buf = state.buffer
    if not buf.transitions or state.learner is None:
        buf.clear()
        return None
    adv, ret = compute_gae(buf, bootstrap_value, state.learner.cfg)
    tr = buf.transitions
    part = Batch(np.array([t.x for t in tr]), np.array([t.action for t in tr]),
                 np.array([t.log_prob for t in tr]), adv, ret,
                 np.array([t.reward for t in tr]))
    buf.clear()
    return state.learner.add(part, tick, events)


def learner_step(org, x, decision, h_now: float, done: bool = False,
                 next_value: float = 0.0, tick: int = 0, events=None):
    """Record the transition (x, decision) whose outcome has happiness ``h_now``.

    Flushes to the learner when the buffer is full or the organism died.
    """
    state: LearnerState = org.learner
    buf = state.buffer
    r = reward(h_now, buf.last_happiness)
    buf.append(Transition(np.asarray(x, dtype=float), decision.chosen_policy_action,
                          decision.log_prob, decision.value, r, done))
    buf.last_happiness = h_now
    if done or buf.full:
        return flush(state, 0.0 if done else next_value, tick, events)
    return None


def pretrain(config, total_steps: int, seed: int | None = None, threads: int = 1,
             log_every: int = 0):
    """Run the world with reproduction off and one shared policy per species.

    Returns ({species: PolicyNetwork}, training-curve rows). Rows are
    (tick, species, mean_reward, policy_loss, value_loss, entropy).
    """
    from .world import build_world, step

    world = build_world(config, seed, mode="pretrain")
    for t in range(total_steps):
        step(world, threads)
        if log_every and (t + 1) % log_every == 0:
            log.info("pretrain tick %d: %s", t + 1,
                     {s: world.population(s) for s in world.templates})
    rows = []
    for name, learner in world.shared_learners.items():
        for h in learner.history:
            rows.append((h["tick"], name, h["mean_reward"], h["policy_loss"],
                         h["value_loss"], h["entropy"]))
    rows.sort(key=lambda r: (r[0], r[1]))
    return dict(world.policies), rows
