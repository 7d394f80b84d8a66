"""Independent SARSA learners with an MLP Q-function, Adam, and recent-episode replay.

All array code broadcasts over an optional leading agent axis. A single
learner has weights of shape ``(in, out)``; a population of ``A`` learners
stacks them as ``(A, in, out)``. Stacking is only a vectorization device: each
agent's slice gets its own gradient, its own Adam moments and its own replay
samples, and nothing mixes across the agent axis.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

HIDDEN = (50, 25)
CHECKPOINT_VERSION = "smlab-learner/1"


class TrainingFailure(RuntimeError):
    pass


# -- network -----------------------------------------------------------------


@dataclass
class MLP:
    """Rectifier MLP; ``params`` is [W1, b1, W2, b2, ...] with biases shaped (..., 1, out)."""

    params: list

    @property
    def sizes(self) -> list[int]:
        ws = self.params[0::2]
        return [ws[0].shape[-2]] + [w.shape[-1] for w in ws]

    @property
    def n_agents(self) -> Optional[int]:
        w = self.params[0]
        return w.shape[0] if w.ndim == 3 else None


def init_mlp(sizes: Sequence[int], rng: np.random.Generator, dtype=np.float64) -> MLP:
    """Glorot-uniform weights, zero biases."""
    params = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        lim = math.sqrt(6.0 / (fan_in + fan_out))
        params.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)).astype(dtype))
        params.append(np.zeros((1, fan_out), dtype=dtype))
    return MLP(params)


def init_population(sizes: Sequence[int], seeds: Sequence[int], dtype=np.float64) -> MLP:
    """Stack of independently seeded networks, one per seed."""
    nets = [init_mlp(sizes, np.random.default_rng(s), dtype) for s in seeds]
    return stack_mlps(nets)


def stack_mlps(nets: Sequence[MLP]) -> MLP:
    return MLP([np.stack([net.params[k] for net in nets]) for k in range(len(nets[0].params))])


def unstack_mlp(pop: MLP, agent: int) -> MLP:
    return MLP([p[agent].copy() for p in pop.params])


def _forward(params, x):
    """Return (output, activations) with activations = [x, h1, h2, ...]."""
    acts = [x]
    h = x
    n_layers = len(params) // 2
    for k in range(n_layers):
        z = h @ params[2 * k] + params[2 * k + 1]
        if k < n_layers - 1:
            z = np.maximum(z, 0.0)
            acts.append(z)
        h = z
    return h, acts


def q_values(mlp: MLP, observation: np.ndarray) -> np.ndarray:
    """Q-vector(s) for one observation or a batch (leading dims are kept)."""
    obs = np.asarray(observation)
    if obs.shape[-1] != mlp.sizes[0]:
        raise ValueError(f"observation length {obs.shape[-1]} != network input {mlp.sizes[0]}")
    if obs.ndim == 1:
        return _forward(mlp.params, obs[None, :])[0][0]
    return _forward(mlp.params, obs)[0]


def select_action(q_vector: np.ndarray, epsilon: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy; greedy ties go to the lowest index."""
    if rng.random() < epsilon:
        return int(rng.integers(len(q_vector)))
    return int(np.argmax(q_vector))


def select_actions(q: np.ndarray, epsilon: float, rng: np.random.Generator) -> np.ndarray:
    """Vectorized epsilon-greedy over rows of ``q`` (one row per agent)."""
    n_agents, n_actions = q.shape
    explore = rng.random(n_agents) < epsilon
    random_a = rng.integers(n_actions, size=n_agents)
    return np.where(explore, random_a, np.argmax(q, axis=1))


# -- optimizer ---------------------------------------------------------------


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_mlp(cls, mlp: MLP, lr: float = 1e-4, **kw) -> "AdamState":
        return cls([np.zeros_like(p) for p in mlp.params], [np.zeros_like(p) for p in mlp.params], lr=lr, **kw)

    def apply(self, params: list, grads: list) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        step = self.lr / bc1
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= step * m / (np.sqrt(v / bc2) + self.eps)


# -- SARSA -------------------------------------------------------------------


@dataclass
class Batch:
    """Transitions; every field has shape (..., B[, obs_dim])."""

    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_obs: np.ndarray
    next_actions: np.ndarray
    terminal: np.ndarray


def sarsa_targets(mlp: MLP, batch: Batch, gamma: float) -> np.ndarray:
    """r + gamma * Q(o', a') with the bootstrap cut at terminal transitions."""
    q_next = _forward(mlp.params, batch.next_obs)[0]
    q_na = np.take_along_axis(q_next, batch.next_actions[..., None], axis=-1)[..., 0]
    return batch.rewards + gamma * np.where(batch.terminal, 0.0, q_na)


def td_loss_and_grads(params: list, batch: Batch, targets: np.ndarray):
    """Mean squared TD error per learner and its gradient; targets are constants."""
    q, acts = _forward(params, batch.obs)
    q_sa = np.take_along_axis(q, batch.actions[..., None], axis=-1)[..., 0]
    td = q_sa - targets
    bsz = td.shape[-1]
    loss = np.mean(td * td, axis=-1)
    dq = np.zeros_like(q)
    np.put_along_axis(dq, batch.actions[..., None], (2.0 / bsz) * td[..., None], axis=-1)

    n_layers = len(params) // 2
    grads = [None] * len(params)
    delta = dq
    for k in range(n_layers - 1, -1, -1):
        h_in = acts[k]
        grads[2 * k] = np.swapaxes(h_in, -1, -2) @ delta
        grads[2 * k + 1] = delta.sum(axis=-2, keepdims=True)
        if k > 0:
            delta = (delta @ np.swapaxes(params[2 * k], -1, -2)) * (h_in > 0)
    return loss, grads


def sarsa_update(mlp: MLP, adam: AdamState, batch: Batch, gamma: float = 0.9):
    """One Adam step on the SARSA TD loss; updates in place and returns the loss.

    The loss is a scalar for a single learner or an array with one entry per
    agent for a population.
    """
    if batch.actions.shape[-1] == 0:
        raise ValueError("empty batch")
    targets = sarsa_targets(mlp, batch, gamma)
    loss, grads = td_loss_and_grads(mlp.params, batch, targets)
    if not np.all(np.isfinite(loss)):
        raise TrainingFailure(f"non-finite TD loss: {loss}")
    adam.apply(mlp.params, grads)
    return float(loss) if np.ndim(loss) == 0 else loss


# -- replay ------------------------------------------------------------------


class ReplayBuffer:
    """Transitions from the most recent ``capacity`` episodes, FIFO-evicted by episode.

    Storage is preallocated per episode slot. ``n_agents=None`` stores a
    single learner's data; otherwise every field carries an agent axis and
    ``sample`` draws an independent minibatch per agent.
    """

    def __init__(self, obs_dim: int, max_steps: int, capacity: int = 10,
                 n_agents: Optional[int] = None, dtype=np.float64):
        self.capacity = capacity
        self.max_steps = max_steps
        self.single = n_agents is None
        a = 1 if n_agents is None else n_agents
        self.n_agents = a
        self.obs = np.zeros((capacity, max_steps, a, obs_dim), dtype=dtype)
        self.next_obs = np.zeros_like(self.obs)
        self.actions = np.zeros((capacity, max_steps, a), dtype=np.int64)
        self.next_actions = np.zeros_like(self.actions)
        self.rewards = np.zeros((capacity, max_steps, a), dtype=dtype)
        self.terminal = np.zeros((capacity, max_steps), dtype=bool)
        self.counts = np.zeros(capacity, dtype=np.int64)
        self.episode_ids = np.full(capacity, -1, dtype=np.int64)
        self._slot = -1
        self._episodes_seen = 0

    def start_episode(self) -> None:
        self._slot = (self._slot + 1) % self.capacity
        self.counts[self._slot] = 0
        self.episode_ids[self._slot] = self._episodes_seen
        self._episodes_seen += 1

    def add(self, obs, action, reward, next_obs, next_action, terminal: bool) -> None:
        if self._slot < 0:
            raise RuntimeError("start_episode() must be called before add()")
        s, k = self._slot, self.counts[self._slot]
        if k >= self.max_steps:
            raise RuntimeError("episode longer than max_steps")
        self.obs[s, k] = np.reshape(obs, (self.n_agents, -1))
        self.next_obs[s, k] = np.reshape(next_obs, (self.n_agents, -1))
        self.actions[s, k] = action
        self.next_actions[s, k] = next_action
        self.rewards[s, k] = reward
        self.terminal[s, k] = terminal
        self.counts[s] = k + 1

    def __len__(self) -> int:
        return int(self.counts.sum())

    def held_episodes(self) -> list[int]:
        return sorted(int(e) for e, c in zip(self.episode_ids, self.counts) if e >= 0 and c > 0)

    def sample(self, k: int, rng: np.random.Generator) -> Batch:
        total = len(self)
        if total == 0:
            raise ValueError("cannot sample from an empty buffer")
        cum = np.cumsum(self.counts)
        flat = rng.integers(total, size=(self.n_agents, k))
        slot = np.searchsorted(cum, flat, side="right")
        step = flat - (cum[slot] - self.counts[slot])
        agent = np.arange(self.n_agents)[:, None]
        batch = Batch(
            obs=self.obs[slot, step, agent],
            actions=self.actions[slot, step, agent],
            rewards=self.rewards[slot, step, agent],
            next_obs=self.next_obs[slot, step, agent],
            next_actions=self.next_actions[slot, step, agent],
            terminal=self.terminal[slot, step],
        )
        if self.single:
            batch = Batch(*(getattr(batch, f)[0] for f in
                            ("obs", "actions", "rewards", "next_obs", "next_actions", "terminal")))
        return batch


# -- exploration -------------------------------------------------------------


@dataclass
class ExplorationSchedule:
    tau: float
    eps0: float = 1.0
    floor: float = 0.05

    @classmethod
    def for_budget(cls, episodes: int, eps0: float = 1.0, fraction: float = 0.8, reach: float = 0.06,
                   floor: float = 0.05) -> "ExplorationSchedule":
        """Pick tau so that epsilon equals ``reach`` after ``fraction`` of the budget."""
        tau = fraction * episodes / math.log(eps0 / reach)
        return cls(tau=tau, eps0=eps0, floor=floor)


def epsilon(schedule: ExplorationSchedule, episode_index: int) -> float:
    return max(schedule.floor, schedule.eps0 * math.exp(-episode_index / schedule.tau))


# -- checkpoints -------------------------------------------------------------


def save_checkpoint(path, mlp: MLP, adam: AdamState, episode: int = 0, schedule: Optional[ExplorationSchedule] = None):
    arrays = {f"param_{k}": p for k, p in enumerate(mlp.params)}
    arrays.update({f"m_{k}": m for k, m in enumerate(adam.m)})
    arrays.update({f"v_{k}": v for k, v in enumerate(adam.v)})
    meta = {
        "version": CHECKPOINT_VERSION,
        "n_params": len(mlp.params),
        "adam": {"t": adam.t, "lr": adam.lr, "beta1": adam.beta1, "beta2": adam.beta2, "eps": adam.eps},
        "episode": episode,
        "schedule": None if schedule is None else {"tau": schedule.tau, "eps0": schedule.eps0, "floor": schedule.floor},
    }
    with Path(path).open("wb") as fh:
        np.savez(fh, meta=np.array(json.dumps(meta)), **arrays)


def load_checkpoint(path):
    """Return (mlp, adam, episode, schedule) exactly as saved."""
    with np.load(path) as data:
        meta = json.loads(str(data["meta"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')!r}")
        k = meta["n_params"]
        mlp = MLP([data[f"param_{i}"].copy() for i in range(k)])
        adam = AdamState([data[f"m_{i}"].copy() for i in range(k)], [data[f"v_{i}"].copy() for i in range(k)],
                         **meta["adam"])
    sched = None if meta["schedule"] is None else ExplorationSchedule(**meta["schedule"])
    return mlp, adam, meta["episode"], sched


# -- population --------------------------------------------------------------


@dataclass
class LearnerConfig:
    hidden: tuple = HIDDEN
    lr: float = 1e-4
    gamma: float = 0.9
    replay_episodes: int = 10
    replay_batch: int = 32
    eps0: float = 1.0
    eps_floor: float = 0.05
    # epsilon reaches eps_reach after eps_fraction of the episode budget
    eps_reach: float = 0.06
    eps_fraction: float = 0.8
    fast: bool = True


class LearnerPopulation:
    """``n_agents`` independent SARSA learners advanced in lockstep.

    Each update step gives every agent one Adam step on its fresh transition
    plus ``replay_batch`` transitions drawn uniformly from its own replay
    buffer. ``fast`` selects the numba kernel; otherwise the numpy reference
    path is used. Both compute the same update.
    """

    def __init__(self, n_agents: int, obs_dim: int, n_actions: int, max_steps: int,
                 seeds: Sequence[int], config: Optional[LearnerConfig] = None):
        self.config = config = config or LearnerConfig()
        self.dtype = np.dtype(np.float64)
        sizes = [obs_dim, *config.hidden, n_actions]
        self.mlp = init_population(sizes, seeds, self.dtype)
        self.adam = AdamState.for_mlp(self.mlp, lr=config.lr)
        self.buffer = ReplayBuffer(obs_dim, max_steps, config.replay_episodes, n_agents, self.dtype)
        self.n_agents = n_agents
        self.n_updates = 0
        if config.fast and len(config.hidden) != 2:
            raise ValueError("the fast kernel supports exactly two hidden layers")

    def q(self, obs: np.ndarray) -> np.ndarray:
        """Q-values, one observation per agent: (A, D) -> (A, n_actions)."""
        obs = np.ascontiguousarray(obs, dtype=self.dtype)
        if self.config.fast:
            from ._kernels import population_q

            return population_q(*self.mlp.params, obs)
        return _forward(self.mlp.params, obs[:, None, :])[0][:, 0]

    def act(self, obs: np.ndarray, eps: float, rng: np.random.Generator) -> np.ndarray:
        return select_actions(self.q(obs), eps, rng)

    def greedy(self, obs: np.ndarray) -> np.ndarray:
        return np.argmax(self.q(obs), axis=1)

    def start_episode(self) -> None:
        self.buffer.start_episode()

    def observe(self, obs, actions, rewards, next_obs, next_actions, terminal: bool,
                rng: np.random.Generator) -> np.ndarray:
        """Store the transition, then update every agent; returns per-agent TD loss."""
        buf = self.buffer
        obs = np.asarray(obs, dtype=self.dtype)
        next_obs = np.asarray(next_obs, dtype=self.dtype)
        buf.add(obs, actions, rewards, next_obs, next_actions, terminal)
        total = len(buf)
        cum = np.cumsum(buf.counts)
        flat = rng.integers(total, size=(self.n_agents, self.config.replay_batch))
        slot = np.searchsorted(cum, flat, side="right")
        step = flat - (cum[slot] - buf.counts[slot])
        self.n_updates += 1
        if self.config.fast:
            from ._kernels import population_sarsa_step

            a = self.adam
            c = self.config
            losses = population_sarsa_step(
                *self.mlp.params, *a.m, *a.v,
                a.t + 1, a.lr, a.beta1, a.beta2, a.eps, c.gamma,
                obs, np.asarray(actions, dtype=np.int64), np.asarray(rewards, dtype=self.dtype),
                next_obs, np.asarray(next_actions, dtype=np.int64), bool(terminal),
                buf.obs, buf.actions, buf.rewards, buf.next_obs, buf.next_actions, buf.terminal,
                slot, step,
            )
            a.t += 1
            if not np.all(np.isfinite(losses)):
                raise TrainingFailure(f"non-finite TD loss: {losses}")
            return losses
        agent = np.arange(self.n_agents)[:, None]
        fresh = Batch(obs[:, None], np.asarray(actions)[:, None], np.asarray(rewards, dtype=self.dtype)[:, None],
                      next_obs[:, None], np.asarray(next_actions)[:, None],
                      np.full((self.n_agents, 1), bool(terminal)))
        batch = Batch(
            obs=np.concatenate([fresh.obs, buf.obs[slot, step, agent]], axis=1),
            actions=np.concatenate([fresh.actions, buf.actions[slot, step, agent]], axis=1),
            rewards=np.concatenate([fresh.rewards, buf.rewards[slot, step, agent]], axis=1),
            next_obs=np.concatenate([fresh.next_obs, buf.next_obs[slot, step, agent]], axis=1),
            next_actions=np.concatenate([fresh.next_actions, buf.next_actions[slot, step, agent]], axis=1),
            terminal=np.concatenate([fresh.terminal, buf.terminal[slot, step]], axis=1),
        )
        return sarsa_update(self.mlp, self.adam, batch, self.config.gamma)

    def agent_mlp(self, agent: int) -> MLP:
        return unstack_mlp(self.mlp, agent)
