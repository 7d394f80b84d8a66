"""Spatial matching game on a rectangular grid.

Agents ``0 .. n-1`` form side 1 and ``n .. 2n-1`` side 2. Every agent has
``n + 4`` actions: ``k < n`` expresses interest in opposite-side agent ``k``
(local index), ``n .. n+3`` move up, down, left, right. Interest actions keep
the agent in place.

A step resolves in a fixed order: dissolve matches whose members stopped
expressing interest in each other, move, form matches between collocated
unmatched agents with mutual interest, pay rewards, then record interest
and rebuild observations.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .instances import Instance

NONE = -1
UP, DOWN, LEFT, RIGHT = range(4)
_MOVES = np.array([[-1, 0], [1, 0], [0, -1], [0, 1]])


@dataclass
class GridConfig:
    rows: int
    cols: int
    start_cells: Sequence[int]
    steps_per_episode: int = 300
    noise_sigma: float = 0.1
    unmatched_penalty: float = -1.0

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("grid needs at least one cell")
        cells = self.rows * self.cols
        self.start_cells = tuple(int(c) for c in self.start_cells)
        if any(c < 0 or c >= cells for c in self.start_cells):
            raise ValueError(f"start cells must lie in [0, {cells})")
        if self.steps_per_episode < 1:
            raise ValueError("steps_per_episode must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")

    @property
    def n_cells(self) -> int:
        return self.rows * self.cols


def random_start_cells(rows: int, cols: int, n_agents: int, rng: np.random.Generator) -> list[int]:
    """Uniform independent start cell per agent."""
    return [int(c) for c in rng.integers(rows * cols, size=n_agents)]


@dataclass
class EnvState:
    positions: np.ndarray
    matched_with: np.ndarray
    last_interest: np.ndarray
    step: int
    reward_rng: np.random.Generator = field(repr=False)


class GridMatchingEnv:
    """Markov game over a fixed instance; ``step`` mutates ``self.state``."""

    def __init__(self, config: GridConfig, instance: Instance, record_trace: bool = False):
        self.config = config
        self.instance = instance
        self.n = instance.n_side
        if len(config.start_cells) != 2 * self.n:
            raise ValueError(f"need {2 * self.n} start cells, got {len(config.start_cells)}")
        self.n_actions = self.n + 4
        self.obs_dim = config.n_cells + 2 * self.n
        # utility[a, b_local]: what agent a gets from the opposite agent b_local
        self._utility = np.vstack([instance.utility_1, instance.utility_2])
        self.state: Optional[EnvState] = None
        self.record_trace = record_trace
        self.trace: list[dict] = []

    # -- helpers -------------------------------------------------------------

    def opposite(self, agent: int, local: int) -> int:
        """Global id of opposite-side agent ``local`` as seen from ``agent``."""
        return local + self.n if agent < self.n else local

    def local(self, agent: int) -> int:
        return agent % self.n

    def reset(self, episode_seed: int) -> np.ndarray:
        n2 = 2 * self.n
        self.state = EnvState(
            positions=np.array(self.config.start_cells, dtype=np.int64),
            matched_with=np.full(n2, NONE, dtype=np.int64),
            last_interest=np.full(n2, NONE, dtype=np.int64),
            step=0,
            reward_rng=np.random.default_rng(episode_seed),
        )
        self.trace = []
        return self.observations()

    def step(self, actions) -> tuple[np.ndarray, np.ndarray]:
        """Apply one joint action; returns (observations, rewards)."""
        st = self.state
        if st is None:
            raise RuntimeError("reset() must be called before step()")
        n, n2 = self.n, 2 * self.n
        acts = np.asarray(actions)
        if acts.shape != (n2,) or not np.issubdtype(acts.dtype, np.integer):
            raise ValueError(f"expected {n2} integer actions, got shape {acts.shape}")
        if acts.min() < 0 or acts.max() >= self.n_actions:
            raise ValueError(f"actions must lie in [0, {self.n_actions})")

        is_interest = acts < n
        # global id each agent is interested in, NONE for movers
        offset = np.where(np.arange(n2) < n, n, 0)
        interest = np.where(is_interest, acts + offset, NONE)

        # 1. dissolve
        mw = st.matched_with
        for a in range(n2):
            b = mw[a]
            if b != NONE and (interest[a] != b or interest[b] != a):
                mw[a] = NONE
                mw[b] = NONE

        # 2. move
        movers = np.flatnonzero(~is_interest)
        if movers.size:
            cols = self.config.cols
            r, c = np.divmod(st.positions[movers], cols)
            d = _MOVES[acts[movers] - n]
            r = np.clip(r + d[:, 0], 0, self.config.rows - 1)
            c = np.clip(c + d[:, 1], 0, cols - 1)
            st.positions[movers] = r * cols + c

        # 3. form
        for i in range(n):
            j = interest[i]
            if j != NONE and mw[i] == NONE and mw[j] == NONE and interest[j] == i \
                    and st.positions[i] == st.positions[j]:
                mw[i] = j
                mw[j] = i

        # 4. rewards
        noise = st.reward_rng.normal(1.0, self.config.noise_sigma, size=n2)
        rewards = np.full(n2, self.config.unmatched_penalty, dtype=np.float64)
        matched = np.flatnonzero(mw != NONE)
        if matched.size:
            rewards[matched] = self._utility[matched, mw[matched] % n] * noise[matched]

        # 5. bookkeeping
        st.last_interest = interest
        st.step += 1
        if self.record_trace:
            self.trace.append({
                "step": st.step,
                "positions": st.positions.tolist(),
                "matches": mw.tolist(),
                "rewards": rewards.tolist(),
            })
        return self.observations(), rewards

    def observations(self) -> np.ndarray:
        """All agents' observation vectors, shape (2n, cells + 2n)."""
        st = self.state
        n, cells = self.n, self.config.n_cells
        obs = np.zeros((2 * n, self.obs_dim))
        pos = st.positions
        obs[np.arange(2 * n), pos] = 1.0
        same = pos[:n, None] == pos[None, n:]  # [i, j]
        li = st.last_interest
        # side-1 agent i interested in side-2 agent j
        int12 = li[:n, None] == (np.arange(n) + n)[None, :]
        # side-2 agent j interested in side-1 agent i, indexed [i, j]
        int21 = (li[n:, None] == np.arange(n)[None, :]).T
        obs[:n, cells:cells + n] = same
        obs[n:, cells:cells + n] = same.T
        obs[:n, cells + n:] = same & int21
        obs[n:, cells + n:] = (same & int12).T
        return obs

    def encode_observation(self, agent: int) -> np.ndarray:
        return self.observations()[agent]

    def current_matching(self):
        from .matching import Matching

        mw = self.state.matched_with
        pairs = [(i, int(mw[i]) - self.n) for i in range(self.n) if mw[i] != NONE]
        return Matching.from_pairs(self.n, pairs)

    def dump_trace(self, path) -> None:
        """Write the recorded trajectory as JSON lines."""
        with Path(path).open("w") as fh:
            for rec in self.trace:
                fh.write(json.dumps(rec) + "\n")
