"""Tabular Q-learning over NSC sequences.

A state is ``(layer index, previous code)``; an action is the next code.  The
reward of a sampled block is ``min(PSNR, clamp) - mu * ln(params)`` and every
layer that survives pruning receives it as its intermediate reward, pruned
layers receive 0.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

from .nsc import NscCode, SpaceConfig, legal_actions

START = (0, 0, 0, 0)

# (epsilon, share of episodes out of 100)
EPSILON_TABLE = ((1.0, 50), (0.9, 5), (0.8, 5), (0.7, 5), (0.6, 5),
                 (0.5, 5), (0.4, 5), (0.3, 5), (0.2, 5), (0.1, 10))


def state_of(layer_index: int, prev: NscCode | None):
    return (layer_index, prev.encoding if prev is not None else START)


def state_key(state) -> str:
    layer, enc = state
    return f"{layer}|{','.join(map(str, enc))}"


def action_key(enc) -> str:
    return ",".join(map(str, enc))


def _parse_state(key):
    layer, enc = key.split("|")
    return int(layer), tuple(int(v) for v in enc.split(","))


@dataclass(frozen=True)
class Transition:
    state: tuple
    action: tuple
    reward: float
    next_state: tuple
    terminal: bool


@dataclass
class RewardConfig:
    mu: float = 0.5
    psnr_clamp: float = 60.0
    floor: float = 0.0
    log_base: str = "e"


def compute_reward(psnr, params, active, cfg: RewardConfig | None = None):
    """Return ``(r_L, [r_l per layer])``."""
    cfg = cfg or RewardConfig()
    if params < 1:
        raise ValueError("params must be >= 1")
    r = min(psnr, cfg.psnr_clamp) - cfg.mu * math.log(params)
    return r, [r if a else 0.0 for a in active]


class EpsilonSchedule:
    """Table-7 proportions rescaled to ``total`` episodes."""

    def __init__(self, total: int, table=EPSILON_TABLE):
        self.total = total
        units = sum(n for _, n in table)
        bounds, acc = [], 0
        for eps, n in table:
            acc += n
            bounds.append((round(acc * total / units), eps))
        self.phases = []
        start = 0
        for end, eps in bounds:
            self.phases.append((eps, end - start))
            start = end

    def __call__(self, episode: int) -> float:
        if not 0 <= episode < max(self.total, 1):
            raise IndexError(f"episode {episode} outside schedule of {self.total}")
        start = 0
        for eps, n in self.phases:
            if episode < start + n:
                return eps
            start += n
        return self.phases[-1][0]

    @property
    def final_phase_start(self) -> int:
        return self.total - self.phases[-1][1]


def epsilon_at(schedule: EpsilonSchedule, episode: int) -> float:
    return schedule(episode)


class ReplayMemory:
    def __init__(self, capacity=2000):
        self.capacity = capacity
        self.items: deque[Transition] = deque(maxlen=capacity)

    def __len__(self):
        return len(self.items)

    def push(self, t: Transition):
        self.items.append(t)

    def sample(self, n, rng):
        n = min(n, len(self.items))
        idx = rng.choice(len(self.items), size=n, replace=False)
        return [self.items[i] for i in idx]


class QAgent:
    def __init__(self, space: SpaceConfig, alpha=0.01, gamma=1.0, capacity=2000):
        self.space = space
        self.alpha = alpha
        self.gamma = gamma
        self.q: dict[tuple, dict[tuple, float]] = {}
        self.memory = ReplayMemory(capacity)

    def value(self, state, action) -> float:
        return self.q.get(state, {}).get(action, 0.0)

    def max_value(self, state) -> float:
        row = self.q.get(state)
        return max(row.values()) if row else 0.0

    def greedy(self, state, actions: list[NscCode]) -> NscCode:
        """Highest Q-value; ties go to the lowest encoding (``actions`` is sorted)."""
        row = self.q.get(state, {})
        best, best_v = actions[0], row.get(actions[0].encoding, 0.0)
        for a in actions[1:]:
            v = row.get(a.encoding, 0.0)
            if v > best_v:
                best, best_v = a, v
        return best

    def sample_episode(self, epsilon: float, rng) -> list[NscCode]:
        codes: list[NscCode] = []
        prev = None
        while True:
            actions = legal_actions(codes, self.space)
            if rng.random() < epsilon:
                a = actions[int(rng.integers(len(actions)))]
            else:
                a = self.greedy(state_of(len(codes) + 1, prev), actions)
            codes.append(a)
            prev = a
            if a.op.is_terminal:
                return codes

    def store_episode(self, codes, rewards):
        for code, r in zip(codes, rewards):
            l = code.index
            prev = codes[l - 2] if l > 1 else None
            self.memory.push(Transition(state_of(l, prev), code.encoding, float(r),
                                        state_of(l + 1, code), code.op.is_terminal))

    def update(self, rng, batch=64):
        if not len(self.memory):
            return
        for t in self.memory.sample(batch, rng):
            self.apply(t)

    def apply(self, t: Transition):
        target = t.reward if t.terminal else t.reward + self.gamma * self.max_value(t.next_state)
        row = self.q.setdefault(t.state, {})
        row[t.action] = (1 - self.alpha) * row.get(t.action, 0.0) + self.alpha * target

    # -- persistence

    def table_dict(self) -> dict:
        return {state_key(s): {action_key(a): v for a, v in sorted(row.items())}
                for s, row in sorted(self.q.items())}

    def load_table(self, d: dict):
        self.q = {_parse_state(s): {tuple(int(x) for x in a.split(",")): float(v) for a, v in row.items()}
                  for s, row in d.items()}

    def memory_list(self) -> list:
        return [[list(t.state[1]), t.state[0], list(t.action), t.reward,
                 list(t.next_state[1]), t.next_state[0], t.terminal] for t in self.memory.items]

    def load_memory(self, items):
        self.memory.items.clear()
        for s_enc, s_l, a, r, n_enc, n_l, term in items:
            self.memory.push(Transition((s_l, tuple(s_enc)), tuple(a), float(r), (n_l, tuple(n_enc)), bool(term)))


def sample_episode(agent: QAgent, epsilon: float, rng) -> list[NscCode]:
    return agent.sample_episode(epsilon, rng)


def random_episode(space: SpaceConfig, rng) -> list[NscCode]:
    """Uniform-random legal block, the baseline the agent has to beat."""
    codes: list[NscCode] = []
    while True:
        actions = legal_actions(codes, space)
        a = actions[int(rng.integers(len(actions)))]
        codes.append(a)
        if a.op.is_terminal:
            return codes
