# Tabular environment families (random graph, cliff grid, transmit/silent
# queue) plus seeded step/reset sampling.
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mdp import (
    CostModel,
    ProbabilityTransitionTensor,
    row_normalize,
    validate_ptt,
)


@dataclass(frozen=True)
class TabularEnvironment:
    """An immutable sampled MDP: transition tensor, costs and an order label.

    ``label`` is the hop order of the environment (1 = original dynamics,
    n > 1 = dynamics raised to the n-th matrix power).
    """

    ptt: ProbabilityTransitionTensor
    costs: CostModel
    rng_seed: int = 0
    label: int = 1

    def __post_init__(self):
        if self.label < 1:
            raise ValueError("environment order label must be >= 1")
        if self.costs.expected_costs.shape != (self.ptt.num_states, self.ptt.num_actions):
            raise ValueError("cost model dimensions do not match the transition tensor")
        report = validate_ptt(self.ptt)
        if not report.ok:
            raise ValueError(f"transition tensor is not row-stochastic: {report.failures[:3]}")

    @property
    def num_states(self) -> int:
        return self.ptt.num_states

    @property
    def num_actions(self) -> int:
        return self.ptt.num_actions

    def step(self, s: int, a: int, rng: np.random.Generator) -> tuple[int, float]:
        """Sample a successor and its cost; advances only ``rng``."""
        cum = self.ptt.row_cumsums[s, a]
        sp = int(np.searchsorted(cum, rng.random(), side="right"))
        if self.costs.transition_costs is not None:
            cost = float(self.costs.transition_costs[s, sp, a])
        else:
            cost = float(self.costs.expected_costs[s, a])
        return sp, cost

    def reset(self, rng: np.random.Generator) -> int:
        """Uniform-random initial state; deterministic per stream."""
        return int(rng.integers(self.num_states))


@dataclass(frozen=True)
class ErdosRenyiSpec:
    num_states: int
    num_actions: int
    edge_probability: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.num_states < 2:
            raise ValueError("random-graph environments need at least 2 states")
        if self.num_actions < 1:
            raise ValueError("need at least one action")
        if not (0.0 < self.edge_probability <= 1.0):
            raise ValueError("edge probability must lie in (0, 1]")


def build_er_env(spec: ErdosRenyiSpec) -> TabularEnvironment:
    """Random directed graph per action; uniform[0, 1] cost per (s, a).

    Rows with zero out-degree get a self-loop before normalization so the
    result is a valid transition matrix without touching other rows.
    """
    rng = np.random.default_rng(spec.seed)
    S, A = spec.num_states, spec.num_actions
    entries = np.empty((S, S, A))
    for a in range(A):
        adjacency = (rng.random((S, S)) < spec.edge_probability).astype(float)
        dead = adjacency.sum(axis=1) == 0.0
        adjacency[dead, np.nonzero(dead)[0]] = 1.0
        entries[:, :, a] = row_normalize(adjacency)
    expected = rng.uniform(0.0, 1.0, size=(S, A))
    return TabularEnvironment(
        ptt=ProbabilityTransitionTensor(entries),
        costs=CostModel(expected_costs=expected),
        rng_seed=spec.seed,
        label=1,
    )


@dataclass(frozen=True)
class CliffWalkSpec:
    rows: int
    cols: int | None = None           # defaults to 3 * rows
    cliff_cost: float = 1.0
    goal_cost: float = -1.0
    move_cost: float = 0.01

    def __post_init__(self):
        if self.rows < 2:
            raise ValueError("grid needs at least 2 rows")
        if self.cols is None:
            object.__setattr__(self, "cols", 3 * self.rows)
        if self.cols < 2:
            raise ValueError("grid needs at least 2 columns")

    @property
    def num_states(self) -> int:
        return self.rows * self.cols

    @property
    def start_state(self) -> int:
        return (self.rows - 1) * self.cols

    @property
    def goal_state(self) -> int:
        return self.rows * self.cols - 1

    @property
    def cliff_states(self) -> tuple[int, ...]:
        base = (self.rows - 1) * self.cols
        return tuple(base + c for c in range(1, self.cols - 1))


# action encoding: 0 = up, 1 = down, 2 = left, 3 = right
_MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))


def build_cliffwalk_env(spec: CliffWalkSpec) -> TabularEnvironment:
    """Deterministic grid walk along the cliff edge.

    Off-grid moves stay in place. Stepping into a cliff cell costs
    ``cliff_cost`` and teleports back to the start; stepping into the goal
    costs ``goal_cost``; everything else costs ``move_cost``. Costs depend
    only on the deterministic destination, so expected costs are exact.
    """
    S = spec.num_states
    A = len(_MOVES)
    cliff = set(spec.cliff_states)
    entries = np.zeros((S, S, A))
    expected = np.empty((S, A))
    for s in range(S):
        r, c = divmod(s, spec.cols)
        for a, (dr, dc) in enumerate(_MOVES):
            nr, nc = r + dr, c + dc
            if not (0 <= nr < spec.rows and 0 <= nc < spec.cols):
                nr, nc = r, c
            dest = nr * spec.cols + nc
            if dest in cliff:
                cost = spec.cliff_cost
                dest = spec.start_state
            elif dest == spec.goal_state:
                cost = spec.goal_cost
            else:
                cost = spec.move_cost
            entries[s, dest, a] = 1.0
            expected[s, a] = cost
    return TabularEnvironment(
        ptt=ProbabilityTransitionTensor(entries),
        costs=CostModel(expected_costs=expected),
        label=1,
    )


@dataclass(frozen=True)
class SisoSpec:
    """Single transmitter/receiver buffer control.

    State is the buffer occupancy 0..buffer_size. Each slot the transmitter
    either transmits (a departure succeeds with ``success_prob``, always
    paying ``transmit_cost``) or stays silent; a new packet arrives with
    ``arrival_prob`` and is dropped at cost ``drop_cost`` if the buffer is
    full after the departure phase.
    """

    buffer_size: int
    arrival_prob: float = 0.5
    success_prob: float = 0.8
    transmit_cost: float = 0.3
    drop_cost: float = 1.0

    def __post_init__(self):
        if self.buffer_size < 0:
            raise ValueError("buffer size must be >= 0")
        for name in ("arrival_prob", "success_prob"):
            p = getattr(self, name)
            if not (0.0 <= p <= 1.0):
                raise ValueError(f"{name} must lie in [0, 1]")


ACTION_TRANSMIT = 0
ACTION_SILENT = 1


def build_siso_env(spec: SisoSpec) -> TabularEnvironment:
    S = spec.buffer_size + 1
    A = 2
    entries = np.zeros((S, S, A))
    expected = np.zeros((S, A))
    p_arr = spec.arrival_prob
    for s in range(S):
        for a in range(A):
            p_dep = spec.success_prob if (a == ACTION_TRANSMIT and s > 0) else 0.0
            cost = spec.transmit_cost if a == ACTION_TRANSMIT else 0.0
            for dep, p_d in ((1, p_dep), (0, 1.0 - p_dep)):
                if p_d == 0.0:
                    continue
                mid = s - dep
                for arr, p_a in ((1, p_arr), (0, 1.0 - p_arr)):
                    if p_a == 0.0:
                        continue
                    if arr and mid >= spec.buffer_size:
                        sp = mid                      # dropped at full buffer
                        drop = spec.drop_cost
                    else:
                        sp = mid + arr
                        drop = 0.0
                    entries[s, sp, a] += p_d * p_a
                    expected[s, a] += p_d * p_a * (cost + drop)
    return TabularEnvironment(
        ptt=ProbabilityTransitionTensor(entries),
        costs=CostModel(expected_costs=expected),
        label=1,
    )
