# Transition-model estimation by sample averaging and synthesis of the
# n-hop environment family.
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .environments import TabularEnvironment
from .mdp import (
    CostModel,
    ProbabilityTransitionTensor,
    matrix_power_ptt,
    row_normalize,
)


@dataclass(frozen=True)
class SamplingConfig:
    trajectory_length: int = 10        # l
    min_visits: int = 40               # v
    num_environments: int = 4          # K
    order_set: tuple[int, ...] = ()    # defaults to (1, 2, ..., K)
    max_total_samples: int = 1_000_000
    # visit accounting: "triple" counts (s, s', a), "pair" collapses actions
    visit_granularity: str = "triple"

    def __post_init__(self):
        if self.trajectory_length < 1:
            raise ValueError("trajectory length must be >= 1")
        if self.min_visits < 1:
            raise ValueError("minimum visit count must be >= 1")
        if self.num_environments < 2:
            raise ValueError("need at least 2 environments")
        orders = self.order_set or tuple(range(1, self.num_environments + 1))
        orders = tuple(int(n) for n in orders)
        if 1 not in orders:
            raise ValueError("order set must contain the original environment (order 1)")
        if len(set(orders)) != len(orders):
            raise ValueError("orders must be distinct")
        if any(n < 1 for n in orders):
            raise ValueError("orders must be positive")
        object.__setattr__(self, "order_set", orders)
        if self.visit_granularity not in ("triple", "pair"):
            raise ValueError("visit_granularity must be 'triple' or 'pair'")


@dataclass(frozen=True)
class EstimatedModel:
    counts: np.ndarray                  # (S, S, A) integer transition counts
    prior_mass: float                   # uniform prior per cell (1/S)
    p_hat: ProbabilityTransitionTensor
    c_hat: CostModel
    samples_used: int
    complete: bool = True

    @property
    def num_states(self) -> int:
        return self.p_hat.num_states

    @property
    def num_actions(self) -> int:
        return self.p_hat.num_actions


def _p_hat_from_counts(counts: np.ndarray, prior_mass: float) -> ProbabilityTransitionTensor:
    S, _, A = counts.shape
    entries = np.empty((S, S, A))
    for a in range(A):
        entries[:, :, a] = row_normalize(counts[:, :, a] + prior_mass)
    return ProbabilityTransitionTensor(entries)


def _visits_satisfied(counts: np.ndarray, v: int, granularity: str) -> bool:
    c = counts.sum(axis=2) if granularity == "pair" else counts
    observed = c[c > 0]
    return observed.size > 0 and int(observed.min()) >= v


def estimate_model(
    env: TabularEnvironment,
    cfg: SamplingConfig,
    rng: np.random.Generator,
    milestones: list[int] | None = None,
    on_milestone=None,
) -> EstimatedModel:
    """Estimate the transition tensor and costs of ``env`` by sample averaging.

    Rolls uniform-action trajectories of length l from uniform-random resets,
    counting transitions, until every transition observed so far has been
    seen at least v times (checked per trajectory) or the sample cap is hit.
    The returned kernel is the row-normalized counts on top of a uniform
    1/|S| prior.

    ``on_milestone(samples, model)`` is invoked whenever the running sample
    count crosses an entry of ``milestones`` (used for error-vs-samples
    curves).
    """
    S, A = env.num_states, env.num_actions
    counts = np.zeros((S, S, A), dtype=np.int64)
    cost_sums = np.zeros((S, A))
    cost_counts = np.zeros((S, A), dtype=np.int64)
    prior_mass = 1.0 / S
    pending = sorted(milestones) if milestones else []

    samples = 0
    complete = False
    while samples < cfg.max_total_samples:
        s = env.reset(rng)
        for _ in range(cfg.trajectory_length):
            a = int(rng.integers(A))
            sp, cost = env.step(s, a, rng)
            counts[s, sp, a] += 1
            cost_sums[s, a] += cost
            cost_counts[s, a] += 1
            samples += 1
            s = sp
            while pending and samples >= pending[0]:
                pending.pop(0)
                if on_milestone is not None:
                    on_milestone(samples, _snapshot(env, counts, cost_sums, cost_counts,
                                                   prior_mass, samples))
            if samples >= cfg.max_total_samples:
                break
        if _visits_satisfied(counts, cfg.min_visits, cfg.visit_granularity):
            complete = True
            break

    return _snapshot(env, counts, cost_sums, cost_counts, prior_mass, samples, complete)


def _snapshot(env, counts, cost_sums, cost_counts, prior_mass, samples,
              complete: bool = True) -> EstimatedModel:
    visited = cost_counts > 0
    c_hat = np.where(visited, cost_sums / np.maximum(cost_counts, 1), env.costs.expected_costs)
    return EstimatedModel(
        counts=counts.copy(),
        prior_mass=prior_mass,
        p_hat=_p_hat_from_counts(counts, prior_mass),
        c_hat=CostModel(expected_costs=c_hat),
        samples_used=samples,
        complete=complete,
    )


def build_multiscale_envs(
    model: EstimatedModel,
    order_set: tuple[int, ...],
    base_seed: int = 0,
) -> list[TabularEnvironment]:
    """One environment per requested hop order, sharing the estimated costs.

    Order 1 wraps the estimate unchanged; order n uses the n-th matrix power
    of the estimated kernel. Synthetic environments reuse the estimated
    expected-cost matrix so every learner optimizes the same stage costs.
    """
    envs = []
    for n in order_set:
        ptt = model.p_hat if n == 1 else matrix_power_ptt(model.p_hat, n)
        envs.append(
            TabularEnvironment(ptt=ptt, costs=model.c_hat, rng_seed=base_seed, label=n)
        )
    return envs


def estimation_error(
    P_true: ProbabilityTransitionTensor,
    P_hat: ProbabilityTransitionTensor,
    norm: str = "frobenius",
) -> float:
    """Average per-action matrix-norm distance between two kernels.

    Frobenius by default (cheap, monotone in entrywise error); "spectral"
    uses the induced 2-norm.
    """
    if P_true.entries.shape != P_hat.entries.shape:
        raise ValueError("transition tensors must have matching dimensions")
    diff = P_true.entries - P_hat.entries
    A = P_true.num_actions
    if norm == "frobenius":
        per_action = [np.linalg.norm(diff[:, :, a], "fro") for a in range(A)]
    elif norm == "spectral":
        per_action = [np.linalg.norm(diff[:, :, a], 2) for a in range(A)]
    else:
        raise ValueError("norm must be 'frobenius' or 'spectral'")
    return float(np.mean(per_action))


def select_orders(K: int, max_order: int) -> tuple[int, ...]:
    """Hop orders to use for K environments.

    Starts from {1, 2, 3}, then adds further orders in ascending order,
    skipping any order that is a power-of-two multiple of one already
    chosen (those are ranked strictly farther from the original dynamics
    than something already included, so they add little diversity).
    Yields {1, 2, 3, 5, 7, ...} truncated to K entries.
    """
    if K < 2:
        raise ValueError("K must be >= 2")
    if max_order < K:
        raise ValueError("max_order must be >= K")
    chosen: list[int] = []
    for n in range(1, max_order + 1):
        if len(chosen) == K:
            break
        if n <= 3:
            chosen.append(n)
            continue
        redundant = any(n % m == 0 and _is_power_of_two(n // m) for m in chosen)
        if not redundant:
            chosen.append(n)
    return tuple(chosen)


def _is_power_of_two(x: int) -> bool:
    return x >= 2 and (x & (x - 1)) == 0
