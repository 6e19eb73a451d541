# Parallel multi-timescale Q-learners fused by divergence-based adaptive
# weights, plus the plain Q-learning baseline and the value-iteration
# ensemble variant.
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import rel_entr

from .environments import TabularEnvironment
from .estimation import SamplingConfig, build_multiscale_envs, estimate_model
from .mdp import (
    CostModel,
    DiscountFactor,
    Policy,
    ProbabilityTransitionTensor,
    QTable,
    ValueFunction,
    greedy_policy_from_q,
    matrix_power_ptt,
    row_normalize,
    value_iteration,
)
from .metrics import MetricsLog

_LN2 = math.log(2.0)

UPDATE_RATIO_FORMS = ("constant", "exp", "rational", "power")

# Default epsilon decay bases, assigned in order-selection rank: faster
# decay for environments closer to the original dynamics.
DEFAULT_EPSILON_DECAYS = (0.95, 0.97, 0.97, 0.99)


def default_epsilon_decays(K: int) -> tuple[float, ...]:
    pad = (DEFAULT_EPSILON_DECAYS[-1],) * max(0, K - len(DEFAULT_EPSILON_DECAYS))
    return (DEFAULT_EPSILON_DECAYS + pad)[:K]


@dataclass(frozen=True)
class ScheduleSet:
    """Learning-rate, exploration, and exploitation-ratio curves.

    alpha_t = 1 / (1 + t / c1); per-learner epsilon_t = max(c2_k ** t, c3);
    u_t is one of: a constant, 1 - exp(-t / c4), 1 - 1 / (1 + t / c4), or
    1 - c4 ** t (with c4 in (0, 1) for the last form).
    """

    c1: float = 100.0
    epsilon_decays: tuple[float, ...] = DEFAULT_EPSILON_DECAYS
    c3: float = 0.01
    update_form: str = "exp"
    c4: float = 1000.0
    u_constant: float = 0.5

    def __post_init__(self):
        if self.c1 <= 0:
            raise ValueError("c1 must be positive")
        if not (0.0 < self.c3 <= 1.0):
            raise ValueError("epsilon floor c3 must lie in (0, 1]")
        for c2 in self.epsilon_decays:
            if not (0.0 < c2 <= 1.0):
                raise ValueError("epsilon decay bases must lie in (0, 1]")
        if self.update_form not in UPDATE_RATIO_FORMS:
            raise ValueError(f"update_form must be one of {UPDATE_RATIO_FORMS}")
        if self.update_form == "power" and not (0.0 < self.c4 < 1.0):
            raise ValueError("power-form update ratio needs c4 in (0, 1)")
        if self.update_form in ("exp", "rational") and self.c4 <= 0:
            raise ValueError("c4 must be positive")
        if self.update_form == "constant" and not (0.0 <= self.u_constant < 1.0):
            raise ValueError("constant update ratio must lie in [0, 1)")

    def alpha(self, t: int) -> float:
        return 1.0 / (1.0 + t / self.c1)

    def epsilon(self, learner: int, t: int) -> float:
        return max(self.epsilon_decays[learner] ** t, self.c3)

    def update_ratio(self, t: int) -> float:
        if self.update_form == "constant":
            return self.u_constant
        if self.update_form == "exp":
            return 1.0 - math.exp(-t / self.c4)
        if self.update_form == "rational":
            return 1.0 - 1.0 / (1.0 + t / self.c4)
        return 1.0 - self.c4 ** t

    def with_learners(self, K: int) -> "ScheduleSet":
        """Copy with epsilon decays extended/truncated to K learners."""
        decays = self.epsilon_decays
        if len(decays) < K:
            decays = decays + (decays[-1],) * (K - len(decays))
        return ScheduleSet(
            c1=self.c1,
            epsilon_decays=decays[:K],
            c3=self.c3,
            update_form=self.update_form,
            c4=self.c4,
            u_constant=self.u_constant,
        )


def q_update(q: QTable, s: int, a: int, sp: int, cost: float, alpha: float,
             gamma: float) -> QTable:
    """One Bellman sample update; returns a new table, input untouched."""
    out = np.array(q, dtype=float)
    _q_update_inplace(out, s, a, sp, cost, alpha, gamma)
    return out


def _q_update_inplace(q: np.ndarray, s: int, a: int, sp: int, cost: float,
                      alpha: float, gamma: float) -> None:
    q[s, a] = (1.0 - alpha) * q[s, a] + alpha * (cost + gamma * q[sp].min())


def epsilon_greedy_action(q: QTable, s: int, epsilon: float,
                          rng: np.random.Generator) -> int:
    """Uniform-random action w.p. epsilon, else the cost-minimizing one."""
    if not (0.0 <= epsilon <= 1.0):
        raise ValueError("epsilon must lie in [0, 1]")
    num_actions = q.shape[1]
    if rng.random() < epsilon:
        return int(rng.integers(num_actions))
    return int(np.argmin(q[s]))


def q_to_probabilities(q_row: np.ndarray) -> np.ndarray:
    """Negative softmax of a Q-row: smaller Q-values get larger mass.

    Shifted by the row minimum so large Q-values cannot overflow.
    """
    q_row = np.asarray(q_row, dtype=float)
    z = np.exp(-(q_row - q_row.min(axis=-1, keepdims=True)))
    return z / z.sum(axis=-1, keepdims=True)


def jsd(p: np.ndarray, q: np.ndarray) -> float:
    """Jensen-Shannon divergence with base-2 logarithms; range [0, 1]."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError("distributions must have the same length")
    if np.any(p < 0) or np.any(q < 0):
        raise ValueError("distributions must be nonnegative")
    m = 0.5 * (p + q)
    val = 0.5 * (rel_entr(p, m).sum() + rel_entr(q, m).sum()) / _LN2
    return float(min(max(val, 0.0), 1.0))


def _jsd_rows(P: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Row-wise JSD between two (..., S, A) probability tables."""
    m = 0.5 * (P + Q)
    val = 0.5 * (rel_entr(P, m).sum(axis=-1) + rel_entr(Q, m).sum(axis=-1)) / _LN2
    return np.clip(val, 0.0, 1.0)


def ajsd(qhat_ref: np.ndarray, qhat_other: np.ndarray) -> float:
    """State-averaged JSD between two per-state probability tables."""
    qhat_ref = np.asarray(qhat_ref, dtype=float)
    qhat_other = np.asarray(qhat_other, dtype=float)
    if qhat_ref.shape != qhat_other.shape:
        raise ValueError("probability tables must have the same shape")
    return float(_jsd_rows(qhat_ref, qhat_other).mean())


def _softmax(x: np.ndarray) -> np.ndarray:
    z = np.exp(x - np.max(x))
    return z / z.sum()


def compute_weights(q_tables: list[QTable] | np.ndarray) -> np.ndarray:
    """Ensemble weights: softmax of (1 - AJSD to the first learner).

    The first learner's raw score is exactly 1; raw scores lie in [0, 1],
    so every output weight lies in [1/(1+(K-1)e), e/(e+K-1)].
    """
    probs = np.stack([q_to_probabilities(np.asarray(q, dtype=float)) for q in q_tables])
    return _weights_from_probs(probs)


def _weights_from_probs(probs: np.ndarray) -> np.ndarray:
    raw = 1.0 - _jsd_rows(probs[:1], probs).mean(axis=-1)
    raw[0] = 1.0
    return _softmax(raw)


def ensemble_update(q_it: QTable, q_tables, w: np.ndarray, u_t: float) -> QTable:
    """Convex blend of the previous iterate with the weighted learner sum."""
    if not (0.0 <= u_t <= 1.0):
        raise ValueError("update ratio must lie in [0, 1]")
    w = np.asarray(w, dtype=float)
    if abs(w.sum() - 1.0) > 1e-9:
        raise ValueError("weights must lie on the simplex")
    stacked = np.stack([np.asarray(q, dtype=float) for q in q_tables])
    return u_t * np.asarray(q_it, dtype=float) + (1.0 - u_t) * np.einsum(
        "k,ksa->sa", w, stacked
    )


def _ape_greedy(q_it: np.ndarray, q_star: np.ndarray, tol: float) -> float:
    pi_hat = np.argmin(q_it, axis=1)
    chosen = q_star[np.arange(q_star.shape[0]), pi_hat]
    return float(np.mean(chosen > q_star.min(axis=1) + tol))


@dataclass
class EnsembleResult:
    q_it: QTable
    policy: Policy
    log: MetricsLog
    learner_qs: list[QTable]
    complete: bool


def run_neql(
    envs: list[TabularEnvironment],
    schedules: ScheduleSet,
    gamma: float,
    v: int,
    l: int,
    seed: int,
    q_star: QTable | None = None,
    probe_cells: tuple[tuple[int, int], ...] = (),
    max_iters: int = 200_000,
    ape_tol: float = 1e-9,
    track_learner_errors: bool = False,
) -> EnsembleResult:
    """Train K parallel Q-learners on the given environments and fuse them.

    ``envs[0]`` must be the original environment (its samples drive the
    visit-count termination rule). Every trajectory all learners restart
    from a common uniform-random state; within it each learner draws its
    own action under its own epsilon schedule. Weights and the fused
    iterate are refreshed at every time step.

    Each learner owns a private generator spawned from (seed, learner
    index), so results do not depend on execution order.
    """
    DiscountFactor(gamma)
    K = len(envs)
    if K < 1:
        raise ValueError("need at least one environment")
    S, A = envs[0].num_states, envs[0].num_actions
    schedules = schedules.with_learners(K)

    driver_rng = np.random.default_rng(np.random.SeedSequence([seed, 0xD01]))
    learner_rngs = [
        np.random.default_rng(np.random.SeedSequence([seed, 0x1EA, k])) for k in range(K)
    ]

    qs = [np.zeros((S, A)) for _ in range(K)]
    probs = np.full((K, S, A), 1.0 / A)
    q_it = np.zeros((S, A))
    # Random initial weights only matter before the first divergence-based
    # refresh, which happens at t = 0 already.
    w = _softmax(driver_rng.uniform(size=K))
    visits = np.zeros((S, A), dtype=np.int64)
    states = np.zeros(K, dtype=int)

    log = MetricsLog(
        num_learners=K,
        probe_cells=tuple(tuple(c) for c in probe_cells),
        seed=seed,
        track_learner_errors=track_learner_errors,
    )
    probe_idx = tuple(zip(*log.probe_cells)) if log.probe_cells else None

    t = 0
    complete = False
    while t < max_iters:
        if visits.size and visits.min() >= v:
            complete = True
            break
        s0 = int(driver_rng.integers(S))
        states[:] = s0
        for _ in range(l):
            alpha = schedules.alpha(t)
            for k in range(K):
                s = int(states[k])
                eps = schedules.epsilon(k, t)
                a = epsilon_greedy_action(qs[k], s, eps, learner_rngs[k])
                sp, cost = envs[k].step(s, a, learner_rngs[k])
                _q_update_inplace(qs[k], s, a, sp, cost, alpha, gamma)
                probs[k, s] = q_to_probabilities(qs[k][s])
                if k == 0:
                    visits[s, a] += 1
                states[k] = sp
            w = _weights_from_probs(probs)
            u_t = schedules.update_ratio(t)
            q_it = u_t * q_it + (1.0 - u_t) * np.einsum("k,ksa->sa", w, np.stack(qs))

            ape = np.nan
            ens_err = None
            lrn_err = None
            if q_star is not None:
                ape = _ape_greedy(q_it, q_star, ape_tol)
                if probe_idx:
                    ens_err = q_it[probe_idx] - q_star[probe_idx]
                    if track_learner_errors:
                        lrn_err = np.stack(
                            [qs[k][probe_idx] - q_star[probe_idx] for k in range(K)]
                        )
            log.append(t, u_t, w, ape, ens_err, lrn_err)
            t += 1
            if t >= max_iters:
                break

    log.incomplete = not complete
    policy = greedy_policy_from_q(q_it)
    return EnsembleResult(q_it=q_it, policy=policy, log=log, learner_qs=qs,
                          complete=complete)


def run_neql_pipeline(
    original_env: TabularEnvironment,
    cfg: SamplingConfig,
    schedules: ScheduleSet,
    gamma: float,
    seed: int,
    **kwargs,
) -> EnsembleResult:
    """Estimate the model, synthesize the n-hop family, then train.

    The order-1 learner interacts with the true original environment (the
    online half); higher orders run on the synthesized dynamics (offline).
    """
    est_rng = np.random.default_rng(np.random.SeedSequence([seed, 0xE57]))
    model = estimate_model(original_env, cfg, est_rng)
    envs = build_multiscale_envs(model, cfg.order_set, base_seed=seed)
    envs[cfg.order_set.index(1)] = original_env
    return run_neql(
        envs,
        schedules,
        gamma,
        v=cfg.min_visits,
        l=cfg.trajectory_length,
        seed=seed,
        **kwargs,
    )


def run_simple_q(
    env: TabularEnvironment,
    schedules: ScheduleSet,
    gamma: float,
    v: int,
    l: int,
    seed: int,
    q_star: QTable | None = None,
    probe_cells: tuple[tuple[int, int], ...] = (),
    max_iters: int = 200_000,
    ape_tol: float = 1e-9,
) -> EnsembleResult:
    """Single-environment epsilon-greedy Q-learning baseline.

    Same termination rule and schedules as the ensemble run, with the
    learner's own table doubling as the output iterate.
    """
    DiscountFactor(gamma)
    S, A = env.num_states, env.num_actions
    schedules = schedules.with_learners(1)
    driver_rng = np.random.default_rng(np.random.SeedSequence([seed, 0xD01]))
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x1EA, 0]))

    q = np.zeros((S, A))
    visits = np.zeros((S, A), dtype=np.int64)
    log = MetricsLog(num_learners=1, probe_cells=tuple(tuple(c) for c in probe_cells),
                     seed=seed)
    probe_idx = tuple(zip(*log.probe_cells)) if log.probe_cells else None

    t = 0
    complete = False
    while t < max_iters:
        if visits.min() >= v:
            complete = True
            break
        s = int(driver_rng.integers(S))
        for _ in range(l):
            alpha = schedules.alpha(t)
            eps = schedules.epsilon(0, t)
            a = epsilon_greedy_action(q, s, eps, rng)
            sp, cost = env.step(s, a, rng)
            _q_update_inplace(q, s, a, sp, cost, alpha, gamma)
            visits[s, a] += 1
            s = sp
            ape = np.nan
            ens_err = None
            if q_star is not None:
                ape = _ape_greedy(q, q_star, ape_tol)
                if probe_idx:
                    ens_err = q[probe_idx] - q_star[probe_idx]
            log.append(t, 0.0, [1.0], ape, ens_err)
            t += 1
            if t >= max_iters:
                break

    log.incomplete = not complete
    return EnsembleResult(q_it=q, policy=greedy_policy_from_q(q), log=log,
                          learner_qs=[q], complete=complete)


@dataclass
class ViEnsembleResult:
    v_it: ValueFunction
    policy: Policy
    log: MetricsLog
    complete: bool


def run_vi_ensemble(
    original_env: TabularEnvironment,
    cfg: SamplingConfig,
    schedules: ScheduleSet,
    gamma: float,
    seed: int,
    max_iters: int = 300,
    rebuild_every: int = 10,
    vi_tol: float = 1e-8,
    v_star: ValueFunction | None = None,
    conv_tol: float = 0.0,
) -> ViEnsembleResult:
    """Model-based variant: blend exact value-iteration solutions instead
    of sampled Q-updates.

    Sampling refreshes the kernel estimate continuously; the n-hop tensors
    are rebuilt every ``rebuild_every`` iterations; per-environment value
    functions are fused with softmax(-l2 distance to the order-1 solution)
    weights and the same exploitation-ratio blend.
    """
    DiscountFactor(gamma)
    S, A = original_env.num_states, original_env.num_actions
    orders = cfg.order_set
    K = len(orders)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xBE]))

    counts = np.zeros((S, S, A), dtype=np.int64)
    cost_sums = np.zeros((S, A))
    cost_counts = np.zeros((S, A), dtype=np.int64)
    prior = 1.0 / S

    p_hats: list[np.ndarray] | None = None
    c_hat = np.array(original_env.costs.expected_costs)
    v_funcs = [np.zeros(S) for _ in range(K)]
    v_it = np.zeros(S)
    log = MetricsLog(num_learners=K, seed=seed)

    complete = False
    for t in range(max_iters):
        s = original_env.reset(rng)
        for _ in range(cfg.trajectory_length):
            a = int(rng.integers(A))
            sp, cost = original_env.step(s, a, rng)
            counts[s, sp, a] += 1
            cost_sums[s, a] += cost
            cost_counts[s, a] += 1
            s = sp

        if p_hats is None or t % rebuild_every == 0:
            base = np.empty((S, S, A))
            for a in range(A):
                base[:, :, a] = row_normalize(counts[:, :, a] + prior)
            base_ptt = ProbabilityTransitionTensor(base)
            visited = cost_counts > 0
            c_hat = np.where(visited, cost_sums / np.maximum(cost_counts, 1),
                             original_env.costs.expected_costs)
            p_hats = [base_ptt if n == 1 else matrix_power_ptt(base_ptt, n)
                      for n in orders]

        cost_model = CostModel(expected_costs=c_hat)
        for k, ptt in enumerate(p_hats):
            v_funcs[k], _, _ = value_iteration(
                ptt, cost_model, gamma, tol=vi_tol, v0=v_funcs[k]
            )
        dists = np.array([np.linalg.norm(v_funcs[0] - vf) for vf in v_funcs])
        w = _softmax(-dists)
        u_t = schedules.update_ratio(t)
        v_prev = v_it
        v_it = u_t * v_it + (1.0 - u_t) * sum(wk * vf for wk, vf in zip(w, v_funcs))
        err = np.nan if v_star is None else float(np.max(np.abs(v_it - v_star)))
        log.append(t, u_t, w, err)
        if conv_tol > 0 and t > 0 and np.max(np.abs(v_it - v_prev)) < conv_tol:
            complete = True
            break
    else:
        complete = conv_tol == 0.0

    q = c_hat + gamma * np.einsum("ija,j->ia", p_hats[0].entries, v_it)
    return ViEnsembleResult(v_it=v_it, policy=greedy_policy_from_q(q), log=log,
                            complete=complete)
