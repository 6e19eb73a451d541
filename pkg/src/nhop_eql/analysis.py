# Metrics and executable theory checks: policy error, windowed error
# moments, closed-form variance/distance bounds, Q-function ordering, and
# dependence diagnostics.
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .environments import TabularEnvironment
from .mdp import Policy, QTable, policy_q_evaluation
from .metrics import MetricsLog, atomic_write_text


def ape(pi_star: Policy, pi_hat: Policy, q_star: QTable, tol: float = 1e-9) -> float:
    """Fraction of states whose chosen action is not optimal.

    Tie-tolerant: a state counts as correct when its action attains the
    optimal Q-value within ``tol``; with ``tol=0`` this is the strict
    disagreement indicator against ``pi_star``.
    """
    pi_star = np.asarray(pi_star, dtype=int)
    pi_hat = np.asarray(pi_hat, dtype=int)
    if pi_star.shape != pi_hat.shape:
        raise ValueError("policies must cover the same state space")
    if tol <= 0.0:
        return float(np.mean(pi_star != pi_hat))
    q_star = np.asarray(q_star, dtype=float)
    chosen = q_star[np.arange(q_star.shape[0]), pi_hat]
    return float(np.mean(chosen > q_star.min(axis=1) + tol))


def error_moments(trace: np.ndarray, t: int, delta_t: int) -> tuple[float, float]:
    """Mean and variance of a trace over the window [t - delta_t, t + delta_t]."""
    trace = np.asarray(trace, dtype=float)
    lo, hi = t - delta_t, t + delta_t
    if lo < 0 or hi >= trace.shape[0]:
        raise ValueError("window extends beyond the trace")
    window = trace[lo : hi + 1]
    mean = float(window.mean())
    return mean, float(np.mean(window**2) - mean**2)


@dataclass(frozen=True)
class BoundParams:
    u: float
    lam: float
    K: int = 2
    gamma: float = 0.95
    n: int = 2
    cost_norm: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.u < 1.0):
            raise ValueError("u must lie in (0, 1)")
        if self.lam <= 0:
            raise ValueError("lambda must be positive")


def prop1_bound(p: BoundParams) -> float:
    """Limit error-variance bound under independent learner errors."""
    return (1.0 - p.u) / (1.0 + p.u) * p.lam**2


def cor2_bound(p: BoundParams) -> float:
    """Variance bound without the independence assumption (always looser)."""
    return 2.0 * p.lam**2 / (1.0 + p.u) ** 2 + prop1_bound(p)


def prop3_bound(p: BoundParams) -> float:
    """Bound on the l2 distance between order-1 and order-n Q-functions."""
    if p.n <= 1:
        raise ValueError("order n must exceed 1")
    g = p.gamma
    return g / (1.0 - g**p.n) * (1.0 - g ** (p.n - 1)) / (1.0 - g) * p.cost_norm


@dataclass
class CheckRow:
    check: str
    instance: str
    statistic: str
    value: float
    threshold: float = np.nan
    passed: bool | None = None       # None = informational, not asserted

    def csv(self) -> str:
        status = "" if self.passed is None else str(int(self.passed))
        flag = "informational" if self.passed is None else "asserted"
        return (f"{self.check},{self.instance},{self.statistic},"
                f"{self.value:.12g},{self.threshold:.12g},{status},{flag}")


@dataclass
class CheckReport:
    rows: list[CheckRow] = field(default_factory=list)

    def add(self, *args, **kwargs) -> CheckRow:
        row = CheckRow(*args, **kwargs)
        self.rows.append(row)
        return row

    def extend(self, other: "CheckReport") -> None:
        self.rows.extend(other.rows)

    @property
    def ok(self) -> bool:
        return all(r.passed for r in self.rows if r.passed is not None)

    def to_csv(self, path) -> None:
        lines = ["# nhop-eql report v1",
                 "check,instance,statistic,value,threshold,pass,kind"]
        lines += [r.csv() for r in self.rows]
        atomic_write_text(path, "\n".join(lines) + "\n")


def check_prop3(
    env_list: list[TabularEnvironment],
    pi_hat: Policy,
    gamma: float,
) -> CheckReport:
    """Exact l2 distances between policy Q-functions vs their closed-form bound.

    ``env_list[0]`` must be the order-1 environment; all distances are
    strict-inequality asserted against the bound, the distance-vs-order
    profile itself is recorded as informational.
    """
    report = CheckReport()
    base = env_list[0]
    q1 = policy_q_evaluation(base.ptt, base.costs, gamma, pi_hat)
    c_pi = base.costs.expected_costs[np.arange(base.num_states), pi_hat]
    cost_norm = float(np.linalg.norm(c_pi))
    for env in env_list[1:]:
        qn = policy_q_evaluation(env.ptt, env.costs, gamma, pi_hat)
        dist = float(np.linalg.norm(q1 - qn))
        bound = prop3_bound(BoundParams(u=0.5, lam=1.0, gamma=gamma, n=env.label,
                                        cost_norm=cost_norm))
        report.add("prop3", f"n={env.label}", "q_distance_lt_bound", dist, bound,
                   dist < bound)
    return report


def check_prop4_ordering(
    env_list: list[TabularEnvironment],
    pi_hat: Policy,
    gamma_close_to_one: float = 1.0 - 1e-5,
    rel_tol: float = 1e-6,
) -> CheckReport:
    """Elementwise dominance chains of policy Q-functions in the gamma -> 1 limit.

    Each order-n environment is evaluated with effective discount gamma^n:
    one synthetic step spans n steps of the original chain, so its series
    expansion is the subsequence of the order-1 expansion at multiples of
    n. With nonnegative costs that makes the order-1 table elementwise
    largest and gives, for each doubling chain n, 2n, 4n, ... present in
    ``env_list``, elementwise dominance of the earlier table over the later
    (checked within a relative tolerance scaled by the Q magnitude).
    """
    report = CheckReport()
    by_order = {env.label: env for env in env_list}
    qs = {
        n: policy_q_evaluation(env.ptt, env.costs, gamma_close_to_one**n, pi_hat)
        for n, env in by_order.items()
    }
    scale = max(float(np.max(np.abs(q))) for q in qs.values())
    slack = rel_tol * scale

    orders = sorted(by_order)
    for n in orders:
        m = 2 * n
        while m in by_order:
            gap = float(np.min(qs[n] - qs[m]))
            report.add("prop4", f"{n}>={m}", "min_elementwise_gap", gap, -slack,
                       gap >= -slack)
            n, m = m, 2 * m
    if 1 in by_order:
        for n in orders:
            if n == 1:
                continue
            gap = float(np.min(qs[1] - qs[n]))
            report.add("prop4", f"1>={n}", "min_elementwise_gap", gap, -slack,
                       gap >= -slack)
    return report


def late_window_variance(errs: np.ndarray, delta_t: int = 20,
                         num_anchors: int = 5, tail_frac: float = 0.2) -> float:
    """Sliding-window error variance averaged over late anchor points.

    Short windows (2 * delta_t + 1 points) isolate the stochastic
    fluctuation of the error from its slow residual drift, which is shared
    across runs and would otherwise mask ensemble-size effects.
    """
    errs = np.asarray(errs, dtype=float).ravel()
    T = errs.shape[0]
    lo = max(delta_t, int((1.0 - tail_frac) * T))
    hi = T - 1 - delta_t
    if hi <= lo:
        raise ValueError("trace too short for the requested windows")
    anchors = np.linspace(lo, hi, num_anchors).astype(int)
    return float(np.mean([error_moments(errs, int(t), delta_t)[1] for t in anchors]))


def check_variance_vs_k(
    env_builder,
    K_list: list[int],
    seeds: list[int],
    budget: int,
    delta_t: int = 20,
    se_slack: float = 1.0,
) -> CheckReport:
    """Late-window ensemble-error variance trend across ensemble sizes.

    ``env_builder(K, seed)`` must return a ready-to-run closure producing a
    MetricsLog with at least one probe cell. Asserts the median sliding
    window variance is nonincreasing in K, allowing one inversion within
    ``se_slack`` standard errors; the diminishing-return gaps are reported
    as informational.
    """
    if sorted(K_list) != list(K_list):
        raise ValueError("K_list must be increasing")
    report = CheckReport()
    medians, ses = [], []
    for K in K_list:
        variances = []
        for seed in seeds:
            log = env_builder(K, seed)
            errs = log.ensemble_errors[:, 0]
            variances.append(late_window_variance(errs, delta_t))
        variances = np.asarray(variances)
        medians.append(float(np.median(variances)))
        ses.append(float(variances.std(ddof=1) / np.sqrt(len(variances))))
        report.add("variance_vs_k", f"K={K}", "median_window_variance", medians[-1])

    inversions = 0
    ok = True
    for i in range(1, len(medians)):
        if medians[i] > medians[i - 1]:
            if medians[i] - medians[i - 1] <= se_slack * ses[i]:
                inversions += 1
            else:
                ok = False
    if inversions > 1:
        ok = False
    report.add("variance_vs_k", "trend", "nonincreasing_median", float(ok), 1.0, ok)
    for i in range(1, len(medians)):
        report.add("variance_vs_k", f"K={K_list[i-1]}->{K_list[i]}",
                   "variance_reduction", medians[i - 1] - medians[i])
    return report


def distance_correlation(x: np.ndarray, y: np.ndarray) -> float:
    """Sample distance correlation between two scalar sequences.

    Doubly-centered pairwise-distance estimator; 1 for exact affine
    dependence, near 0 for independent samples. Zero-variance input gives 0.
    """
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.shape != y.shape or x.size < 2:
        raise ValueError("sequences must have equal length >= 2")

    def centered(z):
        d = np.abs(z[:, None] - z[None, :])
        return d - d.mean(axis=0) - d.mean(axis=1)[:, None] + d.mean()

    Ax, Ay = centered(x), centered(y)
    dcov2 = (Ax * Ay).mean()
    dvar_x = (Ax * Ax).mean()
    dvar_y = (Ay * Ay).mean()
    denom = np.sqrt(dvar_x * dvar_y)
    if denom <= 0.0:
        return 0.0
    return float(np.sqrt(max(dcov2, 0.0) / denom))


def adc_error_independence(
    trace: np.ndarray,
    lags: tuple[int, ...] = (1, 2, 5, 10, 20, 50),
    max_samples: int = 500,
) -> float:
    """Mean distance correlation between a trace and its lagged copies.

    Small values support treating the per-iteration errors at distinct
    times as independent; large lags that still correlate flag long-memory
    behavior. Series are subsampled to ``max_samples`` points to keep the
    quadratic estimator cheap.
    """
    trace = np.asarray(trace, dtype=float).ravel()
    vals = []
    for lag in lags:
        if lag >= trace.shape[0]:
            continue
        x, y = trace[:-lag], trace[lag:]
        if x.shape[0] > max_samples:
            idx = np.linspace(0, x.shape[0] - 1, max_samples).astype(int)
            x, y = x[idx], y[idx]
        vals.append(distance_correlation(x, y))
    if not vals:
        raise ValueError("trace too short for the requested lags")
    return float(np.mean(vals))


@dataclass
class WeightConvergenceReport:
    final_weights: np.ndarray
    convergence_iteration: int | None
    ordering: tuple[int, ...]        # learner indices sorted by final weight, desc


def weight_convergence(log: MetricsLog, window_frac: float = 0.2,
                       tol: float = 0.01) -> WeightConvergenceReport:
    """Locate the iteration after which the weight vector stops moving.

    Convergence index: first t such that every subsequent per-step weight
    change stays below ``tol`` over at least a ``window_frac`` stretch of
    the run.
    """
    w = log.weights
    T = w.shape[0]
    if T == 0:
        raise ValueError("log contains no weight trajectory")
    final = w[-1]
    ordering = tuple(int(i) for i in np.argsort(-final))
    if T == 1:
        return WeightConvergenceReport(final, 0, ordering)
    changes = np.max(np.abs(np.diff(w, axis=0)), axis=1)
    window = max(1, int(window_frac * T))
    quiet = changes < tol
    conv = None
    # suffix scan: first index where everything after stays quiet
    suffix_ok = np.flip(np.cumprod(np.flip(quiet)).astype(bool))
    idx = np.nonzero(suffix_ok)[0]
    if idx.size and (T - 1 - idx[0]) >= min(window, T - 1) - 1:
        conv = int(idx[0])
    return WeightConvergenceReport(final, conv, ordering)


def estimate_lambda(learner_errors: np.ndarray, window: slice) -> float:
    """Largest per-learner spread parameter from an early error window.

    ``learner_errors`` is the (T, K, n_probes) array from a MetricsLog; the
    spread parameterization matches a variance of lambda^2 / 3 per learner.
    """
    segment = learner_errors[window]
    if segment.size == 0:
        raise ValueError("empty estimation window")
    variances = np.var(segment, axis=0)        # (K, n_probes)
    return float(np.sqrt(3.0 * variances.max()))
