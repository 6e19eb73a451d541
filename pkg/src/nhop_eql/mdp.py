# Exact tabular MDP structures and dynamic-programming solvers.
# These are the ground-truth oracles everything else is checked against.
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

logger = logging.getLogger(__name__)

# A deterministic stationary policy is an int array of shape (S,),
# a Q-table a float array of shape (S, A), a value function a float
# array of shape (S,).
Policy = np.ndarray
QTable = np.ndarray
ValueFunction = np.ndarray

STOCHASTIC_TOL = 1e-9          # after construction
STOCHASTIC_TOL_POWERED = 1e-6  # after repeated matrix powers


class ConvergenceError(RuntimeError):
    """Raised when an iterative solver fails to reach its tolerance."""

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


def _as_readonly(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(np.asarray(arr, dtype=float))
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class ProbabilityTransitionTensor:
    """Per-action stack of row-stochastic transition matrices.

    ``entries[s, sp, a]`` is the probability of moving from ``s`` to ``sp``
    under action ``a``.
    """

    entries: np.ndarray

    def __post_init__(self):
        arr = _as_readonly(self.entries)
        if arr.ndim != 3 or arr.shape[0] != arr.shape[1]:
            raise ValueError(f"expected (S, S, A) tensor, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[2] < 1:
            raise ValueError("state and action counts must be positive")
        object.__setattr__(self, "entries", arr)

    @property
    def num_states(self) -> int:
        return self.entries.shape[0]

    @property
    def num_actions(self) -> int:
        return self.entries.shape[2]

    def action_matrix(self, a: int) -> np.ndarray:
        """The (S, S) transition matrix of action ``a``."""
        return self.entries[:, :, a]

    @cached_property
    def row_cumsums(self) -> np.ndarray:
        """Cumulative row distributions, shape (S, A, S); used for sampling."""
        cum = np.cumsum(np.transpose(self.entries, (0, 2, 1)), axis=-1)
        cum[..., -1] = 1.0
        cum.setflags(write=False)
        return cum


@dataclass(frozen=True)
class CostModel:
    """Stage costs: per-transition costs and/or expected per-(s, a) costs.

    ``transition_costs[s, sp, a]`` is the cost of the realized transition;
    ``expected_costs[s, a]`` its mean under the transition kernel. Either
    may be omitted (``None``) when the environment only defines the other.
    """

    expected_costs: np.ndarray
    transition_costs: np.ndarray | None = None

    def __post_init__(self):
        exp = _as_readonly(self.expected_costs)
        if exp.ndim != 2:
            raise ValueError(f"expected_costs must be (S, A), got {exp.shape}")
        if not np.all(np.isfinite(exp)):
            raise ValueError("expected costs must be finite")
        object.__setattr__(self, "expected_costs", exp)
        if self.transition_costs is not None:
            tc = _as_readonly(self.transition_costs)
            if tc.shape != (exp.shape[0], exp.shape[0], exp.shape[1]):
                raise ValueError("transition_costs must be (S, S, A)")
            if not np.all(np.isfinite(tc)):
                raise ValueError("transition costs must be finite")
            object.__setattr__(self, "transition_costs", tc)

    @property
    def num_states(self) -> int:
        return self.expected_costs.shape[0]

    @property
    def num_actions(self) -> int:
        return self.expected_costs.shape[1]

    def check_consistency(self, ptt: ProbabilityTransitionTensor, tol: float = 1e-9) -> bool:
        """True if expected costs match the kernel-weighted transition costs."""
        if self.transition_costs is None:
            return True
        implied = np.einsum("ija,ija->ia", ptt.entries, self.transition_costs)
        return bool(np.max(np.abs(implied - self.expected_costs)) <= tol)


@dataclass(frozen=True)
class DiscountFactor:
    gamma: float

    def __post_init__(self):
        if not (0.0 < self.gamma < 1.0):
            raise ValueError(f"discount factor must lie strictly in (0, 1), got {self.gamma}")


@dataclass
class PttValidationReport:
    ok: bool
    tol: float
    failures: list[tuple[int, int, float, float]] = field(default_factory=list)
    # each failure: (s, a, row_sum, min_entry)


def validate_ptt(P: ProbabilityTransitionTensor, tol: float = STOCHASTIC_TOL) -> PttValidationReport:
    """Check every (s, a) row is nonnegative and sums to 1 within ``tol``."""
    sums = P.entries.sum(axis=1)                    # (S, A)
    mins = P.entries.min(axis=1)                    # (S, A)
    bad = (np.abs(sums - 1.0) > tol) | (mins < -tol)
    report = PttValidationReport(ok=not bad.any(), tol=tol)
    for s, a in zip(*np.nonzero(bad)):
        report.failures.append((int(s), int(a), float(sums[s, a]), float(mins[s, a])))
    return report


def row_normalize(M: np.ndarray) -> np.ndarray:
    """Normalize each row of a nonnegative matrix to sum to 1.

    All-zero rows are replaced by the uniform row (with a logged warning):
    degenerate inputs should still yield a valid transition matrix.
    """
    M = np.asarray(M, dtype=float)
    if np.any(M < 0):
        raise ValueError("row_normalize requires nonnegative entries")
    sums = M.sum(axis=1, keepdims=True)
    zero_rows = sums[:, 0] == 0.0
    if zero_rows.any():
        logger.warning("row_normalize: %d all-zero row(s) replaced by uniform", int(zero_rows.sum()))
    out = np.where(zero_rows[:, None], 1.0 / M.shape[1], np.divide(M, sums, where=sums > 0))
    return out


def matrix_power_ptt(P: ProbabilityTransitionTensor, n: int) -> ProbabilityTransitionTensor:
    """Raise each per-action transition matrix to the n-th power."""
    if n < 1:
        raise ValueError("matrix power order must be >= 1")
    if n == 1:
        return P
    powered = np.empty_like(np.asarray(P.entries))
    for a in range(P.num_actions):
        powered[:, :, a] = np.linalg.matrix_power(P.action_matrix(a), n)
    return ProbabilityTransitionTensor(powered)


def value_iteration(
    P: ProbabilityTransitionTensor,
    C: CostModel,
    gamma: float,
    tol: float = 1e-10,
    max_iters: int = 100_000,
    v0: ValueFunction | None = None,
) -> tuple[ValueFunction, Policy, QTable]:
    """Solve the cost-minimizing Bellman optimality equation.

    Returns (v, policy, q) with Bellman residual below ``tol``;
    ``policy`` is the argmin of ``q`` with lowest-index tie-breaking.
    """
    DiscountFactor(gamma)
    costs = C.expected_costs
    v = np.zeros(P.num_states) if v0 is None else np.array(v0, dtype=float)
    residual = np.inf
    for _ in range(max_iters):
        q = costs + gamma * np.einsum("ija,j->ia", P.entries, v)
        v_next = q.min(axis=1)
        residual = float(np.max(np.abs(v_next - v)))
        v = v_next
        if residual < tol:
            break
    else:
        raise ConvergenceError(
            f"value iteration did not converge in {max_iters} iterations", residual
        )
    q = costs + gamma * np.einsum("ija,j->ia", P.entries, v)
    policy = np.argmin(q, axis=1)
    return q.min(axis=1), policy, q


def policy_q_evaluation(
    P: ProbabilityTransitionTensor,
    C: CostModel,
    gamma: float,
    pi: Policy,
    tol: float = 1e-8,
    direct_solve_limit: int = 2000,
) -> QTable:
    """Exact Q-values of a fixed deterministic policy.

    Solves the linear policy-evaluation system for the per-state values and
    expands to (s, a):  Q(s, a) = c_a(s) + gamma * sum_s' p_a(s, s') V(s').
    Uses a direct solve up to ``direct_solve_limit`` states, a damped
    fixed-point iteration above (the closed form is exact but cubic).
    """
    DiscountFactor(gamma)
    S = P.num_states
    pi = np.asarray(pi, dtype=int)
    if pi.shape != (S,) or pi.min() < 0 or pi.max() >= P.num_actions:
        raise ValueError("policy must assign a valid action to every state")
    idx = np.arange(S)
    P_pi = P.entries[idx, :, pi]                    # (S, S)
    c_pi = C.expected_costs[idx, pi]                # (S,)
    if S <= direct_solve_limit:
        V = np.linalg.solve(np.eye(S) - gamma * P_pi, c_pi)
    else:
        V = np.zeros(S)
        for _ in range(1_000_000):
            V_next = c_pi + gamma * (P_pi @ V)
            if np.max(np.abs(V_next - V)) < tol * (1.0 - gamma):
                V = V_next
                break
            V = V_next
    residual = float(np.max(np.abs(c_pi + gamma * (P_pi @ V) - V)))
    if residual > tol:
        raise ConvergenceError("policy evaluation residual above tolerance", residual)
    return C.expected_costs + gamma * np.einsum("ija,j->ia", P.entries, V)


def greedy_policy_from_q(Q: QTable) -> Policy:
    """Cost-minimizing action per state; ties break to the lowest index."""
    Q = np.asarray(Q, dtype=float)
    if not np.all(np.isfinite(Q)):
        raise ValueError("Q-table must be finite")
    return np.argmin(Q, axis=1)


# ---------------------------------------------------------------------------
# Plain-text tensor serialization (fixture interchange format).
#
#   # nhop-eql tensor v1
#   S A
#   s sp a value      (3-d tensors, one record per nonzero entry)
#   s a value         (2-d matrices)
# ---------------------------------------------------------------------------

_TENSOR_MAGIC = "# nhop-eql tensor v1"


def save_tensor_text(path, arr: np.ndarray) -> None:
    arr = np.asarray(arr, dtype=float)
    if arr.ndim not in (2, 3):
        raise ValueError("only 2-d and 3-d arrays are supported")
    lines = [_TENSOR_MAGIC, " ".join(str(d) for d in arr.shape)]
    for index in zip(*np.nonzero(arr)):
        value = float(arr[index])
        lines.append(" ".join(str(int(i)) for i in index) + f" {value!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_tensor_text(path) -> np.ndarray:
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or lines[0] != _TENSOR_MAGIC:
        raise ValueError(f"{path}: not a tensor text file")
    shape = tuple(int(tok) for tok in lines[1].split())
    arr = np.zeros(shape)
    for ln in lines[2:]:
        toks = ln.split()
        idx = tuple(int(tok) for tok in toks[:-1])
        if len(idx) != len(shape):
            raise ValueError(f"{path}: record rank does not match header dims")
        arr[idx] = float(toks[-1])
    return arr


def enumerate_policies(num_states: int, num_actions: int) -> Sequence[Policy]:
    """All deterministic stationary policies (use only on tiny MDPs)."""
    grids = np.meshgrid(*[np.arange(num_actions)] * num_states, indexing="ij")
    flat = np.stack([g.ravel() for g in grids], axis=1)
    return [flat[i] for i in range(flat.shape[0])]
