"""Entropic optimal transport oracle for endpoint couplings.

With cost c(x_0, x_1) = -log of the reference's full-horizon transition
probability, the coupling minimizing  E_q[c] - H(q)  over couplings with the
prescribed marginals is exactly the endpoint plan of the bridge problem, so a
Sinkhorn solve provides an independent target for the alternating-projection
driver.  Costs routinely reach several hundred in magnitude (they are minus
logs of near-underflow probabilities), so all scaling runs in log space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, xlogy

from .core import (
    CategoricalDistribution,
    Coupling,
    SpaceMismatch,
    entropy,
)
from .reference import ReferenceProcess


class ZeroTransition(ValueError):
    """The reference assigns zero mass to some endpoint pair, so its cost is infinite."""


class NoConvergence(RuntimeError):
    """Sinkhorn failed to reach the marginal tolerance within the iteration cap."""


@dataclass(frozen=True, eq=False)
class EotProblem:
    """Marginal pair plus a finite cost table over flat endpoint states."""

    p0: CategoricalDistribution
    p1: CategoricalDistribution
    cost: np.ndarray

    def __post_init__(self) -> None:
        if self.p0.space != self.p1.space:
            raise SpaceMismatch("marginals live on different spaces")
        k = self.p0.space.num_states
        arr = np.array(self.cost, dtype=np.float64, copy=True)
        if arr.shape != (k, k):
            raise ValueError(f"cost must have shape ({k}, {k})")
        if not np.all(np.isfinite(arr)):
            raise ValueError("cost entries must be finite")
        arr.flags.writeable = False
        object.__setattr__(self, "cost", arr)

    @property
    def space(self):
        return self.p0.space


def cost_from_reference(ref: ReferenceProcess) -> np.ndarray:
    """Endpoint cost -log C[0 -> N+1], summed over dimensions.

    The joint table has S^D rows and columns; dimension d of the endpoints
    contributes -log of the per-dimension full-horizon transition.
    """
    log_total = ref.log_cum(0, ref.grid.num_transitions)
    if not np.all(np.isfinite(log_total)):
        raise ZeroTransition("reference cannot join some endpoint pair in finite cost")
    per_dim = -log_total
    k = ref.space.num_states
    s = ref.space.num_categories
    d = ref.space.num_dimensions
    cost = np.zeros((s,) * (2 * d))
    for axis in range(d):
        shape = [1] * (2 * d)
        shape[axis] = s
        shape[d + axis] = s
        cost = cost + per_dim.reshape(shape)
    return cost.reshape(k, k)


def _sinkhorn_log(log_a: np.ndarray, log_b: np.ndarray, neg_cost: np.ndarray,
                  max_iters: int, tol: float,
                  strict: bool = True) -> tuple[np.ndarray, np.ndarray, int]:
    """Log-domain scaling: returns potentials (u, v) and iterations used.

    Each round updates v from the column constraint and then u from the row
    constraint, so rows match exactly on exit; convergence is declared when
    the column marginal is within ``tol`` in total variation.  With
    ``strict`` off the best-effort potentials come back instead of an error.
    """
    u = np.zeros(neg_cost.shape[0])
    v = np.zeros(neg_cost.shape[1])
    b = np.exp(log_b)
    for it in range(1, max_iters + 1):
        v = log_b - logsumexp(neg_cost + u[:, None], axis=0)
        u = log_a - logsumexp(neg_cost + v[None, :], axis=1)
        col = np.exp(logsumexp(neg_cost + u[:, None] + v[None, :], axis=0))
        if 0.5 * float(np.abs(col - b).sum()) <= tol:
            return u, v, it
    if strict:
        raise NoConvergence(
            f"marginal tolerance {tol} not reached in {max_iters} iterations")
    return u, v, max_iters


def sinkhorn_solve(problem: EotProblem, max_iters: int = 200_000,
                   marginal_tol: float = 1e-10) -> Coupling:
    """Entropically optimal coupling by log-domain Sinkhorn scaling.

    Requires full-support marginals.  The returned plan satisfies both
    marginal constraints within ``marginal_tol`` in total variation and has
    the form exp(u(x_0) + v(x_1) - c(x_0, x_1)).
    """
    if float(problem.p0.probs.min()) <= 0.0 or float(problem.p1.probs.min()) <= 0.0:
        raise ValueError("sinkhorn scaling requires full-support marginals")
    log_a = np.log(problem.p0.probs)
    log_b = np.log(problem.p1.probs)
    u, v, _ = _sinkhorn_log(log_a, log_b, -problem.cost, max_iters, marginal_tol)
    plan = np.exp(u[:, None] + v[None, :] - problem.cost)
    return Coupling(problem.space, plan / plan.sum())


def eot_objective(plan: Coupling, problem: EotProblem) -> float:
    """Transport cost minus entropy, E_q[c] - H(q)."""
    if plan.space != problem.space:
        raise SpaceMismatch("plan and problem live on different spaces")
    return float((plan.probs * problem.cost).sum()) - entropy(plan)


def plan_optimality_check(plan: Coupling, problem: EotProblem, tol: float = 1e-9,
                          num_alternatives: int = 100,
                          rng: np.random.Generator | None = None) -> bool:
    """True when the plan's objective beats random feasible alternatives.

    Alternatives are produced by perturbing the cost with gaussian noise and
    re-solving at a loose tolerance, which lands on couplings with the same
    marginals; the independent coupling is always included.  Every alternative
    must score at least ``objective(plan) - tol``.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    base = eot_objective(plan, problem)
    scale = max(1.0, float(np.ptp(problem.cost)) / 10.0)
    candidates = [Coupling.independent(problem.p0, problem.p1)]
    for _ in range(num_alternatives - 1):
        noisy = problem.cost + rng.normal(0.0, scale, size=problem.cost.shape)
        alt = EotProblem(problem.p0, problem.p1, noisy)
        candidates.append(sinkhorn_solve(alt, max_iters=50_000, marginal_tol=1e-6))
    return all(eot_objective(c, problem) >= base - tol for c in candidates)


def plan_csv(plan: Coupling) -> str:
    """Dense plan as CSV text with header ``x0,x1,prob``."""
    lines = ["x0,x1,prob"]
    k = plan.space.num_states
    for i in range(k):
        row = plan.probs[i]
        for j in range(k):
            lines.append(f"{i},{j},{float(row[j])!r}")
    return "\n".join(lines) + "\n"


def write_plan_csv(plan: Coupling, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(plan_csv(plan))
