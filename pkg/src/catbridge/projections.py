"""Reciprocal and Markovian projections of discrete-time path measures.

A reciprocal process is stored extensionally as its endpoint coupling plus the
reference whose bridges fill in the interior; projecting onto the reciprocal
class therefore just swaps the bridges while keeping the coupling.  Projecting
onto the Markov class keeps every neighboring-pair joint

    W_n(u, v) = P(x_{t_{n-1}} = u, x_{t_n} = v)

and every time marginal, and rebuilds transitions as W_n normalized by its row
sums.  For a reciprocal process with coupling q and reference cumulative
products A = C[0 -> n-1], E = C[n -> N+1], T = C[0 -> N+1] (joint, product
over dimensions), the pair joint contracts to

    W_n = Q_n  *  (A^T (q / T) E^T)        (elementwise product and division),

because the bridge normalizers telescope.  These exact operations materialize
joint matrices over all S^D states and are intended for spaces small enough to
enumerate.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce

import numpy as np
from scipy.special import xlogy

from .core import (
    CategoricalDistribution,
    Coupling,
    MarkovChainProcess,
    SpaceMismatch,
    SupportMismatch,
    coupling_marginals,
    kl_couplings,
    kl_distributions,
)
from .reference import IndexOrder, ReferenceProcess, ZeroMassPath


class ZeroMarginal(ValueError):
    """A time marginal vanishes on a state whose transition row is needed."""


class ReferenceMismatch(ValueError):
    """Two reciprocal processes are built on different references."""


@dataclass(frozen=True, eq=False)
class ReciprocalProcess:
    """Endpoint coupling glued to the reference bridges between its endpoints."""

    coupling: Coupling
    ref: ReferenceProcess

    def __post_init__(self) -> None:
        if self.coupling.space != self.ref.space:
            raise SpaceMismatch("coupling and reference live on different spaces")

    @property
    def space(self):
        return self.ref.space

    @property
    def grid(self):
        return self.ref.grid


def same_reference(a: ReferenceProcess, b: ReferenceProcess) -> bool:
    """True when two references define the same per-step transition kernels."""
    return (
        a is b
        or (
            a.space == b.space
            and a.grid == b.grid
            and np.array_equal(a.log_transitions, b.log_transitions)
        )
    )


def reciprocal_projection(coupling: Coupling, ref: ReferenceProcess) -> ReciprocalProcess:
    """Closest reciprocal process: keep the coupling, use the reference bridges."""
    return ReciprocalProcess(coupling, ref)


def _joint_from_per_dim(mat: np.ndarray, num_dimensions: int) -> np.ndarray:
    """Product-space matrix of independent per-dimension dynamics (row-major)."""
    return reduce(np.kron, [mat] * num_dimensions)


def _joint_cumulative(ref: ReferenceProcess, a: int, b: int) -> np.ndarray:
    if a == b:
        return np.eye(ref.space.num_states)
    return _joint_from_per_dim(np.exp(ref.log_cum(a, b)), ref.space.num_dimensions)


def _joint_step(ref: ReferenceProcess, n: int) -> np.ndarray:
    return _joint_from_per_dim(np.exp(ref.log_transitions[n - 1]), ref.space.num_dimensions)


def _coupling_over_total(r: ReciprocalProcess) -> np.ndarray:
    total = _joint_cumulative(r.ref, 0, r.ref.grid.num_transitions)
    q = r.coupling.probs
    bad = (q > 0.0) & (total == 0.0)
    if np.any(bad):
        raise ZeroMassPath("coupling places mass on endpoint pairs the reference cannot join")
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(q > 0.0, q / total, 0.0)
    return ratio


def _pair_joint(r: ReciprocalProcess, n: int, ratio: np.ndarray) -> np.ndarray:
    last = r.ref.grid.num_transitions
    before = _joint_cumulative(r.ref, 0, n - 1)
    after = _joint_cumulative(r.ref, n, last)
    step = _joint_step(r.ref, n)
    return step * (before.T @ ratio @ after.T)


def pairwise_joint(r: ReciprocalProcess, n: int) -> np.ndarray:
    """Joint law of (x_{t_{n-1}}, x_{t_n}) as an S^D x S^D table, 1 <= n <= N+1."""
    last = r.ref.grid.num_transitions
    if not (1 <= n <= last):
        raise IndexOrder(f"pair index must satisfy 1 <= n <= N+1, got n={n}")
    if last == 1:
        return r.coupling.probs.copy()
    return _pair_joint(r, n, _coupling_over_total(r))


def endpoint_joint(r: ReciprocalProcess, j: int) -> np.ndarray:
    """Joint law of (x_{t_j}, x_1) as an S^D x S^D table, 0 <= j <= N+1."""
    last = r.ref.grid.num_transitions
    if not (0 <= j <= last):
        raise IndexOrder(f"time index must satisfy 0 <= j <= N+1, got j={j}")
    if j == 0:
        return r.coupling.probs.copy()
    ratio = _coupling_over_total(r)
    before = _joint_cumulative(r.ref, 0, j)
    after = _joint_cumulative(r.ref, j, last)
    return after * (before.T @ ratio) if j < last else np.diag((before.T @ ratio).diagonal())


def markovian_projection(r: ReciprocalProcess) -> MarkovChainProcess:
    """Markov chain matching every pair joint W_n and hence every time marginal."""
    last = r.ref.grid.num_transitions
    ratio = None if last == 1 else _coupling_over_total(r)
    transitions = []
    for n in range(1, last + 1):
        w = r.coupling.probs if last == 1 else _pair_joint(r, n, ratio)
        row_mass = w.sum(axis=1)
        if np.any(row_mass == 0.0):
            raise ZeroMarginal(f"time marginal at index {n - 1} vanishes on some state")
        transitions.append(w / row_mass[:, None])
    initial = coupling_marginals(r.coupling)[0]
    return MarkovChainProcess(r.space, r.grid, initial, tuple(transitions))


def coupling_of_chain(m: MarkovChainProcess) -> Coupling:
    """Endpoint joint law p0(x_0) * prod_n Q_n, as a Coupling."""
    product = reduce(np.matmul, m.transitions)
    probs = m.initial.probs[:, None] * product
    return Coupling(m.space, probs / probs.sum())


def _row_kl(p_rows: np.ndarray, q_rows: np.ndarray) -> np.ndarray:
    if np.any((p_rows > 0.0) & (q_rows == 0.0)):
        raise SupportMismatch("transition rows place mass outside the second argument")
    with np.errstate(invalid="ignore", divide="ignore"):
        terms = xlogy(p_rows, p_rows / q_rows)
    return np.where(p_rows > 0.0, terms, 0.0).sum(axis=-1)


def path_kl_markov(a: MarkovChainProcess, b: MarkovChainProcess) -> float:
    """KL between path laws of two Markov chains via the chain rule.

    KL(a || b) = KL(a_0 || b_0)
               + sum_n E_{x ~ a(t_{n-1})} KL(a_n(x, .) || b_n(x, .)).
    Rows never visited under ``a`` contribute nothing.
    """
    if a.space != b.space or a.grid != b.grid:
        raise SpaceMismatch("path KL needs chains on a shared space and grid")
    total = kl_distributions(a.initial, b.initial)
    marginal = a.initial.probs
    for qa, qb in zip(a.transitions, b.transitions):
        visited = marginal > 0.0
        total += float(marginal[visited] @ _row_kl(qa[visited], qb[visited]))
        marginal = marginal @ qa
    return total


def path_kl_reciprocal(a: ReciprocalProcess, b: ReciprocalProcess) -> float:
    """KL between path laws of two reciprocal processes on the same reference.

    Shared bridges cancel in the path-space disintegration, leaving the KL
    between the endpoint couplings.
    """
    if not same_reference(a.ref, b.ref):
        raise ReferenceMismatch("reciprocal path KL requires a shared reference")
    return kl_couplings(a.coupling, b.coupling)


def reciprocal_time_marginal(r: ReciprocalProcess, j: int) -> CategoricalDistribution:
    """Law of x_{t_j} under the reciprocal process, 0 <= j <= N+1."""
    probs = endpoint_joint(r, j).sum(axis=1)
    return CategoricalDistribution(r.space, probs / probs.sum())
