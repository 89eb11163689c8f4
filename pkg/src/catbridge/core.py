"""Probability primitives on finite categorical product spaces.

A state is a D-tuple of category indices, each in ``{0, ..., S-1}``.  States
are stored either as multi-indices (arrays whose last axis has length D) or as
flat indices in ``{0, ..., S**D - 1}`` under row-major order, i.e. dimension 0
varies slowest.  Distributions, couplings and Markov chains over a space are
immutable value objects validated on construction; operations on them are
plain module-level functions.

Divergences follow the usual conventions: ``0 * log 0 = 0`` and a positive
mass placed where the second argument vanishes is a hard error rather than
``inf``, because every caller in this package treats that as a support bug.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import xlogy

# Default guard for logs of quantities that are positive on paper but may
# underflow in float64.  Full-support validation uses the same floor.
PROB_FLOOR = 1e-300

# Absolute tolerance for "sums to one" checks on distributions, couplings and
# transition-matrix rows.
SUM_TOL = 1e-12

# Flat state indices must stay exactly representable in an int64.
_MAX_STATES = 2**62


class SpaceMismatch(ValueError):
    """Operands are defined on different state spaces or time grids."""


class SupportMismatch(ValueError):
    """A divergence hit q(x) = 0 at a point where p(x) > 0."""


@dataclass(frozen=True)
class StateSpace:
    """Product space of ``num_dimensions`` categorical variables.

    Each dimension takes values in ``{0, ..., num_categories - 1}``; the joint
    space has ``num_categories ** num_dimensions`` states.
    """

    num_categories: int
    num_dimensions: int = 1

    def __post_init__(self) -> None:
        if self.num_categories < 2:
            raise ValueError("need at least two categories per dimension")
        if self.num_dimensions < 1:
            raise ValueError("need at least one dimension")
        if self.num_categories ** self.num_dimensions > _MAX_STATES:
            raise ValueError("joint state count overflows a machine word")

    @property
    def num_states(self) -> int:
        return self.num_categories ** self.num_dimensions

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.num_categories,) * self.num_dimensions

    def flatten(self, states: np.ndarray) -> np.ndarray:
        """Map multi-indices ``(..., D)`` to flat indices ``(...)``, row-major."""
        arr = np.asarray(states, dtype=np.int64)
        if arr.ndim == 0 or arr.shape[-1] != self.num_dimensions:
            raise ValueError("last axis must have length num_dimensions")
        return np.ravel_multi_index(tuple(np.moveaxis(arr, -1, 0)), self.shape)

    def unflatten(self, flat: np.ndarray) -> np.ndarray:
        """Map flat indices ``(...)`` back to multi-indices ``(..., D)``."""
        arr = np.asarray(flat, dtype=np.int64)
        return np.stack(np.unravel_index(arr, self.shape), axis=-1)

    def as_multi(self, state) -> np.ndarray:
        """Coerce a single state (flat int or length-D sequence) to shape (D,)."""
        if np.isscalar(state) or getattr(state, "ndim", None) == 0:
            return self.unflatten(np.int64(state))
        arr = np.asarray(state, dtype=np.int64)
        if arr.shape != (self.num_dimensions,):
            raise ValueError("state must be a flat index or a length-D multi-index")
        if np.any(arr < 0) or np.any(arr >= self.num_categories):
            raise ValueError("category index out of range")
        return arr


def _validated_probs(probs, shape: tuple[int, ...], what: str) -> np.ndarray:
    arr = np.array(probs, dtype=np.float64, copy=True)
    if arr.shape != shape:
        raise ValueError(f"{what} must have shape {shape}, got {arr.shape}")
    if np.any(arr < 0.0) or not np.all(np.isfinite(arr)):
        raise ValueError(f"{what} entries must be finite and nonnegative")
    if abs(float(arr.sum()) - 1.0) > SUM_TOL:
        raise ValueError(f"{what} must sum to one within {SUM_TOL}")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class CategoricalDistribution:
    """Probability vector over the flat states of a :class:`StateSpace`."""

    space: StateSpace
    probs: np.ndarray

    def __post_init__(self) -> None:
        arr = _validated_probs(self.probs, (self.space.num_states,), "distribution")
        object.__setattr__(self, "probs", arr)

    def require_full_support(self, floor: float = PROB_FLOOR) -> "CategoricalDistribution":
        """Return self after checking every entry is at least ``floor``."""
        if float(self.probs.min()) < floor:
            raise SupportMismatch(
                f"distribution has entries below the support floor {floor}")
        return self

    @classmethod
    def uniform(cls, space: StateSpace) -> "CategoricalDistribution":
        k = space.num_states
        return cls(space, np.full(k, 1.0 / k))

    @classmethod
    def point_mass(cls, space: StateSpace, state) -> "CategoricalDistribution":
        probs = np.zeros(space.num_states)
        probs[int(space.flatten(space.as_multi(state)))] = 1.0
        return cls(space, probs)


@dataclass(frozen=True, eq=False)
class Coupling:
    """Joint distribution over endpoint pairs ``(x_0, x_1)``, flat-indexed."""

    space: StateSpace
    probs: np.ndarray

    def __post_init__(self) -> None:
        k = self.space.num_states
        arr = _validated_probs(self.probs, (k, k), "coupling")
        object.__setattr__(self, "probs", arr)

    @classmethod
    def independent(cls, p0: CategoricalDistribution, p1: CategoricalDistribution) -> "Coupling":
        if p0.space != p1.space:
            raise SpaceMismatch("marginals live on different spaces")
        return cls(p0.space, np.outer(p0.probs, p1.probs))


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid 0 = t_0 < t_1 < ... < t_{N+1} = 1 with N interior points."""

    num_intermediate: int

    def __post_init__(self) -> None:
        if self.num_intermediate < 0:
            raise ValueError("number of interior time points must be nonnegative")

    @property
    def num_transitions(self) -> int:
        return self.num_intermediate + 1

    @property
    def num_points(self) -> int:
        return self.num_intermediate + 2


@dataclass(frozen=True, eq=False)
class MarkovChainProcess:
    """Time-inhomogeneous Markov chain: initial law plus one transition per step.

    ``transitions[n-1]`` is the row-stochastic matrix carrying the law at
    ``t_{n-1}`` to the law at ``t_n``, for n = 1, ..., N+1.
    """

    space: StateSpace
    grid: TimeGrid
    initial: CategoricalDistribution
    transitions: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        if self.initial.space != self.space:
            raise SpaceMismatch("initial law lives on a different space")
        mats = tuple(np.array(m, dtype=np.float64, copy=True) for m in self.transitions)
        if len(mats) != self.grid.num_transitions:
            raise ValueError("need exactly one transition matrix per step")
        k = self.space.num_states
        for mat in mats:
            if mat.shape != (k, k):
                raise ValueError(f"transition matrices must have shape ({k}, {k})")
            if np.any(mat < 0.0) or not np.all(np.isfinite(mat)):
                raise ValueError("transition entries must be finite and nonnegative")
            if np.max(np.abs(mat.sum(axis=1) - 1.0)) > SUM_TOL:
                raise ValueError(f"transition rows must sum to one within {SUM_TOL}")
            mat.flags.writeable = False
        object.__setattr__(self, "transitions", mats)

    def time_marginals(self) -> list[np.ndarray]:
        """Laws at t_0, ..., t_{N+1} obtained by propagating the initial law."""
        margs = [self.initial.probs.copy()]
        for mat in self.transitions:
            margs.append(margs[-1] @ mat)
        return margs


def _kl_vectors(p: np.ndarray, q: np.ndarray) -> float:
    mask = p > 0.0
    if np.any(q[mask] == 0.0):
        raise SupportMismatch("first argument has mass where second argument has none")
    pm = p[mask]
    return float(np.sum(pm * (np.log(pm) - np.log(q[mask]))))


def kl_distributions(p: CategoricalDistribution, q: CategoricalDistribution) -> float:
    """KL(p || q) = sum_x p(x) log(p(x)/q(x)), with 0 log 0 = 0."""
    if p.space != q.space:
        raise SpaceMismatch("KL arguments live on different spaces")
    return _kl_vectors(p.probs, q.probs)


def kl_couplings(a: Coupling, b: Coupling) -> float:
    """KL divergence between two couplings on the same space."""
    if a.space != b.space:
        raise SpaceMismatch("KL arguments live on different spaces")
    return _kl_vectors(a.probs.ravel(), b.probs.ravel())


def tv_distance(p, q) -> float:
    """Total variation distance, 0.5 * sum |p - q|, for distributions or couplings."""
    if type(p) is not type(q):
        raise SpaceMismatch("total variation needs two objects of the same type")
    if p.space != q.space:
        raise SpaceMismatch("total variation arguments live on different spaces")
    return 0.5 * float(np.abs(p.probs - q.probs).sum())


def coupling_marginals(c: Coupling) -> tuple[CategoricalDistribution, CategoricalDistribution]:
    """Marginal laws of x_0 (row sums) and x_1 (column sums)."""
    p0 = c.probs.sum(axis=1)
    p1 = c.probs.sum(axis=0)
    return (
        CategoricalDistribution(c.space, p0 / p0.sum()),
        CategoricalDistribution(c.space, p1 / p1.sum()),
    )


def entropy(c) -> float:
    """Shannon entropy -sum p log p of a distribution or coupling."""
    return -float(xlogy(c.probs, c.probs).sum())
