"""Reference Markov chains on categorical grids and their pinned bridges.

A reference process runs each of the D dimensions independently through the
same sequence of S x S transition matrices Q_1, ..., Q_{N+1}.  Two families
are built in:

- uniform: stay with probability 1 - alpha, otherwise jump to one of the
  S - 1 other categories uniformly;
- gaussian: off-diagonal weight exp(-4 (x' - x)^2 / (alpha * (S-1))^2),
  normalized over offsets -(S-1), ..., S-1, with the diagonal absorbing the
  leftover mass so that rows sum to one exactly.

Everything is stored and combined in log space.  Gaussian references with
small alpha have transition probabilities around exp(-10^4), far below the
smallest positive float64, so linear-space cumulative products would silently
collapse to zero; log-space matrix products (logsumexp over the inner index)
keep them exact.  Cumulative products

    C[a -> b] = Q_{a+1} Q_{a+2} ... Q_b

are precomputed for all 0 <= a < b <= N+1 at construction time.

Bridges pin a path at both ends.  With A = C[0 -> n], E = C[n -> N+1] and
T = C[0 -> N+1], the per-dimension conditionals are

    posterior:  P(x_{t_n} = s | x_0, x_1)        = A(x_0, s) E(s, x_1) / T(x_0, x_1)
    forward:    P(x_{t_n} = s | x_{t_{n-1}}, x_1) = Q_n(x_prev, s) C[n -> N+1](s, x_1)
                                                     / C[n-1 -> N+1](x_prev, x_1)
    backward:   P(x_{t_{n-1}} = s | x_{t_n}, x_0) = C[0 -> n-1](x_0, s) Q_n(s, x_next)
                                                     / C[0 -> n](x_0, x_next)

All three are exposed both as joint distributions over the product space (for
exact small-space work) and as per-dimension row stacks (for training loops).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import reduce

import numpy as np
from scipy.special import logsumexp

from .core import (
    SUM_TOL,
    CategoricalDistribution,
    StateSpace,
    TimeGrid,
)


class AlphaOutOfRange(ValueError):
    """Stochasticity parameter outside the valid range for the family."""


class IndexOrder(ValueError):
    """Time indices violate the required ordering."""


class ZeroMassPath(ValueError):
    """Conditioning event has zero probability under the reference."""


# Hard cap on the size of the precomputed cumulative cache, in floats.
_MAX_CACHE_FLOATS = 3 * 10**8

# Joint bridge distributions are materialized only below this state count.
_MAX_JOINT_STATES = 10**6


@dataclass(frozen=True, eq=False)
class ReferenceProcess:
    """Dimension-shared reference chain with cached cumulative products.

    ``log_transitions[n-1]`` holds log Q_n for one dimension; all D dimensions
    evolve independently under the same matrices.  ``kind`` is "uniform",
    "gaussian", or "custom" for caller-supplied matrices.
    """

    space: StateSpace
    grid: TimeGrid
    kind: str
    alpha: float
    log_transitions: np.ndarray
    log_cumulative: dict = field(repr=False)

    def log_cum(self, a: int, b: int) -> np.ndarray:
        """log C[a -> b] for 0 <= a < b <= N+1."""
        if not (0 <= a < b <= self.grid.num_transitions):
            raise IndexOrder(f"need 0 <= a < b <= N+1, got a={a}, b={b}")
        return self.log_cumulative[(a, b)]


def _log_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(log A, log B) -> log(A @ B), chunked over rows to bound scratch memory."""
    s = a.shape[0]
    rows_per_chunk = max(1, int(4_000_000 // (s * s)))
    if rows_per_chunk >= s:
        return logsumexp(a[:, :, None] + b[None, :, :], axis=1)
    out = np.empty((s, b.shape[1]))
    for lo in range(0, s, rows_per_chunk):
        hi = min(lo + rows_per_chunk, s)
        out[lo:hi] = logsumexp(a[lo:hi, :, None] + b[None, :, :], axis=1)
    return out


def _finalize(space: StateSpace, grid: TimeGrid, kind: str, alpha: float,
              log_steps: np.ndarray) -> ReferenceProcess:
    n_steps = grid.num_transitions
    s = space.num_categories
    pairs = n_steps * (n_steps + 1) // 2
    if pairs * s * s > _MAX_CACHE_FLOATS:
        raise ValueError("cumulative product cache would exceed the memory budget")
    log_steps = np.asarray(log_steps, dtype=np.float64)
    log_steps.flags.writeable = False
    cache: dict[tuple[int, int], np.ndarray] = {}
    for a in range(n_steps):
        acc = log_steps[a]
        cache[(a, a + 1)] = acc
        for b in range(a + 2, n_steps + 1):
            acc = _log_matmul(acc, log_steps[b - 1])
            acc.flags.writeable = False
            cache[(a, b)] = acc
    return ReferenceProcess(space, grid, kind, alpha, log_steps, cache)


def _log_of(mat: np.ndarray) -> np.ndarray:
    out = np.full_like(mat, -np.inf)
    np.log(mat, out=out, where=mat > 0.0)
    return out


def build_uniform_reference(space: StateSpace, grid: TimeGrid, alpha: float) -> ReferenceProcess:
    """Stay with probability 1 - alpha, else jump uniformly; 0 <= alpha <= 1."""
    if not (0.0 <= alpha <= 1.0):
        raise AlphaOutOfRange(f"uniform family needs 0 <= alpha <= 1, got {alpha}")
    s = space.num_categories
    log_q = np.full((s, s), math.log(alpha / (s - 1)) if alpha > 0.0 else -np.inf)
    diag = math.log1p(-alpha) if alpha < 1.0 else -np.inf
    np.fill_diagonal(log_q, diag)
    steps = np.broadcast_to(log_q, (grid.num_transitions, s, s)).copy()
    return _finalize(space, grid, "uniform", alpha, steps)


def build_gaussian_reference(space: StateSpace, grid: TimeGrid, alpha: float) -> ReferenceProcess:
    """Discretized gaussian family with jump scale alpha * (S - 1); alpha > 0.

    Off-diagonal entries are exp(-4 d^2 / (alpha (S-1))^2) / Z with the
    normalizer Z summing the same weights over offsets d = -(S-1), ..., S-1.
    Each diagonal entry absorbs 1 minus its row's off-diagonal mass; that is
    positive because the row omits the offset-zero term that Z includes.
    """
    if not alpha > 0.0:
        raise AlphaOutOfRange(f"gaussian family needs alpha > 0, got {alpha}")
    s = space.num_categories
    delta = s - 1
    scale = (alpha * delta) ** 2
    offsets = np.arange(-delta, delta + 1, dtype=np.float64)
    log_z = logsumexp(-4.0 * offsets**2 / scale)
    idx = np.arange(s, dtype=np.float64)
    log_q = -4.0 * (idx[None, :] - idx[:, None]) ** 2 / scale - log_z
    off_weights = np.exp(log_q)
    np.fill_diagonal(off_weights, 0.0)
    off_sum = off_weights.sum(axis=1)
    np.fill_diagonal(log_q, np.log1p(-off_sum))
    steps = np.broadcast_to(log_q, (grid.num_transitions, s, s)).copy()
    return _finalize(space, grid, "gaussian", alpha, steps)


def reference_from_transitions(space: StateSpace, grid: TimeGrid, matrices,
                               kind: str = "custom",
                               alpha: float = float("nan")) -> ReferenceProcess:
    """Build a reference from explicit per-step S x S stochastic matrices."""
    s = space.num_categories
    mats = [np.asarray(m, dtype=np.float64) for m in matrices]
    if len(mats) != grid.num_transitions:
        raise ValueError("need exactly one matrix per transition")
    for mat in mats:
        if mat.shape != (s, s):
            raise ValueError(f"per-dimension transitions must have shape ({s}, {s})")
        if np.any(mat < 0.0) or not np.all(np.isfinite(mat)):
            raise ValueError("transition entries must be finite and nonnegative")
        if np.max(np.abs(mat.sum(axis=1) - 1.0)) > SUM_TOL:
            raise ValueError(f"transition rows must sum to one within {SUM_TOL}")
    steps = np.stack([_log_of(m) for m in mats])
    return _finalize(space, grid, kind, alpha, steps)


def reference_config(ref: ReferenceProcess) -> dict:
    """JSON-ready description of a built-in reference."""
    if ref.kind not in ("uniform", "gaussian"):
        raise ValueError("only uniform and gaussian references are serializable")
    return {
        "kind": ref.kind,
        "alpha": ref.alpha,
        "S": ref.space.num_categories,
        "D": ref.space.num_dimensions,
        "N": ref.grid.num_intermediate,
    }


def reference_from_config(cfg: dict) -> ReferenceProcess:
    """Inverse of :func:`reference_config`; rejects unknown keys."""
    expected = {"kind", "alpha", "S", "D", "N"}
    unknown = set(cfg) - expected
    if unknown:
        raise ValueError(f"unknown reference config keys: {sorted(unknown)}")
    missing = expected - set(cfg)
    if missing:
        raise ValueError(f"missing reference config keys: {sorted(missing)}")
    space = StateSpace(int(cfg["S"]), int(cfg["D"]))
    grid = TimeGrid(int(cfg["N"]))
    alpha = float(cfg["alpha"])
    if cfg["kind"] == "uniform":
        return build_uniform_reference(space, grid, alpha)
    if cfg["kind"] == "gaussian":
        return build_gaussian_reference(space, grid, alpha)
    raise ValueError(f"unknown reference kind: {cfg['kind']!r}")


def cumulative_transition(ref: ReferenceProcess, a: int, b: int) -> np.ndarray:
    """Per-dimension transition matrix C[a -> b] in linear space."""
    return np.exp(ref.log_cum(a, b))


def _normalize_rows(log_rows: np.ndarray, what: str) -> np.ndarray:
    norm = logsumexp(log_rows, axis=-1, keepdims=True)
    if not np.all(np.isfinite(norm)):
        raise ZeroMassPath(f"{what} conditions on an event of zero reference probability")
    return np.exp(log_rows - norm)


def _onehot_rows(idx: np.ndarray, s: int) -> np.ndarray:
    rows = np.zeros((idx.shape[0], s))
    rows[np.arange(idx.shape[0]), idx] = 1.0
    return rows


def endpoint_posterior_dims(ref: ReferenceProcess, n: int, x0, x1) -> np.ndarray:
    """Per-dimension rows (D, S) of P(x_{t_n} | x_0, x_1), for 1 <= n <= N."""
    if not (1 <= n <= ref.grid.num_intermediate):
        raise IndexOrder(f"posterior index must satisfy 1 <= n <= N, got n={n}")
    x0m = ref.space.as_multi(x0)
    x1m = ref.space.as_multi(x1)
    last = ref.grid.num_transitions
    log_rows = ref.log_cum(0, n)[x0m, :] + ref.log_cum(n, last)[:, x1m].T
    return _normalize_rows(log_rows, "endpoint posterior")


def forward_step_dims(ref: ReferenceProcess, n: int, x_prev, x1) -> np.ndarray:
    """Per-dimension rows (D, S) of P(x_{t_n} | x_{t_{n-1}}, x_1), 1 <= n <= N+1.

    At n = N+1 the step is pinned and the rows are point masses at x_1.
    """
    last = ref.grid.num_transitions
    if not (1 <= n <= last):
        raise IndexOrder(f"forward step index must satisfy 1 <= n <= N+1, got n={n}")
    xpm = ref.space.as_multi(x_prev)
    x1m = ref.space.as_multi(x1)
    if n == last:
        return _onehot_rows(x1m, ref.space.num_categories)
    log_rows = ref.log_transitions[n - 1][xpm, :] + ref.log_cum(n, last)[:, x1m].T
    return _normalize_rows(log_rows, "forward bridge step")


def backward_step_dims(ref: ReferenceProcess, n: int, x_next, x0) -> np.ndarray:
    """Per-dimension rows (D, S) of P(x_{t_{n-1}} | x_{t_n}, x_0), 1 <= n <= N+1.

    At n = 1 the step is pinned and the rows are point masses at x_0.
    """
    last = ref.grid.num_transitions
    if not (1 <= n <= last):
        raise IndexOrder(f"backward step index must satisfy 1 <= n <= N+1, got n={n}")
    xnm = ref.space.as_multi(x_next)
    x0m = ref.space.as_multi(x0)
    if n == 1:
        return _onehot_rows(x0m, ref.space.num_categories)
    log_rows = ref.log_cum(0, n - 1)[x0m, :] + ref.log_transitions[n - 1][:, xnm].T
    return _normalize_rows(log_rows, "backward bridge step")


def forward_bridge_matrix(ref: ReferenceProcess, n: int, x_prev) -> np.ndarray:
    """Forward step rows for every possible endpoint, shape (D, S, S).

    Entry [d, e, x] is P(x_{t_n} = x | x_{t_{n-1}} = x_prev_d, x_1 = e) in
    dimension d.  At n = N+1 every row is a point mass at its endpoint.
    """
    last = ref.grid.num_transitions
    if not (1 <= n <= last):
        raise IndexOrder(f"forward step index must satisfy 1 <= n <= N+1, got n={n}")
    xpm = ref.space.as_multi(x_prev)
    s = ref.space.num_categories
    d = ref.space.num_dimensions
    if n == last:
        return np.broadcast_to(np.eye(s), (d, s, s)).copy()
    norm = ref.log_cum(n - 1, last)[xpm, :]
    if not np.all(np.isfinite(norm)):
        raise ZeroMassPath("some endpoint is unreachable from the conditioning state")
    log_b = (ref.log_transitions[n - 1][xpm, None, :]
             + ref.log_cum(n, last).T[None, :, :]
             - norm[:, :, None])
    return np.exp(log_b)


def backward_bridge_matrix(ref: ReferenceProcess, n: int, x_next) -> np.ndarray:
    """Backward step rows for every possible endpoint, shape (D, S, S).

    Entry [d, e, x] is P(x_{t_{n-1}} = x | x_{t_n} = x_next_d, x_0 = e) in
    dimension d.  At n = 1 every row is a point mass at its endpoint.
    """
    last = ref.grid.num_transitions
    if not (1 <= n <= last):
        raise IndexOrder(f"backward step index must satisfy 1 <= n <= N+1, got n={n}")
    xnm = ref.space.as_multi(x_next)
    s = ref.space.num_categories
    d = ref.space.num_dimensions
    if n == 1:
        return np.broadcast_to(np.eye(s), (d, s, s)).copy()
    norm = ref.log_cum(0, n)[:, xnm].T
    if not np.all(np.isfinite(norm)):
        raise ZeroMassPath("some endpoint cannot reach the conditioning state")
    log_b = (ref.log_cum(0, n - 1)[None, :, :]
             + ref.log_transitions[n - 1][:, xnm].T[:, None, :]
             - norm[:, :, None])
    return np.exp(log_b)


def _joint_distribution(space: StateSpace, rows: np.ndarray) -> CategoricalDistribution:
    if space.num_states > _MAX_JOINT_STATES:
        raise ValueError("joint bridge distribution too large to materialize")
    joint = reduce(np.multiply.outer, rows)
    return CategoricalDistribution(space, joint.ravel() / joint.sum())


def bridge_endpoint_posterior(ref: ReferenceProcess, n: int, x0, x1) -> CategoricalDistribution:
    """Joint law of x_{t_n} given both endpoints, over the product space."""
    return _joint_distribution(ref.space, endpoint_posterior_dims(ref, n, x0, x1))


def bridge_forward_step(ref: ReferenceProcess, n: int, x_prev, x1) -> CategoricalDistribution:
    """Joint law of x_{t_n} given the previous state and the endpoint x_1."""
    return _joint_distribution(ref.space, forward_step_dims(ref, n, x_prev, x1))


def bridge_backward_step(ref: ReferenceProcess, n: int, x_next, x0) -> CategoricalDistribution:
    """Joint law of x_{t_{n-1}} given the next state and the endpoint x_0."""
    return _joint_distribution(ref.space, backward_step_dims(ref, n, x_next, x0))


def sample_bridge_path(ref: ReferenceProcess, x0, x1, rng: np.random.Generator) -> np.ndarray:
    """Draw the interior states x_{t_1}, ..., x_{t_N} of a pinned path.

    Sampling runs forward through the bridge decomposition, one step at a
    time, each dimension independently.  Returns an (N, D) array; the pinned
    endpoints are not included.
    """
    x0m = ref.space.as_multi(x0)
    x1m = ref.space.as_multi(x1)
    n_inner = ref.grid.num_intermediate
    d = ref.space.num_dimensions
    path = np.empty((n_inner, d), dtype=np.int64)
    current = x0m
    for n in range(1, n_inner + 1):
        rows = forward_step_dims(ref, n, current, x1m)
        u = rng.random(d)
        current = (rows.cumsum(axis=1) < u[:, None]).sum(axis=1)
        current = np.minimum(current, ref.space.num_categories - 1)
        path[n - 1] = current
    return path
