"""Bridge-matching trainer with a factorized tabular endpoint model.

The model predicts, for every conditioning state and time index, a softmax
distribution over where each dimension of the path will end (forward models
predict x_1 coordinates, backward models predict x_0 coordinates).  A
transition is obtained by averaging reference bridge steps over that
prediction: predict an endpoint, then move one step along the bridge pinned
at it.  The product structure survives the mixture because both the endpoint
prediction and the bridge factorize over dimensions.

Training alternates directions.  Each phase draws endpoint pairs from the
opposite model's rollouts (the very first phase uses the configured initial
coupling), samples one time index per batch element uniformly from
{1, ..., N+1}, samples the conditioning state from the reference bridge
between the pair, and descends either

- a KL objective: KL(bridge step given the true endpoint || model mixture)
  for interior indices, the endpoint's negative log-likelihood at the final
  index, always plus ``lambda_simple`` times the endpoint negative
  log-likelihood from the same sample; or
- a per-dimension squared-distance objective between the same two rows, with
  a one-hot target at the final index and no likelihood term.

Gradients with respect to the logits are computed in closed form through the
softmax; optimization is plain SGD with a fixed or linearly decayed learning
rate, optional momentum, and optional averaging of each phase's closing
iterates.  All randomness flows through explicit generators, so a fixed seed
reproduces a run exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.special import xlogy

from .core import (
    PROB_FLOOR,
    CategoricalDistribution,
    Coupling,
    MarkovChainProcess,
    SpaceMismatch,
    StateSpace,
    TimeGrid,
)
from .projections import ReciprocalProcess, endpoint_joint
from .reference import ReferenceProcess


class BatchMismatch(ValueError):
    """Paired batches differ in length, or a batch is empty."""


@dataclass(eq=False)
class TabularEndpointModel:
    """Endpoint-prediction logits of shape (S^D, N+1, D, S).

    Axis 0 is the flat conditioning state.  Axis 1 is the time position of
    that state: index n-1 holds the entry used by transition n, i.e. the
    state at t_{n-1} for forward models and the state at t_n for backward
    models.  Softmax over the last axis gives the per-dimension endpoint
    prediction.  Logits are mutated in place by training.
    """

    direction: str
    space: StateSpace
    grid: TimeGrid
    logits: np.ndarray

    def __post_init__(self) -> None:
        if self.direction not in ("forward", "backward"):
            raise ValueError("direction must be 'forward' or 'backward'")
        expected = (self.space.num_states, self.grid.num_transitions,
                    self.space.num_dimensions, self.space.num_categories)
        arr = np.asarray(self.logits, dtype=np.float64)
        if arr.shape != expected:
            raise ValueError(f"logits must have shape {expected}, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("logits must be finite")
        self.logits = arr

    @classmethod
    def zeros(cls, space: StateSpace, grid: TimeGrid, direction: str) -> "TabularEndpointModel":
        shape = (space.num_states, grid.num_transitions,
                 space.num_dimensions, space.num_categories)
        return cls(direction, space, grid, np.zeros(shape))

    def endpoint_probs(self, flat_states: np.ndarray, n: int) -> np.ndarray:
        """Softmax endpoint predictions (m, D, S) for transition index n."""
        z = self.logits[np.asarray(flat_states, dtype=np.int64), n - 1]
        z = z - z.max(axis=-1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for the alternating trainer."""

    outer_iterations: int = 5
    updates_per_phase: int = 500
    batch_size: int = 128
    learning_rate: float = 0.5
    lr_final: float | None = None
    momentum: float = 0.0
    avg_tail: float = 0.0
    lambda_simple: float = 0.001
    loss: str = "kl"  # "kl" | "mse"
    init_coupling: str = "independent"  # "independent" | "minibatch_ot"
    mb_epsilon: float = 0.02
    seed: int = 0

    def __post_init__(self) -> None:
        if self.outer_iterations < 1 or self.updates_per_phase < 1 or self.batch_size < 1:
            raise ValueError("iteration counts and batch size must be positive")
        if self.learning_rate <= 0.0 or not (0.0 <= self.momentum < 1.0):
            raise ValueError("need learning_rate > 0 and 0 <= momentum < 1")
        if self.lr_final is not None and not 0.0 < self.lr_final <= self.learning_rate:
            raise ValueError("lr_final must lie in (0, learning_rate]")
        if not 0.0 <= self.avg_tail <= 1.0:
            raise ValueError("avg_tail must lie in [0, 1]")
        if self.lambda_simple < 0.0:
            raise ValueError("lambda_simple must be nonnegative")
        if self.loss not in ("kl", "mse"):
            raise ValueError("loss must be 'kl' or 'mse'")
        if self.init_coupling not in ("independent", "minibatch_ot"):
            raise ValueError("init_coupling must be 'independent' or 'minibatch_ot'")
        if self.mb_epsilon <= 0.0:
            raise ValueError("mb_epsilon must be positive")


@dataclass(frozen=True)
class MetricRecord:
    """One training-step entry of the metrics log."""

    outer_iter: int
    phase: str
    step: int
    loss: float
    kl_term: float
    simple_term: float


def _sample_categorical(rows: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw one index per row from normalized rows of shape (..., S)."""
    u = rng.random(rows.shape[:-1])
    idx = (np.cumsum(rows, axis=-1) < u[..., None]).sum(axis=-1)
    return np.minimum(idx, rows.shape[-1] - 1)


def _posterior_sample(ref: ReferenceProcess, j: int, x0: np.ndarray, x1: np.ndarray,
                      rng: np.random.Generator) -> np.ndarray:
    """Sample x_{t_j} | (x_0, x_1) per dimension for a batch, 1 <= j <= N."""
    last = ref.grid.num_transitions
    log_rows = ref.log_cum(0, j)[x0] + ref.log_cum(j, last).T[x1]
    log_rows = log_rows - log_rows.max(axis=-1, keepdims=True)
    rows = np.exp(log_rows)
    rows /= rows.sum(axis=-1, keepdims=True)
    return _sample_categorical(rows, rng)


def _forward_bridge_batch(ref: ReferenceProcess, n: int, xc: np.ndarray) -> np.ndarray:
    """Bridge step rows for all endpoints: (g, D, endpoint, next state)."""
    last = ref.grid.num_transitions
    trans = ref.log_transitions[n - 1][xc]
    norm = ref.log_cum(n - 1, last)[xc]
    log_b = (trans[:, :, None, :]
             + ref.log_cum(n, last).T[None, None, :, :]
             - norm[..., None])
    return np.exp(log_b)


def _backward_bridge_batch(ref: ReferenceProcess, n: int, xc: np.ndarray) -> np.ndarray:
    """Bridge step rows for all endpoints: (g, D, endpoint, previous state)."""
    trans = ref.log_transitions[n - 1].T[xc]
    norm = ref.log_cum(0, n).T[xc]
    log_b = (ref.log_cum(0, n - 1)[None, None, :, :]
             + trans[:, :, None, :]
             - norm[..., None])
    return np.exp(log_b)


def model_transition(model: TabularEndpointModel, ref: ReferenceProcess, n: int,
                     state) -> np.ndarray:
    """Per-dimension transition rows (D, S) of the model at index n.

    For a forward model this is the law of x_{t_n} given x_{t_{n-1}} = state;
    at n = N+1 the mixture collapses to the endpoint prediction itself.  For
    a backward model it is the law of x_{t_{n-1}} given x_{t_n} = state, with
    the collapse at n = 1.
    """
    last = ref.grid.num_transitions
    if not (1 <= n <= last):
        raise ValueError(f"transition index must satisfy 1 <= n <= N+1, got n={n}")
    xm = ref.space.as_multi(state)[None, :]
    flat = ref.space.flatten(xm)
    pred = model.endpoint_probs(flat, n)
    if model.direction == "forward":
        if n == last:
            return pred[0]
        bridge = _forward_bridge_batch(ref, n, xm)
    else:
        if n == 1:
            return pred[0]
        bridge = _backward_bridge_batch(ref, n, xm)
    return np.einsum("de,dex->dx", pred[0], bridge[0])


def _loss_and_grads(model: TabularEndpointModel, ref: ReferenceProcess,
                    x0: np.ndarray, x1: np.ndarray, rng: np.random.Generator,
                    loss_kind: str, lam: float):
    """Monte-Carlo loss over a batch of endpoint pairs, with logits gradients.

    Returns (loss, kl_term, simple_term, flat_states, time_positions, grads)
    where grads has shape (m, D, S) and rows belong to logits[flat, time].
    All reported numbers are batch means.
    """
    space, grid = model.space, model.grid
    last = grid.num_transitions
    m = x0.shape[0]
    forward = model.direction == "forward"
    ns = rng.integers(1, last + 1, size=m)
    cond_pos = ns - 1 if forward else ns
    cond = np.empty_like(x0)
    for j in np.unique(cond_pos):
        sel = cond_pos == j
        if j == 0:
            cond[sel] = x0[sel]
        elif j == last:
            cond[sel] = x1[sel]
        else:
            cond[sel] = _posterior_sample(ref, int(j), x0[sel], x1[sel], rng)
    flat = space.flatten(cond)
    time_pos = ns - 1
    target_end = x1 if forward else x0
    grads = np.zeros((m, space.num_dimensions, space.num_categories))
    loss_total = 0.0
    kl_total = 0.0
    simple_total = 0.0
    ar = np.arange
    for n in np.unique(ns):
        sel = np.flatnonzero(ns == n)
        g = sel.size
        pred = model.endpoint_probs(flat[sel], int(n))
        ends = target_end[sel]
        gi, di = ar(g)[:, None], ar(space.num_dimensions)[None, :]
        terminal = (n == last) if forward else (n == 1)
        if terminal:
            if loss_kind == "kl":
                nll = -np.log(np.maximum(pred[gi, di, ends], PROB_FLOOR))
                base = float(nll.sum())
                kl_total += base
                simple_total += base
                loss_total += (1.0 + lam) * base
                gz = pred.copy()
                gz[gi, di, ends] -= 1.0
                grads[sel] = (1.0 + lam) * gz
            else:
                diff = pred.copy()
                diff[gi, di, ends] -= 1.0
                kl_total += float((diff**2).sum())
                loss_total += float((diff**2).sum())
                gq = 2.0 * diff
                inner = (gq * pred).sum(axis=-1, keepdims=True)
                grads[sel] = pred * (gq - inner)
            continue
        if forward:
            bridge = _forward_bridge_batch(ref, int(n), cond[sel])
        else:
            bridge = _backward_bridge_batch(ref, int(n), cond[sel])
        target_rows = bridge[gi, di, ends]
        mix = np.einsum("gde,gdex->gdx", pred, bridge)
        if loss_kind == "kl":
            mix_safe = np.maximum(mix, PROB_FLOOR)
            kl = float((xlogy(target_rows, target_rows)
                        - target_rows * np.log(mix_safe)).sum())
            nll = -np.log(np.maximum(pred[gi, di, ends], PROB_FLOOR))
            kl_total += kl
            simple_total += float(nll.sum())
            loss_total += kl + lam * float(nll.sum())
            g_mix = -target_rows / mix_safe
            gq = np.einsum("gdex,gdx->gde", bridge, g_mix)
            inner = (gq * pred).sum(axis=-1, keepdims=True)
            gz = pred * (gq - inner)
            gz[gi, di, ends] -= lam
            gz += lam * pred
            grads[sel] = gz
        else:
            diff = mix - target_rows
            kl_total += float((diff**2).sum())
            loss_total += float((diff**2).sum())
            gq = np.einsum("gdex,gdx->gde", bridge, 2.0 * diff)
            inner = (gq * pred).sum(axis=-1, keepdims=True)
            grads[sel] = pred * (gq - inner)
    grads /= m
    return (loss_total / m, kl_total / m, simple_total / m, flat, time_pos, grads)


def _dense_grad(model: TabularEndpointModel, flat, time_pos, grads) -> np.ndarray:
    out = np.zeros_like(model.logits)
    np.add.at(out, (flat, time_pos), grads)
    return out


def loss_kl_forward(model: TabularEndpointModel, ref: ReferenceProcess,
                    x0: np.ndarray, x1: np.ndarray, rng: np.random.Generator,
                    lambda_simple: float = 0.001) -> tuple[float, np.ndarray]:
    """Sampled KL objective and its dense logits gradient (forward model)."""
    if model.direction != "forward":
        raise ValueError("loss_kl_forward needs a forward model")
    loss, _, _, flat, tp, grads = _loss_and_grads(model, ref, x0, x1, rng, "kl", lambda_simple)
    return loss, _dense_grad(model, flat, tp, grads)


def loss_kl_backward(model: TabularEndpointModel, ref: ReferenceProcess,
                     x0: np.ndarray, x1: np.ndarray, rng: np.random.Generator,
                     lambda_simple: float = 0.001) -> tuple[float, np.ndarray]:
    """Sampled KL objective and its dense logits gradient (backward model)."""
    if model.direction != "backward":
        raise ValueError("loss_kl_backward needs a backward model")
    loss, _, _, flat, tp, grads = _loss_and_grads(model, ref, x0, x1, rng, "kl", lambda_simple)
    return loss, _dense_grad(model, flat, tp, grads)


def loss_mse_forward(model: TabularEndpointModel, ref: ReferenceProcess,
                     x0: np.ndarray, x1: np.ndarray,
                     rng: np.random.Generator) -> tuple[float, np.ndarray]:
    """Sampled squared-distance objective and gradient (forward model)."""
    if model.direction != "forward":
        raise ValueError("loss_mse_forward needs a forward model")
    loss, _, _, flat, tp, grads = _loss_and_grads(model, ref, x0, x1, rng, "mse", 0.0)
    return loss, _dense_grad(model, flat, tp, grads)


def loss_mse_backward(model: TabularEndpointModel, ref: ReferenceProcess,
                      x0: np.ndarray, x1: np.ndarray,
                      rng: np.random.Generator) -> tuple[float, np.ndarray]:
    """Sampled squared-distance objective and gradient (backward model)."""
    if model.direction != "backward":
        raise ValueError("loss_mse_backward needs a backward model")
    loss, _, _, flat, tp, grads = _loss_and_grads(model, ref, x0, x1, rng, "mse", 0.0)
    return loss, _dense_grad(model, flat, tp, grads)


def _rollout_batch(model: TabularEndpointModel, ref: ReferenceProcess,
                   start: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Sample full paths (m, N+2, D) from the model, forward or backward."""
    space, grid = model.space, model.grid
    last = grid.num_transitions
    m = start.shape[0]
    paths = np.empty((m, grid.num_points, space.num_dimensions), dtype=np.int64)
    if model.direction == "forward":
        cur = start
        paths[:, 0] = cur
        for n in range(1, last + 1):
            pred = model.endpoint_probs(space.flatten(cur), n)
            end = _sample_categorical(pred, rng)
            if n == last:
                cur = end
            else:
                log_rows = (ref.log_transitions[n - 1][cur]
                            + ref.log_cum(n, last).T[end]
                            - ref.log_cum(n - 1, last)[cur, end][..., None])
                cur = _sample_categorical(np.exp(log_rows), rng)
            paths[:, n] = cur
    else:
        cur = start
        paths[:, last] = cur
        for n in range(last, 0, -1):
            pred = model.endpoint_probs(space.flatten(cur), n)
            end = _sample_categorical(pred, rng)
            if n == 1:
                cur = end
            else:
                log_rows = (ref.log_cum(0, n - 1)[end]
                            + ref.log_transitions[n - 1].T[cur]
                            - ref.log_cum(0, n)[end, cur][..., None])
                cur = _sample_categorical(np.exp(log_rows), rng)
            paths[:, n - 1] = cur
    return paths


def rollout(model: TabularEndpointModel, ref: ReferenceProcess, start,
            rng: np.random.Generator) -> np.ndarray:
    """Sample a path from the model; forward models start at x_0, backward at x_1.

    Each transition first draws an endpoint from the model's prediction and
    then one reference bridge step toward it.  ``start`` may be one state or a
    batch (m, D); the result is (N+2, D) or (m, N+2, D) accordingly.
    """
    arr = np.asarray(start, dtype=np.int64)
    single = arr.ndim <= 1
    if single:
        arr = model.space.as_multi(start)[None, :]
    paths = _rollout_batch(model, ref, arr, rng)
    return paths[0] if single else paths


def minibatch_ot_coupling(batch0: np.ndarray, batch1: np.ndarray, cost,
                          epsilon: float = 0.02) -> tuple[np.ndarray, np.ndarray]:
    """Pair two endpoint batches through an entropic assignment.

    ``cost`` is either a dense table over flat states or a ReferenceProcess,
    in which case the endpoint cost -log C[0 -> N+1] is summed per dimension.
    A best-effort scaled Sinkhorn solve at temperature ``epsilon`` (relative
    to the batch cost range) is followed by a row argmax, ties broken toward
    the lowest index; batch0 comes back unchanged with batch1 reordered.
    """
    from .eot import _sinkhorn_log  # deferred to keep module import light

    b0 = np.asarray(batch0, dtype=np.int64)
    b1 = np.asarray(batch1, dtype=np.int64)
    if b0.ndim == 1:
        b0 = b0[:, None]
    if b1.ndim == 1:
        b1 = b1[:, None]
    if b0.shape[0] != b1.shape[0]:
        raise BatchMismatch(f"batch lengths differ: {b0.shape[0]} vs {b1.shape[0]}")
    if b0.shape[0] == 0:
        raise BatchMismatch("cannot pair empty batches")
    m = b0.shape[0]
    if isinstance(cost, ReferenceProcess):
        per_dim = -cost.log_cum(0, cost.grid.num_transitions)
        table = np.zeros((m, m))
        for d in range(b0.shape[1]):
            table += per_dim[b0[:, None, d], b1[None, :, d]]
    else:
        cost = np.asarray(cost, dtype=np.float64)
        space_side = int(round(cost.shape[0] ** (1.0 / b0.shape[1])))
        space = StateSpace(space_side, b0.shape[1])
        table = cost[space.flatten(b0)[:, None], space.flatten(b1)[None, :]]
    span = max(float(np.ptp(table)), 1e-12)
    scaled = (table - table.min()) / (epsilon * span)
    log_w = np.full(m, -np.log(m))
    u, v, _ = _sinkhorn_log(log_w, log_w, -scaled, max_iters=1000, tol=1e-4,
                            strict=False)
    assign = np.argmax(u[:, None] + v[None, :] - scaled, axis=1)
    return b0, b1[assign]


def _sgd_update(model: TabularEndpointModel, flat, time_pos, grads,
                lr: float, momentum: float, velocity) -> None:
    pair = flat * model.grid.num_transitions + time_pos
    uniq, inv = np.unique(pair, return_inverse=True)
    acc = np.zeros((uniq.size,) + grads.shape[1:])
    np.add.at(acc, inv, grads)
    flat_view = model.logits.reshape(-1, *grads.shape[1:])
    if momentum > 0.0:
        velocity *= momentum
        vel_view = velocity.reshape(-1, *grads.shape[1:])
        vel_view[uniq] += acc
        model.logits -= lr * velocity
    else:
        flat_view[uniq] -= lr * acc


def _step_lr(config: TrainConfig, step: int) -> float:
    # Linear within-phase decay; rate restarts each phase with the coupling.
    if config.lr_final is None or config.updates_per_phase == 1:
        return config.learning_rate
    frac = (step - 1) / (config.updates_per_phase - 1)
    return config.learning_rate + (config.lr_final - config.learning_rate) * frac


class _TailAverage:
    """Mean of the logit iterates over the closing stretch of one phase.

    Replacing the last iterate by this mean suppresses the stationary
    oscillation of constant-rate SGD without slowing adaptation earlier in
    the phase.
    """

    def __init__(self, config: TrainConfig) -> None:
        if config.avg_tail == 0.0:
            self.start = config.updates_per_phase + 1
        else:
            window = max(1, int(round(config.avg_tail * config.updates_per_phase)))
            self.start = config.updates_per_phase - window + 1
        self.total: np.ndarray | None = None
        self.count = 0

    def observe(self, step: int, model: TabularEndpointModel) -> None:
        if step < self.start:
            return
        if self.total is None:
            self.total = model.logits.copy()
        else:
            self.total += model.logits
        self.count += 1

    def finalize(self, model: TabularEndpointModel) -> None:
        if self.total is not None:
            model.logits[:] = self.total / self.count


def csbm_train(p0_sampler, p1_sampler, ref: ReferenceProcess,
               config: TrainConfig) -> tuple[TabularEndpointModel, TabularEndpointModel,
                                             list[MetricRecord]]:
    """Alternately fit forward and backward endpoint models.

    ``p0_sampler(rng, size)`` and ``p1_sampler(rng, size)`` return (size, D)
    batches of endpoint states.  The forward phase of the first outer
    iteration draws pairs from the configured initial coupling; afterwards
    each phase rolls the opposite model out from fresh marginal samples,
    resampling every batch.  With ``avg_tail`` set, each phase ends on the
    mean of its closing iterates rather than the last one.  Returns both
    models and the per-step metrics.
    """
    seq = np.random.SeedSequence(config.seed)
    rng_data, rng_model = (np.random.default_rng(s) for s in seq.spawn(2))
    fwd = TabularEndpointModel.zeros(ref.space, ref.grid, "forward")
    bwd = TabularEndpointModel.zeros(ref.space, ref.grid, "backward")
    vel_f = np.zeros_like(fwd.logits) if config.momentum > 0.0 else None
    vel_b = np.zeros_like(bwd.logits) if config.momentum > 0.0 else None
    metrics: list[MetricRecord] = []
    lam = config.lambda_simple if config.loss == "kl" else 0.0
    for outer in range(1, config.outer_iterations + 1):
        tail = _TailAverage(config)
        for step in range(1, config.updates_per_phase + 1):
            if outer == 1:
                x0 = p0_sampler(rng_data, config.batch_size)
                x1 = p1_sampler(rng_data, config.batch_size)
                if config.init_coupling == "minibatch_ot":
                    x0, x1 = minibatch_ot_coupling(x0, x1, ref, config.mb_epsilon)
            else:
                x1 = p1_sampler(rng_data, config.batch_size)
                x0 = _rollout_batch(bwd, ref, x1, rng_data)[:, 0]
            loss, klt, st, flat, tp, grads = _loss_and_grads(
                fwd, ref, x0, x1, rng_model, config.loss, lam)
            _sgd_update(fwd, flat, tp, grads, _step_lr(config, step), config.momentum, vel_f)
            tail.observe(step, fwd)
            metrics.append(MetricRecord(outer, "forward", step, loss, klt, st))
        tail.finalize(fwd)
        tail = _TailAverage(config)
        for step in range(1, config.updates_per_phase + 1):
            x0 = p0_sampler(rng_data, config.batch_size)
            x1 = _rollout_batch(fwd, ref, x0, rng_data)[:, -1]
            loss, klt, st, flat, tp, grads = _loss_and_grads(
                bwd, ref, x0, x1, rng_model, config.loss, lam)
            _sgd_update(bwd, flat, tp, grads, _step_lr(config, step), config.momentum, vel_b)
            tail.observe(step, bwd)
            metrics.append(MetricRecord(outer, "backward", step, loss, klt, st))
        tail.finalize(bwd)
    return fwd, bwd, metrics


def metrics_csv(metrics: list[MetricRecord]) -> str:
    lines = ["outer_iter,phase,step,loss,kl_term,simple_term"]
    for r in metrics:
        lines.append(f"{r.outer_iter},{r.phase},{r.step},{r.loss!r},{r.kl_term!r},{r.simple_term!r}")
    return "\n".join(lines) + "\n"


def write_metrics_csv(metrics: list[MetricRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(metrics_csv(metrics))


def _joint_rows(per_dim_rows: np.ndarray) -> np.ndarray:
    """(K, D, S) per-dimension rows -> (K, S^D) product rows."""
    k = per_dim_rows.shape[0]
    acc = per_dim_rows[:, 0, :]
    for d in range(1, per_dim_rows.shape[1]):
        acc = np.einsum("kp,ks->kps", acc, per_dim_rows[:, d, :]).reshape(k, -1)
    return acc


def model_markov_chain(model: TabularEndpointModel, ref: ReferenceProcess,
                       p0: CategoricalDistribution,
                       block: int = 512) -> MarkovChainProcess:
    """Exact Markov chain induced by a forward model, for enumerable spaces."""
    if model.direction != "forward":
        raise ValueError("only forward models induce a chain from p0")
    space, grid = model.space, model.grid
    k, last = space.num_states, grid.num_transitions
    all_states = space.unflatten(np.arange(k))
    transitions = []
    for n in range(1, last + 1):
        pred = model.endpoint_probs(np.arange(k), n)
        if n == last:
            rows = pred
        else:
            rows = np.empty_like(pred)
            for lo in range(0, k, block):
                hi = min(lo + block, k)
                bridge = _forward_bridge_batch(ref, n, all_states[lo:hi])
                rows[lo:hi] = np.einsum("gde,gdex->gdx", pred[lo:hi], bridge)
        transitions.append(_joint_rows(rows))
    return MarkovChainProcess(space, grid, p0, tuple(transitions))


def model_coupling(model: TabularEndpointModel, ref: ReferenceProcess,
                   start: CategoricalDistribution, block: int = 512) -> Coupling:
    """Exact endpoint coupling induced by a model and its start-side marginal.

    ``start`` is the time-0 marginal for forward models and the final-time
    marginal for backward models, which are propagated through reverse time.
    """
    from .projections import coupling_of_chain

    if model.direction == "forward":
        return coupling_of_chain(model_markov_chain(model, ref, start, block))
    space, grid = model.space, model.grid
    if start.space != space:
        raise SpaceMismatch("start marginal lives on a different space")
    k, last = space.num_states, grid.num_transitions
    all_states = space.unflatten(np.arange(k))
    joint = np.diag(start.probs)
    for n in range(last, 0, -1):
        pred = model.endpoint_probs(np.arange(k), n)
        if n == 1:
            rows = pred
        else:
            rows = np.empty_like(pred)
            for lo in range(0, k, block):
                hi = min(lo + block, k)
                bridge = _backward_bridge_batch(ref, n, all_states[lo:hi])
                rows[lo:hi] = np.einsum("gde,gdex->gdx", pred[lo:hi], bridge)
        joint = _joint_rows(rows).T @ joint
    return Coupling(space, joint / joint.sum())


def expected_loss_exact(model: TabularEndpointModel, ref: ReferenceProcess,
                        coupling: Coupling, lam: float = 0.0) -> float:
    """Exact KL training objective of a forward model, summed over all steps.

    Evaluates sum_{n<=N} E KL(bridge row || mixture) plus the expected
    terminal negative log-likelihood, plus ``lam`` times the endpoint
    negative log-likelihood accumulated over every index, with expectations
    taken under the reciprocal process of ``coupling``.  Materializes
    (S^D)^3 bridge tables, so only suitable for enumerable spaces.
    """
    if model.direction != "forward":
        raise ValueError("exact objective implemented for forward models")
    space, grid = model.space, model.grid
    k, last = space.num_states, grid.num_transitions
    recip = ReciprocalProcess(coupling, ref)
    all_states = space.unflatten(np.arange(k))
    total = 0.0
    for n in range(1, last + 1):
        weights = endpoint_joint(recip, n - 1)  # (state at t_{n-1}, endpoint)
        pred = model.endpoint_probs(np.arange(k), n)
        pred_joint = _joint_rows(pred)
        log_pred = np.log(np.maximum(pred_joint, PROB_FLOOR))
        if n == last:
            total += float((weights * -log_pred).sum()) * (1.0 + lam)
            continue
        bridge = _forward_bridge_batch(ref, n, all_states)  # (K, D, e, x)
        joint_bridge = np.ones((k, 1, 1))
        for d in range(space.num_dimensions):
            joint_bridge = (joint_bridge[:, :, None, :, None]
                            * bridge[:, d][:, None, :, None, :]).reshape(
                k, joint_bridge.shape[1] * bridge.shape[2],
                joint_bridge.shape[2] * bridge.shape[3])
        mix = np.einsum("ke,kex->kx", pred_joint, joint_bridge)
        log_mix = np.log(np.maximum(mix, PROB_FLOOR))
        per_pair = (xlogy(joint_bridge, joint_bridge)
                    - joint_bridge * log_mix[:, None, :]).sum(axis=2)
        total += float((weights * per_pair).sum())
        total += lam * float((weights * -log_pred).sum())
    return total


def save_model(model: TabularEndpointModel, path) -> None:
    """Write a JSON checkpoint with shape metadata and raw logits."""
    payload = {
        "direction": model.direction,
        "S": model.space.num_categories,
        "D": model.space.num_dimensions,
        "N": model.grid.num_intermediate,
        "logits": model.logits.tolist(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_model(path) -> TabularEndpointModel:
    """Read a checkpoint written by :func:`save_model`."""
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    expected = {"direction", "S", "D", "N", "logits"}
    if set(payload) != expected:
        raise ValueError(f"checkpoint keys must be exactly {sorted(expected)}")
    space = StateSpace(int(payload["S"]), int(payload["D"]))
    grid = TimeGrid(int(payload["N"]))
    return TabularEndpointModel(payload["direction"], space, grid,
                                np.asarray(payload["logits"], dtype=np.float64))
