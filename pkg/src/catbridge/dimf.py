"""Alternating projection solver on path space, plus its certification tools.

Starting from a reciprocal process whose coupling marries the prescribed
endpoint laws, the driver alternates Markovian and reciprocal projections.
Each projection can only shrink the path KL to the target process, so the
run aborts if the recorded divergence ever increases beyond a small slack:
that always indicates a defect (or a target that is not the fixed point),
never acceptable numerical noise.

The fixed point is simultaneously Markov, reciprocal, and pinned to the
endpoint marginals; :func:`characterization_check` measures all three
properties by brute-force path enumeration on spaces small enough for it.
"""

from __future__ import annotations

import io
import time
from dataclasses import dataclass, replace

import numpy as np

from .core import (
    CategoricalDistribution,
    Coupling,
    MarkovChainProcess,
    SpaceMismatch,
    kl_couplings,
    coupling_marginals,
    tv_distance,
)
from .projections import (
    ReciprocalProcess,
    ReferenceMismatch,
    coupling_of_chain,
    markovian_projection,
    path_kl_markov,
    path_kl_reciprocal,
    reciprocal_projection,
    same_reference,
)
from .reference import ReferenceProcess


class SupportViolation(ValueError):
    """An endpoint marginal or supplied coupling lacks the required support."""


class NonDecreaseDetected(RuntimeError):
    """Path KL to the target increased between half-iterations."""


class EnumerationTooLarge(ValueError):
    """Path enumeration would exceed the configured budget."""


# KL may fluctuate upward by at most this much before the run is aborted.
KL_SLACK = 1e-9

_HISTORY_COLUMNS = ("iteration", "parity", "path_kl", "coupling_kl", "wall_time_ms")


@dataclass(frozen=True)
class DimfRecord:
    """One history row, written after every half-iteration."""

    iteration: int
    parity: str  # "reciprocal" | "markov"
    path_kl: float
    coupling_kl: float
    wall_time_ms: float


@dataclass(frozen=True)
class DimfState:
    """Driver state: endpoint data, current iterate and run history."""

    p0: CategoricalDistribution
    p1: CategoricalDistribution
    ref: ReferenceProcess
    process: ReciprocalProcess | MarkovChainProcess
    iteration: int
    history: tuple[DimfRecord, ...]

    @property
    def parity(self) -> str:
        return "reciprocal" if isinstance(self.process, ReciprocalProcess) else "markov"

    def current_coupling(self) -> Coupling:
        if isinstance(self.process, ReciprocalProcess):
            return self.process.coupling
        return coupling_of_chain(self.process)


def dimf_init(p0: CategoricalDistribution, p1: CategoricalDistribution,
              ref: ReferenceProcess, init: str = "independent",
              coupling: Coupling | None = None) -> DimfState:
    """Start from the independent coupling p0 x p1 or from a supplied plan."""
    if p0.space != ref.space or p1.space != ref.space:
        raise SpaceMismatch("marginals and reference live on different spaces")
    if float(p0.probs.min()) <= 0.0 or float(p1.probs.min()) <= 0.0:
        raise SupportViolation("endpoint marginals must have full support")
    if init == "independent":
        start = Coupling.independent(p0, p1)
    elif init == "from_coupling":
        if coupling is None:
            raise ValueError("init='from_coupling' needs an explicit coupling")
        start = coupling
        m0, m1 = coupling_marginals(coupling)
        if tv_distance(m0, p0) > 1e-9 or tv_distance(m1, p1) > 1e-9:
            raise SupportViolation("supplied coupling does not marry the endpoint marginals")
    else:
        raise ValueError(f"unknown init mode: {init!r}")
    return DimfState(p0, p1, ref, reciprocal_projection(start, ref), 0, ())


def dimf_step(state: DimfState) -> DimfState:
    """Apply one projection: Markovian on a reciprocal iterate, and vice versa."""
    if isinstance(state.process, ReciprocalProcess):
        nxt = markovian_projection(state.process)
    else:
        nxt = reciprocal_projection(coupling_of_chain(state.process), state.ref)
    return replace(state, process=nxt, iteration=state.iteration + 1)


def _target_pair(state: DimfState, target) -> tuple[ReciprocalProcess, MarkovChainProcess]:
    if isinstance(target, Coupling):
        target = reciprocal_projection(target, state.ref)
    if isinstance(target, ReciprocalProcess):
        if not same_reference(target.ref, state.ref):
            raise ReferenceMismatch("target reciprocal process uses a different reference")
        return target, markovian_projection(target)
    if isinstance(target, MarkovChainProcess):
        return reciprocal_projection(coupling_of_chain(target), state.ref), target
    raise TypeError("target must be a Coupling, ReciprocalProcess or MarkovChainProcess")


def _divergences(state: DimfState, t_recip: ReciprocalProcess,
                 t_markov: MarkovChainProcess) -> tuple[float, float]:
    if isinstance(state.process, ReciprocalProcess):
        path_kl = path_kl_reciprocal(state.process, t_recip)
    else:
        path_kl = path_kl_markov(state.process, t_markov)
    coupling_kl = kl_couplings(state.current_coupling(), t_recip.coupling)
    return path_kl, coupling_kl


def dimf_run(state: DimfState, target, max_iters: int = 200,
             kl_tol: float = 1e-12) -> DimfState:
    """Alternate projections until path KL to the target falls below kl_tol.

    ``target`` is the fixed point the iterates should approach, given as a
    coupling (paired with the state's reference), a reciprocal process, or a
    Markov chain.  At most ``max_iters`` projections are applied; one history
    record is appended per half-iteration, including the starting point.
    """
    t_recip, t_markov = _target_pair(state, target)
    path_kl, coupling_kl = _divergences(state, t_recip, t_markov)
    records = list(state.history)
    records.append(DimfRecord(state.iteration, state.parity, path_kl, coupling_kl, 0.0))
    for _ in range(max_iters):
        if path_kl <= kl_tol:
            break
        tic = time.perf_counter()
        state = dimf_step(state)
        elapsed_ms = (time.perf_counter() - tic) * 1e3
        new_path_kl, coupling_kl = _divergences(state, t_recip, t_markov)
        records.append(
            DimfRecord(state.iteration, state.parity, new_path_kl, coupling_kl, elapsed_ms)
        )
        if new_path_kl > path_kl + KL_SLACK:
            raise NonDecreaseDetected(
                f"path KL rose from {path_kl!r} to {new_path_kl!r} at iteration {state.iteration}"
            )
        path_kl = new_path_kl
    return replace(state, history=tuple(records))


def fixed_point_chain(plan: Coupling, ref: ReferenceProcess) -> MarkovChainProcess:
    """Markov representation of the bridge with the given endpoint plan."""
    return markovian_projection(reciprocal_projection(plan, ref))


def history_csv(state: DimfState) -> str:
    """Render the run history as CSV text."""
    buf = io.StringIO()
    buf.write(",".join(_HISTORY_COLUMNS) + "\n")
    for rec in state.history:
        buf.write(
            f"{rec.iteration},{rec.parity},{rec.path_kl!r},"
            f"{rec.coupling_kl!r},{rec.wall_time_ms!r}\n"
        )
    return buf.getvalue()


def write_history_csv(state: DimfState, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(history_csv(state))


@dataclass(frozen=True)
class CharacterizationReport:
    """Residuals of the three fixed-point properties, plus the verdict."""

    markov_residual: float
    reciprocal_residual: float
    marginal_residuals: tuple[float, float]
    certified: bool


def _enumerate_paths(num_states: int, num_points: int, limit: int) -> np.ndarray:
    count = num_states ** num_points
    if count > limit:
        raise EnumerationTooLarge(
            f"{num_states}^{num_points} paths exceed the enumeration budget {limit}"
        )
    grid = np.indices((num_states,) * num_points).reshape(num_points, count)
    return grid.T.astype(np.int64)


def _chain_path_probs(m: MarkovChainProcess, paths: np.ndarray) -> np.ndarray:
    probs = m.initial.probs[paths[:, 0]].copy()
    for n, mat in enumerate(m.transitions):
        probs *= mat[paths[:, n], paths[:, n + 1]]
    return probs


def _reference_path_probs(ref: ReferenceProcess, paths: np.ndarray) -> np.ndarray:
    """Unconditional reference path mass started from each path's own x_0."""
    from .projections import _joint_step  # local import to avoid cycle at module load

    probs = np.ones(paths.shape[0])
    for n in range(1, ref.grid.num_transitions + 1):
        probs *= _joint_step(ref, n)[paths[:, n - 1], paths[:, n]]
    return probs


def _reciprocal_path_probs(r: ReciprocalProcess, paths: np.ndarray) -> np.ndarray:
    ref_mass = _reference_path_probs(r.ref, paths)
    pair_totals = np.zeros((r.space.num_states, r.space.num_states))
    np.add.at(pair_totals, (paths[:, 0], paths[:, -1]), ref_mass)
    q = r.coupling.probs[paths[:, 0], paths[:, -1]]
    totals = pair_totals[paths[:, 0], paths[:, -1]]
    live = q > 0.0
    if np.any(totals[live] == 0.0):
        from .reference import ZeroMassPath

        raise ZeroMassPath("coupling places mass on endpoint pairs the reference cannot join")
    out = np.zeros(paths.shape[0])
    out[live] = q[live] * ref_mass[live] / totals[live]
    return out


def _max_bridge_tv(process_probs: np.ndarray, ref: ReferenceProcess,
                   paths: np.ndarray, num_states: int) -> float:
    """Max over endpoint pairs of TV(process bridge, reference bridge)."""
    ref_mass = _reference_path_probs(ref, paths)
    pair = paths[:, 0] * num_states + paths[:, -1]
    k2 = num_states * num_states
    proc_tot = np.bincount(pair, weights=process_probs, minlength=k2)
    ref_tot = np.bincount(pair, weights=ref_mass, minlength=k2)
    visited = proc_tot[pair] > 1e-15
    cond_proc = np.zeros_like(process_probs)
    cond_ref = np.zeros_like(process_probs)
    cond_proc[visited] = process_probs[visited] / proc_tot[pair[visited]]
    ref_ok = visited & (ref_tot[pair] > 0.0)
    cond_ref[ref_ok] = ref_mass[ref_ok] / ref_tot[pair[ref_ok]]
    gaps = 0.5 * np.bincount(pair, weights=np.abs(cond_proc - cond_ref), minlength=k2)
    return float(gaps.max())


def characterization_check(process, ref: ReferenceProcess, tol: float,
                           p0: CategoricalDistribution, p1: CategoricalDistribution,
                           limit: int = 4_000_000) -> CharacterizationReport:
    """Certify the three fixed-point properties by path enumeration.

    Measures (i) Markovianity as path-space TV between the process and its own
    Markovian projection, (ii) reciprocity as the worst-case TV between the
    process bridges and the reference bridges over visited endpoint pairs, and
    (iii) agreement of the endpoint time marginals with p0 and p1.  A process
    passing all three at a small tolerance is the unique fixed point.
    """
    if isinstance(process, MarkovChainProcess):
        if process.space != ref.space or process.grid != ref.grid:
            raise SpaceMismatch("process and reference disagree on space or grid")
        paths = _enumerate_paths(process.space.num_states, process.grid.num_points, limit)
        path_probs = _chain_path_probs(process, paths)
        markov_residual = 0.0
        margs = process.time_marginals()
        first, last = margs[0], margs[-1]
    elif isinstance(process, ReciprocalProcess):
        if not same_reference(process.ref, ref):
            raise ReferenceMismatch("process is reciprocal for a different reference")
        paths = _enumerate_paths(process.space.num_states, process.grid.num_points, limit)
        path_probs = _reciprocal_path_probs(process, paths)
        proj = markovian_projection(process)
        markov_residual = 0.5 * float(
            np.abs(path_probs - _chain_path_probs(proj, paths)).sum()
        )
        m0, m1 = coupling_marginals(process.coupling)
        first, last = m0.probs, m1.probs
    else:
        raise TypeError("process must be a MarkovChainProcess or ReciprocalProcess")
    reciprocal_residual = _max_bridge_tv(path_probs, ref, paths, process.space.num_states)
    marginal_residuals = (
        0.5 * float(np.abs(first - p0.probs).sum()),
        0.5 * float(np.abs(last - p1.probs).sum()),
    )
    certified = (
        markov_residual < tol
        and reciprocal_residual < tol
        and max(marginal_residuals) < tol
    )
    return CharacterizationReport(markov_residual, reciprocal_residual,
                                  marginal_residuals, certified)
