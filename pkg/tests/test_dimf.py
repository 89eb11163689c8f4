from __future__ import annotations

import numpy as np
import pytest

from catbridge.core import (
    CategoricalDistribution,
    Coupling,
    MarkovChainProcess,
    StateSpace,
    TimeGrid,
)
from catbridge.dimf import (
    EnumerationTooLarge,
    NonDecreaseDetected,
    SupportViolation,
    characterization_check,
    dimf_init,
    dimf_run,
    dimf_step,
    fixed_point_chain,
    history_csv,
    write_history_csv,
)
from catbridge.eot import EotProblem, cost_from_reference, sinkhorn_solve
from catbridge.projections import (
    ReciprocalProcess,
    coupling_of_chain,
    markovian_projection,
    reciprocal_projection,
)
from catbridge.reference import build_gaussian_reference, build_uniform_reference


def linear_pair(s: int):
    space = StateSpace(s, 1)
    w = np.arange(1, s + 1, dtype=float)
    return (CategoricalDistribution.uniform(space),
            CategoricalDistribution(space, w / w.sum()))


def solve_plan(p0, p1, ref):
    return sinkhorn_solve(EotProblem(p0, p1, cost_from_reference(ref)),
                          marginal_tol=1e-13)


class TestInit:
    def test_independent(self):
        p0, p1 = linear_pair(4)
        ref = build_gaussian_reference(p0.space, TimeGrid(2), 0.5)
        state = dimf_init(p0, p1, ref)
        assert isinstance(state.process, ReciprocalProcess)
        assert np.abs(state.process.coupling.probs
                      - np.outer(p0.probs, p1.probs)).max() < 1e-15
        assert state.iteration == 0

    def test_supplied_coupling(self):
        p0, p1 = linear_pair(3)
        ref = build_gaussian_reference(p0.space, TimeGrid(1), 0.5)
        plan = solve_plan(p0, p1, ref)
        state = dimf_init(p0, p1, ref, init="from_coupling", coupling=plan)
        assert np.array_equal(state.process.coupling.probs, plan.probs)

    def test_rejects_marginal_mismatch(self):
        p0, p1 = linear_pair(3)
        ref = build_gaussian_reference(p0.space, TimeGrid(1), 0.5)
        wrong = Coupling.independent(p1, p1)
        with pytest.raises(SupportViolation):
            dimf_init(p0, p1, ref, init="from_coupling", coupling=wrong)

    def test_rejects_partial_support(self):
        space = StateSpace(3, 1)
        ref = build_gaussian_reference(space, TimeGrid(1), 0.5)
        p0 = CategoricalDistribution(space, np.array([0.5, 0.5, 0.0]))
        p1 = CategoricalDistribution.uniform(space)
        with pytest.raises(SupportViolation):
            dimf_init(p0, p1, ref)


class TestRun:
    @pytest.mark.parametrize("builder,alpha", [
        (build_gaussian_reference, 0.5),
        (build_uniform_reference, 0.35),
    ])
    def test_converges_to_sinkhorn_plan(self, builder, alpha):
        p0, p1 = linear_pair(6)
        ref = builder(p0.space, TimeGrid(3), alpha)
        plan = solve_plan(p0, p1, ref)
        state = dimf_run(dimf_init(p0, p1, ref), plan, max_iters=400, kl_tol=1e-14)
        assert np.abs(state.current_coupling().probs - plan.probs).max() < 1e-7
        assert state.history[-1].path_kl <= 1e-14

    def test_path_kl_monotone(self):
        p0, p1 = linear_pair(5)
        ref = build_gaussian_reference(p0.space, TimeGrid(2), 0.4)
        plan = solve_plan(p0, p1, ref)
        state = dimf_run(dimf_init(p0, p1, ref), plan, max_iters=60, kl_tol=0.0)
        kls = [rec.path_kl for rec in state.history]
        assert all(b <= a + 1e-9 for a, b in zip(kls, kls[1:]))

    def test_alternates_parity(self):
        p0, p1 = linear_pair(4)
        ref = build_gaussian_reference(p0.space, TimeGrid(1), 0.5)
        state = dimf_init(p0, p1, ref)
        assert state.parity == "reciprocal"
        state = dimf_step(state)
        assert state.parity == "markov"
        assert isinstance(state.process, MarkovChainProcess)
        state = dimf_step(state)
        assert state.parity == "reciprocal"

    def test_marginals_preserved_every_iterate(self):
        p0, p1 = linear_pair(5)
        ref = build_gaussian_reference(p0.space, TimeGrid(2), 0.7)
        plan = solve_plan(p0, p1, ref)
        state = dimf_init(p0, p1, ref)
        for _ in range(6):
            state = dimf_step(state)
            coupling = state.current_coupling()
            assert np.abs(coupling.probs.sum(axis=1) - p0.probs).max() < 1e-12
            assert np.abs(coupling.probs.sum(axis=0) - p1.probs).max() < 1e-12

    def test_fixed_point_invariance(self):
        p0, p1 = linear_pair(5)
        ref = build_gaussian_reference(p0.space, TimeGrid(2), 0.5)
        plan = solve_plan(p0, p1, ref)
        state = dimf_init(p0, p1, ref, init="from_coupling", coupling=plan)
        state = dimf_run(state, plan, max_iters=4, kl_tol=0.0)
        # starting at the fixed point, iterates stay there
        assert np.abs(state.current_coupling().probs - plan.probs).max() < 1e-10
        for rec in state.history:
            assert rec.path_kl < 1e-9

    def test_non_decrease_guard(self):
        # aiming at a target that is not the fixed point must trip the guard
        p0, p1 = linear_pair(4)
        ref = build_gaussian_reference(p0.space, TimeGrid(2), 0.5)
        rng = np.random.default_rng(0)
        raw = rng.random((4, 4)) + 0.1
        bogus = Coupling(p0.space, raw / raw.sum())
        with pytest.raises(NonDecreaseDetected):
            dimf_run(dimf_init(p0, p1, ref), bogus, max_iters=200, kl_tol=0.0)

    def test_fixed_point_chain(self):
        p0, p1 = linear_pair(4)
        ref = build_gaussian_reference(p0.space, TimeGrid(2), 0.6)
        plan = solve_plan(p0, p1, ref)
        chain = fixed_point_chain(plan, ref)
        got = coupling_of_chain(chain)
        assert np.abs(got.probs - plan.probs).max() < 1e-10


class TestHistoryCsv:
    def test_format(self, tmp_path):
        p0, p1 = linear_pair(3)
        ref = build_gaussian_reference(p0.space, TimeGrid(1), 0.5)
        plan = solve_plan(p0, p1, ref)
        state = dimf_run(dimf_init(p0, p1, ref), plan, max_iters=10, kl_tol=1e-13)
        text = history_csv(state)
        lines = text.strip().splitlines()
        assert lines[0] == "iteration,parity,path_kl,coupling_kl,wall_time_ms"
        assert len(lines) == len(state.history) + 1
        first = lines[1].split(",")
        assert first[0] == "0" and first[1] == "reciprocal"
        float(first[2]), float(first[3]), float(first[4])
        path = tmp_path / "history.csv"
        write_history_csv(state, path)
        assert path.read_text() == text


class TestCharacterization:
    def make_converged(self, s=5, n=2, alpha=0.5):
        p0, p1 = linear_pair(s)
        ref = build_gaussian_reference(p0.space, TimeGrid(n), alpha)
        plan = solve_plan(p0, p1, ref)
        state = dimf_run(dimf_init(p0, p1, ref), plan, max_iters=400, kl_tol=1e-15)
        return p0, p1, ref, plan, state

    def test_converged_chain_certified(self):
        p0, p1, ref, plan, state = self.make_converged()
        chain = fixed_point_chain(plan, ref)
        report = characterization_check(chain, ref, 1e-6, p0, p1)
        assert report.certified
        assert report.markov_residual == 0.0
        assert report.reciprocal_residual < 1e-6
        assert max(report.marginal_residuals) < 1e-9

    def test_reciprocal_iterate_certified(self):
        p0, p1, ref, plan, state = self.make_converged()
        recip = reciprocal_projection(plan, ref)
        report = characterization_check(recip, ref, 1e-6, p0, p1)
        assert report.certified

    def test_independent_coupling_not_markov(self):
        # the reciprocal process of a generic coupling fails the Markov test
        p0, p1 = linear_pair(4)
        ref = build_gaussian_reference(p0.space, TimeGrid(2), 0.9)
        rng = np.random.default_rng(3)
        raw = rng.random((4, 4)) + 0.01
        recip = ReciprocalProcess(Coupling(p0.space, raw / raw.sum()), ref)
        report = characterization_check(recip, ref, 1e-6, p0, p1)
        assert report.markov_residual > 1e-4
        assert not report.certified

    def test_wrong_marginals_flagged(self):
        p0, p1, ref, plan, state = self.make_converged()
        chain = fixed_point_chain(plan, ref)
        u = CategoricalDistribution.uniform(p0.space)
        report = characterization_check(chain, ref, 1e-6, p0, u)
        assert report.marginal_residuals[1] > 1e-3
        assert not report.certified

    def test_perturbed_chain_not_reciprocal(self):
        p0, p1, ref, plan, state = self.make_converged()
        chain = fixed_point_chain(plan, ref)
        mats = [m.copy() for m in chain.transitions]
        mats[1][0] = np.roll(mats[1][0], 1)
        bad = MarkovChainProcess(chain.space, chain.grid, chain.initial, tuple(mats))
        report = characterization_check(bad, ref, 1e-6, p0, p1)
        assert not report.certified

    def test_enumeration_guard(self):
        p0, p1 = linear_pair(6)
        ref = build_gaussian_reference(p0.space, TimeGrid(10), 0.5)
        plan = solve_plan(p0, p1, ref)
        chain = fixed_point_chain(plan, ref)
        with pytest.raises(EnumerationTooLarge):
            characterization_check(chain, ref, 1e-6, p0, p1, limit=1000)
