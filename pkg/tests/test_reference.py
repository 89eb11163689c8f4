from __future__ import annotations

import numpy as np
import pytest

from catbridge.core import StateSpace, TimeGrid
from catbridge.reference import (
    AlphaOutOfRange,
    IndexOrder,
    ZeroMassPath,
    build_gaussian_reference,
    build_uniform_reference,
    cumulative_transition,
    endpoint_posterior_dims,
    backward_step_dims,
    bridge_endpoint_posterior,
    bridge_forward_step,
    forward_step_dims,
    reference_config,
    reference_from_config,
    reference_from_transitions,
    sample_bridge_path,
)

import oracles

# Hand-computed gaussian row for S=2, alpha=2: off-diagonal weight is
# exp(-4/alpha^2) = e^-1 and the normalizer sums delta in {-1, 0, 1}.
GAUSS_S2_A2_OFF = 0.21194155761708544


def uniform_matrix(s: int, alpha: float) -> np.ndarray:
    mat = np.full((s, s), alpha / (s - 1))
    np.fill_diagonal(mat, 1.0 - alpha)
    return mat


def gaussian_matrix(s: int, alpha: float) -> np.ndarray:
    delta = s - 1
    z = sum(np.exp(-4.0 * d * d / (alpha * delta) ** 2) for d in range(-delta, delta + 1))
    mat = np.empty((s, s))
    for x in range(s):
        off = 0.0
        for y in range(s):
            if y != x:
                mat[x, y] = np.exp(-4.0 * (y - x) ** 2 / (alpha * delta) ** 2) / z
                off += mat[x, y]
        mat[x, x] = 1.0 - off
    return mat


class TestBuilders:
    def test_uniform_rows(self):
        ref = build_uniform_reference(StateSpace(4, 1), TimeGrid(2), 0.3)
        got = np.exp(ref.log_transitions[0])
        assert np.allclose(got, uniform_matrix(4, 0.3), atol=1e-15)
        assert len(ref.log_transitions) == 3

    def test_gaussian_frozen_value(self):
        ref = build_gaussian_reference(StateSpace(2, 1), TimeGrid(0), 2.0)
        got = np.exp(ref.log_transitions[0])
        assert got[0, 1] == pytest.approx(GAUSS_S2_A2_OFF, abs=1e-15)
        assert got[0, 0] == pytest.approx(1.0 - GAUSS_S2_A2_OFF, abs=1e-15)

    @pytest.mark.parametrize("s", [2, 3, 50])
    @pytest.mark.parametrize("alpha", [0.01, 0.1, 1.0, 10.0])
    def test_gaussian_rows_valid(self, s, alpha):
        ref = build_gaussian_reference(StateSpace(s, 1), TimeGrid(1), alpha)
        mat = np.exp(ref.log_transitions[0])
        assert np.all(mat >= 0.0)
        assert np.allclose(mat.sum(axis=1), 1.0, atol=1e-12)
        assert np.allclose(mat, gaussian_matrix(s, alpha), atol=1e-12)

    def test_gaussian_small_alpha_stays_log_finite(self):
        # entries are astronomically small but must stay finite in log space
        ref = build_gaussian_reference(StateSpace(50, 1), TimeGrid(0), 0.02)
        logm = ref.log_transitions[0]
        assert np.all(np.isfinite(logm[0, :2]))
        assert logm[0, 49] < -1e4

    def test_uniform_alpha_range(self):
        space, grid = StateSpace(3, 1), TimeGrid(1)
        build_uniform_reference(space, grid, 0.0)
        build_uniform_reference(space, grid, 1.0)
        with pytest.raises(AlphaOutOfRange):
            build_uniform_reference(space, grid, -0.1)
        with pytest.raises(AlphaOutOfRange):
            build_uniform_reference(space, grid, 1.1)
        with pytest.raises(AlphaOutOfRange):
            build_gaussian_reference(space, grid, 0.0)

    def test_alpha_zero_is_identity(self):
        ref = build_uniform_reference(StateSpace(3, 1), TimeGrid(1), 0.0)
        assert np.allclose(np.exp(ref.log_transitions[0]), np.eye(3))

    def test_custom_transitions(self):
        mats = [np.array([[0.7, 0.3], [0.4, 0.6]]), np.array([[0.9, 0.1], [0.2, 0.8]])]
        ref = reference_from_transitions(StateSpace(2, 1), TimeGrid(1), mats)
        assert ref.kind == "custom"
        assert np.allclose(np.exp(ref.log_transitions[1]), mats[1])

    def test_config_round_trip(self):
        ref = build_gaussian_reference(StateSpace(5, 2), TimeGrid(3), 0.4)
        cfg = reference_config(ref)
        assert cfg == {"kind": "gaussian", "alpha": 0.4, "S": 5, "D": 2, "N": 3}
        ref2 = reference_from_config(cfg)
        assert np.array_equal(ref2.log_transitions, ref.log_transitions)
        with pytest.raises(ValueError):
            reference_from_config({**cfg, "extra": 1})
        with pytest.raises(ValueError):
            reference_from_config({"kind": "gaussian"})


class TestCumulative:
    def test_matches_naive_product(self):
        ref = build_gaussian_reference(StateSpace(4, 1), TimeGrid(2), 0.8)
        mats = [np.exp(m) for m in ref.log_transitions]
        prod = mats[0] @ mats[1] @ mats[2]
        assert np.allclose(cumulative_transition(ref, 0, 3), prod, atol=1e-12)
        assert np.allclose(cumulative_transition(ref, 1, 2), mats[1], atol=1e-15)

    def test_chapman_kolmogorov(self):
        ref = build_gaussian_reference(StateSpace(6, 1), TimeGrid(3), 0.5)
        for a in range(4):
            for b in range(a + 1, 5):
                for c in range(b + 1, 5):
                    lhs = cumulative_transition(ref, a, b) @ cumulative_transition(ref, b, c)
                    rhs = cumulative_transition(ref, a, c)
                    assert np.abs(lhs - rhs).max() < 1e-10

    def test_index_order(self):
        ref = build_uniform_reference(StateSpace(3, 1), TimeGrid(1), 0.5)
        with pytest.raises(IndexOrder):
            ref.log_cum(2, 1)
        with pytest.raises(IndexOrder):
            ref.log_cum(1, 1)
        with pytest.raises(IndexOrder):
            ref.log_cum(0, 3)


class TestBridges:
    def setup_method(self):
        self.space = StateSpace(3, 1)
        self.grid = TimeGrid(2)
        self.ref = build_gaussian_reference(self.space, self.grid, 0.9)
        self.mats = [np.exp(m) for m in self.ref.log_transitions]

    def oracle_law(self, x0: int, x1: int) -> dict:
        return oracles.reference_bridge_law(self.mats, x0, x1)

    def test_posterior_matches_enumeration(self):
        for x0 in range(3):
            for x1 in range(3):
                law = self.oracle_law(x0, x1)
                for n in (1, 2):
                    want = oracles.marginal_at(law, n, 3)
                    got = endpoint_posterior_dims(self.ref, n, [x0], [x1])[0]
                    assert np.abs(got - want).max() < 1e-12

    def test_forward_step_matches_enumeration(self):
        law = self.oracle_law(1, 2)
        # conditional of point n given point n-1 under the pinned law
        joint = oracles.pair_joint_at(law, 1, 3)
        prev = oracles.marginal_at(law, 1, 3)
        for s in range(3):
            if prev[s] == 0.0:
                continue
            want = joint[s] / prev[s]
            got = forward_step_dims(self.ref, 2, [s], [2])[0]
            assert np.abs(got - want).max() < 1e-12

    def test_terminal_steps_are_point_masses(self):
        got = forward_step_dims(self.ref, 3, [1], [2])[0]
        assert np.array_equal(got, np.eye(3)[2])
        got = backward_step_dims(self.ref, 1, [2], [0])[0]
        assert np.array_equal(got, np.eye(3)[0])

    def test_backward_step_matches_enumeration(self):
        law = self.oracle_law(0, 2)
        joint = oracles.pair_joint_at(law, 1, 3)
        nxt = oracles.marginal_at(law, 2, 3)
        for s in range(3):
            if nxt[s] == 0.0:
                continue
            want = joint[:, s] / nxt[s]
            got = backward_step_dims(self.ref, 2, [s], [0])[0]
            assert np.abs(got - want).max() < 1e-12

    def test_multi_dim_factorization(self):
        space = StateSpace(3, 2)
        ref = build_gaussian_reference(space, TimeGrid(2), 0.9)
        x0 = np.array([1, 0])
        x1 = np.array([2, 2])
        per_dim = endpoint_posterior_dims(ref, 1, x0, x1)
        joint = bridge_endpoint_posterior(ref, 1, x0, x1)
        assert joint.probs.shape == (9,)
        assert np.abs(joint.probs.reshape(3, 3)
                      - np.outer(per_dim[0], per_dim[1])).max() < 1e-14
        step = bridge_forward_step(ref, 1, x0, x1)
        rows = forward_step_dims(ref, 1, x0, x1)
        assert np.abs(step.probs.reshape(3, 3)
                      - np.outer(rows[0], rows[1])).max() < 1e-14

    def test_zero_mass_path(self):
        ref = build_uniform_reference(self.space, self.grid, 0.0)
        with pytest.raises(ZeroMassPath):
            endpoint_posterior_dims(ref, 1, [0], [2])

    def test_sample_frequencies(self):
        rng = np.random.default_rng(12)
        x0, x1 = np.array([0]), np.array([2])
        draws = np.stack([
            sample_bridge_path(self.ref, x0, x1, rng) for _ in range(20_000)])
        law = self.oracle_law(0, 2)
        want = oracles.marginal_at(law, 1, 3)
        freq = np.bincount(draws[:, 0, 0], minlength=3) / draws.shape[0]
        assert 0.5 * np.abs(freq - want).sum() < 0.02

    def test_sample_pins_endpoints_excluded(self):
        rng = np.random.default_rng(0)
        path = sample_bridge_path(self.ref, np.array([0]), np.array([2]), rng)
        assert path.shape == (2, 1)
