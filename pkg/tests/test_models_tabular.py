import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ssmd.core import Ordering, SequenceSpec, SpecError, make_reveal_state, make_rng, sample_ordering
from ssmd.models.tabular import (
    TabularModel,
    tabular_draft_row,
    tabular_target_row,
)

# the worked D=2, S=2 example: joint[x0][x1]
JOINT_2x2 = np.array([[0.4, 0.1], [0.1, 0.4]])


def two_site_model(**kw):
    return TabularModel(SequenceSpec(S=2, D=2), JOINT_2x2, **kw)


class TestConstruction:
    def test_rejects_unnormalized(self):
        with pytest.raises(SpecError):
            TabularModel(SequenceSpec(S=2, D=2), JOINT_2x2 * 1.01)

    def test_rejects_negative(self):
        bad = np.array([[0.6, -0.1], [0.1, 0.4]])
        with pytest.raises(SpecError):
            TabularModel(SequenceSpec(S=2, D=2), bad)

    def test_rejects_oversized_joint(self):
        with pytest.raises(SpecError):
            TabularModel(SequenceSpec(S=10, D=8), np.zeros(8))

    def test_rejects_bad_mode(self):
        with pytest.raises(SpecError):
            two_site_model(draft_mode="fuzzy")


class TestConditionals:
    def test_conditional_given_first(self):
        m = two_site_model()
        row = m.conditional({0: 0}, 1)
        assert row == pytest.approx([0.8, 0.2])

    def test_marginal(self):
        m = two_site_model()
        assert m.conditional({}, 1) == pytest.approx([0.5, 0.5])

    def test_uniform_joint_gives_uniform_rows(self):
        spec = SequenceSpec(S=3, D=3)
        m = TabularModel(spec, np.full((3, 3, 3), 1 / 27))
        for assigned in ({}, {0: 1}, {0: 2, 2: 0}):
            pos = next(p for p in range(3) if p not in assigned)
            assert m.conditional(assigned, pos) == pytest.approx([1 / 3] * 3)

    def test_impossible_context(self):
        joint = np.array([[0.5, 0.5], [0.0, 0.0]])
        m = TabularModel(SequenceSpec(S=2, D=2), joint)
        with pytest.raises(SpecError, match="impossible context"):
            m.conditional({0: 1}, 1)


class TestDraftTargetRows:
    def test_draft_row_worked_example(self):
        m = two_site_model()
        spec = m.spec
        order = Ordering(np.array([0, 1]))
        state = make_reveal_state(spec, np.array([0, 0]), order, 1)
        assert tabular_draft_row(m, state, 1) == pytest.approx([0.8, 0.2])
        state0 = make_reveal_state(spec, np.array([0, 0]), order, 0)
        assert tabular_draft_row(m, state0, 1) == pytest.approx([0.5, 0.5])

    def test_target_row_chain_rule(self):
        m = two_site_model()
        order = Ordering(np.array([0, 1]))
        state = make_reveal_state(m.spec, np.array([0, 0]), order, 0)
        row = tabular_target_row(m, state, np.array([0]), 1)
        assert row == pytest.approx([0.8, 0.2])

    def test_target_equals_draft_with_empty_prefix_exact_mode(self):
        m = two_site_model()
        order = Ordering(np.array([1, 0]))
        state = make_reveal_state(m.spec, np.array([0, 1]), order, 1)
        np.testing.assert_allclose(
            tabular_target_row(m, state, np.array([]), 1),
            tabular_draft_row(m, state, 1),
        )

    def test_product_joint_target_equals_draft_everywhere(self):
        spec = SequenceSpec(S=3, D=4)
        rng = make_rng(0)
        rows = rng.dirichlet(np.ones(3), size=4)
        m = TabularModel.product(spec, rows)
        order = sample_ordering(rng, 4)
        state = make_reveal_state(spec, rng.integers(0, 3, 4), order, 1)
        for slot in range(1, 4):
            prefix = rng.integers(0, 3, slot - 1)
            np.testing.assert_allclose(
                tabular_target_row(m, state, prefix, slot),
                tabular_draft_row(m, state, slot),
                atol=1e-12,
            )

    def test_perturbed_draft_mixes_uniform(self):
        m = two_site_model(draft_mode="perturbed", eps=0.5)
        order = Ordering(np.array([0, 1]))
        state = make_reveal_state(m.spec, np.array([0, 0]), order, 1)
        exact = np.array([0.8, 0.2])
        assert tabular_draft_row(m, state, 1) == pytest.approx(0.5 * exact + 0.25)

    def test_chain_rule_recovers_joint(self):
        spec = SequenceSpec(S=2, D=4)
        rng = make_rng(3)
        m = TabularModel.random(spec, rng)
        for _ in range(5):
            order = sample_ordering(rng, 4)
            x = rng.integers(0, 2, 4)
            state = make_reveal_state(spec, x, order, 0)
            x_sig = x[order.perm]
            prob = 1.0
            for d in range(4):
                prob *= tabular_target_row(m, state, x_sig[:d], d)[x_sig[d]]
            assert prob == pytest.approx(m.joint[tuple(x)], abs=1e-10)


class TestModelInterface:
    def test_draft_pass_matches_row_op(self):
        rng = make_rng(1)
        spec = SequenceSpec(S=3, D=4)
        m = TabularModel.random(spec, rng, draft_mode="perturbed")
        order = sample_ordering(rng, 4)
        state = make_reveal_state(spec, rng.integers(0, 3, 4), order, 1)
        rows, _ = m.draft_pass(state, horizon=3)
        for k in range(3):
            np.testing.assert_array_equal(rows[k], tabular_draft_row(m, state, 1 + k))

    def test_first_slot_target_equals_draft_exactly(self):
        rng = make_rng(2)
        spec = SequenceSpec(S=3, D=4)
        m = TabularModel.random(spec, rng, draft_mode="perturbed", eps=0.3)
        order = sample_ordering(rng, 4)
        state = make_reveal_state(spec, rng.integers(0, 3, 4), order, 1)
        rows, cache = m.draft_pass(state, horizon=3)
        targets = m.target_rows(cache, rng.integers(0, 3, 3), 1, 4)
        np.testing.assert_array_equal(targets[0], rows[0])

    @given(st.integers(0, 10**6))
    @settings(max_examples=25, deadline=None)
    def test_target_causality_probe(self, seed):
        # target row at slot d never depends on drafted tokens at slots >= d
        rng = make_rng(seed)
        spec = SequenceSpec(S=3, D=5)
        m = TabularModel.random(spec, rng, draft_mode="perturbed")
        order = sample_ordering(rng, 5)
        i = int(rng.integers(0, 4))
        state = make_reveal_state(spec, rng.integers(0, 3, 5), order, i)
        _, cache = m.draft_pass(state, horizon=5 - i)
        drafted = rng.integers(0, 3, 5 - i)
        d = int(rng.integers(i, 5))
        base = m.target_rows(cache, drafted, d, d + 1)
        tampered = drafted.copy()
        tampered[d - i :] = rng.integers(0, 3, 5 - d)
        np.testing.assert_array_equal(base, m.target_rows(cache, tampered, d, d + 1))

    def test_draft_invariance_to_drafted_tokens(self):
        rng = make_rng(4)
        spec = SequenceSpec(S=2, D=4)
        m = TabularModel.random(spec, rng, draft_mode="perturbed")
        order = sample_ordering(rng, 4)
        state = make_reveal_state(spec, rng.integers(0, 2, 4), order, 2)
        rows1, cache = m.draft_pass(state, horizon=2)
        m.target_rows(cache, np.array([0, 0]), 2, 4)
        rows2, _ = m.draft_pass(state, horizon=2)
        np.testing.assert_array_equal(rows1, rows2)

    def test_pass_counters(self):
        rng = make_rng(5)
        spec = SequenceSpec(S=2, D=3)
        m = TabularModel.random(spec, rng)
        order = sample_ordering(rng, 3)
        state = make_reveal_state(spec, rng.integers(0, 2, 3), order, 0)
        _, cache = m.draft_pass(state, 3)
        m.target_rows(cache, np.array([0, 1]), 0, 3)
        assert (m.draft_pass_count, m.target_pass_count) == (1, 1)
        m.reset_counters()
        assert (m.draft_pass_count, m.target_pass_count) == (0, 0)

    def test_bad_horizon_rejected(self):
        rng = make_rng(6)
        spec = SequenceSpec(S=2, D=3)
        m = TabularModel.random(spec, rng)
        order = sample_ordering(rng, 3)
        state = make_reveal_state(spec, rng.integers(0, 2, 3), order, 1)
        with pytest.raises(ValueError):
            m.draft_pass(state, 3)
        with pytest.raises(ValueError):
            m.draft_pass(state, 0)


class TestRandomFactories:
    def test_random_joint_normalized(self):
        m = TabularModel.random(SequenceSpec(S=3, D=3), make_rng(0))
        assert m.joint.sum() == pytest.approx(1.0, abs=1e-12)

    def test_product_marginals_match_rows(self):
        rng = make_rng(1)
        rows = rng.dirichlet(np.ones(2), size=3)
        m = TabularModel.product(SequenceSpec(S=2, D=3), rows)
        for d in range(3):
            np.testing.assert_allclose(m.conditional({}, d), rows[d], atol=1e-12)
