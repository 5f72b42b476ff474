import itertools

import numpy as np
import pytest
from scipy.special import logsumexp

from ssmd.chains import build_chain_tables, simulate_chains
from ssmd.core import Ordering, SequenceSpec, make_rng, sample_ordering
from ssmd.likelihood import (
    all_ordering_likelihoods,
    brute_force_likelihood,
    build_run_tables,
    elbo,
    elbo_exact,
    exact_log_marginal,
    last_slot_accept_prob,
    rejection_count_posterior,
    sequence_likelihood,
)
from ssmd.models.tabular import TabularModel


def make_model(seed=0, S=3, D=4, eps=0.3):
    return TabularModel.random(
        SequenceSpec(S=S, D=D), make_rng(seed), draft_mode="perturbed", eps=eps
    )


class TestSequenceLikelihood:
    def test_matches_brute_force(self):
        rng = make_rng(1)
        for seed in range(10):
            S, D = int(rng.integers(2, 4)), int(rng.integers(2, 5))
            m = make_model(seed=seed, S=S, D=D, eps=0.4)
            order = sample_ordering(rng, D)
            x = rng.integers(0, S, D)
            dp = sequence_likelihood(m, x, order)
            bf = brute_force_likelihood(m, x, order)
            assert dp == pytest.approx(bf, abs=1e-9)

    def test_normalizes_over_sequences(self):
        m = make_model(seed=2, S=3, D=3, eps=0.5)
        order = Ordering(np.array([2, 0, 1]))
        total = sum(
            np.exp(sequence_likelihood(m, np.array(x), order))
            for x in itertools.product(range(3), repeat=3)
        )
        assert total == pytest.approx(1.0, abs=1e-9)

    def test_exact_draft_reduces_to_chain_rule(self):
        # draft == target makes every slot accept, so the likelihood is the
        # plain chain-rule joint
        m = TabularModel.random(SequenceSpec(S=2, D=4), make_rng(3))
        order = sample_ordering(make_rng(4), 4)
        x = np.array([1, 0, 1, 1])
        assert sequence_likelihood(m, x, order) == pytest.approx(
            np.log(m.joint[tuple(x)]), abs=1e-10
        )

    def test_forward_pass_budget(self):
        # the whole computation costs exactly D draft passes and D verify rows
        m = make_model(seed=5, S=3, D=5)
        m.reset_counters()
        sequence_likelihood(m, np.array([0, 1, 2, 1, 0]), Ordering(np.arange(5)))
        assert m.draft_pass_count == 5
        assert m.target_pass_count == 5


class TestDeepHorizon:
    def test_normalization_at_d10(self):
        # DP stays normalized well past the brute-force regime
        m = make_model(seed=6, S=2, D=10, eps=0.3)
        order = sample_ordering(make_rng(7), 10)
        total = logsumexp(
            [
                sequence_likelihood(m, np.array(x), order)
                for x in itertools.product(range(2), repeat=10)
            ]
        )
        assert total == pytest.approx(0.0, abs=1e-9)


class TestRejectionPosterior:
    def test_sums_to_one(self):
        m = make_model(seed=8, S=3, D=4, eps=0.5)
        order = sample_ordering(make_rng(9), 4)
        x = np.array([0, 2, 1, 1])
        post = rejection_count_posterior(m, x, order)
        assert post.probs.sum() == pytest.approx(1.0, abs=1e-9)
        assert post.probs.shape == (5,)  # support {0, .., D}

    def test_log_likelihood_consistent(self):
        m = make_model(seed=10, S=2, D=3, eps=0.4)
        order = Ordering(np.array([1, 0, 2]))
        x = np.array([1, 1, 0])
        post = rejection_count_posterior(m, x, order)
        assert post.log_likelihood == pytest.approx(
            sequence_likelihood(m, x, order), abs=1e-12
        )

    def test_point_mass_when_target_equals_draft(self):
        rng = make_rng(11)
        spec = SequenceSpec(S=3, D=4)
        m = TabularModel.product(spec, rng.dirichlet(np.ones(3), size=4))
        post = rejection_count_posterior(m, np.array([0, 1, 2, 0]), Ordering(np.arange(4)))
        assert post.probs[0] == 1.0
        assert post.probs[1:].sum() == 0.0
        assert post.mean == 0.0

    def test_mean_matches_conditional_simulation(self):
        m = make_model(seed=12, S=2, D=3, eps=0.6)
        order = Ordering(np.arange(3))
        tables = build_chain_tables(m, order)
        res = simulate_chains(tables, 200_000, seed=13)
        x = np.array([1, 0, 1])
        sel = (res.sequences == x).all(axis=1)
        assert sel.sum() > 1000
        sim_mean = res.reject_counts[sel].mean()
        sim_se = res.reject_counts[sel].std() / np.sqrt(sel.sum())
        post = rejection_count_posterior(m, x, order)
        assert abs(post.mean - sim_mean) < 3 * sim_se

    def test_outer_count_identity(self):
        # E[outer | x] = E[rejections | x] + P(last slot accepted | x)
        m = make_model(seed=14, S=2, D=3, eps=0.6)
        order = Ordering(np.arange(3))
        tables = build_chain_tables(m, order)
        res = simulate_chains(tables, 200_000, seed=15)
        for x in itertools.product(range(2), repeat=3):
            sel = (res.sequences == np.array(x)).all(axis=1)
            if sel.sum() < 500:
                continue
            post = rejection_count_posterior(m, np.array(x), order)
            pred = post.mean + last_slot_accept_prob(m, np.array(x), order)
            sim = res.outer_counts[sel].mean()
            se = res.outer_counts[sel].std() / np.sqrt(sel.sum())
            assert abs(pred - sim) < 4 * se + 1e-3, (x, pred, sim)


class TestElbo:
    def test_mc_elbo_converges_to_exact(self):
        # the MC estimate is only a lower bound in expectation; check it
        # converges to the exact ordering average
        m = make_model(seed=16, S=2, D=4, eps=0.4)
        rng = make_rng(17)
        for _ in range(3):
            x = rng.integers(0, 2, 4)
            lo = elbo(m, x, 2000, rng)
            assert lo == pytest.approx(elbo_exact(m, x), abs=0.05)

    def test_exact_elbo_below_marginal_every_sequence(self):
        m = make_model(seed=18, S=2, D=4, eps=0.4)
        for x in itertools.product(range(2), repeat=4):
            xv = np.array(x)
            assert elbo_exact(m, xv) <= exact_log_marginal(m, xv) + 1e-9

    def test_equality_for_product_model(self):
        rng = make_rng(19)
        spec = SequenceSpec(S=2, D=4)
        m = TabularModel.product(spec, rng.dirichlet(np.ones(2), size=4))
        for x in itertools.product(range(2), repeat=4):
            xv = np.array(x)
            assert elbo_exact(m, xv) == pytest.approx(exact_log_marginal(m, xv), abs=1e-9)

    def test_exact_marginal_is_logsumexp_over_orderings(self):
        from scipy.special import gammaln

        m = make_model(seed=20, S=2, D=3, eps=0.3)
        x = np.array([0, 1, 1])
        logps = all_ordering_likelihoods(m, x)
        assert len(logps) == 6
        want = logsumexp(logps) - gammaln(4.0)
        assert exact_log_marginal(m, x) == pytest.approx(want, abs=1e-12)


class TestRunTables:
    def test_prefix_log_is_cumulative(self):
        m = make_model(seed=21, S=2, D=3)
        order = Ordering(np.arange(3))
        t = build_run_tables(m, np.array([1, 0, 1]), order)
        for c in range(3):
            acc = 0.0
            for l in range(c, 3):
                assert t.log_prefix[c, l] == pytest.approx(acc, abs=1e-12)
                acc += t.log_accept[c, l]
            assert t.log_prefix[c, 3] == pytest.approx(acc, abs=1e-12)
