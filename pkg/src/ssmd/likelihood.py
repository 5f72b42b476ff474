"""Exact likelihood of the basic speculative sampler, and derived
quantities.

For a fixed generation ordering, the sampler's output distribution is not a
simple chain product: the draft distribution changes every time a rejection
reveals extra context.  It does, however, admit an O(D^2) dynamic program
over "rejection anchors" (the revealed count at the most recent rejection),
because every quantity inside one inner loop depends only on its anchor.

Index conventions (0-indexed throughout):

* anchor ``c``: number of tokens revealed when the current inner loop's
  draft was computed, c in 0..D-1,
* ``log_rj[d]`` for d in 1..D: log-probability of the true prefix of length
  ``d`` together with a rejection at slot ``d-1``; ``log_rj[0] = 0`` is the
  empty-prefix base case,
* a run from anchor ``c`` contributes accept factors min(draft, target) and
  one reject factor max(0, target - draft), all evaluated on the true
  tokens.

All accumulation is in log space; log 0 is -inf and never becomes NaN.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import permutations

import numpy as np

from .core import Ordering, make_reveal_state, sample_ordering
from .models.base import Model

NEG_INF = float("-inf")


def logsumexp(values: np.ndarray) -> float:
    """Log-sum-exp returning -inf for an empty or all--inf input."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return NEG_INF
    m = values.max()
    if m == NEG_INF:
        return NEG_INF
    return float(m + np.log(np.exp(values - m).sum()))


def log_joint_accept(draft: np.ndarray, target: np.ndarray, token: int) -> float:
    """log p(token, accept) = log min(draft, target) for one verify step."""
    return _safe_log(min(draft[token], target[token]))


def log_joint_reject(draft: np.ndarray, target: np.ndarray, token: int) -> float:
    """log p(token, reject) = log max(0, target - draft)."""
    return _safe_log(max(0.0, target[token] - draft[token]))


def _safe_log(x: float) -> float:
    return math.log(x) if x > 0.0 else NEG_INF


@dataclass
class RunTables:
    """Per-(anchor, slot) probabilities of the true tokens.

    ``draft[c, l]`` / ``target[c, l]`` are the draft/target probabilities of
    the true token at ordering slot ``l`` within a run anchored at ``c``
    (valid for l >= c).  Building them costs exactly D draft passes.
    """

    draft: np.ndarray
    target: np.ndarray

    def __post_init__(self):
        D = self.draft.shape[0]
        with np.errstate(divide="ignore"):
            self.log_accept = np.log(np.minimum(self.draft, self.target))
            self.log_reject = np.log(np.maximum(0.0, self.target - self.draft))
        # log_prefix[c, l] = sum of accept logs for slots c..l-1 at anchor c.
        self.log_prefix = np.zeros((D, D + 1))
        for c in range(D):
            self.log_prefix[c, c + 1 :] = np.cumsum(self.log_accept[c, c:])
            self.log_prefix[c, :c] = NEG_INF


def build_run_tables(model: Model, x: np.ndarray, ordering: Ordering) -> RunTables:
    spec = model.spec
    x = spec.validate_tokens(x, allow_mask=False)
    D = spec.D
    x_sig = x[ordering.perm]
    # Entries below the anchor diagonal are never read; leave them at
    # probability zero so the log tables stay NaN-free.
    draft = np.zeros((D, D))
    target = np.zeros((D, D))
    for c in range(D):
        state = make_reveal_state(spec, x, ordering, c)
        rows, cache = model.draft_pass(state, horizon=D - c)
        tgt = model.target_rows(cache, x_sig[c:], c, D)
        for l in range(c, D):
            draft[c, l] = rows[l - c][x_sig[l]]
            target[c, l] = tgt[l - c][x_sig[l]]
    return RunTables(draft=draft, target=target)


def _reject_dp(tables: RunTables) -> tuple[np.ndarray, np.ndarray]:
    """(log_rj, log_tail): rejection-prefix DP and all-accept tails.

    ``log_tail[d]`` is the log-probability that a run anchored at ``d``
    accepts every remaining slot (0 for d = D).
    """
    D = tables.draft.shape[0]
    log_tail = np.concatenate([tables.log_prefix[np.arange(D), D], [0.0]])
    log_rj = np.full(D + 1, NEG_INF)
    log_rj[0] = 0.0
    for d in range(1, D + 1):
        ks = np.arange(d)  # anchor = k tokens revealed, k = 0..d-1
        terms = log_rj[ks] + tables.log_prefix[ks, d - 1] + tables.log_reject[ks, d - 1]
        log_rj[d] = logsumexp(terms)
    return log_rj, log_tail


def sequence_likelihood_from_tables(tables: RunTables) -> float:
    log_rj, log_tail = _reject_dp(tables)
    return logsumexp(log_rj + log_tail)


def sequence_likelihood(model: Model, x: np.ndarray, ordering: Ordering) -> float:
    """log-probability that the basic speculative sampler emits ``x`` when
    generating in the given ordering.  Costs D draft passes and O(D^2) work.
    """
    return sequence_likelihood_from_tables(build_run_tables(model, x, ordering))


def brute_force_likelihood(model: Model, x: np.ndarray, ordering: Ordering) -> float:
    """Independent oracle: sum over all 2^D accept/reject event paths.

    Each path fixes the outcome of every slot; its probability is a product
    of per-slot factors whose anchor is the slot just after the most recent
    rejection.
    """
    D = model.spec.D
    if D > 12:
        raise ValueError(f"brute force limited to D <= 12, got {D}")
    tables = build_run_tables(model, x, ordering)
    path_logs = []
    for bits in range(2**D):
        anchor = 0
        lp = 0.0
        for l in range(D):
            if bits >> l & 1:  # rejection at slot l
                lp += tables.log_reject[anchor, l]
                anchor = l + 1
            else:
                lp += tables.log_accept[anchor, l]
            if lp == NEG_INF:
                break
        path_logs.append(lp)
    return logsumexp(np.array(path_logs))


# --------------------------------------------------------------------------
# ELBO
# --------------------------------------------------------------------------


def elbo(model: Model, x: np.ndarray, num_orderings: int, rng: np.random.Generator) -> float:
    """Monte Carlo lower bound on log p(x): mean per-ordering log-likelihood
    over uniformly sampled orderings."""
    if num_orderings < 1:
        raise ValueError("need at least one ordering")
    vals = [
        sequence_likelihood(model, x, sample_ordering(rng, model.spec.D))
        for _ in range(num_orderings)
    ]
    return float(np.mean(vals))


def all_ordering_likelihoods(model: Model, x: np.ndarray) -> np.ndarray:
    """Per-ordering log-likelihoods over all D! orderings (small D only)."""
    D = model.spec.D
    if D > 6:
        raise ValueError(f"full enumeration limited to D <= 6, got {D}")
    return np.array(
        [
            sequence_likelihood(model, x, Ordering(np.array(p)))
            for p in permutations(range(D))
        ]
    )


def exact_log_marginal(model: Model, x: np.ndarray) -> float:
    """log p(x) with the ordering marginalized exactly: logsumexp over all
    D! orderings minus log D!."""
    vals = all_ordering_likelihoods(model, x)
    return logsumexp(vals) - math.lgamma(model.spec.D + 1)


def elbo_exact(model: Model, x: np.ndarray) -> float:
    """ELBO with the ordering expectation computed exactly (small D)."""
    return float(all_ordering_likelihoods(model, x).mean())


# --------------------------------------------------------------------------
# Rejection-count posterior
# --------------------------------------------------------------------------


@dataclass
class RejectionPosterior:
    """Distribution of the total rejection count given an emitted sequence."""

    probs: np.ndarray  # length D + 1, support {0, .., D}
    log_likelihood: float

    @property
    def mean(self) -> float:
        return float(np.dot(np.arange(len(self.probs)), self.probs))


def rejection_count_posterior(
    model: Model, x: np.ndarray, ordering: Ordering
) -> RejectionPosterior:
    """Exact posterior over the number of rejections the basic sampler made,
    conditioned on it emitting ``x`` in the given ordering.

    Extends the likelihood DP with a rejection counter: each anchor carries
    a length-(D+1) log-vector over counts, and every rejection shifts it by
    one.
    """
    tables = build_run_tables(model, x, ordering)
    D = tables.draft.shape[0]
    _, log_tail = _reject_dp(tables)
    # log_v[d, n]: prefix of length d, rejection at slot d-1, n rejections.
    log_v = np.full((D + 1, D + 1), NEG_INF)
    log_v[0, 0] = 0.0
    for d in range(1, D + 1):
        acc = np.full(D + 1, NEG_INF)
        for k in range(d):
            w = tables.log_prefix[k, d - 1] + tables.log_reject[k, d - 1]
            if w == NEG_INF:
                continue
            shifted = np.concatenate([[NEG_INF], log_v[k, :-1] + w])
            acc = np.logaddexp(acc, shifted)
        log_v[d] = acc
    log_joint = np.array(
        [logsumexp(log_v[:, n] + log_tail) for n in range(D + 1)]
    )
    log_like = logsumexp(log_joint)
    if log_like == NEG_INF:
        raise ValueError("sequence has zero likelihood under this model/ordering")
    probs = np.exp(log_joint - log_like)
    probs /= probs.sum()
    return RejectionPosterior(probs=probs, log_likelihood=log_like)


def last_slot_accept_prob(model: Model, x: np.ndarray, ordering: Ordering) -> float:
    """P(final slot was accepted | sampler emitted x).

    The sampler's outer-loop count equals rejections + 1 when the final slot
    is accepted, and rejections exactly when the final slot itself rejected;
    this factor converts the rejection posterior into an expected pass
    count.
    """
    tables = build_run_tables(model, x, ordering)
    log_rj, log_tail = _reject_dp(tables)
    log_like = logsumexp(log_rj + log_tail)
    log_accept_paths = logsumexp(log_rj[:-1] + log_tail[:-1])
    return float(np.exp(log_accept_paths - log_like))
