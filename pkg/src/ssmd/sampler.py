"""Sampling procedures: masked-diffusion baseline, draft-verify speculative
sampling, the windowed multi-inner-loop variant, and NFE accounting.

Randomness contract (keeps runs reproducible and lets independent
implementations replay each other): within one sequence, draws are consumed
strictly in algorithm order, and a categorical draw always costs exactly one
uniform.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (
    Event,
    EventTrace,
    Ordering,
    RevealState,
    sample_categorical,
    sample_ordering,
)
from .models.base import Model
from .schedule import NoiseSchedule, TimeGrid, WindowSpec, reveal_prob, window_size


@dataclass(frozen=True)
class SamplerConfig:
    """Knobs of the windowed speculative sampler."""

    window: WindowSpec = WindowSpec(kind="cosine", dtau=0.083)
    inner_loops: int = 1

    def __post_init__(self):
        if self.inner_loops < 1:
            raise ValueError("need at least one inner loop")


@dataclass
class NfeMeter:
    """Block-weighted forward-pass accounting for one sequence.

    One full pass through all ``nc_blocks + c_blocks`` blocks costs 1 NFE;
    partial passes cost their block fraction.
    """

    nc_blocks: int
    c_blocks: int
    nc_passes: int = 0
    c_passes: int = 0

    @property
    def nfe(self) -> float:
        total = self.nc_blocks + self.c_blocks
        if total <= 0:
            raise ValueError("need at least one block")
        return (self.nc_passes * self.nc_blocks + self.c_passes * self.c_blocks) / total


@dataclass
class SampleResult:
    sequence: np.ndarray
    trace: EventTrace
    nfe: float
    ordering: Ordering
    seed: int | None = None
    meter: NfeMeter | None = None

    @property
    def rejections(self) -> int:
        return self.trace.rejections()


def accept_step(
    draft: np.ndarray,
    target: np.ndarray,
    drafted_token: int,
    rng: np.random.Generator,
) -> tuple[Event, int]:
    """One speculative accept/reject/resample step.

    Accepts ``drafted_token`` with probability min(1, target/draft); on
    rejection draws the replacement from the residual distribution
    proportional to max(0, target - draft).
    """
    p = draft[drafted_token]
    if p <= 0.0:
        raise ValueError("drafted token has zero draft probability (caller bug)")
    u = rng.random()
    if u < min(1.0, target[drafted_token] / p):
        return Event.ACCEPT, int(drafted_token)
    residual = np.maximum(0.0, target - draft)
    mass = residual.sum()
    if mass <= 0.0:
        # Unreachable when target != draft; with target == draft the ratio
        # is 1 and u < 1 always accepts.
        raise ValueError("rejection with empty residual: target equals draft")
    return Event.REJECT, sample_categorical(rng, residual / mass)


def accept_step_many(
    draft: np.ndarray,
    target: np.ndarray,
    n: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """``n`` independent accept/reject/resample draws against one row pair,
    drafted tokens included, vectorized.

    Each draw consumes uniforms in the same (token, verify[, resample])
    pattern as ``sample_categorical`` + ``accept_step``, just batched, so
    the output law is identical to the scalar path.
    """
    if np.any((target > 0) & (draft <= 0)):
        raise ValueError("target places mass where the draft has none")
    cum_d = np.cumsum(draft)
    toks = np.searchsorted(cum_d, rng.random(n), side="right").clip(0, len(draft) - 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(draft > 0, target / np.maximum(draft, 1e-300), 0.0)
    accept = rng.random(n) < np.minimum(1.0, ratio[toks])
    residual = np.maximum(0.0, target - draft)
    mass = residual.sum()
    n_rej = int((~accept).sum())
    if n_rej:
        if mass <= 0.0:
            raise ValueError("rejection with empty residual: target equals draft")
        cum_r = np.cumsum(residual / mass)
        toks[~accept] = np.searchsorted(cum_r, rng.random(n_rej), side="right").clip(
            0, len(draft) - 1
        )
    return toks


def mdm_sample(
    model: Model,
    sched: NoiseSchedule,
    grid: TimeGrid,
    rng: np.random.Generator,
    seed: int | None = None,
) -> SampleResult:
    """Masked-diffusion baseline: walk the time grid, drafting candidates for
    every masked position and revealing an independent random subset.

    Reveal decisions are drawn before (and independently of) the candidate
    tokens, and an update with zero reveals skips its forward pass entirely,
    giving the best-case NFE count.
    """
    spec = model.spec
    D = spec.D
    seq = np.full(D, spec.mask_id, dtype=np.int64)
    meter = NfeMeter(nc_blocks=model.nc_blocks, c_blocks=0)
    reveal_order: list[int] = []
    for tau, dtau in grid.intervals():
        masked = np.flatnonzero(seq == spec.mask_id)
        if masked.size == 0:
            break
        r = reveal_prob(sched, tau, dtau)
        do_reveal = np.array([rng.random() < r for _ in masked])
        if not do_reveal.any():
            continue
        state = _state_from_partial(model, seq)
        rows, _ = model.draft_pass(state, horizon=masked.size)
        meter.nc_passes += 1
        # Candidates are drawn for every masked position; only the selected
        # subset is committed.
        slot_of = {int(p): k for k, p in enumerate(state.ordering.perm[state.revealed_count :])}
        candidates = {int(p): sample_categorical(rng, rows[slot_of[int(p)]]) for p in masked}
        for p in masked[do_reveal]:
            seq[p] = candidates[int(p)]
            reveal_order.append(int(p))
    ordering = Ordering(np.array(reveal_order, dtype=np.int64))
    return SampleResult(
        sequence=seq,
        trace=EventTrace(),
        nfe=meter.nfe,
        ordering=ordering,
        seed=seed,
        meter=meter,
    )


def _state_from_partial(model: Model, seq: np.ndarray) -> RevealState:
    """Wrap a partially masked sequence, revealed positions first (ascending)."""
    spec = model.spec
    revealed = np.flatnonzero(seq != spec.mask_id)
    masked = np.flatnonzero(seq == spec.mask_id)
    perm = np.concatenate([revealed, masked])
    return RevealState(spec, seq, Ordering(perm), len(revealed))


def spec_sample_full(
    model: Model,
    cfg: SamplerConfig,
    rng: np.random.Generator,
    ordering: Ordering | None = None,
    seed: int | None = None,
) -> SampleResult:
    """Windowed speculative sampling with multiple draft-verify inner loops.

    Per outer iteration: one non-causal pass drafts up to ``window_size``
    tokens, then up to ``inner_loops`` causal passes verify them.  After a
    rejection the resampled token replaces the draft, and the next inner
    loop recomputes target rows for the remaining drafted slots while the
    draft rows stay fixed.  Only executed causal passes are counted.
    """
    spec = model.spec
    D = spec.D
    if ordering is None:
        ordering = sample_ordering(rng, D)
    perm = ordering.perm
    seq = np.full(D, spec.mask_id, dtype=np.int64)
    trace = EventTrace()
    meter = NfeMeter(nc_blocks=model.nc_blocks, c_blocks=model.c_blocks)
    i = 0
    while i < D:
        w_end = min(i + window_size(cfg.window, i, D), D)
        state = RevealState(spec, seq.copy(), ordering, i)
        rows, cache = model.draft_pass(state, horizon=w_end - i)
        meter.nc_passes += 1
        drafted = np.array([sample_categorical(rng, rows[k]) for k in range(w_end - i)])
        j = i
        for _ in range(cfg.inner_loops):
            if j >= w_end:
                break
            targets = model.target_rows(cache, drafted, j, w_end)
            meter.c_passes += 1
            for d in range(j, w_end):
                event, token = accept_step(rows[d - i], targets[d - j], drafted[d - i], rng)
                trace.append(event)
                drafted[d - i] = token
                seq[perm[d]] = token
                if event is Event.REJECT:
                    break
            j = d + 1
        i = j
    return SampleResult(
        sequence=seq, trace=trace, nfe=meter.nfe, ordering=ordering, seed=seed, meter=meter
    )


def spec_sample_basic(
    model: Model,
    rng: np.random.Generator,
    ordering: Ordering | None = None,
    seed: int | None = None,
) -> SampleResult:
    """Basic speculative sampling: full window, one inner loop per draft.

    Each outer iteration drafts all remaining slots, verifies them in order
    and stops at the first rejection; every outer segment except possibly
    the last therefore ends in a rejection.
    """
    cfg = SamplerConfig(window=WindowSpec(kind="constant", cap=model.spec.D), inner_loops=1)
    return spec_sample_full(model, cfg, rng, ordering=ordering, seed=seed)
