"""Batched simulation of basic draft-verify chains for tabular models.

For a tabular model and a fixed ordering, every draft and target row the
basic sampler can ever request is a conditional of the joint indexed by a
token prefix in slot order.  This module flattens those conditionals into
dense tables and replays many chains against them, using either a compiled
kernel or a vectorized numpy fallback (selected at import; set
``SSMD_PURE_PYTHON=1`` to force the fallback).

Chain ``k`` consumes uniforms exactly as ``sampler.spec_sample_basic``
would, so with per-chain streams the two produce identical sequences,
outer-iteration counts and rejection counts.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .core import Ordering, make_rng
from .models.tabular import TabularModel

from . import _chains_py

_fast = None
if not os.environ.get("SSMD_PURE_PYTHON"):
    try:
        from . import _chains_fast as _fast
    except ImportError:
        _fast = None

BACKEND = "cython" if _fast is not None else "python"

MAX_TABLE_ENTRIES = 10**8


@dataclass
class ChainTables:
    """Flattened conditional tables for one (model, ordering) pair.

    See ``_chains_py.run_chains`` for the indexing scheme.  ``uniforms_per_chain``
    is a worst-case bound on the uniforms one chain can consume
    (D(D+1)/2 drafts + D verifications + D resamples, rounded up).
    """

    ordering: Ordering
    S: int
    D: int
    draft_flat: np.ndarray
    draft_off: np.ndarray
    target_flat: np.ndarray
    target_off: np.ndarray

    @property
    def uniforms_per_chain(self) -> int:
        return self.D * self.D + 2 * self.D


def build_chain_tables(model: TabularModel, ordering: Ordering) -> ChainTables:
    """Precompute every conditional row the basic sampler can request.

    Draft rows carry the model's perturbation; target rows are the exact
    chain-rule conditionals.  Contexts with zero joint mass (unreachable
    when the joint is strictly positive) get uniform rows.
    """
    S, D = model.spec.S, model.spec.D
    if S**D * (D + 2) > MAX_TABLE_ENTRIES:
        raise ValueError(f"chain tables too large for S={S}, D={D}")
    # Axis l of J indexes the token at ordering slot l.
    J = model.joint.transpose(tuple(ordering.perm))

    def norm_rows(rows):
        mass = rows.sum(axis=1, keepdims=True)
        out = np.where(mass > 0, rows, 1.0)
        return out / np.maximum(out.sum(axis=1, keepdims=True), 1e-300)

    target_parts, target_off = [], np.zeros(D, dtype=np.int64)
    draft_parts, draft_off = [], np.zeros(D, dtype=np.int64)
    t_pos = d_pos = 0
    for l in range(D):
        target_off[l] = t_pos
        marg = J.sum(axis=tuple(range(l + 1, D))).reshape(S**l, S)
        rows = norm_rows(marg)
        target_parts.append(rows.ravel())
        t_pos += rows.size
    for c in range(D):
        draft_off[c] = d_pos
        block = np.empty((S**c, D - c, S))
        for l in range(c, D):
            axes = tuple(a for a in range(c, D) if a != l)
            marg = J.sum(axis=axes).reshape(S**c, S)
            block[:, l - c, :] = model._perturb(norm_rows(marg))
        draft_parts.append(block.ravel())
        d_pos += block.size
    return ChainTables(
        ordering=ordering,
        S=S,
        D=D,
        draft_flat=np.concatenate(draft_parts),
        draft_off=draft_off,
        target_flat=np.concatenate(target_parts),
        target_off=target_off,
    )


@dataclass
class ChainResult:
    sequences: np.ndarray  # (n, D), position order
    slot_tokens: np.ndarray  # (n, D), ordering-slot order
    outer_counts: np.ndarray  # (n,)
    reject_counts: np.ndarray  # (n,)


def _run(tables: ChainTables, uniforms: np.ndarray, backend: str):
    impl = {"cython": _fast, "python": _chains_py}[backend]
    if impl is None:
        raise RuntimeError("compiled backend requested but not built")
    return impl.run_chains(
        tables.draft_flat,
        tables.draft_off,
        tables.target_flat,
        tables.target_off,
        tables.S,
        tables.D,
        uniforms,
    )


def simulate_chains(
    tables: ChainTables,
    n_chains: int,
    seed: int,
    per_chain_streams: bool = False,
    chunk: int = 1 << 16,
    backend: str | None = None,
) -> ChainResult:
    """Simulate ``n_chains`` basic-sampler runs.

    With ``per_chain_streams`` chain ``k`` draws from ``make_rng(seed, k)``
    (slower, but replayable one chain at a time against the scalar sampler);
    otherwise all chains share the ``make_rng(seed)`` stream, consumed in
    row-major chunks.
    """
    backend = backend or BACKEND
    D = tables.D
    M = tables.uniforms_per_chain
    shared = None if per_chain_streams else make_rng(seed)
    parts = []
    for lo in range(0, n_chains, chunk):
        hi = min(lo + chunk, n_chains)
        if per_chain_streams:
            uniforms = np.stack([make_rng(seed, k).random(M) for k in range(lo, hi)])
        else:
            uniforms = shared.random((hi - lo, M))
        parts.append(_run(tables, uniforms, backend))
    slots = np.concatenate([p[0] for p in parts])
    outer = np.concatenate([p[1] for p in parts])
    rejects = np.concatenate([p[2] for p in parts])
    seqs = np.empty_like(slots)
    seqs[:, tables.ordering.perm] = slots
    return ChainResult(
        sequences=seqs, slot_tokens=slots, outer_counts=outer, reject_counts=rejects
    )
