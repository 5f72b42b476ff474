"""Pure-numpy chain simulation backend.

Simulates many independent runs of the basic draft-verify sampler (full
window, one inner loop) against precomputed conditional tables.  All chains
advance in lockstep over ordering slots; control-flow divergence is handled
with per-chain anchor state and per-chain uniform-buffer pointers, so each
chain consumes its uniforms in exactly the order the scalar sampler would.

The compiled backend in ``_chains_fast`` implements the same function with
per-chain scalar loops; the two must agree draw-for-draw.
"""

from __future__ import annotations

import numpy as np


def _categorical_rows(rows: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Vectorized single-uniform categorical draw, one row per chain.

    Matches ``core.sample_categorical``: index = #{cumsum entries <= u},
    clipped into range.
    """
    cs = np.cumsum(rows, axis=1)
    idx = (cs <= u[:, None]).sum(axis=1)
    return np.minimum(idx, rows.shape[1] - 1)


def run_chains(
    draft_flat: np.ndarray,
    draft_off: np.ndarray,
    target_flat: np.ndarray,
    target_off: np.ndarray,
    S: int,
    D: int,
    uniforms: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Run one basic-sampler chain per row of ``uniforms``.

    Table layout (contexts are base-S codes of the slot-order token prefix,
    earliest slot most significant):

    * draft row for (anchor a, prefix code c, slot d):
      ``draft_flat[draft_off[a] + (c * (D - a) + (d - a)) * S :][:S]``
    * target row for (slot d, prefix code c):
      ``target_flat[target_off[d] + c * S :][:S]``

    Returns (slot-order tokens (n, D), outer-iteration counts (n,),
    rejection counts (n,)).
    """
    n = uniforms.shape[0]
    cols = np.arange(S)
    idx_n = np.arange(n)
    ptr = np.zeros(n, dtype=np.int64)

    def take(mask=None):
        if mask is None:
            u = uniforms[idx_n, ptr]
            ptr[:] += 1
        else:
            u = uniforms[idx_n[mask], ptr[mask]]
            ptr[mask] += 1
        return u

    def draft_rows(anchor, anchor_code, d):
        base = draft_off[anchor] + (anchor_code * (D - anchor) + (d - anchor)) * S
        return draft_flat[base[:, None] + cols]

    anchor = np.zeros(n, dtype=np.int64)
    anchor_code = np.zeros(n, dtype=np.int64)
    code = np.zeros(n, dtype=np.int64)
    outer = np.zeros(n, dtype=np.int64)
    rejects = np.zeros(n, dtype=np.int64)
    drafted = np.empty((n, D), dtype=np.int64)
    slots = np.empty((n, D), dtype=np.int64)

    for d in range(D):
        fresh = anchor == d  # chains opening a new outer iteration here
        if fresh.any():
            outer[fresh] += 1
            a = anchor[fresh]
            ac = anchor_code[fresh]
            # Draft the whole remaining window now, one uniform per slot in
            # slot order, before any verification uniform is consumed.
            for l in range(d, D):
                drafted[fresh, l] = _categorical_rows(draft_rows(a, ac, l), take(fresh))

        p_rows = draft_rows(anchor, anchor_code, d)
        t_rows = target_flat[(target_off[d] + code * S)[:, None] + cols]
        at_anchor = anchor == d
        t_rows[at_anchor] = p_rows[at_anchor]

        tok = drafted[:, d]
        p = p_rows[idx_n, tok]
        t = t_rows[idx_n, tok]
        u = take()
        with np.errstate(divide="ignore", invalid="ignore"):
            accept = u < np.minimum(1.0, t / p)
        committed = tok.copy()
        rej = ~accept
        if rej.any():
            residual = np.maximum(0.0, t_rows[rej] - p_rows[rej])
            norm = residual / residual.sum(axis=1)[:, None]
            committed[rej] = _categorical_rows(norm, take(rej))
            rejects[rej] += 1
        slots[:, d] = committed
        code = code * S + committed
        anchor[rej] = d + 1
        anchor_code[rej] = code[rej]
    return slots, outer, rejects
