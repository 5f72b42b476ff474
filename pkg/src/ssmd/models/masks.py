"""Attention-mask construction for the hybrid transformer.

The non-causal stack uses any-to-any attention; hiding unrevealed values is
done at the *input* by substituting the mask token, not in the attention
mask.  The causal stack lets a position attend to itself and everything that
precedes it in the generation ordering.  In practice the causal stack runs a
standard lower-triangular mask over the permuted sequence; this
position-space view exists for inspection and tests.
"""

from __future__ import annotations

import numpy as np

from ..core import Ordering


def build_attention_masks(ordering: Ordering) -> tuple[np.ndarray, np.ndarray]:
    """Return (non_causal, causal) boolean D x D masks in position space.

    ``mask[q, k]`` is True when the token at position ``q`` may attend to the
    token at position ``k``.
    """
    D = len(ordering)
    rank = ordering.rank()
    non_causal = np.ones((D, D), dtype=bool)
    causal = rank[None, :] <= rank[:, None]
    return non_causal, causal
