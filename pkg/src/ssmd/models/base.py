"""Draft/target model interface shared by the tabular oracle and the
hybrid transformer.

A model exposes two capabilities:

* ``draft_pass``: factorized rows over the next ``horizon`` ordering slots,
  conditioned only on the revealed tokens.  Returns a cache of whatever the
  backend wants to reuse for verification.
* ``target_rows``: autoregressive rows for a span of slots, conditioned on
  the revealed tokens plus already-drafted tokens earlier in the span.

Both backends guarantee the first masked slot's target row equals its draft
row (no extra context is available there), so the first drafted token of
every inner loop is always accepted.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any

import numpy as np

from ..core import RevealState, SequenceSpec


@dataclass
class HiddenCache:
    """Reusable activations from one draft pass, tied to the state that
    produced them."""

    state: RevealState
    payload: Any = None


class Model(ABC):
    """Abstract draft/target model over fixed-length discrete sequences."""

    spec: SequenceSpec
    # Block counts feed NFE accounting; the tabular oracle has no real
    # blocks and reports 1/1.
    nc_blocks: int = 1
    c_blocks: int = 1

    def __init__(self):
        self.draft_pass_count = 0
        self.target_pass_count = 0

    @abstractmethod
    def draft_pass(self, state: RevealState, horizon: int) -> tuple[np.ndarray, HiddenCache]:
        """Rows (horizon, S) for ordering slots i .. i+horizon-1."""

    @abstractmethod
    def target_rows(
        self, cache: HiddenCache, drafted: np.ndarray, start: int, stop: int
    ) -> np.ndarray:
        """Rows (stop-start, S) for slots start .. stop-1.

        ``drafted`` holds tokens for slots i, i+1, ... (at least up to
        ``stop - 2``); the row for slot ``s`` only depends on entries before
        ``s``.
        """

    def reset_counters(self):
        self.draft_pass_count = 0
        self.target_pass_count = 0

    def _check_span(self, cache: HiddenCache, drafted: np.ndarray, start: int, stop: int):
        i = cache.state.revealed_count
        if not (i <= start < stop <= self.spec.D):
            raise ValueError(f"bad slot span [{start}, {stop}) for i={i}")
        if len(drafted) < stop - 1 - i:
            raise ValueError(
                f"drafted prefix too short: need {stop - 1 - i} tokens, got {len(drafted)}"
            )
