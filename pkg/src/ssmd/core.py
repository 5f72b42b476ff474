"""Sequence, ordering and probability primitives shared across the package.

Conventions used everywhere:

* positions are 0-indexed; ``perm[0:i]`` are the first ``i`` positions in the
  generation ordering,
* the mask sentinel is ``mask_id = S`` (one past the alphabet),
* probability rows live in linear space as float64 arrays of length ``S``.

All randomness flows through ``numpy`` Philox (counter-based) generators so
runs are reproducible and independent streams can be derived per sequence.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

PROB_ATOL = 1e-9


class SpecError(ValueError):
    """Raised when a sequence, ordering or probability row is malformed."""


@dataclass(frozen=True)
class SequenceSpec:
    """Alphabet size ``S``, sequence length ``D`` and the mask sentinel."""

    S: int
    D: int

    def __post_init__(self):
        if self.S < 2:
            raise SpecError(f"alphabet size must be >= 2, got {self.S}")
        if self.D < 1:
            raise SpecError(f"sequence length must be >= 1, got {self.D}")

    @property
    def mask_id(self) -> int:
        return self.S

    def validate_tokens(self, tokens: np.ndarray, allow_mask: bool = True) -> np.ndarray:
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.shape != (self.D,):
            raise SpecError(f"expected {self.D} tokens, got shape {tokens.shape}")
        hi = self.mask_id if allow_mask else self.S - 1
        if tokens.min() < 0 or tokens.max() > hi:
            raise SpecError("token id out of range")
        return tokens


@dataclass(frozen=True)
class Ordering:
    """A generation ordering: a permutation of the positions ``0..D-1``."""

    perm: np.ndarray

    def __post_init__(self):
        perm = np.asarray(self.perm, dtype=np.int64)
        object.__setattr__(self, "perm", perm)
        d = perm.shape[0]
        if perm.ndim != 1 or not np.array_equal(np.sort(perm), np.arange(d)):
            raise SpecError("ordering is not a permutation of 0..D-1")

    def __len__(self) -> int:
        return len(self.perm)

    def rank(self) -> np.ndarray:
        """Inverse permutation: rank[p] = slot of position p in the ordering."""
        inv = np.empty_like(self.perm)
        inv[self.perm] = np.arange(len(self.perm))
        return inv

    def short_hash(self) -> str:
        import hashlib

        return hashlib.sha1(self.perm.tobytes()).hexdigest()[:12]


@dataclass(frozen=True)
class RevealState:
    """A partially revealed sequence: ``perm[0:revealed_count]`` hold values,
    everything later in the ordering is the mask sentinel."""

    spec: SequenceSpec
    seq: np.ndarray
    ordering: Ordering
    revealed_count: int

    def __post_init__(self):
        seq = self.spec.validate_tokens(self.seq)
        object.__setattr__(self, "seq", seq)
        i = self.revealed_count
        if not 0 <= i <= self.spec.D:
            raise SpecError(f"revealed count {i} outside [0, {self.spec.D}]")
        if len(self.ordering) != self.spec.D:
            raise SpecError("ordering length does not match sequence length")
        perm = self.ordering.perm
        if np.any(seq[perm[:i]] == self.spec.mask_id):
            raise SpecError("revealed position holds the mask sentinel")
        if np.any(seq[perm[i:]] != self.spec.mask_id):
            raise SpecError("unrevealed position holds a concrete token")

    def revealed_values(self) -> np.ndarray:
        """Tokens at the revealed slots, in ordering slot order."""
        return self.seq[self.ordering.perm[: self.revealed_count]]


def make_reveal_state(
    spec: SequenceSpec, seq: np.ndarray, ordering: Ordering, i: int
) -> RevealState:
    """Mask ``seq`` so that only the first ``i`` slots of ``ordering`` show."""
    seq = spec.validate_tokens(seq, allow_mask=False)
    if not 0 <= i <= spec.D:
        raise SpecError(f"revealed count {i} outside [0, {spec.D}]")
    masked = np.full(spec.D, spec.mask_id, dtype=np.int64)
    sel = ordering.perm[:i]
    masked[sel] = seq[sel]
    return RevealState(spec, masked, ordering, i)


class Event(Enum):
    ACCEPT = "A"
    REJECT = "R"


@dataclass
class EventTrace:
    """Accept/reject outcomes aligned with ordering slots, in slot order."""

    events: list[Event] = field(default_factory=list)

    def append(self, event: Event):
        self.events.append(event)

    def rejections(self) -> int:
        return sum(1 for e in self.events if e is Event.REJECT)

    def __len__(self) -> int:
        return len(self.events)


# --------------------------------------------------------------------------
# Random streams
# --------------------------------------------------------------------------


def make_rng(seed, *subkeys: int) -> np.random.Generator:
    """Counter-based stream for (seed, subkeys).

    Distinct subkey tuples give statistically independent streams, so e.g.
    sequence ``k`` of a batch uses ``make_rng(seed, k)``.
    """
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, subkeys)])))


def sample_ordering(rng: np.random.Generator, D: int) -> Ordering:
    """Uniform random generation ordering."""
    if D < 1:
        raise SpecError(f"sequence length must be >= 1, got {D}")
    return Ordering(rng.permutation(D))


def sample_categorical(rng: np.random.Generator, p: np.ndarray) -> int:
    """Draw one index from a normalized row using a single uniform.

    Consuming exactly one uniform keeps Python and compiled samplers
    draw-for-draw compatible.
    """
    u = rng.random()
    return int(np.searchsorted(np.cumsum(p), u, side="right").clip(0, len(p) - 1))


# --------------------------------------------------------------------------
# Probability rows
# --------------------------------------------------------------------------


def check_prob_row(p: np.ndarray, atol: float = PROB_ATOL) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1:
        raise SpecError("probability row must be 1-d")
    if p.min() < 0:
        raise SpecError("probability row has negative entries")
    if abs(p.sum() - 1.0) > atol:
        raise SpecError(f"probability row sums to {p.sum()}, not 1")
    return p


def total_variation(a: np.ndarray, b: np.ndarray) -> float:
    """Total variation distance, 0.5 * sum |a - b|, in [0, 1]."""
    a = check_prob_row(a)
    b = check_prob_row(b)
    if a.shape != b.shape:
        raise SpecError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return 0.5 * float(np.abs(a - b).sum())
