"""Noise schedules, per-step reveal probabilities and speculative windows.

Two related but distinct quantities appear throughout:

* ``keep_prob(t)``: probability an individual position is still revealed at
  noise level ``t`` in [0, 1] (1 at t=0, 0 at t=1),
* ``mask_fraction(tau)``: expected fraction of masked positions at time
  ``tau`` (0 at tau=0, 1 at tau=1).

They are complements at the same time point, ``keep_prob(t) = 1 -
mask_fraction(t)``; both names exist so that sign errors between the two
conventions cannot hide.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .core import SpecError


@dataclass(frozen=True)
class NoiseSchedule:
    """Masking schedule; ``kind`` is ``"cosine"`` or ``"linear"``."""

    kind: str = "cosine"

    def __post_init__(self):
        if self.kind not in ("cosine", "linear"):
            raise SpecError(f"unknown schedule kind {self.kind!r}")

    def mask_fraction(self, tau: float) -> float:
        """Expected masked fraction at time ``tau`` in [0, 1]."""
        if not 0.0 <= tau <= 1.0:
            raise SpecError(f"time {tau} outside [0, 1]")
        if self.kind == "cosine":
            # cos(pi/2) is only ~6e-17 in floats; pin the boundary exactly.
            return 0.0 if tau == 0.0 else math.cos(0.5 * math.pi * (1.0 - tau))
        return tau

    def keep_prob(self, t: float) -> float:
        """Per-position survival probability at noise level ``t``."""
        return 1.0 - self.mask_fraction(t)


def keep_prob(sched: NoiseSchedule, t: float) -> float:
    return sched.keep_prob(t)


def reveal_prob(sched: NoiseSchedule, tau: float, dtau: float) -> float:
    """Probability a currently-masked position is revealed stepping
    ``tau -> tau - dtau``: (m(tau) - m(tau - dtau)) / m(tau).

    Returns 0 when nothing is masked (m(tau) = 0).
    """
    m_now = sched.mask_fraction(tau)
    if m_now == 0.0:
        return 0.0
    if not (0.0 <= tau - dtau < tau <= 1.0):
        raise SpecError(f"invalid step tau={tau}, dtau={dtau}")
    m_next = sched.mask_fraction(tau - dtau)
    return min(1.0, max(0.0, (m_now - m_next) / m_now))


@dataclass(frozen=True)
class TimeGrid:
    """Uniform time discretization tau = 1, 1 - 1/T, ..., 0."""

    steps: int

    def __post_init__(self):
        if self.steps < 1:
            raise SpecError(f"grid needs >= 1 steps, got {self.steps}")

    def intervals(self) -> list[tuple[float, float]]:
        """(tau, dtau) pairs walked from tau=1 down to tau=0."""
        T = self.steps
        return [(k / T, 1.0 / T) for k in range(T, 0, -1)]


@dataclass(frozen=True)
class WindowSpec:
    """Cap on tokens revealed per outer sampling iteration.

    ``linear`` grows with the revealed count, ``cosine`` tracks the reveal
    rate of a cosine-schedule diffusion with time step ``dtau``, ``constant``
    is a fixed cap.
    """

    kind: str = "cosine"
    dtau: float = 0.083
    cap: int = 1

    def __post_init__(self):
        if self.kind not in ("linear", "cosine", "constant"):
            raise SpecError(f"unknown window kind {self.kind!r}")
        if self.kind == "cosine" and not 0.0 < self.dtau <= 1.0:
            raise SpecError(f"window dtau must be in (0, 1], got {self.dtau}")
        if self.kind == "constant" and self.cap < 1:
            raise SpecError(f"window cap must be >= 1, got {self.cap}")


def window_size(win: WindowSpec, i: int, D: int) -> int:
    """Maximum number of tokens one outer iteration may reveal, >= 1.

    The cosine window converts the actual masked fraction (D - i) / D back to
    an equivalent diffusion time, advances it by ``dtau`` and returns the
    expected number of reveals, rounded up so the loop always progresses.
    """
    if not 0 <= i < D:
        raise SpecError(f"revealed count {i} outside [0, {D})")
    remaining = D - i
    if win.kind == "linear":
        return min(i + 1, remaining)
    if win.kind == "constant":
        return min(win.cap, remaining)
    alpha = remaining / D
    tau = 1.0 - (2.0 / math.pi) * math.acos(alpha)
    w = D * (
        math.cos(0.5 * math.pi * (1.0 - tau))
        - math.cos(0.5 * math.pi * (1.0 - tau + win.dtau))
    )
    return int(min(max(math.ceil(w), 1), remaining))
