"""Exact tabular oracle over an explicit joint distribution.

Conditionals are computed by direct marginalization of the joint, so this
backend is exact by construction and serves as the reference model for all
distributional tests.  ``draft_mode="perturbed"`` mixes the draft rows with
a uniform distribution, making draft != target so that rejection paths get
exercised; target rows always use the exact chain-rule conditionals (except
the first masked slot, which mirrors the draft by construction of the
architecture).
"""

from __future__ import annotations

import numpy as np

from ..core import RevealState, SequenceSpec, SpecError
from .base import HiddenCache, Model

MAX_JOINT_SIZE = 10**7


class TabularModel(Model):
    def __init__(
        self,
        spec: SequenceSpec,
        joint: np.ndarray,
        draft_mode: str = "exact",
        eps: float = 0.2,
    ):
        super().__init__()
        if spec.S**spec.D > MAX_JOINT_SIZE:
            raise SpecError(f"joint table too large: {spec.S}^{spec.D} > {MAX_JOINT_SIZE}")
        joint = np.asarray(joint, dtype=np.float64).reshape((spec.S,) * spec.D)
        if joint.min() < 0:
            raise SpecError("joint has negative entries")
        if abs(joint.sum() - 1.0) > 1e-12:
            raise SpecError(f"joint sums to {joint.sum()}, not 1 (tol 1e-12)")
        if draft_mode not in ("exact", "perturbed"):
            raise SpecError(f"unknown draft mode {draft_mode!r}")
        if not 0.0 <= eps <= 1.0:
            raise SpecError(f"perturbation eps must be in [0, 1], got {eps}")
        self.spec = spec
        self.joint = joint
        self.draft_mode = draft_mode
        self.eps = eps
        self._cond_cache: dict[tuple, np.ndarray] = {}
        # Set by the ``product`` factory: per-position factor rows of an
        # independent joint, used as an exact conditional shortcut.
        self._indep_rows: np.ndarray | None = None

    @classmethod
    def random(
        cls, spec: SequenceSpec, rng: np.random.Generator, draft_mode: str = "exact",
        eps: float = 0.2, concentration: float = 1.0,
    ) -> "TabularModel":
        """Joint drawn from a symmetric Dirichlet over all S^D outcomes."""
        flat = rng.gamma(concentration, size=spec.S**spec.D)
        flat /= flat.sum()
        # Re-normalize exactly against float accumulation drift.
        flat /= flat.sum()
        return cls(spec, flat, draft_mode=draft_mode, eps=eps)

    @classmethod
    def product(cls, spec: SequenceSpec, rows: np.ndarray, **kw) -> "TabularModel":
        """Independent per-position distribution; target == draft in exact mode."""
        rows = np.asarray(rows, dtype=np.float64)
        joint = np.ones(())
        for d in range(spec.D):
            joint = np.multiply.outer(joint, rows[d])
        joint = joint / joint.sum()
        m = cls(spec, joint, **kw)
        # Conditionals of an independent joint never depend on context, so
        # serve the factor rows directly.  Besides being faster, this makes
        # draft and target rows bitwise identical in exact mode, which the
        # draft-verify machinery relies on (zero residual mass => provably
        # zero rejections, not just up to rounding).
        m._indep_rows = rows / rows.sum(axis=1, keepdims=True)
        return m

    # -- conditionals ------------------------------------------------------

    def conditional(self, assigned: dict[int, int], position: int) -> np.ndarray:
        """Exact p(x^position | assigned positions), by marginalization."""
        if position in assigned:
            raise SpecError(f"position {position} is already assigned")
        if self._indep_rows is not None:
            return self._indep_rows[position]
        key = (tuple(sorted(assigned.items())), position)
        row = self._cond_cache.get(key)
        if row is not None:
            return row
        idx = [slice(None)] * self.spec.D
        for p, v in assigned.items():
            idx[p] = v
        sub = self.joint[tuple(idx)]
        free = sorted(set(range(self.spec.D)) - set(assigned))
        axis = free.index(position)
        other = tuple(a for a in range(sub.ndim) if a != axis)
        row = sub.sum(axis=other) if other else np.array(sub, dtype=np.float64)
        total = row.sum()
        if total <= 0.0:
            raise SpecError("impossible context: revealed tokens have zero probability")
        row = row / total
        self._cond_cache[key] = row
        return row

    def _perturb(self, row: np.ndarray) -> np.ndarray:
        if self.draft_mode == "exact":
            return row
        return (1.0 - self.eps) * row + self.eps / self.spec.S

    # -- model interface ---------------------------------------------------

    def draft_pass(self, state: RevealState, horizon: int) -> tuple[np.ndarray, HiddenCache]:
        i = state.revealed_count
        if not 1 <= horizon <= self.spec.D - i:
            raise ValueError(f"bad horizon {horizon} with {i} revealed")
        self.draft_pass_count += 1
        perm = state.ordering.perm
        assigned = {int(p): int(state.seq[p]) for p in perm[:i]}
        rows = np.stack(
            [self._perturb(self.conditional(assigned, int(perm[s]))) for s in range(i, i + horizon)]
        )
        return rows, HiddenCache(state=state)

    def target_rows(
        self, cache: HiddenCache, drafted: np.ndarray, start: int, stop: int
    ) -> np.ndarray:
        self._check_span(cache, drafted, start, stop)
        self.target_pass_count += 1
        state = cache.state
        i = state.revealed_count
        perm = state.ordering.perm
        assigned = {int(p): int(state.seq[p]) for p in perm[:i]}
        rows = np.empty((stop - start, self.spec.S))
        for s in range(start, stop):
            ctx = dict(assigned)
            ctx.update({int(perm[i + k]): int(drafted[k]) for k in range(s - i)})
            if s == i:
                # First masked slot: target mirrors the (possibly perturbed)
                # draft so the first drafted token is always accepted.
                rows[s - start] = self._perturb(self.conditional(ctx, int(perm[s])))
            else:
                rows[s - start] = self.conditional(ctx, int(perm[s]))
        return rows


def tabular_draft_row(model: TabularModel, state: RevealState, slot: int) -> np.ndarray:
    """Draft row for ordering slot ``slot`` given the revealed tokens only."""
    i = state.revealed_count
    if not i <= slot < model.spec.D:
        raise ValueError(f"slot {slot} outside [{i}, {model.spec.D})")
    perm = state.ordering.perm
    assigned = {int(p): int(state.seq[p]) for p in perm[:i]}
    return model._perturb(model.conditional(assigned, int(perm[slot])))


def tabular_target_row(
    model: TabularModel, state: RevealState, drafted: np.ndarray, slot: int
) -> np.ndarray:
    """Exact chain-rule conditional at ``slot`` given revealed + drafted.

    This is the raw conditional; the model-interface ``target_rows`` applies
    the first-slot-equals-draft rule on top of it.
    """
    i = state.revealed_count
    if not i <= slot < model.spec.D:
        raise ValueError(f"slot {slot} outside [{i}, {model.spec.D})")
    if len(drafted) < slot - i:
        raise ValueError(f"drafted prefix too short for slot {slot}")
    perm = state.ordering.perm
    ctx = {int(p): int(state.seq[p]) for p in perm[:i]}
    ctx.update({int(perm[i + k]): int(drafted[k]) for k in range(slot - i)})
    return model.conditional(ctx, int(perm[slot]))
