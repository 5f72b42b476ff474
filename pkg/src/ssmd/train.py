"""Joint training of the hybrid model with a masked-denoising objective.

Each training example gets a uniformly random generation ordering and a
random revealed count ``i`` drawn by masking every position independently
at a uniform noise time.  The loss has two parts, both weighted by
D/(D - i) so each masked position contributes equally in expectation:

* non-causal: factorized NLL of the masked tokens given the revealed ones,
* causal: autoregressive NLL of the masked tokens in ordering order, with
  the first masked slot scored by the non-causal row (that slot's target is
  defined to be the draft).

With the causal output path zero-initialized the two parts are equal at
step 0 and separate as the causal stack learns to exploit its extra
context.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .core import Ordering, make_rng
from .models.hybrid import HybridModel, HybridNet
from .schedule import NoiseSchedule, keep_prob


class TrainAbort(RuntimeError):
    """Raised when training hits a non-finite loss; message names the batch
    seed so the offending step can be replayed in isolation."""


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 20_000
    batch_size: int = 32
    warmup_steps: int = 200
    # At this scale the nc/c loss separation only emerges reliably with an
    # aggressive peak; 2e-3 roughly doubles the final gap vs 1e-3.
    peak_lr: float = 2e-3
    weight_decay: float = 0.01
    seed: int = 0
    eval_every: int = 500
    schedule: str = "cosine"
    freeze_noncausal: bool = False

    def __post_init__(self):
        if min(self.steps, self.batch_size, self.warmup_steps, self.eval_every) < 1:
            raise ValueError("counts must be positive")
        if self.peak_lr <= 0:
            raise ValueError("peak learning rate must be positive")


@dataclass
class LossReport:
    """Losses at one step, in nats per token (weighted sums divided by D)."""

    step: int
    noncausal_loss: float
    causal_loss: float

    @property
    def total(self) -> float:
        return self.noncausal_loss + self.causal_loss

    def row(self) -> list:
        return [self.step, self.noncausal_loss, self.causal_loss, self.total]


LOSS_CSV_HEADER = ["step", "noncausal", "causal", "total"]


def sample_mask_config(rng: np.random.Generator, D: int, sched: NoiseSchedule) -> tuple[Ordering, int]:
    """Random ordering and revealed count for one training example.

    A uniform time t picks the noise level; every position keeps its token
    independently with ``keep_prob(t)``.  The ordering is uniform subject to
    revealed positions occupying the first ``i`` slots.  ``i == D`` (nothing
    masked) is possible and is the caller's job to resample.
    """
    t = rng.random()
    keep = rng.random(D) < keep_prob(sched, t)
    revealed = np.flatnonzero(keep)
    masked = np.flatnonzero(~keep)
    perm = np.concatenate([rng.permutation(revealed), rng.permutation(masked)])
    return Ordering(perm.astype(np.int64)), int(len(revealed))


def loss_eq9_batch(
    net: HybridNet, x: torch.Tensor, perms: torch.Tensor, i_counts: torch.Tensor
) -> tuple[torch.Tensor, torch.Tensor]:
    """(non-causal, causal) losses for a batch, differentiable.

    ``x`` (B, D) true tokens, ``perms`` (B, D) per-example orderings,
    ``i_counts`` (B,) revealed counts (all < D).  Returns the D/(D-i)
    weighted per-sequence sums averaged over the batch.
    """
    B, D = x.shape
    S = net.spec.S
    if int(i_counts.max()) >= D:
        raise ValueError("fully revealed example in batch (resample instead)")
    ranks = torch.arange(D).expand(B, D)
    masked_rank = ranks >= i_counts[:, None]  # (B, D) indexed by ordering slot
    mask_pos = torch.zeros((B, D), dtype=torch.bool)
    mask_pos.scatter_(1, perms, masked_rank)  # same set, indexed by position
    tokens_in = torch.where(mask_pos, torch.full_like(x, net.spec.mask_id), x)

    h, nc_logits = net.noncausal(tokens_in)
    nll_nc = -F.log_softmax(nc_logits, dim=-1).gather(2, x.unsqueeze(-1)).squeeze(-1)
    w = D / (D - i_counts).to(torch.float64)
    nc_loss = ((nll_nc * mask_pos).sum(dim=1) * w).mean()

    x_sig = x.gather(1, perms)
    out = net.causal_logits(h, nc_logits, x_sig, perms)  # (B, D, S) by slot
    # First masked slot: scored by the non-causal row (target == draft there).
    nc_perm = nc_logits.gather(1, perms.unsqueeze(-1).expand(-1, -1, S))
    b = torch.arange(B)
    out[b, i_counts] = nc_perm[b, i_counts]
    nll_c = -F.log_softmax(out, dim=-1).gather(2, x_sig.unsqueeze(-1)).squeeze(-1)
    # Scatter slot-order terms back to position order before reducing, so
    # the two losses sum identical terms in the identical order and the
    # step-0 equality (zero-initialized causal path) holds bit-exactly.
    nll_c_pos = torch.zeros_like(nll_c).scatter(1, perms, nll_c)
    c_loss = ((nll_c_pos * mask_pos).sum(dim=1) * w).mean()
    return nc_loss, c_loss


def loss_eq9(net: HybridNet, x: np.ndarray, ordering: Ordering, i: int) -> tuple[float, float]:
    """Single-example convenience wrapper, returns floats."""
    with torch.no_grad():
        nc, c = loss_eq9_batch(
            net,
            torch.from_numpy(np.asarray(x)).unsqueeze(0),
            torch.from_numpy(ordering.perm).unsqueeze(0),
            torch.tensor([i]),
        )
    return float(nc), float(c)


def _make_batch(rng, corpus, D, sched, batch_size):
    idx = rng.integers(0, len(corpus), size=batch_size)
    perms = np.empty((batch_size, D), dtype=np.int64)
    iis = np.empty(batch_size, dtype=np.int64)
    for b in range(batch_size):
        while True:
            sig, i = sample_mask_config(rng, D, sched)
            if i < D:  # fully revealed examples carry no signal; redraw
                break
        perms[b] = sig.perm
        iis[b] = i
    return corpus[idx], perms, iis


@dataclass
class TrainResult:
    model: HybridModel
    reports: list[LossReport]
    optimizer_state: dict


def make_optimizer(model: HybridModel, cfg: TrainConfig) -> torch.optim.Optimizer:
    net = model.net
    if cfg.freeze_noncausal:
        causal = net.causal_param_names()
        for name, p in net.named_parameters():
            p.requires_grad_(name in causal)
    params = [p for p in net.parameters() if p.requires_grad]
    return torch.optim.AdamW(params, lr=cfg.peak_lr, weight_decay=cfg.weight_decay)


def lr_factor(step: int, cfg: TrainConfig) -> float:
    """Linear warmup to the peak, then cosine decay to zero."""
    if step < cfg.warmup_steps:
        return (step + 1) / cfg.warmup_steps
    span = max(cfg.steps - cfg.warmup_steps, 1)
    frac = min((step - cfg.warmup_steps) / span, 1.0)
    return 0.5 * (1.0 + np.cos(np.pi * frac))


def train_loop(
    model: HybridModel,
    corpus: np.ndarray,
    cfg: TrainConfig,
    start_step: int = 0,
    stop_step: int | None = None,
    optimizer_state: dict | None = None,
    loss_csv=None,
) -> TrainResult:
    """Run (a slice of) a training job, steps ``[start_step, stop_step)``.

    Batches are derived from ``make_rng(cfg.seed, step)`` and the learning
    rate from the step index alone, so the trajectory is a pure function of
    (initial parameters, optimizer state, cfg): a run stopped at any step
    and resumed with the saved optimizer state continues bit-identically.
    ``loss_csv`` is an optional open file receiving CSV rows at the eval
    cadence.
    """
    D = model.spec.D
    corpus = np.asarray(corpus, dtype=np.int64)
    if corpus.ndim != 2 or corpus.shape[1] != D or len(corpus) == 0:
        raise ValueError(f"corpus must be (N, {D}) and non-empty")
    sched = NoiseSchedule(cfg.schedule)
    opt = make_optimizer(model, cfg)
    if optimizer_state is not None:
        opt.load_state_dict(optimizer_state)
    writer = csv.writer(loss_csv) if loss_csv is not None else None
    if writer is not None and start_step == 0:
        writer.writerow(LOSS_CSV_HEADER)
    reports: list[LossReport] = []
    net = model.net
    stop = cfg.steps if stop_step is None else min(stop_step, cfg.steps)
    for step in range(start_step, stop):
        rng = make_rng(cfg.seed, step)
        xb, perms, iis = _make_batch(rng, corpus, D, sched, cfg.batch_size)
        for g in opt.param_groups:
            g["lr"] = cfg.peak_lr * lr_factor(step, cfg)
        opt.zero_grad(set_to_none=True)
        nc, c = loss_eq9_batch(
            net, torch.from_numpy(xb), torch.from_numpy(perms), torch.from_numpy(iis)
        )
        total = nc + c
        if not torch.isfinite(total):
            raise TrainAbort(
                f"non-finite loss at step {step}; replay with make_rng({cfg.seed}, {step})"
            )
        total.backward()
        opt.step()
        if step % cfg.eval_every == 0 or step == cfg.steps - 1:
            rep = LossReport(step, nc.item() / D, c.item() / D)
            reports.append(rep)
            if writer is not None:
                writer.writerow(rep.row())
    return TrainResult(model=model, reports=reports, optimizer_state=opt.state_dict())


def evaluate_losses(
    model: HybridModel,
    corpus: np.ndarray,
    n: int = 2048,
    seed: int = 0,
    schedule: str = "cosine",
    step: int = -1,
) -> LossReport:
    """Low-variance loss estimate on a large freshly drawn batch.

    Per-step training reports are noisy at small batch sizes; this is the
    measurement to quote for a final model.
    """
    D = model.spec.D
    sched = NoiseSchedule(schedule)
    xb, perms, iis = _make_batch(make_rng(seed), np.asarray(corpus, dtype=np.int64), D, sched, n)
    with torch.no_grad():
        nc, c = loss_eq9_batch(
            model.net, torch.from_numpy(xb), torch.from_numpy(perms), torch.from_numpy(iis)
        )
    return LossReport(step, nc.item() / D, c.item() / D)


def finite_difference_check(
    net: HybridNet,
    x: np.ndarray,
    perms: np.ndarray,
    i_counts: np.ndarray,
    rng: np.random.Generator,
    coords_per_block: int = 5,
    step: float = 1e-5,
) -> dict[str, float]:
    """Max relative error between autograd and central differences, per
    parameter block.

    The loss is the summed objective on one fixed batch; everything runs in
    double precision, so disagreement beyond ~1e-4 indicates a real backward
    bug rather than rounding.
    """
    xt = torch.from_numpy(np.asarray(x))
    pt = torch.from_numpy(np.asarray(perms))
    it = torch.from_numpy(np.asarray(i_counts))

    def total_loss() -> torch.Tensor:
        nc, c = loss_eq9_batch(net, xt, pt, it)
        return nc + c

    net.zero_grad(set_to_none=True)
    f0 = total_loss()
    f0.backward()
    # Central differences of a quantity of magnitude |f| carry ~eps|f|/step
    # of cancellation roundoff, so gradients near that scale cannot be
    # compared in relative terms; fold the bound into the denominator floor
    # so such coordinates are judged on the (satisfied) absolute scale.
    fd_noise = np.finfo(np.float64).eps * abs(float(f0.detach())) / step
    floor = max(fd_noise / 1e-4, 1e-8)
    errors: dict[str, float] = {}
    for name, p in net.named_parameters():
        grad = p.grad
        if grad is None:
            continue
        worst = 0.0
        flat = p.data.view(-1)
        gflat = grad.view(-1)
        n = min(coords_per_block, flat.numel())
        for j in rng.choice(flat.numel(), size=n, replace=False):
            orig = flat[j].item()
            flat[j] = orig + step
            with torch.no_grad():
                hi = total_loss().item()
            flat[j] = orig - step
            with torch.no_grad():
                lo = total_loss().item()
            flat[j] = orig
            fd = (hi - lo) / (2 * step)
            ag = gflat[j].item()
            denom = max(abs(fd), abs(ag), floor)
            worst = max(worst, abs(fd - ag) / denom)
        errors[name] = worst
    return errors


# --------------------------------------------------------------------------
# Corpus generation and IO
# --------------------------------------------------------------------------

SEPARATOR = 0


def make_lexicon(
    rng: np.random.Generator, S: int, n_words: int = 200, min_len: int = 2, max_len: int = 5
) -> list[tuple[int, ...]]:
    """Random lexicon of distinct words over the non-separator symbols 1..S-1."""
    if S < 3:
        raise ValueError("need at least two non-separator symbols")
    words: list[tuple[int, ...]] = []
    seen = set()
    while len(words) < n_words:
        length = int(rng.integers(min_len, max_len + 1))
        w = tuple(int(v) for v in rng.integers(1, S, size=length))
        if w not in seen:
            seen.add(w)
            words.append(w)
    return words


def make_lexicon_corpus(
    D: int, n_seqs: int, lexicon: list[tuple[int, ...]], rng: np.random.Generator
) -> np.ndarray:
    """Sequences of separator-joined lexicon words, cut to length D."""
    out = np.empty((n_seqs, D), dtype=np.int64)
    for k in range(n_seqs):
        toks: list[int] = []
        while len(toks) < D:
            toks.extend(lexicon[int(rng.integers(len(lexicon)))])
            toks.append(SEPARATOR)
        out[k] = toks[:D]
    return out


CHAR_ALPHABET = " abcdefghijklmnopqrstuvwxyz"  # id 0 = space = separator


def encode_chars(line: str) -> list[int]:
    try:
        return [CHAR_ALPHABET.index(ch) for ch in line]
    except ValueError:
        bad = next(ch for ch in line if ch not in CHAR_ALPHABET)
        raise ValueError(f"character {bad!r} outside a-z/space") from None


def decode_chars(tokens) -> str:
    return "".join(CHAR_ALPHABET[int(t)] for t in tokens)


def load_corpus(path, D: int, S: int, char_mode: bool = False) -> np.ndarray:
    """One sequence per line: space-separated ids, or raw text in char mode."""
    rows = []
    with open(path) as f:
        for ln, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line.strip() and not char_mode:
                continue
            toks = encode_chars(line) if char_mode else [int(v) for v in line.split()]
            if len(toks) != D:
                raise ValueError(f"{path}:{ln}: expected {D} tokens, got {len(toks)}")
            if min(toks) < 0 or max(toks) >= S:
                raise ValueError(f"{path}:{ln}: token id outside [0, {S})")
            rows.append(toks)
    if not rows:
        raise ValueError(f"{path}: empty corpus")
    return np.array(rows, dtype=np.int64)


def save_corpus(path, corpus: np.ndarray, char_mode: bool = False):
    with open(path, "w") as f:
        for row in corpus:
            f.write(decode_chars(row) if char_mode else " ".join(map(str, row)))
            f.write("\n")
