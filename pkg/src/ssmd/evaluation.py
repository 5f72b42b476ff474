"""Sample-quality metrics and NFE-vs-quality tradeoff sweeps.

Quality is judged three ways at desk scale: fraction of generated words
found in the training lexicon, mean per-sample unigram entropy, and (when
the generating distribution is a known tabular oracle) exact NLL under that
oracle.  ``tradeoff_sweep`` traces quality against forward-pass cost for
the masked-diffusion baseline (varying grid steps) and the speculative
sampler (varying window / inner-loop settings).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import make_rng
from .models.base import Model
from .models.tabular import TabularModel
from .sampler import SamplerConfig, mdm_sample, spec_sample_full
from .schedule import NoiseSchedule, TimeGrid
from .train import SEPARATOR


def extract_words(sample: np.ndarray) -> list[tuple[int, ...]]:
    """Separator-delimited words, dropping fragments at the sequence edges
    (a word must sit between two separators to count)."""
    seps = np.flatnonzero(np.asarray(sample) == SEPARATOR)
    words = []
    for a, b in zip(seps[:-1], seps[1:]):
        if b - a > 1:
            words.append(tuple(int(t) for t in sample[a + 1 : b]))
    return words


def lexicon_accuracy(samples: np.ndarray, lexicon) -> float:
    """Fraction of complete generated words present in the lexicon,
    aggregated over all samples."""
    lex = set(map(tuple, lexicon))
    hits = total = 0
    for sample in samples:
        for w in extract_words(sample):
            total += 1
            hits += w in lex
    if total == 0:
        raise ValueError("no complete words in any sample")
    return hits / total


def count_words(samples: np.ndarray) -> int:
    return sum(len(extract_words(s)) for s in samples)


def unigram_entropy(samples: np.ndarray) -> float:
    """Mean over samples of the entropy of each sample's own token
    histogram, in nats."""
    samples = np.asarray(samples)
    if samples.size == 0:
        raise ValueError("no samples")
    ents = []
    for sample in samples:
        counts = np.bincount(sample)
        p = counts[counts > 0] / len(sample)
        ents.append(float(-(p * np.log(p)).sum()))
    return float(np.mean(ents))


@dataclass
class OracleNll:
    """Mean NLL (nats per token) under the generating distribution."""

    nll: float
    zero_prob_count: int  # samples outside the oracle's support (NLL = +inf)


def oracle_nll(samples: np.ndarray, oracle: TabularModel) -> OracleNll:
    D = oracle.spec.D
    logps = []
    zeros = 0
    for sample in samples:
        p = float(oracle.joint[tuple(int(t) for t in sample)])
        if p <= 0.0:
            zeros += 1
        else:
            logps.append(math.log(p))
    if zeros:
        return OracleNll(nll=float("inf"), zero_prob_count=zeros)
    return OracleNll(nll=-float(np.mean(logps)) / D, zero_prob_count=0)


# --------------------------------------------------------------------------
# Tradeoff sweep
# --------------------------------------------------------------------------


@dataclass
class TradeoffPoint:
    family: str  # "mdm" or "spec"
    config_label: str
    window_kind: str  # "" for mdm
    dtau: float  # nan for mdm
    inner_loops: int  # 0 for mdm
    grid_steps: int  # 0 for spec
    mean_nfe: float
    se_nfe: float
    lexicon_acc: float
    lexicon_acc_se: float
    entropy: float
    oracle_nll_value: float
    n_samples: int

    def row(self) -> list:
        return [
            self.family,
            self.config_label,
            self.window_kind,
            self.dtau,
            self.inner_loops,
            self.grid_steps,
            self.mean_nfe,
            self.se_nfe,
            self.lexicon_acc,
            self.entropy,
            self.oracle_nll_value,
            self.n_samples,
        ]


TRADEOFF_CSV_HEADER = [
    "family",
    "config_label",
    "window_kind",
    "dtau",
    "inner_loops",
    "grid_steps",
    "mean_nfe",
    "se_nfe",
    "lexicon_acc",
    "entropy",
    "oracle_nll",
    "n_samples",
]


def _point_metrics(samples, nfes, lexicon, oracle):
    n = len(samples)
    acc = float("nan")
    acc_se = float("nan")
    if lexicon is not None:
        words = count_words(samples)
        acc = lexicon_accuracy(samples, lexicon)
        acc_se = math.sqrt(max(acc * (1 - acc), 1e-12) / words)
    nll = float("nan")
    if oracle is not None:
        nll = oracle_nll(samples, oracle).nll
    return dict(
        mean_nfe=float(np.mean(nfes)),
        se_nfe=float(np.std(nfes, ddof=1) / math.sqrt(n)) if n > 1 else 0.0,
        lexicon_acc=acc,
        lexicon_acc_se=acc_se,
        entropy=unigram_entropy(samples),
        oracle_nll_value=nll,
        n_samples=n,
    )


def sweep_point_spec(
    model: Model, cfg: SamplerConfig, n_samples: int, seed: int, point_id: int,
    lexicon=None, oracle=None,
) -> TradeoffPoint:
    samples, nfes = [], []
    for k in range(n_samples):
        r = spec_sample_full(model, cfg, make_rng(seed, point_id, k))
        samples.append(r.sequence)
        nfes.append(r.nfe)
    label = f"spec/{cfg.window.kind}/dtau={cfg.window.dtau:g}/N={cfg.inner_loops}"
    return TradeoffPoint(
        family="spec",
        config_label=label,
        window_kind=cfg.window.kind,
        dtau=cfg.window.dtau,
        inner_loops=cfg.inner_loops,
        grid_steps=0,
        **_point_metrics(np.array(samples), nfes, lexicon, oracle),
    )


def sweep_point_mdm(
    model: Model, sched: NoiseSchedule, grid_steps: int, n_samples: int, seed: int,
    point_id: int, lexicon=None, oracle=None,
) -> TradeoffPoint:
    grid = TimeGrid(grid_steps)
    samples, nfes = [], []
    for k in range(n_samples):
        r = mdm_sample(model, sched, grid, make_rng(seed, point_id, k))
        samples.append(r.sequence)
        nfes.append(r.nfe)
    return TradeoffPoint(
        family="mdm",
        config_label=f"mdm/T={grid_steps}",
        window_kind="",
        dtau=float("nan"),
        inner_loops=0,
        grid_steps=grid_steps,
        **_point_metrics(np.array(samples), nfes, lexicon, oracle),
    )


def tradeoff_sweep(
    model: Model,
    spec_configs: list[SamplerConfig],
    mdm_grids: list[int],
    n_samples: int,
    seed: int,
    sched: NoiseSchedule | None = None,
    lexicon=None,
    oracle: TabularModel | None = None,
) -> list[TradeoffPoint]:
    """One TradeoffPoint per sampler configuration, both families.

    Sample ``k`` of point ``p`` uses the stream ``make_rng(seed, p, k)``, so
    the sweep is deterministic given the root seed and independent of
    evaluation order.
    """
    if not spec_configs and not mdm_grids:
        raise ValueError("empty sweep")
    sched = sched or NoiseSchedule("cosine")
    points = []
    pid = 0
    for cfg in spec_configs:
        points.append(sweep_point_spec(model, cfg, n_samples, seed, pid, lexicon, oracle))
        pid += 1
    for T in mdm_grids:
        points.append(sweep_point_mdm(model, sched, T, n_samples, seed, pid, lexicon, oracle))
        pid += 1
    return points


def write_tradeoff_csv(points: list[TradeoffPoint], f, config_hash: str | None = None):
    import csv

    if config_hash:
        f.write(f"# config {config_hash}\n")
    w = csv.writer(f)
    w.writerow(TRADEOFF_CSV_HEADER)
    for p in points:
        w.writerow(p.row())


def write_plot_series(points: list[TradeoffPoint], metric: str, f):
    """(x = mean NFE, y = metric) series, one block per family, ready for
    any plotting tool."""
    for family in ("spec", "mdm"):
        fam = sorted((p for p in points if p.family == family), key=lambda p: p.mean_nfe)
        if not fam:
            continue
        f.write(f"# series {family} metric={metric}\n")
        for p in fam:
            f.write(f"{p.mean_nfe:.6f} {getattr(p, metric):.6f} {p.config_label}\n")
