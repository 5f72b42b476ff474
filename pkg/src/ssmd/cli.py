"""Command-line harness: train, sample, likelihood, sweep, selftest.

Configuration is a flat ``section.key = value`` text file; ``--set`` flags
override file values, unknown keys are rejected, and every emitted CSV
embeds a hash of the fully resolved configuration so results can be traced
back to their inputs.  Exit codes: 0 success, 1 usage/config error, 2
runtime failure.
"""

from __future__ import annotations

import argparse
import hashlib
import sys
from pathlib import Path

import numpy as np

from . import evaluation, likelihood
from .core import Ordering, SequenceSpec, make_rng, sample_ordering
from .models.checkpoint import CheckpointError, load_model, save_model
from .models.hybrid import HybridConfig, HybridModel
from .sampler import SamplerConfig, mdm_sample, spec_sample_basic, spec_sample_full
from .schedule import NoiseSchedule, TimeGrid, WindowSpec
from .train import TrainAbort, TrainConfig, evaluate_losses, load_corpus, train_loop

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class ConfigError(ValueError):
    pass


def _bool(v: str) -> bool:
    if v.lower() in ("1", "true", "yes"):
        return True
    if v.lower() in ("0", "false", "no"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


# key -> (type, default); None default means "must be provided when used"
CONFIG_SCHEMA = {
    "seed": (int, 0),
    "spec.S": (int, 16),
    "spec.D": (int, 32),
    "schedule.kind": (str, "cosine"),
    "window.kind": (str, "cosine"),
    "window.dtau": (float, 0.083),
    "window.cap": (int, 1),
    "sampler.inner_loops": (int, 1),
    "grid.steps": (int, 32),
    "train.steps": (int, 20_000),
    "train.batch_size": (int, 32),
    "train.warmup_steps": (int, 200),
    "train.peak_lr": (float, 2e-3),
    "train.weight_decay": (float, 0.01),
    "train.eval_every": (int, 500),
    "train.freeze_noncausal": (_bool, False),
    "train.char_mode": (_bool, False),
    "train.embed_dim": (int, 48),
    "train.n_heads": (int, 4),
    "train.nc_layers": (int, 2),
    "train.c_layers": (int, 1),
    "train.mlp_ratio": (int, 4),
    "paths.corpus": (str, None),
    "paths.checkpoint": (str, None),
    "paths.out_dir": (str, "."),
}


def parse_config(text: str, overrides: list[str] = ()) -> dict:
    cfg = {k: d for k, (_, d) in CONFIG_SCHEMA.items()}

    def apply(key: str, raw: str, where: str):
        if key not in CONFIG_SCHEMA:
            raise ConfigError(f"{where}: unknown config key {key!r}")
        typ = CONFIG_SCHEMA[key][0]
        try:
            cfg[key] = typ(raw)
        except ValueError as e:
            raise ConfigError(f"{where}: bad value for {key}: {e}") from None

    for ln, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {ln}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        apply(key, raw, f"config line {ln}")
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set {item!r}: expected key=value")
        key, raw = (s.strip() for s in item.split("=", 1))
        apply(key, raw, f"--set {item}")
    return cfg


def load_config(args) -> dict:
    text = Path(args.config).read_text() if args.config else ""
    return parse_config(text, args.set or [])


def config_hash(cfg: dict) -> str:
    # The output directory has no bearing on results, so two runs of the
    # same job into different directories hash identically.
    blob = "\n".join(f"{k} = {cfg[k]}" for k in sorted(cfg) if k != "paths.out_dir")
    return hashlib.sha1(blob.encode()).hexdigest()[:12]


def echo_config(cfg: dict, out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "config.resolved", "w") as f:
        f.write(f"# hash {config_hash(cfg)}\n")
        for k in sorted(cfg):
            if cfg[k] is not None:
                f.write(f"{k} = {cfg[k]}\n")


def require(cfg: dict, key: str):
    if cfg.get(key) is None:
        raise ConfigError(f"missing required config key {key!r}")
    return cfg[key]


def _train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(
        steps=cfg["train.steps"],
        batch_size=cfg["train.batch_size"],
        warmup_steps=cfg["train.warmup_steps"],
        peak_lr=cfg["train.peak_lr"],
        weight_decay=cfg["train.weight_decay"],
        seed=cfg["seed"],
        eval_every=cfg["train.eval_every"],
        schedule=cfg["schedule.kind"],
        freeze_noncausal=cfg["train.freeze_noncausal"],
    )


def _hybrid_config(cfg: dict) -> HybridConfig:
    return HybridConfig(
        embed_dim=cfg["train.embed_dim"],
        n_heads=cfg["train.n_heads"],
        nc_layers=cfg["train.nc_layers"],
        c_layers=cfg["train.c_layers"],
        mlp_ratio=cfg["train.mlp_ratio"],
    )


def _window_spec(cfg: dict) -> WindowSpec:
    return WindowSpec(kind=cfg["window.kind"], dtau=cfg["window.dtau"], cap=cfg["window.cap"])


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------


def cmd_train(args) -> int:
    import torch

    cfg = load_config(args)
    spec = SequenceSpec(S=cfg["spec.S"], D=cfg["spec.D"])
    corpus = load_corpus(require(cfg, "paths.corpus"), spec.D, spec.S, cfg["train.char_mode"])
    out_dir = Path(cfg["paths.out_dir"])
    echo_config(cfg, out_dir)
    tcfg = _train_config(cfg)

    start_step = 0
    opt_state = None
    if args.resume:
        model = load_model(args.resume)
        saved = torch.load(args.resume + ".opt", weights_only=False)
        start_step, opt_state = saved["step"], saved["optimizer"]
    else:
        model = HybridModel(spec, _hybrid_config(cfg), seed=cfg["seed"])

    mode = "a" if args.resume else "w"
    with open(out_dir / "loss.csv", mode, newline="") as f:
        if start_step == 0:
            f.write(f"# config {config_hash(cfg)}\n")
        result = train_loop(
            model, corpus, tcfg, start_step=start_step, optimizer_state=opt_state, loss_csv=f
        )
    ckpt = str(out_dir / "model.ckpt")
    save_model(model, ckpt)
    torch.save({"step": tcfg.steps, "optimizer": result.optimizer_state}, ckpt + ".opt")
    final = evaluate_losses(model, corpus, seed=cfg["seed"] + 1, schedule=tcfg.schedule)
    print(f"trained {tcfg.steps} steps; final noncausal {final.noncausal_loss:.4f} "
          f"causal {final.causal_loss:.4f} (2048-sample eval); checkpoint {ckpt}")
    return EXIT_OK


def cmd_sample(args) -> int:
    cfg = load_config(args)
    model = load_model(require(cfg, "paths.checkpoint"))
    out_dir = Path(cfg["paths.out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    echo_config(cfg, out_dir)
    sched = NoiseSchedule(cfg["schedule.kind"])
    seed = cfg["seed"]
    results = []
    for k in range(args.n):
        rng = make_rng(seed, k)
        if args.family == "mdm":
            steps = args.grid_steps if args.grid_steps is not None else cfg["grid.steps"]
            results.append(mdm_sample(model, sched, TimeGrid(steps), rng, seed=k))
        elif args.family == "spec":
            scfg = SamplerConfig(window=_window_spec(cfg), inner_loops=cfg["sampler.inner_loops"])
            results.append(spec_sample_full(model, scfg, rng, seed=k))
        else:  # spec-basic
            results.append(spec_sample_basic(model, rng, seed=k))
    with open(out_dir / "samples.txt", "w") as f:
        for r in results:
            f.write(" ".join(map(str, r.sequence)) + "\n")
    with open(out_dir / "samples_metrics.csv", "w") as f:
        f.write(f"# config {config_hash(cfg)}\n")
        f.write("seed,ordering_hash,nfe,rejections,length\n")
        for r in results:
            f.write(f"{r.seed},{r.ordering.short_hash()},{r.nfe},{r.rejections},{len(r.sequence)}\n")
    print(f"wrote {args.n} samples to {out_dir / 'samples.txt'}")
    return EXIT_OK


def cmd_likelihood(args) -> int:
    cfg = load_config(args)
    model = load_model(require(cfg, "paths.checkpoint"))
    spec = model.spec
    seqs, bad = [], 0
    with open(args.sequences) as f:
        for ln, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                toks = np.array([int(v) for v in line.split()], dtype=np.int64)
                spec.validate_tokens(toks, allow_mask=False)
            except Exception as e:
                print(f"{args.sequences}:{ln}: {e}", file=sys.stderr)
                bad += 1
                continue
            seqs.append(toks)
    if bad:
        return EXIT_RUNTIME
    # Fixed reference ordering (identity) for the per-ordering columns.
    order = Ordering(np.arange(spec.D))
    out = Path(cfg["paths.out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "likelihood.csv", "w") as f:
        f.write(f"# config {config_hash(cfg)}\n")
        f.write("index,logp,elbo,expected_rejections,expected_outer\n")
        for idx, x in enumerate(seqs):
            lp = likelihood.sequence_likelihood(model, x, order)
            if args.exact_orderings:
                el = likelihood.elbo_exact(model, x)
                lp = likelihood.exact_log_marginal(model, x)
            else:
                el = likelihood.elbo(model, x, args.orderings, make_rng(cfg["seed"], idx))
            post = likelihood.rejection_count_posterior(model, x, order)
            outer = post.mean + likelihood.last_slot_accept_prob(model, x, order)
            f.write(f"{idx},{lp},{el},{post.mean},{outer}\n")
    print(f"wrote {out / 'likelihood.csv'} ({len(seqs)} sequences)")
    return EXIT_OK


def _csv_ints(s: str) -> list[int]:
    return [int(v) for v in s.split(",") if v]


def _csv_floats(s: str) -> list[float]:
    return [float(v) for v in s.split(",") if v]


def cmd_sweep(args) -> int:
    cfg = load_config(args)
    model = load_model(require(cfg, "paths.checkpoint"))
    out_dir = Path(cfg["paths.out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    echo_config(cfg, out_dir)
    lexicon = None
    if cfg["paths.corpus"]:
        corpus = load_corpus(cfg["paths.corpus"], model.spec.D, model.spec.S, cfg["train.char_mode"])
        lexicon = sorted({w for row in corpus for w in evaluation.extract_words(row)})
    spec_cfgs = [
        SamplerConfig(window=WindowSpec(kind=args.spec_window, dtau=dtau), inner_loops=n)
        for dtau in (args.spec_dtau or [])
        for n in (args.spec_inner or [1])
    ]
    mdm_grids = args.mdm_grids or []
    if not spec_cfgs and not mdm_grids:
        raise ConfigError("empty sweep: give --spec-dtau and/or --mdm-grids")
    points = evaluation.tradeoff_sweep(
        model,
        spec_cfgs,
        mdm_grids,
        n_samples=args.n,
        seed=cfg["seed"],
        sched=NoiseSchedule(cfg["schedule.kind"]),
        lexicon=lexicon,
    )
    with open(out_dir / "tradeoff.csv", "w", newline="") as f:
        evaluation.write_tradeoff_csv(points, f, config_hash(cfg))
    with open(out_dir / "tradeoff_plot.dat", "w") as f:
        for metric in ("lexicon_acc", "entropy"):
            evaluation.write_plot_series(points, metric, f)
    print(f"wrote {len(points)} tradeoff points to {out_dir / 'tradeoff.csv'}")
    return EXIT_OK


def cmd_selftest(args) -> int:
    """Fast invariant suite; a cheap health check for installs."""
    from . import chains
    from .models.tabular import TabularModel
    from .sampler import NfeMeter, accept_step
    from .schedule import keep_prob, window_size

    failures = []

    def check(name, ok):
        print(f"{'ok  ' if ok else 'FAIL'} {name}")
        if not ok:
            failures.append(name)

    sched = NoiseSchedule("cosine")
    check("schedule boundaries", keep_prob(sched, 0.0) == 1.0 and keep_prob(sched, 1.0) == 0.0)
    check(
        "window worked examples",
        window_size(WindowSpec("cosine", dtau=0.083), 0, 256) == 3
        and window_size(WindowSpec("cosine", dtau=0.083), 128, 256) == 30,
    )
    m1 = NfeMeter(nc_blocks=11, c_blocks=1, nc_passes=1, c_passes=1)
    m2 = NfeMeter(nc_blocks=11, c_blocks=1, nc_passes=1, c_passes=7)
    check("nfe worked examples", m1.nfe == 1.0 and m2.nfe == 1.5)

    rng = make_rng(0)
    p, q = rng.dirichlet(np.ones(5)), rng.dirichlet(np.ones(5))
    ident = sum(min(p[s], q[s]) + max(0.0, q[s] - p[s]) for s in range(5))
    check("accept/residual identity", abs(ident - 1.0) < 1e-12)

    spec = SequenceSpec(S=2, D=3)
    model = TabularModel.random(spec, make_rng(1), draft_mode="perturbed", eps=0.3)
    order = sample_ordering(make_rng(2), 3)
    import itertools

    tot = sum(
        np.exp(likelihood.sequence_likelihood(model, np.array(x), order))
        for x in itertools.product(range(2), repeat=3)
    )
    check("likelihood normalizes", abs(tot - 1.0) < 1e-9)
    bf = likelihood.brute_force_likelihood(model, np.array([0, 1, 0]), order)
    dp = likelihood.sequence_likelihood(model, np.array([0, 1, 0]), order)
    check("dp matches brute force", abs(bf - dp) < 1e-9)

    tabs = chains.build_chain_tables(model, order)
    res_py = chains.simulate_chains(tabs, 200, seed=3, per_chain_streams=True, backend="python")
    ok = True
    if chains.BACKEND == "cython":
        res_cy = chains.simulate_chains(tabs, 200, seed=3, per_chain_streams=True, backend="cython")
        ok = np.array_equal(res_py.sequences, res_cy.sequences) and np.array_equal(
            res_py.reject_counts, res_cy.reject_counts
        )
    for k in range(50):
        r = spec_sample_basic(model, make_rng(3, k), ordering=order)
        ok = ok and np.array_equal(r.sequence, res_py.sequences[k])
    check(f"chain kernel parity (backend={chains.BACKEND})", ok)

    ev, _ = accept_step(p, q, 0, make_rng(4))
    check("accept_step runs", ev is not None)

    if failures:
        print(f"{len(failures)} check(s) failed", file=sys.stderr)
        return EXIT_RUNTIME
    print("all checks passed")
    return EXIT_OK


# --------------------------------------------------------------------------
# Entry point
# --------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse default exits 2; usage errors are 1 here
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="ssmd", description=__doc__)
    ap.add_argument("--threads", type=int, default=1, help="cap worker/BLAS threads")
    sub = ap.add_subparsers(dest="cmd", required=True)

    def common(p):
        p.add_argument("--config", help="config file (section.key = value lines)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config value (repeatable)")

    p = sub.add_parser("train", help="train the hybrid model")
    common(p)
    p.add_argument("--resume", metavar="CKPT", help="resume from a checkpoint")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("sample", help="draw sequences from a checkpoint")
    common(p)
    p.add_argument("--family", choices=["mdm", "spec", "spec-basic"], default="spec")
    p.add_argument("--n", type=int, default=16, help="number of sequences")
    p.add_argument("--grid-steps", type=int, help="mdm time-grid steps (default: grid.steps)")
    p.set_defaults(fn=cmd_sample)

    p = sub.add_parser("likelihood", help="exact per-ordering likelihoods and ELBOs")
    common(p)
    p.add_argument("sequences", help="file of space-separated token-id lines")
    p.add_argument("--orderings", type=int, default=8, help="Monte Carlo orderings for the ELBO")
    p.add_argument("--exact-orderings", action="store_true",
                   help="enumerate all D! orderings (small D only)")
    p.set_defaults(fn=cmd_likelihood)

    p = sub.add_parser("sweep", help="NFE / quality tradeoff sweep")
    common(p)
    p.add_argument("--n", type=int, default=64, help="samples per point")
    p.add_argument("--spec-window", default="cosine", choices=["cosine", "linear", "constant"])
    p.add_argument("--spec-dtau", type=_csv_floats, help="comma-separated window dtau values")
    p.add_argument("--spec-inner", type=_csv_ints, help="comma-separated inner-loop counts")
    p.add_argument("--mdm-grids", type=_csv_ints, help="comma-separated mdm grid steps")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("selftest", help="run the fast invariant suite")
    common(p)
    p.set_defaults(fn=cmd_selftest)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    import torch

    torch.set_num_threads(max(args.threads, 1))
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"ssmd: config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainAbort, CheckpointError) as e:
        print(f"ssmd: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except (OSError, ValueError) as e:
        print(f"ssmd: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
