"""Command-line interface: ``rswitch <command> [options]``.

Commands
--------
fit       run chains and persist them to a run directory
simulate  write a synthetic dataset (and optionally its truth sidecar)
diagnose  PSRF/MPSRF, acceptance rates and label report of a run
marglik   harmonic-mean evidence with bootstrap interval and DIC
compare   log Bayes factor between two runs
gof       chi-square statistic and Monte-Carlo p-value
states    per-period posterior state probabilities
mle       single-state maximum-likelihood fits with AIC/BIC

A run directory holds the effective ``config.yaml``, a copy of the data as
``data.csv`` and the chain files; later commands read everything from it.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__, analysis
from .baseline_mle import aic_bic, baseline_spec, fit_mle
from .config import RunConfig, load_config, save_config
from .data import Dataset, load_dataset, save_dataset
from .datagen import SimRecipe, panel_design, simulate_with_states, truth_record
from .errors import SpecificationError
from .model_core import Family
from .sampler import run_chains
from .store import load_run, persist_run
from .switching import TransitionProbs

log = logging.getLogger("rswitch")


class Run:
    """A persisted run: configuration, data and chains."""

    def __init__(self, directory: str | Path):
        self.dir = Path(directory)
        self.config = load_config(self.dir / "config.yaml")
        self.data = load_dataset(self.dir / "data.csv")
        self.spec = self.config.spec(self.data.K)
        self.layout = self.config.layout(self.data)
        self.chains = load_run(self.dir, self.config.digest())

    def retained(self, delta: float | None):
        delta = self.config.analysis.delta if delta is None else delta
        ok = [c for c in self.chains if c.ok and c.n_draws]
        keep, dropped = analysis.resolve_labels(ok, delta)
        return [ok[i] for i in keep], {ok[i].chain: d for i, d in dropped.items()}


# ----------------------------------------------------------------- commands
def cmd_fit(args) -> int:
    cfg = load_config(args.config)
    if args.chains is not None:
        cfg.sampler.n_chains = args.chains
    if args.seed is not None:
        cfg.sampler.seed = args.seed
    data = load_dataset(args.data)
    spec = cfg.spec(data.K)
    layout = cfg.layout(data)
    prior = cfg.prior(spec, data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for old in out.glob("chain_*"):
        old.unlink()
    save_config(cfg, out / "config.yaml")
    save_dataset(data, out / "data.csv")
    results = run_chains(data, spec, layout, prior, cfg.sampler)
    persist_run(results, out, cfg.digest())
    failed = [r.chain for r in results if not r.ok]
    for r in results:
        status = "ok" if r.ok else f"aborted: {r.error}"
        print(f"chain {r.chain}: {r.n_draws} draws, {status}")
    return 1 if len(failed) == len(results) else 0


def _sim_section(raw: dict) -> dict:
    sim = dict(raw.get("simulate") or {})
    for key in ("T", "N", "free"):
        if key not in sim:
            raise SpecificationError(f"simulate.{key} is required")
    return sim


def cmd_simulate(args) -> int:
    with open(args.config, encoding="utf-8") as fh:
        raw = yaml.safe_load(fh) or {}
    sim = _sim_section(raw)
    cfg = RunConfig.from_dict(raw)
    seed = cfg.sampler.seed if args.seed is None else args.seed
    T, N = int(sim["T"]), int(sim["N"])
    K = int(sim.get("K", 1))
    t, n, X, names = panel_design(T, N, K, seed=int(sim.get("design_seed", seed)),
                                  per_unit=bool(sim.get("per_unit", True)))
    spec = cfg.spec(K)
    proto = Dataset(t, n, np.zeros(len(t), dtype=np.int64), X, names)
    layout = cfg.layout(proto)
    trans = None
    if spec.switching:
        trans = TransitionProbs(np.atleast_1d(sim["p01"]), np.atleast_1d(sim["p10"]))
    recipe = SimRecipe(spec, layout, np.asarray(sim["free"], dtype=float), trans,
                       t, n, X, names, seed=seed)
    data, states = simulate_with_states(recipe)
    save_dataset(data, args.out)
    if args.truth:
        Path(args.truth).write_text(json.dumps(truth_record(recipe, states)) + "\n",
                                    encoding="utf-8")
    print(f"wrote {len(data)} observations to {args.out}")
    return 0


def cmd_diagnose(args) -> int:
    run = Run(args.run)
    kept, dropped = run.retained(args.delta)
    rep = analysis.diagnose(kept, np.inf)
    print(f"retained chains: {[c.chain for c in kept]}")
    for c, d in sorted(dropped.items()):
        print(f"dropped chain {c}: mean log-joint {d:.2f} below the best chain")
    for c in run.chains:
        if not c.ok:
            print(f"aborted chain {c.chain}: {c.error}")
    if len(kept) < 2:
        print("PSRF/MPSRF unavailable: fewer than two retained chains")
    else:
        print(f"{'parameter':<16}{'PSRF':>10}")
        for name, v in zip(rep.names, rep.psrf):
            print(f"{name:<16}{v:>10.4f}")
        print(f"MPSRF {rep.mpsrf:.4f}")
    print(f"{'coefficient':<16}{'accept':>10}")
    for name, v in zip(run.spec.free_names, rep.accept_rates):
        print(f"{name:<16}{v:>10.4f}")
    return 0


def _evidence(run: Run, args) -> analysis.ModelEvidence:
    kept, _ = run.retained(args.delta)
    opts = run.config.analysis
    seed = 0 if args.seed is None else args.seed
    return analysis.model_evidence(kept, run.data, run.spec, run.layout,
                                   opts.bootstrap_draws, opts.subsample_fraction, seed)


def cmd_marglik(args) -> int:
    run = Run(args.run)
    ev = _evidence(run, args)
    print(f"log marginal likelihood {ev.log_marginal:.4f}")
    print(f"bootstrap interval [{ev.ci_lo:.4f}, {ev.ci_hi:.4f}]")
    print(f"DIC {ev.dic:.4f}")
    return 0


def cmd_compare(args) -> int:
    lm = []
    for d in (args.run_a, args.run_b):
        run = Run(d)
        kept, _ = run.retained(args.delta)
        lm.append(analysis.log_marginal_likelihood(analysis.pooled(kept, "loglik")))
    bf = analysis.log_bayes_factor(lm[0], lm[1])
    print(f"log Bayes factor ({args.run_a} over {args.run_b}): {bf:.2f}")
    return 0


def cmd_gof(args) -> int:
    run = Run(args.run)
    kept, _ = run.retained(args.delta)
    pt = analysis.posterior_mean_point(kept, run.spec, run.layout)
    reps = run.config.analysis.gof_replicates if args.replicates is None else args.replicates
    seed = 0 if args.seed is None else args.seed
    stat = analysis.gof_statistic(run.data, run.spec, run.layout, pt.free, pt.trans)
    p = analysis.gof_pvalue(run.data, run.spec, run.layout, pt.free, pt.trans,
                            reps, seed, observed=stat)
    print(f"chi-square {stat:.4f}")
    print(f"Monte-Carlo p-value {p:.4f} ({reps} replicates)")
    return 0


def cmd_states(args) -> int:
    run = Run(args.run)
    if not run.spec.switching:
        raise SpecificationError("state probabilities need a switching model")
    kept, _ = run.retained(args.delta)
    summ = analysis.summarize(kept, run.config.analysis.level if args.level is None
                              else args.level)
    t_real, n_real = run.layout.to_real(np.arange(1, run.layout.T_tilde + 1),
                                        np.ones(run.layout.T_tilde, dtype=np.int64))
    lines = ["t_aux,t,n,prob,sd"]
    for i, (p, s) in enumerate(zip(summ.state_prob, summ.state_sd)):
        lines.append(f"{i + 1},{t_real[i]},{n_real[i]},{float(p)!r},{float(s)!r}")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"wrote {run.layout.T_tilde} periods to {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def cmd_mle(args) -> int:
    cfg = load_config(args.config)
    data = load_dataset(args.data)
    spec = cfg.spec(data.K)
    states = (0, 1) if spec.switching else (0,)
    seen = set()
    for j in states:
        if spec.family(j) is Family.ZERO_ONLY:
            continue
        base = baseline_spec(spec, j)
        key = (base.family_state0, tuple(sorted(base.restrictions)))
        if key in seen:
            continue
        seen.add(key)
        fit = fit_mle(base, data)
        aic, bic = aic_bic(fit, len(data))
        print(f"{base.family_state0.value}: loglik {fit.loglik:.4f} AIC {aic:.4f} "
              f"BIC {bic:.4f} converged {fit.converged}"
              + (f" flags {','.join(fit.flags)}" if fit.flags else ""))
        for name, v, se in zip(fit.names, fit.estimates, fit.std_errors):
            print(f"  {name:<14}{v:>12.5f}{se:>12.5f}")
    return 0


# ------------------------------------------------------------------ parser
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rswitch", description=(
        "Bayesian estimation of two-state Markov switching count and outcome models."))
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = p.add_subparsers(dest="command", required=True)

    def analysis_flags(sp):
        sp.add_argument("--delta", type=float, help="label-drop threshold on mean log-joint")
        sp.add_argument("--level", type=float, help="credible-interval significance")
        sp.add_argument("--seed", type=int, help="seed for resampling")

    sp = sub.add_parser("fit", help="run chains and persist them")
    sp.add_argument("--config", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True, help="run directory")
    sp.add_argument("--chains", type=int)
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("simulate", help="write a synthetic dataset")
    sp.add_argument("--config", required=True, help="run config with a 'simulate' section")
    sp.add_argument("--out", required=True, help="dataset file")
    sp.add_argument("--truth", help="truth sidecar file")
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=cmd_simulate)

    for name, func, text in (("diagnose", cmd_diagnose, "convergence and label report"),
                             ("marglik", cmd_marglik, "evidence with bootstrap interval"),
                             ("gof", cmd_gof, "chi-square goodness of fit"),
                             ("states", cmd_states, "posterior state probabilities")):
        sp = sub.add_parser(name, help=text)
        sp.add_argument("run", help="run directory")
        analysis_flags(sp)
        if name == "gof":
            sp.add_argument("--replicates", type=int)
        if name == "states":
            sp.add_argument("--out", help="output file (default: stdout)")
        sp.set_defaults(func=func)

    sp = sub.add_parser("compare", help="log Bayes factor of run A over run B")
    sp.add_argument("run_a")
    sp.add_argument("run_b")
    sp.add_argument("--delta", type=float)
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("mle", help="single-state maximum-likelihood fits")
    sp.add_argument("--config", required=True)
    sp.add_argument("--data", required=True)
    sp.set_defaults(func=cmd_mle)
    return p


def cli(argv: list[str] | None = None) -> int:
    """Run the command line; returns the exit status."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"rswitch {args.command}: error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli())


if __name__ == "__main__":
    main()
