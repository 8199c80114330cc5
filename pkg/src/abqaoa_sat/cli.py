"""Command-line entry point.

Exit codes: 0 success, 2 bad configuration or arguments, 3 some cells had
failed samples.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import harness
from .diagnostics import DEFAULT_ETAS, METRICS
from .harness import ConfigError, ExperimentConfig
from .ofab import OfabConfig, opt_free_run
from .sat import as_fraction, brute_force_ground, load_ensemble, save_ensemble
from .statevector import build_cost_diagonal
from .variational import OptimizerConfig, SampleFailure, decide_sat, run

log = logging.getLogger("abqaoa_sat")


def _csv(kind):
    def parse(text):
        try:
            return [kind(x) for x in text.split(",") if x]
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from None

    return parse


def _add_common(p: argparse.ArgumentParser, config=True):
    p.add_argument("--seed", type=int, required=True, help="master seed (mandatory)")
    p.add_argument("--threads", type=int, default=None, help="worker processes; results do not depend on it")
    p.add_argument("-v", "--verbose", action="store_true")
    if config:
        p.add_argument("--preset", choices=sorted(harness.PRESETS), help="named defaults, overridden by --config")
        p.add_argument("--config", type=Path, help="JSON experiment config; flags below override it")
        p.add_argument("--n", type=_csv(int), dest="n_list")
        p.add_argument("--alpha", type=_csv(str), dest="alphas")
        p.add_argument("--levels", type=_csv(int))
        p.add_argument("--algorithms", type=_csv(str))
        p.add_argument("--init", choices=("tqa", "fourier"))
        p.add_argument("--instances", type=int)
        p.add_argument("--problem", choices=harness.PROBLEMS)
        p.add_argument("--gradient", choices=("fd", "exact"))
        p.add_argument("--samples", type=int, help="random starting points R")
        p.add_argument("--out", dest="output_dir")


def _experiment(args) -> ExperimentConfig:
    overrides = {
        k: getattr(args, k)
        for k in ("n_list", "alphas", "levels", "algorithms", "init", "instances", "problem", "threads", "output_dir")
    }
    overrides["seed"] = args.seed
    cfg = ExperimentConfig.load(args.config, args.preset, **overrides)
    opt = {k: v for k, v in (("gradient", args.gradient), ("samples", args.samples)) if v is not None}
    if opt:
        cfg.optimizer = {**cfg.optimizer, **opt}
        try:
            cfg.optimizer_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    return cfg


def _instance(args):
    """Formula from ``--instance`` (ensemble file) or freshly generated from the seed."""
    if args.instance:
        formulas, _, _ = load_ensemble(args.instance)
        if not 0 <= args.index < len(formulas):
            raise ConfigError(f"index {args.index} outside ensemble of {len(formulas)}")
        return formulas[args.index]
    if args.n is None or args.alpha is None:
        raise ConfigError("give --instance, or both --n and --alpha")
    return harness.generate_ensemble(args.seed, args.n, args.alpha, args.index + 1)[args.index]


def cmd_gen(args) -> int:
    formulas = harness.generate_ensemble(args.seed, args.n, args.alpha, args.count)
    save_ensemble(args.out, formulas, args.seed, args.alpha)
    sat = sum(brute_force_ground(f).energy == 0 for f in formulas)
    print(f"wrote {len(formulas)} instances (n={args.n}, alpha={as_fraction(args.alpha)}, {sat} SAT) to {args.out}")
    return 0


def cmd_run(args) -> int:
    f = _instance(args)
    opt = OptimizerConfig(gradient=args.gradient, samples=args.samples)
    rng = harness.run_rng(args.seed, args.algo, f.n, f.alpha, args.p, args.index)
    cost = build_cost_diagonal(f)
    try:
        result = run(cost, args.p, args.algo, args.init, opt, rng)
    except SampleFailure as exc:
        print(f"all samples failed: {exc}", file=sys.stderr)
        return harness.EXIT_PARTIAL
    rec = result.record
    for i, e in enumerate(rec.energies):
        print(f"iter {i + 1:4d}  energy {e:.10f}")
    ground = brute_force_ground(f)
    print(
        f"best {rec.best_energy:.10f} at iter {rec.best_index + 1}/{rec.n_con} "
        f"(E_g={ground.energy}, verdict={'SAT' if decide_sat(rec.best_energy) else 'UNSAT'})"
    )
    if args.trace:
        args.trace.write_text(json.dumps(rec.to_dict(), indent=1) + "\n")
    return 0


def cmd_ofab(args) -> int:
    f = _instance(args)
    cfg = OfabConfig(p=args.p, samples=args.samples, tie_policy=args.tie_policy)
    res = opt_free_run(build_cost_diagonal(f), cfg, harness.run_rng(args.seed, "ofab", f.n, f.alpha, 0, args.index))
    for level in range(1, cfg.p + 1):
        e, bits = res.at_level(level)
        print(f"level {level:3d}  energy {e}  assignment {''.join(map(str, bits))}")
    print(f"state preparations {res.state_preparations}, layer applications {res.layer_applications}")
    if args.trace:
        args.trace.write_text(json.dumps(res.to_dict(), indent=1) + "\n")
    return 0


def cmd_sweep(args) -> int:
    cfg = _experiment(args)
    res = harness.sweep(cfg)
    for s in res.summary:
        print(
            f"{s['algo']:8s} n={s['n']:2d} alpha={s['alpha']:>5s} p={s['p']:3d}  "
            f"dE={s['residual_energy_mean']:.4f}  IF={s['infidelity_mean']:.4f}  "
            f"P_succ={s['p_succ']:.3f}  failed={s['failed']}"
        )
    algos = {s["algo"] for s in res.summary}
    if {"qaoa", "ab_qaoa"} <= algos:
        for n in cfg.n_list:
            for alpha in cfg.alphas:
                for p in cfg.levels:
                    try:
                        ratio = res.gate_cost_ratio(n, alpha, p)
                    except (KeyError, ZeroDivisionError):
                        continue
                    print(f"N_con*p^2 QAOA/ab-QAOA n={n} alpha={alpha} p={p}: {ratio:.2f}")
    print(f"wrote {', '.join(res.files.values())}")
    if res.failed:
        print(f"{res.failed} rows failed", file=sys.stderr)
        return harness.EXIT_PARTIAL
    return 0


def cmd_levels(args) -> int:
    cfg = _experiment(args)
    rows = harness.levels_study(cfg)
    groups: dict = {}
    for r in rows:
        groups.setdefault((r["algo"], r["n"], r["alpha"]), []).append(r["level"])
    for (algo, n, alpha), lv in groups.items():
        print(f"{algo:8s} n={n:2d} alpha={alpha:>5s}  mean levels {np.mean(lv):.2f}")
    return 0


def cmd_rstudy(args) -> int:
    cfg = _experiment(args)
    opt = cfg.optimizer_config()
    for n in cfg.n_list:
        for alpha in cfg.alphas:
            formulas = harness.generate_ensemble(cfg.seed, n, alpha, cfg.instances)
            for algo in cfg.algorithms:
                if algo == "ofab":
                    raise ConfigError("R study needs an optimized algorithm")
                for p in cfg.levels:
                    st = harness.r_convergence_study(formulas, args.r_grid, opt, algo, p, cfg.seed, cfg.threads)
                    print(f"{algo} n={n} alpha={alpha} p={p}")
                    for R, de, inf in zip(st.r_grid, st.residual_energy, st.infidelity):
                        print(f"  R={R:3d}  dE={de:.6f}  IF={inf:.6f}")
                    print(f"  convergent R: {st.convergent}")
    return 0


def cmd_diag(args) -> int:
    cfg = _experiment(args)
    rows = harness.diagnostics_study(cfg, args.etas, args.metrics)
    print(f"wrote {len(rows)} rows to {Path(cfg.output_dir) / 'diagnostics.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="abqaoa-sat", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate an instance ensemble")
    _add_common(p, config=False)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--alpha", required=True)
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_gen)

    for name, fn, helptext in (("run", cmd_run, "optimize one instance"), ("ofab", cmd_ofab, "optimization-free run")):
        p = sub.add_parser(name, help=helptext)
        _add_common(p, config=False)
        p.add_argument("--instance", type=Path, help="ensemble JSON from 'gen'")
        p.add_argument("--index", type=int, default=0)
        p.add_argument("--n", type=int)
        p.add_argument("--alpha")
        p.add_argument("--p", type=int, required=True)
        p.add_argument("--samples", type=int, default=10)
        p.add_argument("--trace", type=Path, help="write the full trace as JSON")
        if name == "run":
            p.add_argument("--algo", choices=("qaoa", "ab_qaoa"), default="ab_qaoa")
            p.add_argument("--init", choices=("tqa", "fourier"), default="tqa")
            p.add_argument("--gradient", choices=("fd", "exact"), default="fd")
        else:
            p.add_argument("--tie-policy", choices=("zero", "one"), default="zero")
        p.set_defaults(func=fn)

    p = sub.add_parser("sweep", help="ensemble sweep over n, alpha, p and algorithms")
    _add_common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("levels", help="levels-to-solution study")
    _add_common(p)
    p.set_defaults(func=cmd_levels)

    p = sub.add_parser("rstudy", help="convergence of the best-of-R metrics in R")
    _add_common(p)
    p.add_argument("--r-grid", type=_csv(int), default=[1, 2, 5, 10, 15, 20, 25, 30])
    p.set_defaults(func=cmd_rstudy)

    p = sub.add_parser("diag", help="per-layer diagnostics along the optimization")
    _add_common(p)
    p.add_argument("--etas", type=_csv(float), default=list(DEFAULT_ETAS))
    p.add_argument("--metrics", type=_csv(str), default=["entanglement", "participation"])
    p.set_defaults(func=cmd_diag)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.threads is not None and args.threads < 1:
        parser.error("--threads must be positive")
    if getattr(args, "metrics", None):
        bad = set(args.metrics) - set(METRICS)
        if bad:
            parser.error(f"unknown metrics {sorted(bad)}")
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return harness.EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
