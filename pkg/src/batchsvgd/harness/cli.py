"""Command-line entry point.

Subcommands: ``run``, ``sweep``, ``covertype``, ``audit``, ``couple``, ``ksd``,
``mmd``.  Exit codes: 0 success, 2 configuration error, 3 divergence,
4 audit failure.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from ..engines import ConfigurationError, DivergenceError
from ..kernels import KernelSpec
from ..targets import DatasetFormatError, GradientAuditError, RecenterError
from .config import ConfigError, load_config

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGENCE = 3
EXIT_AUDIT = 4

AUDIT_SUITES = ("kernels", "coupling", "unbiasedness", "counts", "bounds", "all")


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage errors with the config-error exit code."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _common(p, config_required=True):
    p.add_argument("--config", required=config_required, help="experiment config (JSON)")
    p.add_argument("--seed", type=int, default=None, help="override the base seed")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--threads", type=int, default=1, help="worker processes for repetitions")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="batchsvgd", description="Batched SVGD samplers and verification suite")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    _common(sub.add_parser("run", help="run an experiment config"))
    _common(sub.add_parser("sweep", help="constant step-size grid search"))
    _common(sub.add_parser("covertype", help="logistic-regression posterior run with accuracy trace"))
    a = sub.add_parser("audit", help="run a verification suite")
    a.add_argument("suite", help=f"one of {', '.join(AUDIT_SUITES)}")
    _common(a, config_required=False)
    a.add_argument("--json", action="store_true", help="print the report as JSON")
    c = sub.add_parser("couple", help="coupling check between VP-SVGD and GB-SVGD")
    _common(c, config_required=False)
    c.add_argument("--n", type=int, default=100)
    c.add_argument("--K", type=int, default=10)
    c.add_argument("--T", type=int, default=5)
    c.add_argument("--d", type=int, default=5)
    c.add_argument("--gamma", type=float, default=0.1)
    k = sub.add_parser("ksd", help="KSD^2 of a particle CSV to a config's target")
    _common(k)
    k.add_argument("--particles", required=True, help="CSV of particles, one per row")
    k.add_argument("--estimator", choices=("vstat", "ustat"), default="vstat")
    m = sub.add_parser("mmd", help="MMD^2 between two particle CSVs")
    _common(m, config_required=False)
    m.add_argument("--a", required=True)
    m.add_argument("--b", required=True)
    m.add_argument("--kernel", default="laplace", choices=("rbf", "imq", "matern32", "laplace"))
    m.add_argument("--bandwidth", type=float, default=1.0)
    m.add_argument("--estimator", choices=("vstat", "ustat"), default="vstat")
    return p


def _load(args):
    cfg = load_config(args.config)
    return cfg.with_overrides(seed=args.seed, output_dir=args.out)


def _read_points(path):
    try:
        return np.loadtxt(path, delimiter=",", ndmin=2)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read particles from {path}: {exc}") from None


def cmd_run(args) -> int:
    from .experiments import run_experiment

    cfg = _load(args)
    bundle = run_experiment(cfg, cfg.output_dir, args.threads)
    print(f"wrote {len(bundle.records)} run(s) to {bundle.output_dir}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .experiments import run_sweep

    cfg = _load(args)
    rows, best = run_sweep(cfg, cfg.output_dir, args.threads)
    for g, s in rows:
        print(f"gamma={g:.6g}  final_metric={s:.6g}")
    print(f"best gamma: {best}")
    return EXIT_OK


def cmd_covertype(args) -> int:
    from .experiments import run_covertype

    cfg = _load(args)
    bundle = run_covertype(cfg, cfg.output_dir, args.threads)
    for r, rec in enumerate(bundle.records):
        acc = rec.extra.get("accuracy", [])
        print(f"rep {r}: final accuracy {acc[-1] if acc else float('nan'):.4f}")
    return EXIT_OK


def _print_table(rows):
    width = max(len(r[0]) for r in rows) if rows else 10
    for name, ok, detail in rows:
        print(f"{name:<{width}}  {'PASS' if ok else 'FAIL'}  {detail}")


def cmd_audit(args) -> int:
    from .audits import run_suite

    if args.suite not in AUDIT_SUITES:
        print(f"unknown suite {args.suite!r}; expected one of {', '.join(AUDIT_SUITES)}", file=sys.stderr)
        return EXIT_CONFIG
    seed = 0 if args.seed is None else args.seed
    rows = run_suite(args.suite, seed=seed)
    if args.json:
        print(json.dumps([{"check": n, "passed": ok, "detail": d} for n, ok, d in rows], indent=1))
    else:
        _print_table(rows)
    return EXIT_OK if all(ok for _, ok, _ in rows) else EXIT_AUDIT


def cmd_couple(args) -> int:
    from ..targets import gaussian_target
    from ..verification import coupling_check

    if args.config:
        from .experiments import build_kernel, build_target

        cfg = _load(args)
        target, _ = build_target(cfg)
        kernel = build_kernel(cfg)
    else:
        target = gaussian_target(np.zeros(args.d), np.ones(args.d))
        kernel = KernelSpec("rbf", 1.0)
    seed = 0 if args.seed is None else args.seed
    try:
        rep = coupling_check(args.n, args.K, args.T, target, kernel, args.gamma, seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    d = rep.to_dict()
    d.pop("permutation")
    print(json.dumps(d))
    return EXIT_OK if rep.passed else EXIT_AUDIT


def cmd_ksd(args) -> int:
    from ..discrepancy import ksd2_to_target
    from .experiments import build_target

    cfg = _load(args)
    target, _ = build_target(cfg)
    k = cfg.metrics.get("ksd_kernel") or {"family": "rbf", "bandwidth": 1.0}
    X = _read_points(args.particles)
    if X.shape[1] != target.d:
        raise ConfigError(f"particles have dimension {X.shape[1]}, target has {target.d}")
    rep = ksd2_to_target(X, target, KernelSpec(k["family"], k["bandwidth"]), args.estimator)
    print(json.dumps(rep.to_dict()))
    return EXIT_OK


def cmd_mmd(args) -> int:
    from ..discrepancy import mmd2

    A = _read_points(args.a)
    B = _read_points(args.b)
    if A.shape[1] != B.shape[1]:
        raise ConfigError("particle files have different dimensions")
    rep = mmd2(A, B, KernelSpec(args.kernel, args.bandwidth), args.estimator)
    print(json.dumps(rep.to_dict()))
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "sweep": cmd_sweep,
    "covertype": cmd_covertype,
    "audit": cmd_audit,
    "couple": cmd_couple,
    "ksd": cmd_ksd,
    "mmd": cmd_mmd,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ConfigurationError, DatasetFormatError, GradientAuditError, RecenterError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"divergence: {exc} (step {exc.step}, particle {exc.particle})", file=sys.stderr)
        return EXIT_DIVERGENCE
    except FileNotFoundError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
