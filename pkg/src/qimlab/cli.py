"""Command-line entry points.

    qimlab verify    --config cfg.json --seed 0 --out reports --format json
    qimlab kubo      --n 3 [common options]
    qimlab taylor    [common options]
    qimlab norms     [common options]
    qimlab transport [common options]

All science parameters live in the JSON config; the environment only
controls thread count (QIMLAB_THREADS) and the kernel backend
(QIMLAB_BACKEND).  Exit code 0 iff every emitted record passed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .errors import ConfigError
from .harness import RunConfig, emit_report, gen_ensemble, run_suite
from .kubo import (
    estimate_chain,
    kubo_n_point,
    kubo_oracle,
    taylor_probe,
    taylor_to_csv,
)
from .manifold import chart_transition
from .epsnorms import monotonicity_scan
from .harness import _rescaled  # shared rescaling used to build probe directions


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="path to a JSON run configuration")
    sub.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    sub.add_argument("--out", default=None, help="output directory (default: config output_dir)")
    sub.add_argument("--format", choices=("json", "csv"), default="json")


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    cfg.validate()
    if args.out:
        cfg.output_dir = args.out
    return cfg


def _emit(report, cfg: RunConfig, fmt: str) -> int:
    paths = emit_report(report, cfg.output_dir, fmt)
    failed = [r for r in report.records if not r.passed]
    for rec in report.records:
        state = "PASS" if rec.passed else "FAIL"
        print(f"{state} {rec.name} margin={rec.margin:.3e} tol={rec.tolerance:.1e}")
    print(f"report: {paths[0]} ({len(report.records)} records, {len(failed)} failed)")
    return 1 if failed else 0


def _write_artifact(cfg: RunConfig, name: str, payload) -> str:
    os.makedirs(cfg.output_dir, exist_ok=True)
    path = os.path.join(cfg.output_dir, name)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
    return path


def cmd_verify(args) -> int:
    cfg = _load_config(args)
    report = run_suite(cfg, seed=args.seed)
    return _emit(report, cfg, args.format)


def cmd_kubo(args) -> int:
    cfg = _load_config(args)
    cfg.suites = ["kubo-oracle", "estimate-chain"]
    results = []
    for inst in gen_ensemble(cfg, args.seed):
        state = inst.state(cfg.beta0)
        dirs = inst.vs[: args.n]
        res = kubo_n_point(state, dirs)
        if args.n >= 2:
            est = kubo_oracle(state, dirs, samples=args.samples, seed=args.seed)
            res = res.with_oracle(est)
        ledger = estimate_chain(state, dirs, cfg.epsilon, seed=args.seed)
        results.append({
            "instance": inst.label,
            "result": res.to_json_dict(),
            "ledger": ledger.to_json_dict(),
        })
    path = _write_artifact(cfg, f"kubo_n{args.n}.json", results)
    print(f"kubo artifacts: {path}")
    report = run_suite(cfg, seed=args.seed)
    return _emit(report, cfg, args.format)


def cmd_taylor(args) -> int:
    cfg = _load_config(args)
    cfg.suites = ["taylor-radius"]
    os.makedirs(cfg.output_dir, exist_ok=True)
    for inst in gen_ensemble(cfg, args.seed):
        state = inst.state(cfg.beta0)
        target = cfg.epsilon * (1.0 - cfg.beta0)
        v = _rescaled(inst.vs[1], inst.h0, cfg.epsilon, target)
        probe = taylor_probe(state, v, np.array([0.25, 0.5, 1.0]), max_order=6,
                             eps=cfg.epsilon)
        taylor_to_csv(probe, os.path.join(cfg.output_dir, f"taylor_{inst.label}.csv"))
    report = run_suite(cfg, seed=args.seed)
    return _emit(report, cfg, args.format)


def cmd_norms(args) -> int:
    cfg = _load_config(args)
    cfg.suites = ["lemma2-monotonicity", "lemma1-formbound", "norm-equivalence",
                  "comparability", "mean-lambda"]
    scans = []
    for inst in gen_ensemble(cfg, args.seed):
        scan = monotonicity_scan(inst.x, inst.h0)
        scans.append({"instance": inst.label, "scan": scan.to_json_dict()})
    path = _write_artifact(cfg, "norm_scans.json", scans)
    print(f"norm artifacts: {path}")
    report = run_suite(cfg, seed=args.seed)
    return _emit(report, cfg, args.format)


def cmd_transport(args) -> int:
    cfg = _load_config(args)
    cfg.suites = ["transport", "route-independence"]
    transitions = []
    for inst in gen_ensemble(cfg, args.seed):
        state = inst.state(cfg.beta0)
        xs = _rescaled(inst.x, inst.h0, cfg.epsilon, 0.4 * (1.0 - cfg.beta0))
        trans = chart_transition(state, xs, 0.2 * xs, cfg.epsilon)
        transitions.append({"instance": inst.label, **trans.to_json_dict()})
    path = _write_artifact(cfg, "transitions.json", transitions)
    print(f"transition artifacts: {path}")
    report = run_suite(cfg, seed=args.seed)
    return _emit(report, cfg, args.format)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qimlab", description=__doc__)
    subs = parser.add_subparsers(dest="command", required=True)

    p_verify = subs.add_parser("verify", help="run the configured suites")
    _add_common(p_verify)
    p_verify.set_defaults(func=cmd_verify)

    p_kubo = subs.add_parser("kubo", help="n-point values, oracles, bound ledgers")
    p_kubo.add_argument("--n", type=int, required=True, help="correlation order")
    p_kubo.add_argument("--samples", type=int, default=200_000)
    _add_common(p_kubo)
    p_kubo.set_defaults(func=cmd_kubo)

    p_taylor = subs.add_parser("taylor", help="Taylor probes with CSV output")
    _add_common(p_taylor)
    p_taylor.set_defaults(func=cmd_taylor)

    p_norms = subs.add_parser("norms", help="norm scans and equivalence checks")
    _add_common(p_norms)
    p_norms.set_defaults(func=cmd_norms)

    p_trans = subs.add_parser("transport", help="transport and route checks")
    _add_common(p_trans)
    p_trans.set_defaults(func=cmd_transport)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
