#!/usr/bin/env python3
"""Command-line entry point: tile generation, suite runs, stopping times and reports.

    python helicoid.py run --suite SPARSE --config scripts/data/default_config.json
    python helicoid.py report --format csv

Exit codes: 0 when every check passed, 1 when a suite assertion failed, 2 on configuration
or usage errors.
"""
from __future__ import annotations
import argparse
import json
import logging
import sys
from typing import List, Optional

from grid import GridSpec
from harness import (DEFAULT_CONFIG, SUITES, CheckFailed, ConfigError, ExperimentConfig, SuiteContext, TrialReport,
                     load_config, random_signal, run_suite, to_jsonable)
from sizes import ssize
from stopping import SparseBuildError, StoppingInvariantError, sst, verify_sparse, vvst
from tiles import family_to_json, gen_multitile_family, gen_rank1_family

log = logging.getLogger('helicoid')

DEFAULT_OUT = 'artifacts'


def _config(args: argparse.Namespace) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig.from_dict(dict(DEFAULT_CONFIG))
    changes = {}
    for key in ('suite', 'trials', 'seed', 'j'):
        value = getattr(args, key, None)
        if value is not None:
            changes[key] = value
    return cfg.with_overrides(**changes) if changes else cfg


def cmd_gen_tiles(args: argparse.Namespace) -> int:
    g = GridSpec(args.j)
    top = g.j_levels - (3 if args.multi else 2)
    scales = args.scales if args.scales is not None else list(range(min(3, top) + 1))
    fam = gen_multitile_family(g, scales) if args.multi else gen_rank1_family(g, scales)
    doc = {'j': g.j_levels, 'kind': 'multi' if args.multi else 'rank1', 'tiles': family_to_json(fam)}
    if args.out:
        with open(args.out, 'w', encoding='utf-8') as fh:
            json.dump(doc, fh, indent=2, default=to_jsonable)
        print(f'Saved {len(fam)} tiles to {args.out}')
    else:
        print(json.dumps(doc, default=to_jsonable))
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _config(args)
    log.debug('running %s with %s', cfg.suite, cfg.to_dict())
    report = run_suite(cfg, threads=args.threads)
    path = report.write(args.out)
    summary = report.summary()
    print(f"{summary['suite']}: {summary['rows']} rows over {summary['trials']} trials, "
          f"max ratio {summary['max_ratio']:.6g}, median {summary['median_ratio']:.6g}")
    print(f'Saved results to {path}')
    return 0


def _trial_signals(ctx: SuiteContext, trial: int, count: int) -> List:
    rng = ctx.trial_rng(trial)
    return [random_signal(ctx.grid, rng) for _ in range(count)]


def cmd_sparse(args: argparse.Namespace) -> int:
    ctx = SuiteContext.from_config(_config(args))
    f, g, h = _trial_signals(ctx, args.trial, 3)
    try:
        S = sst(ctx.family, f, g, h, ctx.stopping())
    except SparseBuildError as exc:
        raise CheckFailed(str(exc)) from exc
    cert = verify_sparse(S)
    print(json.dumps({'family': S.to_json(), 'certificate': cert.to_json(), 'sparse_form': S.sparse_form()},
                     default=to_jsonable))
    return 0 if cert.ok else 1


def cmd_vvst(args: argparse.Namespace) -> int:
    ctx = SuiteContext.from_config(_config(args))
    (f,) = _trial_signals(ctx, args.trial, 1)
    try:
        gens = vvst(ctx.family, f, ssize(ctx.family, f, 1.0, ctx.cutoff), ctx.stopping())
    except StoppingInvariantError as exc:
        raise CheckFailed(str(exc)) from exc
    print(json.dumps(gens.to_json(), default=to_jsonable))
    return 0


def cmd_verify(args: argparse.Namespace) -> int:
    cfg = _config(args)
    ctx = SuiteContext.from_config(cfg)
    failures = 0
    for trial in range(cfg.trials):
        f, g, h = _trial_signals(ctx, trial, 3)
        try:
            cert = verify_sparse(sst(ctx.family, f, g, h, ctx.stopping()))
        except SparseBuildError as exc:
            print(f'trial {trial}: build failed ({exc})')
            failures += 1
            continue
        print(f'trial {trial}: ok={cert.ok} eta={cert.eta} carleson={cert.carleson_constant:.6g}'
              + (f' violation={cert.violation}' if cert.violation else ''))
        failures += not cert.ok
    if failures:
        raise CheckFailed(f'{failures} of {cfg.trials} sparse families failed verification')
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    report = TrialReport.load(args.out)
    if args.format == 'csv':
        sys.stdout.write(report.to_csv())
    else:
        sys.stdout.write(report.to_json() + '\n')
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='helicoid',
                                     description='Time-frequency laboratory: tiles, sizes, stopping times and suites')
    parser.add_argument('--log-level', default='WARNING', choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'])
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('gen-tiles', help='write a tile family as JSON')
    p.add_argument('--j', type=int, default=5)
    p.add_argument('--scales', type=int, nargs='+')
    p.add_argument('--multi', action='store_true', help='multi-tiles instead of rank-1 tri-tiles')
    p.add_argument('--out')
    p.set_defaults(func=cmd_gen_tiles)

    def with_config(p: argparse.ArgumentParser) -> None:
        p.add_argument('--config', help='JSON experiment config (default: built-in)')
        p.add_argument('--trials', type=int)
        p.add_argument('--seed', type=int)
        p.add_argument('--j', type=int)

    p = sub.add_parser('run', help='run one suite and save its report')
    p.add_argument('--suite', choices=SUITES)
    with_config(p)
    p.add_argument('--threads', type=int)
    p.add_argument('--out', default=DEFAULT_OUT)
    p.set_defaults(func=cmd_run)

    for name, func, text in (('sparse', cmd_sparse, 'build the sparse family of one trial'),
                             ('vvst', cmd_vvst, 'run the vector-valued stopping time on one trial')):
        p = sub.add_parser(name, help=text)
        with_config(p)
        p.add_argument('--trial', type=int, default=0)
        p.set_defaults(func=func)

    p = sub.add_parser('verify', help='verify the sparse family of every trial')
    with_config(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser('report', help='print the last saved run')
    p.add_argument('--format', choices=['csv', 'json'], default='csv')
    p.add_argument('--out', default=DEFAULT_OUT)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=getattr(logging, args.log_level), format='%(levelname)s %(name)s: %(message)s')
    try:
        return args.func(args)
    except CheckFailed as exc:
        print(f'check failed: {exc}', file=sys.stderr)
        return 1
    except ValueError as exc:
        kind = 'config error' if isinstance(exc, ConfigError) else 'error'
        print(f'{kind}: {exc}', file=sys.stderr)
        return 2


if __name__ == '__main__':
    sys.exit(main())
