#!/usr/bin/env python3
"""
Measurement-error correction toolkit - batch command line
Fit corrected regressions, simulate catalog models and run rate sweeps

Usage:
    python eiv_cli.py fit data.csv --config fit.json --out-dir results/
    python eiv_cli.py ncme-fit data.csv --marginal marginal.csv --out estimates.csv
    python eiv_cli.py simulate --spec gaussian_symmetric --n 10000 --seed 1 --out data.csv
    python eiv_cli.py sweep tau --spec gaussian_symmetric --out-dir sweep/
    python eiv_cli.py catalog
"""
import argparse
import logging
import os
import sys
from dataclasses import asdict
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

sys.path.insert(0, os.path.abspath(os.path.dirname(__file__)))

from config.config import EVAL_QUANTILES, MC_REPS, MC_SEED, get_logger
from config.dgp_catalog import SPEC_CATALOG
from data.loader import load_config, load_marginal_csv, load_sample_csv, write_csv, write_json
from data.validator import ensure_valid, validate_config, validate_marginal, validate_sample
from utils.constants import *
from utils.errors import ConfigError, EivError, InputError, MethodError
from utils.helpers import config_hash, format_number
from analysis.ncme import ExternalMarginal, dist_fit, locate_ncme, rho_ncme_quantile
from analysis.oracle import DgpSpec, QuadratureConfig, Sample, sample
from analysis.pipeline import EstimatorSettings, empirical_cdf_at, estimate
from analysis.simlab import McConfig, TauRule, n_sweep, tau_sweep

logger = get_logger('cli')

DEFAULT_TAUS = [0.05, 0.1, 0.2, 0.4]
DEFAULT_NS = [1000, 4000, 16000]
DEFAULT_MC_N = 4000

CURVES_FILE = 'curves.csv'
DIAGNOSTICS_FILE = 'diagnostics.json'
SWEEP_FILE = 'sweep.csv'
SUMMARY_FILE = 'summary.json'
LEVEL_COLUMN = 'level'

OUTPUT_COLUMNS = """
Output columns:
  curves.csv     x, q_pooled, q_pooled_d1, q_pooled_d2, q_<label>..., s_<label>...,
                 rho_hat, rho_cme, v_tilde, v_tilde_d1, denom, rank_pass, mask_reason
  ncme-fit       varkappa | level, level, target_x, estimate, valid, mask_reason
  simulate       y, x, z [, xstar, varkappa with --with-truth]
  sweep.csv      axis_value, estimator, error (tau); axis_value, tau, estimator,
                 eval_x, rmse, mean_bias, error (n)
Exit codes: 0 ok, 1 input error, 2 method failure, 3 internal error
"""


class _Parser(argparse.ArgumentParser):
    """Argument errors are input errors (exit 1)."""

    def error(self, message):
        raise InputError(f"{self.prog}: {message}")


def print_banner(title: str):
    print("=" * 60)
    print(title)
    print("=" * 60)


def _parse_floats(text: Optional[str]) -> Optional[List[float]]:
    if text is None:
        return None
    try:
        return [float(v) for v in text.split(',') if v.strip()]
    except ValueError:
        raise InputError(f"Expected a comma-separated list of numbers, got {text!r}")


def _checked_config(path: Optional[str], command: str) -> Dict[str, Any]:
    config = load_config(path)
    ensure_valid(validate_config(config, command))
    return config


def _load_checked_sample(path: str) -> Sample:
    df = load_sample_csv(path)
    result = validate_sample(df)
    ensure_valid(result)
    for warning in result['warnings']:
        print(f"  Warning: {warning}")
    return Sample(df[Y].to_numpy(), df[X].to_numpy(), df[Z].to_numpy())


def _resolve_spec(spec_ref: Any, overrides: Optional[Dict[str, Any]] = None) -> DgpSpec:
    if spec_ref is None:
        raise ConfigError(["a data-generating process is required (--spec or config 'spec')"])
    if isinstance(spec_ref, str):
        return DgpSpec.from_dict({'spec_id': spec_ref, 'overrides': overrides or {}})
    doc = dict(spec_ref)
    doc.update(overrides or {})
    return DgpSpec.from_dict(doc)


# ============================================
# COMMANDS
# ============================================
def cmd_fit(args) -> int:
    """Corrected regression curves and rank diagnostics for one sample."""
    config = _checked_config(args.config, 'fit')
    settings = EstimatorSettings.from_config(config)

    print_banner("FIT: BIAS-CORRECTED REGRESSION")
    data = _load_checked_sample(args.data)
    est = estimate(data, settings)

    os.makedirs(args.out_dir, exist_ok=True)
    table = est.to_frame()
    write_csv(table, os.path.join(args.out_dir, CURVES_FILE))

    effective = {'command': 'fit', 'settings': settings.to_dict()}
    reasons = pd.Series(est.corrected.reason).value_counts().sort_index()
    diagnostics = {
        'command': 'fit',
        'config': effective,
        'config_hash': config_hash(effective),
        'n': data.n,
        'labels': est.curves.labels,
        'z_pair': list(est.curves.z_pair),
        'bandwidths': est.bandwidths,
        'grid': {'lo': est.grid.points[0], 'hi': est.grid.points[-1], 'size': len(est.grid)},
        'n_valid': int(est.corrected.mask.sum()),
        'mask_reasons': {str(k): int(v) for k, v in reasons.items()},
        'cme_anchor': est.cme.anchor,
    }
    write_json(diagnostics, os.path.join(args.out_dir, DIAGNOSTICS_FILE))

    print(f"  Observations: {data.n}")
    print(f"  z pair: {est.curves.z_pair}")
    print(f"  Valid grid points: {diagnostics['n_valid']}/{len(est.grid)}")
    print(f"  Output: {os.path.join(args.out_dir, CURVES_FILE)}")
    return EXIT_OK


def cmd_ncme_fit(args) -> int:
    """Point estimates on the latent covariate scale (marginal or quantile route)."""
    config = _checked_config(args.config, 'ncme-fit')
    settings = EstimatorSettings.from_config(config)
    levels = _parse_floats(args.quantiles)
    if args.marginal is None and levels is None:
        raise ConfigError(["ncme-fit needs --marginal or --quantiles"])

    print_banner("NCME-FIT: REGRESSION ON THE LATENT COVARIATE")
    data = _load_checked_sample(args.data)
    est = estimate(data, settings)
    fit = dist_fit(est.curves.pooled.f, est.skedastic,
                   cdf_at_start=empirical_cdf_at(data.x, est.grid.points[0]),
                   floor_fraction=settings.density_floor)

    rows = []
    if levels is not None:
        for level in levels:
            rows.append(_ncme_row(LEVEL_COLUMN, level, lambda lv=level: _quantile_route(lv, fit, est)))
    else:
        table = load_marginal_csv(args.marginal)
        ensure_valid(validate_marginal(table))
        ext = ExternalMarginal.from_table(table[VARKAPPA], table[CDF])
        points = config.get('varkappa') or list(np.interp(EVAL_QUANTILES, table[CDF], table[VARKAPPA]))
        for k in points:
            rows.append(_ncme_row(VARKAPPA, k, lambda kk=k: locate_ncme(kk, ext, fit, est.corrected)))

    out = pd.DataFrame(rows)
    write_csv(out, args.out)
    print(f"  Estimates: {len(out)} ({int(out['valid'].sum())} valid)")
    print(f"  Output: {args.out}")
    return EXIT_OK


def _quantile_route(level, fit, est):
    value = rho_ncme_quantile(level, fit, est.corrected)
    return value, level, float(fit.quantile_corr(level)[0])


def _ncme_row(key: str, point: float, evaluate) -> Dict[str, Any]:
    row = {key: float(point)}
    try:
        value, level, target = evaluate()
        row.update({LEVEL_COLUMN: level, 'target_x': target, 'estimate': value,
                    'valid': True, MASK_REASON: REASON_OK})
    except (MethodError, InputError) as exc:
        logger.info("ncme-fit: point %s masked (%s)", point, exc)
        reason = 'masked_target' if isinstance(exc, MethodError) else 'out_of_range'
        row.update({LEVEL_COLUMN: point if key == LEVEL_COLUMN else np.nan, 'target_x': np.nan,
                    'estimate': np.nan, 'valid': False, MASK_REASON: reason})
    return row


def cmd_simulate(args) -> int:
    """Draw a sample from a catalog or custom data-generating process."""
    config = _checked_config(args.config, 'simulate')
    overrides = dict(config.get('overrides') or {})
    if args.tau is not None:
        overrides['tau'] = args.tau
    spec = _resolve_spec(args.spec or config.get('spec'), overrides)

    data = sample(spec, args.n, args.seed)
    write_csv(data.to_frame(with_truth=args.with_truth), args.out)

    print_banner("SIMULATE")
    print(f"  n = {args.n}, seed = {args.seed}, tau = {spec.tau}")
    print(f"  Output: {args.out}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    """tau or n sweep with slope fits and acceptance checks."""
    config = _checked_config(args.config, 'sweep')
    spec = _resolve_spec(args.spec or config.get('spec'), config.get('overrides'))
    settings = EstimatorSettings.from_config(config.get('estimator'))
    qc = QuadratureConfig(**(config.get('quadrature') or {}))
    values = _parse_floats(args.values)
    eval_points = config.get('eval_points')
    mode = args.mode or config.get('mode') or ('population' if args.axis == 'tau' else 'mc')
    seed = args.seed if args.seed is not None else MC_SEED

    mc = McConfig(spec=spec, n=int(config.get('n', DEFAULT_MC_N)), reps=int(config.get('reps', MC_REPS)),
                  seed=seed, settings=settings,
                  eval_points=None if eval_points is None else tuple(eval_points))

    print_banner(f"SWEEP: {args.axis.upper()} ({mode})")
    if args.axis == 'tau':
        taus = values or config.get('taus') or DEFAULT_TAUS
        report = tau_sweep(spec, taus, mode=mode, cfg=mc, qc=qc, eval_points=eval_points, settings=settings)
    else:
        if mode != 'mc':
            raise ConfigError(["n sweeps run in mc mode only"])
        ns = [int(v) for v in (values or config.get('ns') or DEFAULT_NS)]
        rule = TauRule(**(config.get('tau_rule') or {}))
        report = n_sweep(spec, ns, rule, mc)

    effective = {
        'command': 'sweep', 'axis': args.axis, 'mode': mode, 'values': list(report.values),
        'spec': spec.to_dict(), 'estimator': settings.to_dict(), 'quadrature': asdict(qc),
        'n': mc.n, 'reps': mc.reps, 'seed': seed, 'eval_points': eval_points,
        'tau_rule': report.extra.get('tau_rule'),
    }
    summary = {
        'axis': args.axis,
        'mode': mode,
        'values': list(report.values),
        'order': report.order,
        'slopes': dict(report.slopes),
        'checks': report.checks(),
        'extra': report.extra,
        'config': effective,
        'config_hash': config_hash(effective),
    }

    os.makedirs(args.out_dir, exist_ok=True)
    report.to_csv(os.path.join(args.out_dir, SWEEP_FILE))
    write_json(summary, os.path.join(args.out_dir, SUMMARY_FILE))

    for name, fit in report.slopes.items():
        slope = None if fit is None else fit[SLOPE]
        print(f"  {name:>10} slope: {format_number(slope)}")
    for name, check in summary['checks'].items():
        print(f"  {name}: {'PASS' if check['pass'] else 'FAIL'}")
    return EXIT_OK


def cmd_catalog(args) -> int:
    """List catalog data-generating processes."""
    print_banner("CATALOG")
    for spec_id in sorted(SPEC_CATALOG):
        print(f"  {spec_id:<26} {SPEC_CATALOG[spec_id]['description']}")
    return EXIT_OK


# ============================================
# ENTRY POINT
# ============================================
def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog='eiv_cli.py',
        description='Small measurement-error bias correction for nonparametric regression',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=OUTPUT_COLUMNS,
    )
    parser.add_argument('--verbose', action='store_true', help='Log progress at INFO level')
    sub = parser.add_subparsers(dest='command', parser_class=_Parser)

    p = sub.add_parser('fit', help='Corrected regression curves from a y,x,z CSV')
    p.add_argument('data', help='CSV with header columns y,x,z')
    p.add_argument('--config', help='JSON estimator config')
    p.add_argument('--out-dir', required=True, help='Directory for curves.csv and diagnostics.json')
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser('ncme-fit', help='Estimates on the latent covariate scale')
    p.add_argument('data', help='CSV with header columns y,x,z')
    p.add_argument('--marginal', help='CSV with columns varkappa,cdf (strictly increasing)')
    p.add_argument('--quantiles', help='Comma-separated quantile levels in (0, 1)')
    p.add_argument('--config', help='JSON estimator config (optional varkappa list)')
    p.add_argument('--out', required=True, help='Output CSV')
    p.set_defaults(func=cmd_ncme_fit)

    p = sub.add_parser('simulate', help='Draw a sample from a data-generating process')
    p.add_argument('--spec', help='Catalog spec id')
    p.add_argument('--config', help='JSON with spec and overrides')
    p.add_argument('--tau', type=float, help='Override the measurement-error scale')
    p.add_argument('--n', type=int, required=True, help='Sample size')
    p.add_argument('--seed', type=int, required=True, help='Random seed')
    p.add_argument('--with-truth', action='store_true', help='Include xstar (and varkappa) columns')
    p.add_argument('--out', required=True, help='Output CSV')
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser('sweep', help='tau or n sweep with log-log slopes')
    p.add_argument('axis', choices=['tau', 'n'])
    p.add_argument('--spec', help='Catalog spec id')
    p.add_argument('--config', help='JSON sweep config')
    p.add_argument('--mode', choices=['population', 'mc'])
    p.add_argument('--values', help='Comma-separated axis values')
    p.add_argument('--seed', type=int, help='Monte Carlo seed')
    p.add_argument('--out-dir', required=True, help='Directory for sweep.csv and summary.json')
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser('catalog', help='List catalog spec ids')
    p.set_defaults(func=cmd_catalog)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run one command and return its exit code."""
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise InputError("A command is required: fit, ncme-fit, simulate, sweep or catalog")
        if args.verbose:
            logging.getLogger('eiv').setLevel(logging.INFO)
        return args.func(args)
    except EivError as exc:
        print(f"Error: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception as exc:
        logger.exception("Unexpected error")
        print(f"Internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        print("\n\nOperation cancelled by user.")
        sys.exit(130)
