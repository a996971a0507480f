"""
The :mod:`qscan.console` module provides a command line interface for using qscan.
"""

# Copyright 2024 qscan developers

import sys
from argparse import ArgumentParser, Namespace

from pydantic import ValidationError

from qscan.errors import QScanError
from qscan.pipeline import export_experiment, setup_logger
from qscan.scenario import create_scenario
from qscan.simulate import (consistency_experiment, create_consistency_config, create_fwer_config,
                            create_power_config, fwer_experiment, power_experiment)
from qscan.threshold import asymptotic_rate, theoretical_bound

DEFAULT_L_MIN = 40
DEFAULT_L_MAX = 200
DEFAULT_ALPHA = 0.05

_RUN_ONLY = ('command', 'func', 'config')


def _add_window_arguments(group, with_defaults: bool = False):
    group.add_argument(
        '--lmin', dest='l_min', type=int, default=DEFAULT_L_MIN if with_defaults else None,
        help=f"Minimum window length in variants (default={DEFAULT_L_MIN})"
    )

    group.add_argument(
        '--lmax', dest='l_max', type=int, default=DEFAULT_L_MAX if with_defaults else None,
        help=f"Maximum window length in variants (default={DEFAULT_L_MAX})"
    )

    group.add_argument(
        '--alpha', type=float, default=DEFAULT_ALPHA if with_defaults else None,
        help=f"Family-wise error level (default={DEFAULT_ALPHA})"
    )


def _add_data_arguments(parser: ArgumentParser):
    required = parser.add_argument_group('Required arguments (either on command line or via config file)')
    optional = parser.add_argument_group('Optional arguments')
    advanced_optional = parser.add_argument_group('Advanced optional arguments')

    required.add_argument(
        '--geno', type=str,
        help="Genotype file: tab-separated dosage matrix or minimal VCF (plain or gzip)"
    )

    required.add_argument(
        '--pheno', type=str,
        help="Tab-separated phenotype and covariate table; first column is the sample id"
    )

    required.add_argument(
        '--pheno-col', dest='pheno_col', type=str,
        help="Phenotype column of the --pheno table"
    )

    optional.add_argument(
        '--config', type=str, default=None,
        help="""Configuration file (TOML format) containing input parameter arguments and values.
        Input parameters set via command line arguments will override parameters values set via the config file."""
    )

    optional.add_argument(
        '--format', dest='geno_format', type=str, choices=['tsv', 'vcf'], default=None,
        help="Genotype file format (default=tsv)"
    )

    optional.add_argument(
        '--covar-cols', dest='covar_cols', type=str, default=None,
        help="Comma-separated covariate columns of the --pheno table. An intercept is always added."
    )

    optional.add_argument(
        '--family', type=str, choices=['gaussian', 'binomial'], default=None,
        help="Phenotype family: gaussian (continuous) or binomial (case-control) (default=gaussian)"
    )

    _add_window_arguments(optional)

    optional.add_argument(
        '--method', type=str, choices=['qscan', 'mscan'], default=None,
        help="Scan statistic: qscan (quadratic) or mscan (mean) (default=qscan)"
    )

    optional.add_argument(
        '--mc-reps', dest='mc_reps', type=int, default=None,
        help="Monte Carlo replicates for the threshold (default=2000)"
    )

    optional.add_argument(
        '--maf-max', dest='maf_max', type=float, default=None,
        help="Drop variants with minor allele frequency above this (default=0.05)"
    )

    optional.add_argument(
        '--mac-min', dest='mac_min', type=int, default=None,
        help="Drop variants with minor allele count below this (default=3)"
    )

    optional.add_argument(
        '--seed', type=int, default=None,
        help="Master seed for all random draws (default=0)"
    )

    optional.add_argument(
        '--threads', type=int, default=None,
        help="Worker threads; results do not depend on it (default=1)"
    )

    optional.add_argument(
        '--out-prefix', dest='out_prefix', type=str, default=None,
        help="Output files are written as <out-prefix>.<kind>"
    )

    optional.add_argument(
        '--scenario-name', dest='scenario_name', type=str, default=None,
        help="Used in log messages and plot titles"
    )

    optional.add_argument(
        '-v', '--verbosity', type=int, choices=[0, 1, 2], default=None,
        help="Verbosity level: 0=WARNING (default), 1=INFO, 2=DEBUG"
    )

    advanced_optional.add_argument(
        '--mc-mode', dest='mc_mode', type=str, choices=['genotype_projection', 'banded_cholesky'], default=None,
        help="Pseudo-score generator for the threshold (default=genotype_projection)"
    )

    advanced_optional.add_argument(
        '--bandwidth', type=int, default=None,
        help="Covariance band beyond the diagonal; at least lmax - 1 (default=lmax - 1)"
    )

    advanced_optional.add_argument(
        '--exact', action='store_true', default=None,
        help="Compensated summation for every window moment. Slow."
    )


def _add_experiment_arguments(parser: ArgumentParser, plot: bool = False):
    optional = parser.add_argument_group('Optional arguments')

    optional.add_argument(
        '--config', type=str, default=None,
        help="Experiment configuration file (TOML format)"
    )

    optional.add_argument(
        '--seed', type=int, default=None,
        help="Master seed, overrides the config file"
    )

    optional.add_argument(
        '--reps', dest='n_reps', type=int, default=None,
        help="Experiment replicates, overrides the config file"
    )

    optional.add_argument(
        '--mc-reps', dest='mc_reps', type=int, default=None,
        help="Monte Carlo threshold replicates per experiment replicate, overrides the config file"
    )

    optional.add_argument(
        '--threads', type=int, default=1,
        help="Worker threads; results do not depend on it (default=1)"
    )

    optional.add_argument(
        '--out-prefix', dest='out_prefix', type=str, default=None,
        help="Write <out-prefix>.summary.tsv and <out-prefix>.replicates.tsv"
    )

    if plot:
        optional.add_argument(
            '--plot', dest='make_plot', action='store_true',
            help="Also write <out-prefix>.power.png"
        )

    optional.add_argument(
        '-v', '--verbosity', type=int, choices=[0, 1, 2], default=0,
        help="Verbosity level: 0=WARNING (default), 1=INFO, 2=DEBUG"
    )


def process_command_line(argv=None):
    """
    Parse command line arguments

    Parameters
    ----------
    argv : list of arguments, or `None` for ``sys.argv[1:]``.

    Returns
    ----------
    Namespace representing the argument list.

    """

    # Create the parser
    parser = ArgumentParser(prog='qscan',
                            description='Scan statistics for detecting signal regions in genome-wide association data')
    subparsers = parser.add_subparsers(dest='command', required=True)

    scan = subparsers.add_parser('scan', help='Fit, threshold, scan and detect signal regions')
    _add_data_arguments(scan)
    scan.add_argument(
        '--emit-windows', dest='emit_windows', action='store_true', default=None,
        help="Also write every scanned window to <out-prefix>.windows.tsv.gz"
    )
    scan.add_argument(
        '--plot', dest='make_plot', action='store_true', default=None,
        help="Also write the scan track to <out-prefix>.scan.png"
    )
    scan.set_defaults(func=_run_scan)

    threshold = subparsers.add_parser('threshold', help='Compute only the Monte Carlo threshold')
    _add_data_arguments(threshold)
    threshold.set_defaults(func=_run_threshold)

    fwer = subparsers.add_parser('simulate-fwer', help='Family-wise error rate simulation under the global null')
    _add_experiment_arguments(fwer)
    fwer.set_defaults(func=_run_experiment, experiment=(create_fwer_config, fwer_experiment))

    power = subparsers.add_parser('simulate-power', help='Power simulation with planted signal regions')
    _add_experiment_arguments(power, plot=True)
    power.set_defaults(func=_run_experiment, experiment=(create_power_config, power_experiment))

    consistency = subparsers.add_parser('simulate-consistency',
                                        help='Detection accuracy for one strong planted region')
    _add_experiment_arguments(consistency)
    consistency.set_defaults(func=_run_experiment, experiment=(create_consistency_config, consistency_experiment))

    bound = subparsers.add_parser('bound', help='Print the large-p threshold bound and the asymptotic rate')
    bound_required = bound.add_argument_group('Required arguments')
    bound_required.add_argument(
        '--p', type=int, required=True,
        help="Number of variants"
    )
    _add_window_arguments(bound.add_argument_group('Optional arguments'), with_defaults=True)
    bound.set_defaults(func=_run_bound)

    # If argv == None, then ``parse_args`` will use ``sys.argv[1:]``.
    args = parser.parse_args(argv)

    if args.command in ('scan', 'threshold', 'bound'):
        _check_window_range(parser, args)

    return args


def _check_window_range(parser: ArgumentParser, args: Namespace):
    if args.l_min is None and args.l_max is None:
        return
    # With a config file a single flag is checked once the config has been merged
    if getattr(args, 'config', None) is not None and (args.l_min is None or args.l_max is None):
        return
    l_min = args.l_min if args.l_min is not None else DEFAULT_L_MIN
    l_max = args.l_max if args.l_max is not None else DEFAULT_L_MAX
    if l_min > l_max:
        parser.error(f'--lmin ({l_min}) must not exceed --lmax ({l_max})')


def _scenario_params(args: Namespace):
    return {key: val for key, val in vars(args).items() if key not in _RUN_ONLY}


def _run_scan(args: Namespace) -> int:
    scenario = create_scenario(config_path=args.config, **_scenario_params(args))
    report = scenario.run()
    if report.rejected:
        print(report.to_frame().to_string(index=False))
    else:
        print(f'No signal region detected (threshold {report.threshold:.6f})')
    return 0


def _run_threshold(args: Namespace) -> int:
    scenario = create_scenario(config_path=args.config, **_scenario_params(args))
    result = scenario.run_threshold()
    print(f'{result.h:.10g}')
    return 0


def _run_experiment(args: Namespace) -> int:
    setup_logger(args.verbosity)
    create_config, experiment = args.experiment
    cfg = create_config(config_path=args.config, seed=args.seed, n_reps=args.n_reps, mc_reps=args.mc_reps)
    summary, replicates = experiment(cfg, n_jobs=args.threads)
    if args.out_prefix is not None:
        export_experiment(summary, replicates, args.out_prefix, make_plot=getattr(args, 'make_plot', False))
    print(summary.to_string(index=False))
    return 0


def _run_bound(args: Namespace) -> int:
    print(f'theoretical_bound\t{theoretical_bound(args.p, args.l_min, args.l_max, args.alpha):.10g}')
    print(f'asymptotic_rate\t{asymptotic_rate(args.p):.10g}')
    return 0


def main(argv=None):
    """
    :param argv: Input arguments
    :return: Exit code, 0 on success and 1 on error
    """

    # By including ``argv=None`` as input to ``main``, our program can be
    # imported and ``main`` called with arguments. This will be useful for
    # testing via pytest.
    args = process_command_line(argv)

    try:
        return args.func(args)
    except (QScanError, ValidationError, ValueError, OSError) as error:
        message = ' '.join(str(error).split())
        print(f'error: {type(error).__name__}: {message}', file=sys.stderr)
        return 1


if __name__ == '__main__':
    sys.exit(main())
