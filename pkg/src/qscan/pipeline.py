"""
The :mod:`qscan.pipeline` module runs a scan scenario end to end: fit, scores, threshold, scan,
detection and exports.
"""

# Copyright 2024 qscan developers

import json
import logging
from pathlib import Path
from typing import Dict, Optional

import pandas as pd

from qscan.io import write_qmax, write_regions_tsv, write_report_json, write_table, write_windows_tsv
from qscan.plotting import make_power_plot, make_scan_plot
from qscan.qslib import ScanTimer, VerbosityEnum
from qscan.threshold import ThresholdResult, quantile_index

# This should inherit level from root logger
logger = logging.getLogger(__name__)


QUIET_LIBRARIES = ('matplotlib', 'PIL', 'joblib')


def setup_logger(verbosity: int) -> int:
    """
    Route qscan log records to stderr at the level chosen by `verbosity`.

    Plotting and parallel backends stay at INFO or above, even at DEBUG verbosity.

    Returns
    -------
    int, the logging level applied
    """
    level = VerbosityEnum.clamp(verbosity).log_level
    root_logger = logging.getLogger()
    root_logger.handlers.clear()  # Needed to prevent dup messages when module imported
    logger_handler = logging.StreamHandler()
    logger_handler.setFormatter(logging.Formatter('%(asctime)s - %(name)s - %(levelname)s - %(message)s'))
    logger_handler.setLevel(level)
    root_logger.setLevel(level)
    root_logger.addHandler(logger_handler)

    for name in QUIET_LIBRARIES:
        logging.getLogger(name).setLevel(max(level, logging.INFO))
    return level


def output_path(out_prefix: str | Path, kind: str) -> Path:
    """`<out_prefix>.<kind>`, e.g. output_path('run1', 'regions.tsv') -> run1.regions.tsv"""
    prefix = Path(out_prefix)
    return prefix.with_name(f'{prefix.name}.{kind}')


def _threshold_doc(result: ThresholdResult) -> Dict:
    doc = result.model_dump(mode='json', exclude={'qmax_samples'})
    doc['quantile_index'] = quantile_index(result.n_reps, result.alpha)
    return doc


def _prepare_threshold(scenario):
    with ScanTimer() as t:
        scenario.load_data()
    logger.info(f'Data loaded ({t})')

    with ScanTimer() as t:
        scenario.fit_null()
    logger.info(f'Null model fitted in {scenario.null_model.n_iter} iterations ({t})')

    with ScanTimer() as t:
        scenario.compute_scores()
    logger.info(f'Scores for {scenario.score_set.p} variants with bandwidth {scenario.score_set.bandwidth} '
                f'computed ({t})')

    with ScanTimer() as t:
        scenario.compute_threshold()
    logger.info(f'Threshold from {scenario.mc_reps} replicates computed ({t})')


def compute_scan(scenario):
    """
    Fit the null model, compute scores and threshold, scan and detect regions.

    Parameters
    ----------
    scenario : Scenario

    Returns
    -------
    ScanReport, also stored on the scenario together with every intermediate result
    """
    logger.info(f'Starting scenario {scenario.scenario_name}')
    _prepare_threshold(scenario)

    with ScanTimer() as t:
        scenario.scan()
    logger.info(f'Scan and detection finished ({t})')
    return scenario.report


def run_scan(scenario):
    """
    Compute the scan and write the requested outputs.

    Parameters
    ----------
    scenario : Scenario

    Returns
    -------
    ScanReport
    """
    setup_logger(scenario.verbosity)

    report = compute_scan(scenario)

    if scenario.out_prefix is not None:
        with ScanTimer() as t:
            export_scan_results(scenario, scenario.out_prefix)
        logger.info(f'Results exported with prefix {scenario.out_prefix} ({t})')

    return report


def run_threshold(scenario):
    """
    Compute only the Monte Carlo threshold and write it with its scan maxima.

    Parameters
    ----------
    scenario : Scenario

    Returns
    -------
    ThresholdResult
    """
    setup_logger(scenario.verbosity)
    logger.info(f'Starting threshold for scenario {scenario.scenario_name}')
    _prepare_threshold(scenario)

    if scenario.out_prefix is not None:
        export_threshold(scenario.threshold_result, scenario.out_prefix,
                         extra={'config': scenario.config_echo(), 'n_variants': scenario.score_set.p})
    return scenario.threshold_result


def export_scan_results(scenario, out_prefix: str | Path) -> Dict[str, Path]:
    """
    Write regions, the JSON report and optionally the window table and scan plot.

    Files are `<out_prefix>.regions.tsv`, `<out_prefix>.report.json`,
    `<out_prefix>.windows.tsv.gz` (when `emit_windows`) and `<out_prefix>.scan.png`
    (when `make_plot`).

    Returns
    -------
    dict of output kind to path
    """
    paths = {'regions': output_path(out_prefix, 'regions.tsv'),
             'report': output_path(out_prefix, 'report.json')}
    write_regions_tsv(paths['regions'], scenario.report)

    extra = {'threshold': _threshold_doc(scenario.threshold_result),
             'n_samples': scenario.null_model.n,
             'n_variants': scenario.score_set.p,
             'n_windows': len(scenario.windows)}
    write_report_json(paths['report'], scenario.report, extra=extra)

    if scenario.emit_windows:
        paths['windows'] = output_path(out_prefix, 'windows.tsv.gz')
        write_windows_tsv(paths['windows'], scenario.windows, scenario.score_set)

    if scenario.make_plot:
        paths['plot'] = output_path(out_prefix, 'scan.png')
        make_scan_plot(scenario.windows, scenario.report, scenario_name=scenario.scenario_name,
                       plot_style=scenario.plot_style, figsize=scenario.figsize, plot_export_path=paths['plot'])

    for kind, path in paths.items():
        logger.debug(f'{kind} written to {path}')
    return paths


def export_threshold(result: ThresholdResult, out_prefix: str | Path, extra: Optional[Dict] = None) -> Dict[str, Path]:
    """Write `<out_prefix>.threshold.json` and the sorted scan maxima to `<out_prefix>.qmax.txt`"""
    paths = {'threshold': output_path(out_prefix, 'threshold.json'),
             'qmax': output_path(out_prefix, 'qmax.txt')}
    doc = _threshold_doc(result)
    if extra:
        doc.update(extra)
    paths['threshold'].parent.mkdir(parents=True, exist_ok=True)
    paths['threshold'].write_text(json.dumps(doc, indent=2) + '\n', encoding='utf-8')
    write_qmax(paths['qmax'], result.qmax_samples)
    return paths


def export_experiment(summary: pd.DataFrame, replicates: pd.DataFrame, out_prefix: str | Path,
                      make_plot: bool = False) -> Dict[str, Path]:
    """
    Write an experiment's summary and per-replicate tables.

    Files are `<out_prefix>.summary.tsv` and `<out_prefix>.replicates.tsv`; power summaries
    also get `<out_prefix>.power.png` when `make_plot`.
    """
    paths = {'summary': output_path(out_prefix, 'summary.tsv'),
             'replicates': output_path(out_prefix, 'replicates.tsv')}
    write_table(paths['summary'], summary)
    write_table(paths['replicates'], replicates)

    if make_plot and 'detection_rate' in summary.columns:
        paths['plot'] = output_path(out_prefix, 'power.png')
        make_power_plot(summary, plot_export_path=paths['plot'])
    return paths
