"""
The :mod:`qscan.plotting` module includes functions for plotting scan tracks and power summaries.
"""

# Copyright 2024 qscan developers

import logging
from pathlib import Path
from typing import Dict, Tuple

import numpy as np
import pandas as pd
import matplotlib.pyplot as plt
import seaborn as sns

from qscan.region_detect import ScanReport
from qscan.scan_engine import WindowTable

# This should inherit level from root logger
logger = logging.getLogger(__name__)

_METRIC_LABELS = {'detection_rate': 'Detection rate', 'jaccard': 'Mean Jaccard index',
                  'noncentrality': 'Signal strength'}


def scan_track(windows: WindowTable) -> pd.DataFrame:
    """
    Largest window statistic at each window centre.

    Returns
    -------
    DataFrame with columns `centre` and `stat`, sorted by centre
    """
    df = pd.DataFrame({'centre': (windows.start + windows.end) / 2.0, 'stat': windows.stat})
    return df.groupby('centre', as_index=False)['stat'].max().sort_values('centre')


def make_scan_plot(windows: WindowTable, report: ScanReport, scenario_name: str = '',
                   plot_style: str = 'ggplot', figsize: Tuple[float, float] = (15, 5),
                   line_color: str = 'steelblue', threshold_color: str = 'r', region_color: str = 'orange',
                   main_title: str = '', xlabel: str = 'Variant index', ylabel: str = 'Window statistic',
                   legend_properties: Dict | None = None,
                   plot_export_path: str | Path | None = None):
    """
    Scan track: the maximum window statistic by window centre with the threshold line and the
    detected regions shaded.

    Parameters
    ----------
    windows : WindowTable
    report : ScanReport
    scenario_name : str
        Used as the subtitle
    plot_style : str
        A matplotlib style, default 'ggplot'
    figsize : tuple
        Figure size, default (15, 5)
    line_color, threshold_color, region_color : str
    main_title : str
        Defaults to a title naming the method
    xlabel, ylabel : str
    legend_properties : dict, optional
    plot_export_path : str or Path, optional
        PNG file to write; nothing is written when None

    Returns
    -------
    matplotlib Figure
    """
    if main_title == '':
        main_title = f'{report.method.value} window statistics'
    if scenario_name:
        main_title += f'\nScenario: {scenario_name}'
    if legend_properties is None:
        legend_properties = {'loc': 'best', 'frameon': True, 'facecolor': 'w'}

    track = scan_track(windows)

    with plt.style.context(plot_style):
        fig1 = plt.figure(figsize=figsize)
        ax1 = fig1.add_subplot(1, 1, 1)

        ax1.plot(track['centre'], track['stat'], color=line_color, linewidth=0.75, label='Max statistic')
        ax1.axhline(report.threshold, color=threshold_color, linestyle='--', label=f'h = {report.threshold:.3f}')
        for region in report.regions:
            ax1.axvspan(region.start, region.end, color=region_color, alpha=0.3,
                        label='Detected region' if region.rank == 1 else None)

        ax1.set_title(main_title, loc='left')
        ax1.set_xlabel(xlabel)
        ax1.set_ylabel(ylabel)
        ax1.legend(**legend_properties)

        if plot_export_path is not None:
            Path(plot_export_path).parent.mkdir(parents=True, exist_ok=True)
            plt.savefig(plot_export_path, bbox_inches='tight')
            logger.debug(f'Scan plot written to {plot_export_path}')

        # Suppress plot output in notebook
        plt.close()

    return fig1


def make_power_plot(summary: pd.DataFrame, metrics: Tuple[str, ...] = ('detection_rate', 'jaccard'),
                    plot_style: str = 'ggplot', figsize: Tuple[float, float] = (12, 5),
                    plot_export_path: str | Path | None = None):
    """
    Grouped bars of power metrics by setting, one panel per metric and one bar colour per method.

    Parameters
    ----------
    summary : DataFrame
        Power summary with columns method, xi, sign_mix, n and the metrics
    metrics : tuple of str
    plot_style : str
    figsize : tuple
    plot_export_path : str or Path, optional

    Returns
    -------
    matplotlib Figure
    """
    df = summary.copy()
    df['setting'] = [f'xi={xi:.2f}, s={s:g}, n={n}' for xi, s, n in zip(df['xi'], df['sign_mix'], df['n'])]

    with plt.style.context(plot_style):
        fig1, axes = plt.subplots(1, len(metrics), figsize=figsize, squeeze=False)
        for ax, metric in zip(axes[0], metrics):
            sns.barplot(data=df, x='setting', y=metric, hue='method', ax=ax)
            ax.set_ylabel(_METRIC_LABELS.get(metric, metric))
            ax.set_xlabel('')
            ax.tick_params(axis='x', labelrotation=30)
            if metric != 'noncentrality':
                ax.set_ylim(0, 1.05 * max(1.0, float(np.nanmax(df[metric]))))

        if plot_export_path is not None:
            Path(plot_export_path).parent.mkdir(parents=True, exist_ok=True)
            plt.savefig(plot_export_path, bbox_inches='tight')

        plt.close()

    return fig1
