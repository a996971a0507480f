import matplotlib

matplotlib.use('Agg')

import numpy as np
import pandas as pd

from qscan.plotting import make_power_plot, make_scan_plot, scan_track
from qscan.region_detect import DetectedRegion, ScanReport
from qscan.scan_engine import Method, WindowTable


def small_table():
    start = np.array([0, 0, 1, 1, 2])
    end = np.array([1, 2, 2, 3, 3])
    stat = np.array([0.5, 2.0, 1.0, 3.0, -0.2])
    ones = np.ones(5)
    return WindowTable(start=start, end=end, stat=stat, trace=ones, frob2=ones, rowvar=ones, method=Method.QSCAN)


def test_scan_track_keeps_max_per_centre():
    track = scan_track(small_table())
    # centres 0.5, 1.0, 1.5, 2.0, 2.5; windows (0, 2) and (1, 1) would share a centre
    assert list(track['centre']) == [0.5, 1.0, 1.5, 2.0, 2.5]
    assert list(track['stat']) == [0.5, 2.0, 1.0, 3.0, -0.2]

    shared = WindowTable(start=np.array([0, 1]), end=np.array([2, 1]), stat=np.array([1.0, 4.0]),
                         trace=np.ones(2), frob2=np.ones(2), rowvar=np.ones(2), method=Method.QSCAN)
    assert list(scan_track(shared)['stat']) == [4.0]


def test_scan_plot_export(tmp_path):
    report = ScanReport(threshold=1.5, method=Method.QSCAN, n_candidates=2,
                        regions=[DetectedRegion(start=1, end=3, stat=3.0, rank=1)])
    out = tmp_path / 'plots' / 'scan.png'
    fig = make_scan_plot(small_table(), report, scenario_name='demo', plot_export_path=out)
    assert out.exists() and out.stat().st_size > 0
    title = fig.axes[0].get_title(loc='left')
    assert title.startswith('qscan window statistics') and 'demo' in title


def test_power_plot_export(tmp_path):
    summary = pd.DataFrame({'method': ['qscan', 'mscan', 'qscan', 'mscan'],
                            'xi': [0.5, 0.5, 2 / 3, 2 / 3], 'sign_mix': [0.5, 0.5, 1.0, 1.0],
                            'n': [500] * 4, 'detection_rate': [0.9, 0.4, 0.8, 0.85],
                            'jaccard': [0.6, 0.2, 0.5, 0.55]})
    out = tmp_path / 'power.png'
    fig = make_power_plot(summary, plot_export_path=out)
    assert out.exists()
    assert len(fig.axes) == 2
    assert fig.axes[0].get_ylabel() == 'Detection rate'
