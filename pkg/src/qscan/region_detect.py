"""
The :mod:`qscan.region_detect` module turns scanned windows into signal regions.

Windows whose statistic exceeds the threshold form the candidate set. The region with the
largest statistic is selected, every candidate sharing a variant with it is removed, and the
process repeats until no candidate remains.
"""

# Copyright 2024 qscan developers

import logging
from typing import Any, Dict, Iterable, List

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator

from qscan.scan_engine import Method, WindowStat, WindowTable
from qscan.scores import ScoreSet

# This should inherit level from root logger
logger = logging.getLogger(__name__)


class DetectedRegion(BaseModel):
    """
    One detected signal region; `start` and `end` are inclusive variant indices.

    `start_bp` and `end_bp` are None when positions were not supplied.
    """
    start: int
    end: int
    start_bp: int | None = None
    end_bp: int | None = None
    chrom: str | None = None
    stat: float
    rank: int = Field(ge=1)

    @model_validator(mode='after')
    def _ordered(self) -> 'DetectedRegion':
        if self.end < self.start:
            raise ValueError(f'region end {self.end} precedes start {self.start}')
        return self

    @property
    def length(self) -> int:
        return self.end - self.start + 1

    def interval(self):
        return self.start, self.end


class ScanReport(BaseModel):
    """
    Outcome of a scan: the threshold, the candidate count and the selected regions.

    An empty `regions` list means the global null is not rejected.
    """
    threshold: float
    method: Method
    n_candidates: int = Field(ge=0)
    regions: List[DetectedRegion] = []
    skipped_windows: int = 0
    config: Dict[str, Any] = {}

    @model_validator(mode='after')
    def _disjoint(self) -> 'ScanReport':
        if len(self.regions) > self.n_candidates:
            raise ValueError(f'{len(self.regions)} regions from {self.n_candidates} candidates')
        spans = sorted(r.interval() for r in self.regions)
        for (_, prev_end), (start, _) in zip(spans[:-1], spans[1:]):
            if start <= prev_end:
                raise ValueError('detected regions overlap')
        return self

    @property
    def rejected(self) -> bool:
        return len(self.regions) > 0

    def to_frame(self) -> pd.DataFrame:
        columns = ['rank', 'chrom', 'start', 'end', 'start_bp', 'end_bp', 'stat']
        return pd.DataFrame([{col: getattr(r, col) for col in columns} for r in self.regions], columns=columns)


def _as_arrays(stats):
    if isinstance(stats, WindowTable):
        return stats.start, stats.end, stats.stat
    rows = [(w.start, w.end, w.stat) for w in stats]
    if not rows:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64), np.zeros(0)
    start, end, stat = zip(*rows)
    return np.asarray(start, dtype=np.int64), np.asarray(end, dtype=np.int64), np.asarray(stat, dtype=np.float64)


def select_regions(start: np.ndarray, end: np.ndarray, stat: np.ndarray) -> List[int]:
    """
    Greedy selection of non-overlapping local maxima among candidate windows.

    Ties in the statistic go to the smaller start, then to the shorter window.

    Returns
    -------
    Indices into the candidate arrays, in selection order
    """
    order = np.lexsort((end - start, start, -stat))
    start, end = start[order], end[order]
    alive = np.ones(len(order), dtype=bool)
    chosen = []
    while alive.any():
        best = int(np.argmax(alive))
        chosen.append(int(order[best]))
        alive &= (end < start[best]) | (start > end[best])
    return chosen


def detect_regions(stats: WindowTable | Iterable[WindowStat], h: float, scores: ScoreSet | None = None,
                   method: Method | None = None, skipped_windows: int | None = None,
                   config: Dict[str, Any] | None = None) -> ScanReport:
    """
    Detect signal regions among the windows with statistic strictly above `h`.

    Parameters
    ----------
    stats : WindowTable or iterable of WindowStat
        Every scanned window, in any order
    h : float
        Threshold
    scores : ScoreSet, optional
        Supplies chromosome and base-pair coordinates for the report
    method : Method, optional
        Taken from `stats` when it is a WindowTable, otherwise defaults to qscan
    skipped_windows : int, optional
        Degenerate window count; taken from `stats` when it is a WindowTable
    config : dict, optional
        Run parameters echoed into the report

    Returns
    -------
    ScanReport

    Examples
    --------
    Candidates [10,50] with 5.0, [30,70] with 4.0 and [200,260] with 6.0 at h = 3 give
    [200,260] as rank 1 and [10,50] as rank 2; [30,70] overlaps [10,50] and is removed.
    """
    if isinstance(stats, WindowTable):
        method = method or stats.method
        skipped_windows = stats.skipped if skipped_windows is None else skipped_windows

    start, end, stat = _as_arrays(stats)
    candidate = stat > h
    start, end, stat = start[candidate], end[candidate], stat[candidate]

    regions = []
    for rank, i in enumerate(select_regions(start, end, stat), start=1):
        s, e = int(start[i]), int(end[i])
        region = DetectedRegion(start=s, end=e, stat=float(stat[i]), rank=rank)
        if scores is not None:
            region.start_bp = int(scores.positions[s])
            region.end_bp = int(scores.positions[e])
            region.chrom = str(scores.chrom[s])
        regions.append(region)

    if regions:
        logger.info(f'{len(regions)} regions detected from {len(start)} candidate windows above h = {h:.4f}')
    else:
        logger.info(f'No window above h = {h:.4f}; global null not rejected')

    return ScanReport(threshold=float(h), method=method or Method.QSCAN, n_candidates=int(len(start)),
                      regions=regions, skipped_windows=skipped_windows or 0, config=config or {})
