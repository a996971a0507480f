"""
The :mod:`qscan.scan_engine` module computes the quadratic scan statistic Q(I) and the
LD-aware mean scan statistic M(I) for every window of L_min..L_max consecutive variants.

Only the trace and squared Frobenius norm of each window's covariance block enter Q(I),
so no eigendecomposition is needed. Window moments are extended one variant at a time
for all window starts at once, which keeps a full scan at O(p * L_max) band reads.
"""

# Copyright 2024 qscan developers

import logging
import math
from enum import Enum
from typing import Iterator, List, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict, computed_field, model_validator

from qscan.scores import ScoreSet, BandedMatrix
from qscan.errors import DegenerateWindowError, NoValidWindowError
from qscan.qslib import segment_ends

# This should inherit level from root logger
logger = logging.getLogger(__name__)

# Band sum entries (colsum and colsq together) kept for reuse across scans
CACHE_LIMIT = 2 ** 24
BLOCK_STARTS = 4096


class Method(str, Enum):
    QSCAN = 'qscan'
    MSCAN = 'mscan'


class ScanConfig(BaseModel):
    """
    Window size range and scan statistic.

    Parameters
    ----------
    l_min : int
        Minimum number of variants per window, default 40
    l_max : int
        Maximum number of variants per window, default 200
    method : Method
        'qscan' (quadratic) or 'mscan' (LD-aware mean), default 'qscan'
    exact : bool
        Use compensated (math.fsum) summation for every window moment. Slow; meant for
        checking the fast path. Default is False.
    """
    model_config = ConfigDict(extra='forbid')

    l_min: int = 40
    l_max: int = 200
    method: Method = Method.QSCAN
    exact: bool = False

    @model_validator(mode='after')
    def _window_range(self) -> 'ScanConfig':
        if self.l_min < 2:
            raise ValueError(f'l_min must be >= 2, got {self.l_min}')
        if self.l_max < self.l_min:
            raise ValueError(f'l_max ({self.l_max}) must be >= l_min ({self.l_min})')
        return self


class WindowMoments(BaseModel):
    """Sums over one window that determine both Q(I) and M(I)"""
    sum_u: float
    sum_u2: float
    trace: float
    frob2: float
    rowvar: float

    @model_validator(mode='after')
    def _finite(self) -> 'WindowMoments':
        values = (self.sum_u, self.sum_u2, self.trace, self.frob2, self.rowvar)
        if not all(math.isfinite(v) for v in values):
            raise ValueError('window moments must be finite')
        if self.rowvar < 0:
            raise ValueError(f'variance of the score sum must be >= 0, got {self.rowvar}')
        return self


class WindowStat(BaseModel):
    """One scanned window, variant indices inclusive"""
    start: int
    end: int
    stat: float
    trace: float
    frob2: float

    @computed_field
    @property
    def length(self) -> int:
        return self.end - self.start + 1


def q_stat(m: WindowMoments) -> float:
    """
    Quadratic scan statistic (sum U_i^2 - trace) / sqrt(2 * frob2).

    trace and frob2 of the window covariance equal the L1 norm and squared L2 norm of its
    eigenvalues.

    Examples
    --------
    One variant with unit variance and U = 2 gives (4 - 1) / sqrt(2) = 2.1213...
    """
    if m.frob2 <= 0:
        raise DegenerateWindowError('window covariance has zero Frobenius norm')
    return (m.sum_u2 - m.trace) / math.sqrt(2.0 * m.frob2)


def m_stat(m: WindowMoments) -> float:
    """LD-aware mean scan statistic (sum U_i)^2 / var(sum U_i)"""
    if m.rowvar <= 0:
        raise DegenerateWindowError(f'variance of the window score sum is {m.rowvar}')
    return m.sum_u ** 2 / m.rowvar


def window_moments(scores: ScoreSet, start: int, end: int, exact: bool = False) -> WindowMoments:
    """
    Moments of window start..end (inclusive) computed from scratch from the dense block.

    Parameters
    ----------
    scores : ScoreSet
    start, end : int
    exact : bool, optional
        Sum with math.fsum. Default is False.
    """
    u = scores.u[start:end + 1]
    block = scores.cov.block(start, end)
    def total(a: np.ndarray) -> float:
        return math.fsum(a.ravel().tolist()) if exact else float(a.sum())

    return WindowMoments(sum_u=total(u),
                         sum_u2=total(u * u),
                         trace=total(np.diagonal(block)),
                         frob2=total(block * block),
                         rowvar=max(total(block), 0.0))


def mean_scan_independent(u: np.ndarray, sigma2: np.ndarray) -> float:
    """
    Unstandardized mean scan statistic sum(Z_i) / sqrt(|I|) with Z_i = U_i / sigma_i.

    Only valid when the scores are independent; kept as a reference for tests, the
    LD-aware `m_stat` is the production mean scan.
    """
    u = np.asarray(u, dtype=np.float64)
    z = u / np.sqrt(np.asarray(sigma2, dtype=np.float64))
    return float(z.sum() / math.sqrt(len(z)))


def chisq_mixture_null(eigvals: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    """
    Draws from the null law of Q(I): sum_j lambda_j (chi2_1 - 1) / sqrt(2 sum lambda^2).

    Parameters
    ----------
    eigvals : ndarray
        Eigenvalues of the window covariance
    size : int
    rng : numpy Generator
    """
    lam = np.asarray(eigvals, dtype=np.float64)
    chi2 = rng.chisquare(1, size=(size, len(lam)))
    return (chi2 - 1.0) @ lam / math.sqrt(2.0 * float(lam @ lam))


class WindowTable(BaseModel):
    """
    All scanned windows as parallel arrays, sorted by start then end.

    Iterating yields `WindowStat` objects.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True)

    start: np.ndarray
    end: np.ndarray
    stat: np.ndarray
    trace: np.ndarray
    frob2: np.ndarray
    rowvar: np.ndarray
    method: Method
    skipped: int = 0

    def __len__(self) -> int:
        return len(self.start)

    def __iter__(self) -> Iterator[WindowStat]:
        for i in range(len(self.start)):
            yield WindowStat(start=int(self.start[i]), end=int(self.end[i]), stat=float(self.stat[i]),
                             trace=float(self.trace[i]), frob2=float(self.frob2[i]))

    def max(self) -> float:
        if len(self.stat) == 0:
            raise NoValidWindowError('no valid window to take the maximum over')
        return float(self.stat.max())

    def to_frame(self, scores: ScoreSet) -> pd.DataFrame:
        """Window table with chrom, start_index, end_index, start_bp, end_bp, n_variants, stat"""
        return pd.DataFrame({'chrom': scores.chrom[self.start],
                             'start_index': self.start,
                             'end_index': self.end,
                             'start_bp': scores.positions[self.start],
                             'end_bp': scores.positions[self.end],
                             'n_variants': self.end - self.start + 1,
                             'stat': self.stat})


class WindowScanner:
    """
    Band sums for scanning one covariance with many score vectors.

    For every variant e and extension depth k, ``colsum[k, e]`` is the sum of
    Sigma[e - d, e] over d = 1..k and ``colsq[k, e]`` the sum of their squares. Extending
    window [s, e - 1] to [s, e] with k = e - s then costs O(1):

        trace  += Sigma[e, e]
        frob2  += Sigma[e, e]^2 + 2 * colsq[k, e]
        rowvar += Sigma[e, e] + 2 * colsum[k, e]

    The sums depend only on the covariance. They are built once and reused across Monte Carlo
    replicates while both tables hold at most `cache_limit` entries; larger scans rebuild them
    for each block of `block_starts` window starts, which bounds memory at
    2 x l_max x (block_starts + l_max) floats. Both paths give identical statistics.

    Parameters
    ----------
    cov : BandedMatrix
    chrom : sequence of str
    cfg : ScanConfig
    cache_limit : int, optional
        Default is CACHE_LIMIT.
    block_starts : int, optional
        Default is BLOCK_STARTS.
    """

    def __init__(self, cov: BandedMatrix, chrom, cfg: ScanConfig, cache_limit: int = CACHE_LIMIT,
                 block_starts: int = BLOCK_STARTS):
        p = cov.dim
        if cfg.l_max > p:
            raise ValueError(f'l_max ({cfg.l_max}) exceeds the number of variants ({p})')
        if cov.bandwidth < cfg.l_max - 1:
            raise ValueError(f'covariance bandwidth {cov.bandwidth} is smaller than l_max - 1 = {cfg.l_max - 1}')
        if block_starts < 1:
            raise ValueError(f'block_starts must be positive, got {block_starts}')

        self.cfg = cfg
        self.p = p
        self.storage = cov.storage
        self.block_starts = block_starts
        depth = cfg.l_max
        padded = p + depth

        self.diag = np.zeros(padded)
        self.diag[:p] = cov.diagonal
        # Deepest extension k allowed for each start without leaving its chromosome
        self.kmax = np.minimum(depth - 1, segment_ends(chrom) - np.arange(p))

        self.cached = 2 * depth * padded <= cache_limit
        if self.cached:
            self.colsum, self.colsq = self._band_sums(0, padded)
        else:
            logger.debug(f'band sums for {p} variants exceed the cache limit; built per block of {block_starts}')

    def _band_sums(self, a: int, b: int) -> Tuple[np.ndarray, np.ndarray]:
        """colsum and colsq for columns e in [a, b), column e stored at e - a"""
        depth = self.cfg.l_max
        width = b - a
        colsum = np.zeros((depth, width))
        colsq = np.zeros((depth, width))
        vals = np.zeros(width)
        for d in range(1, depth):
            vals[:] = 0.0
            lo_e, hi_e = max(a, d), min(b, self.p)
            if hi_e > lo_e:
                vals[lo_e - a:hi_e - a] = self.storage[lo_e - d:hi_e - d, d]
            np.add(colsum[d - 1], vals, out=colsum[d])
            np.add(colsq[d - 1], vals * vals, out=colsq[d])
        return colsum, colsq

    def _scan_range(self, u_pad: np.ndarray, lo: int, hi: int,
                    keep_windows: bool) -> Tuple[List, float, int]:
        pieces = []
        best = -np.inf
        skipped = 0
        step = (hi - lo) if self.cached else self.block_starts
        for blo in range(lo, hi, max(step, 1)):
            bhi = min(hi, blo + step)
            if self.cached:
                colsum, colsq, offset = self.colsum, self.colsq, 0
            else:
                colsum, colsq = self._band_sums(blo, bhi + self.cfg.l_max)
                offset = blo
            block_pieces, block_best, block_skipped = self._scan_block(u_pad, blo, bhi, colsum, colsq, offset,
                                                                       keep_windows)
            pieces.extend(block_pieces)
            best = max(best, block_best)
            skipped += block_skipped
        return pieces, best, skipped

    def _scan_block(self, u_pad: np.ndarray, lo: int, hi: int, colsum: np.ndarray, colsq: np.ndarray,
                    offset: int, keep_windows: bool) -> Tuple[List, float, int]:
        cfg = self.cfg
        m = hi - lo
        sum_u = np.zeros(m)
        sum_u2 = np.zeros(m)
        trace = np.zeros(m)
        frob2 = np.zeros(m)
        rowvar = np.zeros(m)
        kmax = self.kmax[lo:hi]
        pieces = []
        best = -np.inf
        skipped = 0

        for k in range(cfg.l_max):
            live = kmax >= k
            if not live.any():
                break
            span = slice(lo + k, hi + k)
            local = slice(lo + k - offset, hi + k - offset)
            u_e = u_pad[span]
            d_e = self.diag[span]
            sum_u += u_e
            sum_u2 += u_e * u_e
            trace += d_e
            frob2 += d_e * d_e + 2.0 * colsq[k, local]
            rowvar += d_e + 2.0 * colsum[k, local]

            if k + 1 < cfg.l_min:
                continue

            if cfg.method == Method.QSCAN:
                ok = live & (frob2 > 0)
                stat = (sum_u2 - trace) / np.sqrt(2.0 * np.where(ok, frob2, 1.0))
            else:
                ok = live & (rowvar > 0)
                stat = sum_u * sum_u / np.where(ok, rowvar, 1.0)
            skipped += int(np.count_nonzero(live & ~ok))

            if ok.any():
                best = max(best, float(stat[ok].max()))
                if keep_windows:
                    idx = np.flatnonzero(ok)
                    pieces.append((idx + lo, idx + lo + k, stat[idx], trace[idx], frob2[idx], rowvar[idx]))

        return pieces, best, skipped

    def _pad(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=np.float64)
        if len(u) != self.p:
            raise ValueError(f'score vector has length {len(u)}, covariance has dimension {self.p}')
        u_pad = np.zeros(self.p + self.cfg.l_max)
        u_pad[:self.p] = u
        return u_pad

    def _chunks(self, n_jobs: int):
        n_chunks = max(1, n_jobs)
        bounds = np.linspace(0, self.p, n_chunks + 1).astype(int)
        return [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]

    def scan(self, u: np.ndarray, n_jobs: int = 1) -> WindowTable:
        """
        Statistic of every valid window.

        Starts are split into `n_jobs` chunks; each window belongs to the chunk holding its
        start, so the result does not depend on `n_jobs`.
        """
        u_pad = self._pad(u)
        results = Parallel(n_jobs=n_jobs, prefer='threads')(
            delayed(self._scan_range)(u_pad, lo, hi, True) for lo, hi in self._chunks(n_jobs))

        pieces = [piece for chunk, _, _ in results for piece in chunk]
        skipped = sum(s for _, _, s in results)
        if pieces:
            cols = [np.concatenate(col) for col in zip(*pieces)]
        else:
            cols = [np.zeros(0, dtype=np.int64)] * 2 + [np.zeros(0)] * 4
        order = np.lexsort((cols[1], cols[0]))
        start, end, stat, trace, frob2, rowvar = (c[order] for c in cols)
        return WindowTable(start=start.astype(np.int64), end=end.astype(np.int64), stat=stat, trace=trace,
                           frob2=frob2, rowvar=rowvar, method=self.cfg.method, skipped=skipped)

    def maximum(self, u: np.ndarray) -> float:
        """Largest window statistic; -inf when no window is valid"""
        _, best, _ = self._scan_range(self._pad(u), 0, self.p, False)
        return best


def _scan_exact(scores: ScoreSet, cfg: ScanConfig) -> WindowTable:
    """Incremental scan keeping every summand, each moment taken with math.fsum"""
    p = scores.p
    storage = scores.cov.storage
    last = segment_ends(scores.chrom)
    rows = []
    skipped = 0
    for s in range(p):
        terms = {'sum_u': [], 'sum_u2': [], 'trace': [], 'frob2': [], 'rowvar': []}
        for e in range(s, min(s + cfg.l_max, last[s] + 1)):
            u_e = float(scores.u[e])
            d_e = float(storage[e, 0])
            terms['sum_u'].append(u_e)
            terms['sum_u2'].append(u_e * u_e)
            terms['trace'].append(d_e)
            terms['frob2'].append(d_e * d_e)
            terms['rowvar'].append(d_e)
            for i in range(s, e):
                c = float(storage[i, e - i])
                terms['frob2'].append(2.0 * c * c)
                terms['rowvar'].append(2.0 * c)
            if e - s + 1 < cfg.l_min:
                continue
            m = {key: math.fsum(vals) for key, vals in terms.items()}
            m['rowvar'] = max(m['rowvar'], 0.0)
            try:
                moments = WindowMoments(**m)
                stat = q_stat(moments) if cfg.method == Method.QSCAN else m_stat(moments)
            except DegenerateWindowError:
                skipped += 1
                continue
            rows.append((s, e, stat, m['trace'], m['frob2'], m['rowvar']))

    cols = list(zip(*rows)) if rows else [[]] * 6
    return WindowTable(start=np.asarray(cols[0], dtype=np.int64), end=np.asarray(cols[1], dtype=np.int64),
                       stat=np.asarray(cols[2], dtype=np.float64), trace=np.asarray(cols[3], dtype=np.float64),
                       frob2=np.asarray(cols[4], dtype=np.float64), rowvar=np.asarray(cols[5], dtype=np.float64),
                       method=cfg.method, skipped=skipped)


def scan_windows(scores: ScoreSet, cfg: ScanConfig, n_jobs: int = 1) -> WindowTable:
    """
    Scan every window with l_min <= |I| <= l_max that stays within one chromosome.

    Degenerate windows are skipped and counted in `WindowTable.skipped`.

    Parameters
    ----------
    scores : ScoreSet
        Bandwidth must be at least cfg.l_max - 1
    cfg : ScanConfig
    n_jobs : int, optional
        Threads over chunks of window starts. Default is 1.

    Returns
    -------
    WindowTable
    """
    if cfg.exact:
        if cfg.l_max > scores.p:
            raise ValueError(f'l_max ({cfg.l_max}) exceeds the number of variants ({scores.p})')
        if scores.bandwidth < cfg.l_max - 1:
            raise ValueError(f'covariance bandwidth {scores.bandwidth} is smaller than l_max - 1')
        table = _scan_exact(scores, cfg)
    else:
        table = WindowScanner(scores.cov, scores.chrom, cfg).scan(scores.u, n_jobs=n_jobs)

    if table.skipped > 0:
        logger.warning(f'{table.skipped} degenerate windows skipped')
    logger.debug(f'{len(table)} windows scanned ({cfg.method.value}, l_min={cfg.l_min}, l_max={cfg.l_max})')
    return table


def scan_all(scores: ScoreSet, cfg: ScanConfig, n_jobs: int = 1) -> Iterator[WindowStat]:
    """Stream of `WindowStat`, one per valid window, ordered by start then end"""
    yield from scan_windows(scores, cfg, n_jobs=n_jobs)


def scan_max(scores: ScoreSet, cfg: ScanConfig) -> float:
    """
    Maximum window statistic.

    Raises
    ------
    NoValidWindowError when every window is degenerate
    """
    if cfg.exact:
        return scan_windows(scores, cfg).max()
    best = WindowScanner(scores.cov, scores.chrom, cfg).maximum(scores.u)
    if not np.isfinite(best):
        raise NoValidWindowError('every window is degenerate')
    return best
