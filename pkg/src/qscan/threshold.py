"""
The :mod:`qscan.threshold` module determines the rejection threshold h(p, L_min, L_max, alpha)
of the scan.

The empirical threshold is the conservative (1 - alpha) order statistic of the scan maximum over
Monte Carlo pseudo-score vectors drawn under the fitted null. Closed-form asymptotic values are
provided for cross-checks.
"""

# Copyright 2024 qscan developers

import logging
import math
from enum import Enum
from typing import List

import numpy as np
import scipy.linalg
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict, Field, model_validator

from qscan.scores import ScoreSet, BandedMatrix
from qscan.scan_engine import ScanConfig, WindowScanner
from qscan.null_model import NullModel
from qscan.errors import CholeskyError, DimensionMismatchError
from qscan.qslib import replicate_rng, ScanTimer, MAX_SEED

REPLICATE_BATCH = 32
CHOLESKY_JITTER = 1e-8

# This should inherit level from root logger
logger = logging.getLogger(__name__)


class ThresholdMode(str, Enum):
    GENOTYPE_PROJECTION = 'genotype_projection'
    BANDED_CHOLESKY = 'banded_cholesky'


class ThresholdConfig(BaseModel):
    """
    Monte Carlo threshold settings.

    Parameters
    ----------
    alpha : float
        Family-wise error level in (0, 1), default 0.05
    n_reps : int
        Number of Monte Carlo replicates, default 2000; at least ceil(1 / alpha)
    seed : int
        Master seed in [0, 2**64)
    mode : ThresholdMode
        'genotype_projection' draws pseudo-scores from the adjusted genotypes, 'banded_cholesky'
        from the banded covariance
    """
    model_config = ConfigDict(extra='forbid')

    alpha: float = Field(0.05, gt=0.0, lt=1.0)
    n_reps: int = Field(2000, ge=1)
    seed: int = Field(0, ge=0, le=MAX_SEED)
    mode: ThresholdMode = ThresholdMode.GENOTYPE_PROJECTION

    @model_validator(mode='after')
    def _enough_replicates(self) -> 'ThresholdConfig':
        needed = math.ceil(1.0 / self.alpha - 1e-9)
        if self.n_reps < needed:
            raise ValueError(f'n_reps ({self.n_reps}) must be at least ceil(1/alpha) = {needed}')
        return self


class ThresholdResult(BaseModel):
    """
    Empirical threshold with its Monte Carlo sample.

    `bound_upper` is the large-p bound, reported but not asserted; it is None when the
    window range or p leaves it undefined.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True)

    h: float
    qmax_samples: np.ndarray
    alpha: float
    bound_upper: float | None = None
    rate: float
    mode: ThresholdMode
    n_reps: int
    seed: int

    @model_validator(mode='after')
    def _quantile_of_samples(self) -> 'ThresholdResult':
        if len(self.qmax_samples) != self.n_reps:
            raise ValueError(f'{len(self.qmax_samples)} samples for {self.n_reps} replicates')
        if np.any(np.diff(self.qmax_samples) < 0):
            raise ValueError('qmax_samples must be sorted')
        return self


def quantile_index(n_reps: int, alpha: float) -> int:
    """1-based order statistic k = ceil(N (1 - alpha)) used as the threshold"""
    return max(1, math.ceil(round(n_reps * (1.0 - alpha), 9)))


def empirical_threshold(samples: np.ndarray, alpha: float) -> float:
    """
    Conservative (1 - alpha) quantile: the k-th smallest sample, k = ceil(N (1 - alpha)).

    Examples
    --------
    With N = 2000 and alpha = 0.05 this is the 1900th smallest value.
    """
    ordered = np.sort(np.asarray(samples, dtype=np.float64))
    return float(ordered[quantile_index(len(ordered), alpha) - 1])


def theoretical_bound(p: int, l_min: int, l_max: int, alpha: float) -> float:
    """
    Large-p upper bound on the threshold,

        sqrt(2 gamma) + sqrt(2) gamma / (L_min log p)^(1/4),  gamma = log(p (L_max - L_min)) - log(alpha)

    with natural logarithms.

    Parameters
    ----------
    p : int
    l_min, l_max : int
        p > l_max > l_min >= 1
    alpha : float
        In (0, 1)
    """
    if not p > l_max > l_min >= 1:
        raise ValueError(f'need p > l_max > l_min >= 1, got p={p}, l_min={l_min}, l_max={l_max}')
    if not 0 < alpha < 1:
        raise ValueError(f'alpha must be in (0, 1), got {alpha}')
    gamma = math.log(p * (l_max - l_min)) - math.log(alpha)
    return math.sqrt(2.0 * gamma) + math.sqrt(2.0) * gamma / (l_min * math.log(p)) ** 0.25


def asymptotic_rate(p: int) -> float:
    """sqrt(2 log p), the rate at which the null scan maximum grows"""
    if p < 2:
        raise ValueError(f'p must be >= 2, got {p}')
    return math.sqrt(2.0 * math.log(p))


def banded_cholesky(cov: BandedMatrix) -> np.ndarray:
    """
    Lower Cholesky factor of a banded covariance in LAPACK lower band storage.

    ``factor[d, j]`` is L[j + d, j]. An indefinite band is retried once with
    1e-8 * max(diagonal) added to the diagonal.

    Raises
    ------
    CholeskyError if the jittered band is still not positive definite
    """
    lower = np.ascontiguousarray(cov.storage.T)
    try:
        return scipy.linalg.cholesky_banded(lower, lower=True)
    except np.linalg.LinAlgError:
        jitter = CHOLESKY_JITTER * float(cov.diagonal.max())
        logger.warning(f'banded covariance not positive definite; retrying with diagonal jitter {jitter:.3e}')
        lower = lower.copy()
        lower[0] += jitter
        try:
            return scipy.linalg.cholesky_banded(lower, lower=True)
        except np.linalg.LinAlgError as error:
            raise CholeskyError(f'banded covariance is not positive definite: {error}')


def banded_lower_multiply(factor: np.ndarray, z: np.ndarray) -> np.ndarray:
    """L @ z for L in lower band storage; `z` has shape (p,) or (p, k)"""
    p = factor.shape[1]
    out = factor[0].reshape((p,) + (1,) * (z.ndim - 1)) * z
    for d in range(1, factor.shape[0]):
        out[d:] += factor[d, :p - d].reshape((p - d,) + (1,) * (z.ndim - 1)) * z[:p - d]
    return out


def _pseudo_scores_projection(w: np.ndarray, seed: int, replicates: List[int]) -> np.ndarray:
    z = np.column_stack([replicate_rng(seed, r).standard_normal(w.shape[0]) for r in replicates])
    return w.T @ z


def _pseudo_scores_cholesky(factor: np.ndarray, seed: int, replicates: List[int]) -> np.ndarray:
    z = np.column_stack([replicate_rng(seed, r).standard_normal(factor.shape[1]) for r in replicates])
    return banded_lower_multiply(factor, z)


def _qmax_batch(draw, source, scanner: WindowScanner, seed: int, replicates: List[int]) -> np.ndarray:
    u = draw(source, seed, replicates)
    return np.array([scanner.maximum(u[:, i]) for i in range(len(replicates))])


def mc_threshold(scores: ScoreSet, model: NullModel, scan_cfg: ScanConfig, cfg: ThresholdConfig,
                 whitened: np.ndarray | None = None, n_jobs: int = 1) -> ThresholdResult:
    """
    Empirical threshold from the scan maximum of Monte Carlo pseudo-scores.

    In 'genotype_projection' mode each replicate draws z ~ N(0, I_n) and uses pseudo-scores
    W^T z, where W are the whitened adjusted genotypes of the scanned variants, so their
    covariance is exactly the estimated score covariance. In 'banded_cholesky' mode pseudo-scores
    are L z with z ~ N(0, I_p) and L the Cholesky factor of the banded covariance.

    Replicate r always uses the random stream keyed by (cfg.seed, r), so the samples do not
    depend on `n_jobs`.

    Parameters
    ----------
    scores : ScoreSet
        The scores that will be scanned
    model : NullModel
    scan_cfg : ScanConfig
    cfg : ThresholdConfig
    whitened : ndarray, shape (n, p), optional
        Whitened adjusted genotypes aligned with `scores`; required for genotype_projection and
        used as the fallback when the banded Cholesky factorization fails
    n_jobs : int, optional
        Threads over batches of replicates. Default is 1.

    Returns
    -------
    ThresholdResult
    """
    if whitened is not None:
        if whitened.shape[0] != model.n:
            raise DimensionMismatchError(f'whitened genotypes have {whitened.shape[0]} samples, '
                                         f'null model has {model.n}')
        if whitened.shape[1] != scores.p:
            raise DimensionMismatchError(f'whitened genotypes have {whitened.shape[1]} variants, '
                                         f'score set has {scores.p}')

    mode = cfg.mode
    if mode == ThresholdMode.BANDED_CHOLESKY:
        try:
            draw, source = _pseudo_scores_cholesky, banded_cholesky(scores.cov)
        except CholeskyError:
            if whitened is None:
                raise
            logger.warning('banded Cholesky failed; falling back to genotype projection pseudo-scores')
            mode = ThresholdMode.GENOTYPE_PROJECTION
    if mode == ThresholdMode.GENOTYPE_PROJECTION:
        if whitened is None:
            raise ValueError('genotype_projection mode needs the whitened adjusted genotypes')
        draw, source = _pseudo_scores_projection, whitened

    scanner = WindowScanner(scores.cov, scores.chrom, scan_cfg)
    batches = [list(range(i, min(i + REPLICATE_BATCH, cfg.n_reps)))
               for i in range(0, cfg.n_reps, REPLICATE_BATCH)]

    with ScanTimer() as t:
        results = Parallel(n_jobs=n_jobs, prefer='threads')(
            delayed(_qmax_batch)(draw, source, scanner, cfg.seed, batch) for batch in batches)
    samples = np.sort(np.concatenate(results))
    logger.info(f'{cfg.n_reps} Monte Carlo replicates ({mode.value}) in {t}')

    p = scores.p
    try:
        bound = theoretical_bound(p, scan_cfg.l_min, scan_cfg.l_max, cfg.alpha)
    except ValueError:
        bound = None

    h = empirical_threshold(samples, cfg.alpha)
    logger.info(f'Threshold h = {h:.4f} at alpha = {cfg.alpha}')
    return ThresholdResult(h=h, qmax_samples=samples, alpha=cfg.alpha, bound_upper=bound,
                           rate=asymptotic_rate(max(p, 2)), mode=mode, n_reps=cfg.n_reps, seed=cfg.seed)
