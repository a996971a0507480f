"""
The :mod:`qscan.scores` module computes the marginal score statistics U and the banded
covariance estimate needed by every scan window.
"""

# Copyright 2024 qscan developers

import logging
import struct
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from qscan.null_model import NullModel
from qscan.errors import DimensionMismatchError, NoVariantsError, FormatError
from qscan.qslib import segment_ends

MAF_TOLERANCE = 1e-12
MINOR_TOLERANCE = 1e-8
ZERO_VARIANCE_TOL = 1e-10
BAND_BLOCK_SIZE = 512
CACHE_MAGIC = b'QSCN'
CACHE_VERSION = 1

# This should inherit level from root logger
logger = logging.getLogger(__name__)


def minor_allele_frequency(dosages: np.ndarray) -> np.ndarray:
    """min(f, 1 - f) with f the alternate allele frequency per column"""
    f = dosages.sum(axis=0) / (2.0 * dosages.shape[0])
    return np.minimum(f, 1.0 - f)


class GenotypeMatrix(BaseModel):
    """
    Dosages for n samples at p ordered variants.

    Parameters
    ----------
    dosages : array-like, shape (n, p)
        Values in [0, 2]; stored column-contiguous so each variant is one memory run
    positions : array-like of int, length p
        Base-pair coordinates, strictly increasing within a chromosome
    chrom : sequence of str, length p
        Chromosome labels; each chromosome must be one contiguous run
    variant_ids : list of str, optional
    maf : array-like, optional
        Computed from dosages when omitted, checked against them otherwise
    variant_index : array-like of int, optional
        Column index in the originally loaded matrix; defaults to 0..p-1
    sample_ids : list of str, optional
        Unique identifiers of the n rows
    """
    model_config = ConfigDict(arbitrary_types_allowed=True)

    dosages: np.ndarray
    positions: np.ndarray
    chrom: np.ndarray
    variant_ids: List[str] | None = None
    maf: np.ndarray | None = None
    variant_index: np.ndarray | None = None
    sample_ids: List[str] | None = None

    @field_validator('dosages', mode='before')
    def _dosage_array(cls, v):
        a = np.asfortranarray(np.asarray(v, dtype=np.float64))
        if a.ndim != 2:
            raise ValueError(f'dosages must be two dimensional (samples x variants), got shape {a.shape}')
        if not np.all(np.isfinite(a)):
            raise ValueError('dosages contain missing or non-finite values')
        if a.size and (a.min() < 0 or a.max() > 2):
            raise ValueError('dosages must lie in [0, 2]')
        return a

    @field_validator('positions', mode='before')
    def _positions_array(cls, v):
        return np.asarray(v, dtype=np.int64)

    @field_validator('chrom', mode='before')
    def _chrom_array(cls, v):
        return np.asarray([str(c) for c in v], dtype=object)

    @model_validator(mode='after')
    def _consistent(self) -> 'GenotypeMatrix':
        p = self.dosages.shape[1]
        if len(self.positions) != p or len(self.chrom) != p:
            raise ValueError(f'{p} variants but {len(self.positions)} positions and {len(self.chrom)} chromosome labels')
        if self.variant_ids is not None and len(self.variant_ids) != p:
            raise ValueError(f'{p} variants but {len(self.variant_ids)} variant ids')
        if self.sample_ids is not None:
            if len(self.sample_ids) != self.dosages.shape[0]:
                raise ValueError(f'{self.dosages.shape[0]} samples but {len(self.sample_ids)} sample ids')
            if len(set(self.sample_ids)) != len(self.sample_ids):
                raise ValueError('sample ids must be unique')

        same_chrom = self.chrom[1:] == self.chrom[:-1]
        if np.any(same_chrom & (np.diff(self.positions) <= 0)):
            bad = int(np.flatnonzero(same_chrom & (np.diff(self.positions) <= 0))[0]) + 1
            raise ValueError(f'positions not strictly increasing within chromosome {self.chrom[bad]} at variant {bad}')
        run_starts = np.append(0, np.flatnonzero(~same_chrom) + 1)
        labels = self.chrom[run_starts]
        if len(set(labels)) != len(labels):
            raise ValueError('variants of each chromosome must be contiguous')

        maf = minor_allele_frequency(self.dosages)
        if self.maf is None:
            self.maf = maf
        else:
            self.maf = np.asarray(self.maf, dtype=np.float64)
            if self.maf.shape != maf.shape or np.max(np.abs(self.maf - maf), initial=0.0) > MAF_TOLERANCE:
                raise ValueError('maf does not match the dosages')

        if self.variant_index is None:
            self.variant_index = np.arange(p, dtype=np.int64)
        else:
            self.variant_index = np.asarray(self.variant_index, dtype=np.int64)
        return self

    @property
    def n(self) -> int:
        return self.dosages.shape[0]

    @property
    def p(self) -> int:
        return self.dosages.shape[1]

    @property
    def mac(self) -> np.ndarray:
        """Minor allele count per variant"""
        alt = self.dosages.sum(axis=0)
        return np.minimum(alt, 2.0 * self.n - alt)

    def ids(self) -> List[str]:
        if self.variant_ids is not None:
            return list(self.variant_ids)
        return [f'{c}:{pos}' for c, pos in zip(self.chrom, self.positions)]

    def subset(self, columns: Sequence[int]) -> 'GenotypeMatrix':
        """Keep the given columns, in the given order, composing the variant index mapping"""
        columns = np.asarray(columns, dtype=np.int64)
        ids = None if self.variant_ids is None else [self.variant_ids[j] for j in columns]
        return GenotypeMatrix(dosages=self.dosages[:, columns], positions=self.positions[columns],
                              chrom=self.chrom[columns], variant_ids=ids, maf=self.maf[columns],
                              variant_index=self.variant_index[columns], sample_ids=self.sample_ids)

    def select_samples(self, rows: Sequence[int]) -> 'GenotypeMatrix':
        """Keep the given rows, in the given order; allele frequencies are recomputed"""
        rows = np.asarray(rows, dtype=np.int64)
        ids = None if self.sample_ids is None else [self.sample_ids[i] for i in rows]
        return GenotypeMatrix(dosages=self.dosages[rows], positions=self.positions, chrom=self.chrom,
                              variant_ids=self.variant_ids, variant_index=self.variant_index, sample_ids=ids)


class BandedMatrix(BaseModel):
    """
    Symmetric matrix with entries only within `bandwidth` of the diagonal.

    ``storage[j, d]`` holds entry (j, j + d) for d = 0..bandwidth; entries past the last row
    are zero. Entries outside the band are zero by contract.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    dim: int
    bandwidth: int
    storage: np.ndarray

    @model_validator(mode='after')
    def _shape(self) -> 'BandedMatrix':
        if self.bandwidth < 1:
            raise ValueError(f'bandwidth must be >= 1, got {self.bandwidth}')
        if self.storage.shape != (self.dim, self.bandwidth + 1):
            raise ValueError(f'band storage must have shape {(self.dim, self.bandwidth + 1)}, '
                             f'got {self.storage.shape}')
        return self

    @property
    def diagonal(self) -> np.ndarray:
        return self.storage[:, 0]

    def get(self, j: int, k: int) -> float:
        if j > k:
            j, k = k, j
        d = k - j
        if d > self.bandwidth:
            return 0.0
        return float(self.storage[j, d])

    def block(self, start: int, end: int) -> np.ndarray:
        """Dense symmetric block for indices start..end inclusive"""
        m = end - start + 1
        out = np.zeros((m, m))
        for d in range(min(self.bandwidth, m - 1) + 1):
            vals = self.storage[start:end + 1 - d, d]
            idx = np.arange(m - d)
            out[idx, idx + d] = vals
            out[idx + d, idx] = vals
        return out

    def to_dense(self) -> np.ndarray:
        return self.block(0, self.dim - 1)

    @classmethod
    def from_dense(cls, a: np.ndarray, bandwidth: int) -> 'BandedMatrix':
        a = np.asarray(a, dtype=np.float64)
        p = a.shape[0]
        storage = np.zeros((p, bandwidth + 1))
        for d in range(min(bandwidth, p - 1) + 1):
            storage[:p - d, d] = np.diagonal(a, offset=d)
        return cls(dim=p, bandwidth=bandwidth, storage=storage)


class ScoreSet(BaseModel):
    """
    Score vector, banded covariance and variant annotation for the retained variants.

    Attributes
    ----------
    u : ndarray, length p
    cov : BandedMatrix
    variant_index : ndarray of int
        Column of each retained variant in the originally loaded GenotypeMatrix
    chrom, positions, variant_ids : per-variant annotation
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    u: np.ndarray
    cov: BandedMatrix
    variant_index: np.ndarray
    chrom: np.ndarray
    positions: np.ndarray
    variant_ids: List[str]

    @model_validator(mode='after')
    def _valid_band(self) -> 'ScoreSet':
        p = len(self.u)
        if self.cov.dim != p or len(self.variant_index) != p or len(self.chrom) != p or len(self.positions) != p:
            raise ValueError('score set components disagree on the number of variants')
        diag = self.cov.diagonal
        if np.any(diag <= 0):
            raise ValueError('score covariance has non-positive diagonal entries; drop monomorphic variants first')
        for d in range(1, min(self.cov.bandwidth, p - 1) + 1):
            minor = diag[:p - d] * diag[d:] - self.cov.storage[:p - d, d] ** 2
            if np.any(minor < -MINOR_TOLERANCE):
                raise ValueError(f'score covariance violates Cauchy-Schwarz at lag {d}')
        return self

    @property
    def p(self) -> int:
        return len(self.u)

    @property
    def bandwidth(self) -> int:
        return self.cov.bandwidth


def _check_samples(geno: GenotypeMatrix, model: NullModel):
    if geno.n != model.n:
        raise DimensionMismatchError(f'genotypes have {geno.n} samples, null model has {model.n}')


def compute_scores(geno: GenotypeMatrix, model: NullModel) -> np.ndarray:
    """
    Marginal score statistics U_j = G_j^T (Y - eta_hat) / sqrt(n).

    Parameters
    ----------
    geno : GenotypeMatrix
    model : NullModel

    Returns
    -------
    ndarray, length p

    Examples
    --------
    For G_j = (0, 1, 1, 2) and residuals (1, -1, 1, -1), U_j = -2 / 2 = -1.
    """
    _check_samples(geno, model)
    return geno.dosages.T @ model.residuals / np.sqrt(model.n)


def whiten_genotypes(geno: GenotypeMatrix, model: NullModel) -> np.ndarray:
    """
    W = Lambda^{1/2} G_adj / sqrt(n), with G_adj the covariate-adjusted genotypes.

    W^T W equals G^T P G / n, so W carries everything both the covariance and the
    pseudo-score draws need.

    Returns
    -------
    ndarray, shape (n, p), column-contiguous
    """
    _check_samples(geno, model)
    adjusted = model.adjust(geno.dosages)
    return np.asfortranarray(np.sqrt(model.weights)[:, None] * adjusted / np.sqrt(model.n))


def _band_block(w: np.ndarray, start: int, block_size: int, bandwidth: int) -> Tuple[int, np.ndarray]:
    p = w.shape[1]
    stop = min(p, start + block_size)
    hi = min(p, stop + bandwidth)
    cross = w[:, start:stop].T @ w[:, start:hi]
    rows = np.arange(stop - start)[:, None]
    cols = rows + np.arange(bandwidth + 1)[None, :]
    inside = cols < (hi - start)
    block = np.where(inside, cross[rows, np.minimum(cols, hi - start - 1)], 0.0)
    return start, block


def band_from_whitened(w: np.ndarray, bandwidth: int, chrom: Sequence[str] | None = None,
                       n_jobs: int = 1) -> BandedMatrix:
    """
    Banded W^T W, computed blockwise over variants.

    Entries pairing variants on different chromosomes are set to zero.

    Parameters
    ----------
    w : ndarray, shape (n, p)
    bandwidth : int
    chrom : sequence of str, optional
    n_jobs : int, optional
        Threads for the variant blocks. Default is 1.

    Returns
    -------
    BandedMatrix
    """
    if bandwidth < 1:
        raise ValueError(f'bandwidth must be >= 1, got {bandwidth}')
    p = w.shape[1]
    starts = range(0, p, BAND_BLOCK_SIZE)
    blocks = Parallel(n_jobs=n_jobs, prefer='threads')(
        delayed(_band_block)(w, start, BAND_BLOCK_SIZE, bandwidth) for start in starts)

    storage = np.zeros((p, bandwidth + 1))
    for start, block in blocks:
        storage[start:start + block.shape[0]] = block

    if chrom is not None:
        last = segment_ends(chrom)
        offsets = np.arange(bandwidth + 1)[None, :]
        storage[np.arange(p)[:, None] + offsets > last[:, None]] = 0.0

    return BandedMatrix(dim=p, bandwidth=bandwidth, storage=storage)


def compute_banded_cov(geno: GenotypeMatrix, model: NullModel, bandwidth: int, n_jobs: int = 1) -> BandedMatrix:
    """
    Banded covariance estimate Sigma_jk = G_j^T P G_k / n for |j - k| <= bandwidth.

    The n x n projection is never formed: the adjusted genotypes are computed once and the
    band is accumulated blockwise. Cross-chromosome entries are zero.

    Parameters
    ----------
    geno : GenotypeMatrix
    model : NullModel
    bandwidth : int
        Must be at least L_max - 1 for the windows that will be scanned
    n_jobs : int, optional

    Returns
    -------
    BandedMatrix
        Monomorphic variants show up as zero diagonal entries; see `zero_variance`.
    """
    if bandwidth < 1:
        raise ValueError(f'bandwidth must be >= 1, got {bandwidth}')
    w = whiten_genotypes(geno, model)
    return band_from_whitened(w, bandwidth, chrom=geno.chrom, n_jobs=n_jobs)


def zero_variance(diagonal: np.ndarray) -> np.ndarray:
    """Mask of variants whose projected variance is numerically zero"""
    diagonal = np.asarray(diagonal, dtype=np.float64)
    scale = max(float(diagonal.max(initial=0.0)), np.finfo(float).tiny)
    return diagonal <= ZERO_VARIANCE_TOL * scale


def filter_variants(geno: GenotypeMatrix, maf_max: float, mac_min: int) -> GenotypeMatrix:
    """
    Keep variants with 0 < MAF <= maf_max and minor allele count >= mac_min, in order.

    Parameters
    ----------
    geno : GenotypeMatrix
    maf_max : float
        In (0, 0.5]
    mac_min : int
        At least 1

    Returns
    -------
    GenotypeMatrix with `variant_index` mapping back to the input columns

    Raises
    ------
    NoVariantsError if nothing passes
    """
    if not 0 < maf_max <= 0.5:
        raise ValueError(f'maf_max must be in (0, 0.5], got {maf_max}')
    if mac_min < 1:
        raise ValueError(f'mac_min must be >= 1, got {mac_min}')

    keep = (geno.maf > 0) & (geno.maf <= maf_max) & (geno.mac >= mac_min - 1e-9)
    if not np.any(keep):
        raise NoVariantsError(f'no variants with 0 < MAF <= {maf_max} and MAC >= {mac_min}')

    logger.info(f'{int(keep.sum())} of {geno.p} variants kept (maf_max={maf_max}, mac_min={mac_min})')
    return geno.subset(np.flatnonzero(keep))


def build_score_set(geno: GenotypeMatrix, model: NullModel, bandwidth: int, n_jobs: int = 1,
                    return_whitened: bool = False):
    """
    Scores and banded covariance for the variants with non-zero projected variance.

    Parameters
    ----------
    geno : GenotypeMatrix
    model : NullModel
    bandwidth : int
    n_jobs : int, optional
    return_whitened : bool, optional
        Also return the whitened adjusted genotypes of the retained variants (for Monte Carlo
        pseudo-scores). Default is False.

    Returns
    -------
    ScoreSet, or (ScoreSet, ndarray) when `return_whitened`
    """
    w = whiten_genotypes(geno, model)
    dropped = zero_variance(np.einsum('ij,ij->j', w, w))
    if np.all(dropped):
        raise NoVariantsError('every variant has zero variance after covariate adjustment')
    if np.any(dropped):
        logger.warning(f'{int(dropped.sum())} monomorphic or zero-variance variants dropped before scanning')
        kept = np.flatnonzero(~dropped)
        geno = geno.subset(kept)
        w = np.asfortranarray(w[:, kept])

    u = compute_scores(geno, model)
    cov = band_from_whitened(w, bandwidth, chrom=geno.chrom, n_jobs=n_jobs)
    scores = ScoreSet(u=u, cov=cov, variant_index=geno.variant_index, chrom=geno.chrom,
                      positions=geno.positions, variant_ids=geno.ids())
    if return_whitened:
        return scores, w
    return scores


def save_score_set(path: str | Path, scores: ScoreSet):
    """
    Write a ScoreSet to a little-endian binary cache.

    Layout: magic b'QSCN', uint32 version, int64 p, int64 bandwidth, float64[p] u,
    float64[p * (bandwidth + 1)] band rows, int64[p] variant_index, int64[p] positions,
    then uint64 byte length and UTF-8 newline-joined chromosome labels, likewise for variant ids.
    """
    p = scores.p
    b = scores.bandwidth
    with open(path, 'wb') as f:
        f.write(CACHE_MAGIC)
        f.write(struct.pack('<Iqq', CACHE_VERSION, p, b))
        f.write(np.ascontiguousarray(scores.u, dtype='<f8').tobytes())
        f.write(np.ascontiguousarray(scores.cov.storage, dtype='<f8').tobytes())
        f.write(np.ascontiguousarray(scores.variant_index, dtype='<i8').tobytes())
        f.write(np.ascontiguousarray(scores.positions, dtype='<i8').tobytes())
        for labels in (scores.chrom, scores.variant_ids):
            text = '\n'.join(str(x) for x in labels).encode('utf-8')
            f.write(struct.pack('<Q', len(text)))
            f.write(text)


def load_score_set(path: str | Path) -> ScoreSet:
    """Read a ScoreSet written by `save_score_set`"""
    data = Path(path).read_bytes()
    if data[:4] != CACHE_MAGIC:
        raise FormatError('not a qscan score cache', path=str(path))
    version, p, b = struct.unpack_from('<Iqq', data, 4)
    if version != CACHE_VERSION:
        raise FormatError(f'unsupported score cache version {version}', path=str(path))
    offset = 4 + struct.calcsize('<Iqq')

    def take(dtype, count):
        nonlocal offset
        arr = np.frombuffer(data, dtype=dtype, count=count, offset=offset)
        offset += arr.nbytes
        return arr.astype(dtype[1:] if dtype.startswith('<') else dtype)

    try:
        u = take('<f8', p)
        storage = take('<f8', p * (b + 1)).reshape(p, b + 1)
        variant_index = take('<i8', p)
        positions = take('<i8', p)
        texts = []
        for _ in range(2):
            (length,) = struct.unpack_from('<Q', data, offset)
            offset += 8
            texts.append(data[offset:offset + length].decode('utf-8'))
            offset += length
    except (ValueError, struct.error) as error:
        raise FormatError(f'truncated score cache: {error}', path=str(path))

    chrom = texts[0].split('\n') if p else []
    variant_ids = texts[1].split('\n') if p else []
    return ScoreSet(u=u, cov=BandedMatrix(dim=p, bandwidth=b, storage=storage), variant_index=variant_index,
                    chrom=np.asarray(chrom, dtype=object), positions=positions, variant_ids=variant_ids)
