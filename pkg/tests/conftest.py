from pathlib import Path

import numpy as np
import pytest

from qscan.null_model import CovariateMatrix, PhenotypeVector, fit_null
from qscan.scores import BandedMatrix, GenotypeMatrix, ScoreSet, build_score_set

FIXTURES = Path(__file__).parent / 'fixtures'


def pytest_configure(config):
    config.addinivalue_line('markers', 'slow: calibration runs with hundreds of replicates (deselect with -m "not slow")')


def banded_psd(p: int, bandwidth: int, rng: np.random.Generator) -> np.ndarray:
    """Dense positive definite matrix with zeros beyond `bandwidth` (B B^T with B lower banded)"""
    b = np.zeros((p, p))
    for d in range(bandwidth + 1):
        idx = np.arange(d, p)
        b[idx, idx - d] = rng.standard_normal(p - d) * (0.5 if d else 1.0)
    b[np.arange(p), np.arange(p)] = np.abs(b[np.arange(p), np.arange(p)]) + 0.5
    return b @ b.T


def make_score_set(u: np.ndarray, cov: np.ndarray, bandwidth: int, chrom=None) -> ScoreSet:
    p = len(u)
    if chrom is None:
        chrom = ['1'] * p
    return ScoreSet(u=np.asarray(u, dtype=np.float64), cov=BandedMatrix.from_dense(cov, bandwidth),
                    variant_index=np.arange(p), chrom=np.asarray(chrom, dtype=object),
                    positions=np.arange(1, p + 1) * 100, variant_ids=[f'v{j}' for j in range(p)])


def random_genotypes(n: int, p: int, seed: int, maf_range=(0.05, 0.3), chrom=None) -> GenotypeMatrix:
    rng = np.random.default_rng(seed)
    freqs = rng.uniform(*maf_range, size=p)
    dosages = rng.binomial(2, freqs, size=(n, p)).astype(np.float64)
    # No monomorphic columns
    dosages[0, dosages.sum(axis=0) == 0] = 1.0
    if chrom is None:
        chrom = ['1'] * p
    return GenotypeMatrix(dosages=dosages, positions=np.arange(1, p + 1) * 100, chrom=chrom,
                          sample_ids=[f's{i}' for i in range(n)])


@pytest.fixture
def small_data():
    """200 samples, 120 common-ish variants, gaussian phenotype with two covariates"""
    geno = random_genotypes(200, 120, seed=11)
    rng = np.random.default_rng(12)
    x = np.column_stack([rng.standard_normal(200), rng.binomial(1, 0.5, size=200)])
    pheno = PhenotypeVector(values=0.5 * x[:, 0] + 0.5 * x[:, 1] + rng.standard_normal(200))
    covar = CovariateMatrix(values=x, column_names=['x1', 'x2'])
    return geno, pheno, covar


@pytest.fixture
def small_scores(small_data):
    """ScoreSet with bandwidth 19, its null model and whitened genotypes"""
    geno, pheno, covar = small_data
    model = fit_null(pheno, covar)
    scores, w = build_score_set(geno, model, 19, return_whitened=True)
    return scores, model, w
