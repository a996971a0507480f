"""
The :mod:`qscan.null_model` module fits the covariate-only generalized linear model under the
global null and exposes the projection quantities needed for score statistics.
"""

# Copyright 2024 qscan developers

import logging
from enum import Enum
from typing import List

import numpy as np
import scipy.linalg
from scipy.special import expit, logit
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from qscan.errors import (SingularDesignError, ConvergenceError, SeparationError,
                          DegenerateVarianceError, DimensionMismatchError)

IRLS_TOL = 1e-8
IRLS_MAX_ITER = 25
SEPARATION_EPS = 1e-10
INTERCEPT_NAME = 'intercept'

# This should inherit level from root logger
logger = logging.getLogger(__name__)


class Family(str, Enum):
    GAUSSIAN = 'gaussian'
    BINOMIAL = 'binomial'


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


class PhenotypeVector(BaseModel):
    """
    Outcome for n samples.

    Parameters
    ----------
    values : array-like of float, length n
        Continuous trait or 0/1 labels
    family : Family
        'gaussian' or 'binomial'
    """
    model_config = ConfigDict(arbitrary_types_allowed=True)

    values: np.ndarray
    family: Family = Family.GAUSSIAN

    @field_validator('values', mode='before')
    def _as_array(cls, v):
        a = np.asarray(v, dtype=np.float64)
        if a.ndim != 1:
            raise ValueError(f'phenotype must be one dimensional, got shape {a.shape}')
        if len(a) < 2:
            raise ValueError(f'phenotype needs at least 2 samples, got {len(a)}')
        if not np.all(np.isfinite(a)):
            raise ValueError('phenotype contains missing or non-finite values')
        return a

    @model_validator(mode='after')
    def _binary_labels(self) -> 'PhenotypeVector':
        if self.family == Family.BINOMIAL:
            if not np.all((self.values == 0) | (self.values == 1)):
                raise ValueError('binomial phenotype values must be 0 or 1')
            if self.values.min() == self.values.max():
                raise ValueError('binomial phenotype needs both cases and controls')
        return self

    @property
    def n(self) -> int:
        return len(self.values)


class CovariateMatrix(BaseModel):
    """
    n x q covariate matrix whose first column is the all-ones intercept.

    An intercept is prepended when no all-ones column is present; an all-ones column
    elsewhere is moved to the front.

    Parameters
    ----------
    values : array-like, shape (n, q) or (n,)
    column_names : list of str, optional
        Defaults to x1, x2, ...
    """
    model_config = ConfigDict(arbitrary_types_allowed=True)

    values: np.ndarray
    column_names: List[str] | None = None

    @model_validator(mode='before')
    @classmethod
    def _with_intercept(cls, data):
        if not isinstance(data, dict):
            return data
        x = np.asarray(data.get('values'), dtype=np.float64)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        if x.ndim != 2:
            raise ValueError(f'covariates must be two dimensional, got shape {x.shape}')
        names = data.get('column_names')
        if names is None:
            names = [f'x{j + 1}' for j in range(x.shape[1])]
        names = list(names)
        if len(names) != x.shape[1]:
            raise ValueError(f'{len(names)} column names for {x.shape[1]} covariate columns')

        ones = [j for j in range(x.shape[1]) if np.all(x[:, j] == 1.0)]
        if len(ones) == 0:
            x = np.column_stack([np.ones(x.shape[0]), x])
            names = [INTERCEPT_NAME] + names
        elif ones[0] != 0:
            order = [ones[0]] + [j for j in range(x.shape[1]) if j != ones[0]]
            x = x[:, order]
            names = [names[j] for j in order]

        return {**data, 'values': x, 'column_names': names}

    @field_validator('values')
    def _finite(cls, v: np.ndarray):
        if not np.all(np.isfinite(v)):
            raise ValueError('covariates contain missing or non-finite values')
        return v

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def q(self) -> int:
        return self.values.shape[1]

    @classmethod
    def intercept_only(cls, n: int) -> 'CovariateMatrix':
        return cls(values=np.ones((n, 1)), column_names=[INTERCEPT_NAME])


class NullModel(BaseModel):
    """
    Fitted covariate-only GLM.

    Attributes
    ----------
    family : Family
    alpha_hat : ndarray, length q
        Coefficient estimates
    eta_hat : ndarray, length n
        Fitted means on the response scale
    weights : ndarray, length n
        Diagonal of Lambda, a_i(phi) v(eta_i): phi for gaussian, eta(1 - eta) for binomial
    dispersion : float
        Maximum likelihood dispersion (RSS/n) for gaussian, 1 for binomial
    residuals : ndarray, length n
        Y - eta_hat
    xtwx_inv : ndarray, q x q
        (X^T Lambda X)^{-1}
    covariates : ndarray, n x q
    covariate_names : list of str
    n_iter : int
        IRLS iterations (0 for gaussian)

    Notes
    -----
    The projection P = Lambda - Lambda X (X^T Lambda X)^{-1} X^T Lambda satisfies PX = 0 and
    G^T P G / n is the covariance of the scores G^T (Y - eta_hat) / sqrt(n). P is never
    materialized; see `adjust`.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    family: Family
    alpha_hat: np.ndarray
    eta_hat: np.ndarray
    weights: np.ndarray
    dispersion: float
    residuals: np.ndarray
    xtwx_inv: np.ndarray
    covariates: np.ndarray
    covariate_names: List[str]
    n_iter: int = 0

    @model_validator(mode='after')
    def _weight_invariants(self) -> 'NullModel':
        if self.family == Family.GAUSSIAN:
            if not self.dispersion > 0:
                raise ValueError(f'dispersion must be > 0, got {self.dispersion}')
            if not np.all(self.weights == self.dispersion):
                raise ValueError('gaussian weights must all equal the dispersion')
        else:
            if self.dispersion != 1.0:
                raise ValueError('binomial dispersion must be 1')
            if np.any(self.weights <= 0) or np.any(self.weights > 0.25):
                raise ValueError('binomial weights must lie in (0, 0.25]')
        return self

    @property
    def n(self) -> int:
        return len(self.eta_hat)

    @property
    def q(self) -> int:
        return len(self.alpha_hat)

    def adjust(self, g: np.ndarray) -> np.ndarray:
        """
        Covariate-adjusted genotypes G - X (X^T Lambda X)^{-1} X^T Lambda G.

        Parameters
        ----------
        g : ndarray, shape (n, k)

        Returns
        -------
        ndarray, shape (n, k)
        """
        g = np.asarray(g, dtype=np.float64)
        if g.shape[0] != self.n:
            raise DimensionMismatchError(f'genotypes have {g.shape[0]} samples, null model has {self.n}')
        xtwg = self.covariates.T @ (self.weights[:, None] * g)
        return g - self.covariates @ (self.xtwx_inv @ xtwg)


def _check_rank(x: np.ndarray, names: List[str]):
    q = x.shape[1]
    if np.linalg.matrix_rank(x) == q:
        return
    # Name the first column that adds nothing to the ones before it
    for j in range(1, q + 1):
        if np.linalg.matrix_rank(x[:, :j]) < j:
            raise SingularDesignError(f"covariate matrix is rank deficient at column '{names[j - 1]}'")
    raise SingularDesignError('covariate matrix is rank deficient')


def _fit_gaussian(y: np.ndarray, x: np.ndarray):
    alpha_hat, *_ = scipy.linalg.lstsq(x, y)
    eta_hat = x @ alpha_hat
    residuals = y - eta_hat
    dispersion = float(residuals @ residuals) / len(y)
    scale = max(1.0, float(np.mean(y ** 2)))
    if dispersion <= 1e-14 * scale:
        raise DegenerateVarianceError('phenotype has zero residual variance after covariate adjustment')
    return alpha_hat, eta_hat, dispersion, 0


def _fit_binomial(y: np.ndarray, x: np.ndarray):
    alpha_hat = np.zeros(x.shape[1])
    alpha_hat[0] = logit(np.mean(y))
    trace = []
    for iteration in range(1, IRLS_MAX_ITER + 1):
        lin = x @ alpha_hat
        mu = expit(lin)
        if np.any(mu < SEPARATION_EPS) or np.any(mu > 1 - SEPARATION_EPS):
            raise SeparationError(f'fitted means reached the boundary at IRLS iteration {iteration}; '
                                  f'covariates separate cases from controls')
        w = mu * (1.0 - mu)
        z = lin + (y - mu) / w
        xtw = x.T * w
        alpha_new = scipy.linalg.solve(xtw @ x, xtw @ z, assume_a='pos')
        delta = float(np.max(np.abs(alpha_new - alpha_hat)))
        trace.append(delta)
        alpha_hat = alpha_new
        logger.debug(f'IRLS iteration {iteration}: max |delta alpha| = {delta:.3e}')
        if delta <= IRLS_TOL:
            break
    else:
        raise ConvergenceError(f'IRLS did not converge in {IRLS_MAX_ITER} iterations', trace=trace)

    eta_hat = expit(x @ alpha_hat)
    if np.any(eta_hat < SEPARATION_EPS) or np.any(eta_hat > 1 - SEPARATION_EPS):
        raise SeparationError('fitted means outside [1e-10, 1 - 1e-10]; covariates separate cases from controls')
    return alpha_hat, eta_hat, 1.0, len(trace)


def fit_null(pheno: PhenotypeVector, covar: CovariateMatrix) -> NullModel:
    """
    Fit the covariate-only GLM under the global null.

    Gaussian uses least squares with the maximum likelihood dispersion RSS/n. Binomial uses
    IRLS with the logit link, converged when max |delta alpha| <= 1e-8 within 25 iterations.

    Parameters
    ----------
    pheno : PhenotypeVector
    covar : CovariateMatrix

    Returns
    -------
    NullModel

    Raises
    ------
    DimensionMismatchError, SingularDesignError, DegenerateVarianceError, ConvergenceError, SeparationError

    Examples
    --------
    pheno = PhenotypeVector(values=[1, -1, 1, -1])
    model = fit_null(pheno, CovariateMatrix.intercept_only(4))
    # model.alpha_hat == [0.], model.dispersion == 1.0
    """
    y = pheno.values
    x = covar.values
    if x.shape[0] != len(y):
        raise DimensionMismatchError(f'phenotype has {len(y)} samples, covariates have {x.shape[0]}')
    _check_rank(x, covar.column_names)

    if pheno.family == Family.GAUSSIAN:
        alpha_hat, eta_hat, dispersion, n_iter = _fit_gaussian(y, x)
        weights = np.full(len(y), dispersion)
    else:
        alpha_hat, eta_hat, dispersion, n_iter = _fit_binomial(y, x)
        weights = eta_hat * (1.0 - eta_hat)

    xtwx = (x.T * weights) @ x
    xtwx_inv = scipy.linalg.cho_solve(scipy.linalg.cho_factor(xtwx), np.eye(x.shape[1]))

    logger.info(f'Null model ({pheno.family.value}) fitted: n={len(y)}, q={x.shape[1]}, '
                f'dispersion={dispersion:.4g}, iterations={n_iter}')

    return NullModel(family=pheno.family,
                     alpha_hat=_readonly(alpha_hat),
                     eta_hat=_readonly(eta_hat),
                     weights=_readonly(weights),
                     dispersion=float(dispersion),
                     residuals=_readonly(y - eta_hat),
                     xtwx_inv=_readonly(xtwx_inv),
                     covariates=_readonly(x),
                     covariate_names=list(covar.column_names),
                     n_iter=n_iter)
