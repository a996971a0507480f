import math

import numpy as np
import pytest
from pydantic import ValidationError

from qscan.errors import (ConvergenceError, DegenerateVarianceError, DimensionMismatchError, SeparationError,
                          SingularDesignError)
from qscan.null_model import CovariateMatrix, Family, PhenotypeVector, fit_null


def test_intercept_only_gaussian():
    pheno = PhenotypeVector(values=[1, -1, 1, -1])
    model = fit_null(pheno, CovariateMatrix.intercept_only(4))

    assert model.alpha_hat.shape == (1,)
    assert math.isclose(model.alpha_hat[0], 0.0, abs_tol=1e-12)
    assert math.isclose(model.dispersion, 1.0)
    np.testing.assert_allclose(model.weights, np.ones(4))
    np.testing.assert_allclose(model.residuals, [1, -1, 1, -1])
    assert model.n_iter == 0


def test_intercept_prepended():
    covar = CovariateMatrix(values=[[0.5], [1.5], [2.0]], column_names=['age'])
    assert covar.column_names == ['intercept', 'age']
    np.testing.assert_array_equal(covar.values[:, 0], np.ones(3))

    moved = CovariateMatrix(values=[[0.5, 1.0], [1.5, 1.0], [2.0, 1.0]], column_names=['age', 'const'])
    assert moved.column_names == ['const', 'age']
    assert moved.q == 2


def test_gaussian_residuals_orthogonal_to_covariates():
    rng = np.random.default_rng(1)
    n = 500
    x = np.column_stack([rng.standard_normal(n), rng.binomial(1, 0.5, n)])
    y = 0.5 * x[:, 0] + 0.5 * x[:, 1] + rng.standard_normal(n)
    model = fit_null(PhenotypeVector(values=y), CovariateMatrix(values=x))

    assert np.max(np.abs(model.covariates.T @ model.residuals)) <= 1e-8 * n
    assert math.isclose(model.dispersion, float(model.residuals @ model.residuals) / n)
    assert model.q == 3


def test_binomial_irls():
    rng = np.random.default_rng(2)
    n = 800
    x = rng.standard_normal(n)
    prob = 1.0 / (1.0 + np.exp(-(-0.5 + 0.8 * x)))
    y = (rng.random(n) < prob).astype(float)
    model = fit_null(PhenotypeVector(values=y, family=Family.BINOMIAL), CovariateMatrix(values=x))

    assert model.family == Family.BINOMIAL
    assert 0 < model.n_iter <= 25
    assert model.dispersion == 1.0
    np.testing.assert_allclose(model.weights, model.eta_hat * (1 - model.eta_hat))
    assert np.max(np.abs(model.covariates.T @ model.residuals)) <= 1e-8 * n
    # Coefficients close to the generating values
    assert abs(model.alpha_hat[1] - 0.8) < 0.3


def test_adjusted_genotypes_annihilated():
    rng = np.random.default_rng(3)
    n = 300
    x = rng.standard_normal((n, 2))
    y = (rng.random(n) < 0.3).astype(float)
    model = fit_null(PhenotypeVector(values=y, family='binomial'), CovariateMatrix(values=x))
    g = rng.binomial(2, 0.2, size=(n, 5)).astype(float)

    adjusted = model.adjust(g)
    np.testing.assert_allclose(model.covariates.T @ (model.weights[:, None] * adjusted), 0.0, atol=1e-9)


def test_rank_deficient_names_column():
    rng = np.random.default_rng(4)
    x1 = rng.standard_normal(20)
    covar = CovariateMatrix(values=np.column_stack([x1, 2.0 * x1]), column_names=['x1', 'x2'])
    with pytest.raises(SingularDesignError, match='x2'):
        fit_null(PhenotypeVector(values=rng.standard_normal(20)), covar)


def test_constant_covariate_is_rank_error():
    rng = np.random.default_rng(5)
    covar = CovariateMatrix(values=np.column_stack([rng.standard_normal(20), np.full(20, 3.0)]),
                            column_names=['age', 'site'])
    with pytest.raises(SingularDesignError, match='site'):
        fit_null(PhenotypeVector(values=rng.standard_normal(20)), covar)


def test_constant_phenotype():
    with pytest.raises(DegenerateVarianceError):
        fit_null(PhenotypeVector(values=np.full(10, 2.5)), CovariateMatrix.intercept_only(10))


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatchError):
        fit_null(PhenotypeVector(values=np.arange(10.0)), CovariateMatrix.intercept_only(9))


def test_separation():
    x = np.linspace(-1, 1, 40)
    y = (x > 0).astype(float)
    with pytest.raises((SeparationError, ConvergenceError)):
        fit_null(PhenotypeVector(values=y, family=Family.BINOMIAL), CovariateMatrix(values=x))


def test_invalid_phenotypes():
    with pytest.raises(ValidationError):
        PhenotypeVector(values=[0, 1, 2], family=Family.BINOMIAL)
    with pytest.raises(ValidationError):
        PhenotypeVector(values=[1, 1, 1], family=Family.BINOMIAL)
    with pytest.raises(ValidationError):
        PhenotypeVector(values=[1.0, np.nan, 2.0])
    with pytest.raises(ValidationError):
        PhenotypeVector(values=[1.0])


def test_model_is_immutable():
    model = fit_null(PhenotypeVector(values=[1.0, 2.0, 4.0]), CovariateMatrix.intercept_only(3))
    with pytest.raises(ValueError):
        model.eta_hat[0] = 5.0
    with pytest.raises(ValidationError):
        model.dispersion = 2.0


@pytest.mark.parametrize('family', [Family.GAUSSIAN, Family.BINOMIAL])
def test_fit_invariant_to_sample_order(family):
    rng = np.random.default_rng(9)
    n = 400
    x = np.column_stack([rng.standard_normal(n), rng.binomial(1, 0.4, n)])
    if family == Family.GAUSSIAN:
        y = 0.3 * x[:, 0] - 0.2 * x[:, 1] + rng.standard_normal(n)
    else:
        y = (rng.random(n) < 1.0 / (1.0 + np.exp(-(0.2 + 0.5 * x[:, 0])))).astype(float)
    order = rng.permutation(n)

    model = fit_null(PhenotypeVector(values=y, family=family), CovariateMatrix(values=x))
    shuffled = fit_null(PhenotypeVector(values=y[order], family=family), CovariateMatrix(values=x[order]))

    np.testing.assert_allclose(shuffled.alpha_hat, model.alpha_hat, rtol=1e-6, atol=1e-8)
    assert math.isclose(shuffled.dispersion, model.dispersion, rel_tol=1e-8)
    np.testing.assert_allclose(shuffled.residuals, model.residuals[order], rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(shuffled.weights, model.weights[order], rtol=1e-6, atol=1e-8)
